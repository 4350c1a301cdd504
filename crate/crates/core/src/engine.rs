//! The iterative shell update loop and training-pair generation.
//!
//! Each pivot's shell starts as a small sphere and is pushed outward or
//! pulled inward by the predicted boundary distance along every grid
//! direction, for a bounded number of rounds or until the mean predicted
//! correction falls under a threshold. Pivots are independent, so runs
//! parallelize across them; every shell derives its randomness from the
//! policy seed plus its own pivot index, which keeps results identical
//! for any worker count.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance_field::DistanceField;
use crate::error::{Error, Result};
use crate::predictor::Predictor;
use crate::rng::standard_normal;
use crate::shell::{ground_truth_response, project, ChannelSpec, ProjectionPair, Shell};
use crate::sphere_grid::DirectionGrid;
use crate::tensor::Image;
use crate::volume::Volume;

/// Knobs of the per-shell iteration.
///
/// `consistency_samples` counts predictor evaluations per round: the
/// first always sees the unperturbed shell, further ones see radii
/// jittered by `consistency_sigma`, and the refined response is the
/// per-direction regression intercept at zero jitter. One sample is
/// therefore exactly the raw prediction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct IterationPolicy {
    pub max_rounds: usize,
    pub convergence_threshold: f64,
    pub consistency_samples: usize,
    pub consistency_sigma: f64,
    pub rng_seed: u64,
}

impl Default for IterationPolicy {
    fn default() -> IterationPolicy {
        IterationPolicy {
            max_rounds: 10,
            convergence_threshold: 0.5,
            consistency_samples: 3,
            consistency_sigma: 0.5,
            rng_seed: 0,
        }
    }
}

impl IterationPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 {
            return Err(Error::invalid("iteration needs at least one round"));
        }
        if !(self.convergence_threshold >= 0.0) || !self.convergence_threshold.is_finite() {
            return Err(Error::invalid(format!(
                "convergence threshold {} must be finite and non-negative",
                self.convergence_threshold
            )));
        }
        if !(self.consistency_sigma >= 0.0) || !self.consistency_sigma.is_finite() {
            return Err(Error::invalid(format!(
                "consistency sigma {} must be finite and non-negative",
                self.consistency_sigma
            )));
        }
        Ok(())
    }
}

/// A finished shell run: the converged (or exhausted) shell plus the mean
/// absolute response of every executed round.
#[derive(Debug, Clone)]
pub struct ShellRun {
    pub shell: Shell,
    pub trace: Vec<f64>,
}

fn projection_for(
    predictor: &dyn Predictor,
    volume: &Volume,
    shell: &Shell,
    grid: &DirectionGrid,
    spec: &ChannelSpec,
) -> Result<Option<Image<f32>>> {
    if predictor.requires_input() {
        Ok(Some(project(volume, shell, grid, spec)?))
    } else {
        Ok(None)
    }
}

/// Average the predictor over jittered copies of the shell and regress
/// each direction's response back to zero jitter.
///
/// Per direction the samples form points (epsilon, response), where
/// epsilon is the radius perturbation that actually took effect after
/// clamping at zero. The refined response is the ordinary least squares
/// intercept; degenerate spreads fall back to the sample mean. With
/// `samples == 1` this returns the raw prediction and draws nothing.
pub fn refine_with_consistency(
    predictor: &dyn Predictor,
    volume: &Volume,
    shell: &Shell,
    grid: &DirectionGrid,
    spec: &ChannelSpec,
    samples: usize,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if samples == 0 {
        return Err(Error::invalid("consistency refinement needs at least one sample"));
    }
    let input = projection_for(predictor, volume, shell, grid, spec)?;
    let base = predictor.predict(input.as_ref(), shell, grid)?;
    if samples == 1 {
        return Ok(base);
    }
    let m = grid.len();
    let mut eps: Vec<Vec<f64>> = Vec::with_capacity(samples - 1);
    let mut responses: Vec<Vec<f64>> = Vec::with_capacity(samples - 1);
    for _ in 1..samples {
        let mut radii = shell.radii().to_vec();
        let mut e = vec![0.0; m];
        for (r, ev) in radii.iter_mut().zip(&mut e) {
            let jittered = (*r + standard_normal(rng) * sigma).max(0.0);
            *ev = jittered - *r;
            *r = jittered;
        }
        let probe = Shell::from_radii(shell.pivot(), radii, grid)?;
        let probe_input = projection_for(predictor, volume, &probe, grid, spec)?;
        responses.push(predictor.predict(probe_input.as_ref(), &probe, grid)?);
        eps.push(e);
    }
    let mut refined = vec![0.0; m];
    let n = samples as f64;
    for d in 0..m {
        let mut mean_x = 0.0;
        let mut mean_y = base[d];
        for s in 0..samples - 1 {
            mean_x += eps[s][d];
            mean_y += responses[s][d];
        }
        mean_x /= n;
        mean_y /= n;
        // The unperturbed sample sits at epsilon zero.
        let mut sxx = mean_x * mean_x;
        let mut sxy = -mean_x * (base[d] - mean_y);
        for s in 0..samples - 1 {
            let dx = eps[s][d] - mean_x;
            sxx += dx * dx;
            sxy += dx * (responses[s][d] - mean_y);
        }
        refined[d] = if sxx < 1e-18 { mean_y } else { mean_y - (sxy / sxx) * mean_x };
    }
    Ok(refined)
}

/// Iterate one shell to convergence or round exhaustion.
///
/// `stream` separates the randomness of concurrent shells; callers pass
/// the pivot index.
pub fn run_shell(
    predictor: &dyn Predictor,
    volume: &Volume,
    shell: Shell,
    grid: &DirectionGrid,
    spec: &ChannelSpec,
    policy: &IterationPolicy,
    stream: u64,
) -> Result<ShellRun> {
    policy.validate()?;
    let mut shell = shell;
    let mut trace = Vec::with_capacity(policy.max_rounds);
    let mut rng = ChaCha8Rng::seed_from_u64(policy.rng_seed);
    rng.set_stream(stream);
    for _ in 0..policy.max_rounds {
        let response = if policy.consistency_samples >= 1 {
            refine_with_consistency(
                predictor,
                volume,
                &shell,
                grid,
                spec,
                policy.consistency_samples,
                policy.consistency_sigma,
                &mut rng,
            )?
        } else {
            let input = projection_for(predictor, volume, &shell, grid, spec)?;
            predictor.predict(input.as_ref(), &shell, grid)?
        };
        let mean_abs = response.iter().map(|o| o.abs()).sum::<f64>() / response.len() as f64;
        trace.push(mean_abs);
        shell.apply_response(&response)?;
        if mean_abs < policy.convergence_threshold {
            break;
        }
    }
    Ok(ShellRun { shell, trace })
}

/// Run every pivot's shell in parallel. Results come back in pivot order.
pub fn run_shells(
    predictor: &dyn Predictor,
    volume: &Volume,
    pivots: &[[f64; 3]],
    r0: f64,
    grid: &DirectionGrid,
    spec: &ChannelSpec,
    policy: &IterationPolicy,
) -> Result<Vec<ShellRun>> {
    policy.validate()?;
    spec.validate()?;
    pivots
        .par_iter()
        .enumerate()
        .map(|(i, &pivot)| {
            let shell = Shell::uniform(pivot, r0, grid)?;
            run_shell(predictor, volume, shell, grid, spec, policy, i as u64)
        })
        .collect()
}

/// Fraction of rollout steps driven by the model instead of the ground
/// truth, ramping linearly from zero in the first epoch to one in the
/// last. A single-epoch schedule stays fully ground-truth driven.
pub fn replacement_probability(epoch: usize, total_epochs: usize) -> f64 {
    if total_epochs <= 1 {
        0.0
    } else {
        (epoch.min(total_epochs - 1)) as f64 / (total_epochs - 1) as f64
    }
}

/// Roll every pivot's shell forward for the full round budget and record
/// one training pair per round: the projected input and the true
/// response under the current radii.
///
/// Each step advances with the ground-truth response, or with the model's
/// raw prediction with probability `replacement_probability`. The
/// Bernoulli draw happens every step regardless of outcome, so rollouts
/// with probability one and a ground-truth-equivalent model match pure
/// ground-truth rollouts exactly. There is no early stop: every pivot
/// contributes exactly `policy.max_rounds` pairs.
pub fn generate_training_pairs(
    field: &DistanceField,
    volume: &Volume,
    pivots: &[[f64; 3]],
    r0: f64,
    grid: &DirectionGrid,
    spec: &ChannelSpec,
    policy: &IterationPolicy,
    replacement_probability: f64,
    model: Option<&dyn Predictor>,
) -> Result<Vec<ProjectionPair>> {
    policy.validate()?;
    spec.validate()?;
    if !(0.0..=1.0).contains(&replacement_probability) {
        return Err(Error::invalid(format!(
            "replacement probability {replacement_probability} must lie in [0, 1]"
        )));
    }
    if replacement_probability > 0.0 && model.is_none() {
        return Err(Error::invalid(
            "replacement probability above zero needs a model to roll out with",
        ));
    }
    let per_pivot: Result<Vec<Vec<ProjectionPair>>> = pivots
        .par_iter()
        .enumerate()
        .map(|(pi, &pivot)| {
            let mut rng = ChaCha8Rng::seed_from_u64(policy.rng_seed);
            rng.set_stream(pi as u64);
            let mut shell = Shell::uniform(pivot, r0, grid)?;
            let mut pairs = Vec::with_capacity(policy.max_rounds);
            for step in 0..policy.max_rounds {
                let input = project(volume, &shell, grid, spec)?;
                let truth = ground_truth_response(field, &shell, grid)?;
                pairs.push(ProjectionPair {
                    pivot_index: pi,
                    step: step as u32,
                    input: input.clone(),
                    response: truth.iter().map(|&v| v as f32).collect(),
                });
                let use_model = rng.gen::<f64>() < replacement_probability;
                let update = if use_model {
                    let model = model.expect("validated above");
                    let model_input = if model.requires_input() { Some(&input) } else { None };
                    model.predict(model_input, &shell, grid)?
                } else {
                    truth
                };
                shell.apply_response(&update)?;
            }
            Ok(pairs)
        })
        .collect();
    Ok(per_pivot?.into_iter().flatten().collect())
}

const SPOOL_MAGIC: &[u8; 4] = b"SHSP";
const SPOOL_VERSION: u32 = 1;

/// Write training pairs as a flat binary spool: a header with the record
/// count, then per record the pivot index, step, image dims, input values
/// and response values, all little-endian.
pub fn write_pair_spool(path: &Path, pairs: &[ProjectionPair]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(SPOOL_MAGIC)?;
    w.write_all(&SPOOL_VERSION.to_le_bytes())?;
    w.write_all(&(pairs.len() as u64).to_le_bytes())?;
    for pair in pairs {
        w.write_all(&(pair.pivot_index as u64).to_le_bytes())?;
        w.write_all(&pair.step.to_le_bytes())?;
        w.write_all(&(pair.input.channels() as u32).to_le_bytes())?;
        w.write_all(&(pair.input.height() as u32).to_le_bytes())?;
        w.write_all(&(pair.input.width() as u32).to_le_bytes())?;
        for v in pair.input.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        if pair.response.len() != pair.input.height() * pair.input.width() {
            return Err(Error::invalid(format!(
                "pair response has {} values for a {}x{} grid",
                pair.response.len(),
                pair.input.height(),
                pair.input.width()
            )));
        }
        for v in &pair.response {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_pair_spool(path: &Path) -> Result<Vec<ProjectionPair>> {
    let mut file = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let mut off = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if off + n > bytes.len() {
            return Err(Error::format(format!(
                "spool {} truncated at byte {off}",
                path.display()
            )));
        }
        let s = &bytes[off..off + n];
        off += n;
        Ok(s)
    };
    let u32_at = |s: &[u8]| u32::from_le_bytes([s[0], s[1], s[2], s[3]]);
    let u64_at = |s: &[u8]| u64::from_le_bytes([s[0], s[1], s[2], s[3], s[4], s[5], s[6], s[7]]);
    if take(4)? != SPOOL_MAGIC {
        return Err(Error::format(format!("{} is not a pair spool", path.display())));
    }
    let version = u32_at(take(4)?);
    if version != SPOOL_VERSION {
        return Err(Error::format(format!("unsupported spool version {version}")));
    }
    let count = u64_at(take(8)?) as usize;
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let pivot_index = u64_at(take(8)?) as usize;
        let step = u32_at(take(4)?);
        let c = u32_at(take(4)?) as usize;
        let h = u32_at(take(4)?) as usize;
        let w = u32_at(take(4)?) as usize;
        let input_vals: Vec<f32> = take(c * h * w * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let response: Vec<f32> = take(h * w * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        pairs.push(ProjectionPair {
            pivot_index,
            step,
            input: Image::from_vec(c, h, w, input_vals)?,
            response,
        });
    }
    if off != bytes.len() {
        return Err(Error::format(format!(
            "spool {} has {} trailing bytes",
            path.display(),
            bytes.len() - off
        )));
    }
    Ok(pairs)
}
