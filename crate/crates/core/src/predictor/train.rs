//! Supervised training for the radius-correction network.
//!
//! The loop is plain SGD with momentum on a mean-absolute-error loss. The
//! caller supplies a data source that is re-queried every epoch with the
//! current network, because later epochs roll shells forward under the
//! model being trained and therefore see a shifting input distribution.
//! Batch members are evaluated in parallel but reduced in index order, so
//! results do not depend on the worker count.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::model::{ConvRegressor, Gradients, ModelConfig};
use crate::shell::ProjectionPair;
use crate::tensor::{Image, Scalar};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig { epochs: 4, batch_size: 8, learning_rate: 0.01, momentum: 0.9, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be at least 1"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Mean per-pair loss of each epoch, in epoch order.
    pub epoch_mean_loss: Vec<f64>,
}

/// Mean absolute error and its gradient with respect to the prediction.
pub fn mae_loss_and_grad<T: Scalar>(pred: &Image<T>, target: &[T]) -> Result<(f64, Image<T>)> {
    if pred.data().len() != target.len() {
        return Err(Error::invalid(format!(
            "prediction has {} values, target has {}",
            pred.data().len(),
            target.len()
        )));
    }
    let inv_n = T::from(1.0 / target.len() as f64).expect("float narrowing");
    let mut grad = Image::zeros(pred.channels(), pred.height(), pred.width());
    let mut loss = 0.0;
    for (i, (p, t)) in pred.data().iter().zip(target).enumerate() {
        let d = *p - *t;
        loss += d.abs().to_f64().expect("float widening");
        grad.data_mut()[i] = if d > T::zero() {
            inv_n
        } else if d < T::zero() {
            -inv_n
        } else {
            T::zero()
        };
    }
    Ok((loss / target.len() as f64, grad))
}

/// Run SGD with momentum over data drawn fresh each epoch.
///
/// `epoch_data` receives the epoch index and the current network and
/// returns that epoch's training pairs. A non-finite epoch loss aborts
/// with an error naming the epoch.
pub fn train<F>(
    model: &mut ConvRegressor<f32>,
    config: &TrainConfig,
    mut epoch_data: F,
) -> Result<TrainReport>
where
    F: FnMut(usize, &ConvRegressor<f32>) -> Result<Vec<ProjectionPair>>,
{
    config.validate()?;
    let lr = config.learning_rate as f32;
    let momentum = config.momentum as f32;
    let mut velocity = Gradients::zeros_like(model);
    let mut report = TrainReport::default();
    for epoch in 0..config.epochs {
        let pairs = epoch_data(epoch, model)?;
        if pairs.is_empty() {
            return Err(Error::degenerate(format!("epoch {epoch} produced no training pairs")));
        }
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / batch.len() as f32;
            let results: Result<Vec<(f64, Gradients<f32>)>> = batch
                .par_iter()
                .map(|&i| {
                    let pair = &pairs[i];
                    let tape = model.forward_with_tape(&pair.input)?;
                    let (loss, mut gout) = mae_loss_and_grad(&tape.out, &pair.response)?;
                    for v in gout.data_mut() {
                        *v *= scale;
                    }
                    let mut grads = Gradients::zeros_like(model);
                    model.backward(&tape, &gout, &mut grads);
                    Ok((loss, grads))
                })
                .collect();
            let results = results?;
            let mut batch_grads = Gradients::zeros_like(model);
            for (loss, g) in &results {
                epoch_loss += loss;
                batch_grads.add_assign(g);
            }
            for ((p, v), g) in model
                .param_tensors_mut()
                .into_iter()
                .zip(velocity.flat_mut())
                .zip(batch_grads.flat())
            {
                for i in 0..p.len() {
                    v[i] = momentum * v[i] - lr * g[i];
                    p[i] += v[i];
                }
            }
        }
        let mean = epoch_loss / pairs.len() as f64;
        if !mean.is_finite() {
            return Err(Error::degenerate(format!(
                "training diverged at epoch {epoch}: mean loss {mean}"
            )));
        }
        report.epoch_mean_loss.push(mean);
    }
    Ok(report)
}

/// Worst relative gradient error per layer kind.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub worst_by_kind: Vec<(String, f64)>,
    pub checked: usize,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.worst_by_kind.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

/// Compare analytic gradients against centered finite differences on an
/// f64 probe network, sampling `samples_per_kind` parameters from every
/// structurally distinct layer kind. Odd spatial dims exercise the
/// upsample crops; the probe loss is the production MAE.
pub fn finite_difference_check(samples_per_kind: usize, seed: u64) -> Result<GradCheck> {
    const STEP: f64 = 1e-5;
    let cfg = ModelConfig { in_channels: 8, base_width: 4, tau: 2.0, seed };
    let mut model = ConvRegressor::<f64>::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let (h, w) = (12, 10);
    let x = Image::from_vec(
        8,
        h,
        w,
        (0..8 * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    let target: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-2.0..2.0)).collect();

    let tape = model.forward_with_tape(&x)?;
    let (_, gout) = mae_loss_and_grad(&tape.out, &target)?;
    let mut grads = Gradients::zeros_like(&model);
    model.backward(&tape, &gout, &mut grads);
    let analytic: Vec<Vec<f64>> = grads.flat().into_iter().map(|t| t.to_vec()).collect();

    let specs = model.param_specs();
    let mut by_kind: std::collections::BTreeMap<&'static str, Vec<(usize, usize)>> =
        std::collections::BTreeMap::new();
    for (ti, spec) in specs.iter().enumerate() {
        let slot = by_kind.entry(spec.kind).or_default();
        for pi in 0..spec.len {
            slot.push((ti, pi));
        }
    }

    let mut worst_by_kind = Vec::new();
    let mut checked = 0;
    for (kind, mut slots) in by_kind {
        slots.shuffle(&mut rng);
        slots.truncate(samples_per_kind);
        let mut worst = 0.0f64;
        for (ti, pi) in slots {
            let mut probe = |delta: f64| -> Result<f64> {
                model.param_tensors_mut()[ti][pi] += delta;
                let out = model.forward(&x);
                model.param_tensors_mut()[ti][pi] -= delta;
                let (loss, _) = mae_loss_and_grad(&out?, &target)?;
                Ok(loss)
            };
            let up = probe(STEP)?;
            let down = probe(-STEP)?;
            let fd = (up - down) / (2.0 * STEP);
            let a = analytic[ti][pi];
            let rel = (a - fd).abs() / a.abs().max(1e-8);
            worst = worst.max(rel);
            checked += 1;
        }
        worst_by_kind.push((kind.to_string(), worst));
    }
    Ok(GradCheck { worst_by_kind, checked })
}
