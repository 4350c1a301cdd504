//! Acceptance suite: one test per release criterion, each printing a
//! single PASS or FAIL line with the measured numbers. Tolerances and
//! runtime budgets are pinned as constants next to the criterion that
//! owns them. Run with `--nocapture` to see the lines on success.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use proptest::prelude::*;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shellseg_core::distance_field::{build_distance_field, DistanceField};
use shellseg_core::engine::{
    generate_training_pairs, replacement_probability, run_shells, IterationPolicy,
};
use shellseg_core::phantom::{generate_phantom, PhantomSpec, ShapeSpec};
use shellseg_core::pipeline::{segment, SegmentationArtifacts, SegmentationSettings};
use shellseg_core::pivot_graph::{estimate_overlap, inner_outer_dsc_stats, PivotStrategy};
use shellseg_core::predictor::{
    finite_difference_check, train, ConvPredictor, ConvRegressor, ModelConfig, OraclePredictor,
    Predictor, TrainConfig,
};
use shellseg_core::reconstruction::{reconstruct, PointCloud, ReconstructionParams};
use shellseg_core::shell::{sample_radii_for_channels, ChannelSpec, Shell};
use shellseg_core::sphere_grid::DirectionGrid;
use shellseg_core::volume::{dsc, Mask, Volume};

const TAU: f64 = 2.0;

fn report(criterion: u32, pass: bool, detail: &str) {
    println!("criterion {criterion}: {} - {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn sphere_spec(seed: u64) -> PhantomSpec {
    PhantomSpec {
        dims: [128, 128, 128],
        shape: ShapeSpec::Sphere { center: [64.0, 64.0, 64.0], radius: 30.0 },
        inside_mean: 100.0,
        outside_mean: -100.0,
        noise_sigma: 20.0,
        smoothing_width: 1.5,
        seed,
    }
}

/// Integer lattice sites at the given spacing that fall strictly inside
/// the mask, for experiments that want pivots of known class.
fn inside_lattice_pivots(mask: &Mask, spacing: usize) -> Vec<[f64; 3]> {
    let dims = mask.dims();
    let mut out = Vec::new();
    for z in (spacing..dims[2] - 1).step_by(spacing) {
        for y in (spacing..dims[1] - 1).step_by(spacing) {
            for x in (spacing..dims[0] - 1).step_by(spacing) {
                if mask.get(x, y, z) {
                    out.push([x as f64, y as f64, z as f64]);
                }
            }
        }
    }
    out
}

fn subsample(points: &[[f64; 3]], count: usize, seed: u64) -> Vec<[f64; 3]> {
    if points.len() <= count {
        return points.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<usize> = index::sample(&mut rng, points.len(), count).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|i| points[i]).collect()
}

// ---------------------------------------------------------------------
// Criterion 1: the distance-field builder equals a brute-force scan.
// ---------------------------------------------------------------------

const FIELD_SUITE_BUDGET_S: f64 = 10.0;
const FIELD_MASK_COUNT: usize = 20;

/// Reference implementation: exhaustive scan over every boundary voxel
/// for every voxel. Distance is Euclidean to the nearest foreground voxel
/// with an open face, clamped to tau, negated outside the mask.
fn brute_force_field(mask: &Mask, tau: f64) -> Vec<f32> {
    let dims = mask.dims();
    let mut boundary: Vec<[i64; 3]> = Vec::new();
    for z in 0..dims[2] as i64 {
        for y in 0..dims[1] as i64 {
            for x in 0..dims[0] as i64 {
                if !mask.get_i64(x, y, z) {
                    continue;
                }
                let open = !mask.get_i64(x - 1, y, z)
                    || !mask.get_i64(x + 1, y, z)
                    || !mask.get_i64(x, y - 1, z)
                    || !mask.get_i64(x, y + 1, z)
                    || !mask.get_i64(x, y, z - 1)
                    || !mask.get_i64(x, y, z + 1);
                if open {
                    boundary.push([x, y, z]);
                }
            }
        }
    }
    let mut out = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for z in 0..dims[2] as i64 {
        for y in 0..dims[1] as i64 {
            for x in 0..dims[0] as i64 {
                let mut best = i64::MAX;
                for b in &boundary {
                    let (dx, dy, dz) = (x - b[0], y - b[1], z - b[2]);
                    let d2 = dx * dx + dy * dy + dz * dz;
                    if d2 < best {
                        best = d2;
                    }
                }
                let d = (best as f64).sqrt().min(tau);
                let sign = if mask.get_i64(x, y, z) { 1.0 } else { -1.0 };
                out.push((sign * d) as f32);
            }
        }
    }
    out
}

fn random_blob_mask(rng: &mut ChaCha8Rng) -> Mask {
    let mut mask = Mask::zeros([32, 32, 32]).unwrap();
    let balls: Vec<([f64; 3], f64)> = (0..3)
        .map(|_| {
            let c = [
                rng.gen_range(6.0..26.0),
                rng.gen_range(6.0..26.0),
                rng.gen_range(6.0..26.0),
            ];
            (c, rng.gen_range(3.0..8.0))
        })
        .collect();
    for z in 0..32 {
        for y in 0..32 {
            for x in 0..32 {
                let p = [x as f64, y as f64, z as f64];
                let inside = balls.iter().any(|(c, r)| {
                    let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
                    d2 < r * r
                });
                mask.set(x, y, z, inside);
            }
        }
    }
    mask
}

fn random_noise_mask(rng: &mut ChaCha8Rng) -> Mask {
    let mut mask = Mask::zeros([32, 32, 32]).unwrap();
    for z in 0..32 {
        for y in 0..32 {
            for x in 0..32 {
                mask.set(x, y, z, rng.gen_bool(0.08));
            }
        }
    }
    mask
}

#[test]
fn criterion_1_distance_field_matches_brute_force() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..FIELD_MASK_COUNT {
        let mask = if i % 2 == 0 { random_blob_mask(&mut rng) } else { random_noise_mask(&mut rng) };
        let count = mask.stats().count;
        assert!(count > 0 && count < 32 * 32 * 32, "degenerate random mask {i}");
        let field = build_distance_field(&mask, TAU).unwrap();
        let expected = brute_force_field(&mask, TAU);
        for (j, (&got, &want)) in field.values().data().iter().zip(&expected).enumerate() {
            assert!(
                got == want,
                "mask {i} voxel {j}: field {got} but brute force {want}"
            );
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        1,
        elapsed < FIELD_SUITE_BUDGET_S,
        &format!("{FIELD_MASK_COUNT} masks matched exactly in {elapsed:.2}s (budget {FIELD_SUITE_BUDGET_S}s)"),
    );
}

// ---------------------------------------------------------------------
// Criterion 2: oracle-driven segmentation of the three phantom shapes.
// ---------------------------------------------------------------------

const PHANTOM_SEG_BUDGET_S: f64 = 300.0;
const SPHERE_DSC_FLOOR: f64 = 0.95;
const ELLIPSOID_DSC_FLOOR: f64 = 0.93;
const DUMBBELL_DSC_FLOOR: f64 = 0.90;

struct OracleRun {
    volume: Volume,
    mask: Mask,
    field: DistanceField,
    artifacts: SegmentationArtifacts,
    dsc: f64,
    elapsed_s: f64,
}

fn oracle_run(spec: &PhantomSpec) -> OracleRun {
    let (volume, mask) = generate_phantom(spec).unwrap();
    let field = build_distance_field(&mask, TAU).unwrap();
    let start = Instant::now();
    let oracle = OraclePredictor::new(&field);
    let settings = SegmentationSettings {
        pivot_strategy: PivotStrategy::Lattice { spacing: 8.0 },
        ..SegmentationSettings::default()
    };
    let artifacts = segment(&oracle, &volume, &settings).unwrap();
    let elapsed_s = start.elapsed().as_secs_f64();
    let dsc = dsc(&artifacts.mask, &mask).unwrap();
    OracleRun { volume, mask, field, artifacts, dsc, elapsed_s }
}

/// The sphere run feeds criteria 2, 3 and 4, so it is computed once.
fn sphere_run() -> &'static OracleRun {
    static RUN: OnceLock<OracleRun> = OnceLock::new();
    RUN.get_or_init(|| oracle_run(&sphere_spec(0)))
}

#[test]
fn criterion_2_oracle_phantom_segmentation() {
    let sphere = sphere_run();

    let ellipsoid_spec = PhantomSpec {
        shape: ShapeSpec::Ellipsoid { center: [64.0, 64.0, 64.0], semi_axes: [35.0, 25.0, 20.0] },
        ..sphere_spec(0)
    };
    let ellipsoid = oracle_run(&ellipsoid_spec);

    let dumbbell_spec = PhantomSpec {
        shape: ShapeSpec::Dumbbell {
            centers: [[44.0, 64.0, 64.0], [84.0, 64.0, 64.0]],
            radii: [22.0, 22.0],
        },
        ..sphere_spec(0)
    };
    let dumbbell = oracle_run(&dumbbell_spec);

    let pass = sphere.dsc >= SPHERE_DSC_FLOOR
        && ellipsoid.dsc >= ELLIPSOID_DSC_FLOOR
        && dumbbell.dsc >= DUMBBELL_DSC_FLOOR
        && sphere.elapsed_s < PHANTOM_SEG_BUDGET_S
        && ellipsoid.elapsed_s < PHANTOM_SEG_BUDGET_S
        && dumbbell.elapsed_s < PHANTOM_SEG_BUDGET_S;
    report(
        2,
        pass,
        &format!(
            "DSC sphere {:.4} (floor {SPHERE_DSC_FLOOR}), ellipsoid {:.4} (floor {ELLIPSOID_DSC_FLOOR}), dumbbell {:.4} (floor {DUMBBELL_DSC_FLOOR}); times {:.0}s/{:.0}s/{:.0}s (budget {PHANTOM_SEG_BUDGET_S}s each)",
            sphere.dsc, ellipsoid.dsc, dumbbell.dsc,
            sphere.elapsed_s, ellipsoid.elapsed_s, dumbbell.elapsed_s
        ),
    );
}

// ---------------------------------------------------------------------
// Criterion 3: mean |response| over inner pivots decays and stays low.
// ---------------------------------------------------------------------

const TRACE_ROUNDS: usize = 200;
const TRACE_PIVOT_FLOOR: usize = 15;
const TRACE_FINAL_CEILING: f64 = 0.5;
/// Slack for the monotonicity check. Converged tips sit exactly on the
/// boundary where single-precision trilinear samples chatter at the
/// 1e-6 scale (3.4e-6 measured); a genuine bounce would be ~1e-2.
const TRACE_MONOTONE_TOL: f64 = 1e-4;

#[test]
fn criterion_3_mean_response_trace_converges() {
    let run = sphere_run();
    let inner = inside_lattice_pivots(&run.mask, 8);
    let pivots = subsample(&inner, 20, 3);
    assert!(pivots.len() >= TRACE_PIVOT_FLOOR, "only {} inner pivots", pivots.len());

    let oracle = OraclePredictor::new(&run.field);
    let grid = DirectionGrid::new(60, 60).unwrap();
    let policy = IterationPolicy {
        max_rounds: TRACE_ROUNDS,
        convergence_threshold: 0.0,
        consistency_samples: 0,
        consistency_sigma: 0.5,
        rng_seed: 0,
    };
    let runs = run_shells(
        &oracle,
        &run.volume,
        &pivots,
        6.0,
        &grid,
        &ChannelSpec::default(),
        &policy,
    )
    .unwrap();

    let mut mean = vec![0.0; TRACE_ROUNDS];
    for r in &runs {
        assert_eq!(r.trace.len(), TRACE_ROUNDS, "inner shell stopped early");
        for (m, t) in mean.iter_mut().zip(&r.trace) {
            *m += t / runs.len() as f64;
        }
    }
    let mut worst_rise = 0.0f64;
    for t in 1..mean.len() {
        worst_rise = worst_rise.max(mean[t] - mean[t - 1]);
    }
    let last = *mean.last().unwrap();
    let pass = worst_rise <= TRACE_MONOTONE_TOL && last < TRACE_FINAL_CEILING;
    report(
        3,
        pass,
        &format!(
            "{} inner pivots, worst round-to-round rise {worst_rise:.2e} (tol {TRACE_MONOTONE_TOL:.0e}), final mean |response| {last:.4} (ceiling {TRACE_FINAL_CEILING})",
            pivots.len()
        ),
    );
}

// ---------------------------------------------------------------------
// Criterion 4: neighbor-shell agreement orders inner vs outer, and a
// pivot walk dips exactly where it crosses the boundary.
// ---------------------------------------------------------------------

const WALK_ROUNDS: usize = 40;
/// Small start radius so the first update already tells the two pivot
/// classes apart: every tip of an outside pivot starts in negative field.
const WALK_START_RADIUS: f64 = 1.0;
const WALK_DROP_FLOOR: f64 = 0.5;
const OVERLAP_SAMPLES: usize = 4000;

#[test]
fn criterion_4_consistency_ordering_and_pivot_walk() {
    let run = sphere_run();
    let grid = DirectionGrid::new(60, 60).unwrap();

    let shells: Vec<Shell> = run.artifacts.runs.iter().map(|r| r.shell.clone()).collect();
    let stats = inner_outer_dsc_stats(
        &run.artifacts.graph,
        &shells,
        &grid,
        &run.artifacts.inner,
        OVERLAP_SAMPLES,
        0,
    )
    .unwrap();
    let ii = stats.inner_inner.expect("no inner-inner pairs");
    let io = stats.inner_outer.expect("no inner-outer pairs");

    // Walk along +x from the sphere center, one pivot per lattice step.
    let mut walk: Vec<[f64; 3]> = Vec::new();
    let mut x = 64.0;
    while x <= 125.0 {
        walk.push([x, 64.0, 64.0]);
        x += 8.0;
    }
    let crossing = walk
        .windows(2)
        .position(|w| (w[0][0] - 64.0).abs() < 30.0 && (w[1][0] - 64.0).abs() >= 30.0)
        .expect("walk never leaves the sphere");

    let oracle = OraclePredictor::new(&run.field);
    let policy = IterationPolicy {
        max_rounds: WALK_ROUNDS,
        convergence_threshold: 0.0,
        consistency_samples: 0,
        consistency_sigma: 0.5,
        rng_seed: 0,
    };
    let walk_runs = run_shells(
        &oracle,
        &run.volume,
        &walk,
        WALK_START_RADIUS,
        &grid,
        &ChannelSpec::default(),
        &policy,
    )
    .unwrap();
    let pair_dsc: Vec<f64> = (0..walk.len() - 1)
        .map(|k| {
            estimate_overlap(
                &walk_runs[k].shell,
                &walk_runs[k + 1].shell,
                &grid,
                OVERLAP_SAMPLES,
                k as u64,
            )
            .unwrap()
            .dsc
        })
        .collect();
    let min = pair_dsc.iter().cloned().fold(f64::INFINITY, f64::min);
    let argmin_first = pair_dsc.iter().position(|&d| d == min).unwrap();
    let drop = pair_dsc[..crossing].iter().cloned().fold(f64::INFINITY, f64::min) - pair_dsc[crossing];

    let pass = ii > io && argmin_first == crossing && drop >= WALK_DROP_FLOOR;
    report(
        4,
        pass,
        &format!(
            "inner-inner mean DSC {ii:.4} > inner-outer {io:.4} ({}/{} pairs); walk DSC {:?} has its first minimum at pair {argmin_first} (crossing {crossing}), drop {drop:.3} (floor {WALK_DROP_FLOOR})",
            stats.inner_inner_pairs,
            stats.inner_outer_pairs,
            pair_dsc.iter().map(|d| (d * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    );
}

// ---------------------------------------------------------------------
// Criterion 5: analytic gradients agree with finite differences.
// ---------------------------------------------------------------------

const GRAD_SAMPLES_PER_KIND: usize = 50;
const GRAD_REL_TOL: f64 = 1e-3;
const GRAD_BUDGET_S: f64 = 120.0;

#[test]
fn criterion_5_gradients_match_finite_differences() {
    let start = Instant::now();
    let check = finite_difference_check(GRAD_SAMPLES_PER_KIND, 0).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let worst = check.max_rel_error();
    let pass = worst < GRAD_REL_TOL && elapsed < GRAD_BUDGET_S;
    report(
        5,
        pass,
        &format!(
            "max relative error {worst:.2e} over {GRAD_SAMPLES_PER_KIND} parameters per layer kind (tol {GRAD_REL_TOL:.0e}) in {elapsed:.1}s (budget {GRAD_BUDGET_S}s)"
        ),
    );
}

// ---------------------------------------------------------------------
// Criterion 6: a freshly trained predictor segments a held-out phantom.
// ---------------------------------------------------------------------

const LEARNED_BUDGET_S: f64 = 1800.0;
const LEARNED_DSC_FLOOR: f64 = 0.85;
const LEARNED_RESPONSE_MAE_CEILING: f64 = 0.5;
const LEARNED_PIVOTS_PER_PHANTOM: usize = 48;

fn learned_spec(seed: u64) -> PhantomSpec {
    PhantomSpec {
        dims: [96, 96, 96],
        shape: ShapeSpec::Sphere { center: [48.0, 48.0, 48.0], radius: 24.0 },
        inside_mean: 100.0,
        outside_mean: -100.0,
        noise_sigma: 20.0,
        smoothing_width: 1.5,
        seed,
    }
}

#[test]
fn criterion_6_learned_predictor_pipeline() {
    let start = Instant::now();
    let grid = DirectionGrid::new(60, 60).unwrap();
    let channels = ChannelSpec::default();
    let rollout_policy = IterationPolicy {
        max_rounds: 10,
        convergence_threshold: 0.5,
        consistency_samples: 0,
        consistency_sigma: 0.5,
        rng_seed: 0,
    };

    let mut volumes = Vec::new();
    let mut fields = Vec::new();
    let mut pivot_sets = Vec::new();
    for seed in 0..3u64 {
        let (volume, mask) = generate_phantom(&learned_spec(seed)).unwrap();
        let field = build_distance_field(&mask, TAU).unwrap();
        let inside = inside_lattice_pivots(&mask, 8);
        pivot_sets.push(subsample(&inside, LEARNED_PIVOTS_PER_PHANTOM, seed));
        volumes.push(volume);
        fields.push(field);
    }

    let mut model = ConvRegressor::<f32>::new(ModelConfig {
        in_channels: channels.channels(),
        base_width: 8,
        tau: TAU,
        seed: 0,
    })
    .unwrap();
    let train_cfg = TrainConfig::default();
    let report_out = train(&mut model, &train_cfg, |epoch, current| {
        let q = replacement_probability(epoch, train_cfg.epochs);
        let rollout = (q > 0.0).then(|| ConvPredictor::new(current.clone()));
        let mut pairs = Vec::new();
        for i in 0..volumes.len() {
            pairs.extend(generate_training_pairs(
                &fields[i],
                &volumes[i],
                &pivot_sets[i],
                6.0,
                &grid,
                &channels,
                &rollout_policy,
                q,
                rollout.as_ref().map(|p| p as &dyn Predictor),
            )?);
        }
        Ok(pairs)
    })
    .unwrap();

    // Held-out phantom: segment it and score the mask.
    let (held_volume, held_mask) = generate_phantom(&learned_spec(3)).unwrap();
    let held_field = build_distance_field(&held_mask, TAU).unwrap();
    let predictor = ConvPredictor::new(model.clone());
    let settings = SegmentationSettings {
        pivot_strategy: PivotStrategy::Lattice { spacing: 8.0 },
        policy: IterationPolicy { consistency_samples: 0, ..IterationPolicy::default() },
        ..SegmentationSettings::default()
    };
    let artifacts = segment(&predictor, &held_volume, &settings).unwrap();
    let held_dsc = dsc(&artifacts.mask, &held_mask).unwrap();

    // Response accuracy on held-out rollout states the model never saw.
    let held_inside = inside_lattice_pivots(&held_mask, 8);
    let held_pivots = subsample(&held_inside, LEARNED_PIVOTS_PER_PHANTOM, 3);
    let held_pairs = generate_training_pairs(
        &held_field,
        &held_volume,
        &held_pivots,
        6.0,
        &grid,
        &channels,
        &rollout_policy,
        0.0,
        None,
    )
    .unwrap();
    let mut abs_sum = 0.0f64;
    let mut n = 0usize;
    for pair in &held_pairs {
        let out = model.forward(&pair.input).unwrap();
        for (&p, &t) in out.data().iter().zip(&pair.response) {
            abs_sum += (p as f64 - t as f64).abs();
            n += 1;
        }
    }
    let mae = abs_sum / n as f64;

    let elapsed = start.elapsed().as_secs_f64();
    let pass = held_dsc >= LEARNED_DSC_FLOOR
        && mae < LEARNED_RESPONSE_MAE_CEILING
        && elapsed < LEARNED_BUDGET_S;
    report(
        6,
        pass,
        &format!(
            "held-out DSC {held_dsc:.4} (floor {LEARNED_DSC_FLOOR}), held-out response MAE {mae:.3} voxels (ceiling {LEARNED_RESPONSE_MAE_CEILING}), epoch losses {:?}, {elapsed:.0}s (budget {LEARNED_BUDGET_S}s)",
            report_out
                .epoch_mean_loss
                .iter()
                .map(|l| (l * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>()
        ),
    );
}

// ---------------------------------------------------------------------
// Criterion 7: the density filter absorbs injected outliers.
// ---------------------------------------------------------------------

const OUTLIER_FRACTION_DENOM: usize = 20;
const OUTLIER_DSC_SHIFT_CEILING: f64 = 0.02;
const OUTLIER_BASE_DSC_FLOOR: f64 = 0.9;

#[test]
fn criterion_7_reconstruction_tolerates_outliers() {
    let (_, mask) = generate_phantom(&sphere_spec(0)).unwrap();
    let field = build_distance_field(&mask, TAU).unwrap();
    let grid = DirectionGrid::new(60, 60).unwrap();
    let pivots = inside_lattice_pivots(&mask, 8);
    let oracle = OraclePredictor::new(&field);
    let policy = IterationPolicy {
        max_rounds: 15,
        convergence_threshold: 0.25,
        consistency_samples: 0,
        consistency_sigma: 0.5,
        rng_seed: 0,
    };
    let volume = Volume::zeros([128, 128, 128]).unwrap();
    let runs = run_shells(&oracle, &volume, &pivots, 6.0, &grid, &ChannelSpec::default(), &policy)
        .unwrap();
    let mut points = Vec::new();
    for r in &runs {
        for (radius, p) in r.shell.radii().iter().zip(r.shell.ending_points(&grid)) {
            if *radius > 1e-9 {
                points.push(p);
            }
        }
    }

    // The density threshold is calibrated to the cloud size: a compact
    // cluster of k strays peaks near ln(k * 15/(8 pi) / n), so at n ~ 8e5
    // a singleton sits near -14.2 and a pair near -13.5, while the
    // boundary band itself stays above -9.5. Cutting at -12 removes
    // clusters of up to eight coincident strays and still clears the
    // band by over two log units.
    let params = ReconstructionParams {
        kde_bandwidth: 1.0,
        kde_log_threshold: -12.0,
        alpha: 16.0,
        thinning_slices: 1,
    };
    let clean = PointCloud::new(points.clone()).unwrap();
    let base_mask = reconstruct(&clean, [128, 128, 128], &params).unwrap();
    let base_dsc = dsc(&base_mask, &mask).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut contaminated = points;
    let outliers = contaminated.len() / OUTLIER_FRACTION_DENOM;
    for _ in 0..outliers {
        contaminated.push([
            rng.gen_range(0.0..127.0),
            rng.gen_range(0.0..127.0),
            rng.gen_range(0.0..127.0),
        ]);
    }
    let noisy = PointCloud::new(contaminated).unwrap();
    let noisy_mask = reconstruct(&noisy, [128, 128, 128], &params).unwrap();
    let noisy_dsc = dsc(&noisy_mask, &mask).unwrap();

    let shift = (noisy_dsc - base_dsc).abs();
    let pass = base_dsc >= OUTLIER_BASE_DSC_FLOOR && shift <= OUTLIER_DSC_SHIFT_CEILING;
    report(
        7,
        pass,
        &format!(
            "DSC {base_dsc:.4} clean vs {noisy_dsc:.4} with {outliers} outliers, shift {shift:.4} (ceiling {OUTLIER_DSC_SHIFT_CEILING})"
        ),
    );
}

// ---------------------------------------------------------------------
// Criterion 8: every command is bit-identical across thread counts.
// ---------------------------------------------------------------------

fn acceptance_cli_config(out_dir: &Path) -> serde_json::Value {
    serde_json::json!({
        "outDir": out_dir,
        "phantom": {
            "dims": [32, 32, 32],
            "shape": { "kind": "sphere", "center": [16.0, 16.0, 16.0], "radius": 8.0 },
            "noiseSigma": 5.0,
            "seed": 3
        },
        "grid": { "azimuth": 16, "polar": 16 },
        "initialRadius": 3.0,
        "iteration": {
            "maxRounds": 6,
            "convergenceThreshold": 0.25,
            "consistencySamples": 0,
            "consistencySigma": 0.5,
            "rngSeed": 0
        },
        "pivots": {
            "strategy": { "kind": "lattice", "spacing": 5.0 },
            "seed": 0,
            "roi": null,
            "faceBand": null
        },
        "overlap": { "samples": 500, "seed": 0 },
        "diag": { "iterations": 20, "pivotCount": 4, "seed": 0, "walkAxis": 0, "walkCount": 6 },
        "train": {
            "phantoms": [
                {
                    "dims": [32, 32, 32],
                    "shape": { "kind": "sphere", "center": [16.0, 16.0, 16.0], "radius": 8.0 },
                    "noiseSigma": 5.0,
                    "seed": 0
                }
            ],
            "pivotsPerPhantom": 4,
            "epochs": 2,
            "batchSize": 4,
            "learningRate": 0.005,
            "momentum": 0.9,
            "seed": 0,
            "baseWidth": 4,
            "curriculum": true
        }
    })
}

fn run_all_commands(cfg_path: &Path, out_dir: &Path, threads: &str) {
    let cfg = cfg_path.to_str().unwrap();
    let steps: Vec<Vec<String>> = vec![
        vec!["phantom".into(), "--config".into(), cfg.into()],
        vec!["prepare".into(), "--config".into(), cfg.into()],
        vec!["train".into(), "--config".into(), cfg.into()],
        vec!["segment".into(), "--config".into(), cfg.into()],
        vec![
            "eval".into(),
            "--pred".into(),
            out_dir.join("predicted.raw").to_str().unwrap().into(),
            "--gt".into(),
            out_dir.join("mask.raw").to_str().unwrap().into(),
            "--out".into(),
            out_dir.join("metrics.csv").to_str().unwrap().into(),
        ],
        vec!["diag".into(), "--config".into(), cfg.into()],
    ];
    for step in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_shellseg"))
            .args(&step)
            .args(["--threads", threads])
            .output()
            .expect("failed to spawn shellseg");
        assert!(
            out.status.success(),
            "{step:?} with --threads {threads} failed:\n{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

fn collect_files(dir: &Path, base: &Path, into: &mut Vec<PathBuf>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(&path, base, into);
        } else {
            into.push(path.strip_prefix(base).unwrap().to_path_buf());
        }
    }
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files);
    files.sort();
    files.into_iter().map(|rel| (rel.clone(), fs::read(dir.join(rel)).unwrap())).collect()
}

#[test]
fn criterion_8_commands_are_thread_count_invariant() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let cfg = tmp.path().join("pipeline.json");
    fs::write(&cfg, serde_json::to_string_pretty(&acceptance_cli_config(&out_dir)).unwrap())
        .unwrap();

    // One config, one output directory, two thread counts: the second
    // pass overwrites the first, so a snapshot records it.
    run_all_commands(&cfg, &out_dir, "1");
    let first = snapshot(&out_dir);
    run_all_commands(&cfg, &out_dir, "3");
    let second = snapshot(&out_dir);

    let names_match = first.iter().map(|(p, _)| p).eq(second.iter().map(|(p, _)| p));
    let mismatched: Vec<&PathBuf> = first
        .iter()
        .zip(&second)
        .filter(|((_, a), (_, b))| a != b)
        .map(|((p, _), _)| p)
        .collect();
    let pass = names_match && mismatched.is_empty() && first.len() >= 15;
    report(
        8,
        pass,
        &format!(
            "{} output files from all six commands identical across --threads 1 and 3{}",
            first.len(),
            if mismatched.is_empty() {
                String::new()
            } else {
                format!("; mismatched: {mismatched:?}")
            }
        ),
    );
}

// ---------------------------------------------------------------------
// Criterion 9: mechanical unit properties of the core formulas.
// ---------------------------------------------------------------------

const UNIT_NORM_TOL: f64 = 1e-12;
const CHANNEL_RADIUS_TOL: f64 = 1e-12;

fn assert_channel_radii(la: usize, lb: usize, radii: &[f64], expected: &[Vec<f64>]) {
    let grid = DirectionGrid::new(1, radii.len()).unwrap();
    let shell = Shell::from_radii([0.0, 0.0, 0.0], radii.to_vec(), &grid).unwrap();
    let spec = ChannelSpec { la, lb, append_directions: false };
    let got = sample_radii_for_channels(&shell, &spec);
    assert_eq!(got.len(), expected.len(), "channel count for la={la} lb={lb}");
    for (c, (g, e)) in got.iter().zip(expected).enumerate() {
        for (j, (a, b)) in g.iter().zip(e).enumerate() {
            assert!(
                (a - b).abs() <= CHANNEL_RADIUS_TOL,
                "la={la} lb={lb} channel {c} direction {j}: got {a}, expected {b}"
            );
        }
    }
}

#[test]
fn criterion_9_mechanical_unit_properties() {
    // Radii stay non-negative under arbitrary response sequences.
    let grid = DirectionGrid::new(8, 8).unwrap();
    let cases = ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() };
    proptest!(cases, |(
        seqs in prop::collection::vec(
            prop::collection::vec(-1e3f64..1e3, 64),
            1..12,
        ),
        r0 in 0.1f64..50.0,
    )| {
        let mut shell = Shell::uniform([0.0, 0.0, 0.0], r0, &grid).unwrap();
        for responses in &seqs {
            shell.apply_response(responses).unwrap();
            prop_assert!(shell.radii().iter().all(|r| *r >= 0.0));
        }
    });

    // Hand-computed channel radii. Part A brackets the boundary at unit
    // spacing, part B spreads interior fractions of what remains.
    let radii = [0.2, 3.0, 10.0];
    assert_channel_radii(1, 0, &radii, &[vec![0.2, 3.0, 10.0]]);
    assert_channel_radii(
        5,
        0,
        &radii,
        &[
            vec![0.0, 1.0, 8.0],
            vec![0.0, 2.0, 9.0],
            vec![0.2, 3.0, 10.0],
            vec![1.2, 4.0, 11.0],
            vec![2.2, 5.0, 12.0],
        ],
    );
    let b = |k: f64| vec![0.0, 0.0, k * 7.0 / 6.0];
    assert_channel_radii(
        5,
        5,
        &radii,
        &[
            vec![0.0, 1.0, 8.0],
            vec![0.0, 2.0, 9.0],
            vec![0.2, 3.0, 10.0],
            vec![1.2, 4.0, 11.0],
            vec![2.2, 5.0, 12.0],
            b(1.0),
            b(2.0),
            b(3.0),
            b(4.0),
            b(5.0),
        ],
    );

    // Direction grid at the reference resolution: exact count, unit norms.
    let reference = DirectionGrid::new(120, 120).unwrap();
    assert_eq!(reference.len(), 14_400);
    let mut worst = 0.0f64;
    for i in 0..reference.len() {
        let d = reference.dir(i);
        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        worst = worst.max((norm - 1.0).abs());
    }
    let pass = worst <= UNIT_NORM_TOL;
    report(
        9,
        pass,
        &format!(
            "radii non-negative over random update sequences; channel radii match hand-computed offsets for (1,0), (5,0), (5,5); 14400 directions with worst norm error {worst:.1e} (tol {UNIT_NORM_TOL:.0e})"
        ),
    );
}
