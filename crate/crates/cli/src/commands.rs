//! The six subcommands, each reading its inputs from the output
//! directory laid down by the previous stage.
//!
//! File layout under `outDir`: `volume.raw` and `mask.raw` from the
//! phantom stage, `field.raw` from prepare, `model.bin` and `loss.csv`
//! from train, `predicted.raw` plus the CSV artifacts from segment, and
//! the diagnostics CSV/SVG pairs. Every writer is deterministic; logs
//! and timings go to stderr so output files never embed wall time.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use shellseg_core::distance_field::{build_distance_field, DistanceField};
use shellseg_core::engine::{
    generate_training_pairs, replacement_probability, run_shells, IterationPolicy,
};
use shellseg_core::io::{read_field, read_mask, read_volume, write_field, write_mask, write_volume};
use shellseg_core::phantom::{generate_phantom, ShapeSpec};
use shellseg_core::pipeline::{self, SegmentationSettings};
use shellseg_core::pivot_graph::{estimate_overlap, sample_pivots, PivotSet};
use shellseg_core::predictor::{ConvPredictor, ConvRegressor, ModelConfig, OraclePredictor, Predictor, TrainConfig};
use shellseg_core::sphere_grid::DirectionGrid;
use shellseg_core::volume::{dsc, Volume};
use shellseg_core::Error;

use crate::config::{PipelineConfig, PredictorKind};
use crate::svg::{line_chart, Series};
use crate::{CmdResult, Failure};

fn out_path(cfg: &PipelineConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

fn ensure_out_dir(cfg: &PipelineConfig) -> CmdResult {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| {
        Failure::Runtime(format!("cannot create {}: {e}", cfg.out_dir.display()))
    })?;
    // Re-dumping the merged config on every run keeps an authoritative
    // record of the tunables next to the artifacts they produced.
    let text = serde_json::to_string_pretty(cfg)
        .map_err(|e| Failure::Runtime(format!("config serialization: {e}")))?;
    fs::write(out_path(cfg, "effective-config.json"), text + "\n")
        .map_err(|e| Failure::Runtime(format!("cannot write effective config: {e}")))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text)
        .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

fn settings_from(cfg: &PipelineConfig) -> SegmentationSettings {
    SegmentationSettings {
        pivot_strategy: cfg.pivots.strategy,
        pivot_seed: cfg.pivots.seed,
        roi: cfg.pivots.roi,
        grid_azimuth: cfg.grid.azimuth,
        grid_polar: cfg.grid.polar,
        channels: cfg.channels,
        initial_radius: cfg.initial_radius,
        policy: cfg.iteration,
        overlap_samples: cfg.overlap.samples,
        overlap_seed: cfg.overlap.seed,
        classification: cfg.classification,
        face_band: cfg.pivots.face_band,
        alpha: cfg.reconstruction.alpha,
        kde_bandwidth: cfg.reconstruction.kde_bandwidth,
        kde_log_threshold: cfg.reconstruction.kde_log_threshold,
        thinning_slices: cfg.reconstruction.thinning_slices,
    }
}

/// Generate the configured phantom and store volume, mask and manifest.
pub fn phantom(cfg: &PipelineConfig) -> CmdResult {
    ensure_out_dir(cfg)?;
    let (volume, mask) = generate_phantom(&cfg.phantom)?;
    write_volume(&out_path(cfg, "volume.raw"), &volume)?;
    write_mask(&out_path(cfg, "mask.raw"), &mask)?;
    let stats = mask.stats();
    let manifest = serde_json::json!({
        "spec": cfg.phantom,
        "volumeFile": "volume.raw",
        "maskFile": "mask.raw",
        "maskVoxels": stats.count,
    });
    write_text(
        &out_path(cfg, "phantom-manifest.json"),
        &format!("{:#}\n", manifest),
    )?;
    eprintln!("phantom: {} foreground voxels in {:?}", stats.count, cfg.phantom.dims);
    Ok(())
}

/// Build the truncated signed boundary distance for the stored mask.
pub fn prepare(cfg: &PipelineConfig) -> CmdResult {
    ensure_out_dir(cfg)?;
    let mask = read_mask(&out_path(cfg, "mask.raw"))?;
    let started = Instant::now();
    let field = build_distance_field(&mask, cfg.tau)?;
    let elapsed = started.elapsed();
    write_field(&out_path(cfg, "field.raw"), &field)?;
    eprintln!("prepare: field built in {:.2} s", elapsed.as_secs_f64());
    Ok(())
}

/// Train the convolutional regressor on rollouts from the configured
/// training phantoms and store checkpoint plus per-epoch loss.
pub fn train(cfg: &PipelineConfig) -> CmdResult {
    let section = &cfg.train;
    if section.phantoms.is_empty() {
        return Err(Failure::Config("train.phantoms is empty; nothing to train on".into()));
    }
    ensure_out_dir(cfg)?;
    let grid = DirectionGrid::new(cfg.grid.azimuth, cfg.grid.polar)?;

    // Volumes, fields and training pivots are fixed across epochs; only
    // the rollouts are regenerated as the curriculum hands control from
    // the ground truth to the model.
    let mut datasets: Vec<(Volume, DistanceField, Vec<[f64; 3]>)> = Vec::new();
    for (pi, spec) in section.phantoms.iter().enumerate() {
        let (volume, mask) = generate_phantom(spec)?;
        let field = build_distance_field(&mask, cfg.tau)?;
        let roi = match cfg.pivots.roi {
            Some(r) => r,
            None => pipeline::default_roi(spec.dims)?,
        };
        let set = sample_pivots(roi, cfg.pivots.strategy, cfg.pivots.seed)?;
        // Training rollouts start from pivots inside the ground truth,
        // where every direction has a boundary to converge to.
        let mut pivots: Vec<[f64; 3]> = set
            .pivots
            .iter()
            .copied()
            .filter(|p| {
                let x = p[0].round() as usize;
                let y = p[1].round() as usize;
                let z = p[2].round() as usize;
                mask.get(x, y, z)
            })
            .collect();
        if let Some(cap) = section.pivots_per_phantom {
            if cap < pivots.len() {
                let mut rng = ChaCha8Rng::seed_from_u64(section.seed);
                rng.set_stream(pi as u64);
                let mut keep = rand::seq::index::sample(&mut rng, pivots.len(), cap).into_vec();
                keep.sort_unstable();
                pivots = keep.into_iter().map(|i| pivots[i]).collect();
            }
        }
        if pivots.is_empty() {
            return Err(Failure::Runtime(format!(
                "training phantom {pi} has no pivots inside the ground truth"
            )));
        }
        eprintln!("train: phantom {pi} contributes {} pivots", pivots.len());
        datasets.push((volume, field, pivots));
    }

    let mut model = ConvRegressor::<f32>::new(ModelConfig {
        in_channels: cfg.channels.channels(),
        base_width: section.base_width,
        tau: cfg.tau,
        seed: section.seed,
    })?;
    let tc = TrainConfig {
        epochs: section.epochs,
        batch_size: section.batch_size,
        learning_rate: section.learning_rate,
        momentum: section.momentum,
        seed: section.seed,
    };
    let epochs = section.epochs;
    let curriculum = section.curriculum;
    let report = shellseg_core::predictor::train(&mut model, &tc, |epoch, current| {
        let q = if curriculum { replacement_probability(epoch, epochs) } else { 0.0 };
        let rollout_model = if q > 0.0 { Some(ConvPredictor::new(current.clone())) } else { None };
        let model_ref = rollout_model.as_ref().map(|p| p as &dyn Predictor);
        let mut pairs = Vec::new();
        for (volume, field, pivots) in &datasets {
            pairs.extend(generate_training_pairs(
                field,
                volume,
                pivots,
                cfg.initial_radius,
                &grid,
                &cfg.channels,
                &cfg.iteration,
                q,
                model_ref,
            )?);
        }
        eprintln!("train: epoch {epoch} rollouts ready (replacement probability {q:.3})");
        Ok(pairs)
    })?;

    model.save(&out_path(cfg, "model.bin"))?;
    let mut csv = String::from("epoch,meanLoss\n");
    for (epoch, loss) in report.epoch_mean_loss.iter().enumerate() {
        csv.push_str(&format!("{epoch},{loss}\n"));
    }
    write_text(&out_path(cfg, "loss.csv"), &csv)?;
    eprintln!(
        "train: mean loss {} -> {} over {} epochs",
        report.epoch_mean_loss.first().unwrap_or(&f64::NAN),
        report.epoch_mean_loss.last().unwrap_or(&f64::NAN),
        report.epoch_mean_loss.len()
    );
    Ok(())
}

/// Segment the stored volume and persist the mask plus every
/// intermediate artifact worth inspecting.
pub fn segment(cfg: &PipelineConfig) -> CmdResult {
    ensure_out_dir(cfg)?;
    let volume = read_volume(&out_path(cfg, "volume.raw"))?;
    let settings = settings_from(cfg);
    let arts = match cfg.predictor {
        PredictorKind::Oracle => {
            let field = read_field(&out_path(cfg, "field.raw"))?;
            let oracle = OraclePredictor::new(&field);
            pipeline::segment(&oracle, &volume, &settings)?
        }
        PredictorKind::Learned => {
            let predictor = ConvPredictor::from_checkpoint(&out_path(cfg, "model.bin"))?;
            pipeline::segment(&predictor, &volume, &settings)?
        }
    };
    for w in &arts.warnings {
        eprintln!("segment: warning: {w}");
    }

    write_mask(&out_path(cfg, "predicted.raw"), &arts.mask)?;

    let mut cloud = String::from("x,y,z\n");
    for p in arts.cloud.points() {
        cloud.push_str(&format!("{},{},{}\n", p[0], p[1], p[2]));
    }
    write_text(&out_path(cfg, "cloud.csv"), &cloud)?;

    let mut partition = String::from("pivotIndex,x,y,z,inner\n");
    for (i, (p, inner)) in arts.pivots.pivots.iter().zip(&arts.inner).enumerate() {
        partition.push_str(&format!("{i},{},{},{},{}\n", p[0], p[1], p[2], *inner as u8));
    }
    write_text(&out_path(cfg, "partition.csv"), &partition)?;

    let mut traces = String::from("pivotIndex,round,meanAbsResponse\n");
    for (i, run) in arts.runs.iter().enumerate() {
        for (round, v) in run.trace.iter().enumerate() {
            traces.push_str(&format!("{i},{round},{v}\n"));
        }
    }
    write_text(&out_path(cfg, "traces.csv"), &traces)?;

    let inner_count = arts.inner.iter().filter(|b| **b).count();
    let manifest = serde_json::json!({
        "pivots": arts.pivots.pivots.len(),
        "innerPivots": inner_count,
        "cloudPoints": arts.cloud.len(),
        "alpha": arts.alpha,
        "maskVoxels": arts.mask.stats().count,
        "warnings": arts.warnings,
    });
    write_text(&out_path(cfg, "segment-manifest.json"), &format!("{:#}\n", manifest))?;
    eprintln!(
        "segment: {inner_count}/{} inner pivots, {} cloud points, {} mask voxels",
        arts.pivots.pivots.len(),
        arts.cloud.len(),
        arts.mask.stats().count
    );
    Ok(())
}

/// Score a predicted mask against a reference mask.
pub fn eval(pred_path: &Path, gt_path: &Path, out: Option<&Path>) -> CmdResult {
    let pred = read_mask(pred_path)?;
    let gt = read_mask(gt_path)?;
    let score = dsc(&pred, &gt)?;
    let both = pred
        .data()
        .iter()
        .zip(gt.data())
        .filter(|(a, b)| **a != 0 && **b != 0)
        .count();
    let csv = format!(
        "dsc,predVoxels,gtVoxels,bothVoxels\n{score},{},{},{both}\n",
        pred.stats().count,
        gt.stats().count
    );
    print!("{csv}");
    if let Some(path) = out {
        write_text(path, &csv)?;
    }
    Ok(())
}

fn shape_anchor(shape: &ShapeSpec) -> [f64; 3] {
    match shape {
        ShapeSpec::Sphere { center, .. } => *center,
        ShapeSpec::Ellipsoid { center, .. } => *center,
        ShapeSpec::Dumbbell { centers, .. } => centers[0],
        // The ring center is hollow; anchor inside the tube instead.
        ShapeSpec::Torus { center, ring_radius, .. } => {
            [center[0] + ring_radius, center[1], center[2]]
        }
    }
}

fn predictor_responses(
    cfg: &PipelineConfig,
    volume: &Volume,
    field: &DistanceField,
    pivots: &[[f64; 3]],
    policy: &IterationPolicy,
    grid: &DirectionGrid,
) -> Result<Vec<shellseg_core::engine::ShellRun>, Failure> {
    let runs = match cfg.predictor {
        PredictorKind::Oracle => {
            let oracle = OraclePredictor::new(field);
            run_shells(&oracle, volume, pivots, cfg.initial_radius, grid, &cfg.channels, policy)?
        }
        PredictorKind::Learned => {
            let predictor = ConvPredictor::from_checkpoint(&out_path(cfg, "model.bin"))?;
            run_shells(&predictor, volume, pivots, cfg.initial_radius, grid, &cfg.channels, policy)?
        }
    };
    Ok(runs)
}

/// Convergence traces for a sample of inside pivots plus the pivot-walk
/// overlap experiment, each as CSV and SVG.
pub fn diag(cfg: &PipelineConfig) -> CmdResult {
    ensure_out_dir(cfg)?;
    let (volume, mask) = generate_phantom(&cfg.phantom)?;
    let field = build_distance_field(&mask, cfg.tau)?;
    let grid = DirectionGrid::new(cfg.grid.azimuth, cfg.grid.polar)?;
    let roi = match cfg.pivots.roi {
        Some(r) => r,
        None => pipeline::default_roi(cfg.phantom.dims)?,
    };
    let set: PivotSet = sample_pivots(roi, cfg.pivots.strategy, cfg.pivots.seed)?;

    let mut inside: Vec<[f64; 3]> = set
        .pivots
        .iter()
        .copied()
        .filter(|p| {
            mask.get(p[0].round() as usize, p[1].round() as usize, p[2].round() as usize)
        })
        .collect();
    if inside.is_empty() {
        return Err(Failure::Runtime(
            "diagnostics pivot sample is empty: no pivot lands inside the phantom".into(),
        ));
    }
    if cfg.diag.pivot_count < inside.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.diag.seed);
        let mut keep =
            rand::seq::index::sample(&mut rng, inside.len(), cfg.diag.pivot_count).into_vec();
        keep.sort_unstable();
        inside = keep.into_iter().map(|i| inside[i]).collect();
    }

    // Full-length traces: disable the early convergence exit.
    let trace_policy = IterationPolicy {
        max_rounds: cfg.diag.iterations,
        convergence_threshold: 0.0,
        ..cfg.iteration
    };
    let runs = predictor_responses(cfg, &volume, &field, &inside, &trace_policy, &grid)?;

    let rounds = cfg.diag.iterations;
    let mut csv = String::from("round,mean");
    for i in 0..runs.len() {
        csv.push_str(&format!(",pivot{i}"));
    }
    csv.push('\n');
    let mut mean_points = Vec::with_capacity(rounds);
    let mut per_pivot: Vec<Vec<(f64, f64)>> = vec![Vec::with_capacity(rounds); runs.len()];
    for round in 0..rounds {
        let mut row = Vec::with_capacity(runs.len());
        for run in &runs {
            row.push(run.trace[round]);
        }
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        mean_points.push((round as f64, mean));
        csv.push_str(&format!("{round},{mean}"));
        for (i, v) in row.iter().enumerate() {
            csv.push_str(&format!(",{v}"));
            per_pivot[i].push((round as f64, *v));
        }
        csv.push('\n');
    }
    write_text(&out_path(cfg, "convergence.csv"), &csv)?;

    let mut series = vec![Series { label: "mean", points: &mean_points, emphasis: true }];
    for points in &per_pivot {
        series.push(Series { label: "", points, emphasis: false });
    }
    line_chart(
        &out_path(cfg, "convergence.svg"),
        "mean |response| per round",
        "round",
        "mean |response|",
        &series,
    )?;

    // Pivot walk: march from inside the shape across its boundary and
    // score each adjacent shell pair by overlap.
    let anchor = shape_anchor(&cfg.phantom.shape);
    let axis = cfg.diag.walk_axis;
    let mut walk = Vec::new();
    for k in 0..cfg.diag.walk_count {
        let mut p = anchor;
        p[axis] += k as f64 * set.spacing;
        if p[axis] > roi.max[axis] {
            break;
        }
        walk.push(p);
    }
    if walk.len() < 2 {
        return Err(Failure::Runtime(
            "pivot walk has fewer than two pivots inside the ROI; lower walkCount or spacing"
                .into(),
        ));
    }
    let walk_runs = predictor_responses(cfg, &volume, &field, &walk, &cfg.iteration, &grid)?;
    let mut walk_csv = String::from("pair,offset,dsc\n");
    let mut walk_points = Vec::new();
    for k in 0..walk_runs.len() - 1 {
        let est = estimate_overlap(
            &walk_runs[k].shell,
            &walk_runs[k + 1].shell,
            &grid,
            cfg.overlap.samples,
            cfg.overlap.seed.wrapping_add(k as u64),
        )?;
        let offset = (k as f64 + 0.5) * set.spacing;
        walk_csv.push_str(&format!("{k},{offset},{}\n", est.dsc));
        walk_points.push((offset, est.dsc));
    }
    write_text(&out_path(cfg, "walk.csv"), &walk_csv)?;
    line_chart(
        &out_path(cfg, "walk.svg"),
        "adjacent shell overlap along the walk",
        "offset from anchor",
        "pair DSC",
        &[Series { label: "pair DSC", points: &walk_points, emphasis: true }],
    )?;
    eprintln!("diag: {} traces over {rounds} rounds, {} walk pairs", runs.len(), walk_points.len());
    Ok(())
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        Failure::Runtime(e.to_string())
    }
}
