//! The pipeline configuration document.
//!
//! One JSON file drives every subcommand. Missing sections fall back to
//! the documented defaults; unknown keys are rejected so typos cannot
//! silently revert a tunable. `--print-effective-config` dumps the merged
//! result, which is the authoritative record of what a run actually used.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use shellseg_core::engine::IterationPolicy;
use shellseg_core::phantom::{PhantomSpec, ShapeSpec};
use shellseg_core::pivot_graph::{ClassificationMethod, PivotStrategy, RoiBox};
use shellseg_core::shell::ChannelSpec;
use shellseg_core::sphere_grid::DirectionGrid;
use shellseg_core::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Every output file of every subcommand lands here.
    pub out_dir: PathBuf,
    pub phantom: PhantomSpec,
    /// Truncation radius of the signed boundary distance, in voxels.
    pub tau: f64,
    pub grid: GridConfig,
    pub channels: ChannelSpec,
    pub initial_radius: f64,
    pub iteration: IterationPolicy,
    pub pivots: PivotConfig,
    pub overlap: OverlapConfig,
    pub classification: ClassificationMethod,
    pub reconstruction: ReconstructionConfig,
    pub predictor: PredictorKind,
    pub train: TrainSection,
    pub diag: DiagSection,
}

impl Default for PipelineConfig {
    fn default() -> PipelineConfig {
        PipelineConfig {
            out_dir: PathBuf::from("out"),
            phantom: default_phantom(),
            tau: 2.0,
            grid: GridConfig::default(),
            channels: ChannelSpec::default(),
            initial_radius: 6.0,
            iteration: IterationPolicy::default(),
            pivots: PivotConfig::default(),
            overlap: OverlapConfig::default(),
            classification: ClassificationMethod::MinCut,
            reconstruction: ReconstructionConfig::default(),
            predictor: PredictorKind::Oracle,
            train: TrainSection::default(),
            diag: DiagSection::default(),
        }
    }
}

fn default_phantom() -> PhantomSpec {
    PhantomSpec {
        dims: [128; 3],
        shape: ShapeSpec::Sphere { center: [64.0; 3], radius: 30.0 },
        inside_mean: 100.0,
        outside_mean: -100.0,
        noise_sigma: 20.0,
        smoothing_width: 1.5,
        seed: 0,
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct GridConfig {
    pub azimuth: usize,
    pub polar: usize,
}

impl Default for GridConfig {
    fn default() -> GridConfig {
        GridConfig { azimuth: 60, polar: 60 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct PivotConfig {
    pub strategy: PivotStrategy,
    pub seed: u64,
    /// Pivot region; `null` insets the volume box by the default margin.
    pub roi: Option<RoiBox>,
    /// Width of the ROI-face band whose pivots seed the outer side of
    /// the cut; `null` uses the pivot-set default.
    pub face_band: Option<f64>,
}

impl Default for PivotConfig {
    fn default() -> PivotConfig {
        PivotConfig {
            strategy: PivotStrategy::Lattice { spacing: 8.0 },
            seed: 0,
            roi: None,
            face_band: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct OverlapConfig {
    /// Monte Carlo samples per shell-overlap edge.
    pub samples: usize,
    pub seed: u64,
}

impl Default for OverlapConfig {
    fn default() -> OverlapConfig {
        OverlapConfig { samples: 5000, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct ReconstructionConfig {
    pub kde_bandwidth: f64,
    pub kde_log_threshold: f64,
    /// Circumradius cutoff; `null` uses twice the pivot spacing.
    pub alpha: Option<f64>,
    pub thinning_slices: usize,
}

impl Default for ReconstructionConfig {
    fn default() -> ReconstructionConfig {
        ReconstructionConfig {
            kde_bandwidth: 1.0,
            kde_log_threshold: -14.0,
            alpha: None,
            thinning_slices: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum PredictorKind {
    /// Ground-truth responses from the prepared distance field.
    Oracle,
    /// The trained convolutional regressor from the checkpoint file.
    Learned,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct TrainSection {
    /// Phantoms that supply training rollouts; must be non-empty for
    /// the train command.
    pub phantoms: Vec<PhantomSpec>,
    /// Per-phantom cap on training pivots; `null` keeps the whole set.
    pub pivots_per_phantom: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub base_width: usize,
    /// Regenerate rollouts each epoch, replacing ground-truth responses
    /// with model responses at a probability that ramps from 0 to 1.
    /// Disabled, every epoch trains on pure ground-truth rollouts.
    pub curriculum: bool,
}

impl Default for TrainSection {
    fn default() -> TrainSection {
        TrainSection {
            phantoms: Vec::new(),
            pivots_per_phantom: None,
            epochs: 4,
            batch_size: 8,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
            base_width: 16,
            curriculum: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct DiagSection {
    /// Shell iterations per sampled pivot; early convergence exit is
    /// disabled so traces keep their full length.
    pub iterations: usize,
    /// How many ground-truth-inside pivots to trace.
    pub pivot_count: usize,
    pub seed: u64,
    /// Axis (0..3) the pivot walk marches along, starting inside the
    /// shape and stepping by the pivot spacing.
    pub walk_axis: usize,
    pub walk_count: usize,
}

impl Default for DiagSection {
    fn default() -> DiagSection {
        DiagSection { iterations: 200, pivot_count: 20, seed: 0, walk_axis: 0, walk_count: 10 }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::invalid(format!("bad config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Check every tunable against its stage's preconditions, so a bad
    /// value fails at load time instead of hours into a run.
    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::invalid(format!("tau {} must be finite and positive", self.tau)));
        }
        DirectionGrid::new(self.grid.azimuth, self.grid.polar)?;
        self.channels.validate()?;
        if !(self.initial_radius > 0.0) || !self.initial_radius.is_finite() {
            return Err(Error::invalid(format!(
                "initial radius {} must be finite and positive",
                self.initial_radius
            )));
        }
        self.iteration.validate()?;
        match self.pivots.strategy {
            PivotStrategy::Lattice { spacing } => {
                if !(spacing > 0.0) || !spacing.is_finite() {
                    return Err(Error::invalid(format!(
                        "pivot spacing {spacing} must be finite and positive"
                    )));
                }
            }
            PivotStrategy::UniformRandom { count } => {
                if count == 0 {
                    return Err(Error::invalid("pivot count must be at least 1"));
                }
            }
        }
        if let Some(roi) = &self.pivots.roi {
            roi.validate()?;
        }
        if self.overlap.samples == 0 {
            return Err(Error::invalid("overlap sampling needs at least one sample"));
        }
        if let ClassificationMethod::Threshold { theta } = self.classification {
            if !(0.0..=1.0).contains(&theta) {
                return Err(Error::invalid(format!(
                    "classification threshold {theta} must lie in [0, 1]"
                )));
            }
        }
        let rec = &self.reconstruction;
        if !(rec.kde_bandwidth > 0.0) || !rec.kde_bandwidth.is_finite() {
            return Err(Error::invalid(format!(
                "KDE bandwidth {} must be finite and positive",
                rec.kde_bandwidth
            )));
        }
        if !rec.kde_log_threshold.is_finite() {
            return Err(Error::invalid(format!(
                "KDE log threshold {} must be finite",
                rec.kde_log_threshold
            )));
        }
        if let Some(alpha) = rec.alpha {
            if !(alpha > 0.0) || !alpha.is_finite() {
                return Err(Error::invalid(format!("alpha {alpha} must be finite and positive")));
            }
        }
        self.train.validate()?;
        let diag = &self.diag;
        if diag.iterations == 0 || diag.pivot_count == 0 || diag.walk_count < 2 {
            return Err(Error::invalid(
                "diagnostics need at least one iteration, one pivot and two walk pivots",
            ));
        }
        if diag.walk_axis >= 3 {
            return Err(Error::invalid(format!("walk axis {} must be 0, 1 or 2", diag.walk_axis)));
        }
        Ok(())
    }

    /// Replace every stage seed, giving one flag that reseeds the whole
    /// pipeline without touching the config file.
    pub fn override_seeds(&mut self, seed: u64) {
        self.phantom.seed = seed;
        self.iteration.rng_seed = seed;
        self.pivots.seed = seed;
        self.overlap.seed = seed;
        self.train.seed = seed;
        self.diag.seed = seed;
        for spec in &mut self.train.phantoms {
            spec.seed = seed;
        }
    }
}

impl TrainSection {
    fn validate(&self) -> Result<()> {
        for spec in &self.phantoms {
            spec.validate()?;
        }
        if let Some(0) = self.pivots_per_phantom {
            return Err(Error::invalid("pivots per phantom must be at least 1"));
        }
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
        if self.base_width == 0 {
            return Err(Error::invalid("base width must be at least 1"));
        }
        Ok(())
    }
}
