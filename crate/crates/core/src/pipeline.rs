//! One-call segmentation: pivots to shells to cut to mask.
//!
//! This module strings the stage modules together in their canonical
//! order and hands back every intermediate artifact, so callers can
//! persist, inspect or re-score any stage without re-running the rest.

use crate::engine::{run_shells, IterationPolicy, ShellRun};
use crate::error::{Error, Result};
use crate::pivot_graph::{
    build_graph, classify_pivots, roi_face_flags, sample_pivots, ClassificationMethod,
    ConsistencyGraph, PivotSet, PivotStrategy, RoiBox,
};
use crate::predictor::Predictor;
use crate::reconstruction::{reconstruct, PointCloud, ReconstructionParams};
use crate::shell::ChannelSpec;
use crate::sphere_grid::DirectionGrid;
use crate::volume::{Mask, Volume};

/// Default inset of the pivot region from the volume bounds, in voxels.
/// Keeps border pivots far enough inside that their sampling channels
/// still see real data instead of clamped edge values.
pub const ROI_MARGIN: f64 = 2.0;

/// Radii at or below this are treated as collapsed directions and their
/// ending points are left out of the reconstruction cloud.
pub const COLLAPSE_EPSILON: f64 = 1e-9;

/// Everything `segment` needs besides the volume and the predictor.
#[derive(Debug, Clone)]
pub struct SegmentationSettings {
    /// Pivot placement; lattice spacing also anchors the alpha default.
    pub pivot_strategy: PivotStrategy,
    pub pivot_seed: u64,
    /// Pivot region; `None` insets the volume box by [`ROI_MARGIN`].
    pub roi: Option<RoiBox>,
    pub grid_azimuth: usize,
    pub grid_polar: usize,
    pub channels: ChannelSpec,
    pub initial_radius: f64,
    pub policy: IterationPolicy,
    /// Monte Carlo sample count per shell-overlap edge.
    pub overlap_samples: usize,
    pub overlap_seed: u64,
    pub classification: ClassificationMethod,
    /// Face-pivot band width; `None` uses the pivot-set default.
    pub face_band: Option<f64>,
    /// Circumradius cutoff; `None` uses twice the pivot spacing.
    pub alpha: Option<f64>,
    pub kde_bandwidth: f64,
    pub kde_log_threshold: f64,
    pub thinning_slices: usize,
}

impl Default for SegmentationSettings {
    fn default() -> SegmentationSettings {
        SegmentationSettings {
            pivot_strategy: PivotStrategy::Lattice { spacing: 8.0 },
            pivot_seed: 0,
            roi: None,
            grid_azimuth: 60,
            grid_polar: 60,
            channels: ChannelSpec::default(),
            initial_radius: 6.0,
            policy: IterationPolicy::default(),
            overlap_samples: 5000,
            overlap_seed: 0,
            classification: ClassificationMethod::MinCut,
            face_band: None,
            alpha: None,
            kde_bandwidth: 1.0,
            kde_log_threshold: -14.0,
            thinning_slices: 1,
        }
    }
}

/// Every stage output of one segmentation run.
#[derive(Debug, Clone)]
pub struct SegmentationArtifacts {
    pub pivots: PivotSet,
    pub runs: Vec<ShellRun>,
    pub graph: ConsistencyGraph,
    /// Per-pivot inner flag, aligned with `pivots`.
    pub inner: Vec<bool>,
    pub warnings: Vec<String>,
    /// Ending points pooled from inner shells, collapsed directions
    /// excluded. This is what the reconstruction actually saw.
    pub cloud: PointCloud,
    /// The circumradius cutoff after resolving the `None` default.
    pub alpha: f64,
    pub mask: Mask,
}

/// The volume box inset by [`ROI_MARGIN`] on every side.
pub fn default_roi(dims: [usize; 3]) -> Result<RoiBox> {
    let roi = RoiBox {
        min: [ROI_MARGIN; 3],
        max: [
            (dims[0] as f64 - 1.0) - ROI_MARGIN,
            (dims[1] as f64 - 1.0) - ROI_MARGIN,
            (dims[2] as f64 - 1.0) - ROI_MARGIN,
        ],
    };
    roi.validate()?;
    Ok(roi)
}

/// The circumradius cutoff for the alpha shape: explicit if configured,
/// otherwise twice the pivot spacing, so kept tetrahedra can bridge
/// adjacent shell surfaces but not holes beyond the next pivot over.
pub fn resolve_alpha(alpha: Option<f64>, spacing: f64) -> f64 {
    alpha.unwrap_or(2.0 * spacing)
}

fn check_roi_in_volume(roi: &RoiBox, dims: [usize; 3]) -> Result<()> {
    roi.validate()?;
    for k in 0..3 {
        let hi = dims[k] as f64 - 1.0;
        if roi.min[k] < 0.0 || roi.max[k] > hi {
            return Err(Error::invalid(format!(
                "ROI axis {k} spans {}..{} but the volume spans 0..{hi}",
                roi.min[k], roi.max[k]
            )));
        }
    }
    Ok(())
}

/// Run the full segmentation: sample pivots, grow one shell per pivot,
/// cut the overlap graph into inner and outer pivots, pool the inner
/// ending points and reconstruct the mask.
pub fn segment(
    predictor: &dyn Predictor,
    volume: &Volume,
    settings: &SegmentationSettings,
) -> Result<SegmentationArtifacts> {
    let dims = volume.dims();
    let grid = DirectionGrid::new(settings.grid_azimuth, settings.grid_polar)?;
    let roi = match settings.roi {
        Some(r) => r,
        None => default_roi(dims)?,
    };
    check_roi_in_volume(&roi, dims)?;

    let pivots = sample_pivots(roi, settings.pivot_strategy, settings.pivot_seed)?;
    let runs = run_shells(
        predictor,
        volume,
        &pivots.pivots,
        settings.initial_radius,
        &grid,
        &settings.channels,
        &settings.policy,
    )?;

    let shells: Vec<_> = runs.iter().map(|r| r.shell.clone()).collect();
    let graph =
        build_graph(&pivots, &shells, &grid, settings.overlap_samples, settings.overlap_seed)?;
    let face = roi_face_flags(&pivots, settings.face_band);
    let cut = classify_pivots(&graph, &face, settings.classification)?;

    let mut points = Vec::new();
    for (run, keep) in runs.iter().zip(&cut.inner) {
        if !keep {
            continue;
        }
        for (r, e) in run.shell.radii().iter().zip(run.shell.ending_points(&grid)) {
            if *r > COLLAPSE_EPSILON {
                points.push(e);
            }
        }
    }
    let cloud = PointCloud::new(points)?;

    let alpha = resolve_alpha(settings.alpha, pivots.spacing);
    let params = ReconstructionParams {
        kde_bandwidth: settings.kde_bandwidth,
        kde_log_threshold: settings.kde_log_threshold,
        alpha,
        thinning_slices: settings.thinning_slices,
    };
    let mask = reconstruct(&cloud, dims, &params)?;

    Ok(SegmentationArtifacts {
        pivots,
        runs,
        graph,
        inner: cut.inner,
        warnings: cut.warnings,
        cloud,
        alpha,
        mask,
    })
}
