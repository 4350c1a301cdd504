//! Response predictors: the contract the shell iteration engine calls,
//! plus its two implementations.
//!
//! [`OraclePredictor`] reads the truncated signed distance field directly
//! and is the ground-truth reference: runs driven by it exercise the full
//! pipeline without any learned weights. [`ConvPredictor`] wraps the
//! convolutional network and must be a drop-in replacement, the engine
//! does not branch on which one it holds.

pub mod conv;
pub mod model;
pub mod train;

use std::path::Path;

use crate::distance_field::DistanceField;
use crate::error::{Error, Result};
use crate::shell::{ground_truth_response, Shell};
use crate::sphere_grid::DirectionGrid;
use crate::tensor::Image;

pub use model::{ConvRegressor, Gradients, ModelConfig, ParamSpec, Tape};
pub use train::{finite_difference_check, mae_loss_and_grad, train, GradCheck, TrainConfig, TrainReport};

/// Maps a shell state to a per-direction radius correction in
/// [-tau, tau], one value per grid direction in grid index order.
///
/// Implementations must be pure: equal arguments give equal results, and
/// calls may run concurrently across shells.
pub trait Predictor: Sync {
    /// Whether [`Predictor::predict`] consumes the projected input image.
    /// The engine skips building the projection when it is not needed,
    /// which is what makes oracle-driven runs cheap.
    fn requires_input(&self) -> bool {
        true
    }

    fn predict(
        &self,
        input: Option<&Image<f32>>,
        shell: &Shell,
        grid: &DirectionGrid,
    ) -> Result<Vec<f64>>;
}

/// Ground-truth predictor backed by a truncated signed distance field.
#[derive(Debug, Clone, Copy)]
pub struct OraclePredictor<'a> {
    field: &'a DistanceField,
}

impl<'a> OraclePredictor<'a> {
    pub fn new(field: &'a DistanceField) -> OraclePredictor<'a> {
        OraclePredictor { field }
    }
}

impl Predictor for OraclePredictor<'_> {
    fn requires_input(&self) -> bool {
        false
    }

    fn predict(
        &self,
        _input: Option<&Image<f32>>,
        shell: &Shell,
        grid: &DirectionGrid,
    ) -> Result<Vec<f64>> {
        ground_truth_response(self.field, shell, grid)
    }
}

/// Learned predictor wrapping the convolutional regressor.
#[derive(Debug, Clone)]
pub struct ConvPredictor {
    model: ConvRegressor<f32>,
}

impl ConvPredictor {
    pub fn new(model: ConvRegressor<f32>) -> ConvPredictor {
        ConvPredictor { model }
    }

    pub fn from_checkpoint(path: &Path) -> Result<ConvPredictor> {
        Ok(ConvPredictor { model: ConvRegressor::<f32>::load(path)? })
    }

    pub fn model(&self) -> &ConvRegressor<f32> {
        &self.model
    }
}

impl Predictor for ConvPredictor {
    fn predict(
        &self,
        input: Option<&Image<f32>>,
        shell: &Shell,
        grid: &DirectionGrid,
    ) -> Result<Vec<f64>> {
        let input = input
            .ok_or_else(|| Error::invalid("learned predictor called without a projected input"))?;
        if input.spatial() != (grid.ma(), grid.mp()) {
            return Err(Error::invalid(format!(
                "projected input is {}x{}, direction grid is {}x{}",
                input.height(),
                input.width(),
                grid.ma(),
                grid.mp()
            )));
        }
        let _ = shell;
        let out = self.model.forward(input)?;
        Ok(out.data().iter().map(|&v| v as f64).collect())
    }
}
