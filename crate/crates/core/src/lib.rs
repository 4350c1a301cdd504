//! Volumetric segmentation by elastic shells.
//!
//! The pipeline turns a scalar volume plus a training mask into a learned
//! boundary predictor, then segments unseen volumes by growing a spherical
//! shell around each of many pivot points until the shell locks onto the
//! object boundary. Converged shell surfaces are pooled into a point cloud
//! and meshed back into a voxel mask.
//!
//! Modules follow the data flow:
//!
//! * [`volume`] / [`io`]: dense voxel containers and their on-disk format.
//! * [`distance_field`]: truncated signed distance to a mask boundary, the
//!   training signal and the oracle predictor.
//! * [`sphere_grid`]: the fixed azimuth x polar direction grid every shell
//!   shares.
//! * [`shell`] / [`engine`]: per-pivot radius maps, projection into sampled
//!   image channels, and the iterative radius update loop.
//! * [`predictor`]: the boundary-distance regressor, both the ground-truth
//!   oracle and a small convolutional network trained from scratch.
//! * [`pivot_graph`]: pivot sampling, shell overlap estimation and the
//!   min-cut classification into inner and outer pivots.
//! * [`pipeline`]: the stages above composed into one segmentation call.
//! * [`reconstruction`]: density filtering, Delaunay meshing, alpha shape
//!   extraction and voxelization of the pooled shell points.
//! * [`phantom`]: synthetic test volumes with analytic ground truth.

pub mod distance_field;
pub mod engine;
pub mod error;
pub mod io;
pub mod kdtree;
pub mod maxflow;
pub mod phantom;
pub mod pipeline;
pub mod pivot_graph;
pub mod predictor;
pub mod reconstruction;
pub mod rng;
pub mod shell;
pub mod sphere_grid;
pub mod tensor;
pub mod volume;

pub use error::{Error, Result};
