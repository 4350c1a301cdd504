//! Truncated signed distance to a mask boundary, sampled per voxel.
//!
//! The boundary of a mask is its set of foreground voxels that touch
//! background across a face. Each voxel stores the Euclidean distance to
//! the nearest boundary voxel, clamped to a truncation radius `tau`,
//! positive inside the mask, negative outside, zero on boundary voxels.
//!
//! Construction is exact. A breadth-first prefilter marks every voxel
//! within Chebyshev radius ceil(tau) of the boundary; only those get a
//! nearest-neighbor query, everything else is at least `tau` away in
//! Euclidean metric too and stores the clamp value directly.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kdtree::KdTree3;
use crate::volume::{Mask, Volume};

#[derive(Debug, Clone)]
pub struct DistanceField {
    values: Volume,
    tau: f64,
}

impl DistanceField {
    /// Adopt precomputed values, validating the truncation invariant:
    /// all values finite and within [-tau, tau].
    pub fn from_values(values: Volume, tau: f64) -> Result<DistanceField> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::invalid(format!("tau must be positive and finite, got {tau}")));
        }
        for (i, v) in values.data().iter().enumerate() {
            if !v.is_finite() || (v.abs() as f64) > tau {
                return Err(Error::format(format!(
                    "field value {v} at linear index {i} outside [-{tau}, {tau}]"
                )));
            }
        }
        Ok(DistanceField { values, tau })
    }

    pub fn values(&self) -> &Volume {
        &self.values
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dims(&self) -> [usize; 3] {
        self.values.dims()
    }

    /// Trilinear sample at a voxel-space position; out-of-domain positions
    /// clamp onto the face, so the field extends flat past the volume.
    pub fn sample(&self, p: [f64; 3]) -> f64 {
        self.values.sample_trilinear(p)
    }
}

/// Voxels within Chebyshev distance ceil(tau) of the mask boundary, as a
/// linear-index bitmap. Everything outside this set has Euclidean distance
/// >= tau from every boundary voxel, so the builder may skip its query.
pub fn near_set(mask: &Mask, tau: f64) -> Vec<bool> {
    let dims = mask.dims();
    let n = dims[0] * dims[1] * dims[2];
    let mut near = vec![false; n];
    let mut frontier: Vec<usize> = mask
        .boundary_voxels()
        .iter()
        .map(|p| mask.index(p[0] as usize, p[1] as usize, p[2] as usize))
        .collect();
    for &i in &frontier {
        near[i] = true;
    }
    let rings = tau.ceil() as usize;
    for _ in 0..rings {
        let mut next = Vec::new();
        for &i in &frontier {
            let x = (i % dims[0]) as i64;
            let y = ((i / dims[0]) % dims[1]) as i64;
            let z = (i / (dims[0] * dims[1])) as i64;
            for dz in -1..=1i64 {
                for dy in -1..=1i64 {
                    for dx in -1..=1i64 {
                        let (nx, ny, nz) = (x + dx, y + dy, z + dz);
                        if nx < 0
                            || ny < 0
                            || nz < 0
                            || nx >= dims[0] as i64
                            || ny >= dims[1] as i64
                            || nz >= dims[2] as i64
                        {
                            continue;
                        }
                        let j = mask.index(nx as usize, ny as usize, nz as usize);
                        if !near[j] {
                            near[j] = true;
                            next.push(j);
                        }
                    }
                }
            }
        }
        frontier = next;
    }
    near
}

/// Build the truncated signed distance field of a mask.
///
/// Fails on non-positive `tau` and on masks that are entirely foreground
/// or entirely background, where inside/outside distances lose meaning.
pub fn build_distance_field(mask: &Mask, tau: f64) -> Result<DistanceField> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!("tau must be positive and finite, got {tau}")));
    }
    let dims = mask.dims();
    let n = dims[0] * dims[1] * dims[2];
    let fg = mask.stats().count;
    if fg == 0 || fg == n {
        return Err(Error::degenerate(
            "mask is entirely foreground or entirely background, no inside/outside boundary",
        ));
    }
    let boundary: Vec<[f64; 3]> = mask
        .boundary_voxels()
        .into_iter()
        .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
        .collect();
    let near = near_set(mask, tau);
    let tree = KdTree3::build(boundary);

    let plane = dims[0] * dims[1];
    let mut data = vec![0f32; n];
    data.par_chunks_mut(plane).enumerate().for_each(|(z, slab)| {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let i = x + dims[0] * y;
                let gi = i + plane * z;
                let sign = if mask.get(x, y, z) { 1.0 } else { -1.0 };
                let d = if near[gi] {
                    let (_, d2) = tree
                        .nearest([x as f64, y as f64, z as f64])
                        .expect("boundary is non-empty");
                    d2.sqrt().min(tau)
                } else {
                    tau
                };
                slab[i] = (sign * d) as f32;
            }
        }
    });
    let values = Volume::from_vec(dims, data)?;
    Ok(DistanceField { values, tau })
}
