//! The fixed azimuth x polar direction grid shared by every shell.
//!
//! Azimuth angles are uniform, alpha(m1) = 2*pi*m1/Ma for m1 in 0..Ma.
//! Polar angles are chosen so direction z components are uniform in
//! latitude-cosine space: phi(m2) = arccos(2*m2/(Mp+1) - 1) - pi/2 for
//! m2 in 1..=Mp, which concentrates rows where a sphere has area. The
//! unit direction for a cell is
//!
//!   d = (cos(alpha) cos(phi), sin(alpha) cos(phi), sin(phi))
//!
//! and satisfies sin(phi(m2)) = 1 - 2*m2/(Mp+1), so the polar coordinate
//! is linear in z. That linearity is what [`DirectionGrid::fractional_coords`]
//! relies on when mapping arbitrary vectors back onto the grid.
//!
//! Storage order is azimuth-major: cell (m1, m2) lives at m1 * Mp + m2 - 1.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct DirectionGrid {
    ma: usize,
    mp: usize,
    dirs: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

impl DirectionGrid {
    pub fn new(ma: usize, mp: usize) -> Result<DirectionGrid> {
        if ma == 0 || mp == 0 {
            return Err(Error::invalid(format!("direction grid needs ma, mp >= 1, got {ma}x{mp}")));
        }
        let mut dirs = Vec::with_capacity(ma * mp);
        for m1 in 0..ma {
            let alpha = 2.0 * PI * m1 as f64 / ma as f64;
            let (sin_a, cos_a) = alpha.sin_cos();
            for m2 in 1..=mp {
                let phi = (2.0 * m2 as f64 / (mp as f64 + 1.0) - 1.0).acos() - PI / 2.0;
                let (sin_p, cos_p) = phi.sin_cos();
                dirs.push([cos_a * cos_p, sin_a * cos_p, sin_p]);
            }
        }
        // Solid angle per cell: the azimuth wedge times the z-band width.
        // Band edges sit at midpoints between consecutive row z values, and
        // the outermost bands absorb the polar caps up to z = +-1.
        let row_z = |m2: usize| 1.0 - 2.0 * m2 as f64 / (mp as f64 + 1.0);
        let upper = |m2: usize| if m2 == 1 { 1.0 } else { 0.5 * (row_z(m2 - 1) + row_z(m2)) };
        let lower = |m2: usize| if m2 == mp { -1.0 } else { 0.5 * (row_z(m2) + row_z(m2 + 1)) };
        let wedge = 2.0 * PI / ma as f64;
        let mut weights = Vec::with_capacity(ma * mp);
        for _m1 in 0..ma {
            for m2 in 1..=mp {
                weights.push(wedge * (upper(m2) - lower(m2)));
            }
        }
        Ok(DirectionGrid { ma, mp, dirs, weights })
    }

    pub fn ma(&self) -> usize {
        self.ma
    }

    pub fn mp(&self) -> usize {
        self.mp
    }

    /// Total number of directions, Ma * Mp.
    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Cell index for azimuth row m1 in 0..Ma and polar column m2 in 0..Mp
    /// (zero-based here; the constructor formula's m2 is this plus one).
    #[inline]
    pub fn index(&self, m1: usize, m2: usize) -> usize {
        m1 * self.mp + m2
    }

    #[inline]
    pub fn dir(&self, i: usize) -> [f64; 3] {
        self.dirs[i]
    }

    pub fn dirs(&self) -> &[[f64; 3]] {
        &self.dirs
    }

    /// Solid-angle weights; they sum to the full sphere, 4*pi.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Map a nonzero vector to fractional grid coordinates.
    ///
    /// Returns (azimuth coordinate in [0, Ma), polar coordinate), both
    /// zero-based cell coordinates where integer values mean "exactly on a
    /// grid row/column". The azimuth coordinate wraps; the polar coordinate
    /// ranges over (-1, Mp) and must be clamped by the caller when used for
    /// interpolation, since the polar caps lie outside the outermost rows.
    pub fn fractional_coords(&self, v: [f64; 3]) -> (f64, f64) {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let z = if norm > 0.0 { (v[2] / norm).clamp(-1.0, 1.0) } else { 0.0 };
        let mut alpha = v[1].atan2(v[0]);
        if alpha < 0.0 {
            alpha += 2.0 * PI;
        }
        let mut u = alpha * self.ma as f64 / (2.0 * PI);
        if u >= self.ma as f64 {
            u -= self.ma as f64;
        }
        // Row z values are linear in the one-based row index.
        let t_one_based = (1.0 - z) * (self.mp as f64 + 1.0) / 2.0;
        (u, t_one_based - 1.0)
    }
}
