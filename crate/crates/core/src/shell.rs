//! Elastic shells: one radius per grid direction around a pivot.
//!
//! A shell's ending points are `pivot + r * d` over the direction grid. The
//! engine repeatedly samples the volume around those points into a
//! multi-channel image, asks a predictor how far each point is from the
//! object boundary, and moves the radii by that amount. This module holds
//! the shell state plus the pure geometry: ending points, the per-channel
//! sampling radii, the projected input image, and the radius update.

use serde::{Deserialize, Serialize};

use crate::distance_field::DistanceField;
use crate::error::{Error, Result};
use crate::sphere_grid::DirectionGrid;
use crate::tensor::Image;
use crate::volume::Volume;

#[derive(Debug, Clone, PartialEq)]
pub struct Shell {
    pivot: [f64; 3],
    radii: Vec<f64>,
    iteration: u32,
}

/// Channel layout of the projected input image.
///
/// Part A carries `la` intensity samples straddling the current radius at
/// unit spacing; part B carries `lb` samples spread over the interior.
/// With `append_directions` each part is followed by the three direction
/// components as constant channels, so the two parts occupy equal-sized
/// channel blocks that a two-group convolution can split exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ChannelSpec {
    #[serde(default = "default_la")]
    pub la: usize,
    #[serde(default = "default_lb")]
    pub lb: usize,
    #[serde(default = "default_append_directions")]
    pub append_directions: bool,
}

fn default_la() -> usize {
    5
}
fn default_lb() -> usize {
    5
}
fn default_append_directions() -> bool {
    true
}

impl Default for ChannelSpec {
    fn default() -> ChannelSpec {
        ChannelSpec { la: 5, lb: 5, append_directions: true }
    }
}

impl ChannelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.la == 0 {
            return Err(Error::invalid("channel spec needs at least one boundary channel"));
        }
        Ok(())
    }

    /// Total channels in the projected image.
    pub fn channels(&self) -> usize {
        self.la + self.lb + if self.append_directions { 6 } else { 0 }
    }
}

/// One training record: the projected input and the true response map,
/// tagged with its origin for the spool format.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionPair {
    pub pivot_index: usize,
    pub step: u32,
    pub input: Image<f32>,
    pub response: Vec<f32>,
}

impl Shell {
    /// A sphere of radius `r0` around the pivot, the iteration start state.
    pub fn uniform(pivot: [f64; 3], r0: f64, grid: &DirectionGrid) -> Result<Shell> {
        if !(r0 >= 0.0) || !r0.is_finite() {
            return Err(Error::invalid(format!("initial radius must be >= 0, got {r0}")));
        }
        if pivot.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("pivot {pivot:?} is not finite")));
        }
        Ok(Shell { pivot, radii: vec![r0; grid.len()], iteration: 0 })
    }

    /// Adopt an explicit radius map, validating it against the grid.
    pub fn from_radii(pivot: [f64; 3], radii: Vec<f64>, grid: &DirectionGrid) -> Result<Shell> {
        if radii.len() != grid.len() {
            return Err(Error::invalid(format!(
                "radius map length {} does not match grid size {}",
                radii.len(),
                grid.len()
            )));
        }
        if radii.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::invalid("radius map contains negative or non-finite entries"));
        }
        Ok(Shell { pivot, radii, iteration: 0 })
    }

    pub fn pivot(&self) -> [f64; 3] {
        self.pivot
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn iteration(&self) -> u32 {
        self.iteration
    }

    pub fn max_radius(&self) -> f64 {
        self.radii.iter().cloned().fold(0.0, f64::max)
    }

    /// True when every direction has been driven to the pivot.
    pub fn is_collapsed(&self) -> bool {
        self.radii.iter().all(|r| *r == 0.0)
    }

    /// Ending point per direction: pivot + r * d, exactly.
    pub fn ending_points(&self, grid: &DirectionGrid) -> Vec<[f64; 3]> {
        self.radii
            .iter()
            .zip(grid.dirs())
            .map(|(r, d)| {
                [self.pivot[0] + r * d[0], self.pivot[1] + r * d[1], self.pivot[2] + r * d[2]]
            })
            .collect()
    }

    /// Move every radius by its response, clamping at zero, and advance the
    /// iteration counter. Responses must match the radius map length.
    pub fn apply_response(&mut self, response: &[f64]) -> Result<()> {
        if response.len() != self.radii.len() {
            return Err(Error::invalid(format!(
                "response length {} does not match radius map length {}",
                response.len(),
                self.radii.len()
            )));
        }
        for (r, o) in self.radii.iter_mut().zip(response) {
            *r = (*r + *o).max(0.0);
        }
        self.iteration += 1;
        Ok(())
    }
}

/// Sampling radius per intensity channel.
///
/// Part A channels sit at r + lA - (LA+1)/2 for lA = 1..LA, clamped at 0,
/// bracketing the current boundary estimate at unit spacing. Part B
/// channels sit at (lB/(LB+1)) * max(r - (LA+1)/2, 0), spreading evenly
/// through the interior that part A does not reach.
pub fn sample_radii_for_channels(shell: &Shell, spec: &ChannelSpec) -> Vec<Vec<f64>> {
    let half = (spec.la as f64 + 1.0) / 2.0;
    let mut out = Vec::with_capacity(spec.la + spec.lb);
    for la in 1..=spec.la {
        let offset = la as f64 - half;
        out.push(shell.radii.iter().map(|r| (r + offset).max(0.0)).collect());
    }
    for lb in 1..=spec.lb {
        let frac = lb as f64 / (spec.lb as f64 + 1.0);
        out.push(shell.radii.iter().map(|r| frac * (r - half).max(0.0)).collect());
    }
    out
}

/// Project the volume onto the shell: trilinear intensity samples at every
/// channel radius, plus the direction components as constant channels when
/// the channel spec appends them. Channel order is part A intensities, part A
/// directions, part B intensities, part B directions.
pub fn project(
    vol: &Volume,
    shell: &Shell,
    grid: &DirectionGrid,
    spec: &ChannelSpec,
) -> Result<Image<f32>> {
    spec.validate()?;
    if shell.radii.len() != grid.len() {
        return Err(Error::invalid("shell radius map does not match the direction grid"));
    }
    let (ma, mp) = (grid.ma(), grid.mp());
    let mut image = Image::zeros(spec.channels(), ma, mp);
    let radii = sample_radii_for_channels(shell, spec);
    let mut c = 0;
    let write_intensity_block = |image: &mut Image<f32>, block: &[Vec<f64>], c: &mut usize| {
        for rs in block {
            for m1 in 0..ma {
                let row = image.row_mut(*c, m1);
                for m2 in 0..mp {
                    let d = grid.dir(grid.index(m1, m2));
                    let r = rs[grid.index(m1, m2)];
                    let p = [
                        shell.pivot[0] + r * d[0],
                        shell.pivot[1] + r * d[1],
                        shell.pivot[2] + r * d[2],
                    ];
                    row[m2] = vol.sample_trilinear(p) as f32;
                }
            }
            *c += 1;
        }
    };
    let write_direction_block = |image: &mut Image<f32>, c: &mut usize| {
        for axis in 0..3 {
            for m1 in 0..ma {
                let row = image.row_mut(*c, m1);
                for m2 in 0..mp {
                    row[m2] = grid.dir(grid.index(m1, m2))[axis] as f32;
                }
            }
            *c += 1;
        }
    };
    write_intensity_block(&mut image, &radii[..spec.la], &mut c);
    if spec.append_directions {
        write_direction_block(&mut image, &mut c);
    }
    write_intensity_block(&mut image, &radii[spec.la..], &mut c);
    if spec.append_directions {
        write_direction_block(&mut image, &mut c);
    }
    debug_assert_eq!(c, spec.channels());
    Ok(image)
}

/// The true response map: the truncated signed boundary distance sampled
/// at every ending point. Values stay within the field's truncation radius
/// because trilinear blending cannot exceed the clamped inputs.
pub fn ground_truth_response(
    field: &DistanceField,
    shell: &Shell,
    grid: &DirectionGrid,
) -> Result<Vec<f64>> {
    if shell.radii.len() != grid.len() {
        return Err(Error::invalid("shell radius map does not match the direction grid"));
    }
    Ok(shell.ending_points(grid).iter().map(|e| field.sample(*e)).collect())
}
