//! Synthetic phantom volumes with analytic ground truth.
//!
//! Phantoms stand in for scan data: a simple solid (sphere, ellipsoid,
//! dumbbell of two overlapping spheres, or torus) rendered as an intensity
//! volume with a smoothed boundary and Gaussian noise, paired with the
//! exact inside/outside mask. The analytic signed distance doubles as an
//! oracle for distance-field and shell tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::standard_normal;
use crate::volume::{Mask, Volume};

/// Shapes must keep at least this many voxels between their bounding box
/// and the volume faces, so truncated distance fields never interact with
/// the domain edge.
pub const SHAPE_MARGIN: f64 = 2.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum ShapeSpec {
    #[serde(rename_all = "camelCase")]
    Sphere { center: [f64; 3], radius: f64 },
    #[serde(rename_all = "camelCase")]
    Ellipsoid { center: [f64; 3], semi_axes: [f64; 3] },
    /// Two overlapping spheres; disjoint spheres are rejected.
    #[serde(rename_all = "camelCase")]
    Dumbbell { centers: [[f64; 3]; 2], radii: [f64; 2] },
    /// Ring lies in the xy plane around `center`.
    #[serde(rename_all = "camelCase")]
    Torus { center: [f64; 3], ring_radius: f64, tube_radius: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub shape: ShapeSpec,
    #[serde(default = "default_inside_mean")]
    pub inside_mean: f64,
    #[serde(default = "default_outside_mean")]
    pub outside_mean: f64,
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    /// Width in voxels of the linear intensity ramp across the boundary.
    #[serde(default = "default_smoothing_width")]
    pub smoothing_width: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_inside_mean() -> f64 {
    100.0
}
fn default_outside_mean() -> f64 {
    -100.0
}
fn default_noise_sigma() -> f64 {
    20.0
}
fn default_smoothing_width() -> f64 {
    1.5
}

impl ShapeSpec {
    /// Axis-aligned bounding box of the solid.
    fn bbox(&self) -> ([f64; 3], [f64; 3]) {
        match self {
            ShapeSpec::Sphere { center, radius } => {
                (sub(*center, [*radius; 3]), add(*center, [*radius; 3]))
            }
            ShapeSpec::Ellipsoid { center, semi_axes } => {
                (sub(*center, *semi_axes), add(*center, *semi_axes))
            }
            ShapeSpec::Dumbbell { centers, radii } => {
                let mut lo = [f64::INFINITY; 3];
                let mut hi = [f64::NEG_INFINITY; 3];
                for (c, r) in centers.iter().zip(radii) {
                    for a in 0..3 {
                        lo[a] = lo[a].min(c[a] - r);
                        hi[a] = hi[a].max(c[a] + r);
                    }
                }
                (lo, hi)
            }
            ShapeSpec::Torus { center, ring_radius, tube_radius } => {
                let r = ring_radius + tube_radius;
                (
                    sub(*center, [r, r, *tube_radius]),
                    add(*center, [r, r, *tube_radius]),
                )
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{what} must be positive and finite, got {v}")))
            }
        };
        match self {
            ShapeSpec::Sphere { radius, .. } => positive(*radius, "sphere radius"),
            ShapeSpec::Ellipsoid { semi_axes, .. } => {
                for a in semi_axes {
                    positive(*a, "ellipsoid semi-axis")?;
                }
                Ok(())
            }
            ShapeSpec::Dumbbell { centers, radii } => {
                positive(radii[0], "dumbbell radius")?;
                positive(radii[1], "dumbbell radius")?;
                let d = dist(centers[0], centers[1]);
                if d >= radii[0] + radii[1] {
                    return Err(Error::invalid(format!(
                        "dumbbell spheres are disjoint: center distance {d} >= {} + {}",
                        radii[0], radii[1]
                    )));
                }
                Ok(())
            }
            ShapeSpec::Torus { ring_radius, tube_radius, .. } => {
                positive(*ring_radius, "torus ring radius")?;
                positive(*tube_radius, "torus tube radius")?;
                if tube_radius >= ring_radius {
                    return Err(Error::invalid(
                        "torus tube radius must be smaller than its ring radius",
                    ));
                }
                Ok(())
            }
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("phantom dims {:?} contain zero", self.dims)));
        }
        self.shape.validate()?;
        if !(self.smoothing_width >= 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("smoothing width and noise sigma must be >= 0"));
        }
        let (lo, hi) = self.shape.bbox();
        for a in 0..3 {
            let max = (self.dims[a] - 1) as f64;
            if lo[a] < SHAPE_MARGIN || hi[a] > max - SHAPE_MARGIN {
                return Err(Error::invalid(format!(
                    "shape bbox [{:?}, {:?}] leaves less than {SHAPE_MARGIN} voxels of margin in {:?}",
                    lo, hi, self.dims
                )));
            }
        }
        Ok(())
    }
}

/// Signed distance to the shape surface, positive inside.
///
/// Exact for sphere, dumbbell (max over the two spheres; the union's true
/// distance inside the overlap lens is underestimated only where the lens
/// surfaces meet) and torus. The ellipsoid value is the scaled-space
/// approximation (1 - k) * min(semi-axes) with k the normalized radius;
/// its sign is exact, its magnitude is not, so magnitude-sensitive tests
/// use the mask-derived field instead.
pub fn analytic_signed_distance(shape: &ShapeSpec, p: [f64; 3]) -> f64 {
    match shape {
        ShapeSpec::Sphere { center, radius } => radius - dist(p, *center),
        ShapeSpec::Ellipsoid { center, semi_axes } => {
            let mut k2 = 0.0;
            for a in 0..3 {
                let t = (p[a] - center[a]) / semi_axes[a];
                k2 += t * t;
            }
            let min_axis = semi_axes.iter().cloned().fold(f64::INFINITY, f64::min);
            (1.0 - k2.sqrt()) * min_axis
        }
        ShapeSpec::Dumbbell { centers, radii } => {
            let d0 = radii[0] - dist(p, centers[0]);
            let d1 = radii[1] - dist(p, centers[1]);
            d0.max(d1)
        }
        ShapeSpec::Torus { center, ring_radius, tube_radius } => {
            let dx = p[0] - center[0];
            let dy = p[1] - center[1];
            let dz = p[2] - center[2];
            let ring = (dx * dx + dy * dy).sqrt() - ring_radius;
            tube_radius - (ring * ring + dz * dz).sqrt()
        }
    }
}

/// Render the phantom: intensity volume plus exact inside mask.
///
/// The volume blends outsideMean to insideMean linearly over
/// [-smoothing_width, +smoothing_width] of signed distance, then adds
/// seeded Gaussian noise. Voxels are visited in x-fastest order with a
/// single RNG stream, so output is deterministic for a given seed.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Volume, Mask)> {
    spec.validate()?;
    let dims = spec.dims;
    let n = dims[0] * dims[1] * dims[2];
    let mut vol = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let w = spec.smoothing_width;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let d = analytic_signed_distance(&spec.shape, [x as f64, y as f64, z as f64]);
                mask.push((d >= 0.0) as u8);
                let s = if w > 0.0 {
                    ((d / w + 1.0) / 2.0).clamp(0.0, 1.0)
                } else {
                    (d >= 0.0) as u8 as f64
                };
                let mut v = spec.outside_mean + (spec.inside_mean - spec.outside_mean) * s;
                if spec.noise_sigma > 0.0 {
                    v += spec.noise_sigma * standard_normal(&mut rng);
                }
                vol.push(v as f32);
            }
        }
    }
    Ok((Volume::from_vec(dims, vol)?, Mask::from_vec(dims, mask)?))
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = sub(a, b);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}
