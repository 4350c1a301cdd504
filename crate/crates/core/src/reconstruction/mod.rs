//! From ending points to a segmentation mask.
//!
//! Converged shell surfaces leave behind a cloud of boundary samples.
//! A kernel density filter snaps the cloud onto the integer grid and
//! drops sparse strays, Delaunay plus an alpha shape mesh the survivors
//! without bridging across the object's hollow interior, and the mesh is
//! rasterized, hole-filled, thinned and refilled into the final mask.

use std::collections::{BTreeSet, HashMap, VecDeque};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::Mask;

pub mod delaunay;

pub use delaunay::{delaunay, TetMesh};

use delaunay::orient3d;

/// Boundary samples pooled over all inner pivots.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<PointCloud> {
        if let Some(p) = points.iter().find(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::invalid(format!(
                "point cloud contains a non-finite coordinate: {p:?}"
            )));
        }
        Ok(PointCloud { points })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Stage parameters for [`reconstruct`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionParams {
    pub kde_bandwidth: f64,
    pub kde_log_threshold: f64,
    /// Circumradius cutoff for the alpha shape; scale it with the pivot
    /// spacing (twice the spacing works well).
    pub alpha: f64,
    pub thinning_slices: usize,
}

impl ReconstructionParams {
    /// Standard filter settings around a scene-dependent alpha.
    pub fn with_alpha(alpha: f64) -> ReconstructionParams {
        ReconstructionParams {
            kde_bandwidth: 1.0,
            kde_log_threshold: -14.0,
            alpha,
            thinning_slices: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kde_bandwidth > 0.0) || !self.kde_bandwidth.is_finite() {
            return Err(Error::invalid(format!(
                "KDE bandwidth {} must be positive and finite",
                self.kde_bandwidth
            )));
        }
        if !self.kde_log_threshold.is_finite() {
            return Err(Error::invalid("KDE log threshold must be finite"));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid(format!(
                "alpha {} must be positive and finite",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Peak value of the radial Epanechnikov kernel in 3D.
const KERNEL_PEAK: f64 = 15.0 / (8.0 * std::f64::consts::PI);

/// Keep the integer grid coordinates whose kernel density estimate has a
/// natural log of at least `log_threshold`.
///
/// Density at coordinate g is (1/n) sum_i K((g-p_i)/h)/h^3 with the
/// radial Epanechnikov kernel K(u) = 15/(8 pi) (1 - u^2) on u <= 1. Only
/// coordinates within one bandwidth of some point can score above zero,
/// so those are the only candidates evaluated.
pub fn kde_filter(cloud: &PointCloud, bandwidth: f64, log_threshold: f64) -> Result<PointCloud> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::invalid(format!(
            "KDE bandwidth {bandwidth} must be positive and finite"
        )));
    }
    if !log_threshold.is_finite() {
        return Err(Error::invalid("KDE log threshold must be finite"));
    }
    if cloud.is_empty() {
        return PointCloud::new(Vec::new());
    }
    let h = bandwidth;
    let min_density = log_threshold.exp();
    let cell = h.ceil().max(1.0) as i64;
    let bin_of = |p: &[f64; 3]| [0, 1, 2].map(|k| (p[k] / cell as f64).floor() as i64);
    let mut bins: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        bins.entry(bin_of(p)).or_default().push(i);
    }
    let mut candidates: BTreeSet<[i64; 3]> = BTreeSet::new();
    for p in &cloud.points {
        let lo = [0, 1, 2].map(|k| (p[k] - h).ceil() as i64);
        let hi = [0, 1, 2].map(|k| (p[k] + h).floor() as i64);
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    candidates.insert([x, y, z]);
                }
            }
        }
    }
    let candidates: Vec<[i64; 3]> = candidates.into_iter().collect();
    let n = cloud.len() as f64;
    let scale = KERNEL_PEAK / (n * h * h * h);
    let kept: Vec<[f64; 3]> = candidates
        .par_iter()
        .filter_map(|&g| {
            let gf = g.map(|c| c as f64);
            let lo = [0, 1, 2].map(|k| ((gf[k] - h) / cell as f64).floor() as i64);
            let hi = [0, 1, 2].map(|k| ((gf[k] + h) / cell as f64).floor() as i64);
            let mut acc = 0.0;
            for bx in lo[0]..=hi[0] {
                for by in lo[1]..=hi[1] {
                    for bz in lo[2]..=hi[2] {
                        let Some(ids) = bins.get(&[bx, by, bz]) else { continue };
                        for &i in ids {
                            let p = cloud.points[i];
                            let d2 = (0..3).map(|k| (gf[k] - p[k]).powi(2)).sum::<f64>();
                            let u2 = d2 / (h * h);
                            if u2 <= 1.0 {
                                acc += 1.0 - u2;
                            }
                        }
                    }
                }
            }
            (acc * scale >= min_density).then_some(gf)
        })
        .collect();
    PointCloud::new(kept)
}

/// Keep only the tetrahedra whose circumradius is at most alpha.
pub fn alpha_shape(mesh: &TetMesh, alpha: f64) -> Result<TetMesh> {
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("alpha {alpha} must be positive")));
    }
    let mut tets = Vec::new();
    let mut circumradii = Vec::new();
    for (tet, &r) in mesh.tets.iter().zip(&mesh.circumradii) {
        if r <= alpha {
            tets.push(*tet);
            circumradii.push(r);
        }
    }
    Ok(TetMesh { vertices: mesh.vertices.clone(), tets, circumradii })
}

/// Inclusive point-in-tetrahedron test for a positively oriented tet.
fn point_in_tet(a: [f64; 3], b: [f64; 3], c: [f64; 3], d: [f64; 3], p: [f64; 3]) -> bool {
    const TOL: f64 = -1e-9;
    orient3d(p, b, c, d) >= TOL
        && orient3d(a, p, c, d) >= TOL
        && orient3d(a, b, p, d) >= TOL
        && orient3d(a, b, c, p) >= TOL
}

/// Set every voxel whose center lies inside some tetrahedron.
fn rasterize(mesh: &TetMesh, dims: [usize; 3]) -> Result<Mask> {
    let mask = Mask::zeros(dims)?;
    if mesh.tets.is_empty() {
        return Ok(mask);
    }
    for tet in &mesh.tets {
        for &v in tet {
            let p = mesh.vertices[v];
            for k in 0..3 {
                if p[k] < 0.0 || p[k] > (dims[k] - 1) as f64 {
                    return Err(Error::invalid(format!(
                        "mesh vertex {p:?} lies outside the {dims:?} volume"
                    )));
                }
            }
        }
    }
    // Bucket tets by the z planes they touch, then rasterize planes
    // independently.
    let mut by_plane: Vec<Vec<usize>> = vec![Vec::new(); dims[2]];
    let corners = |t: &[usize; 4]| t.map(|v| mesh.vertices[v]);
    for (i, tet) in mesh.tets.iter().enumerate() {
        let zs = corners(tet).map(|p| p[2]);
        let z0 = zs.iter().cloned().fold(f64::INFINITY, f64::min).ceil() as usize;
        let z1 = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max).floor() as usize;
        for plane in by_plane.iter_mut().take(z1 + 1).skip(z0) {
            plane.push(i);
        }
    }
    let planes: Vec<Vec<u8>> = (0..dims[2])
        .into_par_iter()
        .map(|z| {
            let mut plane = vec![0u8; dims[0] * dims[1]];
            for &t in &by_plane[z] {
                let [a, b, c, d] = corners(&mesh.tets[t]);
                let bounds = |k: usize| {
                    let vals = [a[k], b[k], c[k], d[k]];
                    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min).ceil() as usize;
                    let hi =
                        vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max).floor() as usize;
                    (lo, hi)
                };
                let (x0, x1) = bounds(0);
                let (y0, y1) = bounds(1);
                for y in y0..=y1.min(dims[1] - 1) {
                    for x in x0..=x1.min(dims[0] - 1) {
                        let at = y * dims[0] + x;
                        if plane[at] == 0
                            && point_in_tet(a, b, c, d, [x as f64, y as f64, z as f64])
                        {
                            plane[at] = 1;
                        }
                    }
                }
            }
            plane
        })
        .collect();
    Mask::from_vec(dims, planes.concat())
}

/// Set every voxel that a 6-connected background walk from the volume
/// faces cannot reach.
fn fill_cavities(mask: &Mask) -> Mask {
    let dims = mask.dims();
    let idx = |x: usize, y: usize, z: usize| (z * dims[1] + y) * dims[0] + x;
    let mut reached = vec![false; dims[0] * dims[1] * dims[2]];
    let mut queue = VecDeque::new();
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let on_face = x == 0
                    || y == 0
                    || z == 0
                    || x == dims[0] - 1
                    || y == dims[1] - 1
                    || z == dims[2] - 1;
                if on_face && !mask.get(x, y, z) && !reached[idx(x, y, z)] {
                    reached[idx(x, y, z)] = true;
                    queue.push_back([x, y, z]);
                }
            }
        }
    }
    while let Some([x, y, z]) = queue.pop_front() {
        let mut visit = |x: usize, y: usize, z: usize| {
            if !mask.get(x, y, z) && !reached[idx(x, y, z)] {
                reached[idx(x, y, z)] = true;
                queue.push_back([x, y, z]);
            }
        };
        if x > 0 {
            visit(x - 1, y, z);
        }
        if x + 1 < dims[0] {
            visit(x + 1, y, z);
        }
        if y > 0 {
            visit(x, y - 1, z);
        }
        if y + 1 < dims[1] {
            visit(x, y + 1, z);
        }
        if z > 0 {
            visit(x, y, z - 1);
        }
        if z + 1 < dims[2] {
            visit(x, y, z + 1);
        }
    }
    let mut out = Mask::zeros(dims).expect("dims already validated");
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                out.set(x, y, z, mask.get(x, y, z) || !reached[idx(x, y, z)]);
            }
        }
    }
    out
}

/// Rasterize the kept tetrahedra and close internal cavities.
pub fn voxelize_and_fill(mesh: &TetMesh, dims: [usize; 3]) -> Result<Mask> {
    Ok(fill_cavities(&rasterize(mesh, dims)?))
}

/// Erode the solid by `slices` voxels (6-neighborhood, volume faces act
/// as background), then refill any cavities the erosion exposed.
pub fn thin_and_finalize(mask: &Mask, slices: usize) -> Mask {
    let dims = mask.dims();
    let mut current = mask.clone();
    for _ in 0..slices {
        let mut next = Mask::zeros(dims).expect("dims already validated");
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let (xi, yi, zi) = (x as i64, y as i64, z as i64);
                    let keep = current.get(x, y, z)
                        && current.get_i64(xi - 1, yi, zi)
                        && current.get_i64(xi + 1, yi, zi)
                        && current.get_i64(xi, yi - 1, zi)
                        && current.get_i64(xi, yi + 1, zi)
                        && current.get_i64(xi, yi, zi - 1)
                        && current.get_i64(xi, yi, zi + 1);
                    next.set(x, y, z, keep);
                }
            }
        }
        current = next;
    }
    fill_cavities(&current)
}

/// Full reconstruction: density filter, Delaunay, alpha shape,
/// voxelization with hole filling, thinning with a final refill. An
/// empty cloud yields an empty mask; any stage failure names the stage.
pub fn reconstruct(
    cloud: &PointCloud,
    dims: [usize; 3],
    params: &ReconstructionParams,
) -> Result<Mask> {
    params.validate()?;
    if cloud.is_empty() {
        return Mask::zeros(dims);
    }
    let survivors = kde_filter(cloud, params.kde_bandwidth, params.kde_log_threshold)
        .map_err(|e| e.in_stage("density filter"))?;
    // Filter candidates that fell outside the target volume; they cannot
    // contribute voxels.
    let in_bounds: Vec<[f64; 3]> = survivors
        .points()
        .iter()
        .copied()
        .filter(|p| (0..3).all(|k| p[k] >= 0.0 && p[k] <= (dims[k] - 1) as f64))
        .collect();
    let survivors = PointCloud::new(in_bounds).map_err(|e| e.in_stage("density filter"))?;
    let mesh = delaunay(&survivors).map_err(|e| e.in_stage("triangulation"))?;
    let mesh = alpha_shape(&mesh, params.alpha).map_err(|e| e.in_stage("alpha shape"))?;
    let solid = voxelize_and_fill(&mesh, dims).map_err(|e| e.in_stage("voxelization"))?;
    Ok(thin_and_finalize(&solid, params.thinning_slices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(points: Vec<[f64; 3]>) -> PointCloud {
        PointCloud::new(points).unwrap()
    }

    fn ball_mask(dims: [usize; 3], center: [f64; 3], radius: f64) -> Mask {
        let mut mask = Mask::zeros(dims).unwrap();
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let d2 = (x as f64 - center[0]).powi(2)
                        + (y as f64 - center[1]).powi(2)
                        + (z as f64 - center[2]).powi(2);
                    mask.set(x, y, z, d2.sqrt() <= radius);
                }
            }
        }
        mask
    }

    #[test]
    fn non_finite_points_rejected() {
        assert!(PointCloud::new(vec![[0.0, f64::NAN, 0.0]]).is_err());
        assert!(PointCloud::new(vec![[0.0, 1.0, f64::INFINITY]]).is_err());
    }

    #[test]
    fn single_point_density_is_the_kernel_peak() {
        // ln(15 / 8 pi) = -0.5161212...; thresholds bracketing it flip
        // the lone survivor.
        let c = cloud(vec![[3.0, 4.0, 5.0]]);
        let kept = kde_filter(&c, 1.0, -0.5162).unwrap();
        assert_eq!(kept.points(), &[[3.0, 4.0, 5.0]]);
        let none = kde_filter(&c, 1.0, -0.5160).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn survivors_stay_within_one_bandwidth_of_the_cloud() {
        let points = vec![[2.6, 0.0, 0.0], [7.2, 3.1, 4.9]];
        let c = cloud(points.clone());
        let kept = kde_filter(&c, 1.0, -30.0).unwrap();
        assert!(!kept.is_empty());
        for g in kept.points() {
            let near = points.iter().any(|p| {
                (0..3).map(|k| (g[k] - p[k]).powi(2)).sum::<f64>() <= 1.0
            });
            assert!(near, "survivor {g:?} is outside every kernel support");
        }
    }

    #[test]
    fn sparse_points_fall_below_a_separating_threshold() {
        // A tight 1000-point cluster and one stray. Averaging over n
        // caps the stray's density near K(0)/n, ln = -7.43, while the
        // cluster scores close to its ln = -0.52 peak; a threshold
        // between the two removes only the stray's neighborhood. The
        // stock -14 threshold only starts rejecting strays once the
        // cloud grows past e^14 * 8 pi / 15 = 720k points, the scale a
        // full segmentation run produces.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut points: Vec<[f64; 3]> = (0..1000)
            .map(|_| {
                [
                    10.0 + rng.gen_range(-0.4..0.4),
                    10.0 + rng.gen_range(-0.4..0.4),
                    10.0 + rng.gen_range(-0.4..0.4),
                ]
            })
            .collect();
        let stray = [30.0, 10.0, 10.0];
        points.push(stray);
        let c = cloud(points);
        let kept = kde_filter(&c, 1.0, -6.0).unwrap();
        assert!(kept.points().contains(&[10.0, 10.0, 10.0]));
        for g in kept.points() {
            let d = (0..3).map(|k| (g[k] - stray[k]).powi(2)).sum::<f64>().sqrt();
            assert!(d > 2.0, "stray neighborhood {g:?} survived");
        }
        let at_stock = kde_filter(&c, 1.0, -14.0).unwrap();
        assert!(at_stock.points().contains(&[30.0, 10.0, 10.0]));
    }

    #[test]
    fn empty_cloud_filters_to_empty() {
        let kept = kde_filter(&cloud(vec![]), 1.0, -14.0).unwrap();
        assert!(kept.is_empty());
    }

    #[test]
    fn invalid_kde_parameters_rejected() {
        let c = cloud(vec![[0.0; 3]]);
        assert!(kde_filter(&c, 0.0, -14.0).is_err());
        assert!(kde_filter(&c, -1.0, -14.0).is_err());
        assert!(kde_filter(&c, 1.0, f64::NEG_INFINITY).is_err());
    }

    fn random_mesh(seed: u64, n: usize, span: f64) -> (TetMesh, Vec<[f64; 3]>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                [
                    rng.gen_range(0.0..span),
                    rng.gen_range(0.0..span),
                    rng.gen_range(0.0..span),
                ]
            })
            .collect();
        (delaunay(&cloud(points.clone())).unwrap(), points)
    }

    #[test]
    fn alpha_brackets_and_nests() {
        let (mesh, _) = random_mesh(3, 30, 8.0);
        let radii = mesh.circumradii();
        let max = radii.iter().cloned().fold(0.0f64, f64::max);
        let min = radii.iter().cloned().fold(f64::INFINITY, f64::min);
        let all = alpha_shape(&mesh, max + 1.0).unwrap();
        assert_eq!(all.tets(), mesh.tets());
        let none = alpha_shape(&mesh, min * 0.99).unwrap();
        assert!(none.is_empty());
        let mid = alpha_shape(&mesh, (min + max) / 2.0).unwrap();
        let wide = alpha_shape(&mesh, max).unwrap();
        let as_set = |m: &TetMesh| {
            m.tets().iter().copied().collect::<std::collections::BTreeSet<_>>()
        };
        assert!(as_set(&mid).is_subset(&as_set(&wide)));
        assert!(alpha_shape(&mesh, 0.0).is_err());
    }

    #[test]
    fn alpha_removes_the_bridge_between_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut points = Vec::new();
        for base in [2.0, 22.0] {
            for _ in 0..25 {
                points.push([
                    base + rng.gen_range(0.0..3.0),
                    2.0 + rng.gen_range(0.0..3.0),
                    2.0 + rng.gen_range(0.0..3.0),
                ]);
            }
        }
        let mesh = delaunay(&cloud(points)).unwrap();
        let crosses = |m: &TetMesh| {
            m.tets().iter().any(|t| {
                let xs = t.map(|v| m.vertices()[v][0]);
                xs.iter().any(|&x| x < 10.0) && xs.iter().any(|&x| x > 15.0)
            })
        };
        assert!(crosses(&mesh), "expected bridge tets in the raw triangulation");
        let trimmed = alpha_shape(&mesh, 4.0).unwrap();
        assert!(!trimmed.is_empty());
        assert!(!crosses(&trimmed), "bridge tets survived the alpha shape");
    }

    #[test]
    fn rasterized_tet_volume_is_close_to_analytic() {
        // A regular tetrahedron in generic orientation, so no face lies
        // in a lattice plane and center counting is unbiased.
        let s = 38.0;
        let base = [[0.0, 0.0, 0.0], [s, s, 0.0], [s, 0.0, s], [0.0, s, s]];
        let axis = [1.0, 2.0, 3.0].map(|v: f64| v / 14.0f64.sqrt());
        let (sin, cos) = 0.6f64.sin_cos();
        let rotate = |p: [f64; 3]| {
            let kxp = [
                axis[1] * p[2] - axis[2] * p[1],
                axis[2] * p[0] - axis[0] * p[2],
                axis[0] * p[1] - axis[1] * p[0],
            ];
            let kdp = axis[0] * p[0] + axis[1] * p[1] + axis[2] * p[2];
            [0, 1, 2].map(|k| p[k] * cos + kxp[k] * sin + axis[k] * kdp * (1.0 - cos))
        };
        let rotated: Vec<[f64; 3]> = base.iter().map(|&p| rotate(p)).collect();
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &rotated {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let corners: Vec<[f64; 3]> = rotated
            .iter()
            .map(|p| [0, 1, 2].map(|k| p[k] - lo[k] + (63.0 - (hi[k] - lo[k])) / 2.0))
            .collect();
        assert!((0..3).all(|k| hi[k] - lo[k] < 62.0), "tet does not fit the volume");
        let mesh = delaunay(&cloud(corners)).unwrap();
        let mask = voxelize_and_fill(&mesh, [64; 3]).unwrap();
        let count = mask.stats().count as f64;
        let analytic = s * s * s / 3.0;
        assert!(
            (count - analytic).abs() / analytic < 0.05,
            "rasterized {count} voxels vs analytic {analytic}"
        );
    }

    #[test]
    fn hollow_shell_mesh_fills_solid() {
        // Fibonacci-spiral layers give the shell band radial thickness.
        // A single spherical layer has every circumsphere equal to the
        // big sphere, which no alpha keeps, and a band thinner than one
        // voxel step lets the background flood slip through between
        // voxel centers; 1.4 voxels of thickness closes every
        // 6-connected crossing.
        let center = [16.0, 16.0, 16.0];
        let n = 900;
        let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
        let mut points = Vec::new();
        for (layer, r) in [8.6, 9.3, 10.0].into_iter().enumerate() {
            for i in 0..n {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let rho = (1.0 - z * z).sqrt();
                let a = golden * (i as f64 + 0.5 * layer as f64);
                points.push([
                    center[0] + r * rho * a.cos(),
                    center[1] + r * rho * a.sin(),
                    center[2] + r * z,
                ]);
            }
        }
        let mesh = delaunay(&cloud(points)).unwrap();
        let shell = alpha_shape(&mesh, 3.0).unwrap();
        assert!(!shell.is_empty());
        let filled = voxelize_and_fill(&shell, [33; 3]).unwrap();
        for z in 0..33 {
            for y in 0..33 {
                for x in 0..33 {
                    let d = ((x as f64 - center[0]).powi(2)
                        + (y as f64 - center[1]).powi(2)
                        + (z as f64 - center[2]).powi(2))
                    .sqrt();
                    if d <= 7.0 {
                        assert!(filled.get(x, y, z), "interior voxel ({x},{y},{z}) unfilled");
                    }
                    if d >= 13.0 {
                        assert!(!filled.get(x, y, z), "distant voxel ({x},{y},{z}) set");
                    }
                }
            }
        }
    }

    #[test]
    fn filling_only_adds_voxels() {
        let (mesh, _) = random_mesh(13, 25, 20.0);
        let shell = alpha_shape(&mesh, 6.0).unwrap();
        let raw = rasterize(&shell, [24; 3]).unwrap();
        let filled = voxelize_and_fill(&shell, [24; 3]).unwrap();
        for (r, f) in raw.data().iter().zip(filled.data()) {
            assert!(f >= r, "filling removed a voxel");
        }
    }

    #[test]
    fn empty_mesh_voxelizes_to_empty() {
        let (mesh, _) = random_mesh(4, 12, 6.0);
        let none = alpha_shape(&mesh, 1e-6).unwrap();
        let mask = voxelize_and_fill(&none, [10; 3]).unwrap();
        assert_eq!(mask.stats().count, 0);
    }

    #[test]
    fn out_of_bounds_mesh_rejected() {
        let corners = vec![
            [0.0, 0.0, 0.0],
            [12.0, 0.0, 0.0],
            [0.0, 12.0, 0.0],
            [0.0, 0.0, 12.0],
        ];
        let mesh = delaunay(&cloud(corners)).unwrap();
        assert!(voxelize_and_fill(&mesh, [8; 3]).is_err());
    }

    #[test]
    fn zero_slices_is_identity_on_solids_and_refills_cavities() {
        let solid = ball_mask([24; 3], [12.0; 3], 8.0);
        assert_eq!(thin_and_finalize(&solid, 0), solid);
        let mut holed = solid.clone();
        holed.set(12, 12, 12, false);
        assert_eq!(thin_and_finalize(&holed, 0), solid);
    }

    #[test]
    fn thinning_a_ball_matches_the_analytically_eroded_ball() {
        let dims = [128; 3];
        let solid = ball_mask(dims, [64.0; 3], 30.0);
        let thinned = thin_and_finalize(&solid, 3);
        let expected = ball_mask(dims, [64.0; 3], 27.0);
        let score = crate::volume::dsc(&thinned, &expected).unwrap();
        assert!(score >= 0.95, "eroded ball DSC {score:.4}");
    }

    #[test]
    fn masks_thinner_than_the_erosion_vanish() {
        let dims = [20, 20, 20];
        let mut slab = Mask::zeros(dims).unwrap();
        for z in 10..15 {
            for y in 0..20 {
                for x in 0..20 {
                    slab.set(x, y, z, true);
                }
            }
        }
        let thinned = thin_and_finalize(&slab, 3);
        assert_eq!(thinned.stats().count, 0);
    }

    #[test]
    fn empty_cloud_reconstructs_to_an_empty_mask() {
        let params = ReconstructionParams::with_alpha(4.0);
        let mask = reconstruct(&cloud(vec![]), [16; 3], &params).unwrap();
        assert_eq!(mask.stats().count, 0);
    }

    #[test]
    fn stage_errors_name_the_stage() {
        // Three points survive the filter, which is too few to mesh.
        let params = ReconstructionParams::with_alpha(4.0);
        let c = cloud(vec![[2.0, 2.0, 2.0], [5.0, 2.0, 2.0], [2.0, 5.0, 2.0]]);
        let err = reconstruct(&c, [16; 3], &params).unwrap_err();
        assert!(
            err.to_string().contains("triangulation"),
            "unexpected error text: {err}"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        /// Raising the threshold never adds survivors.
        #[test]
        fn kde_survivors_monotone_in_threshold(
            seed in 0u64..1000,
            n in 1usize..16,
            t_low in -20.0f64..-0.2,
            gap in 0.1f64..10.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let points: Vec<[f64; 3]> = (0..n)
                .map(|_| {
                    [
                        rng.gen_range(-4.0..4.0),
                        rng.gen_range(-4.0..4.0),
                        rng.gen_range(-4.0..4.0),
                    ]
                })
                .collect();
            let c = PointCloud::new(points).unwrap();
            let loose: BTreeSet<[i64; 3]> = kde_filter(&c, 1.0, t_low)
                .unwrap()
                .points()
                .iter()
                .map(|p| p.map(|v| v as i64))
                .collect();
            let strict: BTreeSet<[i64; 3]> = kde_filter(&c, 1.0, t_low + gap)
                .unwrap()
                .points()
                .iter()
                .map(|p| p.map(|v| v as i64))
                .collect();
            prop_assert!(strict.is_subset(&loose));
        }
    }
}
