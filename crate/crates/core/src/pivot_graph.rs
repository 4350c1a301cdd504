//! Pivot sampling, shell overlap estimation and the inner/outer cut.
//!
//! Pivots seed one shell each. After the shells converge, neighboring
//! pivots whose shells overlap strongly are probably looking at the same
//! object; pivots near the ROI faces are almost surely outside it. A
//! minimum cut on the overlap graph, with the best-connected interior
//! pivot as source and a virtual sink wired to the face pivots, splits
//! the pivots into the inner set (whose shell surfaces form the object
//! point cloud) and the rest.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maxflow::FlowNetwork;
use crate::shell::Shell;
use crate::sphere_grid::DirectionGrid;

/// Axis-aligned sampling region, in voxel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RoiBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl RoiBox {
    pub fn validate(&self) -> Result<()> {
        for k in 0..3 {
            if !self.min[k].is_finite() || !self.max[k].is_finite() || self.max[k] <= self.min[k] {
                return Err(Error::invalid(format!(
                    "ROI axis {k} is empty or unordered: [{}, {}]",
                    self.min[k], self.max[k]
                )));
            }
        }
        Ok(())
    }

    pub fn extent(&self) -> [f64; 3] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1], self.max[2] - self.min[2]]
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "kind")]
pub enum PivotStrategy {
    Lattice { spacing: f64 },
    UniformRandom { count: usize },
}

/// Sampled pivots plus the geometry needed downstream: the ROI for face
/// detection and the spacing for neighborhood and reconstruction scales.
/// Random sets get a density-equivalent spacing.
#[derive(Debug, Clone)]
pub struct PivotSet {
    pub pivots: Vec<[f64; 3]>,
    pub roi: RoiBox,
    pub spacing: f64,
    lattice_dims: Option<[usize; 3]>,
}

impl PivotSet {
    pub fn lattice_dims(&self) -> Option<[usize; 3]> {
        self.lattice_dims
    }
}

/// Fraction of the lattice spacing a pivot may be jittered by, per axis.
const JITTER_FRACTION: f64 = 0.25;

pub fn sample_pivots(roi: RoiBox, strategy: PivotStrategy, seed: u64) -> Result<PivotSet> {
    roi.validate()?;
    let extent = roi.extent();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match strategy {
        PivotStrategy::Lattice { spacing } => {
            if !(spacing > 0.0) || !spacing.is_finite() {
                return Err(Error::invalid(format!("lattice spacing {spacing} must be positive")));
            }
            let mut dims = [0usize; 3];
            let mut offset = [0.0; 3];
            for k in 0..3 {
                dims[k] = ((extent[k] / spacing).floor() as usize).max(1);
                offset[k] = (extent[k] - (dims[k] - 1) as f64 * spacing) / 2.0;
            }
            let jitter = JITTER_FRACTION * spacing;
            let mut pivots = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
            for iz in 0..dims[2] {
                for iy in 0..dims[1] {
                    for ix in 0..dims[0] {
                        let idx = [ix, iy, iz];
                        let mut p = [0.0; 3];
                        for k in 0..3 {
                            let site = roi.min[k] + offset[k] + idx[k] as f64 * spacing;
                            let j = rng.gen_range(-jitter..=jitter);
                            p[k] = (site + j).clamp(roi.min[k], roi.max[k]);
                        }
                        pivots.push(p);
                    }
                }
            }
            Ok(PivotSet { pivots, roi, spacing, lattice_dims: Some(dims) })
        }
        PivotStrategy::UniformRandom { count } => {
            if count == 0 {
                return Err(Error::invalid("random pivot sampling needs a positive count"));
            }
            let mut pivots = Vec::with_capacity(count);
            for _ in 0..count {
                let mut p = [0.0; 3];
                for k in 0..3 {
                    p[k] = rng.gen_range(roi.min[k]..roi.max[k]);
                }
                pivots.push(p);
            }
            let spacing = (extent[0] * extent[1] * extent[2] / count as f64).cbrt();
            Ok(PivotSet { pivots, roi, spacing, lattice_dims: None })
        }
    }
}

/// Flags pivots within `band` of any ROI face. Defaults to one lattice
/// spacing, or a tenth of the smallest ROI extent for random sets.
pub fn roi_face_flags(set: &PivotSet, band: Option<f64>) -> Vec<bool> {
    let extent = set.roi.extent();
    let band = band.unwrap_or_else(|| {
        if set.lattice_dims.is_some() {
            set.spacing
        } else {
            extent.iter().cloned().fold(f64::INFINITY, f64::min) / 10.0
        }
    });
    set.pivots
        .iter()
        .map(|p| {
            (0..3).any(|k| p[k] - set.roi.min[k] <= band || set.roi.max[k] - p[k] <= band)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MembershipInterpolation {
    Bilinear,
    Nearest,
}

fn bilinear_radius(shell: &Shell, grid: &DirectionGrid, u: f64, t: f64) -> f64 {
    let (ma, mp) = (grid.ma(), grid.mp());
    let radii = shell.radii();
    let u0 = (u.floor() as usize) % ma;
    let u1 = (u0 + 1) % ma;
    let fu = u - u.floor();
    let tc = t.clamp(0.0, (mp - 1) as f64);
    let t0 = (tc.floor() as usize).min(mp.saturating_sub(2));
    let t1 = (t0 + 1).min(mp - 1);
    let ft = tc - t0 as f64;
    let r00 = radii[grid.index(u0, t0)];
    let r10 = radii[grid.index(u1, t0)];
    let r01 = radii[grid.index(u0, t1)];
    let r11 = radii[grid.index(u1, t1)];
    (1.0 - fu) * (1.0 - ft) * r00 + fu * (1.0 - ft) * r10 + (1.0 - fu) * ft * r01 + fu * ft * r11
}

/// Point-in-shell test: the point is a member when its distance from the
/// pivot does not exceed the shell radius interpolated at the point's
/// direction. Azimuth wraps around; polar clamps to the outermost rows.
pub fn shell_membership(
    shell: &Shell,
    grid: &DirectionGrid,
    point: [f64; 3],
    interp: MembershipInterpolation,
) -> bool {
    let pivot = shell.pivot();
    let v = [point[0] - pivot[0], point[1] - pivot[1], point[2] - pivot[2]];
    let rho = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if rho == 0.0 {
        return true;
    }
    let (u, t) = grid.fractional_coords(v);
    let r = match interp {
        MembershipInterpolation::Bilinear => bilinear_radius(shell, grid, u, t),
        MembershipInterpolation::Nearest => {
            let mu = (u.round() as usize) % grid.ma();
            let mt = (t.round() as i64).clamp(0, grid.mp() as i64 - 1) as usize;
            shell.radii()[grid.index(mu, mt)]
        }
    };
    rho <= r
}

/// Monte Carlo overlap measures between two shell volumes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapEstimate {
    pub iou: f64,
    pub dsc: f64,
}

fn overlap_with_rng(
    a: &Shell,
    b: &Shell,
    grid: &DirectionGrid,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> OverlapEstimate {
    let (ra, rb) = (a.max_radius(), b.max_radius());
    if ra == 0.0 && rb == 0.0 {
        let same = a.pivot() == b.pivot();
        let v = if same { 1.0 } else { 0.0 };
        return OverlapEstimate { iou: v, dsc: v };
    }
    // Sample the box covering both shells' bounding boxes. Points outside
    // either shell contribute to no tally, so the hit ratios equal those
    // of sampling the union region directly, and the construction is
    // symmetric in the arguments.
    let (pa, pb) = (a.pivot(), b.pivot());
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    for k in 0..3 {
        lo[k] = (pa[k] - ra).min(pb[k] - rb);
        hi[k] = (pa[k] + ra).max(pb[k] + rb);
    }
    let (mut in_a, mut in_b, mut in_both, mut in_either) = (0u64, 0u64, 0u64, 0u64);
    for _ in 0..samples {
        let mut p = [0.0; 3];
        for k in 0..3 {
            p[k] = rng.gen_range(lo[k]..hi[k]);
        }
        let ma = shell_membership(a, grid, p, MembershipInterpolation::Bilinear);
        let mb = shell_membership(b, grid, p, MembershipInterpolation::Bilinear);
        in_a += ma as u64;
        in_b += mb as u64;
        in_both += (ma && mb) as u64;
        in_either += (ma || mb) as u64;
    }
    let iou = if in_either > 0 { in_both as f64 / in_either as f64 } else { 0.0 };
    let denom = in_a + in_b;
    let dsc = if denom > 0 { 2.0 * in_both as f64 / denom as f64 } else { 0.0 };
    OverlapEstimate { iou, dsc }
}

/// Estimate IOU and pairwise DSC between two shell volumes by uniform
/// sampling over the union of their bounding boxes.
pub fn estimate_overlap(
    a: &Shell,
    b: &Shell,
    grid: &DirectionGrid,
    samples: usize,
    seed: u64,
) -> Result<OverlapEstimate> {
    if samples == 0 {
        return Err(Error::invalid("overlap estimation needs at least one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(overlap_with_rng(a, b, grid, samples, &mut rng))
}

/// Undirected pivot neighborhood with IOU edge weights.
#[derive(Debug, Clone)]
pub struct ConsistencyGraph {
    pub nodes: usize,
    /// Edge endpoints with the smaller index first, sorted.
    pub edges: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
}

impl ConsistencyGraph {
    /// Sum of incident edge weights per node.
    pub fn incident_weight_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.nodes];
        for (&(i, j), &w) in self.edges.iter().zip(&self.weights) {
            sums[i] += w;
            sums[j] += w;
        }
        sums
    }

    fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.nodes];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }
}

/// Neighbor pairs for a pivot set: 6-adjacency on the jittered lattice,
/// or symmetrized 6-nearest-neighbors for random sets.
pub fn neighbor_edges(set: &PivotSet) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    if let Some([nx, ny, nz]) = set.lattice_dims {
        let at = |x: usize, y: usize, z: usize| (z * ny + y) * nx + x;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let i = at(x, y, z);
                    if x + 1 < nx {
                        edges.push((i, at(x + 1, y, z)));
                    }
                    if y + 1 < ny {
                        edges.push((i, at(x, y + 1, z)));
                    }
                    if z + 1 < nz {
                        edges.push((i, at(x, y, z + 1)));
                    }
                }
            }
        }
    } else {
        let n = set.pivots.len();
        let k = 6.min(n.saturating_sub(1));
        let mut seen = std::collections::BTreeSet::new();
        for i in 0..n {
            let mut dists: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let (a, b) = (set.pivots[i], set.pivots[j]);
                    let d2 = (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>();
                    (d2, j)
                })
                .collect();
            dists.sort_by(|x, y| x.partial_cmp(y).expect("pivot distances are finite"));
            for &(_, j) in dists.iter().take(k) {
                seen.insert((i.min(j), i.max(j)));
            }
        }
        edges.extend(seen);
    }
    edges.sort_unstable();
    edges
}

/// Estimate the IOU of every neighbor pair's shells. Edges draw from
/// disjoint random streams indexed by their position in the sorted edge
/// list, so the graph is identical for any worker count.
pub fn build_graph(
    set: &PivotSet,
    shells: &[Shell],
    grid: &DirectionGrid,
    samples: usize,
    seed: u64,
) -> Result<ConsistencyGraph> {
    if shells.len() != set.pivots.len() {
        return Err(Error::invalid(format!(
            "{} shells for {} pivots",
            shells.len(),
            set.pivots.len()
        )));
    }
    if samples == 0 {
        return Err(Error::invalid("overlap estimation needs at least one sample"));
    }
    let edges = neighbor_edges(set);
    let weights: Vec<f64> = edges
        .par_iter()
        .enumerate()
        .map(|(e, &(i, j))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(e as u64);
            overlap_with_rng(&shells[i], &shells[j], grid, samples, &mut rng).iou
        })
        .collect();
    Ok(ConsistencyGraph { nodes: set.pivots.len(), edges, weights })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "method")]
pub enum ClassificationMethod {
    /// Seeded s-t minimum cut; the default.
    MinCut,
    /// Appendix-style fallback: a pivot is inner when its mean incident
    /// IOU reaches the threshold.
    Threshold { theta: f64 },
}

#[derive(Debug, Clone)]
pub struct Classification {
    pub inner: Vec<bool>,
    pub warnings: Vec<String>,
}

/// Split pivots into inner and outer.
///
/// The cut flows from the non-face pivot with the highest summed incident
/// IOU to a virtual sink wired with unbounded capacity to every ROI-face
/// pivot; the residual source side is the inner set. Graphs too small to
/// cut, or with nothing but face pivots, fall back to all-inner with a
/// warning rather than failing the pipeline.
pub fn classify_pivots(
    graph: &ConsistencyGraph,
    face: &[bool],
    method: ClassificationMethod,
) -> Result<Classification> {
    if face.len() != graph.nodes {
        return Err(Error::invalid(format!(
            "{} face flags for {} pivots",
            face.len(),
            graph.nodes
        )));
    }
    for &w in &graph.weights {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::invalid(format!("edge weight {w} outside [0, 1]")));
        }
    }
    let n = graph.nodes;
    let mut warnings = Vec::new();
    if n < 2 {
        warnings.push(format!("{n} pivot(s) cannot be partitioned; declaring all inner"));
        return Ok(Classification { inner: vec![true; n], warnings });
    }
    match method {
        ClassificationMethod::Threshold { theta } => {
            let sums = graph.incident_weight_sums();
            let deg = graph.degrees();
            let inner = sums
                .iter()
                .zip(&deg)
                .map(|(&s, &d)| if d == 0 { theta <= 0.0 } else { s / d as f64 >= theta })
                .collect();
            Ok(Classification { inner, warnings })
        }
        ClassificationMethod::MinCut => {
            let sums = graph.incident_weight_sums();
            let source = (0..n)
                .filter(|&i| !face[i])
                .max_by(|&a, &b| {
                    sums[a].partial_cmp(&sums[b]).expect("weights are finite").then(b.cmp(&a))
                });
            let Some(source) = source else {
                warnings.push(
                    "every pivot sits in the ROI face band; declaring all inner".to_string(),
                );
                return Ok(Classification { inner: vec![true; n], warnings });
            };
            let unbounded: f64 = graph.weights.iter().sum::<f64>() + 1.0;
            let sink = n;
            let mut net = FlowNetwork::new(n + 1);
            for (&(i, j), &w) in graph.edges.iter().zip(&graph.weights) {
                net.add_edge(i, j, w, w);
            }
            for (i, &f) in face.iter().enumerate() {
                if f {
                    net.add_edge(i, sink, unbounded, 0.0);
                }
            }
            net.max_flow(source, sink);
            let mut inner = net.source_side(source);
            inner.truncate(n);
            Ok(Classification { inner, warnings })
        }
    }
}

/// Mean Monte Carlo DSC over neighbor pairs near the labeled boundary.
///
/// A boundary pivot is an inner pivot with at least one outer neighbor.
/// Pairs with no boundary member are skipped; a category with no pairs is
/// undefined rather than zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapStats {
    pub inner_inner: Option<f64>,
    pub inner_outer: Option<f64>,
    pub inner_inner_pairs: usize,
    pub inner_outer_pairs: usize,
}

pub fn inner_outer_dsc_stats(
    graph: &ConsistencyGraph,
    shells: &[Shell],
    grid: &DirectionGrid,
    labels: &[bool],
    samples: usize,
    seed: u64,
) -> Result<OverlapStats> {
    if labels.len() != graph.nodes || shells.len() != graph.nodes {
        return Err(Error::invalid("labels and shells must cover every pivot"));
    }
    if samples == 0 {
        return Err(Error::invalid("overlap estimation needs at least one sample"));
    }
    let mut boundary = vec![false; graph.nodes];
    for &(i, j) in &graph.edges {
        if labels[i] && !labels[j] {
            boundary[i] = true;
        }
        if labels[j] && !labels[i] {
            boundary[j] = true;
        }
    }
    let per_edge: Vec<Option<(bool, f64)>> = graph
        .edges
        .par_iter()
        .enumerate()
        .map(|(e, &(i, j))| {
            if !boundary[i] && !boundary[j] {
                return None;
            }
            let both_inner = match (labels[i], labels[j]) {
                (true, true) => true,
                (true, false) | (false, true) => false,
                (false, false) => return None,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(e as u64);
            let dsc = overlap_with_rng(&shells[i], &shells[j], grid, samples, &mut rng).dsc;
            Some((both_inner, dsc))
        })
        .collect();
    let (mut ii_sum, mut ii_n, mut io_sum, mut io_n) = (0.0, 0usize, 0.0, 0usize);
    for entry in per_edge.into_iter().flatten() {
        match entry {
            (true, d) => {
                ii_sum += d;
                ii_n += 1;
            }
            (false, d) => {
                io_sum += d;
                io_n += 1;
            }
        }
    }
    Ok(OverlapStats {
        inner_inner: (ii_n > 0).then(|| ii_sum / ii_n as f64),
        inner_outer: (io_n > 0).then(|| io_sum / io_n as f64),
        inner_inner_pairs: ii_n,
        inner_outer_pairs: io_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit_roi(edge: f64) -> RoiBox {
        RoiBox { min: [0.0; 3], max: [edge; 3] }
    }

    #[test]
    fn spacing_equal_to_the_edge_gives_one_near_center_pivot() {
        let set =
            sample_pivots(unit_roi(8.0), PivotStrategy::Lattice { spacing: 8.0 }, 0).unwrap();
        assert_eq!(set.pivots.len(), 1);
        assert_eq!(set.lattice_dims(), Some([1, 1, 1]));
        for k in 0..3 {
            assert!((set.pivots[0][k] - 4.0).abs() <= 0.25 * 8.0 + 1e-12);
        }
    }

    #[test]
    fn lattice_jitter_is_bounded_and_pivots_stay_inside() {
        let roi = unit_roi(12.0);
        let set = sample_pivots(roi, PivotStrategy::Lattice { spacing: 4.0 }, 3).unwrap();
        assert_eq!(set.lattice_dims(), Some([3, 3, 3]));
        assert_eq!(set.pivots.len(), 27);
        let sites = [2.0, 6.0, 10.0];
        for (n, p) in set.pivots.iter().enumerate() {
            let (ix, iy, iz) = (n % 3, (n / 3) % 3, n / 9);
            let site = [sites[ix], sites[iy], sites[iz]];
            for k in 0..3 {
                assert!((p[k] - site[k]).abs() <= 1.0 + 1e-12, "pivot {n} axis {k}");
            }
            assert!(roi.contains(*p));
        }
    }

    #[test]
    fn random_pivots_land_inside_and_reproduce() {
        let roi = RoiBox { min: [1.0, 2.0, 3.0], max: [9.0, 7.0, 11.0] };
        let a = sample_pivots(roi, PivotStrategy::UniformRandom { count: 1000 }, 7).unwrap();
        assert_eq!(a.pivots.len(), 1000);
        assert!(a.pivots.iter().all(|&p| roi.contains(p)));
        let b = sample_pivots(roi, PivotStrategy::UniformRandom { count: 1000 }, 7).unwrap();
        assert_eq!(a.pivots, b.pivots);
        let c = sample_pivots(roi, PivotStrategy::UniformRandom { count: 1000 }, 8).unwrap();
        assert_ne!(a.pivots, c.pivots);
    }

    #[test]
    fn empty_roi_rejected() {
        let roi = RoiBox { min: [0.0; 3], max: [4.0, 0.0, 4.0] };
        assert!(sample_pivots(roi, PivotStrategy::Lattice { spacing: 1.0 }, 0).is_err());
    }

    #[test]
    fn constant_radius_membership_is_the_sphere_test() {
        let grid = DirectionGrid::new(16, 12).unwrap();
        let shell = Shell::uniform([10.0, 10.0, 10.0], 5.0, &grid).unwrap();
        for interp in [MembershipInterpolation::Bilinear, MembershipInterpolation::Nearest] {
            assert!(shell_membership(&shell, &grid, [10.0, 10.0, 10.0], interp));
            assert!(shell_membership(&shell, &grid, [14.99, 10.0, 10.0], interp));
            assert!(!shell_membership(&shell, &grid, [15.01, 10.0, 10.0], interp));
            assert!(!shell_membership(&shell, &grid, [10.0, 16.0, 10.0], interp));
            // Oblique direction, just inside and just outside.
            let d = [1.0, 1.0, 1.0].map(|v: f64| v / 3.0f64.sqrt());
            let near = [10.0 + 4.99 * d[0], 10.0 + 4.99 * d[1], 10.0 + 4.99 * d[2]];
            let far = [10.0 + 5.01 * d[0], 10.0 + 5.01 * d[1], 10.0 + 5.01 * d[2]];
            assert!(shell_membership(&shell, &grid, near, interp));
            assert!(!shell_membership(&shell, &grid, far, interp));
        }
    }

    #[test]
    fn membership_agrees_with_an_analytic_star_shape() {
        // Radii sampled from a smooth analytic star-shaped surface; the
        // bilinear reconstruction must agree with the exact membership
        // away from the interpolation error band near the surface.
        let grid = DirectionGrid::new(32, 24).unwrap();
        let pivot = [0.0, 0.0, 0.0];
        let radius_of = |v: [f64; 3]| {
            let rho = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            let alpha = v[1].atan2(v[0]);
            let z = if rho > 0.0 { v[2] / rho } else { 0.0 };
            4.0 + 0.8 * alpha.cos() * (1.0 - z * z)
        };
        let radii: Vec<f64> = grid.dirs().iter().map(|&d| radius_of(d)).collect();
        let shell = Shell::from_radii(pivot, radii, &grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut agree = 0usize;
        let total = 10_000;
        for _ in 0..total {
            let p: [f64; 3] = [
                rng.gen_range(-5.5..5.5),
                rng.gen_range(-5.5..5.5),
                rng.gen_range(-5.5..5.5),
            ];
            let rho = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            let exact = rho <= radius_of(p);
            let got = shell_membership(&shell, &grid, p, MembershipInterpolation::Bilinear);
            agree += (exact == got) as usize;
        }
        assert!(
            agree as f64 >= 0.99 * total as f64,
            "agreement {agree}/{total} below 99%"
        );
    }

    #[test]
    fn identical_shells_have_full_overlap() {
        let grid = DirectionGrid::new(12, 8).unwrap();
        let shell = Shell::uniform([3.0, 4.0, 5.0], 4.0, &grid).unwrap();
        let est = estimate_overlap(&shell, &shell, &grid, 2000, 1).unwrap();
        assert_eq!(est.iou, 1.0);
        assert_eq!(est.dsc, 1.0);
    }

    #[test]
    fn distant_shells_have_zero_overlap() {
        let grid = DirectionGrid::new(12, 8).unwrap();
        let a = Shell::uniform([0.0, 0.0, 0.0], 3.0, &grid).unwrap();
        let b = Shell::uniform([100.0, 0.0, 0.0], 3.0, &grid).unwrap();
        let est = estimate_overlap(&a, &b, &grid, 2000, 2).unwrap();
        assert_eq!(est.iou, 0.0);
        assert_eq!(est.dsc, 0.0);
    }

    #[test]
    fn sphere_pair_overlap_matches_the_analytic_lens() {
        // Spheres of radius 5 with centers 6 apart. Lens volume is
        // pi * (4 r + d) (2 r - d)^2 / 12.
        let (r, d) = (5.0f64, 6.0f64);
        let lens = PI * (4.0 * r + d) * (2.0 * r - d).powi(2) / 12.0;
        let union = 2.0 * (4.0 / 3.0) * PI * r.powi(3) - lens;
        let expect = lens / union;
        let grid = DirectionGrid::new(24, 18).unwrap();
        let a = Shell::uniform([0.0, 0.0, 0.0], r, &grid).unwrap();
        let b = Shell::uniform([d, 0.0, 0.0], r, &grid).unwrap();
        let samples = 5000;
        let est = estimate_overlap(&a, &b, &grid, samples, 5).unwrap();
        // Standard error of the hit-ratio estimate, scaled by the
        // union-region hit rate of the cover box.
        let cover = (2.0 * r + d) * (2.0 * r) * (2.0 * r);
        let eff = samples as f64 * union / cover;
        let se = (expect * (1.0 - expect) / eff).sqrt();
        assert!(
            (est.iou - expect).abs() <= 3.0 * se,
            "estimate {} vs analytic {expect} (3 SE = {})",
            est.iou,
            3.0 * se
        );
    }

    #[test]
    fn overlap_is_symmetric_in_its_arguments() {
        let grid = DirectionGrid::new(12, 8).unwrap();
        let radii: Vec<f64> =
            (0..grid.len()).map(|i| 3.0 + 0.5 * ((i % 7) as f64 / 7.0)).collect();
        let a = Shell::from_radii([1.0, 2.0, 3.0], radii, &grid).unwrap();
        let b = Shell::uniform([4.0, 2.5, 3.5], 2.5, &grid).unwrap();
        let ab = estimate_overlap(&a, &b, &grid, 3000, 9).unwrap();
        let ba = estimate_overlap(&b, &a, &grid, 3000, 9).unwrap();
        assert_eq!(ab.iou.to_bits(), ba.iou.to_bits());
        assert_eq!(ab.dsc.to_bits(), ba.dsc.to_bits());
    }

    #[test]
    fn weak_bridge_is_cut_between_cliques() {
        let graph = ConsistencyGraph {
            nodes: 6,
            edges: vec![(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (3, 5), (4, 5)],
            weights: vec![0.9, 0.9, 0.9, 0.1, 0.9, 0.9, 0.9],
        };
        let face = [false, false, false, false, false, true];
        let got = classify_pivots(&graph, &face, ClassificationMethod::MinCut).unwrap();
        assert_eq!(got.inner, vec![true, true, true, false, false, false]);
        assert!(got.warnings.is_empty());
    }

    /// Cheapest cut separating the source from every face node, by
    /// enumeration.
    fn brute_force_cut(graph: &ConsistencyGraph, face: &[bool], source: usize) -> (f64, u32) {
        let n = graph.nodes;
        assert!(n <= 16);
        let mut best = (f64::INFINITY, 0u32);
        for mask in 0u32..(1 << n) {
            if mask & (1 << source) == 0 {
                continue;
            }
            if (0..n).any(|i| face[i] && mask & (1 << i) != 0) {
                continue;
            }
            let mut cut = 0.0;
            for (&(i, j), &w) in graph.edges.iter().zip(&graph.weights) {
                if (mask >> i & 1) != (mask >> j & 1) {
                    cut += w;
                }
            }
            if cut < best.0 {
                best = (cut, mask);
            }
        }
        best
    }

    #[test]
    fn min_cut_matches_brute_force_enumeration() {
        // A 3x2x2 lattice of uniform weights with one end face wired to
        // the sink, plus a couple of weakened edges to make the optimum
        // nontrivial.
        let set = PivotSet {
            pivots: (0..12).map(|i| [(i % 3) as f64, ((i / 3) % 2) as f64, (i / 6) as f64]).collect(),
            roi: unit_roi(3.0),
            spacing: 1.0,
            lattice_dims: Some([3, 2, 2]),
        };
        let edges = neighbor_edges(&set);
        let mut weights = vec![0.5; edges.len()];
        for (e, &(i, j)) in edges.iter().enumerate() {
            if i == 1 && j == 2 || i == 4 && j == 5 {
                weights[e] = 0.05;
            }
        }
        let graph = ConsistencyGraph { nodes: 12, edges, weights };
        let face: Vec<bool> = (0..12).map(|i| i % 3 == 2).collect();
        let got = classify_pivots(&graph, &face, ClassificationMethod::MinCut).unwrap();
        let sums = graph.incident_weight_sums();
        let source = (0..12)
            .filter(|&i| !face[i])
            .max_by(|&a, &b| sums[a].partial_cmp(&sums[b]).unwrap().then(b.cmp(&a)))
            .unwrap();
        let (want, _) = brute_force_cut(&graph, &face, source);
        let achieved: f64 = graph
            .edges
            .iter()
            .zip(&graph.weights)
            .filter(|(&(i, j), _)| got.inner[i] != got.inner[j])
            .map(|(_, &w)| w)
            .sum();
        assert!(
            (achieved - want).abs() < 1e-9,
            "cut {achieved} vs brute force {want}"
        );
        assert!(got.inner[source]);
        for i in 0..12 {
            if face[i] {
                assert!(!got.inner[i], "face pivot {i} must end up outer");
            }
        }
    }

    #[test]
    fn classification_is_invariant_under_relabeling() {
        let graph = ConsistencyGraph {
            nodes: 6,
            edges: vec![(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (3, 5), (4, 5)],
            weights: vec![0.8, 0.7, 0.9, 0.15, 0.85, 0.6, 0.75],
        };
        let face = [false, false, false, false, true, true];
        let perm = [3usize, 5, 0, 1, 4, 2];
        let mut p_edges: Vec<(usize, usize)> = graph
            .edges
            .iter()
            .map(|&(i, j)| (perm[i].min(perm[j]), perm[i].max(perm[j])))
            .collect();
        let mut order: Vec<usize> = (0..p_edges.len()).collect();
        order.sort_by_key(|&e| p_edges[e]);
        p_edges.sort_unstable();
        let p_weights: Vec<f64> = order.iter().map(|&e| graph.weights[e]).collect();
        let p_graph = ConsistencyGraph { nodes: 6, edges: p_edges, weights: p_weights };
        let mut p_face = [false; 6];
        for i in 0..6 {
            p_face[perm[i]] = face[i];
        }
        let base = classify_pivots(&graph, &face, ClassificationMethod::MinCut).unwrap();
        let permuted = classify_pivots(&p_graph, &p_face, ClassificationMethod::MinCut).unwrap();
        for i in 0..6 {
            assert_eq!(base.inner[i], permuted.inner[perm[i]], "node {i}");
        }
    }

    #[test]
    fn tiny_graphs_fall_back_to_all_inner() {
        let graph = ConsistencyGraph { nodes: 1, edges: vec![], weights: vec![] };
        let got = classify_pivots(&graph, &[false], ClassificationMethod::MinCut).unwrap();
        assert_eq!(got.inner, vec![true]);
        assert_eq!(got.warnings.len(), 1);
    }

    #[test]
    fn all_face_pivots_fall_back_to_all_inner() {
        let graph =
            ConsistencyGraph { nodes: 3, edges: vec![(0, 1), (1, 2)], weights: vec![0.5, 0.5] };
        let got =
            classify_pivots(&graph, &[true, true, true], ClassificationMethod::MinCut).unwrap();
        assert_eq!(got.inner, vec![true, true, true]);
        assert_eq!(got.warnings.len(), 1);
    }

    #[test]
    fn threshold_fallback_brackets_every_pivot() {
        let graph = ConsistencyGraph {
            nodes: 4,
            edges: vec![(0, 1), (1, 2), (2, 3)],
            weights: vec![0.6, 0.7, 0.8],
        };
        let face = [false; 4];
        let low =
            classify_pivots(&graph, &face, ClassificationMethod::Threshold { theta: 0.1 }).unwrap();
        assert!(low.inner.iter().all(|&b| b));
        let high =
            classify_pivots(&graph, &face, ClassificationMethod::Threshold { theta: 0.95 })
                .unwrap();
        assert!(high.inner.iter().all(|&b| !b));
    }

    #[test]
    fn dsc_stats_skip_interior_pairs_and_report_empty_categories_as_undefined() {
        let grid = DirectionGrid::new(8, 6).unwrap();
        // Chain 0 - 1 - 2 - 3; labels make 1-2 the boundary crossing.
        let shells: Vec<Shell> = (0..4)
            .map(|i| Shell::uniform([2.0 * i as f64, 0.0, 0.0], 1.5, &grid).unwrap())
            .collect();
        let graph = ConsistencyGraph {
            nodes: 4,
            edges: vec![(0, 1), (1, 2), (2, 3)],
            weights: vec![0.5; 3],
        };
        let labels = [true, true, false, false];
        let stats = inner_outer_dsc_stats(&graph, &shells, &grid, &labels, 2000, 3).unwrap();
        // Pair (0,1) touches boundary pivot 1; pair (1,2) crosses; pair
        // (2,3) is outer-outer and must be skipped.
        assert_eq!(stats.inner_inner_pairs, 1);
        assert_eq!(stats.inner_outer_pairs, 1);
        assert!(stats.inner_inner.is_some() && stats.inner_outer.is_some());
        let all_inner = [true; 4];
        let stats = inner_outer_dsc_stats(&graph, &shells, &grid, &all_inner, 2000, 3).unwrap();
        assert_eq!(stats.inner_inner, None);
        assert_eq!(stats.inner_outer, None);
    }
}
