//! Incremental 3D Delaunay triangulation.
//!
//! Bowyer-Watson with a bounding super-tetrahedron: points go in one at a
//! time in sorted order, each insertion carves out the cavity of
//! tetrahedra whose circumsphere contains the point and re-tiles it as a
//! fan around the point. Geometric predicates run on copies perturbed by
//! a tiny deterministic jitter keyed on the point index, which breaks the
//! cospherical ties that integer-coordinate clouds produce in abundance;
//! reported volumes and circumradii come from the unperturbed
//! coordinates.

use std::collections::HashMap;

use crate::error::{Error, Result};

use super::PointCloud;

/// Tetrahedral mesh over a point cloud. Tetrahedra are positively
/// oriented and non-degenerate (volume above [`MIN_TET_VOLUME`]).
#[derive(Debug, Clone)]
pub struct TetMesh {
    pub(crate) vertices: Vec<[f64; 3]>,
    pub(crate) tets: Vec<[usize; 4]>,
    pub(crate) circumradii: Vec<f64>,
}

/// Tetrahedra flatter than this are dropped from the final mesh.
pub const MIN_TET_VOLUME: f64 = 1e-9;

/// Magnitude of the deterministic perturbation applied to predicate
/// inputs.
const PREDICATE_JITTER: f64 = 1e-6;

impl TetMesh {
    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn circumradii(&self) -> &[f64] {
        &self.circumradii
    }

    pub fn len(&self) -> usize {
        self.tets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tets.is_empty()
    }

    /// Serialize as OFF text, four triangles per tetrahedron, for
    /// inspection in external mesh viewers.
    pub fn to_off(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        out.push_str("OFF\n");
        let _ = writeln!(out, "{} {} 0", self.vertices.len(), 4 * self.tets.len());
        for v in &self.vertices {
            let _ = writeln!(out, "{} {} {}", v[0], v[1], v[2]);
        }
        for t in &self.tets {
            for k in 0..4 {
                let f = FACE_WINDINGS[k];
                let _ = writeln!(out, "3 {} {} {}", t[f[0]], t[f[1]], t[f[2]]);
            }
        }
        out
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Signed parallelepiped volume of (b-a, c-a, d-a); positive when d lies
/// on the side of plane (a,b,c) that the right-hand winding points to.
pub(crate) fn orient3d(a: [f64; 3], b: [f64; 3], c: [f64; 3], d: [f64; 3]) -> f64 {
    dot(cross(sub(b, a), sub(c, a)), sub(d, a))
}

pub(crate) fn tet_volume(a: [f64; 3], b: [f64; 3], c: [f64; 3], d: [f64; 3]) -> f64 {
    orient3d(a, b, c, d) / 6.0
}

fn det3(m: [[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Lifted-coordinate determinant; for a positively oriented (a,b,c,d) the
/// sign is negative exactly when p falls strictly inside the circumsphere
/// (pinned by a unit test on a hand-checked example).
fn insphere(a: [f64; 3], b: [f64; 3], c: [f64; 3], d: [f64; 3], p: [f64; 3]) -> f64 {
    let row = |v: [f64; 3]| {
        let r = sub(v, p);
        [r[0], r[1], r[2], dot(r, r)]
    };
    let m = [row(a), row(b), row(c), row(d)];
    // Expand along the last column.
    let minor = |skip: usize| {
        let mut rows = [[0.0; 3]; 3];
        let mut n = 0;
        for (i, r) in m.iter().enumerate() {
            if i != skip {
                rows[n] = [r[0], r[1], r[2]];
                n += 1;
            }
        }
        det3(rows)
    };
    -m[0][3] * minor(0) + m[1][3] * minor(1) - m[2][3] * minor(2) + m[3][3] * minor(3)
}

/// Circumcenter and circumradius, or None when the tetrahedron is too
/// flat for the linear system to be trustworthy.
pub(crate) fn circumsphere(
    a: [f64; 3],
    b: [f64; 3],
    c: [f64; 3],
    d: [f64; 3],
) -> Option<([f64; 3], f64)> {
    let (u, v, w) = (sub(b, a), sub(c, a), sub(d, a));
    let det = 2.0 * det3([u, v, w]);
    if det.abs() < 1e-12 {
        return None;
    }
    let rhs = [dot(u, u), dot(v, v), dot(w, w)];
    let col = |k: usize| {
        let mut m = [u, v, w];
        for (row, r) in m.iter_mut().zip(rhs) {
            row[k] = r;
        }
        2.0 * det3(m) / det
    };
    let offset = [col(0) / 2.0, col(1) / 2.0, col(2) / 2.0];
    let center = [a[0] + offset[0], a[1] + offset[1], a[2] + offset[2]];
    Some((center, dot(offset, offset).sqrt()))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn jittered(p: [f64; 3], index: usize) -> [f64; 3] {
    let mut out = p;
    for (axis, v) in out.iter_mut().enumerate() {
        let bits = splitmix64(index as u64 * 3 + axis as u64);
        // Map to [-1, 1) and scale.
        let unit = (bits >> 11) as f64 / (1u64 << 52) as f64 - 1.0;
        *v += unit * PREDICATE_JITTER;
    }
    out
}

/// Face of a tetrahedron opposite local vertex k, wound so the opposite
/// vertex sits on the positive side.
const FACE_WINDINGS: [[usize; 3]; 4] = [[1, 3, 2], [0, 2, 3], [0, 3, 1], [0, 1, 2]];

const NO_TET: i64 = -1;

struct Builder {
    /// Exact coordinates, real points first, then the four super-tet
    /// vertices.
    pts: Vec<[f64; 3]>,
    /// Perturbed copies backing every predicate.
    jpts: Vec<[f64; 3]>,
    real: usize,
    tets: Vec<[usize; 4]>,
    neigh: Vec<[i64; 4]>,
    alive: Vec<bool>,
    last: usize,
}

impl Builder {
    fn new(points: &[[f64; 3]]) -> Builder {
        let real = points.len();
        let mut pts = points.to_vec();
        let mut jpts: Vec<[f64; 3]> =
            points.iter().enumerate().map(|(i, &p)| jittered(p, i)).collect();
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let center = [0, 1, 2].map(|k| (lo[k] + hi[k]) / 2.0);
        let span = (0..3).map(|k| hi[k] - lo[k]).fold(1.0f64, f64::max);
        let s = span * 1000.0;
        let corners = [[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]];
        for c in corners {
            let v = [center[0] + c[0], center[1] + c[1], center[2] + c[2]];
            pts.push(v);
            jpts.push(v);
        }
        let mut first = [real, real + 1, real + 2, real + 3];
        if orient3d(jpts[first[0]], jpts[first[1]], jpts[first[2]], jpts[first[3]]) < 0.0 {
            first.swap(2, 3);
        }
        Builder {
            pts,
            jpts,
            real,
            tets: vec![first],
            neigh: vec![[NO_TET; 4]],
            alive: vec![true],
            last: 0,
        }
    }

    fn face_orients(&self, t: usize, p: [f64; 3]) -> [f64; 4] {
        let tet = self.tets[t];
        let mut out = [0.0; 4];
        for (k, o) in out.iter_mut().enumerate() {
            let f = FACE_WINDINGS[k];
            *o = orient3d(self.jpts[tet[f[0]]], self.jpts[tet[f[1]]], self.jpts[tet[f[2]]], p);
        }
        out
    }

    /// Walk from the most recent tetrahedron towards the one containing
    /// p, stepping through the most-violated face each time. Falls back
    /// to a linear scan if the walk stalls.
    fn locate(&self, p: [f64; 3]) -> usize {
        let mut t = self.last;
        let cap = 4 * self.tets.len() + 16;
        for _ in 0..cap {
            let orients = self.face_orients(t, p);
            let (mut worst_k, mut worst) = (usize::MAX, 0.0);
            for (k, &o) in orients.iter().enumerate() {
                if o < worst {
                    worst = o;
                    worst_k = k;
                }
            }
            if worst_k == usize::MAX {
                return t;
            }
            match self.neigh[t][worst_k] {
                NO_TET => break,
                next => t = next as usize,
            }
        }
        // Numerical stall: pick the least-violated live tetrahedron.
        let mut best = (f64::NEG_INFINITY, self.last);
        for (t, &alive) in self.alive.iter().enumerate() {
            if !alive {
                continue;
            }
            let o = self.face_orients(t, p);
            let min = o.iter().cloned().fold(f64::INFINITY, f64::min);
            if min > best.0 {
                best = (min, t);
            }
        }
        best.1
    }

    fn in_circumsphere(&self, t: usize, p: [f64; 3]) -> bool {
        let [a, b, c, d] = self.tets[t].map(|v| self.jpts[v]);
        insphere(a, b, c, d, p) < 0.0
    }

    fn insert(&mut self, v: usize) {
        let p = self.jpts[v];
        let seed = self.locate(p);
        // Grow the cavity of tetrahedra whose circumsphere swallows p.
        let mut cavity = vec![seed];
        let mut in_cavity = std::collections::HashSet::from([seed]);
        let mut queue = vec![seed];
        while let Some(t) = queue.pop() {
            for k in 0..4 {
                let n = self.neigh[t][k];
                if n == NO_TET {
                    continue;
                }
                let n = n as usize;
                if !in_cavity.contains(&n) && self.in_circumsphere(n, p) {
                    in_cavity.insert(n);
                    cavity.push(n);
                    queue.push(n);
                }
            }
        }
        // Boundary faces: cavity faces whose far side survives. Each
        // face remembers which cavity tet it came from, so the far
        // side's back-pointer can be retargeted precisely (an outside
        // tet may border several cavity tets).
        struct BoundaryFace {
            verts: [usize; 3],
            outside: i64,
            dead: usize,
        }
        let mut faces = Vec::new();
        for &t in &cavity {
            for k in 0..4 {
                let n = self.neigh[t][k];
                if n != NO_TET && in_cavity.contains(&(n as usize)) {
                    continue;
                }
                let f = FACE_WINDINGS[k];
                let tet = self.tets[t];
                faces.push(BoundaryFace {
                    verts: [tet[f[0]], tet[f[1]], tet[f[2]]],
                    outside: n,
                    dead: t,
                });
            }
        }
        for &t in &cavity {
            self.alive[t] = false;
        }
        // Re-tile the cavity as a fan from p, stitching neighbor links
        // through the shared (edge, p) faces.
        let mut edge_owner: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
        for face in faces {
            let mut verts = face.verts;
            if orient3d(self.jpts[verts[0]], self.jpts[verts[1]], self.jpts[verts[2]], p) < 0.0 {
                verts.swap(1, 2);
            }
            let id = self.tets.len();
            self.tets.push([verts[0], verts[1], verts[2], v]);
            self.neigh.push([NO_TET, NO_TET, NO_TET, face.outside]);
            self.alive.push(true);
            if face.outside != NO_TET {
                let out = face.outside as usize;
                for slot in self.neigh[out].iter_mut() {
                    if *slot == face.dead as i64 {
                        *slot = id as i64;
                    }
                }
            }
            // Local faces 0..2 are opposite verts[0..2]; each pairs with
            // the sibling tet sharing the remaining cavity edge.
            for k in 0..3 {
                let (a, b) = match k {
                    0 => (verts[1], verts[2]),
                    1 => (verts[0], verts[2]),
                    _ => (verts[0], verts[1]),
                };
                let key = (a.min(b), a.max(b));
                match edge_owner.remove(&key) {
                    Some((other, other_k)) => {
                        self.neigh[id][k] = other as i64;
                        self.neigh[other][other_k] = id as i64;
                    }
                    None => {
                        edge_owner.insert(key, (id, k));
                    }
                }
            }
            self.last = id;
        }
    }

    fn finish(self) -> TetMesh {
        let mut kept: Vec<([usize; 4], f64)> = Vec::new();
        for (t, &alive) in self.alive.iter().enumerate() {
            if !alive {
                continue;
            }
            let mut tet = self.tets[t];
            if tet.iter().any(|&v| v >= self.real) {
                continue;
            }
            tet.sort_unstable();
            let [a, b, c, d] = tet.map(|v| self.pts[v]);
            let mut vol = tet_volume(a, b, c, d);
            if vol < 0.0 {
                tet.swap(2, 3);
                vol = -vol;
            }
            if vol <= MIN_TET_VOLUME {
                continue;
            }
            let radius = circumsphere(a, b, c, d).map_or(f64::INFINITY, |(_, r)| r);
            kept.push((tet, radius));
        }
        kept.sort_by(|x, y| {
            let mut kx = x.0;
            let mut ky = y.0;
            kx.sort_unstable();
            ky.sort_unstable();
            kx.cmp(&ky)
        });
        let vertices = self.pts[..self.real].to_vec();
        let (tets, circumradii) = kept.into_iter().unzip();
        TetMesh { vertices, tets, circumradii }
    }
}

/// Delaunay-triangulate a cloud. Points are sorted and exact duplicates
/// merged before insertion, so the result depends only on the point set.
pub fn delaunay(cloud: &PointCloud) -> Result<TetMesh> {
    let mut points = cloud.points().to_vec();
    points.sort_by(|a, b| a.partial_cmp(b).expect("cloud coordinates are finite"));
    points.dedup();
    if points.len() < 4 {
        return Err(Error::degenerate(format!(
            "triangulation needs at least 4 distinct points, got {}",
            points.len()
        )));
    }
    let span = {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (0..3).map(|k| hi[k] - lo[k]).fold(1.0f64, f64::max)
    };
    // Build a reference frame from the first point, one non-coincident,
    // one non-collinear and one non-coplanar companion; failure to find
    // the last one means the cloud is flat.
    let line_tol = 1e-12 * span * span;
    let plane_tol = 1e-12 * span * span * span;
    let p0 = points[0];
    let p1 = points[1];
    let p2 = points
        .iter()
        .skip(2)
        .copied()
        .find(|&p| {
            cross(sub(p1, p0), sub(p, p0)).iter().any(|&c| c.abs() > line_tol)
        })
        .ok_or_else(|| Error::degenerate("all points are collinear"))?;
    if !points.iter().any(|&p| orient3d(p0, p1, p2, p).abs() > plane_tol) {
        return Err(Error::degenerate("all points are coplanar"));
    }
    let mut builder = Builder::new(&points);
    for v in 0..points.len() {
        builder.insert(v);
    }
    Ok(builder.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(points: Vec<[f64; 3]>) -> PointCloud {
        PointCloud::new(points).unwrap()
    }

    #[test]
    fn insphere_sign_is_negative_inside() {
        // Unit vectors from the origin: circumsphere is the unit sphere.
        let (a, b, c, d) =
            ([0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]);
        assert!(orient3d(a, b, c, d) > 0.0);
        assert!(insphere(a, b, c, d, [0.0, 0.0, 0.0]) < 0.0);
        assert!(insphere(a, b, c, d, [2.0, 0.0, 0.0]) > 0.0);
    }

    #[test]
    fn four_points_give_one_tetrahedron() {
        let mesh = delaunay(&cloud(vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ]))
        .unwrap();
        assert_eq!(mesh.len(), 1);
        // Circumcenter (.5,.5,.5), radius sqrt(3)/2.
        assert!((mesh.circumradii()[0] - 0.75f64.sqrt()).abs() < 1e-9);
        let [a, b, c, d] = mesh.tets()[0].map(|v| mesh.vertices()[v]);
        assert!(tet_volume(a, b, c, d) > 0.0);
    }

    /// No non-vertex point may sit strictly inside a tet's circumsphere.
    fn assert_empty_circumspheres(mesh: &TetMesh, points: &[[f64; 3]]) {
        for (t, tet) in mesh.tets().iter().enumerate() {
            let [a, b, c, d] = tet.map(|v| mesh.vertices()[v]);
            let (center, radius) =
                circumsphere(a, b, c, d).expect("kept tetrahedra are non-degenerate");
            for (i, p) in points.iter().enumerate() {
                if tet.iter().any(|&v| mesh.vertices()[v] == *p) {
                    continue;
                }
                let dist = dot(sub(*p, center), sub(*p, center)).sqrt();
                assert!(
                    dist >= radius - 1e-9,
                    "point {i} is {dist} from tet {t} center, radius {radius}"
                );
            }
        }
    }

    #[test]
    fn five_points_in_general_position() {
        let points = vec![
            [0.0, 0.0, 0.0],
            [2.0, 0.0, 0.1],
            [0.0, 2.0, -0.1],
            [0.3, 0.4, 1.7],
            [0.9, 1.1, -1.3],
        ];
        let mesh = delaunay(&cloud(points.clone())).unwrap();
        assert!(
            (2..=3).contains(&mesh.len()),
            "expected 2 or 3 tets, got {}",
            mesh.len()
        );
        assert_empty_circumspheres(&mesh, &points);
    }

    #[test]
    fn cube_corners_tile_the_cube() {
        let mut points = Vec::new();
        for z in [0.0, 2.0] {
            for y in [0.0, 2.0] {
                for x in [0.0, 2.0] {
                    points.push([x, y, z]);
                }
            }
        }
        let mesh = delaunay(&cloud(points)).unwrap();
        let total: f64 = mesh
            .tets()
            .iter()
            .map(|t| {
                let [a, b, c, d] = t.map(|v| mesh.vertices()[v]);
                tet_volume(a, b, c, d)
            })
            .sum();
        assert!((total - 8.0).abs() < 1e-9, "tet volumes sum to {total}");
    }

    #[test]
    fn random_cloud_is_delaunay_by_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let points: Vec<[f64; 3]> = (0..40)
            .map(|_| {
                [
                    rng.gen_range(0.0..10.0),
                    rng.gen_range(0.0..10.0),
                    rng.gen_range(0.0..10.0),
                ]
            })
            .collect();
        let mesh = delaunay(&cloud(points.clone())).unwrap();
        assert!(mesh.len() > 40, "suspiciously few tets: {}", mesh.len());
        assert_empty_circumspheres(&mesh, &points);
    }

    #[test]
    fn duplicates_are_merged_before_insertion() {
        let base = vec![
            [0.0, 0.0, 0.0],
            [3.0, 0.0, 0.0],
            [0.0, 3.0, 0.0],
            [0.0, 0.0, 3.0],
            [1.0, 1.0, 1.0],
        ];
        let mut doubled = base.clone();
        doubled.extend_from_slice(&base);
        let a = delaunay(&cloud(base)).unwrap();
        let b = delaunay(&cloud(doubled)).unwrap();
        assert_eq!(a.vertices(), b.vertices());
        assert_eq!(a.tets(), b.tets());
    }

    #[test]
    fn coplanar_and_undersized_clouds_are_rejected() {
        let flat: Vec<[f64; 3]> =
            (0..9).map(|i| [(i % 3) as f64, (i / 3) as f64, 5.0]).collect();
        assert!(delaunay(&cloud(flat)).is_err());
        let few = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert!(delaunay(&cloud(few)).is_err());
    }

    #[test]
    fn off_export_lists_every_face() {
        let mesh = delaunay(&cloud(vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ]))
        .unwrap();
        let off = mesh.to_off();
        let mut lines = off.lines();
        assert_eq!(lines.next(), Some("OFF"));
        assert_eq!(lines.next(), Some("4 4 0"));
        assert_eq!(off.lines().count(), 2 + 4 + 4);
    }

    #[test]
    fn integer_grid_cloud_triangulates_cleanly() {
        // Integer lattices are maximally cospherical; the jitter must
        // keep the triangulation valid and volume-conserving.
        let mut points = Vec::new();
        for z in 0..4 {
            for y in 0..4 {
                for x in 0..4 {
                    points.push([x as f64, y as f64, z as f64]);
                }
            }
        }
        let mesh = delaunay(&cloud(points)).unwrap();
        let total: f64 = mesh
            .tets()
            .iter()
            .map(|t| {
                let [a, b, c, d] = t.map(|v| mesh.vertices()[v]);
                tet_volume(a, b, c, d)
            })
            .sum();
        assert!((total - 27.0).abs() < 1e-6, "lattice tet volumes sum to {total}");
        for t in mesh.tets() {
            let [a, b, c, d] = t.map(|v| mesh.vertices()[v]);
            assert!(tet_volume(a, b, c, d) > MIN_TET_VOLUME);
        }
    }
}
