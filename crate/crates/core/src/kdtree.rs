//! Static KD-tree over 3D points with exact nearest-neighbor queries.
//!
//! Built once by recursive median split and never rebalanced, which is all
//! the distance-field construction needs. Queries are exact: the search
//! prunes on squared distance bounds only, never approximates.

/// Ranges at or below this size become leaves scanned linearly.
const LEAF_SIZE: usize = 12;

const NO_CHILD: i32 = -1;

#[derive(Debug, Clone)]
struct Node {
    /// Splitting axis; 3 marks a leaf.
    axis: u8,
    lo: u32,
    hi: u32,
    left: i32,
    right: i32,
}

#[derive(Debug, Clone)]
pub struct KdTree3 {
    pts: Vec<[f64; 3]>,
    nodes: Vec<Node>,
}

impl KdTree3 {
    /// Build from a point set. The input order does not matter; median ties
    /// are broken lexicographically so the tree is deterministic.
    pub fn build(mut pts: Vec<[f64; 3]>) -> KdTree3 {
        let mut nodes = Vec::new();
        if !pts.is_empty() {
            let n = pts.len();
            build_range(&mut pts, 0, n, &mut nodes);
        }
        KdTree3 { pts, nodes }
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    /// Exact nearest neighbor: the closest stored point and the squared
    /// distance to it, or `None` for an empty tree.
    pub fn nearest(&self, q: [f64; 3]) -> Option<([f64; 3], f64)> {
        if self.pts.is_empty() {
            return None;
        }
        let mut best = f64::INFINITY;
        let mut best_pt = self.pts[0];
        self.search(0, q, &mut best, &mut best_pt);
        Some((best_pt, best))
    }

    fn search(&self, node: usize, q: [f64; 3], best: &mut f64, best_pt: &mut [f64; 3]) {
        let n = &self.nodes[node];
        if n.axis == 3 {
            for p in &self.pts[n.lo as usize..n.hi as usize] {
                let d = dist2(*p, q);
                if d < *best {
                    *best = d;
                    *best_pt = *p;
                }
            }
            return;
        }
        let lo = n.lo as usize;
        let hi = n.hi as usize;
        let mid = lo + (hi - lo) / 2;
        let pivot = self.pts[mid];
        let d = dist2(pivot, q);
        if d < *best {
            *best = d;
            *best_pt = pivot;
        }
        let delta = q[n.axis as usize] - pivot[n.axis as usize];
        let (near, far) = if delta <= 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        if near != NO_CHILD {
            self.search(near as usize, q, best, best_pt);
        }
        if far != NO_CHILD && delta * delta < *best {
            self.search(far as usize, q, best, best_pt);
        }
    }
}

/// Build the node covering pts[lo..hi]; returns its index in the arena.
fn build_range(pts: &mut [[f64; 3]], lo: usize, hi: usize, nodes: &mut Vec<Node>) -> i32 {
    let id = nodes.len();
    if hi - lo <= LEAF_SIZE {
        nodes.push(Node { axis: 3, lo: lo as u32, hi: hi as u32, left: NO_CHILD, right: NO_CHILD });
        return id as i32;
    }
    // Split the widest extent; degenerate extents fall back to axis 0.
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for p in &pts[lo..hi] {
        for a in 0..3 {
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
        }
    }
    let mut axis = 0usize;
    for a in 1..3 {
        if max[a] - min[a] > max[axis] - min[axis] {
            axis = a;
        }
    }
    let mid = lo + (hi - lo) / 2;
    pts[lo..hi].select_nth_unstable_by(mid - lo, |a, b| {
        (a[axis], a[(axis + 1) % 3], a[(axis + 2) % 3])
            .partial_cmp(&(b[axis], b[(axis + 1) % 3], b[(axis + 2) % 3]))
            .expect("kd-tree points must not contain NaN")
    });
    nodes.push(Node { axis: axis as u8, lo: lo as u32, hi: hi as u32, left: NO_CHILD, right: NO_CHILD });
    let left = build_range(pts, lo, mid, nodes);
    let right = build_range(pts, mid + 1, hi, nodes);
    nodes[id].left = left;
    nodes[id].right = right;
    id as i32
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}
