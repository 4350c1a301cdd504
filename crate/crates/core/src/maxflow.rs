//! Dinic maximum flow / minimum cut on small dense-ish graphs.
//!
//! The pivot classifier builds one of these per segmentation: a few
//! thousand nodes, undirected consistency edges, plus one virtual sink.
//! Capacities are floats, so residual capacities below a fixed epsilon
//! count as saturated to guarantee termination.

const EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct FlowNetwork {
    adj: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<f64>,
}

impl FlowNetwork {
    pub fn new(nodes: usize) -> FlowNetwork {
        FlowNetwork { adj: vec![Vec::new(); nodes], to: Vec::new(), cap: Vec::new() }
    }

    pub fn nodes(&self) -> usize {
        self.adj.len()
    }

    /// Add an edge with independent capacities per direction; an
    /// undirected edge of weight w is `add_edge(u, v, w, w)`.
    pub fn add_edge(&mut self, from: usize, to: usize, cap_forward: f64, cap_backward: f64) {
        debug_assert!(cap_forward >= 0.0 && cap_backward >= 0.0);
        debug_assert!(from != to, "self-loops carry no flow");
        let id = self.to.len();
        self.adj[from].push(id);
        self.to.push(to);
        self.cap.push(cap_forward);
        self.adj[to].push(id + 1);
        self.to.push(from);
        self.cap.push(cap_backward);
    }

    fn bfs_levels(&self, s: usize, t: usize) -> Option<Vec<i32>> {
        let mut level = vec![-1; self.adj.len()];
        let mut queue = std::collections::VecDeque::new();
        level[s] = 0;
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            for &e in &self.adj[u] {
                let v = self.to[e];
                if level[v] < 0 && self.cap[e] > EPS {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        if level[t] >= 0 {
            Some(level)
        } else {
            None
        }
    }

    fn dfs_push(
        &mut self,
        u: usize,
        t: usize,
        pushed: f64,
        level: &[i32],
        iter: &mut [usize],
    ) -> f64 {
        if u == t {
            return pushed;
        }
        while iter[u] < self.adj[u].len() {
            let e = self.adj[u][iter[u]];
            let v = self.to[e];
            if level[v] == level[u] + 1 && self.cap[e] > EPS {
                let got = self.dfs_push(v, t, pushed.min(self.cap[e]), level, iter);
                if got > EPS {
                    self.cap[e] -= got;
                    self.cap[e ^ 1] += got;
                    return got;
                }
            }
            iter[u] += 1;
        }
        0.0
    }

    /// Run to completion and return the max flow value. Residual
    /// capacities stay in place for [`FlowNetwork::source_side`].
    pub fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        assert_ne!(s, t);
        let mut flow = 0.0;
        while let Some(level) = self.bfs_levels(s, t) {
            let mut iter = vec![0usize; self.adj.len()];
            loop {
                let pushed = self.dfs_push(s, t, f64::INFINITY, &level, &mut iter);
                if pushed <= EPS {
                    break;
                }
                flow += pushed;
            }
        }
        flow
    }

    /// Nodes reachable from `s` in the residual graph; after
    /// [`FlowNetwork::max_flow`] this is the source side of a minimum cut.
    pub fn source_side(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.adj.len()];
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(u) = stack.pop() {
            for &e in &self.adj[u] {
                let v = self.to[e];
                if !seen[v] && self.cap[e] > EPS {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }
}
