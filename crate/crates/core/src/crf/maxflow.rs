//! Dinic max-flow on a residual graph with `f64` capacities.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
struct Arc {
    to: usize,
    cap: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct FlowGraph {
    arcs: Vec<Arc>,
    adj: Vec<Vec<usize>>,
    /// Residuals at or below this are treated as saturated.
    eps: f64,
}

impl FlowGraph {
    pub(crate) fn new(nodes: usize) -> Self {
        FlowGraph {
            arcs: Vec::new(),
            adj: vec![Vec::new(); nodes],
            eps: 0.0,
        }
    }

    /// Adds `u -> v` with capacity `cap` and `v -> u` with `rev_cap`.
    pub(crate) fn add_edge(&mut self, u: usize, v: usize, cap: f64, rev_cap: f64) {
        debug_assert!(cap >= 0.0 && rev_cap >= 0.0);
        if cap.is_finite() {
            self.eps = self.eps.max(cap * 1e-13);
        }
        if rev_cap.is_finite() {
            self.eps = self.eps.max(rev_cap * 1e-13);
        }
        self.adj[u].push(self.arcs.len());
        self.arcs.push(Arc { to: v, cap });
        self.adj[v].push(self.arcs.len());
        self.arcs.push(Arc { to: u, cap: rev_cap });
    }

    fn levels(&self, s: usize) -> Vec<usize> {
        let mut level = vec![usize::MAX; self.adj.len()];
        level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &a in &self.adj[u] {
                let arc = &self.arcs[a];
                if arc.cap > self.eps && level[arc.to] == usize::MAX {
                    level[arc.to] = level[u] + 1;
                    queue.push_back(arc.to);
                }
            }
        }
        level
    }

    /// Runs max-flow and returns its value.
    pub(crate) fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let mut total = 0.0;
        loop {
            let level = self.levels(s);
            if level[t] == usize::MAX {
                return total;
            }
            let mut next = vec![0usize; self.adj.len()];
            // iterative DFS holding the arc stack of the current path
            let mut path: Vec<usize> = Vec::new();
            let mut u = s;
            loop {
                if u == t {
                    let push = path.iter().map(|&a| self.arcs[a].cap).fold(f64::INFINITY, f64::min);
                    for &a in &path {
                        self.arcs[a].cap -= push;
                        self.arcs[a ^ 1].cap += push;
                    }
                    total += push;
                    // restart from the tail of the first saturated arc
                    let cut = path.iter().position(|&a| self.arcs[a].cap <= self.eps).unwrap_or(0);
                    u = if cut == 0 { s } else { self.arcs[path[cut - 1]].to };
                    path.truncate(cut);
                    continue;
                }
                let mut advanced = false;
                while next[u] < self.adj[u].len() {
                    let a = self.adj[u][next[u]];
                    let arc = &self.arcs[a];
                    if arc.cap > self.eps && level[arc.to] == level[u] + 1 {
                        path.push(a);
                        u = arc.to;
                        advanced = true;
                        break;
                    }
                    next[u] += 1;
                }
                if advanced {
                    continue;
                }
                // dead end: retreat
                if u == s {
                    break;
                }
                let a = path.pop().expect("non-empty path");
                u = self.arcs[a ^ 1].to;
                next[u] += 1;
            }
        }
    }

    /// Nodes reachable from `s` in the residual graph.
    pub(crate) fn source_side(&self, s: usize) -> Vec<bool> {
        let level = self.levels(s);
        level.iter().map(|&l| l != usize::MAX).collect()
    }
}
