//! Level-graph augmenting-path maximum flow over `f64` capacities.

use std::collections::VecDeque;

#[derive(Clone, Debug)]
struct Edge {
    to: usize,
    cap: f64,
}

/// Residual network. Edges are stored in forward/backward pairs so that
/// edge `e ^ 1` is the reverse of `e`.
#[derive(Clone, Debug)]
pub struct FlowGraph {
    edges: Vec<Edge>,
    adjacency: Vec<Vec<usize>>,
    eps: f64,
}

impl FlowGraph {
    pub fn new(nodes: usize) -> Self {
        FlowGraph { edges: Vec::new(), adjacency: vec![Vec::new(); nodes], eps: 0.0 }
    }

    pub fn with_capacity(nodes: usize, edges: usize) -> Self {
        FlowGraph { edges: Vec::with_capacity(2 * edges), adjacency: vec![Vec::new(); nodes], eps: 0.0 }
    }

    /// Residual capacities at or below `eps` count as saturated.
    pub fn set_epsilon(&mut self, eps: f64) {
        self.eps = eps.max(0.0);
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn add_edge(&mut self, from: usize, to: usize, cap: f64) -> usize {
        let id = self.edges.len();
        self.edges.push(Edge { to, cap });
        self.edges.push(Edge { to: from, cap: 0.0 });
        self.adjacency[from].push(id);
        self.adjacency[to].push(id + 1);
        id
    }

    fn bfs_levels(&self, s: usize, t: usize, level: &mut [usize]) -> bool {
        level.fill(usize::MAX);
        level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.adjacency[u] {
                let edge = &self.edges[e];
                if edge.cap > self.eps && level[edge.to] == usize::MAX {
                    level[edge.to] = level[u] + 1;
                    queue.push_back(edge.to);
                }
            }
        }
        level[t] != usize::MAX
    }

    /// Finds one augmenting path in the level graph without recursion and
    /// pushes its bottleneck. Returns the amount pushed.
    fn augment(&mut self, s: usize, t: usize, level: &[usize], next: &mut [usize], path: &mut Vec<usize>) -> f64 {
        path.clear();
        let mut u = s;
        loop {
            if u == t {
                let bottleneck = path.iter().map(|&e| self.edges[e].cap).fold(f64::INFINITY, f64::min);
                for &e in path.iter() {
                    self.edges[e].cap -= bottleneck;
                    self.edges[e ^ 1].cap += bottleneck;
                }
                return bottleneck;
            }
            let mut advanced = false;
            while next[u] < self.adjacency[u].len() {
                let e = self.adjacency[u][next[u]];
                let edge = &self.edges[e];
                if edge.cap > self.eps && level[edge.to] == level[u] + 1 {
                    path.push(e);
                    u = edge.to;
                    advanced = true;
                    break;
                }
                next[u] += 1;
            }
            if !advanced {
                // dead end: retreat and skip the edge that led here
                match path.pop() {
                    Some(e) => {
                        u = self.edges[e ^ 1].to;
                        next[u] += 1;
                    }
                    None => return 0.0,
                }
            }
        }
    }

    /// Maximum `s`-`t` flow; the graph is left in its residual state.
    pub fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        if s == t {
            return 0.0;
        }
        let nodes = self.node_count();
        let mut level = vec![usize::MAX; nodes];
        let mut next = vec![0usize; nodes];
        let mut path = Vec::new();
        let mut total = 0.0;
        while self.bfs_levels(s, t, &mut level) {
            next.fill(0);
            loop {
                let pushed = self.augment(s, t, &level, &mut next, &mut path);
                if pushed <= 0.0 {
                    break;
                }
                total += pushed;
            }
        }
        total
    }

    /// Nodes reachable from `s` through residual capacity.
    pub fn reachable_from(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.node_count()];
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for &e in &self.adjacency[u] {
                let edge = &self.edges[e];
                if edge.cap > self.eps && !seen[edge.to] {
                    seen[edge.to] = true;
                    stack.push(edge.to);
                }
            }
        }
        seen
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_network() {
        // CLRS figure 26.1, max flow 23
        let mut g = FlowGraph::new(6);
        for (u, v, c) in [
            (0, 1, 16.0),
            (0, 2, 13.0),
            (2, 1, 4.0),
            (1, 3, 12.0),
            (3, 2, 9.0),
            (2, 4, 14.0),
            (4, 3, 7.0),
            (3, 5, 20.0),
            (4, 5, 4.0),
        ] {
            g.add_edge(u, v, c);
        }
        assert_eq!(g.max_flow(0, 5), 23.0);
        let side = g.reachable_from(0);
        assert!(side[0] && !side[5]);
    }

    #[test]
    fn disconnected_sink() {
        let mut g = FlowGraph::new(3);
        g.add_edge(0, 1, 5.0);
        assert_eq!(g.max_flow(0, 2), 0.0);
        assert_eq!(g.reachable_from(0), vec![true, true, false]);
    }

    #[test]
    fn parallel_edges_add_up() {
        let mut g = FlowGraph::new(2);
        g.add_edge(0, 1, 1.5);
        g.add_edge(0, 1, 2.5);
        assert_eq!(g.max_flow(0, 1), 4.0);
    }

    #[test]
    fn long_chain_has_no_recursion_limit() {
        let n = 200_000;
        let mut g = FlowGraph::new(n);
        for i in 0..n - 1 {
            g.add_edge(i, i + 1, 1.0 + (i % 3) as f64);
        }
        assert_eq!(g.max_flow(0, n - 1), 1.0);
    }
}
