//! Dinic max-flow / min-cut on an undirected capacitated graph with terminal links.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
struct Arc {
    to: usize,
    cap: f64,
    rev: usize,
}

#[derive(Debug, Clone)]
pub struct FlowGraph {
    arcs: Vec<Vec<Arc>>,
    source: usize,
    sink: usize,
}

impl FlowGraph {
    /// `n` ordinary vertices; the source and sink are added internally.
    pub fn new(n: usize) -> Self {
        Self {
            arcs: vec![Vec::new(); n + 2],
            source: n,
            sink: n + 1,
        }
    }

    fn add_arc(&mut self, a: usize, b: usize, cap_ab: f64, cap_ba: f64) {
        let ra = self.arcs[b].len();
        let rb = self.arcs[a].len();
        self.arcs[a].push(Arc { to: b, cap: cap_ab, rev: ra });
        self.arcs[b].push(Arc { to: a, cap: cap_ba, rev: rb });
    }

    pub fn add_edge(&mut self, a: usize, b: usize, capacity: f64) {
        self.add_arc(a, b, capacity, capacity);
    }

    pub fn add_source_link(&mut self, v: usize, capacity: f64) {
        let s = self.source;
        self.add_arc(s, v, capacity, 0.0);
    }

    pub fn add_sink_link(&mut self, v: usize, capacity: f64) {
        let t = self.sink;
        self.add_arc(v, t, capacity, 0.0);
    }

    fn levels(&self) -> Option<Vec<i64>> {
        let mut level = vec![-1; self.arcs.len()];
        level[self.source] = 0;
        let mut queue = VecDeque::from([self.source]);
        while let Some(v) = queue.pop_front() {
            for a in &self.arcs[v] {
                if a.cap > 0.0 && level[a.to] < 0 {
                    level[a.to] = level[v] + 1;
                    queue.push_back(a.to);
                }
            }
        }
        (level[self.sink] >= 0).then_some(level)
    }

    fn augment(&mut self, level: &[i64], iter: &mut [usize]) -> f64 {
        // Iterative DFS: stack of vertices on the current path.
        let mut path: Vec<(usize, usize)> = Vec::new();
        let mut v = self.source;
        loop {
            if v == self.sink {
                let mut pushed = f64::INFINITY;
                for &(u, ai) in &path {
                    pushed = pushed.min(self.arcs[u][ai].cap);
                }
                for &(u, ai) in &path {
                    let (to, rev) = (self.arcs[u][ai].to, self.arcs[u][ai].rev);
                    self.arcs[u][ai].cap -= pushed;
                    self.arcs[to][rev].cap += pushed;
                }
                return pushed;
            }
            let mut advanced = false;
            while iter[v] < self.arcs[v].len() {
                let a = &self.arcs[v][iter[v]];
                if a.cap > 0.0 && level[a.to] == level[v] + 1 {
                    path.push((v, iter[v]));
                    v = a.to;
                    advanced = true;
                    break;
                }
                iter[v] += 1;
            }
            if !advanced {
                match path.pop() {
                    Some((u, _)) => {
                        iter[u] += 1;
                        v = u;
                    }
                    None => return 0.0,
                }
            }
        }
    }

    /// Runs max-flow and returns the flow value.
    pub fn solve(&mut self) -> f64 {
        let mut flow = 0.0;
        while let Some(level) = self.levels() {
            let mut iter = vec![0usize; self.arcs.len()];
            loop {
                let f = self.augment(&level, &mut iter);
                if f <= 0.0 {
                    break;
                }
                flow += f;
            }
        }
        flow
    }

    /// After `solve`, the vertices still reachable from the source.
    pub fn source_side(&self) -> Vec<bool> {
        let mut seen = vec![false; self.arcs.len()];
        seen[self.source] = true;
        let mut queue = VecDeque::from([self.source]);
        while let Some(v) = queue.pop_front() {
            for a in &self.arcs[v] {
                if a.cap > 1e-12 && !seen[a.to] {
                    seen[a.to] = true;
                    queue.push_back(a.to);
                }
            }
        }
        seen.truncate(self.arcs.len() - 2);
        seen
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_cut_at_weakest_edge() {
        // s -> 0 - 1 - 2 - 3 -> t with the 1-2 edge weakest
        let mut g = FlowGraph::new(4);
        g.add_source_link(0, f64::INFINITY);
        g.add_sink_link(3, f64::INFINITY);
        g.add_edge(0, 1, 5.0);
        g.add_edge(1, 2, 1.0);
        g.add_edge(2, 3, 4.0);
        assert_eq!(g.solve(), 1.0);
        assert_eq!(g.source_side(), vec![true, true, false, false]);
    }

    #[test]
    fn disconnected_vertices_stay_with_sink_side() {
        let mut g = FlowGraph::new(3);
        g.add_source_link(0, f64::INFINITY);
        g.add_sink_link(2, f64::INFINITY);
        g.add_edge(0, 1, 1.0);
        assert_eq!(g.solve(), 0.0);
        assert_eq!(g.source_side(), vec![true, true, false]);
    }

    #[test]
    fn parallel_paths_sum() {
        let mut g = FlowGraph::new(4);
        g.add_source_link(0, f64::INFINITY);
        g.add_sink_link(3, f64::INFINITY);
        g.add_edge(0, 1, 2.0);
        g.add_edge(1, 3, 3.0);
        g.add_edge(0, 2, 1.5);
        g.add_edge(2, 3, 1.0);
        assert_eq!(g.solve(), 3.0);
    }
}
