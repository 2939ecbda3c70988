//! Deformation graph: the per-surface warp field.
//!
//! Node `i` carries a canonical position `g_i` and a rigid motion
//! `(R_i, t_i)` centered at that position, mapping `p` to
//! `R_i (p - g_i) + g_i + t_i`. A surface point is warped by the normalized,
//! weighted sum of the motions of its `K` nearest nodes, with raw weights
//! `(1 - |v - g_i| / d_max)²` where `d_max` is the distance to the
//! `(K+1)`-th nearest node.

use std::collections::HashMap;

use crate::geometry::{fit_rigid, orthonormalize, so3_exp, Mat3, RigidTransform, Vec3};
use crate::spatial::KdTree;

pub const DEFAULT_K: usize = 6;
pub const DEFAULT_NODE_EDGES: usize = 4;
pub const DEFAULT_NODE_RADIUS: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphNode {
    pub position: Vec3,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl GraphNode {
    pub fn at(position: Vec3) -> Self {
        Self {
            position,
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// The node-centered rigid motion applied to `p`.
    #[inline]
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * (p - self.position) + self.translation + self.position
    }
}

/// Node indices and normalized weights binding one point to the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PointBinding {
    pub nodes: Vec<(usize, f64)>,
    pub d_max: f64,
}

impl PointBinding {
    pub fn single(node: usize) -> Self {
        Self {
            nodes: vec![(node, 1.0)],
            d_max: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BlendBinding {
    pub points: Vec<PointBinding>,
}

/// Per-node `(R_i, t_i)` at some instant; node positions are not included.
pub type WarpParams = Vec<(Mat3, Vec3)>;

#[derive(Debug, Clone)]
pub struct DeformationGraph {
    pub nodes: Vec<GraphNode>,
    /// Symmetric adjacency with edge weights, each list sorted by neighbor index.
    pub edges: Vec<Vec<(usize, f64)>>,
    /// Nodes influencing each point.
    pub k_neighbors: usize,
    pub node_radius: f64,
    pub node_edges: usize,
    index: Option<KdTree>,
}

/// Greedy cover: a point becomes a node unless an accepted node lies within `radius`.
pub fn sample_nodes(points: &[Vec3], radius: f64) -> Vec<Vec3> {
    let mut grid = NodeGrid::new(radius);
    let mut nodes = Vec::new();
    for p in points {
        if grid.any_within(p, radius, &nodes) {
            continue;
        }
        grid.insert(p, nodes.len());
        nodes.push(*p);
    }
    nodes
}

/// Links every node to its `n_edges` nearest nodes and symmetrizes; all
/// edge weights are 1.
pub fn connect_nodes(nodes: &[Vec3], n_edges: usize) -> Vec<Vec<(usize, f64)>> {
    let n = nodes.len();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| ((nodes[i] - nodes[j]).norm_squared(), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in others.iter().take(n_edges) {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    adj.into_iter()
        .map(|mut list| {
            list.sort_unstable();
            list.dedup();
            list.into_iter().map(|j| (j, 1.0)).collect()
        })
        .collect()
}

struct NodeGrid {
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl NodeGrid {
    fn new(cell: f64) -> Self {
        Self {
            cell,
            cells: HashMap::new(),
        }
    }

    fn key(&self, p: &Vec3) -> [i64; 3] {
        [
            (p.x / self.cell).floor() as i64,
            (p.y / self.cell).floor() as i64,
            (p.z / self.cell).floor() as i64,
        ]
    }

    fn insert(&mut self, p: &Vec3, id: usize) {
        let k = self.key(p);
        self.cells.entry(k).or_default().push(id);
    }

    fn any_within(&self, p: &Vec3, radius: f64, nodes: &[Vec3]) -> bool {
        let k = self.key(p);
        let r2 = radius * radius;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        if ids.iter().any(|&i| (nodes[i] - p).norm_squared() <= r2) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// Single-node graph at the origin carrying `initial`; binds every point with weight 1.
pub fn rigid_graph(initial: &RigidTransform) -> DeformationGraph {
    DeformationGraph::from_nodes(
        vec![GraphNode {
            position: Vec3::zeros(),
            rotation: initial.rotation,
            translation: initial.translation,
        }],
        DEFAULT_K,
        DEFAULT_NODE_RADIUS,
        DEFAULT_NODE_EDGES,
    )
}

pub fn bind_points(points: &[Vec3], graph: &DeformationGraph) -> BlendBinding {
    graph.bind(points)
}

pub fn warp_point(p: &Vec3, binding: &PointBinding, graph: &DeformationGraph) -> Vec3 {
    graph.warp_point(p, binding)
}

pub fn warp_normal(n: &Vec3, binding: &PointBinding, graph: &DeformationGraph) -> Option<Vec3> {
    graph.warp_normal(n, binding)
}

impl DeformationGraph {
    /// Identity-motion graph with the given nodes; edges computed from closeness.
    pub fn from_nodes(nodes: Vec<GraphNode>, k_neighbors: usize, node_radius: f64, node_edges: usize) -> Self {
        let positions: Vec<Vec3> = nodes.iter().map(|n| n.position).collect();
        let edges = connect_nodes(&positions, node_edges);
        let mut g = Self {
            nodes,
            edges,
            k_neighbors,
            node_radius,
            node_edges,
            index: None,
        };
        g.rebuild_index();
        g
    }

    /// Samples nodes over `points` and connects them, all at identity motion.
    pub fn from_points(points: &[Vec3], node_radius: f64, k_neighbors: usize, node_edges: usize) -> Self {
        let nodes = sample_nodes(points, node_radius)
            .into_iter()
            .map(GraphNode::at)
            .collect();
        Self::from_nodes(nodes, k_neighbors, node_radius, node_edges)
    }

    fn rebuild_index(&mut self) {
        let positions: Vec<Vec3> = self.nodes.iter().map(|n| n.position).collect();
        self.index = (positions.len() > self.k_neighbors).then(|| KdTree::new(&positions));
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_rigid(&self) -> bool {
        self.nodes.len() == 1
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn bind(&self, points: &[Vec3]) -> BlendBinding {
        BlendBinding {
            points: points.iter().map(|p| self.bind_point(p)).collect(),
        }
    }

    /// Blend weights for one point. Graphs with at most `K` nodes bind to all
    /// nodes with `d_max` twice the farthest node distance; a single node
    /// always gets weight 1.
    pub fn bind_point(&self, p: &Vec3) -> PointBinding {
        assert!(!self.nodes.is_empty(), "binding to an empty graph");
        if self.nodes.len() == 1 {
            return PointBinding::single(0);
        }
        let k = self.k_neighbors;
        let (candidates, d_max): (Vec<(usize, f64)>, f64) = match &self.index {
            Some(tree) => {
                let near = tree.nearest_k(p, k + 1);
                let d_max = near[k].1.sqrt();
                (near[..k].iter().map(|&(i, d2)| (i, d2.sqrt())).collect(), d_max)
            }
            None => {
                let all: Vec<(usize, f64)> = self
                    .nodes
                    .iter()
                    .enumerate()
                    .map(|(i, n)| (i, (n.position - p).norm()))
                    .collect();
                let far = all.iter().map(|x| x.1).fold(0.0, f64::max);
                (all, 2.0 * far)
            }
        };
        let mut nodes: Vec<(usize, f64)> = if d_max > 0.0 {
            candidates
                .iter()
                .filter(|(_, d)| *d < d_max)
                .map(|&(i, d)| (i, (1.0 - d / d_max).powi(2)))
                .collect()
        } else {
            Vec::new()
        };
        let total: f64 = nodes.iter().map(|x| x.1).sum();
        if total > 0.0 {
            for n in &mut nodes {
                n.1 /= total;
            }
        } else {
            // every candidate sits exactly at d_max (or all at distance 0): uniform
            let w = 1.0 / candidates.len() as f64;
            nodes = candidates.iter().map(|&(i, _)| (i, w)).collect();
        }
        nodes.sort_by_key(|x| x.0);
        PointBinding { nodes, d_max }
    }

    /// Binds only points whose nearest node lies within `range`.
    pub fn bind_within(&self, points: &[Vec3], range: f64) -> Vec<Option<PointBinding>> {
        points
            .iter()
            .map(|p| {
                let nearest = match &self.index {
                    Some(tree) => tree.nearest(p).map(|(_, d2)| d2.sqrt()),
                    None => self
                        .nodes
                        .iter()
                        .map(|n| (n.position - p).norm())
                        .min_by(f64::total_cmp),
                };
                nearest
                    .filter(|d| *d <= range)
                    .map(|_| self.bind_point(p))
            })
            .collect()
    }

    #[inline]
    pub fn warp_point(&self, p: &Vec3, binding: &PointBinding) -> Vec3 {
        let mut out = Vec3::zeros();
        for &(i, w) in &binding.nodes {
            out += self.nodes[i].transform_point(p) * w;
        }
        out
    }

    /// `normalize(Σ w_i R_i n)`; `None` when the blend degenerates.
    #[inline]
    pub fn warp_normal(&self, n: &Vec3, binding: &PointBinding) -> Option<Vec3> {
        let mut m = Vec3::zeros();
        for &(i, w) in &binding.nodes {
            m += self.nodes[i].rotation * n * w;
        }
        let norm = m.norm();
        (norm >= 1e-9).then(|| m / norm)
    }

    /// Best rigid fit of the node motions (exact for a single node).
    pub fn rigid_approximation(&self) -> RigidTransform {
        if self.nodes.len() < 3 {
            let n = &self.nodes[0];
            return RigidTransform {
                rotation: n.rotation,
                translation: n.translation + n.position - n.rotation * n.position,
            };
        }
        let src: Vec<Vec3> = self.nodes.iter().map(|n| n.position).collect();
        let dst: Vec<Vec3> = self.nodes.iter().map(|n| n.position + n.translation).collect();
        fit_rigid(&src, &dst).unwrap_or_default()
    }

    /// For a single-node graph, the equivalent SE(3) transform.
    pub fn as_rigid_transform(&self) -> RigidTransform {
        self.rigid_approximation()
    }

    /// Applies a rigid motion after the warp: `x ↦ delta(G(x))`.
    pub fn premultiplied(&self, delta: &RigidTransform) -> DeformationGraph {
        let mut g = self.clone();
        for n in &mut g.nodes {
            let moved = delta.apply(&(n.position + n.translation));
            n.rotation = orthonormalize(&(delta.rotation * n.rotation));
            n.translation = moved - n.position;
        }
        g
    }

    /// Applies per-node increments `[ω_i, δt_i]` (6 per node):
    /// `R_i ← exp([ω_i]×) R_i`, `t_i ← t_i + δt_i`.
    pub fn apply_increment(&self, step: &[f64]) -> DeformationGraph {
        assert_eq!(step.len(), 6 * self.nodes.len());
        let mut g = self.clone();
        for (i, n) in g.nodes.iter_mut().enumerate() {
            let s = &step[6 * i..6 * i + 6];
            let w = Vec3::new(s[0], s[1], s[2]);
            n.rotation = orthonormalize(&(so3_exp(&w) * n.rotation));
            n.translation += Vec3::new(s[3], s[4], s[5]);
        }
        g
    }

    pub fn params(&self) -> WarpParams {
        self.nodes.iter().map(|n| (n.rotation, n.translation)).collect()
    }

    /// Copy of the graph restricted to the first `params.len()` nodes with
    /// their motions replaced by `params`.
    pub fn with_params(&self, params: &WarpParams) -> DeformationGraph {
        let nodes: Vec<GraphNode> = self
            .nodes
            .iter()
            .zip(params)
            .map(|(n, (r, t))| GraphNode {
                position: n.position,
                rotation: *r,
                translation: *t,
            })
            .collect();
        if nodes.len() == self.nodes.len() {
            let mut g = self.clone();
            g.nodes = nodes;
            g
        } else {
            Self::from_nodes(nodes, self.k_neighbors, self.node_radius, self.node_edges)
        }
    }

    /// Adds nodes covering `points` that lie farther than `node_radius` from
    /// every node. New nodes inherit the blended motion of the existing graph
    /// at their position. Returns the number of nodes added.
    pub fn grow(&mut self, points: &[Vec3]) -> usize {
        if self.nodes.is_empty() || self.is_rigid() {
            return 0;
        }
        let r = self.node_radius;
        let mut grid = NodeGrid::new(r);
        let mut positions: Vec<Vec3> = self.nodes.iter().map(|n| n.position).collect();
        for (i, p) in positions.iter().enumerate() {
            grid.insert(p, i);
        }
        let mut added = Vec::new();
        for p in points {
            if grid.any_within(p, r, &positions) {
                continue;
            }
            grid.insert(p, positions.len());
            positions.push(*p);
            added.push(*p);
        }
        if added.is_empty() {
            return 0;
        }
        let new_nodes: Vec<GraphNode> = added
            .iter()
            .map(|p| {
                let b = self.bind_point(p);
                let warped = self.warp_point(p, &b);
                let nearest = b
                    .nodes
                    .iter()
                    .max_by(|a, c| a.1.total_cmp(&c.1))
                    .map(|x| x.0)
                    .unwrap_or(0);
                GraphNode {
                    position: *p,
                    rotation: self.nodes[nearest].rotation,
                    translation: warped - p,
                }
            })
            .collect();
        let count = new_nodes.len();
        self.nodes.extend(new_nodes);
        let positions: Vec<Vec3> = self.nodes.iter().map(|n| n.position).collect();
        self.edges = connect_nodes(&positions, self.node_edges);
        self.rebuild_index();
        count
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut impl Rng, s: f64) -> Vec3 {
        Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
    }

    #[test]
    fn single_point_single_node() {
        let p = Vec3::new(0.1, 0.2, 0.3);
        assert_eq!(sample_nodes(&[p], 0.05), vec![p]);
    }

    #[test]
    fn distant_points_two_nodes() {
        let pts = [Vec3::zeros(), Vec3::new(0.5, 0.0, 0.0)];
        assert_eq!(sample_nodes(&pts, 0.05).len(), 2);
    }

    #[test]
    fn grid_cover_property() {
        let r = 0.05;
        let mut pts = Vec::new();
        for i in 0..40 {
            for j in 0..30 {
                pts.push(Vec3::new(i as f64 * r / 2.0, j as f64 * r / 2.0, 1.0));
            }
        }
        let nodes = sample_nodes(&pts, r);
        let worst = pts
            .iter()
            .map(|p| nodes.iter().map(|g| (g - p).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max);
        assert!(worst <= r + 1e-12, "{worst}");
        // accepted nodes are pairwise farther apart than r
        for (i, a) in nodes.iter().enumerate() {
            for b in &nodes[i + 1..] {
                assert!((a - b).norm() > r);
            }
        }
    }

    #[test]
    fn connect_small_cases() {
        assert!(connect_nodes(&[Vec3::zeros()], 4)[0].is_empty());
        let e = connect_nodes(&[Vec3::zeros(), Vec3::x()], 4);
        assert_eq!(e, vec![vec![(1, 1.0)], vec![(0, 1.0)]]);
    }

    #[test]
    fn connect_matches_brute_force_knn() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let nodes: Vec<Vec3> = (0..10).map(|_| rand_vec(&mut rng, 1.0)).collect();
        let adj = connect_nodes(&nodes, 4);
        // oracle: all-pairs distance matrix, k-NN sets, symmetrized
        let mut expected = vec![std::collections::BTreeSet::new(); 10];
        for i in 0..10 {
            let mut d: Vec<(f64, usize)> = (0..10).filter(|&j| j != i).map(|j| ((nodes[i] - nodes[j]).norm(), j)).collect();
            d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            for &(_, j) in &d[..4] {
                expected[i].insert(j);
                expected[j].insert(i);
            }
        }
        for i in 0..10 {
            let got: Vec<usize> = adj[i].iter().map(|x| x.0).collect();
            let want: Vec<usize> = expected[i].iter().copied().collect();
            assert_eq!(got, want);
            assert!(adj[i].iter().all(|x| x.1 == 1.0));
        }
    }

    #[test]
    fn single_node_binds_with_weight_one() {
        let g = rigid_graph(&RigidTransform::identity());
        let b = g.bind(&[Vec3::new(3.0, -2.0, 1.0), Vec3::zeros()]);
        for p in &b.points {
            assert_eq!(p.nodes, vec![(0, 1.0)]);
            assert!(p.d_max.is_infinite());
        }
    }

    #[test]
    fn coincident_node_gets_largest_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let nodes: Vec<GraphNode> = (0..12).map(|_| GraphNode::at(rand_vec(&mut rng, 0.3))).collect();
        let g = DeformationGraph::from_nodes(nodes, 6, 0.05, 4);
        let target = g.nodes[5].position;
        let b = g.bind_point(&target);
        let best = b.nodes.iter().max_by(|a, c| a.1.total_cmp(&c.1)).unwrap();
        assert_eq!(best.0, 5);
    }

    #[test]
    fn small_graph_uses_all_nodes() {
        let nodes = vec![GraphNode::at(Vec3::zeros()), GraphNode::at(Vec3::x()), GraphNode::at(Vec3::y())];
        let g = DeformationGraph::from_nodes(nodes, 6, 0.05, 4);
        let b = g.bind_point(&Vec3::new(0.2, 0.1, 0.0));
        assert_eq!(b.nodes.len(), 3);
        assert!((b.nodes.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_graph_is_identity_warp() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Vec3> = (0..300).map(|_| rand_vec(&mut rng, 0.4)).collect();
        let g = DeformationGraph::from_points(&pts, 0.1, 6, 4);
        let b = g.bind(&pts);
        for (p, pb) in pts.iter().zip(&b.points) {
            assert!((g.warp_point(p, pb) - p).norm() < 1e-12);
            let n = Vec3::new(0.0, 0.6, 0.8);
            assert!((g.warp_normal(&n, pb).unwrap() - n).norm() < 1e-12);
        }
    }

    #[test]
    fn translated_single_node() {
        let g = rigid_graph(&RigidTransform::from_translation(Vec3::new(0.1, 0.0, 0.0)));
        let p = Vec3::new(0.3, 0.4, 2.0);
        let b = g.bind_point(&p);
        assert!((g.warp_point(&p, &b) - (p + Vec3::new(0.1, 0.0, 0.0))).norm() < 1e-15);
    }

    #[test]
    fn rotated_normal() {
        let r = RigidTransform::from_axis_angle(Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2), Vec3::zeros());
        let g = rigid_graph(&r);
        let n = g.warp_normal(&Vec3::x(), &PointBinding::single(0)).unwrap();
        assert!((n - Vec3::y()).norm() < 1e-12);
    }

    #[test]
    fn two_node_blend_matches_manual_expansion() {
        let mut g = DeformationGraph::from_nodes(
            vec![GraphNode::at(Vec3::new(0.0, 0.0, 1.0)), GraphNode::at(Vec3::new(0.2, 0.0, 1.0))],
            6,
            0.05,
            4,
        );
        let r0 = so3_exp(&Vec3::new(0.1, 0.0, 0.0));
        let r1 = so3_exp(&Vec3::new(0.0, -0.2, 0.05));
        g.nodes[0].rotation = r0;
        g.nodes[0].translation = Vec3::new(0.01, 0.0, 0.0);
        g.nodes[1].rotation = r1;
        g.nodes[1].translation = Vec3::new(0.0, 0.02, -0.01);
        let b = PointBinding {
            nodes: vec![(0, 0.5), (1, 0.5)],
            d_max: 1.0,
        };
        let p = Vec3::new(0.1, 0.05, 1.02);
        // term-by-term expansion
        let g0 = Vec3::new(0.0, 0.0, 1.0);
        let g1 = Vec3::new(0.2, 0.0, 1.0);
        let term0 = r0 * (p - g0) + Vec3::new(0.01, 0.0, 0.0) + g0;
        let term1 = r1 * (p - g1) + Vec3::new(0.0, 0.02, -0.01) + g1;
        let expected = 0.5 * term0 + 0.5 * term1;
        assert!((g.warp_point(&p, &b) - expected).norm() < 1e-15);
        let n = Vec3::new(0.0, 0.0, -1.0);
        let m = 0.5 * (r0 * n) + 0.5 * (r1 * n);
        assert!((g.warp_normal(&n, &b).unwrap() - m.normalize()).norm() < 1e-15);
    }

    #[test]
    fn degenerate_normal_blend_is_invalid() {
        let mut g = DeformationGraph::from_nodes(vec![GraphNode::at(Vec3::zeros()), GraphNode::at(Vec3::x())], 6, 0.05, 4);
        g.nodes[1].rotation = so3_exp(&Vec3::new(0.0, std::f64::consts::PI, 0.0));
        let b = PointBinding {
            nodes: vec![(0, 0.5), (1, 0.5)],
            d_max: 1.0,
        };
        assert!(g.warp_normal(&Vec3::x(), &b).is_none());
    }

    #[test]
    fn rigid_graph_equals_se3() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let t = RigidTransform::from_axis_angle(rand_vec(&mut rng, 1.5), rand_vec(&mut rng, 1.0));
            let g = rigid_graph(&t);
            let p = rand_vec(&mut rng, 3.0);
            let b = g.bind_point(&p);
            assert_eq!(g.warp_point(&p, &b), t.apply(&p));
            let rt = g.as_rigid_transform();
            assert!((rt.apply(&p) - t.apply(&p)).norm() < 1e-12);
        }
    }

    #[test]
    fn premultiplied_composes_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let pts: Vec<Vec3> = (0..200).map(|_| rand_vec(&mut rng, 0.3)).collect();
        let mut g = DeformationGraph::from_points(&pts, 0.1, 6, 4);
        let step: Vec<f64> = (0..6 * g.len()).map(|_| rng.random_range(-0.05..0.05)).collect();
        g = g.apply_increment(&step);
        let delta = RigidTransform::from_axis_angle(rand_vec(&mut rng, 0.3), rand_vec(&mut rng, 0.2));
        let h = g.premultiplied(&delta);
        let b = g.bind(&pts);
        for (p, pb) in pts.iter().zip(&b.points) {
            let want = delta.apply(&g.warp_point(p, pb));
            assert!((h.warp_point(p, pb) - want).norm() < 1e-12);
        }
    }

    #[test]
    fn grow_covers_new_points() {
        let pts: Vec<Vec3> = (0..20).map(|i| Vec3::new(i as f64 * 0.02, 0.0, 1.0)).collect();
        let mut g = DeformationGraph::from_points(&pts, 0.05, 6, 4);
        let shift = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 0.1));
        g = g.premultiplied(&shift);
        let n0 = g.len();
        let extra: Vec<Vec3> = (0..20).map(|i| Vec3::new(0.4 + i as f64 * 0.02, 0.0, 1.0)).collect();
        let added = g.grow(&extra);
        assert!(added > 0);
        assert_eq!(g.len(), n0 + added);
        for p in &extra {
            assert!(g.nodes.iter().any(|n| (n.position - p).norm() <= 0.05));
        }
        // new nodes continue the existing (pure translation) motion
        for n in &g.nodes[n0..] {
            assert!((n.translation - Vec3::new(0.0, 0.0, 0.1)).norm() < 1e-12);
        }
    }
}
