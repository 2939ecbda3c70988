//! Scene decomposition: instance masks plus depth become refined rigid and
//! non-rigid surface segments.
//!
//! Each instance mask is refined by a 3D min-cut over a k-nearest-neighbor
//! graph of the frame's (subsampled) point cloud. Points under the mask are
//! tied to the source; points farther than `background_radius` from every
//! such seed are tied to the sink. Edge capacities are
//! `exp(-|p - q|² / σ²)` with `σ` twice the median neighbor distance, so the
//! cut prefers to run across depth discontinuities.

pub mod maxflow;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::InstanceMaskFrame;
use crate::error::{Error, Result};
use crate::geometry::{backproject_with_normals, compute_normals, DepthFrame, PixelMask, PointCloud, Vec3};
use crate::spatial::KdTree;
use maxflow::FlowGraph;

pub const BACKGROUND_CLASS: &str = "background";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rigidity {
    Rigid,
    #[serde(alias = "non-rigid", alias = "non_rigid")]
    NonRigid,
}

const COCO_NON_RIGID: &[&str] = &[
    "person", "bird", "cat", "dog", "horse", "sheep", "cow", "elephant", "bear", "zebra", "giraffe",
];

const COCO_RIGID: &[&str] = &[
    "bicycle", "car", "motorcycle", "airplane", "bus", "train", "truck", "boat", "traffic light",
    "fire hydrant", "stop sign", "parking meter", "bench", "backpack", "umbrella", "handbag", "tie",
    "suitcase", "frisbee", "skis", "snowboard", "sports ball", "kite", "baseball bat",
    "baseball glove", "skateboard", "surfboard", "tennis racket", "bottle", "wine glass", "cup",
    "fork", "knife", "spoon", "bowl", "banana", "apple", "sandwich", "orange", "broccoli", "carrot",
    "hot dog", "pizza", "donut", "cake", "chair", "couch", "potted plant", "bed", "dining table",
    "toilet", "tv", "laptop", "mouse", "remote", "keyboard", "cell phone", "microwave", "oven",
    "toaster", "sink", "refrigerator", "book", "clock", "vase", "scissors", "teddy bear",
    "hair drier", "toothbrush",
];

/// Semantic class name to rigidity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTable {
    classes: BTreeMap<String, Rigidity>,
}

impl Default for ClassTable {
    /// The 80 COCO classes: people and animals are non-rigid, everything else rigid.
    fn default() -> Self {
        let mut classes = BTreeMap::new();
        for c in COCO_NON_RIGID {
            classes.insert(c.to_string(), Rigidity::NonRigid);
        }
        for c in COCO_RIGID {
            classes.insert(c.to_string(), Rigidity::Rigid);
        }
        classes.insert(BACKGROUND_CLASS.to_string(), Rigidity::Rigid);
        Self { classes }
    }
}

impl ClassTable {
    pub fn empty() -> Self {
        let mut classes = BTreeMap::new();
        classes.insert(BACKGROUND_CLASS.to_string(), Rigidity::Rigid);
        Self { classes }
    }

    pub fn insert(&mut self, class: impl Into<String>, rigidity: Rigidity) {
        self.classes.insert(class.into(), rigidity);
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classify(&self, class: &str) -> Result<Rigidity> {
        self.classes
            .get(class)
            .copied()
            .ok_or_else(|| Error::UnknownClass(class.to_string()))
    }

    /// Default table with the entries of a `{"<class>": "rigid"|"nonrigid"}` file applied on top.
    pub fn with_overrides(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let overrides: BTreeMap<String, Rigidity> =
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let mut table = Self::default();
        table.classes.extend(overrides);
        Ok(table)
    }

    /// Fails on the first class used by `masks` that the table does not know.
    pub fn check_masks<'a>(&self, masks: impl IntoIterator<Item = &'a InstanceMaskFrame>) -> Result<()> {
        for m in masks {
            for class in m.classes.values() {
                self.classify(class)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphCutParams {
    pub k_neighbors: usize,
    /// Points farther than this from every seed are tied to the sink (meters).
    pub background_radius: f64,
    /// Pixel stride used when building the neighbor graph.
    pub subsample: usize,
    /// Refinements overlapping the prior by less than this IoU are discarded.
    pub min_iou: f64,
    /// Minimum fraction of prior pixels with valid depth.
    pub min_valid_fraction: f64,
}

impl Default for GraphCutParams {
    fn default() -> Self {
        Self {
            k_neighbors: 8,
            background_radius: 0.5,
            subsample: 2,
            min_iou: 0.3,
            min_valid_fraction: 0.3,
        }
    }
}

/// Symmetric k-nearest-neighbor graph over 3D points.
#[derive(Debug, Clone)]
pub struct NeighborGraph {
    pub points: Vec<Vec3>,
    /// Undirected edges `(i, j, weight)` with `i < j`.
    pub edges: Vec<(usize, usize, f64)>,
    pub sigma: f64,
}

impl NeighborGraph {
    pub fn build(points: Vec<Vec3>, k: usize) -> Self {
        let tree = KdTree::new(&points);
        let mut pairs = Vec::new();
        let mut dists = Vec::new();
        for (i, p) in points.iter().enumerate() {
            for (j, d2) in tree.nearest_k(p, k + 1) {
                if j == i {
                    continue;
                }
                dists.push(d2.sqrt());
                pairs.push((i.min(j), i.max(j), d2));
            }
        }
        pairs.sort_by_key(|p| (p.0, p.1));
        pairs.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
        dists.sort_by(f64::total_cmp);
        let median = dists.get(dists.len() / 2).copied().unwrap_or(0.0);
        let sigma = 2.0 * median;
        let edges = pairs
            .into_iter()
            .map(|(i, j, d2)| {
                let w = if sigma > 0.0 { (-d2 / (sigma * sigma)).exp() } else { 1.0 };
                (i, j, w.max(f64::MIN_POSITIVE))
            })
            .collect();
        Self {
            points,
            edges,
            sigma,
        }
    }

    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.points.len()];
        for &(i, j, w) in &self.edges {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        adj
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub mask: PixelMask,
    /// Set when the cut was degenerate or failed the IoU gate and the
    /// prior was returned unchanged.
    pub fallback: bool,
}

/// Refines a prior instance mask with a min-cut over the frame's point cloud.
pub fn refine_segment_graphcut(
    frame: &DepthFrame,
    prior: &PixelMask,
    params: &GraphCutParams,
) -> Result<Refinement> {
    let k = &frame.intrinsics;
    if prior.width != k.width || prior.height != k.height {
        return Err(Error::InvalidArgument("prior mask size differs from frame".into()));
    }
    let prior_count = prior.count();
    if prior_count == 0 {
        return Err(Error::Precondition("empty prior mask".into()));
    }
    let valid = frame.valid_mask();
    let prior_valid = prior.and(&valid);
    let valid_fraction = prior_valid.count() as f64 / prior_count as f64;
    if valid_fraction < params.min_valid_fraction {
        return Err(Error::Precondition(format!(
            "only {:.0}% of prior pixels have valid depth",
            valid_fraction * 100.0
        )));
    }
    let fallback = || Refinement {
        mask: prior.clone(),
        fallback: true,
    };

    let step = params.subsample.max(1);
    let mut points = Vec::new();
    let mut is_seed = Vec::new();
    for v in (0..k.height).step_by(step) {
        for u in (0..k.width).step_by(step) {
            let d = frame.depth_at(u, v);
            if d > 0.0 {
                points.push(k.backproject_pixel(u as f64, v as f64, d));
                is_seed.push(prior.get(u, v));
            }
        }
    }
    let seeds: Vec<Vec3> = points
        .iter()
        .zip(&is_seed)
        .filter(|(_, s)| **s)
        .map(|(p, _)| *p)
        .collect();
    if seeds.is_empty() {
        return Ok(fallback());
    }
    let seed_tree = KdTree::new(&seeds);
    let r2 = params.background_radius * params.background_radius;
    let is_sink: Vec<bool> = points
        .iter()
        .zip(&is_seed)
        .map(|(p, s)| !*s && seed_tree.nearest(p).is_some_and(|(_, d2)| d2 > r2))
        .collect();

    let graph = NeighborGraph::build(points, params.k_neighbors);
    let mut flow = FlowGraph::new(graph.points.len());
    for &(i, j, w) in &graph.edges {
        flow.add_edge(i, j, w);
    }
    for i in 0..graph.points.len() {
        if is_seed[i] {
            flow.add_source_link(i, f64::INFINITY);
        } else if is_sink[i] {
            flow.add_sink_link(i, f64::INFINITY);
        }
    }
    flow.solve();
    let foreground = flow.source_side();
    let n_fg = foreground.iter().filter(|f| **f).count();
    if n_fg == 0 || n_fg == foreground.len() {
        return Ok(fallback());
    }

    // Full-resolution labels from the nearest sampled point.
    let sample_tree = KdTree::new(&graph.points);
    let mut mask = PixelMask::empty(k.width, k.height);
    for v in 0..k.height {
        for u in 0..k.width {
            let d = frame.depth_at(u, v);
            if d <= 0.0 {
                continue;
            }
            let p = k.backproject_pixel(u as f64, v as f64, d);
            if let Some((j, _)) = sample_tree.nearest(&p) {
                if foreground[j] {
                    mask.set(u, v, true);
                }
            }
        }
    }
    if mask.iou(&prior_valid) < params.min_iou {
        return Ok(fallback());
    }
    Ok(Refinement {
        mask,
        fallback: false,
    })
}

/// One rigid or non-rigid piece of a frame.
#[derive(Debug, Clone)]
pub struct SurfaceSegment {
    /// 0 for the background segment.
    pub instance_id: u16,
    pub class_name: String,
    pub rigidity: Rigidity,
    pub mask: PixelMask,
    pub cloud: PointCloud,
    pub refinement_fallback: bool,
}

impl SurfaceSegment {
    pub fn is_background(&self) -> bool {
        self.instance_id == 0
    }
}

/// Splits a frame into one segment per visible instance plus a rigid
/// background segment holding every remaining valid pixel. Segments are
/// pairwise disjoint and cover exactly the valid-depth pixels; instances
/// come first in id order, the background last.
pub fn split_frame(
    frame: &DepthFrame,
    masks: &InstanceMaskFrame,
    table: &ClassTable,
    params: &GraphCutParams,
) -> Result<Vec<SurfaceSegment>> {
    let (w, h) = (frame.width(), frame.height());
    if masks.width != w || masks.height != h {
        return Err(Error::InvalidArgument(format!(
            "mask is {}x{}, frame is {w}x{h}",
            masks.width, masks.height
        )));
    }
    let valid = frame.valid_mask();
    let mut claim = vec![0u16; w * h];
    let mut instances = Vec::new();
    for id in masks.instance_ids() {
        let class = &masks.classes[&id];
        let rigidity = table.classify(class)?;
        let prior = masks.mask_of(id);
        if prior.and(&valid).is_empty() {
            continue;
        }
        let (refined, fallback) = match refine_segment_graphcut(frame, &prior, params) {
            Ok(r) => (r.mask, r.fallback),
            Err(Error::Precondition(msg)) => {
                log::debug!("instance {id}: skipping refinement ({msg})");
                (prior.clone(), true)
            }
            Err(e) => return Err(e),
        };
        for (i, bit) in refined.bits.iter().enumerate() {
            if *bit && valid.bits[i] && (claim[i] == 0 || masks.labels[i] == id) {
                claim[i] = id;
            }
        }
        instances.push((id, class.clone(), rigidity, fallback));
    }

    let normals = compute_normals(frame);
    let mut segments = Vec::new();
    for (id, class_name, rigidity, fallback) in instances {
        let mask = PixelMask {
            width: w,
            height: h,
            bits: claim.iter().map(|c| *c == id).collect(),
        };
        if mask.is_empty() {
            continue;
        }
        let cloud = backproject_with_normals(frame, &normals, Some(&mask));
        segments.push(SurfaceSegment {
            instance_id: id,
            class_name,
            rigidity,
            mask,
            cloud,
            refinement_fallback: fallback,
        });
    }
    let background = PixelMask {
        width: w,
        height: h,
        bits: claim
            .iter()
            .zip(&valid.bits)
            .map(|(c, v)| *v && *c == 0)
            .collect(),
    };
    let cloud = backproject_with_normals(frame, &normals, Some(&background));
    segments.push(SurfaceSegment {
        instance_id: 0,
        class_name: BACKGROUND_CLASS.to_string(),
        rigidity: Rigidity::Rigid,
        mask: background,
        cloud,
        refinement_fallback: false,
    });
    Ok(segments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;

    #[test]
    fn classify_default_table() {
        let t = ClassTable::default();
        assert_eq!(t.classify("person").unwrap(), Rigidity::NonRigid);
        assert_eq!(t.classify("dog").unwrap(), Rigidity::NonRigid);
        assert_eq!(t.classify("dining table").unwrap(), Rigidity::Rigid);
        assert!(matches!(t.classify("unicycle"), Err(Error::UnknownClass(_))));
        // 80 COCO classes plus the background entry
        assert_eq!(t.len(), 81);
    }

    #[test]
    fn override_file_extends_table() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("classes.json");
        std::fs::write(&p, r#"{"table": "rigid", "cloth": "nonrigid", "person": "rigid"}"#).unwrap();
        let t = ClassTable::with_overrides(&p).unwrap();
        assert_eq!(t.classify("table").unwrap(), Rigidity::Rigid);
        assert_eq!(t.classify("cloth").unwrap(), Rigidity::NonRigid);
        assert_eq!(t.classify("person").unwrap(), Rigidity::Rigid);
    }

    #[test]
    fn neighbor_graph_is_symmetric_with_positive_weights() {
        let points: Vec<Vec3> = (0..50).map(|i| Vec3::new(i as f64 * 0.01, (i % 7) as f64 * 0.01, 1.0)).collect();
        let g = NeighborGraph::build(points, 8);
        assert!(g.sigma > 0.0);
        let adj = g.adjacency();
        for (i, list) in adj.iter().enumerate() {
            assert!(!list.is_empty());
            for &(j, w) in list {
                assert!(w > 0.0);
                assert!(adj[j].iter().any(|&(k, _)| k == i));
            }
        }
    }

    fn flat_frame(depth: f64) -> DepthFrame {
        let k = CameraIntrinsics::new(50.0, 50.0, 15.5, 11.5, 32, 24, 1000.0).unwrap();
        DepthFrame::new(0.0, k, vec![depth; 32 * 24], None).unwrap()
    }

    #[test]
    fn empty_prior_is_precondition_error() {
        let f = flat_frame(1.0);
        let prior = PixelMask::empty(32, 24);
        assert!(matches!(
            refine_segment_graphcut(&f, &prior, &GraphCutParams::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn all_background_mask_gives_single_segment() {
        let f = flat_frame(1.0);
        let masks = InstanceMaskFrame::background(32, 24);
        let segs = split_frame(&f, &masks, &ClassTable::default(), &GraphCutParams::default()).unwrap();
        assert_eq!(segs.len(), 1);
        assert!(segs[0].is_background());
        assert_eq!(segs[0].rigidity, Rigidity::Rigid);
        assert_eq!(segs[0].mask.count(), 32 * 24);
        assert_eq!(segs[0].cloud.len(), 32 * 24);
    }

    #[test]
    fn unknown_class_rejected() {
        let f = flat_frame(1.0);
        let mut labels = vec![0u16; 32 * 24];
        labels[0] = 1;
        let masks = InstanceMaskFrame::new(32, 24, labels, BTreeMap::from([(1, "unicycle".to_string())])).unwrap();
        assert!(split_frame(&f, &masks, &ClassTable::default(), &GraphCutParams::default()).is_err());
    }
}
