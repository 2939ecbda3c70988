//! Multi-surface fusion: split each frame, track and fuse every surface in
//! its own canonical volume, and reunite the surfaces per frame.

mod config;
mod rigid;
mod run;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use config::{IcpSettings, PipelineConfig};
pub use rigid::RigidFusion;
pub use run::{parse_frame_range, run_sequence, RunOptions, RunReport, SurfaceSummary};

use crate::dataset::{InstanceMaskFrame, Trajectory};
use crate::error::{Error, Result};
use crate::geometry::{compute_normals, DepthFrame, PixelMask, PointCloud, RigidTransform, TriangleMesh, Vec3};
use crate::graph::{rigid_graph, DeformationGraph, WarpParams};
use crate::icp::{rigid_icp, solve_warp, IterationDiagnostic, LiveTarget, WarpSolution};
use crate::split::{split_frame, ClassTable, Rigidity, SurfaceSegment};
use crate::synth::id_color;
use crate::tsdf::{TsdfVolume, VoxelBinding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceStatus {
    Active,
    Lost,
    Retired,
}

/// One independently fused surface. Its canonical frame is the camera frame
/// of the frame it was spawned in.
#[derive(Debug, Clone)]
pub struct Surface {
    pub id: u32,
    pub class_name: String,
    pub rigidity: Rigidity,
    pub volume: TsdfVolume,
    /// Canonical-to-live warp of the most recent frame.
    pub graph: DeformationGraph,
    pub voxel_binding: VoxelBinding,
    pub status: SurfaceStatus,
    /// Consecutive frames with a tracking failure.
    pub lost_frames: usize,
    pub spawn_frame: usize,
    pub retired_frame: Option<usize>,
    /// Warp parameters of every frame the surface was fused in.
    pub history: BTreeMap<usize, WarpParams>,
    pub clipped_samples: usize,
    /// Instance id of the last matched segment.
    pub last_instance: u16,
}

impl Surface {
    pub fn is_background(&self) -> bool {
        self.id == 0
    }

    /// Canonical-to-camera pose (rigid fit for deforming surfaces).
    pub fn pose(&self) -> RigidTransform {
        self.graph.rigid_approximation()
    }

    pub fn warp_at(&self, frame: usize) -> Option<DeformationGraph> {
        self.history.get(&frame).map(|p| self.graph.with_params(p))
    }

    pub fn canonical_mesh(&self) -> TriangleMesh {
        self.volume.extract_mesh()
    }

    /// Canonical mesh carried into the camera frame of `frame`.
    pub fn live_mesh(&self, frame: usize) -> Option<TriangleMesh> {
        let warp = self.warp_at(frame)?;
        let mut mesh = self.canonical_mesh();
        if warp.is_rigid() {
            let pose = warp.as_rigid_transform();
            for v in &mut mesh.vertices {
                *v = pose.apply(v);
            }
        } else {
            let binding = warp.bind(&mesh.vertices);
            for (v, b) in mesh.vertices.iter_mut().zip(&binding.points) {
                *v = warp.warp_point(v, b);
            }
        }
        Some(mesh)
    }
}

/// Per-surface outcome of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceFrameReport {
    pub surface_id: u32,
    pub instance_id: Option<u16>,
    pub status: SurfaceStatus,
    pub n_corr: usize,
    pub e_data_initial: Option<f64>,
    pub e_data_final: Option<f64>,
    pub e_prior_final: Option<f64>,
    pub nodes: usize,
    pub nodes_added: usize,
    pub clipped_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub index: usize,
    pub timestamp: f64,
    pub segments: usize,
    pub surfaces: Vec<SurfaceFrameReport>,
    pub spawned: Vec<u32>,
    pub retired: Vec<u32>,
}

/// Maximum-total-IoU one-to-one assignment of surfaces (rows) to segments
/// (columns), using only pairs with IoU at or above `threshold`. Exhaustive
/// for up to 12 segments, greedy by IoU beyond that.
pub fn associate(iou: &[Vec<f64>], threshold: f64) -> Vec<Option<usize>> {
    let rows = iou.len();
    let cols = iou.first().map_or(0, Vec::len);
    let allowed = |r: usize, c: usize| iou[r][c] >= threshold && iou[r][c] > 0.0;
    if cols <= 12 {
        let states = 1usize << cols;
        // best[r][mask]: best total for rows r.. given used columns `mask`
        let mut best = vec![vec![0.0f64; states]; rows + 1];
        let mut choice = vec![vec![None; states]; rows];
        for r in (0..rows).rev() {
            for mask in 0..states {
                let mut b = best[r + 1][mask];
                let mut ch = None;
                for c in 0..cols {
                    if mask & (1 << c) == 0 && allowed(r, c) {
                        let v = iou[r][c] + best[r + 1][mask | (1 << c)];
                        if v > b {
                            b = v;
                            ch = Some(c);
                        }
                    }
                }
                best[r][mask] = b;
                choice[r][mask] = ch;
            }
        }
        let mut out = Vec::with_capacity(rows);
        let mut mask = 0;
        for row in &choice {
            let ch = row[mask];
            if let Some(c) = ch {
                mask |= 1 << c;
            }
            out.push(ch);
        }
        return out;
    }
    let mut pairs: Vec<(usize, usize)> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .filter(|&(r, c)| allowed(r, c))
        .collect();
    pairs.sort_by(|a, b| iou[b.0][b.1].total_cmp(&iou[a.0][a.1]).then(a.cmp(b)));
    let mut out = vec![None; rows];
    let mut used = vec![false; cols];
    for (r, c) in pairs {
        if out[r].is_none() && !used[c] {
            out[r] = Some(c);
            used[c] = true;
        }
    }
    out
}

/// Everything the pipeline carries from frame to frame.
#[derive(Debug, Clone)]
pub struct SceneState {
    pub config: PipelineConfig,
    pub class_table: ClassTable,
    pub surfaces: Vec<Surface>,
    /// World-from-camera, world being the first camera frame.
    pub trajectory: Trajectory,
    pub frames: Vec<FrameReport>,
    pub diagnostics: Vec<IterationDiagnostic>,
    next_id: u32,
}

/// A surface's model as seen from its predicted pose.
struct Prediction {
    graph: DeformationGraph,
    model: PointCloud,
    footprint: PixelMask,
}

enum Track {
    Tracked(WarpSolution, usize),
    Lost,
}

impl SceneState {
    pub fn new(config: PipelineConfig, class_table: ClassTable) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            class_table,
            surfaces: Vec::new(),
            trajectory: Trajectory::default(),
            frames: Vec::new(),
            diagnostics: Vec::new(),
            next_id: 0,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn surface(&self, id: u32) -> Option<&Surface> {
        self.surfaces.iter().find(|s| s.id == id)
    }

    pub fn active_surfaces(&self) -> impl Iterator<Item = &Surface> {
        self.surfaces.iter().filter(|s| s.status != SurfaceStatus::Retired)
    }

    fn spawn(&mut self, frame: &DepthFrame, seg: &SurfaceSegment, index: usize) -> Result<u32> {
        let cfg = &self.config;
        let s = if seg.is_background() {
            cfg.background_voxel()
        } else {
            cfg.voxel_size
        };
        let mut volume = TsdfVolume::fit_to_points(&seg.cloud.vertices, s, cfg.truncation_factor * s, cfg.max_weight)?;
        let stats = volume.integrate_rigid(frame, &RigidTransform::identity(), Some(&seg.mask));
        let graph = match seg.rigidity {
            Rigidity::Rigid => rigid_graph(&RigidTransform::identity()),
            Rigidity::NonRigid => DeformationGraph::from_points(&seg.cloud.vertices, cfg.r_node, cfg.k_neighbors, cfg.node_edges),
        };
        let voxel_binding = volume.bind_voxels(&graph, 2.0 * cfg.r_node);
        let id = self.next_id;
        self.next_id += 1;
        let mut history = BTreeMap::new();
        history.insert(index, graph.params());
        log::debug!("frame {index}: spawned surface {id} ({}, {} points)", seg.class_name, seg.cloud.len());
        self.surfaces.push(Surface {
            id,
            class_name: seg.class_name.clone(),
            rigidity: seg.rigidity,
            volume,
            graph,
            voxel_binding,
            status: SurfaceStatus::Active,
            lost_frames: 0,
            spawn_frame: index,
            retired_frame: None,
            history,
            clipped_samples: stats.clipped_samples,
            last_instance: seg.instance_id,
        });
        Ok(id)
    }

    fn predict(surface: &Surface, graph: DeformationGraph, frame: &DepthFrame) -> Prediction {
        let ray = surface.volume.raycast(&frame.intrinsics, &graph.rigid_approximation());
        let footprint = PixelMask {
            width: ray.width,
            height: ray.height,
            bits: ray.vertices.iter().map(Option::is_some).collect(),
        };
        Prediction {
            graph,
            model: ray.to_point_cloud(),
            footprint,
        }
    }

    /// Grows the graph over the predicted model, then solves for the warp.
    fn track(&mut self, si: usize, mut pred: Prediction, live: &LiveTarget) -> Result<Track> {
        let surface = &mut self.surfaces[si];
        let mut added = 0;
        if surface.rigidity == Rigidity::NonRigid {
            added = pred.graph.grow(&pred.model.vertices);
            if added > 0 {
                surface.voxel_binding = surface.volume.bind_voxels(&pred.graph, 2.0 * self.config.r_node);
            }
        }
        let params = self.config.energy_params();
        let solver = self.config.solver_config();
        let result = if pred.graph.is_rigid() {
            rigid_icp(&pred.model, live, &pred.graph.as_rigid_transform(), &params, &solver, surface.id).map(|r| r.1)
        } else {
            solve_warp(&pred.model, &pred.graph, live, &params, &solver, surface.id)
        };
        // keep following the prediction even when tracking fails
        surface.graph = pred.graph;
        match result {
            Ok(sol) => Ok(Track::Tracked(sol, added)),
            Err(Error::TrackingLost { found, .. }) => {
                log::debug!("surface {}: tracking lost ({found} correspondences)", surface.id);
                Ok(Track::Lost)
            }
            Err(e) => Err(e),
        }
    }

    /// Fuses a tracked surface and records the frame's outcome.
    fn fuse(&mut self, si: usize, frame: &DepthFrame, seg: &SurfaceSegment, track: Track, index: usize) -> SurfaceFrameReport {
        let retire_after = self.config.retire_after;
        let surface = &mut self.surfaces[si];
        match track {
            Track::Tracked(sol, added) => {
                surface.graph = sol.graph;
                let stats = if surface.graph.is_rigid() {
                    surface.volume.integrate_rigid(frame, &surface.graph.as_rigid_transform(), Some(&seg.mask))
                } else {
                    surface
                        .volume
                        .integrate_nonrigid(frame, &surface.graph, &surface.voxel_binding, Some(&seg.mask))
                };
                surface.clipped_samples += stats.clipped_samples;
                surface.history.insert(index, surface.graph.params());
                surface.status = SurfaceStatus::Active;
                surface.lost_frames = 0;
                surface.last_instance = seg.instance_id;
                let report = SurfaceFrameReport {
                    surface_id: surface.id,
                    instance_id: Some(seg.instance_id),
                    status: surface.status,
                    n_corr: sol.correspondences,
                    e_data_initial: Some(sol.e_data_initial),
                    e_data_final: Some(sol.e_data_final),
                    e_prior_final: Some(sol.e_prior_final),
                    nodes: surface.graph.len(),
                    nodes_added: added,
                    clipped_samples: stats.clipped_samples,
                };
                self.diagnostics.extend(sol.diagnostics);
                report
            }
            Track::Lost => {
                surface.lost_frames += 1;
                surface.status = if surface.lost_frames >= retire_after {
                    surface.retired_frame = Some(index);
                    SurfaceStatus::Retired
                } else {
                    SurfaceStatus::Lost
                };
                SurfaceFrameReport {
                    surface_id: surface.id,
                    instance_id: Some(seg.instance_id),
                    status: surface.status,
                    n_corr: 0,
                    e_data_initial: None,
                    e_data_final: None,
                    e_prior_final: None,
                    nodes: surface.graph.len(),
                    nodes_added: 0,
                    clipped_samples: 0,
                }
            }
        }
    }

    /// Processes the next frame. `masks` of `None` means no instances.
    pub fn process_frame(&mut self, frame: &DepthFrame, masks: Option<&InstanceMaskFrame>) -> Result<&FrameReport> {
        let index = self.frames.len();
        let (w, h) = (frame.width(), frame.height());
        let background_only;
        let masks = match masks {
            Some(m) => m,
            None => {
                background_only = InstanceMaskFrame::background(w, h);
                &background_only
            }
        };
        let segments = split_frame(frame, masks, &self.class_table, &self.config.graph_cut)?;
        let bg_seg = segments.last().expect("split always yields a background segment");
        let objects = &segments[..segments.len() - 1];
        let mut report = FrameReport {
            index,
            timestamp: frame.timestamp,
            segments: segments.len(),
            surfaces: Vec::new(),
            spawned: Vec::new(),
            retired: Vec::new(),
        };

        if self.surfaces.is_empty() {
            if bg_seg.cloud.len() < self.config.min_segment_points {
                return Err(Error::Precondition(format!(
                    "first frame has only {} background points",
                    bg_seg.cloud.len()
                )));
            }
            report.spawned.push(self.spawn(frame, bg_seg, index)?);
            for seg in objects {
                if seg.cloud.len() >= self.config.min_segment_points {
                    report.spawned.push(self.spawn(frame, seg, index)?);
                }
            }
            self.trajectory.push(frame.timestamp, RigidTransform::identity())?;
            self.frames.push(report);
            return Ok(self.frames.last().expect("just pushed"));
        }

        let normals = compute_normals(frame);

        // background first: its motion predicts every other surface
        let prev_bg = self.surfaces[0].pose();
        let pred = Self::predict(&self.surfaces[0], self.surfaces[0].graph.clone(), frame);
        let live = LiveTarget::with_normals(frame, &normals, Some(&bg_seg.mask));
        let track = if pred.model.len() < crate::icp::MIN_CORRESPONDENCES {
            Track::Lost
        } else {
            self.track(0, pred, &live)?
        };
        if matches!(track, Track::Lost) {
            return Err(Error::BackgroundLost(index));
        }
        let bg_report = self.fuse(0, frame, bg_seg, track, index);
        report.surfaces.push(bg_report);
        let bg_pose = self.surfaces[0].pose();
        let delta = bg_pose.compose(&prev_bg.inverse());

        // predict the remaining surfaces and associate them with segments
        let candidates: Vec<usize> = (1..self.surfaces.len())
            .filter(|&i| self.surfaces[i].status != SurfaceStatus::Retired)
            .collect();
        let predictions: Vec<Prediction> = candidates
            .iter()
            .map(|&i| Self::predict(&self.surfaces[i], self.surfaces[i].graph.premultiplied(&delta), frame))
            .collect();
        let iou: Vec<Vec<f64>> = candidates
            .iter()
            .zip(&predictions)
            .map(|(&i, p)| {
                objects
                    .iter()
                    .map(|seg| {
                        if seg.class_name == self.surfaces[i].class_name {
                            p.footprint.iou(&seg.mask)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let assignment = associate(&iou, self.config.association_iou);
        let mut claimed = vec![false; objects.len()];

        for ((&si, pred), matched) in candidates.iter().zip(predictions).zip(assignment) {
            let Some(c) = matched else {
                // unmatched: follow the camera, keep status
                let s = &mut self.surfaces[si];
                s.graph = pred.graph;
                report.surfaces.push(SurfaceFrameReport {
                    surface_id: s.id,
                    instance_id: None,
                    status: s.status,
                    n_corr: 0,
                    e_data_initial: None,
                    e_data_final: None,
                    e_prior_final: None,
                    nodes: s.graph.len(),
                    nodes_added: 0,
                    clipped_samples: 0,
                });
                continue;
            };
            claimed[c] = true;
            let seg = &objects[c];
            let track = if pred.model.len() < crate::icp::MIN_CORRESPONDENCES {
                self.surfaces[si].graph = pred.graph;
                Track::Lost
            } else {
                let live = LiveTarget::with_normals(frame, &normals, Some(&seg.mask));
                self.track(si, pred, &live)?
            };
            let r = self.fuse(si, frame, seg, track, index);
            if r.status == SurfaceStatus::Retired {
                report.retired.push(r.surface_id);
            }
            report.surfaces.push(r);
        }

        for (seg, claimed) in objects.iter().zip(claimed) {
            if !claimed && seg.cloud.len() >= self.config.min_segment_points {
                report.spawned.push(self.spawn(frame, seg, index)?);
            }
        }

        self.trajectory.push(frame.timestamp, bg_pose.inverse())?;
        self.frames.push(report);
        Ok(self.frames.last().expect("just pushed"))
    }

    /// All surfaces fused at `frame`, warped into that frame's camera frame and
    /// colored by surface id.
    pub fn reunite(&self, frame: usize) -> TriangleMesh {
        let mut mesh = TriangleMesh::default();
        for s in &self.surfaces {
            if let Some(m) = s.live_mesh(frame) {
                mesh.append(&m, Some(id_color(s.id as u16)));
            }
        }
        mesh
    }

    /// Camera-frame vertices of every surface fused at `frame`, keyed by surface id.
    pub fn live_vertices(&self, frame: usize) -> BTreeMap<u32, Vec<Vec3>> {
        self.surfaces
            .iter()
            .filter_map(|s| s.live_mesh(frame).map(|m| (s.id, m.vertices)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;

    fn brute_force(iou: &[Vec<f64>], threshold: f64) -> f64 {
        fn go(r: usize, used: &mut Vec<bool>, iou: &[Vec<f64>], th: f64) -> f64 {
            if r == iou.len() {
                return 0.0;
            }
            let mut best = go(r + 1, used, iou, th);
            for c in 0..used.len() {
                if !used[c] && iou[r][c] >= th && iou[r][c] > 0.0 {
                    used[c] = true;
                    best = best.max(iou[r][c] + go(r + 1, used, iou, th));
                    used[c] = false;
                }
            }
            best
        }
        let cols = iou.first().map_or(0, Vec::len);
        go(0, &mut vec![false; cols], iou, threshold)
    }

    fn total(iou: &[Vec<f64>], a: &[Option<usize>]) -> f64 {
        a.iter().enumerate().filter_map(|(r, c)| c.map(|c| iou[r][c])).sum()
    }

    #[test]
    fn association_beats_greedy_trap() {
        // greedy takes (0,0)=0.9 and leaves row 1 unmatched; optimum is 0.8 + 0.8
        let iou = vec![vec![0.9, 0.8], vec![0.8, 0.1]];
        let a = associate(&iou, 0.3);
        assert_eq!(a, vec![Some(1), Some(0)]);
        assert!((total(&iou, &a) - brute_force(&iou, 0.3)).abs() < 1e-12);
    }

    #[test]
    fn association_respects_threshold() {
        let iou = vec![vec![0.29, 0.0], vec![0.0, 0.31]];
        assert_eq!(associate(&iou, 0.3), vec![None, Some(1)]);
        assert!(associate(&[], 0.3).is_empty());
        assert_eq!(associate(&[vec![], vec![]], 0.3), vec![None, None]);
    }

    #[test]
    fn association_matches_exhaustive_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let rows = rng.random_range(0..6);
            let cols = rng.random_range(1..6);
            let iou: Vec<Vec<f64>> = (0..rows)
                .map(|_| (0..cols).map(|_| if rng.random_bool(0.5) { rng.random_range(0.0..1.0) } else { 0.0 }).collect())
                .collect();
            let a = associate(&iou, 0.3);
            let mut used = std::collections::HashSet::new();
            for c in a.iter().flatten() {
                assert!(used.insert(*c));
            }
            assert!((total(&iou, &a) - brute_force(&iou, 0.3)).abs() < 1e-12);
        }
    }

    fn wall_frame(ts: f64, z: f64) -> DepthFrame {
        let k = CameraIntrinsics::new(100.0, 100.0, 39.5, 29.5, 80, 60, 1000.0).unwrap();
        let depth = (0..k.pixel_count())
            .map(|i| {
                let (u, v) = ((i % 80) as f64, (i / 80) as f64);
                z + 0.002 * (u - 40.0) + 0.003 * (v - 30.0) + 0.05 * ((u / 7.0).sin() * (v / 5.0).cos())
            })
            .collect();
        DepthFrame::new(ts, k, depth, None).unwrap()
    }

    fn run_twice(f: &DepthFrame) -> SceneState {
        let mut state = SceneState::new(PipelineConfig::default(), ClassTable::default()).unwrap();
        state.process_frame(f, None).unwrap();
        let mut g = f.clone();
        g.timestamp = 1.0 / 30.0;
        state.process_frame(&g, None).unwrap();
        state
    }

    #[test]
    fn repeated_frame_is_a_fixed_point() {
        // a fronto-parallel plane is reproduced exactly by the volume, so the model equals the live frame
        let mut f = wall_frame(0.0, 1.5);
        f.depth.fill(1.5);
        let state = run_twice(&f);
        let pose = state.trajectory.poses[1].1;
        assert!(pose.translation.norm() < 1e-6);
        assert!((pose.rotation - crate::geometry::Mat3::identity()).norm() < 1e-6);
        let r = &state.frames[1].surfaces[0];
        assert!(r.e_data_initial.unwrap() < 1e-12 && r.e_data_final.unwrap() < 1e-12);
        assert_eq!(state.surfaces.len(), 1);
        assert!(state.reunite(1).triangles.len() > 100);
    }

    #[test]
    fn repeated_curved_frame_drifts_below_a_millimeter() {
        let state = run_twice(&wall_frame(0.0, 1.5));
        let pose = state.trajectory.poses[1].1;
        assert!(pose.translation.norm() < 1e-3, "{}", pose.translation.norm());
        assert!(crate::geometry::rotation_angle(&pose.rotation) < 1e-3);
    }

    #[test]
    fn empty_first_frame_is_an_error() {
        let mut state = SceneState::new(PipelineConfig::default(), ClassTable::default()).unwrap();
        let mut f = wall_frame(0.0, 1.5);
        f.depth.fill(0.0);
        assert!(state.process_frame(&f, None).is_err());
    }
}
