use crate::dataset::Trajectory;
use crate::error::{Error, Result};
use crate::geometry::{backproject, DepthFrame, RigidTransform};
use crate::icp::{rigid_icp, IterationDiagnostic, LiveTarget, MIN_CORRESPONDENCES};
use crate::tsdf::TsdfVolume;

use super::PipelineConfig;

/// Single-volume frame-to-model tracking and fusion of the whole frame.
#[derive(Debug, Clone)]
pub struct RigidFusion {
    pub config: PipelineConfig,
    pub volume: Option<TsdfVolume>,
    /// Canonical-to-camera pose of the latest frame.
    pub pose: RigidTransform,
    pub trajectory: Trajectory,
    pub diagnostics: Vec<IterationDiagnostic>,
    frames: usize,
}

impl RigidFusion {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            volume: None,
            pose: RigidTransform::identity(),
            trajectory: Trajectory::default(),
            diagnostics: Vec::new(),
            frames: 0,
        })
    }

    pub fn process_frame(&mut self, frame: &DepthFrame) -> Result<()> {
        let index = self.frames;
        let cfg = &self.config;
        match &mut self.volume {
            None => {
                let cloud = backproject(frame, None)?;
                if cloud.len() < cfg.min_segment_points {
                    return Err(Error::Precondition(format!("first frame has only {} points", cloud.len())));
                }
                let s = cfg.background_voxel();
                let mut vol = TsdfVolume::fit_to_points(&cloud.vertices, s, cfg.truncation_factor * s, cfg.max_weight)?;
                vol.integrate_rigid(frame, &RigidTransform::identity(), None);
                self.volume = Some(vol);
                self.trajectory.push(frame.timestamp, RigidTransform::identity())?;
            }
            Some(vol) => {
                let model = vol.raycast(&frame.intrinsics, &self.pose).to_point_cloud();
                if model.len() < MIN_CORRESPONDENCES {
                    return Err(Error::BackgroundLost(index));
                }
                let live = LiveTarget::new(frame, None);
                let (pose, sol) =
                    match rigid_icp(&model, &live, &self.pose, &cfg.energy_params(), &cfg.solver_config(), 0) {
                        Ok(r) => r,
                        Err(Error::TrackingLost { .. }) => return Err(Error::BackgroundLost(index)),
                        Err(e) => return Err(e),
                    };
                vol.integrate_rigid(frame, &pose, None);
                self.pose = pose;
                self.diagnostics.extend(sol.diagnostics);
                self.trajectory.push(frame.timestamp, pose.inverse())?;
            }
        }
        self.frames += 1;
        Ok(())
    }
}
