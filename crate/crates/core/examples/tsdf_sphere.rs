//! Fuses depth maps of a sphere seen from an orbiting camera and measures
//! the extracted surface against the true radius.
//!
//! cargo run --release --example tsdf_sphere [-- <voxel size>]

use splitfusion::geometry::{CameraIntrinsics, Vec3};
use splitfusion::synth::{CameraPath, SceneObject, SceneScript, Shape};
use splitfusion::tsdf::TsdfVolume;

fn main() -> anyhow::Result<()> {
    let voxel: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0.01);
    let radius = 0.2;
    let scene = SceneScript {
        frames: 24,
        intrinsics: CameraIntrinsics::new(200.0, 200.0, 127.5, 95.5, 256, 192, 5000.0)?,
        noise_sigma: 0.0,
        seed: 0,
        fps: 30.0,
        camera: CameraPath::Orbit {
            center: [0.0, 0.0, 0.0],
            radius: 0.8,
            height: 0.2,
            start_deg: 0.0,
            deg_per_frame: 15.0,
        },
        objects: vec![SceneObject {
            id: 0,
            class: "background".into(),
            shape: Shape::Sphere { center: [0.0; 3], radius },
            motion: None,
        }],
    };
    let n = (0.6 / voxel).ceil() as usize + 1;
    let mut vol = TsdfVolume::new(Vec3::repeat(-0.3), voxel, [n, n, n], 4.0 * voxel, 100.0)?;
    for f in 0..scene.frames {
        let r = scene.render(f);
        let stats = vol.integrate_rigid(&r.depth, &r.camera_pose.inverse(), None);
        let mesh = vol.extract_mesh();
        let err: Vec<f64> = mesh.vertices.iter().map(|v| (v.norm() - radius).abs()).collect();
        let mean = err.iter().sum::<f64>() / err.len().max(1) as f64;
        println!(
            "view {f:2}: {:6} voxels updated, {:6} vertices, radial error mean {:.4} max {:.4}",
            stats.updated_voxels,
            mesh.vertices.len(),
            mean,
            err.iter().copied().fold(0.0, f64::max)
        );
    }
    Ok(())
}
