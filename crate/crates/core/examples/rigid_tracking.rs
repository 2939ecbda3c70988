//! Frame-to-model rigid tracking and fusion of a static scene, compared with
//! the renderer's camera path.
//!
//! cargo run --release --example rigid_tracking [-- <scene.json>]

use splitfusion::eval::ate_rmse;
use splitfusion::pipeline::{PipelineConfig, RigidFusion};
use splitfusion::synth::SceneScript;

fn main() -> anyhow::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/rigid_room.json").to_string());
    let scene = SceneScript::load(&path)?;
    let gt = scene.ground_truth();
    let mut fusion = RigidFusion::new(PipelineConfig::default())?;
    for f in 0..scene.frames {
        fusion.process_frame(&scene.render(f).depth)?;
        // poses are relative to frame 0
        let est = fusion.trajectory.poses[f].1;
        let truth = gt.poses[0].1.inverse().compose(&gt.poses[f].1);
        println!(
            "frame {f:2}: position error {:.2} mm, rotation error {:.3} deg",
            1e3 * (est.translation - truth.translation).norm(),
            est.angle_to(&truth).to_degrees()
        );
    }
    let ate = ate_rmse(&fusion.trajectory, &gt)?;
    println!("ATE RMSE {:.4} m, max {:.4} m", ate.rmse, ate.max);
    if let Some(vol) = &fusion.volume {
        let mesh = vol.extract_mesh();
        let frame0 = gt.poses[0].1;
        let mut d: Vec<f64> = mesh.vertices.iter().map(|v| scene.scene_distance(0, &frame0.apply(v))).collect();
        d.sort_by(f64::total_cmp);
        println!(
            "mesh: {} triangles, vertex distance to the scene p50 {:.4} p95 {:.4} p99 {:.4} max {:.4} m (voxel {})",
            mesh.triangles.len(),
            d[d.len() / 2],
            d[d.len() * 95 / 100],
            d[d.len() * 99 / 100],
            d[d.len() - 1],
            vol.voxel_size
        );
    }
    Ok(())
}
