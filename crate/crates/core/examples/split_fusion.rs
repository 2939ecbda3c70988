//! Runs the rigid room + bending sheet + moving box scene through the
//! pipeline in memory and reports tracking and reconstruction error.
//!
//! cargo run --release --example split_fusion [-- <scene.json>]

use std::time::Instant;

use splitfusion::eval::ate_rmse;
use splitfusion::geometry::Vec3;
use splitfusion::pipeline::{PipelineConfig, SceneState, Surface};
use splitfusion::synth::SceneScript;
use splitfusion::split::{ClassTable, Rigidity};

fn percentile(mut v: Vec<f64>, q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    v[((v.len() - 1) as f64 * q).round() as usize]
}

/// Distance to the scene objects a surface stands for.
fn distance(scene: &SceneScript, s: &Surface, frame: usize, p: &Vec3) -> f64 {
    scene
        .objects
        .iter()
        .enumerate()
        .filter(|(_, o)| if s.is_background() { o.is_background() } else { o.class == s.class_name })
        .map(|(k, _)| scene.surface_distance(k, frame, p))
        .fold(f64::INFINITY, f64::min)
}

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/split_scene.json").to_string());
    let scene = SceneScript::load(&path)?;
    let mut table = ClassTable::default();
    table.insert("sheet", Rigidity::NonRigid);
    let mut state = SceneState::new(PipelineConfig::default(), table)?;
    let cam0_inv = scene.camera_pose(0).inverse();

    let start = Instant::now();
    for f in 0..scene.frames {
        let r = scene.render(f);
        let report = state.process_frame(&r.depth, Some(&r.masks))?.clone();
        for s in &report.surfaces {
            print!(
                "frame {f:2} surface {} corr {:5} E_data {:.2e} -> {:.2e}",
                s.surface_id,
                s.n_corr,
                s.e_data_initial.unwrap_or(f64::NAN),
                s.e_data_final.unwrap_or(f64::NAN),
            );
            // mean warp error against the renderer's sample motion
            let surface = state.surface(s.surface_id).expect("reported surface exists");
            let id = scene.objects.iter().find(|o| !o.is_background() && o.class == surface.class_name).map(|o| o.id);
            match (surface.warp_at(f), id) {
                (Some(w), Some(id)) if surface.spawn_frame == 0 => {
                    let err: Vec<f64> = r
                        .warp_samples
                        .iter()
                        .filter(|x| x.object_id == id)
                        .map(|x| {
                            let c = cam0_inv.apply(&x.canonical);
                            (r.camera_pose.apply(&w.warp_point(&c, &w.bind_point(&c))) - x.live).norm()
                        })
                        .collect();
                    println!(", warp error {:.1} mm", 1e3 * err.iter().sum::<f64>() / err.len() as f64);
                }
                _ => println!(),
            }
        }
    }
    println!("elapsed {:.1} s", start.elapsed().as_secs_f64());

    let ate = ate_rmse(&state.trajectory, &scene.ground_truth())?;
    println!("camera ATE RMSE {:.4} m over {} frames", ate.rmse, ate.matched);

    let last = scene.frames - 1;
    let cam_last = scene.camera_pose(last);
    for s in &state.surfaces {
        let spawn_cam = scene.camera_pose(s.spawn_frame);
        let canon: Vec<f64> = s
            .canonical_mesh()
            .vertices
            .iter()
            .map(|v| distance(&scene, s, s.spawn_frame, &spawn_cam.apply(v)))
            .collect();
        let live: Vec<f64> = s
            .live_mesh(last)
            .map(|m| m.vertices.iter().map(|v| distance(&scene, s, last, &cam_last.apply(v))).collect())
            .unwrap_or_default();
        println!(
            "surface {} {:?} {:?}, voxel {}: canonical p50 {:.4} p95 {:.4} max {:.4} | live p50 {:.4} p95 {:.4} max {:.4}",
            s.id,
            s.class_name,
            s.status,
            s.volume.voxel_size,
            percentile(canon.clone(), 0.5),
            percentile(canon.clone(), 0.95),
            percentile(canon, 1.0),
            percentile(live.clone(), 0.5),
            percentile(live.clone(), 0.95),
            percentile(live, 1.0),
        );
    }
    Ok(())
}
