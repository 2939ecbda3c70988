//! Sweeps the regularization weight on the bending sheet: each later frame is
//! solved from the undeformed graph and compared with the true deformation.
//!
//! cargo run --release --example lambda_sweep

use splitfusion::geometry::backproject;
use splitfusion::graph::DeformationGraph;
use splitfusion::icp::{solve_warp, EnergyParams, LiveTarget, SolverConfig};
use splitfusion::synth::SceneScript;

fn main() -> anyhow::Result<()> {
    let scene = SceneScript::load(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/bending_sheet.json"))?;
    let first = scene.render(0);
    let model = backproject(&first.depth, Some(&first.masks.mask_of(1)))?.with_normals_only();
    let graph = DeformationGraph::from_points(&model.vertices, 0.05, 6, 4);
    let cam = scene.camera_pose(0).inverse();
    let frames: Vec<_> = (1..scene.frames).step_by(4).map(|f| scene.render(f)).collect();

    println!("{:>8} {:>12} {:>12} {:>12}", "lambda", "E_data", "E_prior", "warp err");
    for lambda in [0.1, 0.5, 1.0, 5.0, 20.0, 100.0] {
        let params = EnergyParams { lambda, ..Default::default() };
        let (mut data, mut prior, mut err, mut n) = (0.0, 0.0, 0.0, 0usize);
        for r in &frames {
            let live = LiveTarget::new(&r.depth, Some(&r.masks.mask_of(1)));
            let sol = solve_warp(&model, &graph, &live, &params, &SolverConfig::default(), 1)?;
            data += sol.e_data_final;
            prior += sol.e_prior_final;
            for ws in &r.warp_samples {
                let c = cam.apply(&ws.canonical);
                let b = sol.graph.bind_point(&c);
                err += (r.camera_pose.apply(&sol.graph.warp_point(&c, &b)) - ws.live).norm();
                n += 1;
            }
        }
        let k = frames.len() as f64;
        println!("{lambda:8.1} {:12.3e} {:12.3e} {:10.2} mm", data / k, prior / k, 1e3 * err / n as f64);
    }
    Ok(())
}
