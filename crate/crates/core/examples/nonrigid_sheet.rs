//! Fits the warp field of a bending sheet: the frame-0 sheet points are the
//! model, every later frame is solved from the undeformed graph, and the
//! result is compared with the renderer's ground-truth deformation.
//!
//! cargo run --release --example nonrigid_sheet

use splitfusion::geometry::backproject;
use splitfusion::graph::DeformationGraph;
use splitfusion::icp::{solve_warp, EnergyParams, LiveTarget, SolverConfig};
use splitfusion::synth::SceneScript;

fn main() -> splitfusion::Result<()> {
    env_logger::init();
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/bending_sheet.json").to_string());
    let scene = SceneScript::load(&path)?;
    let first = scene.render(0);
    let sheet = first.masks.mask_of(1);
    let model = backproject(&first.depth, Some(&sheet))?.with_normals_only();
    let graph = DeformationGraph::from_points(&model.vertices, 0.05, 6, 4);
    println!("model {} points, {} nodes", model.len(), graph.len());
    let cam = scene.camera_pose(0);

    for f in 1..scene.frames {
        let r = scene.render(f);
        let live = LiveTarget::new(&r.depth, Some(&r.masks.mask_of(1)));
        let sol = solve_warp(&model, &graph, &live, &EnergyParams::default(), &SolverConfig::default(), 1)?;
        let (mut err, mut tan, mut n) = (0.0, 0.0f64, 0);
        for ws in &r.warp_samples {
            let c = cam.inverse().apply(&ws.canonical);
            let b = sol.graph.bind_point(&c);
            let e = r.camera_pose.apply(&sol.graph.warp_point(&c, &b)) - ws.live;
            err += e.norm();
            tan = tan.max((e.x * e.x + e.y * e.y).sqrt());
            n += 1;
        }
        println!(
            "frame {f:2}: e_data {:.3e} -> {:.3e} ({:.1}%), {} steps, warp error mean {:.4} m, max tangential {:.4} m",
            sol.e_data_initial,
            sol.e_data_final,
            100.0 * sol.e_data_final / sol.e_data_initial.max(f64::MIN_POSITIVE),
            sol.diagnostics.iter().filter(|d| d.accepted).count(),
            err / n as f64,
            tan
        );
    }
    Ok(())
}
