//! Splits one frame of a scene into per-instance segments and the
//! background, printing each segment's size and classification.
//!
//! cargo run --release --example scene_split [-- <scene.json> <frame>]

use splitfusion::pipeline::PipelineConfig;
use splitfusion::split::{split_frame, ClassTable, Rigidity};
use splitfusion::synth::SceneScript;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/split_scene.json").to_string());
    let frame: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let scene = SceneScript::load(&path)?;
    let mut table = ClassTable::default();
    table.insert("sheet", Rigidity::NonRigid);

    let r = scene.render(frame);
    let segments = split_frame(&r.depth, &r.masks, &table, &PipelineConfig::default().graph_cut)?;
    for s in &segments {
        let prior = if s.is_background() { 0 } else { r.masks.mask_of(s.instance_id).count() };
        println!(
            "id {:2} {:>10} {:?}: {:6} pixels (mask prior {:6}), {:6} points{}",
            s.instance_id,
            s.class_name,
            s.rigidity,
            s.mask.count(),
            prior,
            s.cloud.len(),
            if s.refinement_fallback { ", refinement fell back to the mask" } else { "" }
        );
    }
    let valid = r.depth.valid_mask().count();
    let covered: usize = segments.iter().map(|s| s.mask.count()).sum();
    println!("{covered} of {valid} valid pixels assigned");
    Ok(())
}
