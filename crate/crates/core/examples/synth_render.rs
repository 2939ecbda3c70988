//! Renders a scene script to a TUM-layout directory and prints what each
//! frame contains.
//!
//! cargo run --release --example synth_render -- fixtures/split_scene.json /tmp/split

use std::collections::BTreeMap;

use splitfusion::synth::SceneScript;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let script = args
        .next()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/split_scene.json").to_string());
    let scene = SceneScript::load(&script)?;

    for f in (0..scene.frames).step_by(5) {
        let r = scene.render(f);
        let mut pixels: BTreeMap<u16, usize> = BTreeMap::new();
        for (&label, &d) in r.masks.labels.iter().zip(&r.depth.depth) {
            if d > 0.0 {
                *pixels.entry(label).or_default() += 1;
            }
        }
        let t = r.camera_pose.translation;
        println!(
            "frame {f:2}: camera at ({:+.3}, {:+.3}, {:+.3}), pixels per id {pixels:?}",
            t.x, t.y, t.z
        );
    }

    if let Some(out) = args.next() {
        scene.export(&out)?;
        println!("wrote {} frames to {out}", scene.frames);
    }
    Ok(())
}
