use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{load_masks, load_tum_sequence, write_mesh, write_trajectory, DEFAULT_ASSOCIATION_TOLERANCE};
use crate::error::{Error, Result};
use crate::split::{ClassTable, Rigidity};

use super::{FrameReport, PipelineConfig, SceneState, SurfaceStatus};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub dataset: PathBuf,
    pub masks: Option<PathBuf>,
    pub config: PipelineConfig,
    pub out: PathBuf,
    /// Half-open range of dataset frame indices; all frames when absent.
    pub frames: Option<Range<usize>>,
    /// Write a reunited mesh every N processed frames (the last frame always).
    pub export_every: Option<usize>,
    /// Ignore masks and fuse every frame as one rigid scene.
    pub rigid_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSummary {
    pub id: u32,
    pub class: String,
    pub rigidity: Rigidity,
    pub status: SurfaceStatus,
    pub spawn_frame: usize,
    pub retired_frame: Option<usize>,
    pub frames_fused: usize,
    pub nodes: usize,
    pub observed_voxels: usize,
    pub clipped_samples: usize,
    pub triangles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub frames_processed: usize,
    pub first_frame: usize,
    pub error: Option<String>,
    pub surfaces: Vec<SurfaceSummary>,
    pub frames: Vec<FrameReport>,
}

/// Parses `a..b` (half-open) or `a..`.
pub fn parse_frame_range(text: &str) -> Result<Range<usize>> {
    let bad = || Error::InvalidArgument(format!("frame range `{text}` is not of the form a..b"));
    let (a, b) = text.split_once("..").ok_or_else(bad)?;
    let start = a.trim().parse().map_err(|_| bad())?;
    let end = if b.trim().is_empty() {
        usize::MAX
    } else {
        b.trim().parse().map_err(|_| bad())?
    };
    if end <= start {
        return Err(Error::InvalidArgument(format!("frame range `{text}` is empty")));
    }
    Ok(start..end)
}

/// Runs the pipeline over a dataset and writes trajectory, meshes, report and
/// per-iteration diagnostics to `opts.out`. Output gathered before a failure
/// is still written; the failure is then returned.
pub fn run_sequence(opts: &RunOptions) -> Result<RunReport> {
    opts.config.validate()?;
    let mut manifest = load_tum_sequence(&opts.dataset, DEFAULT_ASSOCIATION_TOLERANCE)?;
    if let Some(s) = opts.config.depth_scale {
        manifest.depth_scale = s;
    }
    let table = match &opts.config.class_table_path {
        Some(p) => ClassTable::with_overrides(p)?,
        None => ClassTable::default(),
    };
    let masks = match (&opts.masks, opts.rigid_only) {
        (Some(dir), false) => {
            let m = load_masks(&mut manifest, dir)?;
            table.check_masks(&m)?;
            Some(m)
        }
        _ => None,
    };
    let range = opts.frames.clone().unwrap_or(0..manifest.len());
    let range = range.start..range.end.min(manifest.len());
    if range.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no frames to process (dataset has {})",
            manifest.len()
        )));
    }
    fs::create_dir_all(&opts.out).map_err(|e| Error::io(&opts.out, e))?;

    let mut state = SceneState::new(opts.config.clone(), table)?;
    let mut failure = None;
    for i in range.clone() {
        let step = manifest
            .load_frame(i)
            .and_then(|frame| state.process_frame(&frame, masks.as_ref().map(|m| &m[i])).map(|_| ()));
        if let Err(e) = step {
            log::error!("frame {i}: {e}");
            failure = Some(e);
            break;
        }
        log::info!("frame {i}: {} surfaces", state.active_surfaces().count());
    }
    let report = write_outputs(&state, opts, range.start, failure.as_ref().map(|e| e.to_string()))?;
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

fn write_outputs(state: &SceneState, opts: &RunOptions, first: usize, error: Option<String>) -> Result<RunReport> {
    let out = &opts.out;
    write_trajectory(&state.trajectory, out.join("trajectory.txt"))?;
    let mut surfaces = Vec::new();
    for s in &state.surfaces {
        let mesh = s.canonical_mesh();
        write_mesh(&mesh, out.join(format!("surface_{}_canonical.ply", s.id)))?;
        surfaces.push(SurfaceSummary {
            id: s.id,
            class: s.class_name.clone(),
            rigidity: s.rigidity,
            status: s.status,
            spawn_frame: first + s.spawn_frame,
            retired_frame: s.retired_frame.map(|f| first + f),
            frames_fused: s.history.len(),
            nodes: s.graph.len(),
            observed_voxels: s.volume.observed_voxels(),
            clipped_samples: s.clipped_samples,
            triangles: mesh.triangles.len(),
        });
    }
    let n = state.frame_count();
    for p in 0..n {
        let due = opts.export_every.is_some_and(|k| k > 0 && p % k == 0);
        if due || p + 1 == n {
            write_mesh(&state.reunite(p), out.join(format!("reunited_{}.ply", first + p)))?;
        }
    }
    write_diagnostics(state, &out.join("diagnostics.jsonl"))?;
    let report = RunReport {
        frames_processed: n,
        first_frame: first,
        error,
        surfaces,
        frames: state.frames.clone(),
    };
    let path = out.join("report.json");
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

fn write_diagnostics(state: &SceneState, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for d in &state.diagnostics {
        writeln!(w, "{}", d.to_json_line()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_ranges() {
        assert_eq!(parse_frame_range("3..10").unwrap(), 3..10);
        assert_eq!(parse_frame_range("5..").unwrap(), 5..usize::MAX);
        assert!(parse_frame_range("5..5").is_err());
        assert!(parse_frame_range("x..2").is_err());
        assert!(parse_frame_range("7").is_err());
    }
}
