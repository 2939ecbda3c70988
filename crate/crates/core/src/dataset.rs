//! TUM RGB-D sequence loading, instance-mask ingestion, trajectory and mesh export.
//!
//! Layout of a sequence directory:
//!
//! ```text
//! <root>/depth.txt, rgb.txt      "timestamp filename" lines, '#' comments
//! <root>/groundtruth.txt         optional, TUM trajectory format
//! <root>/intrinsics.json         optional, defaults to the TUM camera
//! <masks>/<timestamp>.png        16-bit instance labels, 0 = background
//! <masks>/<timestamp>.json       {"instances": {"<id>": "<class>"}}
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthFrame, PixelMask, RigidTransform, TriangleMesh, Vec3};

pub const DEFAULT_ASSOCIATION_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEntry {
    pub timestamp: f64,
    /// Timestamp exactly as written in `depth.txt`; mask files are named after it.
    pub stamp: String,
    pub depth_path: PathBuf,
    pub color_path: PathBuf,
    pub mask_path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct SequenceManifest {
    pub root: PathBuf,
    pub frames: Vec<FrameEntry>,
    pub intrinsics: CameraIntrinsics,
    pub depth_scale: f64,
}

impl SequenceManifest {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Loads depth (scaled to meters) and color for frame `index`.
    pub fn load_frame(&self, index: usize) -> Result<DepthFrame> {
        let entry = self.frames.get(index).ok_or_else(|| {
            Error::InvalidArgument(format!("frame {index} out of range ({})", self.len()))
        })?;
        let k = self.intrinsics;
        let raw = image::open(&entry.depth_path)
            .map_err(|e| Error::image(&entry.depth_path, e))?
            .into_luma16();
        if raw.width() as usize != k.width || raw.height() as usize != k.height {
            return Err(Error::Frame {
                frame: entry.stamp.clone(),
                message: format!(
                    "depth image is {}x{}, intrinsics expect {}x{}",
                    raw.width(),
                    raw.height(),
                    k.width,
                    k.height
                ),
            });
        }
        let depth = raw
            .as_raw()
            .iter()
            .map(|&d| d as f64 / self.depth_scale)
            .collect();
        let color = if entry.color_path.exists() {
            let rgb = image::open(&entry.color_path)
                .map_err(|e| Error::image(&entry.color_path, e))?
                .into_rgb8();
            (rgb.width() as usize == k.width && rgb.height() as usize == k.height)
                .then(|| rgb.pixels().map(|p| p.0).collect())
        } else {
            None
        };
        DepthFrame::new(entry.timestamp, k, depth, color)
    }
}

/// One `"timestamp filename"` record of a TUM index file.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub timestamp: f64,
    pub stamp: String,
    pub file: String,
}

pub fn parse_index(text: &str) -> Result<Vec<IndexEntry>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(stamp), Some(file)) = (parts.next(), parts.next()) else {
            return Err(Error::Load(format!("line {}: expected `timestamp filename`", lineno + 1)));
        };
        let timestamp = stamp
            .parse::<f64>()
            .map_err(|_| Error::Load(format!("line {}: bad timestamp `{stamp}`", lineno + 1)))?;
        out.push(IndexEntry {
            timestamp,
            stamp: stamp.to_string(),
            file: file.to_string(),
        });
    }
    Ok(out)
}

/// Pairs entries of `a` and `b` whose timestamps differ by less than
/// `tolerance`, closest pairs first, each entry used at most once.
/// Returned pairs are sorted by `a` index.
pub fn associate(a: &[f64], b: &[f64], tolerance: f64) -> Vec<(usize, usize)> {
    let mut candidates = Vec::new();
    for (i, ta) in a.iter().enumerate() {
        for (j, tb) in b.iter().enumerate() {
            let diff = (ta - tb).abs();
            if diff < tolerance {
                candidates.push((diff, i, j));
            }
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort();
    pairs
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads a TUM sequence directory, pairing depth and color frames by timestamp.
pub fn load_tum_sequence(root: impl AsRef<Path>, tolerance: f64) -> Result<SequenceManifest> {
    let root = root.as_ref();
    let depth_index = root.join("depth.txt");
    let rgb_index = root.join("rgb.txt");
    for p in [&depth_index, &rgb_index] {
        if !p.is_file() {
            return Err(Error::Load(format!("missing index file {}", p.display())));
        }
    }
    let depth = parse_index(&read_text(&depth_index)?)?;
    let rgb = parse_index(&read_text(&rgb_index)?)?;

    let intrinsics_path = root.join("intrinsics.json");
    let intrinsics = if intrinsics_path.is_file() {
        let k: CameraIntrinsics = serde_json::from_str(&read_text(&intrinsics_path)?)
            .map_err(|e| Error::json(&intrinsics_path, e))?;
        k.validate()?;
        k
    } else {
        CameraIntrinsics::tum_default()
    };

    let td: Vec<f64> = depth.iter().map(|e| e.timestamp).collect();
    let tc: Vec<f64> = rgb.iter().map(|e| e.timestamp).collect();
    let pairs = associate(&td, &tc, tolerance);
    if pairs.is_empty() {
        return Err(Error::Load(format!(
            "no depth/color pairs within {tolerance} s in {}",
            root.display()
        )));
    }
    let mut frames = Vec::with_capacity(pairs.len());
    for (i, j) in pairs {
        let entry = FrameEntry {
            timestamp: depth[i].timestamp,
            stamp: depth[i].stamp.clone(),
            depth_path: root.join(&depth[i].file),
            color_path: root.join(&rgb[j].file),
            mask_path: None,
        };
        for p in [&entry.depth_path, &entry.color_path] {
            if !p.is_file() {
                return Err(Error::Load(format!("missing frame file {}", p.display())));
            }
        }
        if let Some(prev) = frames.last() {
            let prev: &FrameEntry = prev;
            if entry.timestamp <= prev.timestamp {
                return Err(Error::Load(format!(
                    "timestamps not strictly increasing at {}",
                    entry.stamp
                )));
            }
        }
        frames.push(entry);
    }
    Ok(SequenceManifest {
        root: root.to_path_buf(),
        frames,
        depth_scale: intrinsics.depth_scale,
        intrinsics,
    })
}

/// Per-pixel instance labels plus the class of each instance id.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMaskFrame {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u16>,
    pub classes: BTreeMap<u16, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClassSidecar {
    instances: BTreeMap<String, String>,
}

impl InstanceMaskFrame {
    pub fn background(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
            classes: BTreeMap::new(),
        }
    }

    pub fn new(
        width: usize,
        height: usize,
        labels: Vec<u16>,
        classes: BTreeMap<u16, String>,
    ) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "label image has {} pixels, expected {}",
                labels.len(),
                width * height
            )));
        }
        if let Some(id) = labels.iter().find(|&&l| l != 0 && !classes.contains_key(&l)) {
            return Err(Error::InvalidArgument(format!(
                "instance id {id} has no class entry"
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
            classes,
        })
    }

    /// Instance ids from the class table, ascending.
    pub fn instance_ids(&self) -> impl Iterator<Item = u16> + '_ {
        self.classes.keys().copied().filter(|&id| id != 0)
    }

    pub fn mask_of(&self, id: u16) -> PixelMask {
        PixelMask {
            width: self.width,
            height: self.height,
            bits: self.labels.iter().map(|&l| l == id).collect(),
        }
    }

    pub fn read(png: &Path, json: &Path) -> Result<Self> {
        let img = image::open(png).map_err(|e| Error::image(png, e))?.into_luma16();
        let sidecar: ClassSidecar = if json.is_file() {
            serde_json::from_str(&read_text(json)?).map_err(|e| Error::json(json, e))?
        } else {
            ClassSidecar {
                instances: BTreeMap::new(),
            }
        };
        let mut classes = BTreeMap::new();
        for (id, class) in sidecar.instances {
            let id: u16 = id
                .parse()
                .map_err(|_| Error::Load(format!("{}: bad instance id `{id}`", json.display())))?;
            classes.insert(id, class);
        }
        Self::new(
            img.width() as usize,
            img.height() as usize,
            img.into_raw(),
            classes,
        )
        .map_err(|e| Error::Load(format!("{}: {e}", png.display())))
    }

    pub fn write(&self, png: &Path, json: &Path) -> Result<()> {
        let img: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.labels.clone())
                .expect("label buffer size");
        img.save(png).map_err(|e| Error::image(png, e))?;
        let sidecar = ClassSidecar {
            instances: self
                .classes
                .iter()
                .map(|(id, c)| (id.to_string(), c.clone()))
                .collect(),
        };
        let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::json(json, e))?;
        fs::write(json, text).map_err(|e| Error::io(json, e))
    }
}

/// Loads one mask frame per manifest frame; frames without a mask file get
/// an all-background mask. Records found mask paths in the manifest.
pub fn load_masks(
    manifest: &mut SequenceManifest,
    mask_dir: impl AsRef<Path>,
) -> Result<Vec<InstanceMaskFrame>> {
    let dir = mask_dir.as_ref();
    let (w, h) = (manifest.intrinsics.width, manifest.intrinsics.height);
    let mut out = Vec::with_capacity(manifest.frames.len());
    for entry in &mut manifest.frames {
        let png = dir.join(format!("{}.png", entry.stamp));
        if !png.is_file() {
            entry.mask_path = None;
            out.push(InstanceMaskFrame::background(w, h));
            continue;
        }
        let json = dir.join(format!("{}.json", entry.stamp));
        let mask = InstanceMaskFrame::read(&png, &json)?;
        if mask.width != w || mask.height != h {
            return Err(Error::Frame {
                frame: entry.stamp.clone(),
                message: format!(
                    "mask is {}x{}, frame is {w}x{h}",
                    mask.width, mask.height
                ),
            });
        }
        entry.mask_path = Some(png);
        out.push(mask);
    }
    Ok(out)
}

/// Timestamped world-from-camera poses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<(f64, RigidTransform)>,
}

impl Trajectory {
    pub fn new(poses: Vec<(f64, RigidTransform)>) -> Result<Self> {
        if poses.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidArgument(
                "trajectory timestamps must be strictly increasing".into(),
            ));
        }
        Ok(Self { poses })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn push(&mut self, timestamp: f64, pose: RigidTransform) -> Result<()> {
        if let Some((last, _)) = self.poses.last() {
            if timestamp <= *last {
                return Err(Error::InvalidArgument(format!(
                    "timestamp {timestamp} not after {last}"
                )));
            }
        }
        self.poses.push((timestamp, pose));
        Ok(())
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.poses.iter().map(|(_, p)| p.translation).collect()
    }

    /// Left-multiplies every pose by `t`.
    pub fn transformed(&self, t: &RigidTransform) -> Trajectory {
        Trajectory {
            poses: self.poses.iter().map(|(s, p)| (*s, t.compose(p))).collect(),
        }
    }

    pub fn to_tum_string(&self) -> String {
        let mut s = String::new();
        for (t, pose) in &self.poses {
            let q = pose.quaternion();
            let tr = pose.translation;
            let _ = writeln!(
                s,
                "{:.6} {} {} {} {} {} {} {}",
                t,
                num(tr.x),
                num(tr.y),
                num(tr.z),
                num(q[0]),
                num(q[1]),
                num(q[2]),
                num(q[3])
            );
        }
        s
    }

    pub fn parse_tum(text: &str) -> Result<Self> {
        let mut poses = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Load(format!("line {}: not a number", lineno + 1)))?;
            if v.len() != 8 {
                return Err(Error::Load(format!(
                    "line {}: expected 8 fields, found {}",
                    lineno + 1,
                    v.len()
                )));
            }
            let pose =
                RigidTransform::from_quaternion([v[4], v[5], v[6], v[7]], Vec3::new(v[1], v[2], v[3]));
            poses.push((v[0], pose));
        }
        Trajectory::new(poses)
    }

    pub fn read_tum(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse_tum(&read_text(path)?).map_err(|e| Error::Load(format!("{}: {e}", path.display())))
    }
}

/// Shortest round-trip formatting, with `-0` printed as `0`.
fn num(x: f64) -> String {
    format!("{}", x + 0.0)
}

pub fn write_trajectory(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, traj.to_tum_string()).map_err(|e| Error::io(path, e))
}

pub fn mesh_to_ply(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", mesh.vertices.len());
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    if mesh.colors.is_some() {
        s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    let _ = writeln!(s, "element face {}", mesh.triangles.len());
    s.push_str("property list uchar int vertex_indices\nend_header\n");
    for (i, v) in mesh.vertices.iter().enumerate() {
        let _ = write!(s, "{:.6} {:.6} {:.6}", v.x, v.y, v.z);
        if let Some(c) = &mesh.colors {
            let _ = write!(s, " {} {} {}", c[i][0], c[i][1], c[i][2]);
        }
        s.push('\n');
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    s
}

pub fn write_mesh(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, mesh_to_ply(mesh)).map_err(|e| Error::io(path, e))
}

/// Writes depth in integer units of `depth_scale` per meter (16-bit PNG).
pub fn write_depth_png(frame: &DepthFrame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let scale = frame.intrinsics.depth_scale;
    let raw: Vec<u16> = frame
        .depth
        .iter()
        .map(|d| (d * scale).round().clamp(0.0, u16::MAX as f64) as u16)
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(frame.width() as u32, frame.height() as u32, raw).expect("depth size");
    img.save(path).map_err(|e| Error::image(path, e))
}

pub fn write_color_png(
    width: usize,
    height: usize,
    color: &[[u8; 3]],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u8> = color.iter().flatten().copied().collect();
    let img: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(width as u32, height as u32, raw).expect("color size");
    img.save(path).map_err(|e| Error::image(path, e))
}
