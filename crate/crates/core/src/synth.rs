//! Deterministic synthetic RGB-D sequences rendered by exact ray casting
//! against analytic primitives, with ground-truth poses, masks and
//! deformations.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{write_color_png, write_depth_png, write_trajectory, InstanceMaskFrame, Trajectory};
use crate::error::{Error, Result};
use crate::geometry::{so3_exp, CameraIntrinsics, DepthFrame, RigidTransform, Vec3};

/// Real depth sensors report nothing closer than this.
pub const NEAR_CLIP: f64 = 0.5;

const TAU: f64 = std::f64::consts::TAU;

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScript {
    pub frames: usize,
    pub intrinsics: CameraIntrinsics,
    /// Standard deviation of additive depth noise, meters.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_fps")]
    pub fps: f64,
    pub camera: CameraPath,
    pub objects: Vec<SceneObject>,
}

fn default_fps() -> f64 {
    30.0
}

fn background_class() -> String {
    crate::split::BACKGROUND_CLASS.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    /// Mask label; 0 marks background geometry.
    pub id: u16,
    #[serde(default = "background_class")]
    pub class: String,
    pub shape: Shape,
    #[serde(default)]
    pub motion: Option<Motion>,
}

/// Shapes are given in world coordinates at frame 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    /// Axis-aligned box seen from inside.
    Room { min: [f64; 3], max: [f64; 3] },
    /// Rectangle `center + a·u + b·v`, `|a| ≤ half_u`, `|b| ≤ half_v`.
    Plane {
        center: [f64; 3],
        u_axis: [f64; 3],
        v_axis: [f64; 3],
        half_u: f64,
        half_v: f64,
    },
    Box {
        center: [f64; 3],
        half_extents: [f64; 3],
        #[serde(default)]
        axis_angle: [f64; 3],
    },
    Sphere { center: [f64; 3], radius: f64 },
    /// Rectangle displaced along its normal by
    /// `amplitude · sin(2π f_s (a + half_u)) · sin(2π f_t frame)`.
    Sheet {
        center: [f64; 3],
        u_axis: [f64; 3],
        v_axis: [f64; 3],
        half_u: f64,
        half_v: f64,
        amplitude: f64,
        /// Cycles per meter along `u`.
        spatial_frequency: f64,
        /// Cycles per frame.
        temporal_frequency: f64,
    },
    /// Radius `radius + amplitude · sin(2π f_t frame)`.
    PulsingSphere {
        center: [f64; 3],
        radius: f64,
        amplitude: f64,
        temporal_frequency: f64,
    },
}

/// Constant per-frame rigid motion about the shape's center.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    #[serde(default)]
    pub velocity: [f64; 3],
    /// Axis-angle per frame.
    #[serde(default)]
    pub angular_velocity: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CameraPath {
    Static {
        position: [f64; 3],
        #[serde(default)]
        axis_angle: [f64; 3],
    },
    /// Linear motion from `start` (frame 0) to `end` (last frame).
    Line {
        start: [f64; 3],
        end: [f64; 3],
        #[serde(default)]
        look_at: Option<[f64; 3]>,
    },
    /// Circle around `center` at `height` (along y), always looking at `center`.
    Orbit {
        center: [f64; 3],
        radius: f64,
        #[serde(default)]
        height: f64,
        #[serde(default)]
        start_deg: f64,
        deg_per_frame: f64,
    },
    /// Sinusoidal jitter on each axis with phases 120° apart.
    XyzShake {
        center: [f64; 3],
        amplitude: [f64; 3],
        /// Frames per cycle.
        period: f64,
        #[serde(default)]
        rotation_deg: f64,
    },
}

/// World-from-camera rotation looking from `eye` at `target`, camera y down.
pub fn look_at(eye: &Vec3, target: &Vec3) -> RigidTransform {
    let z = (target - eye).normalize();
    let mut x = z.cross(&Vec3::new(0.0, -1.0, 0.0));
    if x.norm() < 1e-9 {
        x = Vec3::x();
    }
    let x = x.normalize();
    let y = z.cross(&x);
    RigidTransform {
        rotation: crate::geometry::Mat3::from_columns(&[x, y, z]),
        translation: *eye,
    }
}

impl CameraPath {
    /// World-from-camera pose at `frame` of a `frames`-long sequence.
    pub fn pose(&self, frame: usize, frames: usize) -> RigidTransform {
        let f = frame as f64;
        match self {
            CameraPath::Static { position, axis_angle } => RigidTransform::from_axis_angle(v3(*axis_angle), v3(*position)),
            CameraPath::Line { start, end, look_at: target } => {
                let s = if frames > 1 { f / (frames - 1) as f64 } else { 0.0 };
                let p = v3(*start) + (v3(*end) - v3(*start)) * s;
                match target {
                    Some(t) => look_at(&p, &v3(*t)),
                    None => RigidTransform::from_translation(p),
                }
            }
            CameraPath::Orbit {
                center,
                radius,
                height,
                start_deg,
                deg_per_frame,
            } => {
                let th = (start_deg + f * deg_per_frame).to_radians();
                let c = v3(*center);
                let eye = c + Vec3::new(radius * th.sin(), *height, -radius * th.cos());
                look_at(&eye, &c)
            }
            CameraPath::XyzShake {
                center,
                amplitude,
                period,
                rotation_deg,
            } => {
                let ph = TAU * f / period;
                let third = TAU / 3.0;
                let p = v3(*center)
                    + Vec3::new(
                        amplitude[0] * ph.sin(),
                        amplitude[1] * (ph + third).sin(),
                        amplitude[2] * (ph + 2.0 * third).sin(),
                    );
                let r = rotation_deg.to_radians();
                let w = Vec3::new(
                    r * (ph + 0.5 * third).sin(),
                    r * (ph + 1.5 * third).sin(),
                    r * (ph + 2.5 * third).sin(),
                );
                RigidTransform::from_axis_angle(w, p)
            }
        }
    }
}

struct Frame3 {
    c: Vec3,
    u: Vec3,
    v: Vec3,
    n: Vec3,
}

fn sheet_frame(center: &[f64; 3], u: &[f64; 3], v: &[f64; 3]) -> Frame3 {
    let u = v3(*u).normalize();
    let v = v3(*v);
    let v = (v - u * u.dot(&v)).normalize();
    Frame3 {
        c: v3(*center),
        n: u.cross(&v),
        u,
        v,
    }
}

fn slab(o: f64, d: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
    if d == 0.0 {
        return (o >= lo && o <= hi).then_some((f64::NEG_INFINITY, f64::INFINITY));
    }
    let (a, b) = ((lo - o) / d, (hi - o) / d);
    Some((a.min(b), a.max(b)))
}

fn box_hit(o: &Vec3, d: &Vec3, half: &Vec3) -> Option<f64> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        let (l, h) = slab(o[a], d[a], -half[a], half[a])?;
        t0 = t0.max(l);
        t1 = t1.min(h);
    }
    if t1 < t0 {
        return None;
    }
    if t0 > 0.0 {
        Some(t0)
    } else if t1 > 0.0 {
        Some(t1)
    } else {
        None
    }
}

fn sphere_hit(o: &Vec3, d: &Vec3, c: &Vec3, r: f64) -> Option<f64> {
    if r <= 0.0 {
        return None;
    }
    let oc = o - c;
    let a = d.dot(d);
    let b = d.dot(&oc);
    let cc = oc.norm_squared() - r * r;
    let disc = b * b - a * cc;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    // stable roots of a t² + 2 b t + cc
    let q = -(b + b.signum() * s);
    let (mut t0, mut t1) = if q == 0.0 { (0.0, 0.0) } else { (q / a, cc / q) };
    if t0 > t1 {
        std::mem::swap(&mut t0, &mut t1);
    }
    if t0 > 0.0 {
        Some(t0)
    } else if t1 > 0.0 {
        Some(t1)
    } else {
        None
    }
}

fn rect_hit(o: &Vec3, d: &Vec3, f: &Frame3, hu: f64, hv: f64) -> Option<f64> {
    let dn = d.dot(&f.n);
    if dn == 0.0 {
        return None;
    }
    let t = (f.c - o).dot(&f.n) / dn;
    if !(t > 0.0) {
        return None;
    }
    let p = o + d * t - f.c;
    (p.dot(&f.u).abs() <= hu && p.dot(&f.v).abs() <= hv).then_some(t)
}

fn sheet_height(a: f64, hu: f64, amp: f64, fs: f64) -> f64 {
    amp * (TAU * fs * (a + hu)).sin()
}

fn sheet_hit(o: &Vec3, d: &Vec3, f: &Frame3, hu: f64, hv: f64, amp: f64, fs: f64) -> Option<f64> {
    if amp == 0.0 {
        return rect_hit(o, d, f, hu, hv);
    }
    let rel = o - f.c;
    let (a0, b0, w0) = (rel.dot(&f.u), rel.dot(&f.v), rel.dot(&f.n));
    let (da, db, dw) = (d.dot(&f.u), d.dot(&f.v), d.dot(&f.n));
    let mut lo = 0.0f64;
    let mut hi = f64::INFINITY;
    // padded so a vanishing amplitude still leaves a slab to search
    for (o, d, h) in [(a0, da, hu), (b0, db, hv), (w0, dw, amp.abs() + 1e-9)] {
        let (l, u) = slab(o, d, -h, h)?;
        lo = lo.max(l);
        hi = hi.min(u);
    }
    if !(hi > lo) || !hi.is_finite() {
        return None;
    }
    let g = |t: f64| w0 + t * dw - sheet_height(a0 + t * da, hu, amp, fs);
    const STEPS: usize = 64;
    let mut t_prev = lo;
    let mut g_prev = g(lo);
    if g_prev == 0.0 && lo > 0.0 {
        return Some(lo);
    }
    for k in 1..=STEPS {
        let t = lo + (hi - lo) * k as f64 / STEPS as f64;
        let gv = g(t);
        if gv == 0.0 {
            return Some(t);
        }
        if (gv > 0.0) != (g_prev > 0.0) {
            let (mut a, mut b, mut ga) = (t_prev, t, g_prev);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if m <= a || m >= b {
                    break;
                }
                let gm = g(m);
                if gm == 0.0 {
                    return Some(m);
                }
                if (gm > 0.0) == (ga > 0.0) {
                    a = m;
                    ga = gm;
                } else {
                    b = m;
                }
            }
            return Some(0.5 * (a + b));
        }
        t_prev = t;
        g_prev = gv;
    }
    None
}

impl Shape {
    fn center(&self) -> Vec3 {
        match self {
            Shape::Room { min, max } => (v3(*min) + v3(*max)) * 0.5,
            Shape::Plane { center, .. }
            | Shape::Box { center, .. }
            | Shape::Sphere { center, .. }
            | Shape::Sheet { center, .. }
            | Shape::PulsingSphere { center, .. } => v3(*center),
        }
    }

    /// Nearest positive ray parameter in the shape's own (frame-0) coordinates.
    fn intersect(&self, o: &Vec3, d: &Vec3, frame: usize) -> Option<f64> {
        let f = frame as f64;
        match self {
            Shape::Room { min, max } => {
                let c = (v3(*min) + v3(*max)) * 0.5;
                box_hit(&(o - c), d, &((v3(*max) - v3(*min)) * 0.5))
            }
            Shape::Plane {
                center,
                u_axis,
                v_axis,
                half_u,
                half_v,
            } => rect_hit(o, d, &sheet_frame(center, u_axis, v_axis), *half_u, *half_v),
            Shape::Box {
                center,
                half_extents,
                axis_angle,
            } => {
                let rt = so3_exp(&v3(*axis_angle)).transpose();
                box_hit(&(rt * (o - v3(*center))), &(rt * d), &v3(*half_extents))
            }
            Shape::Sphere { center, radius } => sphere_hit(o, d, &v3(*center), *radius),
            Shape::Sheet {
                center,
                u_axis,
                v_axis,
                half_u,
                half_v,
                amplitude,
                spatial_frequency,
                temporal_frequency,
            } => {
                let amp = amplitude * (TAU * temporal_frequency * f).sin();
                sheet_hit(o, d, &sheet_frame(center, u_axis, v_axis), *half_u, *half_v, amp, *spatial_frequency)
            }
            Shape::PulsingSphere {
                center,
                radius,
                amplitude,
                temporal_frequency,
            } => sphere_hit(o, d, &v3(*center), radius + amplitude * (TAU * temporal_frequency * f).sin()),
        }
    }

    /// Unsigned distance from a point (shape coordinates) to the surface at `frame`.
    fn distance(&self, p: &Vec3, frame: usize) -> f64 {
        let f = frame as f64;
        let box_dist = |q: Vec3, half: Vec3| {
            let e = q.abs() - half;
            let outside = e.map(|x| x.max(0.0)).norm();
            let inside = e.max().min(0.0);
            (outside + inside).abs()
        };
        match self {
            Shape::Room { min, max } => {
                let c = (v3(*min) + v3(*max)) * 0.5;
                box_dist(p - c, (v3(*max) - v3(*min)) * 0.5)
            }
            Shape::Box {
                center,
                half_extents,
                axis_angle,
            } => box_dist(so3_exp(&v3(*axis_angle)).transpose() * (p - v3(*center)), v3(*half_extents)),
            Shape::Sphere { center, radius } => ((p - v3(*center)).norm() - radius).abs(),
            Shape::PulsingSphere {
                center,
                radius,
                amplitude,
                temporal_frequency,
            } => ((p - v3(*center)).norm() - (radius + amplitude * (TAU * temporal_frequency * f).sin())).abs(),
            Shape::Plane {
                center,
                u_axis,
                v_axis,
                half_u,
                half_v,
            } => {
                let fr = sheet_frame(center, u_axis, v_axis);
                let r = p - fr.c;
                let da = (r.dot(&fr.u).abs() - half_u).max(0.0);
                let db = (r.dot(&fr.v).abs() - half_v).max(0.0);
                (da * da + db * db + r.dot(&fr.n).powi(2)).sqrt()
            }
            Shape::Sheet {
                center,
                u_axis,
                v_axis,
                half_u,
                half_v,
                amplitude,
                spatial_frequency,
                temporal_frequency,
            } => {
                let fr = sheet_frame(center, u_axis, v_axis);
                let amp = amplitude * (TAU * temporal_frequency * f).sin();
                let r = p - fr.c;
                let (pa, pb, pw) = (r.dot(&fr.u), r.dot(&fr.v), r.dot(&fr.n));
                let db = (pb.abs() - half_v).max(0.0);
                let cost = |a: f64| (a - pa).powi(2) + (sheet_height(a, *half_u, amp, *spatial_frequency) - pw).powi(2);
                // dense scan, then golden-section refinement around the best sample
                const N: usize = 2000;
                let step = 2.0 * half_u / N as f64;
                let mut best = (-half_u, cost(-half_u));
                for k in 1..=N {
                    let a = -half_u + k as f64 * step;
                    let c = cost(a);
                    if c < best.1 {
                        best = (a, c);
                    }
                }
                let (mut lo, mut hi) = ((best.0 - step).max(-half_u), (best.0 + step).min(*half_u));
                let gr = 0.5 * (5f64.sqrt() - 1.0);
                for _ in 0..80 {
                    let m1 = hi - gr * (hi - lo);
                    let m2 = lo + gr * (hi - lo);
                    if cost(m1) < cost(m2) {
                        hi = m2;
                    } else {
                        lo = m1;
                    }
                }
                let c = cost(0.5 * (lo + hi)).min(best.1);
                (c + db * db).sqrt()
            }
        }
    }
}

impl SceneObject {
    /// World-from-shape transform at `frame`.
    pub fn pose(&self, frame: usize) -> RigidTransform {
        let Some(m) = self.motion else {
            return RigidTransform::identity();
        };
        let f = frame as f64;
        let c = self.shape.center();
        let r = so3_exp(&(v3(m.angular_velocity) * f));
        RigidTransform {
            rotation: r,
            translation: c + v3(m.velocity) * f - r * c,
        }
    }

    pub fn is_background(&self) -> bool {
        self.id == 0
    }
}

/// A canonical (frame 0) world point and where the scene moved it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpSample {
    pub object_id: u16,
    pub canonical: Vec3,
    pub live: Vec3,
}

#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub depth: DepthFrame,
    pub masks: InstanceMaskFrame,
    /// World-from-camera.
    pub camera_pose: RigidTransform,
    pub warp_samples: Vec<WarpSample>,
}

const PALETTE: [[u8; 3]; 8] = [
    [180, 180, 170],
    [220, 90, 70],
    [70, 150, 220],
    [90, 200, 110],
    [230, 200, 60],
    [170, 90, 200],
    [60, 200, 200],
    [240, 140, 40],
];

pub fn id_color(id: u16) -> [u8; 3] {
    PALETTE[id as usize % PALETTE.len()]
}

impl SceneScript {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: SceneScript =
            serde_json::from_str(text).map_err(|e| Error::Load(format!("scene script: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.frames == 0 {
            return Err(Error::InvalidArgument("scene needs at least one frame".into()));
        }
        if !(self.noise_sigma >= 0.0) || !(self.fps > 0.0) {
            return Err(Error::InvalidArgument("noise_sigma must be >= 0 and fps > 0".into()));
        }
        for o in &self.objects {
            if let Shape::Sheet { amplitude, .. } | Shape::PulsingSphere { amplitude, .. } = o.shape {
                if amplitude < 0.0 {
                    return Err(Error::InvalidArgument(format!("object {}: negative amplitude", o.id)));
                }
            }
            if o.id != 0 && o.class == crate::split::BACKGROUND_CLASS {
                return Err(Error::InvalidArgument(format!("object {} needs a class name", o.id)));
            }
        }
        Ok(())
    }

    pub fn timestamp(&self, frame: usize) -> f64 {
        frame as f64 / self.fps
    }

    pub fn camera_pose(&self, frame: usize) -> RigidTransform {
        self.camera.pose(frame, self.frames)
    }

    pub fn ground_truth(&self) -> Trajectory {
        Trajectory {
            poses: (0..self.frames).map(|f| (self.timestamp(f), self.camera_pose(f))).collect(),
        }
    }

    /// Nearest hit along the world ray `o + t d`: `(t, object index)`.
    pub fn cast(&self, o: &Vec3, d: &Vec3, frame: usize) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (k, obj) in self.objects.iter().enumerate() {
            let inv = obj.pose(frame).inverse();
            let (ol, dl) = (inv.apply(o), inv.apply_vector(d));
            if let Some(t) = obj.shape.intersect(&ol, &dl, frame) {
                if best.is_none_or(|b| t < b.0) {
                    best = Some((t, k));
                }
            }
        }
        best
    }

    /// Distance from a world point to object `index` at `frame`.
    pub fn surface_distance(&self, index: usize, frame: usize, p: &Vec3) -> f64 {
        let obj = &self.objects[index];
        obj.shape.distance(&obj.pose(frame).inverse().apply(p), frame)
    }

    /// Distance from a world point to the nearest object at `frame`.
    pub fn scene_distance(&self, frame: usize, p: &Vec3) -> f64 {
        (0..self.objects.len())
            .map(|k| self.surface_distance(k, frame, p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn object_index(&self, id: u16) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    pub fn render(&self, frame: usize) -> RenderedFrame {
        assert!(frame < self.frames, "frame {frame} out of range");
        let k = self.intrinsics;
        let cam = self.camera_pose(frame);
        let n = k.pixel_count();
        let mut depth = vec![0.0; n];
        let mut labels = vec![0u16; n];
        let mut color = vec![[0u8; 3]; n];
        for v in 0..k.height {
            for u in 0..k.width {
                let i = k.index(u, v);
                let d = cam.rotation * k.ray(u as f64, v as f64);
                if let Some((t, obj)) = self.cast(&cam.translation, &d, frame) {
                    if t >= NEAR_CLIP {
                        depth[i] = t;
                        labels[i] = self.objects[obj].id;
                        color[i] = id_color(self.objects[obj].id);
                    }
                }
            }
        }
        if self.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (frame as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let noise = Normal::new(0.0, self.noise_sigma).expect("finite sigma");
            for d in depth.iter_mut().filter(|d| **d > 0.0) {
                *d = (*d + noise.sample(&mut rng)).max(0.0);
            }
        }
        let classes: BTreeMap<u16, String> = self
            .objects
            .iter()
            .filter(|o| o.id != 0)
            .map(|o| (o.id, o.class.clone()))
            .collect();
        let masks = InstanceMaskFrame {
            width: k.width,
            height: k.height,
            labels,
            classes,
        };
        let depth = DepthFrame::new(self.timestamp(frame), k, depth, Some(color)).expect("rendered depth is valid");
        RenderedFrame {
            depth,
            masks,
            camera_pose: cam,
            warp_samples: self.warp_samples(frame),
        }
    }

    /// Ground-truth motion of sample points on every non-background object.
    pub fn warp_samples(&self, frame: usize) -> Vec<WarpSample> {
        let f = frame as f64;
        let mut out = Vec::new();
        for obj in self.objects.iter().filter(|o| !o.is_background()) {
            let pose = obj.pose(frame);
            let mut push = |canonical: Vec3, local_live: Vec3| {
                out.push(WarpSample {
                    object_id: obj.id,
                    canonical,
                    live: pose.apply(&local_live),
                })
            };
            match &obj.shape {
                Shape::Sheet {
                    center,
                    u_axis,
                    v_axis,
                    half_u,
                    half_v,
                    amplitude,
                    spatial_frequency,
                    temporal_frequency,
                } => {
                    let fr = sheet_frame(center, u_axis, v_axis);
                    let amp = amplitude * (TAU * temporal_frequency * f).sin();
                    for i in 0..9 {
                        for j in 0..9 {
                            let a = -half_u + 2.0 * half_u * i as f64 / 8.0;
                            let b = -half_v + 2.0 * half_v * j as f64 / 8.0;
                            let c = fr.c + fr.u * a + fr.v * b;
                            push(c, c + fr.n * sheet_height(a, *half_u, amp, *spatial_frequency));
                        }
                    }
                }
                Shape::PulsingSphere {
                    center,
                    radius,
                    amplitude,
                    temporal_frequency,
                } => {
                    let r = radius + amplitude * (TAU * temporal_frequency * f).sin();
                    for dir in fibonacci_sphere(64) {
                        push(v3(*center) + dir * *radius, v3(*center) + dir * r);
                    }
                }
                other => {
                    let c = other.center();
                    for dir in fibonacci_sphere(8) {
                        push(c + dir * 0.05, c + dir * 0.05);
                    }
                }
            }
        }
        out
    }

    /// Writes a TUM-layout dataset plus masks, ground truth and intrinsics.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for sub in ["rgb", "depth", "masks"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let mut rgb_index = String::from("# color images\n# timestamp filename\n");
        let mut depth_index = String::from("# depth maps\n# timestamp filename\n");
        for f in 0..self.frames {
            let r = self.render(f);
            let stamp = format!("{:.6}", self.timestamp(f));
            write_depth_png(&r.depth, dir.join(format!("depth/{stamp}.png")))?;
            let k = &self.intrinsics;
            write_color_png(k.width, k.height, r.depth.color.as_deref().unwrap_or(&[]), dir.join(format!("rgb/{stamp}.png")))?;
            r.masks.write(&dir.join(format!("masks/{stamp}.png")), &dir.join(format!("masks/{stamp}.json")))?;
            rgb_index.push_str(&format!("{stamp} rgb/{stamp}.png\n"));
            depth_index.push_str(&format!("{stamp} depth/{stamp}.png\n"));
        }
        let write = |name: &str, text: &str| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("rgb.txt", &rgb_index)?;
        write("depth.txt", &depth_index)?;
        write(
            "intrinsics.json",
            &serde_json::to_string_pretty(&self.intrinsics).expect("intrinsics serialize"),
        )?;
        write_trajectory(&self.ground_truth(), dir.join("groundtruth.txt"))
    }
}

fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let th = golden * i as f64;
            Vec3::new(r * th.cos(), y, r * th.sin())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(60.0, 60.0, 31.5, 23.5, 64, 48, 5000.0).unwrap()
    }

    fn script(objects: Vec<SceneObject>) -> SceneScript {
        SceneScript {
            frames: 3,
            intrinsics: k(),
            noise_sigma: 0.0,
            seed: 0,
            fps: 30.0,
            camera: CameraPath::Static {
                position: [0.0; 3],
                axis_angle: [0.0; 3],
            },
            objects,
        }
    }

    fn plane_obj(id: u16, z: f64) -> SceneObject {
        SceneObject {
            id,
            class: if id == 0 { "background".into() } else { "chair".into() },
            shape: Shape::Plane {
                center: [0.0, 0.0, z],
                u_axis: [1.0, 0.0, 0.0],
                v_axis: [0.0, 1.0, 0.0],
                half_u: 10.0,
                half_v: 10.0,
            },
            motion: None,
        }
    }

    #[test]
    fn fronto_parallel_plane_is_constant() {
        let r = script(vec![plane_obj(0, 1.0)]).render(0);
        assert!(r.depth.depth.iter().all(|&d| d == 1.0));
    }

    #[test]
    fn sphere_behind_camera_is_invisible() {
        let s = script(vec![SceneObject {
            id: 1,
            class: "ball".into(),
            shape: Shape::Sphere {
                center: [0.0, 0.0, -2.0],
                radius: 0.5,
            },
            motion: None,
        }]);
        assert!(s.render(0).depth.depth.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn flat_sheet_equals_plane() {
        let plane = script(vec![SceneObject {
            id: 1,
            class: "person".into(),
            shape: Shape::Plane {
                center: [0.1, 0.0, 1.5],
                u_axis: [1.0, 0.0, 0.2],
                v_axis: [0.0, 1.0, 0.0],
                half_u: 0.4,
                half_v: 0.3,
            },
            motion: None,
        }]);
        let mut sheet = plane.clone();
        sheet.objects[0].shape = Shape::Sheet {
            center: [0.1, 0.0, 1.5],
            u_axis: [1.0, 0.0, 0.2],
            v_axis: [0.0, 1.0, 0.0],
            half_u: 0.4,
            half_v: 0.3,
            amplitude: 0.0,
            spatial_frequency: 1.0,
            temporal_frequency: 0.05,
        };
        for f in 0..3 {
            let (a, b) = (plane.render(f), sheet.render(f));
            assert_eq!(a.depth.depth, b.depth.depth);
            assert_eq!(a.masks, b.masks);
        }
    }

    #[test]
    fn sheet_at_half_period_is_visible() {
        // sin(π) is about 1e-16, not 0: the sheet must still render as a plane
        let mut s = script(vec![]);
        s.objects.push(SceneObject {
            id: 1,
            class: "person".into(),
            shape: Shape::Sheet {
                center: [0.0, 0.0, 1.5],
                u_axis: [1.0, 0.0, 0.0],
                v_axis: [0.0, 1.0, 0.0],
                half_u: 0.4,
                half_v: 0.3,
                amplitude: 0.02,
                spatial_frequency: 1.0,
                temporal_frequency: 1.0 / 30.0,
            },
            motion: None,
        });
        s.frames = 16;
        let out = s.render(15);
        let hits: Vec<f64> = out.depth.depth.iter().copied().filter(|d| *d > 0.0).collect();
        assert!(hits.len() > 500);
        assert!(hits.iter().all(|d| (d - 1.5).abs() < 1e-9));
    }

    #[test]
    fn sphere_depth_matches_closed_form() {
        let c = Vec3::new(0.1, -0.05, 2.0);
        let r = 0.4;
        let s = script(vec![SceneObject {
            id: 1,
            class: "ball".into(),
            shape: Shape::Sphere { center: [c.x, c.y, c.z], radius: r },
            motion: None,
        }]);
        let out = s.render(0);
        let kk = k();
        let mut hits = 0;
        for v in 0..kk.height {
            for u in 0..kk.width {
                let d = kk.ray(u as f64, v as f64);
                // |t d - c|² = r²
                let (a, b, cc) = (d.dot(&d), -2.0 * d.dot(&c), c.dot(&c) - r * r);
                let disc = b * b - 4.0 * a * cc;
                let got = out.depth.depth[kk.index(u, v)];
                if disc < 0.0 {
                    assert_eq!(got, 0.0);
                } else {
                    let t = (-b - disc.sqrt()) / (2.0 * a);
                    assert!((got - t).abs() < 1e-9);
                    assert_eq!(out.masks.labels[kk.index(u, v)], 1);
                    hits += 1;
                }
            }
        }
        assert!(hits > 100);
    }

    #[test]
    fn sheet_hit_lies_on_surface() {
        let s = script(vec![SceneObject {
            id: 2,
            class: "person".into(),
            shape: Shape::Sheet {
                center: [0.0, 0.0, 1.5],
                u_axis: [1.0, 0.0, 0.0],
                v_axis: [0.0, 1.0, 0.0],
                half_u: 0.5,
                half_v: 0.4,
                amplitude: 0.05,
                spatial_frequency: 1.5,
                temporal_frequency: 0.1,
            },
            motion: None,
        }]);
        let kk = k();
        let out = s.render(2);
        let mut n = 0;
        for v in 0..kk.height {
            for u in 0..kk.width {
                let d = out.depth.depth[kk.index(u, v)];
                if d > 0.0 {
                    let p = kk.backproject_pixel(u as f64, v as f64, d);
                    assert!(s.surface_distance(0, 2, &p) < 1e-9);
                    n += 1;
                }
            }
        }
        assert!(n > 500);
    }

    #[test]
    fn room_from_inside_and_near_clip() {
        let s = script(vec![SceneObject {
            id: 0,
            class: "background".into(),
            shape: Shape::Room {
                min: [-1.0, -1.0, -0.3],
                max: [1.0, 1.0, 2.0],
            },
            motion: None,
        }]);
        let r = s.render(0);
        let kk = k();
        assert_eq!(r.depth.depth[kk.index(31, 23)], 2.0);
        let mut near = s.clone();
        near.objects[0].shape = Shape::Room {
            min: [-1.0, -1.0, -0.3],
            max: [1.0, 1.0, 0.4],
        };
        assert!(near.render(0).depth.depth.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn moving_box_distance_is_zero_at_hits() {
        let mut s = script(vec![SceneObject {
            id: 3,
            class: "suitcase".into(),
            shape: Shape::Box {
                center: [0.0, 0.0, 1.5],
                half_extents: [0.2, 0.15, 0.1],
                axis_angle: [0.3, 0.5, 0.0],
            },
            motion: Some(Motion {
                velocity: [0.01, 0.0, 0.0],
                angular_velocity: [0.0, 0.02, 0.0],
            }),
        }]);
        s.frames = 5;
        let kk = k();
        let out = s.render(4);
        let cam = s.camera_pose(4);
        for v in 0..kk.height {
            for u in 0..kk.width {
                let d = out.depth.depth[kk.index(u, v)];
                if d > 0.0 {
                    let p = cam.apply(&kk.backproject_pixel(u as f64, v as f64, d));
                    assert!(s.surface_distance(0, 4, &p) < 1e-9);
                }
            }
        }
    }

    #[test]
    fn noise_is_seeded() {
        let mut s = script(vec![plane_obj(0, 1.0)]);
        s.noise_sigma = 0.002;
        s.seed = 9;
        let (a, b) = (s.render(1), s.render(1));
        assert_eq!(a.depth.depth, b.depth.depth);
        assert_ne!(a.depth.depth, s.render(2).depth.depth);
        let mean = a.depth.depth.iter().sum::<f64>() / a.depth.depth.len() as f64;
        assert!((mean - 1.0).abs() < 0.001);
    }

    #[test]
    fn camera_paths() {
        let orbit = CameraPath::Orbit {
            center: [0.0, 0.0, 2.0],
            radius: 2.0,
            height: 0.0,
            start_deg: 0.0,
            deg_per_frame: 10.0,
        };
        let p0 = orbit.pose(0, 10);
        assert!((p0.translation - Vec3::zeros()).norm() < 1e-12);
        assert!((p0.rotation - nalgebra::Matrix3::identity()).norm() < 1e-12);
        let shake = CameraPath::XyzShake {
            center: [0.0; 3],
            amplitude: [0.05, 0.03, 0.02],
            period: 30.0,
            rotation_deg: 1.0,
        };
        for f in 0..30 {
            assert!(shake.pose(f, 30).is_valid());
        }
    }

    #[test]
    fn script_json_round_trip() {
        let s = script(vec![plane_obj(0, 1.0), plane_obj(4, 0.8)]);
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(SceneScript::from_json(&text).unwrap(), s);
    }
}
