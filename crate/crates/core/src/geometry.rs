//! Camera model, rigid transforms and depth-map primitives shared by every
//! other module.
//!
//! Pixel coordinates are `(u, v)` = (column, row). Depth is stored in meters,
//! with `0.0` meaning "no measurement".

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Neighbors whose depth differs from the center by more than this fraction
/// of the center depth are treated as lying across a depth discontinuity.
const NORMAL_DEPTH_JUMP_RATIO: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Integer depth-image units per meter.
    pub depth_scale: f64,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        depth_scale: f64,
    ) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            depth_scale,
        };
        k.validate()?;
        Ok(k)
    }

    /// Default TUM RGB-D intrinsics (640x480, 5000 units per meter).
    pub fn tum_default() -> Self {
        Self {
            fx: 525.0,
            fy: 525.0,
            cx: 319.5,
            cy: 239.5,
            width: 640,
            height: 480,
            depth_scale: 5000.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64
            && self.depth_scale > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid intrinsics {self:?}")))
        }
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    /// Viewing ray through pixel `(u, v)`, scaled so that its z component is 1.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    #[inline]
    pub fn backproject_pixel(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        self.ray(u, v) * depth
    }

    /// Continuous pixel coordinates of a camera-frame point, `None` behind the camera.
    #[inline]
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Nearest pixel of a camera-frame point, `None` if it falls outside the image.
    #[inline]
    pub fn project_to_pixel(&self, p: &Vec3) -> Option<(usize, usize)> {
        let (u, v) = self.project(p)?;
        let (u, v) = (u.round(), v.round());
        if u < 0.0 || v < 0.0 || u >= self.width as f64 || v >= self.height as f64 {
            return None;
        }
        Some((u as usize, v as usize))
    }
}

/// A rotation plus translation, mapping `p` to `rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Checked constructor: the rotation must be orthonormal with determinant 1.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        if !is_rotation(&rotation) {
            return Err(Error::InvalidArgument(format!(
                "matrix is not a rotation: {rotation}"
            )));
        }
        if !translation.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation,
        }
    }

    /// Rotation given as an axis-angle vector (radians), followed by a translation.
    pub fn from_axis_angle(axis_angle: Vec3, translation: Vec3) -> Self {
        Self {
            rotation: so3_exp(&axis_angle),
            translation,
        }
    }

    /// Quaternion in `(x, y, z, w)` order.
    pub fn from_quaternion(q: [f64; 4], translation: Vec3) -> Self {
        let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[3], q[0], q[1], q[2]));
        Self {
            rotation: *uq.to_rotation_matrix().matrix(),
            translation,
        }
    }

    /// Quaternion in `(x, y, z, w)` order with `w >= 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let (x, y, z, w) = (q.i, q.j, q.k, q.w);
        if w < 0.0 {
            [-x, -y, -z, -w]
        } else {
            [x, y, z, w]
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Rotation angle (radians) of `self⁻¹ ∘ other`.
    pub fn angle_to(&self, other: &RigidTransform) -> f64 {
        rotation_angle(&(self.rotation.transpose() * other.rotation))
    }

    pub fn is_valid(&self) -> bool {
        is_rotation(&self.rotation) && self.translation.iter().all(|x| x.is_finite())
    }
}

pub fn is_rotation(m: &Mat3) -> bool {
    m.iter().all(|x| x.is_finite())
        && (m.transpose() * m - Mat3::identity()).amax() <= ORTHONORMAL_TOL
        && (m.determinant() - 1.0).abs() <= ORTHONORMAL_TOL
}

/// Angle of a rotation matrix in `[0, π]`.
pub fn rotation_angle(m: &Mat3) -> f64 {
    let c = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    c.acos()
}

#[inline]
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula: the rotation `exp([w]×)`.
pub fn so3_exp(w: &Vec3) -> Mat3 {
    let theta2 = w.norm_squared();
    let k = skew(w);
    if theta2 < 1e-24 {
        return Mat3::identity() + k;
    }
    let theta = theta2.sqrt();
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / theta2;
    Mat3::identity() + k * a + k * k * b
}

/// Nearest rotation matrix (Frobenius sense) to `m`.
pub fn orthonormalize(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * v_t;
    }
    r
}

/// Least-squares rigid transform (no scale) mapping `src[i]` onto `dst[i]`.
///
/// Returns `None` for fewer than three pairs or mismatched lengths.
pub fn fit_rigid(src: &[Vec3], dst: &[Vec3]) -> Option<RigidTransform> {
    if src.len() != dst.len() || src.len() < 3 {
        return None;
    }
    let n = src.len() as f64;
    let cs = src.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let cd = dst.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let mut h = Mat3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u?;
    let v = svd.v_t?.transpose();
    let mut sign = Mat3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        sign[(2, 2)] = -1.0;
    }
    let rotation = v * sign * u.transpose();
    Some(RigidTransform {
        rotation,
        translation: cd - rotation * cs,
    })
}

/// One timestamped depth image (meters, 0 = invalid) with optional color.
#[derive(Debug, Clone)]
pub struct DepthFrame {
    pub timestamp: f64,
    pub intrinsics: CameraIntrinsics,
    pub depth: Vec<f64>,
    pub color: Option<Vec<[u8; 3]>>,
}

impl DepthFrame {
    pub fn new(
        timestamp: f64,
        intrinsics: CameraIntrinsics,
        depth: Vec<f64>,
        color: Option<Vec<[u8; 3]>>,
    ) -> Result<Self> {
        intrinsics.validate()?;
        let n = intrinsics.pixel_count();
        if depth.len() != n {
            return Err(Error::InvalidArgument(format!(
                "depth has {} pixels, intrinsics expect {n}",
                depth.len()
            )));
        }
        if let Some(c) = &color {
            if c.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "color has {} pixels, intrinsics expect {n}",
                    c.len()
                )));
            }
        }
        if depth.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidArgument(
                "depth values must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            timestamp,
            intrinsics,
            depth,
            color,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    #[inline]
    pub fn depth_at(&self, u: usize, v: usize) -> f64 {
        self.depth[self.intrinsics.index(u, v)]
    }

    pub fn valid_mask(&self) -> PixelMask {
        PixelMask {
            width: self.width(),
            height: self.height(),
            bits: self.depth.iter().map(|d| *d > 0.0).collect(),
        }
    }

    /// Per-pixel camera-frame vertices, `None` where depth is invalid.
    pub fn vertex_map(&self) -> Vec<Option<Vec3>> {
        let k = &self.intrinsics;
        (0..k.pixel_count())
            .map(|i| {
                let d = self.depth[i];
                (d > 0.0).then(|| k.backproject_pixel((i % k.width) as f64, (i / k.width) as f64, d))
            })
            .collect()
    }
}

/// A boolean image-sized pixel set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl PixelMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                bits.push(f(u, v));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.bits[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: bool) {
        self.bits[v * self.width + u] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn same_shape(&self, other: &PixelMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn intersection_count(&self, other: &PixelMask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a && **b)
            .count()
    }

    /// Intersection over union; two empty masks have IoU 0.
    pub fn iou(&self, other: &PixelMask) -> f64 {
        let inter = self.intersection_count(other);
        let union = self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a || **b)
            .count();
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn and(&self, other: &PixelMask) -> PixelMask {
        PixelMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect(),
        }
    }

    pub fn and_not(&self, other: &PixelMask) -> PixelMask {
        PixelMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && !*b).collect(),
        }
    }

    /// `(u, v)` of every set pixel in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| (i % w, i / w))
    }
}

/// Points with normals and the pixel each one came from.
#[derive(Debug, Clone, Default)]
pub struct PointCloud {
    pub vertices: Vec<Vec3>,
    /// Unit normals; `None` where no normal could be estimated.
    pub normals: Vec<Option<Vec3>>,
    /// `(row, col)` of the source pixel.
    pub pixels: Vec<(u32, u32)>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn push(&mut self, vertex: Vec3, normal: Option<Vec3>, row: usize, col: usize) {
        self.vertices.push(vertex);
        self.normals.push(normal);
        self.pixels.push((row as u32, col as u32));
    }

    /// Keeps only points carrying a normal.
    pub fn with_normals_only(&self) -> PointCloud {
        let mut out = PointCloud::default();
        for i in 0..self.len() {
            if let Some(n) = self.normals[i] {
                out.vertices.push(self.vertices[i]);
                out.normals.push(Some(n));
                out.pixels.push(self.pixels[i]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Appends `other`, painting its vertices with `color` when given.
    pub fn append(&mut self, other: &TriangleMesh, color: Option<[u8; 3]>) {
        let base = self.vertices.len() as u32;
        let had_colors = self.colors.is_some() || color.is_some() || other.colors.is_some();
        if had_colors && self.colors.is_none() {
            self.colors = Some(vec![[200, 200, 200]; self.vertices.len()]);
        }
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
        if let Some(colors) = &mut self.colors {
            match (color, &other.colors) {
                (Some(c), _) => colors.extend(std::iter::repeat_n(c, other.vertices.len())),
                (None, Some(oc)) => colors.extend_from_slice(oc),
                (None, None) => colors.extend(std::iter::repeat_n([200, 200, 200], other.vertices.len())),
            }
        }
    }

    pub fn area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let a = self.vertices[t[0] as usize];
                let b = self.vertices[t[1] as usize];
                let c = self.vertices[t[2] as usize];
                0.5 * (b - a).cross(&(c - a)).norm()
            })
            .sum()
    }
}

/// Unit normals per pixel from central differences of the vertex map,
/// oriented toward the camera. Pixels with a missing neighbor, or a neighbor
/// across a depth discontinuity, get `None`.
pub fn compute_normals(frame: &DepthFrame) -> Vec<Option<Vec3>> {
    let k = &frame.intrinsics;
    let (w, h) = (k.width, k.height);
    let vertices = frame.vertex_map();
    let mut normals = vec![None; w * h];
    if w < 3 || h < 3 {
        return normals;
    }
    for v in 1..h - 1 {
        for u in 1..w - 1 {
            let i = v * w + u;
            let Some(center) = vertices[i] else { continue };
            let neighbors = [i - 1, i + 1, i - w, i + w];
            let dc = frame.depth[i];
            if neighbors.iter().any(|&j| {
                let d = frame.depth[j];
                d <= 0.0 || (d - dc).abs() > NORMAL_DEPTH_JUMP_RATIO * dc
            }) {
                continue;
            }
            let du = vertices[i + 1].unwrap() - vertices[i - 1].unwrap();
            let dv = vertices[i + w].unwrap() - vertices[i - w].unwrap();
            let n = du.cross(&dv);
            let norm = n.norm();
            if norm < 1e-12 {
                continue;
            }
            let mut n = n / norm;
            if n.dot(&center) > 0.0 {
                n = -n;
            }
            normals[i] = Some(n);
        }
    }
    normals
}

/// Backprojects every valid (and masked, when a mask is given) pixel.
pub fn backproject(frame: &DepthFrame, mask: Option<&PixelMask>) -> Result<PointCloud> {
    let k = &frame.intrinsics;
    if let Some(m) = mask {
        if m.width != k.width || m.height != k.height {
            return Err(Error::InvalidArgument(format!(
                "mask is {}x{}, frame is {}x{}",
                m.width, m.height, k.width, k.height
            )));
        }
    }
    let normals = compute_normals(frame);
    Ok(backproject_with_normals(frame, &normals, mask))
}

/// Like [`backproject`], reusing a normal map from [`compute_normals`].
/// The mask, if any, must match the frame size.
pub fn backproject_with_normals(
    frame: &DepthFrame,
    normals: &[Option<Vec3>],
    mask: Option<&PixelMask>,
) -> PointCloud {
    let k = &frame.intrinsics;
    let mut cloud = PointCloud::default();
    for v in 0..k.height {
        for u in 0..k.width {
            let i = k.index(u, v);
            let d = frame.depth[i];
            if d <= 0.0 || mask.is_some_and(|m| !m.bits[i]) {
                continue;
            }
            cloud.push(k.backproject_pixel(u as f64, v as f64, d), normals[i], v, u);
        }
    }
    cloud
}
