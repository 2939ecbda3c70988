//! Canonical TSDF volumes: projective integration (rigid or through a warp
//! field), ray casting and marching-cubes extraction.

mod mc;

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthFrame, PixelMask, PointCloud, RigidTransform, TriangleMesh, Vec3};
use crate::graph::{DeformationGraph, PointBinding};

pub const DEFAULT_MAX_WEIGHT: f64 = 100.0;
pub const DEFAULT_TRUNCATION_FACTOR: f64 = 4.0;
/// Voxel budget per axis for auto-fitted volumes.
pub const MAX_AUTO_DIM: usize = 256;
const DUMP_MAGIC: &[u8; 4] = b"TSDF";

/// Dense grid; voxel `(x, y, z)` is centered at `origin + s·(x, y, z)`.
#[derive(Debug, Clone)]
pub struct TsdfVolume {
    pub origin: Vec3,
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub truncation: f64,
    pub max_weight: f64,
    /// Normalized signed distance in `[-1, 1]`, x-fastest.
    pub tsdf: Vec<f32>,
    pub weight: Vec<f32>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IntegrationStats {
    pub updated_voxels: usize,
    /// Masked depth samples whose canonical position fell outside the volume.
    pub clipped_samples: usize,
}

/// Which voxels take part in warped integration, and how each is bound.
#[derive(Debug, Clone)]
pub enum VoxelBinding {
    /// Every voxel, all bound with weight 1 to node 0 (single-node graphs).
    All,
    Sparse {
        indices: Vec<usize>,
        bindings: Vec<PointBinding>,
    },
}

impl VoxelBinding {
    pub fn len(&self, vol: &TsdfVolume) -> usize {
        match self {
            VoxelBinding::All => vol.voxel_count(),
            VoxelBinding::Sparse { indices, .. } => indices.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RaycastResult {
    pub width: usize,
    pub height: usize,
    /// Canonical-frame surface points.
    pub vertices: Vec<Option<Vec3>>,
    /// Unit canonical-frame normals facing the camera.
    pub normals: Vec<Option<Vec3>>,
}

impl RaycastResult {
    pub fn valid_count(&self) -> usize {
        self.vertices.iter().filter(|v| v.is_some()).count()
    }

    /// Valid pixels as a canonical point cloud with normals.
    pub fn to_point_cloud(&self) -> PointCloud {
        let mut cloud = PointCloud::default();
        for v in 0..self.height {
            for u in 0..self.width {
                let i = v * self.width + u;
                if let (Some(p), Some(n)) = (self.vertices[i], self.normals[i]) {
                    cloud.push(p, Some(n), v, u);
                }
            }
        }
        cloud
    }

    /// Camera-frame z of each valid pixel (0 where invalid).
    pub fn depth(&self, pose: &RigidTransform) -> Vec<f64> {
        self.vertices
            .iter()
            .map(|v| v.map(|p| pose.apply(&p).z).unwrap_or(0.0))
            .collect()
    }
}

impl TsdfVolume {
    pub fn new(origin: Vec3, voxel_size: f64, dims: [usize; 3], truncation: f64, max_weight: f64) -> Result<Self> {
        if !(voxel_size > 0.0) || !(truncation >= 2.0 * voxel_size) || !(max_weight >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "volume needs s > 0, tau >= 2s, w_max >= 1 (s={voxel_size}, tau={truncation}, w_max={max_weight})"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("empty volume dims {dims:?}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        Ok(Self {
            origin,
            voxel_size,
            dims,
            truncation,
            max_weight,
            tsdf: vec![1.0; n],
            weight: vec![0.0; n],
        })
    }

    /// Box around `points` padded by `10 τ`, each axis capped at [`MAX_AUTO_DIM`] voxels.
    pub fn fit_to_points(points: &[Vec3], voxel_size: f64, truncation: f64, max_weight: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Precondition("cannot fit a volume to an empty point set".into()));
        }
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let pad = 10.0 * truncation;
        let mut dims = [0usize; 3];
        let mut origin = Vec3::zeros();
        for a in 0..3 {
            let want = ((hi[a] - lo[a] + 2.0 * pad) / voxel_size).ceil() as usize + 1;
            let d = want.min(MAX_AUTO_DIM);
            // keep the data centered when the cap bites
            let center = 0.5 * (lo[a] + hi[a]);
            origin[a] = center - 0.5 * (d - 1) as f64 * voxel_size;
            dims[a] = d;
        }
        Self::new(origin, voxel_size, dims, truncation, max_weight)
    }

    /// Volume sampled from a signed distance function, every voxel observed once.
    pub fn from_sdf(
        origin: Vec3,
        voxel_size: f64,
        dims: [usize; 3],
        truncation: f64,
        sdf: impl Fn(&Vec3) -> f64,
    ) -> Result<Self> {
        let mut vol = Self::new(origin, voxel_size, dims, truncation, DEFAULT_MAX_WEIGHT)?;
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let i = vol.index(x, y, z);
                    let d = sdf(&vol.voxel_center(x, y, z));
                    vol.tsdf[i] = (d / truncation).clamp(-1.0, 1.0) as f32;
                    vol.weight[i] = 1.0;
                }
            }
        }
        Ok(vol)
    }

    pub fn voxel_count(&self) -> usize {
        self.tsdf.len()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        self.origin + Vec3::new(x as f64, y as f64, z as f64) * self.voxel_size
    }

    #[inline]
    fn center_of_index(&self, i: usize) -> Vec3 {
        let x = i % self.dims[0];
        let y = (i / self.dims[0]) % self.dims[1];
        let z = i / (self.dims[0] * self.dims[1]);
        self.voxel_center(x, y, z)
    }

    /// Corners of the box spanned by voxel centers.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let ext = Vec3::new(
            (self.dims[0] - 1) as f64,
            (self.dims[1] - 1) as f64,
            (self.dims[2] - 1) as f64,
        ) * self.voxel_size;
        (self.origin, self.origin + ext)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let (lo, hi) = self.bounds();
        (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a])
    }

    pub fn observed_voxels(&self) -> usize {
        self.weight.iter().filter(|&&w| w > 0.0).count()
    }

    pub fn clear(&mut self) {
        self.tsdf.fill(1.0);
        self.weight.fill(0.0);
    }

    /// Fuses one frame; `pose` maps canonical points into the camera frame.
    pub fn integrate_rigid(
        &mut self,
        frame: &DepthFrame,
        pose: &RigidTransform,
        mask: Option<&PixelMask>,
    ) -> IntegrationStats {
        let ctx = UpdateContext::new(self, frame, mask);
        let nxy = self.dims[0] * self.dims[1];
        let geometry = self.clone_geometry();
        let updated: usize = self
            .tsdf
            .par_chunks_mut(nxy)
            .zip(self.weight.par_chunks_mut(nxy))
            .enumerate()
            .map(|(z, (ts, ws))| {
                let mut count = 0;
                for (k, (t, w)) in ts.iter_mut().zip(ws.iter_mut()).enumerate() {
                    let x = geometry.center_of_index(z * nxy + k);
                    count += ctx.update(t, w, &pose.apply(&x)) as usize;
                }
                count
            })
            .sum();
        let inv = pose.inverse();
        IntegrationStats {
            updated_voxels: updated,
            clipped_samples: self.count_clipped(frame, mask, |p| inv.apply(p)),
        }
    }

    /// Fuses one frame through the warp field; unbound voxels are skipped.
    pub fn integrate_nonrigid(
        &mut self,
        frame: &DepthFrame,
        graph: &DeformationGraph,
        binding: &VoxelBinding,
        mask: Option<&PixelMask>,
    ) -> IntegrationStats {
        let ctx = UpdateContext::new(self, frame, mask);
        let updated = match binding {
            VoxelBinding::All => {
                let one = PointBinding::single(0);
                let nxy = self.dims[0] * self.dims[1];
                let geometry = self.clone_geometry();
                self.tsdf
                    .par_chunks_mut(nxy)
                    .zip(self.weight.par_chunks_mut(nxy))
                    .enumerate()
                    .map(|(z, (ts, ws))| {
                        let mut count = 0;
                        for (k, (t, w)) in ts.iter_mut().zip(ws.iter_mut()).enumerate() {
                            let x = geometry.center_of_index(z * nxy + k);
                            count += ctx.update(t, w, &graph.warp_point(&x, &one)) as usize;
                        }
                        count
                    })
                    .sum()
            }
            VoxelBinding::Sparse { indices, bindings } => {
                let mut count = 0;
                for (&i, b) in indices.iter().zip(bindings) {
                    let x = self.center_of_index(i);
                    let live = graph.warp_point(&x, b);
                    count += ctx.update(&mut self.tsdf[i], &mut self.weight[i], &live) as usize;
                }
                count
            }
        };
        let inv = graph.rigid_approximation().inverse();
        IntegrationStats {
            updated_voxels: updated,
            clipped_samples: self.count_clipped(frame, mask, |p| inv.apply(p)),
        }
    }

    /// Binds voxel centers within `range` of some graph node; a single-node
    /// graph binds everything.
    pub fn bind_voxels(&self, graph: &DeformationGraph, range: f64) -> VoxelBinding {
        if graph.is_rigid() {
            return VoxelBinding::All;
        }
        let mut marked = vec![false; self.voxel_count()];
        let s = self.voxel_size;
        let r2 = range * range;
        for node in &graph.nodes {
            let rel = (node.position - self.origin) / s;
            let lo = |a: usize| ((rel[a] - range / s).ceil().max(0.0)) as usize;
            let hi = |a: usize| (rel[a] + range / s).floor().min((self.dims[a] - 1) as f64);
            if (0..3).any(|a| hi(a) < 0.0) {
                continue;
            }
            let (hx, hy, hz) = (hi(0) as usize, hi(1) as usize, hi(2) as usize);
            for z in lo(2)..=hz {
                for y in lo(1)..=hy {
                    for x in lo(0)..=hx {
                        if (self.voxel_center(x, y, z) - node.position).norm_squared() <= r2 {
                            marked[self.index(x, y, z)] = true;
                        }
                    }
                }
            }
        }
        let indices: Vec<usize> = marked.iter().enumerate().filter(|x| *x.1).map(|x| x.0).collect();
        let bindings = indices
            .par_iter()
            .map(|&i| graph.bind_point(&self.center_of_index(i)))
            .collect();
        VoxelBinding::Sparse { indices, bindings }
    }

    fn count_clipped(&self, frame: &DepthFrame, mask: Option<&PixelMask>, to_canonical: impl Fn(&Vec3) -> Vec3) -> usize {
        let k = &frame.intrinsics;
        let mut clipped = 0;
        for v in 0..k.height {
            for u in 0..k.width {
                let i = k.index(u, v);
                let d = frame.depth[i];
                if d <= 0.0 || mask.is_some_and(|m| !m.bits[i]) {
                    continue;
                }
                if !self.contains(&to_canonical(&k.backproject_pixel(u as f64, v as f64, d))) {
                    clipped += 1;
                }
            }
        }
        clipped
    }

    fn clone_geometry(&self) -> VolumeGeometry {
        VolumeGeometry {
            origin: self.origin,
            voxel_size: self.voxel_size,
            dims: self.dims,
        }
    }

    /// Trilinear tsdf at `p`; `None` unless all eight neighbors are observed.
    pub fn sample(&self, p: &Vec3) -> Option<f64> {
        let g = (p - self.origin) / self.voxel_size;
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            if !(g[a] >= 0.0) || g[a] > (self.dims[a] - 1) as f64 {
                return None;
            }
            let f = g[a].floor().min((self.dims[a].saturating_sub(2)) as f64);
            base[a] = f as usize;
            frac[a] = g[a] - f;
        }
        let mut acc = 0.0;
        for c in 0..8 {
            let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let (x, y, z) = (base[0] + dx, base[1] + dy, base[2] + dz);
            if x >= self.dims[0] || y >= self.dims[1] || z >= self.dims[2] {
                return None;
            }
            let i = self.index(x, y, z);
            if self.weight[i] <= 0.0 {
                return None;
            }
            let w = (if dx == 1 { frac[0] } else { 1.0 - frac[0] })
                * (if dy == 1 { frac[1] } else { 1.0 - frac[1] })
                * (if dz == 1 { frac[2] } else { 1.0 - frac[2] });
            acc += w * self.tsdf[i] as f64;
        }
        Some(acc)
    }

    /// Normalized central-difference gradient of the trilinear tsdf.
    pub fn gradient(&self, p: &Vec3) -> Option<Vec3> {
        let h = self.voxel_size;
        let mut g = Vec3::zeros();
        for a in 0..3 {
            let mut d = Vec3::zeros();
            d[a] = h;
            g[a] = self.sample(&(p + d))? - self.sample(&(p - d))?;
        }
        let n = g.norm();
        (n > 1e-12).then(|| g / n)
    }

    /// Renders the zero level set seen from `pose` (camera-from-canonical).
    pub fn raycast(&self, intrinsics: &CameraIntrinsics, pose: &RigidTransform) -> RaycastResult {
        let inv = pose.inverse();
        let eye = inv.translation;
        let (lo, hi) = self.bounds();
        let step = 0.5 * self.truncation;
        let (w, h) = (intrinsics.width, intrinsics.height);
        let hits: Vec<Option<(Vec3, Vec3)>> = (0..w * h)
            .into_par_iter()
            .map(|i| {
                let (u, v) = ((i % w) as f64, (i / w) as f64);
                let dir = (inv.rotation * intrinsics.ray(u, v)).normalize();
                let (t0, t1) = ray_box(&eye, &dir, &lo, &hi)?;
                let mut t = t0.max(0.0);
                let mut prev: Option<(f64, f64)> = None;
                while t <= t1 {
                    let cur = self.sample(&(eye + dir * t));
                    match (prev, cur) {
                        (Some((tp, fp)), Some(fc)) if fp > 0.0 && fc < 0.0 => {
                            let ts = tp + (t - tp) * fp / (fp - fc);
                            let p = eye + dir * ts;
                            let n = self.gradient(&p)?;
                            return Some((p, n));
                        }
                        (Some((_, fp)), Some(fc)) if fp < 0.0 && fc > 0.0 => {
                            // left a back face; keep marching
                        }
                        _ => {}
                    }
                    prev = cur.map(|f| (t, f));
                    t += step;
                }
                None
            })
            .collect();
        RaycastResult {
            width: w,
            height: h,
            vertices: hits.iter().map(|x| x.map(|y| y.0)).collect(),
            normals: hits.iter().map(|x| x.map(|y| y.1)).collect(),
        }
    }

    pub fn extract_mesh(&self) -> TriangleMesh {
        mc::extract(self)
    }

    pub fn write_dump(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(48 + 8 * self.voxel_count());
        buf.extend_from_slice(DUMP_MAGIC);
        for d in self.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for a in 0..3 {
            buf.extend_from_slice(&self.origin[a].to_le_bytes());
        }
        buf.extend_from_slice(&(self.voxel_size as f32).to_le_bytes());
        buf.extend_from_slice(&(self.truncation as f32).to_le_bytes());
        for (t, w) in self.tsdf.iter().zip(&self.weight) {
            buf.extend_from_slice(&t.to_le_bytes());
            buf.extend_from_slice(&w.to_le_bytes());
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_dump(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::Load(format!("{}: {m}", path.display()));
        if buf.len() < 48 || &buf[0..4] != DUMP_MAGIC {
            return Err(bad("not a TSDF dump"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap()) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
        let f32_at = |o: usize| f32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
        let dims = [u32_at(4), u32_at(8), u32_at(12)];
        let origin = Vec3::new(f64_at(16), f64_at(24), f64_at(32));
        let s = f32_at(40) as f64;
        let tau = f32_at(44) as f64;
        let mut vol = Self::new(origin, s, dims, tau, DEFAULT_MAX_WEIGHT)?;
        if buf.len() != 48 + 8 * vol.voxel_count() {
            return Err(bad("payload size does not match dims"));
        }
        for i in 0..vol.voxel_count() {
            vol.tsdf[i] = f32_at(48 + 8 * i);
            vol.weight[i] = f32_at(52 + 8 * i);
        }
        Ok(vol)
    }
}

struct VolumeGeometry {
    origin: Vec3,
    voxel_size: f64,
    dims: [usize; 3],
}

impl VolumeGeometry {
    #[inline]
    fn center_of_index(&self, i: usize) -> Vec3 {
        let x = i % self.dims[0];
        let y = (i / self.dims[0]) % self.dims[1];
        let z = i / (self.dims[0] * self.dims[1]);
        self.origin + Vec3::new(x as f64, y as f64, z as f64) * self.voxel_size
    }
}

/// Everything the per-voxel update needs, shared by rigid and warped integration.
struct UpdateContext<'a> {
    frame: &'a DepthFrame,
    mask: Option<&'a PixelMask>,
    truncation: f64,
    max_weight: f64,
}

impl<'a> UpdateContext<'a> {
    fn new(vol: &TsdfVolume, frame: &'a DepthFrame, mask: Option<&'a PixelMask>) -> Self {
        Self {
            frame,
            mask,
            truncation: vol.truncation,
            max_weight: vol.max_weight,
        }
    }

    /// Running-average update of one voxel whose center sits at `cam` in the camera frame.
    #[inline]
    fn update(&self, tsdf: &mut f32, weight: &mut f32, cam: &Vec3) -> bool {
        let k = &self.frame.intrinsics;
        let Some((u, v)) = k.project_to_pixel(cam) else {
            return false;
        };
        let i = k.index(u, v);
        let d = self.frame.depth[i];
        if d <= 0.0 || self.mask.is_some_and(|m| !m.bits[i]) {
            return false;
        }
        let sdf = d - cam.z;
        if sdf <= -self.truncation {
            return false;
        }
        let sample = (sdf / self.truncation).clamp(-1.0, 1.0) as f32 as f64;
        let w = *weight as f64;
        *tsdf = ((*tsdf as f64 * w + sample) / (w + 1.0)) as f32;
        *weight = (w + 1.0).min(self.max_weight) as f32;
        true
    }
}

/// Parametric entry/exit of a ray through an axis-aligned box.
fn ray_box(o: &Vec3, d: &Vec3, lo: &Vec3, hi: &Vec3) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if o[a] < lo[a] || o[a] > hi[a] {
                return None;
            }
            continue;
        }
        let (ta, tb) = ((lo[a] - o[a]) / d[a], (hi[a] - o[a]) / d[a]);
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    (t1 >= t0.max(0.0)).then_some((t0, t1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{rigid_graph, GraphNode};

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 39.5, 29.5, 80, 60, 1000.0).unwrap()
    }

    fn plane_frame(z: f64) -> DepthFrame {
        let k = k();
        DepthFrame::new(0.0, k, vec![z; k.pixel_count()], None).unwrap()
    }

    fn plane_volume() -> TsdfVolume {
        TsdfVolume::new(Vec3::new(-0.2, -0.15, 0.8), 0.01, [41, 31, 41], 0.04, 100.0).unwrap()
    }

    #[test]
    fn plane_zero_crossing() {
        let mut vol = plane_volume();
        vol.integrate_rigid(&plane_frame(1.0), &RigidTransform::identity(), None);
        let mut checked = 0;
        for y in 0..31 {
            for x in 0..41 {
                for z in 0..40 {
                    let (a, b) = (vol.index(x, y, z), vol.index(x, y, z + 1));
                    if vol.weight[a] > 0.0 && vol.weight[b] > 0.0 && vol.tsdf[a] > 0.0 && vol.tsdf[b] <= 0.0 {
                        let (fa, fb) = (vol.tsdf[a] as f64, vol.tsdf[b] as f64);
                        let zc = vol.voxel_center(x, y, z).z + 0.01 * fa / (fa - fb);
                        assert!((zc - 1.0).abs() <= 0.005, "{zc}");
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn far_behind_untouched_and_double_integration() {
        let mut vol = plane_volume();
        let f = plane_frame(1.0);
        vol.integrate_rigid(&f, &RigidTransform::identity(), None);
        let behind = vol.index(20, 15, 40); // z = 1.2, 0.2 behind the plane
        assert_eq!(vol.weight[behind], 0.0);
        let once = vol.clone();
        vol.integrate_rigid(&f, &RigidTransform::identity(), None);
        for i in 0..vol.voxel_count() {
            assert_eq!(vol.tsdf[i], once.tsdf[i]);
            assert_eq!(vol.weight[i], 2.0 * once.weight[i]);
        }
    }

    #[test]
    fn integration_order_does_not_matter() {
        let (a, b) = (plane_frame(1.0), plane_frame(1.03));
        let mut v1 = plane_volume();
        v1.integrate_rigid(&a, &RigidTransform::identity(), None);
        v1.integrate_rigid(&b, &RigidTransform::identity(), None);
        let mut v2 = plane_volume();
        v2.integrate_rigid(&b, &RigidTransform::identity(), None);
        v2.integrate_rigid(&a, &RigidTransform::identity(), None);
        for i in 0..v1.voxel_count() {
            assert!((v1.tsdf[i] - v2.tsdf[i]).abs() <= 1e-6);
            assert_eq!(v1.weight[i], v2.weight[i]);
        }
    }

    #[test]
    fn single_node_warp_matches_rigid_bitwise() {
        let f = plane_frame(1.0);
        for pose in [
            RigidTransform::identity(),
            RigidTransform::from_translation(Vec3::new(0.01, -0.02, 0.03)),
            RigidTransform::from_axis_angle(Vec3::new(0.02, 0.05, -0.01), Vec3::new(0.01, 0.0, 0.02)),
        ] {
            let mut a = plane_volume();
            a.integrate_rigid(&f, &pose, None);
            let mut b = plane_volume();
            let g = rigid_graph(&pose);
            let binding = b.bind_voxels(&g, 0.1);
            b.integrate_nonrigid(&f, &g, &binding, None);
            assert_eq!(a.tsdf, b.tsdf);
            assert_eq!(a.weight, b.weight);
        }
    }

    #[test]
    fn identity_multi_node_graph_matches_rigid() {
        // off-lattice depth so no voxel sits exactly at sdf = -tau
        let f = plane_frame(1.0037);
        let mut a = plane_volume();
        a.integrate_rigid(&f, &RigidTransform::identity(), None);
        let nodes: Vec<GraphNode> = (0..5)
            .flat_map(|i| (0..4).map(move |j| GraphNode::at(Vec3::new(-0.2 + 0.1 * i as f64, -0.15 + 0.1 * j as f64, 1.0))))
            .collect();
        let g = DeformationGraph::from_nodes(nodes, 6, 0.1, 4);
        let mut b = plane_volume();
        let binding = b.bind_voxels(&g, 10.0);
        b.integrate_nonrigid(&f, &g, &binding, None);
        for i in 0..a.voxel_count() {
            assert!((a.tsdf[i] - b.tsdf[i]).abs() < 1e-5, "{i} {} {} {} {}", a.tsdf[i], b.tsdf[i], a.weight[i], b.weight[i]);
            assert_eq!(a.weight[i], b.weight[i]);
        }
    }

    #[test]
    fn unbound_voxels_are_skipped() {
        let f = plane_frame(1.0);
        let g = DeformationGraph::from_nodes(vec![GraphNode::at(Vec3::new(0.0, 0.0, 1.0)), GraphNode::at(Vec3::new(0.05, 0.0, 1.0))], 6, 0.05, 4);
        let mut vol = plane_volume();
        let binding = vol.bind_voxels(&g, 0.05);
        vol.integrate_nonrigid(&f, &g, &binding, None);
        for z in 0..41 {
            for y in 0..31 {
                for x in 0..41 {
                    let c = vol.voxel_center(x, y, z);
                    let near = g.nodes.iter().any(|n| (n.position - c).norm() <= 0.05 + 1e-9);
                    if !near {
                        assert_eq!(vol.weight[vol.index(x, y, z)], 0.0);
                    }
                }
            }
        }
        assert!(vol.observed_voxels() > 0);
    }

    #[test]
    fn raycast_round_trip_plane() {
        let mut vol = plane_volume();
        vol.integrate_rigid(&plane_frame(1.0), &RigidTransform::identity(), None);
        let r = vol.raycast(&k(), &RigidTransform::identity());
        assert!(r.valid_count() > 1000);
        for (v, n) in r.vertices.iter().zip(&r.normals) {
            if let (Some(v), Some(n)) = (v, n) {
                assert!((v.z - 1.0).abs() <= 0.005, "{}", v.z);
                assert!((n.norm() - 1.0).abs() < 1e-9);
                assert!(n.z < -0.99);
                assert!(vol.contains(v));
            }
        }
    }

    #[test]
    fn raycast_empty_volume() {
        let vol = plane_volume();
        assert_eq!(vol.raycast(&k(), &RigidTransform::identity()).valid_count(), 0);
    }

    #[test]
    fn raycast_analytic_sphere() {
        let s = 0.01;
        let c = Vec3::new(0.0, 0.0, 1.0);
        let r = 0.15;
        let vol = TsdfVolume::from_sdf(Vec3::new(-0.25, -0.25, 0.75), s, [51, 51, 51], 4.0 * s, |p| (p - c).norm() - r).unwrap();
        let kk = k();
        let res = vol.raycast(&kk, &RigidTransform::identity());
        let mut n = 0;
        for v in 0..kk.height {
            for u in 0..kk.width {
                let Some(p) = res.vertices[kk.index(u, v)] else { continue };
                let d = kk.ray(u as f64, v as f64).normalize();
                let b = d.dot(&c);
                let disc = b * b - (c.norm_squared() - r * r);
                assert!(disc >= 0.0);
                let t = b - disc.sqrt();
                let want = d * t;
                assert!((p.z - want.z).abs() <= s / 2.0, "{} vs {}", p.z, want.z);
                n += 1;
            }
        }
        assert!(n > 500);
    }

    #[test]
    fn mesh_of_sphere() {
        let s = 0.01;
        let r = 10.0 * s;
        let c = Vec3::new(0.0, 0.0, 0.0);
        let vol = TsdfVolume::from_sdf(Vec3::repeat(-0.2), s, [41, 41, 41], 4.0 * s, |p| (p - c).norm() - r).unwrap();
        let mesh = vol.extract_mesh();
        assert!(!mesh.triangles.is_empty());
        let radii: Vec<f64> = mesh.vertices.iter().map(|v| (v - c).norm()).collect();
        assert!(radii.iter().all(|x| (x - r).abs() <= s / 2.0));
        let mean = radii.iter().sum::<f64>() / radii.len() as f64;
        assert!((mean - r).abs() <= s / 10.0);
        // outward orientation
        for t in &mesh.triangles {
            let [a, b, cc] = t.map(|i| mesh.vertices[i as usize]);
            let n = (b - a).cross(&(cc - a));
            assert!(n.dot(&((a + b + cc) / 3.0 - c)) > 0.0);
        }
        let area = mesh.area();
        let want = 4.0 * std::f64::consts::PI * r * r;
        assert!((area - want).abs() / want < 0.05, "{area} vs {want}");
    }

    #[test]
    fn mesh_of_plane() {
        let s = 0.01;
        let vol = TsdfVolume::from_sdf(Vec3::zeros(), s, [21, 31, 21], 4.0 * s, |p| 0.1234 - p.z).unwrap();
        let mesh = vol.extract_mesh();
        assert!(mesh.vertices.iter().all(|v| (v.z - 0.1234).abs() <= s / 2.0));
        let want = 0.2 * 0.3;
        assert!((mesh.area() - want).abs() / want < 0.05);
    }

    #[test]
    fn empty_volume_empty_mesh() {
        assert!(plane_volume().extract_mesh().triangles.is_empty());
    }

    #[test]
    fn dump_round_trip() {
        let mut vol = plane_volume();
        vol.integrate_rigid(&plane_frame(1.0), &RigidTransform::identity(), None);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.tsdf");
        vol.write_dump(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 48 + 8 * vol.voxel_count());
        assert_eq!(&bytes[..4], b"TSDF");
        let back = TsdfVolume::read_dump(&p).unwrap();
        assert_eq!(back.dims, vol.dims);
        assert_eq!(back.tsdf, vol.tsdf);
        assert_eq!(back.weight, vol.weight);
        assert_eq!(back.origin, vol.origin);
    }

    #[test]
    fn fit_respects_padding_and_cap() {
        let pts = [Vec3::zeros(), Vec3::new(0.3, 0.2, 0.1)];
        let v = TsdfVolume::fit_to_points(&pts, 0.01, 0.04, 100.0).unwrap();
        for p in &pts {
            assert!(v.contains(&(p + Vec3::repeat(0.39))) && v.contains(&(p - Vec3::repeat(0.39))));
        }
        let big = [Vec3::zeros(), Vec3::new(10.0, 0.0, 0.0)];
        let v = TsdfVolume::fit_to_points(&big, 0.01, 0.04, 100.0).unwrap();
        assert_eq!(v.dims[0], MAX_AUTO_DIM);
    }
}
