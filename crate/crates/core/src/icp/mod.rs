//! Warp-field estimation: projective correspondences, point-to-plane data
//! term with an as-rigid-as-possible prior, damped Gauss-Newton with PCG.

mod pcg;

pub use pcg::{pcg_solve, BlockAccumulator, BlockSparse, PcgResult};

use nalgebra::{DMatrix, Matrix3, Matrix6, SMatrix, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{compute_normals, CameraIntrinsics, DepthFrame, PixelMask, PointCloud, RigidTransform, Vec3};
use crate::graph::{rigid_graph, BlendBinding, DeformationGraph, PointBinding};

/// Below this many accepted pairs a surface counts as lost.
pub const MIN_CORRESPONDENCES: usize = 10;

const DAMPING_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct Correspondence {
    /// Canonical model vertex and unit normal.
    pub model_vertex: Vec3,
    pub model_normal: Vec3,
    /// Live camera-frame vertex and unit normal.
    pub target_vertex: Vec3,
    pub target_normal: Vec3,
    pub binding: PointBinding,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    pub lambda: f64,
    /// Distance gate in meters.
    pub max_distance: f64,
    /// Normal gate: minimum cosine between warped model and live normals.
    pub min_normal_cos: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            lambda: 5.0,
            max_distance: 0.10,
            min_normal_cos: 60f64.to_radians().cos(),
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.max_distance > 0.0) || !(-1.0..=1.0).contains(&self.min_normal_cos) {
            return Err(Error::InvalidArgument(format!("bad energy parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub pcg_max_iterations: usize,
    pub pcg_tolerance: f64,
    pub initial_damping: f64,
    /// Rejected steps retried with 10× damping before giving up.
    pub max_retries: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            outer_iterations: 4,
            inner_iterations: 3,
            pcg_max_iterations: 200,
            pcg_tolerance: 1e-6,
            initial_damping: 1e-4,
            max_retries: 5,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iterations == 0
            || self.inner_iterations == 0
            || self.pcg_max_iterations == 0
            || !(self.pcg_tolerance > 0.0)
            || !(self.initial_damping >= 0.0)
        {
            return Err(Error::InvalidArgument(format!("bad solver config {self:?}")));
        }
        Ok(())
    }
}

/// Live-frame vertex and normal maps, restricted to a pixel set.
#[derive(Debug, Clone)]
pub struct LiveTarget {
    pub intrinsics: CameraIntrinsics,
    pub vertices: Vec<Option<Vec3>>,
    pub normals: Vec<Option<Vec3>>,
}

impl LiveTarget {
    pub fn new(frame: &DepthFrame, mask: Option<&PixelMask>) -> Self {
        Self::with_normals(frame, &compute_normals(frame), mask)
    }

    pub fn with_normals(frame: &DepthFrame, normals: &[Option<Vec3>], mask: Option<&PixelMask>) -> Self {
        let mut vertices = frame.vertex_map();
        let mut normals = normals.to_vec();
        if let Some(m) = mask {
            for (i, keep) in m.bits.iter().enumerate() {
                if !keep {
                    vertices[i] = None;
                    normals[i] = None;
                }
            }
        }
        Self {
            intrinsics: frame.intrinsics,
            vertices,
            normals,
        }
    }

    #[inline]
    fn at(&self, p: &Vec3) -> Option<(Vec3, Vec3)> {
        let (u, v) = self.intrinsics.project_to_pixel(p)?;
        let i = self.intrinsics.index(u, v);
        Some((self.vertices[i]?, self.normals[i]?))
    }
}

/// Projective association of the warped model against the live maps.
pub fn find_correspondences(
    model: &PointCloud,
    binding: &BlendBinding,
    graph: &DeformationGraph,
    live: &LiveTarget,
    params: &EnergyParams,
) -> Result<Vec<Correspondence>> {
    assert_eq!(binding.points.len(), model.len(), "binding does not cover the model");
    let corrs: Vec<Correspondence> = (0..model.len())
        .into_par_iter()
        .filter_map(|k| {
            let n = model.normals[k]?;
            let v = model.vertices[k];
            let b = &binding.points[k];
            let wv = graph.warp_point(&v, b);
            let wn = graph.warp_normal(&n, b)?;
            let (tv, tn) = live.at(&wv)?;
            ((wv - tv).norm() < params.max_distance && wn.dot(&tn) > params.min_normal_cos).then(|| Correspondence {
                model_vertex: v,
                model_normal: n,
                target_vertex: tv,
                target_normal: tn,
                binding: b.clone(),
            })
        })
        .collect();
    if corrs.len() < MIN_CORRESPONDENCES {
        return Err(Error::TrackingLost {
            found: corrs.len(),
            required: MIN_CORRESPONDENCES,
        });
    }
    Ok(corrs)
}

#[inline]
fn data_residual(c: &Correspondence, graph: &DeformationGraph) -> f64 {
    match graph.warp_normal(&c.model_normal, &c.binding) {
        Some(n) => n.dot(&(graph.warp_point(&c.model_vertex, &c.binding) - c.target_vertex)),
        None => 0.0,
    }
}

/// Residual and its gradient blocks `[∂r/∂ω_i, ∂r/∂δt_i]` per bound node.
fn data_row(c: &Correspondence, graph: &DeformationGraph) -> (f64, Vec<(usize, Vector6<f64>)>) {
    let b = &c.binding;
    let mut m = Vec3::zeros();
    for &(i, w) in &b.nodes {
        m += graph.nodes[i].rotation * c.model_normal * w;
    }
    let m_norm = m.norm();
    if m_norm < 1e-9 {
        return (0.0, Vec::new());
    }
    let n = m / m_norm;
    let e = graph.warp_point(&c.model_vertex, b) - c.target_vertex;
    let r = n.dot(&e);
    // d r = n·dv + e·dn with dn = (I − n nᵀ) dm / |m|
    let u = (e - n * n.dot(&e)) / m_norm;
    let rows = b
        .nodes
        .iter()
        .map(|&(i, w)| {
            let node = &graph.nodes[i];
            let a = node.rotation * (c.model_vertex - node.position);
            let bn = node.rotation * c.model_normal;
            let dw = (a.cross(&n) + bn.cross(&u)) * w;
            let dt = n * w;
            (i, Vector6::new(dw.x, dw.y, dw.z, dt.x, dt.y, dt.z))
        })
        .collect();
    (r, rows)
}

#[inline]
fn arap_residual(graph: &DeformationGraph, i: usize, j: usize) -> Vec3 {
    let (ni, nj) = (&graph.nodes[i], &graph.nodes[j]);
    (nj.position + nj.translation) - (ni.position + ni.translation) - ni.rotation * (nj.position - ni.position)
}

pub fn energy_data(corrs: &[Correspondence], graph: &DeformationGraph) -> f64 {
    corrs.iter().map(|c| data_residual(c, graph).powi(2)).sum()
}

/// Sum over directed edges of `ε_ij ‖(g_j + t_j) − (g_i + t_i) − R_i (g_j − g_i)‖²`.
pub fn energy_arap(graph: &DeformationGraph) -> f64 {
    let mut e = 0.0;
    for (i, list) in graph.edges.iter().enumerate() {
        for &(j, eps) in list {
            e += eps * arap_residual(graph, i, j).norm_squared();
        }
    }
    e
}

pub fn energy_total(corrs: &[Correspondence], graph: &DeformationGraph, params: &EnergyParams) -> f64 {
    let prior = if params.lambda > 0.0 { energy_arap(graph) } else { 0.0 };
    energy_data(corrs, graph) + params.lambda * prior
}

/// Stacked residuals: one per correspondence, then three per directed edge
/// scaled by `√(λ ε)`.
pub fn residual_vector(corrs: &[Correspondence], graph: &DeformationGraph, params: &EnergyParams) -> Vec<f64> {
    let mut r: Vec<f64> = corrs.iter().map(|c| data_residual(c, graph)).collect();
    for (i, list) in graph.edges.iter().enumerate() {
        for &(j, eps) in list {
            let q = arap_residual(graph, i, j) * (params.lambda * eps).sqrt();
            r.extend_from_slice(q.as_slice());
        }
    }
    r
}

type ArapBlocks = (Vec3, SMatrix<f64, 3, 6>, SMatrix<f64, 3, 6>);

fn arap_rows(graph: &DeformationGraph, i: usize, j: usize, scale: f64) -> ArapBlocks {
    let ni = &graph.nodes[i];
    let q = arap_residual(graph, i, j) * scale;
    let rd = ni.rotation * (graph.nodes[j].position - ni.position);
    let mut ji = SMatrix::<f64, 3, 6>::zeros();
    ji.fixed_view_mut::<3, 3>(0, 0).copy_from(&(crate::geometry::skew(&rd) * scale));
    ji.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-Matrix3::identity() * scale));
    let mut jj = SMatrix::<f64, 3, 6>::zeros();
    jj.fixed_view_mut::<3, 3>(0, 3).copy_from(&(Matrix3::identity() * scale));
    (q, ji, jj)
}

/// Analytic Jacobian of [`residual_vector`] as a dense matrix (tests and small problems).
pub fn dense_jacobian(corrs: &[Correspondence], graph: &DeformationGraph, params: &EnergyParams) -> DMatrix<f64> {
    let n_edges: usize = graph.edges.iter().map(Vec::len).sum();
    let mut j = DMatrix::zeros(corrs.len() + 3 * n_edges, 6 * graph.len());
    for (row, c) in corrs.iter().enumerate() {
        for (i, g) in data_row(c, graph).1 {
            for k in 0..6 {
                j[(row, 6 * i + k)] += g[k];
            }
        }
    }
    let mut row = corrs.len();
    for (i, list) in graph.edges.iter().enumerate() {
        for &(jn, eps) in list {
            let (_, bi, bj) = arap_rows(graph, i, jn, (params.lambda * eps).sqrt());
            let mut vi = j.fixed_view_mut::<3, 6>(row, 6 * i);
            vi += bi;
            let mut vj = j.fixed_view_mut::<3, 6>(row, 6 * jn);
            vj += bj;
            row += 3;
        }
    }
    j
}

/// Undamped Gauss-Newton system `JᵀJ`, `Jᵀr` over node increments.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub a: BlockSparse,
    pub b: Vec<f64>,
}

impl NormalEquations {
    /// `JᵀJ + μ·diag(JᵀJ)` (diagonal floored so empty blocks stay invertible).
    pub fn damped(&self, mu: f64) -> BlockSparse {
        self.a.damped(mu, DAMPING_FLOOR)
    }
}

pub fn build_normal_equations(corrs: &[Correspondence], graph: &DeformationGraph, params: &EnergyParams) -> NormalEquations {
    let n = graph.len();
    let rows: Vec<(f64, Vec<(usize, Vector6<f64>)>)> = corrs.par_iter().map(|c| data_row(c, graph)).collect();
    let mut acc = BlockAccumulator::new(n);
    let mut b = vec![0.0; 6 * n];
    for (r, blocks) in &rows {
        for (i, gi) in blocks {
            for (j, gj) in blocks {
                acc.add(*i, *j, &(gi * gj.transpose()));
            }
            for k in 0..6 {
                b[6 * i + k] += gi[k] * r;
            }
        }
    }
    if params.lambda > 0.0 {
        for (i, list) in graph.edges.iter().enumerate() {
            for &(j, eps) in list {
                let (q, ji, jj) = arap_rows(graph, i, j, (params.lambda * eps).sqrt());
                let aii: Matrix6<f64> = ji.transpose() * ji;
                let aij: Matrix6<f64> = ji.transpose() * jj;
                let ajj: Matrix6<f64> = jj.transpose() * jj;
                acc.add(i, i, &aii);
                acc.add(i, j, &aij);
                acc.add(j, i, &aij.transpose());
                acc.add(j, j, &ajj);
                let bi = ji.transpose() * q;
                let bj = jj.transpose() * q;
                for k in 0..6 {
                    b[6 * i + k] += bi[k];
                    b[6 * j + k] += bj[k];
                }
            }
        }
    }
    // every node gets a diagonal block so damping and preconditioning see it
    for i in 0..n {
        acc.add(i, i, &Matrix6::zeros());
    }
    NormalEquations { a: acc.finish(), b }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostic {
    pub surface_id: u32,
    pub outer: usize,
    pub inner: usize,
    pub e_data: f64,
    pub e_prior: f64,
    pub n_corr: usize,
    pub step_norm: f64,
    pub accepted: bool,
}

impl IterationDiagnostic {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("diagnostic serializes")
    }
}

#[derive(Debug, Clone)]
pub struct WarpSolution {
    pub graph: DeformationGraph,
    pub diagnostics: Vec<IterationDiagnostic>,
    /// Correspondence count of the last outer iteration.
    pub correspondences: usize,
    /// `E_data` before the first step.
    pub e_data_initial: f64,
    /// `E_data` of the final warp over the last outer iteration's correspondences.
    pub e_data_final: f64,
    pub e_prior_final: f64,
}

/// Minimizes `E_data + λ E_prior` over the graph's node motions.
pub fn solve_warp(
    model: &PointCloud,
    graph: &DeformationGraph,
    live: &LiveTarget,
    params: &EnergyParams,
    config: &SolverConfig,
    surface_id: u32,
) -> Result<WarpSolution> {
    let binding = graph.bind(&model.vertices);
    solve_warp_bound(model, &binding, graph, live, params, config, surface_id)
}

/// [`solve_warp`] with a precomputed model binding.
pub fn solve_warp_bound(
    model: &PointCloud,
    binding: &BlendBinding,
    graph: &DeformationGraph,
    live: &LiveTarget,
    params: &EnergyParams,
    config: &SolverConfig,
    surface_id: u32,
) -> Result<WarpSolution> {
    let mut g = graph.clone();
    let mut mu = config.initial_damping;
    let mut diagnostics = Vec::new();
    let mut n_corr = 0;
    let mut e_data_initial = f64::NAN;
    let mut e_data_final = f64::NAN;
    for outer in 0..config.outer_iterations {
        let corrs = find_correspondences(model, binding, &g, live, params)?;
        n_corr = corrs.len();
        if outer == 0 {
            e_data_initial = energy_data(&corrs, &g);
        }
        let mut energy = energy_total(&corrs, &g, params);
        if !energy.is_finite() {
            return Err(Error::NonFiniteEnergy { outer, inner: 0 });
        }
        for inner in 0..config.inner_iterations {
            let eq = build_normal_equations(&corrs, &g, params);
            if eq.b.iter().all(|v| v.abs() < 1e-15) {
                diagnostics.push(IterationDiagnostic {
                    surface_id,
                    outer,
                    inner,
                    e_data: energy_data(&corrs, &g),
                    e_prior: energy_arap(&g),
                    n_corr,
                    step_norm: 0.0,
                    accepted: false,
                });
                break;
            }
            let mut accepted = None;
            for _ in 0..=config.max_retries {
                let sol = pcg_solve(&eq.damped(mu), &eq.b, config.pcg_tolerance, config.pcg_max_iterations);
                let step: Vec<f64> = sol.x.iter().map(|v| -v).collect();
                let step_norm = step.iter().map(|v| v * v).sum::<f64>().sqrt();
                let candidate = if step.iter().all(|v| v.is_finite()) { Some(g.apply_increment(&step)) } else { None };
                let (e_data, e_prior) = candidate
                    .as_ref()
                    .map(|c| (energy_data(&corrs, c), energy_arap(c)))
                    .unwrap_or((f64::NAN, f64::NAN));
                let total = e_data + if params.lambda > 0.0 { params.lambda * e_prior } else { 0.0 };
                let ok = total.is_finite() && total < energy;
                let diag = IterationDiagnostic {
                    surface_id,
                    outer,
                    inner,
                    e_data,
                    e_prior,
                    n_corr,
                    step_norm,
                    accepted: ok,
                };
                log::trace!("{}", diag.to_json_line());
                diagnostics.push(diag);
                if ok {
                    accepted = Some((candidate.unwrap(), total, step_norm));
                    mu = (mu / 10.0).max(config.initial_damping);
                    break;
                }
                mu *= 10.0;
            }
            match accepted {
                Some((next, total, step_norm)) => {
                    g = next;
                    energy = total;
                    if step_norm < 1e-10 {
                        break;
                    }
                }
                None => break,
            }
        }
        e_data_final = energy_data(&corrs, &g);
    }
    let e_prior_final = energy_arap(&g);
    Ok(WarpSolution {
        graph: g,
        diagnostics,
        correspondences: n_corr,
        e_data_initial,
        e_data_final,
        e_prior_final,
    })
}

/// Point-to-plane rigid ICP: the warp solver on a single-node graph.
pub fn rigid_icp(
    model: &PointCloud,
    live: &LiveTarget,
    initial: &RigidTransform,
    params: &EnergyParams,
    config: &SolverConfig,
    surface_id: u32,
) -> Result<(RigidTransform, WarpSolution)> {
    let graph = rigid_graph(initial);
    let params = EnergyParams { lambda: 0.0, ..*params };
    let sol = solve_warp(model, &graph, live, &params, config, surface_id)?;
    Ok((sol.graph.as_rigid_transform(), sol))
}
