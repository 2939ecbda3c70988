use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::icp::{EnergyParams, SolverConfig};
use crate::split::GraphCutParams;

/// Solver settings as they appear in the config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpSettings {
    pub outer: usize,
    pub inner: usize,
    pub pcg_tol: f64,
    pub pcg_max: usize,
    pub mu0: f64,
    /// Correspondence distance gate, meters.
    pub delta_d: f64,
    /// Correspondence normal gate, degrees.
    pub delta_n_deg: f64,
    pub max_retries: usize,
}

impl Default for IcpSettings {
    fn default() -> Self {
        let s = SolverConfig::default();
        let e = EnergyParams::default();
        Self {
            outer: s.outer_iterations,
            inner: s.inner_iterations,
            pcg_tol: s.pcg_tolerance,
            pcg_max: s.pcg_max_iterations,
            mu0: s.initial_damping,
            delta_d: e.max_distance,
            delta_n_deg: 60.0,
            max_retries: s.max_retries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Voxel size for object surfaces, meters.
    pub voxel_size: f64,
    /// Voxel size for the background; twice `voxel_size` when absent.
    pub background_voxel_size: Option<f64>,
    pub truncation_factor: f64,
    pub lambda: f64,
    pub r_node: f64,
    #[serde(rename = "K")]
    pub k_neighbors: usize,
    pub node_edges: usize,
    pub icp: IcpSettings,
    pub class_table_path: Option<PathBuf>,
    /// Overrides the dataset's depth units per meter.
    pub depth_scale: Option<f64>,
    pub max_weight: f64,
    pub min_segment_points: usize,
    pub association_iou: f64,
    /// Consecutive tracking failures before a surface is retired.
    pub retire_after: usize,
    pub graph_cut: GraphCutParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.01,
            background_voxel_size: None,
            truncation_factor: crate::tsdf::DEFAULT_TRUNCATION_FACTOR,
            lambda: 5.0,
            r_node: crate::graph::DEFAULT_NODE_RADIUS,
            k_neighbors: crate::graph::DEFAULT_K,
            node_edges: crate::graph::DEFAULT_NODE_EDGES,
            icp: IcpSettings::default(),
            class_table_path: None,
            depth_scale: None,
            max_weight: crate::tsdf::DEFAULT_MAX_WEIGHT,
            min_segment_points: 100,
            association_iou: 0.3,
            retire_after: 3,
            graph_cut: GraphCutParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        // relative class table paths are relative to the config file
        if let (Some(table), Some(dir)) = (&cfg.class_table_path, path.parent()) {
            if table.is_relative() {
                cfg.class_table_path = Some(dir.join(table));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("config: {m}")));
        if !(self.voxel_size > 0.0) || self.background_voxel_size.is_some_and(|s| !(s > 0.0)) {
            return bad("voxel sizes must be positive");
        }
        if !(self.truncation_factor >= 2.0) {
            return bad("truncation_factor must be at least 2");
        }
        if !(self.r_node > 0.0) || self.k_neighbors == 0 {
            return bad("r_node must be positive and K at least 1");
        }
        if self.depth_scale.is_some_and(|s| !(s > 0.0)) {
            return bad("depth_scale must be positive");
        }
        self.energy_params().validate()?;
        self.solver_config().validate()
    }

    pub fn background_voxel(&self) -> f64 {
        self.background_voxel_size.unwrap_or(2.0 * self.voxel_size)
    }

    pub fn energy_params(&self) -> EnergyParams {
        EnergyParams {
            lambda: self.lambda,
            max_distance: self.icp.delta_d,
            min_normal_cos: self.icp.delta_n_deg.to_radians().cos(),
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            outer_iterations: self.icp.outer,
            inner_iterations: self.icp.inner,
            pcg_max_iterations: self.icp.pcg_max,
            pcg_tolerance: self.icp.pcg_tol,
            initial_damping: self.icp.mu0,
            max_retries: self.icp.max_retries,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"voxel_size": 0.02, "K": 4, "icp": {"outer": 2}}"#).unwrap();
        assert_eq!(cfg.voxel_size, 0.02);
        assert_eq!(cfg.k_neighbors, 4);
        assert_eq!(cfg.icp.outer, 2);
        assert_eq!(cfg.icp.inner, 3);
        assert_eq!(cfg.lambda, 5.0);
        assert_eq!(cfg.background_voxel(), 0.04);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let cfg = PipelineConfig {
            truncation_factor: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
