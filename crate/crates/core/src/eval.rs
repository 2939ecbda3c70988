//! Absolute trajectory error: timestamp matching, rigid alignment, RMSE.

use serde::{Deserialize, Serialize};

use crate::dataset::{associate, Trajectory, DEFAULT_ASSOCIATION_TOLERANCE};
use crate::error::{Error, Result};
use crate::geometry::{fit_rigid, RigidTransform, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// Row-major rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl From<&RigidTransform> for Alignment {
    fn from(t: &RigidTransform) -> Self {
        let r = &t.rotation;
        Self {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteReport {
    pub rmse: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    pub matched: usize,
    /// Per matched pose, in estimated-trajectory order.
    pub errors: Vec<f64>,
    pub alignment: Alignment,
}

/// Position pairs `(estimated, reference)` matched by timestamp.
pub fn matched_positions(est: &Trajectory, reference: &Trajectory, tolerance: f64) -> Vec<(Vec3, Vec3)> {
    let te: Vec<f64> = est.poses.iter().map(|p| p.0).collect();
    let tr: Vec<f64> = reference.poses.iter().map(|p| p.0).collect();
    associate(&te, &tr, tolerance)
        .into_iter()
        .map(|(i, j)| (est.poses[i].1.translation, reference.poses[j].1.translation))
        .collect()
}

fn align_pairs(pairs: &[(Vec3, Vec3)]) -> Result<RigidTransform> {
    if pairs.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "ATE needs at least 3 timestamp-matched poses, found {}",
            pairs.len()
        )));
    }
    if pairs.iter().all(|(a, b)| a == b) {
        return Ok(RigidTransform::identity());
    }
    let (src, dst): (Vec<Vec3>, Vec<Vec3>) = pairs.iter().copied().unzip();
    fit_rigid(&src, &dst).ok_or_else(|| Error::InvalidArgument("alignment failed".into()))
}

/// Rigid transform (no scale) taking estimated positions onto the reference.
pub fn align(est: &Trajectory, reference: &Trajectory) -> Result<RigidTransform> {
    align_pairs(&matched_positions(est, reference, DEFAULT_ASSOCIATION_TOLERANCE))
}

pub fn ate_rmse(est: &Trajectory, reference: &Trajectory) -> Result<AteReport> {
    let pairs = matched_positions(est, reference, DEFAULT_ASSOCIATION_TOLERANCE);
    let t = align_pairs(&pairs)?;
    let errors: Vec<f64> = pairs.iter().map(|(e, r)| (t.apply(e) - r).norm()).collect();
    let n = errors.len() as f64;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let mean = errors.iter().sum::<f64>() / n;
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median = if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    };
    Ok(AteReport {
        rmse,
        mean,
        median,
        max: sorted[m - 1],
        matched: m,
        errors,
        alignment: Alignment::from(&t),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_traj(rng: &mut impl Rng, n: usize) -> Trajectory {
        Trajectory {
            poses: (0..n)
                .map(|i| {
                    let p = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    (i as f64 / 30.0, RigidTransform::from_translation(p))
                })
                .collect(),
        }
    }

    #[test]
    fn identical_trajectories() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_traj(&mut rng, 20);
        let r = ate_rmse(&t, &t).unwrap();
        assert_eq!(r.rmse, 0.0);
        assert_eq!(align(&t, &t).unwrap(), RigidTransform::identity());
    }

    #[test]
    fn shifted_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let reference = random_traj(&mut rng, 15);
        let shift = Vec3::new(0.3, -0.1, 0.2);
        let est = reference.transformed(&RigidTransform::from_translation(shift));
        let a = align(&est, &reference).unwrap();
        assert!((a.translation + shift).norm() < 1e-9);
        assert!((a.rotation - nalgebra::Matrix3::identity()).norm() < 1e-9);
    }

    #[test]
    fn recovers_random_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let reference = random_traj(&mut rng, 12);
            let w = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let pert = RigidTransform::from_axis_angle(w, Vec3::new(1.0, 2.0, -0.5));
            let est = reference.transformed(&pert);
            let a = align(&est, &reference).unwrap();
            let back = a.compose(&pert);
            assert!((back.rotation - nalgebra::Matrix3::identity()).norm() < 1e-9);
            assert!(back.translation.norm() < 1e-9);
        }
    }

    #[test]
    fn collinear_offset_hand_computed() {
        // reference along x; estimate alternates ±1 cm in y, which no rigid motion can remove
        let reference = Trajectory {
            poses: (0..4).map(|i| (i as f64, RigidTransform::from_translation(Vec3::new(i as f64 * 0.1, 0.0, 0.0)))).collect(),
        };
        let est = Trajectory {
            poses: (0..4)
                .map(|i| {
                    let y = if i % 2 == 0 { 0.01 } else { -0.01 };
                    (i as f64, RigidTransform::from_translation(Vec3::new(i as f64 * 0.1, y, 0.0)))
                })
                .collect(),
        };
        let r = ate_rmse(&est, &reference).unwrap();
        // planar Procrustes in closed form: centered sets, optimal angle from atan2
        let src: Vec<(f64, f64)> = est.poses.iter().map(|p| (p.1.translation.x, p.1.translation.y)).collect();
        let dst: Vec<(f64, f64)> = reference.poses.iter().map(|p| (p.1.translation.x, p.1.translation.y)).collect();
        let mean = |v: &[(f64, f64)]| (v.iter().map(|p| p.0).sum::<f64>() / 4.0, v.iter().map(|p| p.1).sum::<f64>() / 4.0);
        let (ms, md) = (mean(&src), mean(&dst));
        let (mut sn, mut sd) = (0.0, 0.0);
        for (a, b) in src.iter().zip(&dst) {
            let (ax, ay, bx, by) = (a.0 - ms.0, a.1 - ms.1, b.0 - md.0, b.1 - md.1);
            sn += ax * by - ay * bx;
            sd += ax * bx + ay * by;
        }
        let th = sn.atan2(sd);
        let mut sq = 0.0;
        for (a, b) in src.iter().zip(&dst) {
            let (ax, ay) = (a.0 - ms.0, a.1 - ms.1);
            let x = th.cos() * ax - th.sin() * ay - (b.0 - md.0);
            let y = th.sin() * ax + th.cos() * ay - (b.1 - md.1);
            sq += x * x + y * y;
        }
        let oracle = (sq / 4.0).sqrt();
        assert!((r.rmse - oracle).abs() < 1e-12, "{} vs {oracle}", r.rmse);
        assert!(r.rmse > 0.008 && r.rmse < 0.01);
        assert!(r.rmse >= r.mean);
    }

    #[test]
    fn too_few_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_traj(&mut rng, 2);
        assert!(ate_rmse(&t, &t).is_err());
    }
}
