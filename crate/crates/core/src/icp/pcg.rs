//! 6×6 block-sparse symmetric matrices and a block-Jacobi preconditioned CG.

use std::collections::HashMap;

use nalgebra::{DMatrix, Matrix6, Vector6};

/// Symmetric matrix stored as rows of `(column block, 6×6 block)`, each row
/// sorted by column.
#[derive(Debug, Clone, Default)]
pub struct BlockSparse {
    pub rows: Vec<Vec<(usize, Matrix6<f64>)>>,
}

/// Accumulates 6×6 blocks in arrival order, so sums are reproducible.
#[derive(Debug, Default)]
pub struct BlockAccumulator {
    n: usize,
    blocks: HashMap<(usize, usize), Matrix6<f64>>,
}

impl BlockAccumulator {
    pub fn new(n_blocks: usize) -> Self {
        Self {
            n: n_blocks,
            blocks: HashMap::new(),
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, block: &Matrix6<f64>) {
        *self.blocks.entry((i, j)).or_insert_with(Matrix6::zeros) += block;
    }

    pub fn finish(self) -> BlockSparse {
        let mut rows: Vec<Vec<(usize, Matrix6<f64>)>> = vec![Vec::new(); self.n];
        for ((i, j), b) in self.blocks {
            rows[i].push((j, b));
        }
        for r in &mut rows {
            r.sort_by_key(|x| x.0);
        }
        BlockSparse { rows }
    }
}

impl BlockSparse {
    pub fn n_blocks(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        6 * self.rows.len()
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        assert!(m.nrows() == m.ncols() && m.nrows().is_multiple_of(6), "dimension must be a multiple of 6");
        let n = m.nrows() / 6;
        let mut rows = vec![Vec::new(); n];
        for (i, row) in rows.iter_mut().enumerate() {
            for j in 0..n {
                let b: Matrix6<f64> = m.fixed_view::<6, 6>(6 * i, 6 * j).into_owned();
                if b.iter().any(|&x| x != 0.0) {
                    row.push((j, b));
                }
            }
        }
        Self { rows }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for (j, b) in row {
                m.fixed_view_mut::<6, 6>(6 * i, 6 * j).copy_from(b);
            }
        }
        m
    }

    pub fn diagonal_block(&self, i: usize) -> Matrix6<f64> {
        self.rows[i]
            .binary_search_by_key(&i, |x| x.0)
            .map(|k| self.rows[i][k].1)
            .unwrap_or_else(|_| Matrix6::zeros())
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for (i, row) in self.rows.iter().enumerate() {
            let mut acc = Vector6::zeros();
            for (j, b) in row {
                acc += b * Vector6::from_column_slice(&x[6 * j..6 * j + 6]);
            }
            y[6 * i..6 * i + 6].copy_from_slice(acc.as_slice());
        }
        y
    }

    /// `A + μ·max(diag(A), floor)` on the scalar diagonal.
    pub fn damped(&self, mu: f64, floor: f64) -> BlockSparse {
        let mut out = self.clone();
        for (i, row) in out.rows.iter_mut().enumerate() {
            let k = match row.binary_search_by_key(&i, |x| x.0) {
                Ok(k) => k,
                Err(k) => {
                    row.insert(k, (i, Matrix6::zeros()));
                    k
                }
            };
            let b = &mut row[k].1;
            for d in 0..6 {
                b[(d, d)] += mu * b[(d, d)].max(floor);
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct PcgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Final `‖A x − b‖ / ‖b‖`.
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

enum BlockInverse {
    Full(Matrix6<f64>),
    Diagonal(Vector6<f64>),
}

fn preconditioner(a: &BlockSparse) -> Vec<BlockInverse> {
    (0..a.n_blocks())
        .map(|i| {
            let d = a.diagonal_block(i);
            match d.cholesky() {
                Some(c) => BlockInverse::Full(c.inverse()),
                None => BlockInverse::Diagonal(Vector6::from_fn(|k, _| {
                    let v = d[(k, k)];
                    if v > 0.0 {
                        1.0 / v
                    } else {
                        1.0
                    }
                })),
            }
        })
        .collect()
}

fn apply_preconditioner(m: &[BlockInverse], r: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; r.len()];
    for (i, inv) in m.iter().enumerate() {
        let ri = Vector6::from_column_slice(&r[6 * i..6 * i + 6]);
        let zi = match inv {
            BlockInverse::Full(b) => b * ri,
            BlockInverse::Diagonal(d) => d.component_mul(&ri),
        };
        z[6 * i..6 * i + 6].copy_from_slice(zi.as_slice());
    }
    z
}

/// Solves `A x = b` with 6×6 block-Jacobi preconditioned conjugate gradients.
pub fn pcg_solve(a: &BlockSparse, b: &[f64], tolerance: f64, max_iterations: usize) -> PcgResult {
    assert_eq!(a.dim(), b.len());
    let b_norm = dot(b, b).sqrt();
    let mut x = vec![0.0; b.len()];
    if b_norm == 0.0 {
        return PcgResult {
            x,
            iterations: 0,
            converged: true,
            relative_residual: 0.0,
        };
    }
    let m = preconditioner(a);
    let mut r = b.to_vec();
    let mut z = apply_preconditioner(&m, &r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut rel = 1.0;
    for it in 1..=max_iterations {
        let ap = a.mul(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) || !pap.is_finite() {
            return PcgResult {
                x,
                iterations: it - 1,
                converged: false,
                relative_residual: rel,
            };
        }
        let alpha = rz / pap;
        for k in 0..x.len() {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        rel = dot(&r, &r).sqrt() / b_norm;
        if rel <= tolerance {
            return PcgResult {
                x,
                iterations: it,
                converged: true,
                relative_residual: rel,
            };
        }
        z = apply_preconditioner(&m, &r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..p.len() {
            p[k] = z[k] + beta * p[k];
        }
    }
    PcgResult {
        x,
        iterations: max_iterations,
        converged: false,
        relative_residual: rel,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &q * q.transpose() + DMatrix::identity(n, n) * n as f64
    }

    #[test]
    fn identity_system() {
        let a = BlockSparse::from_dense(&DMatrix::identity(6, 6));
        let mut b = vec![0.0; 6];
        b[0] = 1.0;
        let r = pcg_solve(&a, &b, 1e-10, 50);
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-12 && r.x[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let a = BlockSparse::from_dense(&random_spd(12, 1));
        let r = pcg_solve(&a, &[0.0; 12], 1e-10, 50);
        assert_eq!(r.iterations, 0);
        assert!(r.x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_dense_cholesky() {
        for (n, seed) in [(30, 3u64), (120, 4)] {
            let a = random_spd(n, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let direct = a.clone().cholesky().unwrap().solve(&nalgebra::DVector::from_vec(b.clone()));
            let r = pcg_solve(&BlockSparse::from_dense(&a), &b, 1e-12, 500);
            assert!(r.converged);
            let err = (nalgebra::DVector::from_vec(r.x) - &direct).norm() / direct.norm();
            assert!(err < 1e-6, "n={n} err={err}");
        }
    }

    #[test]
    fn damping_keeps_empty_blocks_solvable() {
        let mut m = DMatrix::zeros(12, 12);
        m.view_mut((0, 0), (6, 6)).copy_from(&DMatrix::identity(6, 6));
        let a = BlockSparse::from_dense(&m).damped(1e-4, 1e-9);
        let b = vec![1.0; 12];
        let r = pcg_solve(&a, &b, 1e-8, 200);
        assert!(r.x.iter().all(|v| v.is_finite()));
    }
}
