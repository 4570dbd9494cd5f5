//! Damped normal equations `(H + μD) δ = −g` assembled from factor blocks.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix6};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};

use crate::graph::LinearSystem;

/// Systems up to this many unknowns are factored densely.
pub const DENSE_LIMIT: usize = 128;

const MIN_DAMPING_DIAGONAL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    Auto,
    Dense,
    Sparse,
}

/// Block-sparse `H = JᵀJ` (upper triangle) and `g = Jᵀr`.
#[derive(Clone, Debug)]
pub struct NormalEquations {
    dim: usize,
    blocks: BTreeMap<(usize, usize), Matrix6<f64>>,
    gradient: DVector<f64>,
}

impl NormalEquations {
    pub fn assemble(system: &LinearSystem) -> Self {
        let dim = system.dim();
        let mut blocks: BTreeMap<(usize, usize), Matrix6<f64>> = BTreeMap::new();
        let mut gradient = DVector::zeros(dim);
        for block in &system.blocks {
            let slots: Vec<usize> = block
                .keys
                .iter()
                .map(|k| system.slot(k).expect("factor key missing from ordering"))
                .collect();
            for (a, (&sa, ja)) in slots.iter().zip(&block.jacobians).enumerate() {
                let mut g = gradient.rows_mut(6 * sa, 6);
                g += ja.transpose() * block.residual;
                for (&sb, jb) in slots.iter().zip(&block.jacobians).skip(a) {
                    let (i, j, h) = if sa <= sb {
                        (sa, sb, ja.transpose() * jb)
                    } else {
                        (sb, sa, jb.transpose() * ja)
                    };
                    *blocks.entry((i, j)).or_insert_with(Matrix6::zeros) += h;
                }
            }
        }
        Self {
            dim,
            blocks,
            gradient,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gradient(&self) -> &DVector<f64> {
        &self.gradient
    }

    fn diagonal(&self) -> DVector<f64> {
        let mut d = DVector::zeros(self.dim);
        for (&(i, j), b) in &self.blocks {
            if i == j {
                for c in 0..6 {
                    d[6 * i + c] = b[(c, c)];
                }
            }
        }
        d
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.dim, self.dim);
        for (&(i, j), b) in &self.blocks {
            h.view_mut((6 * i, 6 * j), (6, 6)).copy_from(b);
            if i != j {
                h.view_mut((6 * j, 6 * i), (6, 6)).copy_from(&b.transpose());
            }
        }
        h
    }

    fn to_sparse(&self, damping: &DVector<f64>) -> CscMatrix<f64> {
        let mut coo = CooMatrix::new(self.dim, self.dim);
        for (&(i, j), b) in &self.blocks {
            if i == j {
                let mut damped = *b;
                for c in 0..6 {
                    damped[(c, c)] += damping[6 * i + c];
                }
                coo.push_matrix(6 * i, 6 * j, &damped);
            } else {
                coo.push_matrix(6 * i, 6 * j, b);
                coo.push_matrix(6 * j, 6 * i, &b.transpose());
            }
        }
        CscMatrix::from(&coo)
    }

    /// Solves `(H + μ·diag(max(H_ii, floor))) δ = −g`; `None` if not positive definite.
    pub fn solve_damped(&self, mu: f64, backend: Backend) -> Option<DVector<f64>> {
        let damping = self.diagonal().map(|d| mu * d.max(MIN_DAMPING_DIAGONAL));
        let rhs = -&self.gradient;
        let dense = match backend {
            Backend::Auto => self.dim <= DENSE_LIMIT,
            Backend::Dense => true,
            Backend::Sparse => false,
        };
        let delta = if dense {
            let mut h = self.to_dense();
            for i in 0..self.dim {
                h[(i, i)] += damping[i];
            }
            h.cholesky()?.solve(&rhs)
        } else {
            let chol = CscCholesky::factor(&self.to_sparse(&damping)).ok()?;
            let x = chol.solve(&rhs);
            DVector::from_column_slice(x.as_slice())
        };
        delta.iter().all(|v| v.is_finite()).then_some(delta)
    }
}
