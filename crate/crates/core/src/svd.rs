//! Truncated-SVD reconstruction of the linearised system `A x = Phi`, with
//! `A = K / dmu_max` so that `x` is the absorption perturbation per cell.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hamiltonian::Kernel;

#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self> {
        if a.nrows() != rhs.len() {
            return Err(Error::DimensionMismatch(format!(
                "matrix has {} rows, right-hand side {}",
                a.nrows(),
                rhs.len()
            )));
        }
        Ok(Self { a, rhs })
    }

    pub fn from_kernel(kernel: &Kernel, phi: &[f64]) -> Result<Self> {
        Self::new(
            &kernel.k / kernel.delta_mu_a_max,
            DVector::from_column_slice(phi),
        )
    }

    pub fn max_rank(&self) -> usize {
        self.a.nrows().min(self.a.ncols())
    }
}

/// Singular triplets in descending order, signs fixed so the largest-magnitude
/// entry of every right singular vector is positive.
#[derive(Debug, Clone)]
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl SortedSvd {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let svd = a.clone().svd(true, true);
        let u = svd.u.expect("left vectors requested");
        let v_t = svd.v_t.expect("right vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
        let r = order.len();
        let mut us = DMatrix::zeros(a.nrows(), r);
        let mut vs = DMatrix::zeros(a.ncols(), r);
        let mut sigma = Vec::with_capacity(r);
        for (dst, &src) in order.iter().enumerate() {
            let v = v_t.row(src).transpose();
            let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            vs.set_column(dst, &(v * sign));
            us.set_column(dst, &(u.column(src) * sign));
            sigma.push(svd.singular_values[src]);
        }
        Self { u: us, sigma, v: vs }
    }

    /// Count of singular values above the numerical rank threshold.
    pub fn numerical_rank(&self, rows: usize, cols: usize) -> usize {
        let tol = self.sigma.first().copied().unwrap_or(0.0) * rows.max(cols) as f64 * f64::EPSILON;
        self.sigma.iter().filter(|&&s| s > tol).count()
    }
}

#[derive(Debug, Clone)]
pub struct TsvdSolution {
    pub x: Vec<f64>,
    /// Number of singular triplets actually used.
    pub effective_k: usize,
    pub singular_values: Vec<f64>,
}

/// `x = sum_{j <= k} (u_j . Phi / sigma_j) v_j`.
pub fn tsvd_solve(system: &LinearSystem, k: usize) -> Result<TsvdSolution> {
    let svd = SortedSvd::new(&system.a);
    tsvd_from(&svd, system, k)
}

/// Same as [`tsvd_solve`] with a precomputed decomposition.
pub fn tsvd_from(svd: &SortedSvd, system: &LinearSystem, k: usize) -> Result<TsvdSolution> {
    let max = system.max_rank();
    if k == 0 || k > max {
        return Err(Error::RankOutOfRange { k, max });
    }
    let effective_k = k.min(svd.numerical_rank(system.a.nrows(), system.a.ncols()));
    let mut x = DVector::zeros(system.a.ncols());
    for j in 0..effective_k {
        let coef = svd.u.column(j).dot(&system.rhs) / svd.sigma[j];
        x.axpy(coef, &svd.v.column(j), 1.0);
    }
    Ok(TsvdSolution {
        x: x.iter().copied().collect(),
        effective_k,
        singular_values: svd.sigma.clone(),
    })
}
