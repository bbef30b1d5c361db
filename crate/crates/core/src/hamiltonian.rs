//! Measurement kernel, spin couplings and fields, cost evaluation, and the
//! second-order neglect diagnostic.
//!
//! With occupations `s_i = S_i / M + 1/2` the linearised data are
//! `phi_p ~ sum_i K_pi s_i`, and the truncated cost
//!
//! ```text
//! Psi_trunc(S) = 1/2 sum_p (Phi_p - sum_i K_pi s_i)^2 + (alpha / M) sum_i (S_i + M/2)
//! ```
//!
//! equals `H(S) + c0` for `H(S) = -sum_ij J_ij S_i S_j - sum_i h_i S_i` with
//! `J_ij = -(1 / 2M^2) sum_p K_pi K_pj` and
//! `h_i = M sum_j J_ij + (1/M) (sum_p Phi_p K_pi - alpha)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::forward::{CellGreen, ProbeTables};
use crate::greens::QuadratureSpec;
use crate::model::{check_levels, OpticalBackground, RoiGrid, SdArray, SpinField};

/// `K_pi = dmu_max |w| G(x_d, y_i) G(y_i, x_s) / G(x_d, x_s)`.
#[derive(Debug, Clone)]
pub struct Kernel {
    pub k: DMatrix<f64>,
    pub delta_mu_a_max: f64,
    pub tables: ProbeTables,
    pub sd: SdArray,
}

impl Kernel {
    pub fn from_tables(tables: ProbeTables, sd: &SdArray, delta_mu_a_max: f64) -> Result<Self> {
        if !(delta_mu_a_max > 0.0 && delta_mu_a_max.is_finite()) {
            return Err(Error::param("delta_mu_a_max", "must be finite and > 0"));
        }
        let n = tables.n_cells();
        let scale = delta_mu_a_max * tables.cell_area;
        let mut k = DMatrix::zeros(sd.n_pairs(), n);
        for (p, &(s, d)) in sd.pairs.iter().enumerate() {
            let denom = tables.det_src[(d, s)];
            for i in 0..n {
                k[(p, i)] = scale * tables.det_cell[(d, i)] * tables.cell_src[(i, s)] / denom;
            }
        }
        if let Some(v) = k.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::NonPositive {
                what: "kernel entry".into(),
                value: *v,
            });
        }
        Ok(Self {
            k,
            delta_mu_a_max,
            tables,
            sd: sd.clone(),
        })
    }

    pub fn n_pairs(&self) -> usize {
        self.k.nrows()
    }

    pub fn n_cells(&self) -> usize {
        self.k.ncols()
    }

    /// Linearised data `sum_i K_pi s_i` for occupations `s`.
    pub fn linear_data(&self, fractions: &[f64]) -> DVector<f64> {
        &self.k * DVector::from_column_slice(fractions)
    }
}

pub fn build_kernel(
    grid: &RoiGrid,
    sd: &SdArray,
    bg: &OpticalBackground,
    delta_mu_a_max: f64,
    quad: &QuadratureSpec,
) -> Result<Kernel> {
    for (s, src) in sd.sources.iter().enumerate() {
        if let Some(d) = sd.detectors.iter().position(|d| d == src) {
            return Err(Error::param(
                "sd",
                format!("detector {d} coincides with source {s} at x = {}", src.x),
            ));
        }
    }
    let tables = ProbeTables::build(grid, sd, bg, quad)?;
    Kernel::from_tables(tables, sd, delta_mu_a_max)
}

/// Quadratic spin Hamiltonian `H(S) = -S^T J S - h^T S` plus the constant
/// `offset` that restores the truncated cost.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianModel {
    pub j: DMatrix<f64>,
    pub h: DVector<f64>,
    pub offset: f64,
    pub m: u32,
    pub alpha: f64,
    /// Absorption scale used to decode spins.
    pub delta_mu_a_max: f64,
}

impl HamiltonianModel {
    /// Wraps raw couplings and fields; `j` must be square and symmetric.
    pub fn from_parts(j: DMatrix<f64>, h: DVector<f64>, m: u32, offset: f64, alpha: f64) -> Result<Self> {
        check_levels(m)?;
        if !(j.iter().chain(h.iter()).all(|v| v.is_finite()) && offset.is_finite()) {
            return Err(Error::param("model", "couplings and fields must be finite"));
        }
        if !j.is_square() || j.nrows() != h.len() {
            return Err(Error::DimensionMismatch(format!(
                "couplings {}x{} vs fields {}",
                j.nrows(),
                j.ncols(),
                h.len()
            )));
        }
        for a in 0..j.nrows() {
            for b in 0..a {
                if j[(a, b)] != j[(b, a)] {
                    return Err(Error::param("j", format!("not symmetric at ({a}, {b})")));
                }
            }
        }
        Ok(Self {
            j,
            h,
            offset,
            m,
            alpha,
            delta_mu_a_max: 1.0,
        })
    }

    pub fn n(&self) -> usize {
        self.h.len()
    }

    pub fn half(&self) -> i32 {
        (self.m / 2) as i32
    }
}

pub fn build_model(kernel: &Kernel, data: &[f64], alpha: f64, m: u32) -> Result<HamiltonianModel> {
    check_levels(m)?;
    if data.len() != kernel.n_pairs() {
        return Err(Error::DimensionMismatch(format!(
            "{} data values for {} kernel rows",
            data.len(),
            kernel.n_pairs()
        )));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::param("alpha", "must be finite and > 0"));
    }
    let k = &kernel.k;
    let mf = m as f64;
    let n = kernel.n_cells();
    let mut j = k.tr_mul(k);
    j *= -1.0 / (2.0 * mf * mf);
    // Exact symmetry, independent of the GEMM summation order.
    for a in 0..n {
        for b in 0..a {
            let v = 0.5 * (j[(a, b)] + j[(b, a)]);
            j[(a, b)] = v;
            j[(b, a)] = v;
        }
    }
    let phi = DVector::from_column_slice(data);
    let projected = k.tr_mul(&phi);
    let row_sums: DVector<f64> = j.column_sum();
    let h = DVector::from_fn(n, |i, _| mf * row_sums[i] + (projected[i] - alpha) / mf);
    let residual0: f64 = (0..kernel.n_pairs())
        .map(|p| {
            let c = data[p] - 0.5 * k.row(p).sum();
            0.5 * c * c
        })
        .sum();
    let offset = residual0 + 0.5 * alpha * n as f64;
    let mut model = HamiltonianModel::from_parts(j, h, m, offset, alpha)?;
    model.delta_mu_a_max = kernel.delta_mu_a_max;
    Ok(model)
}

fn check_spins(model: &HamiltonianModel, s: &SpinField) -> Result<()> {
    if s.len() != model.n() || s.m != model.m {
        return Err(Error::DimensionMismatch(format!(
            "spin field (N={}, M={}) vs model (N={}, M={})",
            s.len(),
            s.m,
            model.n(),
            model.m
        )));
    }
    Ok(())
}

/// Full double sum `-sum_ij J_ij S_i S_j - sum_i h_i S_i`.
pub fn energy(model: &HamiltonianModel, s: &SpinField) -> Result<f64> {
    check_spins(model, s)?;
    Ok(energy_of(model, &s.values))
}

pub(crate) fn energy_of(model: &HamiltonianModel, values: &[i32]) -> f64 {
    let sv = DVector::from_iterator(values.len(), values.iter().map(|&v| v as f64));
    let js = &model.j * &sv;
    -sv.dot(&js) - model.h.dot(&sv)
}

/// Effective field `2 sum_{j != i} J_ij S_j + h_i` seen by site `i`.
pub fn effective_field(model: &HamiltonianModel, values: &[i32], i: usize) -> f64 {
    let col = model.j.column(i);
    let mut acc = 0.0;
    for (j, &v) in values.iter().enumerate() {
        if j != i {
            acc += col[j] * v as f64;
        }
    }
    2.0 * acc + model.h[i]
}

/// `H(S with S_i <- proposed) - H(S)`.
pub fn delta_energy(model: &HamiltonianModel, s: &SpinField, i: usize, proposed: i32) -> Result<f64> {
    check_spins(model, s)?;
    if i >= s.len() {
        return Err(Error::DimensionMismatch(format!("site {i} of {}", s.len())));
    }
    if proposed.abs() > s.half() {
        return Err(Error::SpinOutOfRange {
            cell: i,
            value: proposed,
            half: s.half(),
        });
    }
    let h_eff = effective_field(model, &s.values, i);
    Ok(site_delta(model.j[(i, i)], h_eff, s.values[i], proposed))
}

#[inline]
pub(crate) fn site_delta(j_ii: f64, h_eff: f64, current: i32, proposed: i32) -> f64 {
    let (a, b) = (current as f64, proposed as f64);
    -(h_eff * (b - a) + j_ii * (b * b - a * a))
}

/// Cost `1/2 sum_p (Phi_p - phi~_p)^2 + (alpha/M) sum_i |S_i - S_i^(0)|` with `S^(0) = -M/2`.
///
/// Without `second_order`, `phi~_p = sum_i K_pi s_i`. With it, the second Rytov
/// terms are added: `+1/2 (sum_i K_pi s_i)^2` minus the second Born double sum.
pub fn cost_psi(
    kernel: &Kernel,
    data: &[f64],
    alpha: f64,
    s: &SpinField,
    second_order: Option<&CellGreen>,
) -> Result<f64> {
    if data.len() != kernel.n_pairs() || s.len() != kernel.n_cells() {
        return Err(Error::DimensionMismatch("cost inputs".into()));
    }
    let frac = s.fractions();
    let lin = kernel.linear_data(&frac);
    let born2 = match second_order {
        Some(cg) => Some(second_born_ratio(kernel, cg, &frac)?),
        None => None,
    };
    let misfit: f64 = (0..kernel.n_pairs())
        .map(|p| {
            let mut model = lin[p];
            if let Some(b2) = &born2 {
                model += 0.5 * lin[p] * lin[p] - b2[p];
            }
            let r = data[p] - model;
            0.5 * r * r
        })
        .sum();
    let half = s.half() as f64;
    let penalty: f64 = s.values.iter().map(|&v| v as f64 + half).sum::<f64>();
    Ok(misfit + alpha / s.m as f64 * penalty)
}

/// `|w|^2 sum_{i1,i2} G(x_d,y_i1) dmu_i1 G(y_i1,y_i2) dmu_i2 G(y_i2,x_s) / G(x_d,x_s)` per pair.
fn second_born_ratio(kernel: &Kernel, cg: &CellGreen, frac: &[f64]) -> Result<Vec<f64>> {
    let t = &kernel.tables;
    let n = kernel.n_cells();
    if cg.n_cells() != n {
        return Err(Error::DimensionMismatch("cell coupling table".into()));
    }
    let dmu: Vec<f64> = frac.iter().map(|f| f * kernel.delta_mu_a_max).collect();
    let scattered: Vec<Vec<f64>> = (0..kernel.sd.sources.len())
        .map(|s| cg.matvec(&(0..n).map(|i| dmu[i] * t.cell_src[(i, s)]).collect::<Vec<_>>()))
        .collect();
    let w2 = t.cell_area * t.cell_area;
    Ok(kernel
        .sd
        .pairs
        .iter()
        .map(|&(s, d)| {
            let acc: f64 = (0..n).map(|i| t.det_cell[(d, i)] * dmu[i] * scattered[s][i]).sum();
            w2 * acc / t.det_src[(d, s)]
        })
        .collect())
}

/// Summary of `|phi_p g2| / |g1|` over sampled `(p, i1, i2)` triples.
#[derive(Debug, Clone)]
pub struct NeglectReport {
    pub triples: Vec<(usize, usize, usize)>,
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    pub argmax: (usize, usize, usize),
    pub mean_ratio: f64,
    pub fraction_below_one: f64,
}

impl NeglectReport {
    pub fn all_below_one(&self) -> bool {
        self.max_ratio < 1.0
    }
}

/// Uniform random `(pair, cell, cell)` triples.
pub fn sample_triples(count: usize, n_pairs: usize, n_cells: usize, seed: u64) -> Vec<(usize, usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            (
                rng.random_range(0..n_pairs),
                rng.random_range(0..n_cells),
                rng.random_range(0..n_cells),
            )
        })
        .collect()
}

/// Compares `g1 = K_p,i1 K_p,i2` with
/// `g2 = g1 - 2 dmu_max^2 |w|^2 G(x_d,y_i1) G(y_i1,y_i2) G(y_i2,x_s) / G(x_d,x_s)`.
pub fn theorem1_diagnostic(
    kernel: &Kernel,
    coupling: &CellGreen,
    phi: &[f64],
    triples: &[(usize, usize, usize)],
) -> Result<NeglectReport> {
    if triples.is_empty() {
        return Err(Error::param("triples", "sample is empty"));
    }
    if phi.len() != kernel.n_pairs() {
        return Err(Error::DimensionMismatch("phi vs kernel rows".into()));
    }
    let t = &kernel.tables;
    let c = kernel.delta_mu_a_max * t.cell_area;
    let mut ratios = Vec::with_capacity(triples.len());
    for &(p, i1, i2) in triples {
        if p >= kernel.n_pairs() || i1 >= kernel.n_cells() || i2 >= kernel.n_cells() {
            return Err(Error::DimensionMismatch(format!("triple ({p}, {i1}, {i2})")));
        }
        let (s, d) = kernel.sd.pairs[p];
        let g1 = kernel.k[(p, i1)] * kernel.k[(p, i2)];
        let chain = t.det_cell[(d, i1)] * coupling.get(i1, i2) * t.cell_src[(i2, s)] / t.det_src[(d, s)];
        let g2 = g1 - 2.0 * c * c * chain;
        ratios.push((phi[p] * g2).abs() / g1.abs());
    }
    let (mut max_ratio, mut argmax) = (f64::NEG_INFINITY, triples[0]);
    for (r, &tr) in ratios.iter().zip(triples) {
        if *r > max_ratio {
            max_ratio = *r;
            argmax = tr;
        }
    }
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let fraction_below_one = ratios.iter().filter(|&&r| r < 1.0).count() as f64 / ratios.len() as f64;
    Ok(NeglectReport {
        triples: triples.to_vec(),
        ratios,
        max_ratio,
        argmax,
        mean_ratio,
        fraction_below_one,
    })
}
