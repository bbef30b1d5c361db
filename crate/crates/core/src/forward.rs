//! Synthetic measurements: finite-difference forward solves, Born terms,
//! Rytov data and noise injection.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::greens::{green, green_table, QuadratureSpec};
use crate::model::{OpticalBackground, Point2, RoiGrid, SdArray};

/// Absorbing disk inside the region of interest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: Point2,
    pub radius: f64,
    pub delta_mu_a: f64,
}

/// Sum of disk inclusions on top of the background.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub disks: Vec<Disk>,
}

impl Phantom {
    pub fn new(disks: Vec<Disk>) -> Result<Self> {
        for (k, d) in disks.iter().enumerate() {
            if !(d.radius > 0.0 && d.radius.is_finite()) {
                return Err(Error::param(&format!("phantom.disks[{k}].radius"), "must be > 0"));
            }
            if !(d.delta_mu_a >= 0.0 && d.delta_mu_a.is_finite()) {
                return Err(Error::param(
                    &format!("phantom.disks[{k}].delta_mu_a"),
                    "must be finite and >= 0",
                ));
            }
            if !(d.center.y > 0.0) {
                return Err(Error::param(&format!("phantom.disks[{k}].center"), "must lie below the surface"));
            }
        }
        Ok(Self { disks })
    }

    pub fn point_value(&self, p: Point2) -> f64 {
        self.disks
            .iter()
            .filter(|d| p.distance(d.center) <= d.radius)
            .map(|d| d.delta_mu_a)
            .sum()
    }

    /// Scales every inclusion contrast by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            disks: self
                .disks
                .iter()
                .map(|d| Disk {
                    delta_mu_a: d.delta_mu_a * factor,
                    ..*d
                })
                .collect(),
        }
    }

    /// Mean over the rectangle `[x0, x1] x [y0, y1]` by `n x n` midpoint sampling.
    fn box_average(&self, x0: f64, x1: f64, y0: f64, y1: f64, n: usize) -> f64 {
        let (dx, dy) = ((x1 - x0) / n as f64, (y1 - y0) / n as f64);
        let mut acc = 0.0;
        for a in 0..n {
            for b in 0..n {
                acc += self.point_value(Point2::new(x0 + (a as f64 + 0.5) * dx, y0 + (b as f64 + 0.5) * dy));
            }
        }
        acc / (n * n) as f64
    }

    /// Cell-averaged absorption perturbation on the region-of-interest cells.
    pub fn rasterize_cells(&self, grid: &RoiGrid) -> Vec<f64> {
        (0..grid.n_cells())
            .map(|i| {
                let (x0, x1, y0, y1) = grid.cell_bounds(i);
                self.box_average(x0, x1, y0, y1, 8)
            })
            .collect()
    }

    /// Control-volume-averaged absorption perturbation on the FD nodes.
    pub fn rasterize_nodes(&self, grid: &FdGrid) -> Vec<f64> {
        let h = grid.spacing;
        let mut out = vec![0.0; grid.n_nodes()];
        if self.disks.is_empty() {
            return out;
        }
        for j in 0..grid.nyn {
            for i in 0..grid.nxn {
                let p = grid.node(i, j);
                let reach = self
                    .disks
                    .iter()
                    .any(|d| p.distance(d.center) <= d.radius + h);
                if reach {
                    let y0 = (p.y - 0.5 * h).max(0.0);
                    out[grid.idx(i, j)] = self.box_average(p.x - 0.5 * h, p.x + 0.5 * h, y0, p.y + 0.5 * h, 4);
                }
            }
        }
        out
    }
}

/// Truncated computational domain `[-half_width, half_width] x [0, depth]`.
///
/// Nodes on the lateral and bottom edges carry homogeneous Dirichlet values;
/// the surface row carries the Robin condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdGrid {
    pub half_width: f64,
    pub depth: f64,
    pub spacing: f64,
    pub nxn: usize,
    pub nyn: usize,
}

impl FdGrid {
    pub fn new(half_width: f64, depth: f64, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::param("fd.spacing", "must be finite and > 0"));
        }
        if !(half_width > spacing && depth > spacing) {
            return Err(Error::param("fd.extent", "must exceed the spacing"));
        }
        let nx_half = (half_width / spacing).round();
        let nyc = (depth / spacing).round();
        if ((nx_half * spacing - half_width).abs() > 1e-9) || ((nyc * spacing - depth).abs() > 1e-9) {
            return Err(Error::param("fd.spacing", "must divide the domain extents"));
        }
        Ok(Self {
            half_width,
            depth,
            spacing,
            nxn: 2 * nx_half as usize + 1,
            nyn: nyc as usize + 1,
        })
    }

    /// Checks the margin between the region of interest and the artificial edges.
    pub fn check_contains(&self, roi: &RoiGrid, margin: f64) -> Result<()> {
        let (mut xmin, mut xmax, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
        for i in 0..roi.n_cells() {
            let (x0, x1, _, y1) = roi.cell_bounds(i);
            xmin = xmin.min(x0);
            xmax = xmax.max(x1);
            ymax = ymax.max(y1);
        }
        if xmin - margin < -self.half_width || xmax + margin > self.half_width || ymax + margin > self.depth {
            return Err(Error::param(
                "fd.extent",
                format!("domain must exceed the region of interest by {margin} mm"),
            ));
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.nxn * self.nyn
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nxn + i
    }

    pub fn node(&self, i: usize, j: usize) -> Point2 {
        Point2::new(
            -self.half_width + i as f64 * self.spacing,
            j as f64 * self.spacing,
        )
    }

    /// Lateral index of the surface node nearest to `x`.
    pub fn nearest_column(&self, x: f64) -> Result<usize> {
        let i = ((x + self.half_width) / self.spacing).round();
        if i < 1.0 || i > (self.nxn - 2) as f64 {
            return Err(Error::param("fd", format!("surface position {x} outside the domain")));
        }
        Ok(i as usize)
    }

    fn is_dirichlet(&self, i: usize, j: usize) -> bool {
        i == 0 || i + 1 == self.nxn || j + 1 == self.nyn
    }
}

/// Nodal photon density from one pencil-beam source.
#[derive(Debug, Clone)]
pub struct FdSolution {
    pub grid: FdGrid,
    pub values: Vec<f64>,
    pub iterations: usize,
}

impl FdSolution {
    /// Value at the surface node nearest to lateral position `x`.
    pub fn surface_value(&self, x: f64) -> Result<f64> {
        let i = self.grid.nearest_column(x)?;
        Ok(self.values[self.grid.idx(i, 0)])
    }

    pub fn at_node(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }
}

const CG_REL_TOL: f64 = 1e-15;
const CG_MAX_ITER: usize = 50_000;

/// Finite-volume form of `-D0 lap u + (mu_a + dmu) u = g0 delta(x - x_s)`.
///
/// Interior rows are the five-point stencil multiplied by the cell area. Surface
/// rows balance a half cell: one-sided normal difference to the row below, the
/// Robin outflow `h u / zeta` and half-weighted lateral fluxes. The resulting
/// matrix is symmetric positive definite and is solved by Jacobi-preconditioned CG.
struct Operator<'a> {
    grid: &'a FdGrid,
    d0: f64,
    diag: Vec<f64>,
}

impl<'a> Operator<'a> {
    fn new(grid: &'a FdGrid, bg: &OpticalBackground, dmu: &[f64]) -> Self {
        let h = grid.spacing;
        let d0 = bg.d0;
        let mut diag = vec![1.0; grid.n_nodes()];
        for j in 0..grid.nyn {
            for i in 0..grid.nxn {
                if grid.is_dirichlet(i, j) {
                    continue;
                }
                let k = grid.idx(i, j);
                let mu = bg.mu_a_bar + dmu[k];
                diag[k] = if j == 0 {
                    2.0 * d0 + h / bg.zeta + 0.5 * mu * h * h
                } else {
                    4.0 * d0 + mu * h * h
                };
            }
        }
        Self { grid, d0, diag }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let g = self.grid;
        let nx = g.nxn;
        let d0 = self.d0;
        y.par_chunks_mut(nx).enumerate().for_each(|(j, row)| {
            for (i, out) in row.iter_mut().enumerate() {
                if g.is_dirichlet(i, j) {
                    *out = 0.0;
                    continue;
                }
                let k = j * nx + i;
                let lateral = x[k - 1] + x[k + 1];
                let below = x[k + nx];
                *out = if j == 0 {
                    self.diag[k] * x[k] - 0.5 * d0 * lateral - d0 * below
                } else {
                    self.diag[k] * x[k] - d0 * (lateral + below + x[k - nx])
                };
            }
        });
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pcg(op: &Operator, b: &[f64]) -> Result<(Vec<f64>, usize)> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut z: Vec<f64> = r.iter().zip(&op.diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 1..=CG_MAX_ITER {
        op.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rnorm = dot(&r, &r).sqrt();
        if rnorm <= CG_REL_TOL * bnorm {
            return Ok((x, it));
        }
        for k in 0..n {
            z[k] = r[k] / op.diag[k];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    let rnorm = dot(&r, &r).sqrt();
    Err(Error::SolverNonConvergence {
        iterations: CG_MAX_ITER,
        residual: rnorm / bnorm,
    })
}

/// Solves the heterogeneous forward problem for a pencil beam at surface position `source_x`.
///
/// `dmu` holds the absorption perturbation per node (see [`Phantom::rasterize_nodes`]).
pub fn solve_fd(bg: &OpticalBackground, grid: &FdGrid, dmu: &[f64], source_x: f64) -> Result<FdSolution> {
    if dmu.len() != grid.n_nodes() {
        return Err(Error::DimensionMismatch(format!(
            "absorption field has {} entries, grid has {} nodes",
            dmu.len(),
            grid.n_nodes()
        )));
    }
    if let Some(v) = dmu.iter().find(|v| !(v.is_finite() && **v >= -bg.mu_a_bar)) {
        return Err(Error::param("dmu", format!("total absorption must stay >= 0, got perturbation {v}")));
    }
    let op = Operator::new(grid, bg, dmu);
    let mut rhs = vec![0.0; grid.n_nodes()];
    rhs[grid.idx(grid.nearest_column(source_x)?, 0)] = bg.g0;
    let (values, iterations) = pcg(&op, &rhs)?;
    Ok(FdSolution {
        grid: *grid,
        values,
        iterations,
    })
}

/// Green's function values linking the probes and the region-of-interest cells.
#[derive(Debug, Clone)]
pub struct ProbeTables {
    /// `G(x_d, y_i)`, detectors x cells.
    pub det_cell: DMatrix<f64>,
    /// `G(y_i, x_s)`, cells x sources.
    pub cell_src: DMatrix<f64>,
    /// `G(x_d, x_s)`, detectors x sources.
    pub det_src: DMatrix<f64>,
    pub cell_area: f64,
    pub g0: f64,
}

impl ProbeTables {
    pub fn build(grid: &RoiGrid, sd: &SdArray, bg: &OpticalBackground, quad: &QuadratureSpec) -> Result<Self> {
        quad.validate()?;
        Ok(Self {
            det_cell: green_table(&sd.detectors, &grid.centers, bg, quad)?,
            cell_src: green_table(&grid.centers, &sd.sources, bg, quad)?,
            det_src: green_table(&sd.detectors, &sd.sources, bg, quad)?,
            cell_area: grid.cell_area(),
            g0: bg.g0,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.det_cell.ncols()
    }

    /// Analytic unperturbed field `u0(x_d) = g0 G(x_d, x_s)` for pair `p`.
    pub fn u0_at_detector(&self, sd: &SdArray, p: usize) -> f64 {
        let (s, d) = sd.pairs[p];
        self.g0 * self.det_src[(d, s)]
    }
}

/// `G(y_i1, y_i2)` between region-of-interest cells.
///
/// Uses lattice translation invariance: the value depends only on the column
/// offset and the two rows. Coincident cells use `G(y_i, y_i + (offset * h, 0))`.
#[derive(Debug, Clone)]
pub struct CellGreen {
    width: usize,
    ny: usize,
    /// Indexed `[dcol][row1][row2]`.
    table: Vec<f64>,
    pub diag_offset: f64,
}

impl CellGreen {
    pub const DEFAULT_DIAG_OFFSET: f64 = 0.25;

    pub fn build(grid: &RoiGrid, bg: &OpticalBackground, quad: &QuadratureSpec, diag_offset: f64) -> Result<Self> {
        if !(diag_offset > 0.0 && diag_offset < 0.5) {
            return Err(Error::param("diag_offset", "must lie in (0, 0.5) cell widths"));
        }
        let (width, ny, h) = (grid.width(), grid.ny, grid.h);
        let keys: Vec<(usize, usize, usize)> = (0..width)
            .flat_map(|dc| (0..ny).flat_map(move |r1| (r1..ny).map(move |r2| (dc, r1, r2))))
            .collect();
        let values = keys
            .par_iter()
            .map(|&(dc, r1, r2)| {
                let a = Point2::new(0.0, grid.origin.y + (r1 as f64 + 0.5) * h);
                let b = if dc == 0 && r1 == r2 {
                    a.shifted(diag_offset * h, 0.0)
                } else {
                    Point2::new(dc as f64 * h, grid.origin.y + (r2 as f64 + 0.5) * h)
                };
                green(a, b, bg, quad)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut table = vec![0.0; width * ny * ny];
        for (&(dc, r1, r2), v) in keys.iter().zip(values) {
            table[(dc * ny + r1) * ny + r2] = v;
            table[(dc * ny + r2) * ny + r1] = v;
        }
        Ok(Self {
            width,
            ny,
            table,
            diag_offset,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.width * self.ny
    }

    pub fn get(&self, i1: usize, i2: usize) -> f64 {
        let (r1, c1) = (i1 / self.width, i1 % self.width);
        let (r2, c2) = (i2 / self.width, i2 % self.width);
        let dc = c1.abs_diff(c2);
        self.table[(dc * self.ny + r1) * self.ny + r2]
    }

    /// `y_i1 = sum_i2 G(y_i1, y_i2) x_i2`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n_cells();
        (0..n)
            .into_par_iter()
            .map(|i1| (0..n).map(|i2| self.get(i1, i2) * x[i2]).sum())
            .collect()
    }
}

/// First and second Born terms at the detector of one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BornTerms {
    pub v1: f64,
    pub v2: f64,
}

/// Born terms for every pair.
///
/// `v1(x_d) = -|w| sum_i G(x_d, y_i) dmu_i u0(y_i)` and
/// `v2(x_d) = |w|^2 sum_{i1,i2} G(x_d, y_i1) dmu_i1 G(y_i1, y_i2) dmu_i2 u0(y_i2)`,
/// with `u0(y) = g0 G(y, x_s)`. `v2` is left at zero when `coupling` is `None`.
pub fn born_terms_all(
    tables: &ProbeTables,
    coupling: Option<&CellGreen>,
    sd: &SdArray,
    dmu: &[f64],
) -> Result<Vec<BornTerms>> {
    let n = tables.n_cells();
    if dmu.len() != n {
        return Err(Error::DimensionMismatch(format!("dmu has {} cells, tables have {n}", dmu.len())));
    }
    let w = tables.cell_area;
    // dmu_i u0(y_i) per source
    let weighted: Vec<Vec<f64>> = (0..sd.sources.len())
        .map(|s| (0..n).map(|i| dmu[i] * tables.g0 * tables.cell_src[(i, s)]).collect())
        .collect();
    let scattered: Option<Vec<Vec<f64>>> =
        coupling.map(|c| weighted.iter().map(|x| c.matvec(x)).collect());
    Ok(sd
        .pairs
        .iter()
        .map(|&(s, d)| {
            let row = tables.det_cell.row(d);
            let v1 = -w * (0..n).map(|i| row[i] * weighted[s][i]).sum::<f64>();
            let v2 = scattered.as_ref().map_or(0.0, |sc| {
                w * w * (0..n).map(|i| row[i] * dmu[i] * sc[s][i]).sum::<f64>()
            });
            BornTerms { v1, v2 }
        })
        .collect())
}

/// Born terms for a single pair `p`.
pub fn born_terms(
    tables: &ProbeTables,
    coupling: Option<&CellGreen>,
    sd: &SdArray,
    dmu: &[f64],
    p: usize,
) -> Result<BornTerms> {
    if p >= sd.n_pairs() {
        return Err(Error::DimensionMismatch(format!("pair {p} of {}", sd.n_pairs())));
    }
    let single = SdArray {
        sources: sd.sources.clone(),
        detectors: sd.detectors.clone(),
        pairs: vec![sd.pairs[p]],
    };
    Ok(born_terms_all(tables, coupling, &single, dmu)?[0])
}

/// First and second Rytov data `(phi_R, phi_R2)` from the Born terms.
pub fn rytov_data(u0_at_detector: f64, v1: f64, v2: f64) -> Result<(f64, f64)> {
    if !(u0_at_detector > 0.0) {
        return Err(Error::NonPositive {
            what: "unperturbed detector field".into(),
            value: u0_at_detector,
        });
    }
    let r1 = v1 / u0_at_detector;
    let phi_r = -r1;
    let phi_r2 = -r1 + 0.5 * r1 * r1 - v2 / u0_at_detector;
    Ok((phi_r, phi_r2))
}

/// Boundary data `Phi^(p)` for every source-detector pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub pairs: Vec<(usize, usize)>,
    pub source_x: Vec<f64>,
    pub detector_x: Vec<f64>,
    /// `ln(u0~ / u~)` with noisy fields.
    pub phi_noisy: Vec<f64>,
    /// `ln(u0 / u)` without noise.
    pub phi_clean: Vec<f64>,
    pub u0: Vec<f64>,
    pub u: Vec<f64>,
    pub noise_pct: f64,
    pub seed: u64,
    pub redraws: usize,
}

impl MeasurementSet {
    pub fn len(&self) -> usize {
        self.phi_noisy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi_noisy.is_empty()
    }
}

const MAX_NOISE_REDRAWS: usize = 100;

/// Multiplicative relative noise `value (1 + pct/100 xi)`, redrawn while non-positive.
fn noisy(value: f64, pct: f64, rng: &mut ChaCha8Rng, redraws: &mut usize) -> Result<f64> {
    for _ in 0..MAX_NOISE_REDRAWS {
        let xi: f64 = StandardNormal.sample(rng);
        let v = value * (1.0 + 0.01 * pct * xi);
        if v > 0.0 {
            return Ok(v);
        }
        *redraws += 1;
    }
    Err(Error::NoiseExhausted(MAX_NOISE_REDRAWS))
}

/// Per-source FD fields at every detector: `(u0, u)` indexed `[source][detector]`.
pub fn detector_fields(
    bg: &OpticalBackground,
    grid: &FdGrid,
    phantom: &Phantom,
    sd: &SdArray,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let zero = vec![0.0; grid.n_nodes()];
    let dmu = phantom.rasterize_nodes(grid);
    let per_source = sd
        .sources
        .par_iter()
        .map(|src| {
            let u0 = solve_fd(bg, grid, &zero, src.x)?;
            let u = solve_fd(bg, grid, &dmu, src.x)?;
            let read = |sol: &FdSolution| {
                sd.detectors
                    .iter()
                    .map(|d| sol.surface_value(d.x))
                    .collect::<Result<Vec<_>>>()
            };
            Ok((read(&u0)?, read(&u)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_source.into_iter().unzip())
}

/// Simulates the measurement: FD fields with and without the phantom, relative
/// Gaussian noise applied independently to both, and the log ratio per pair.
///
/// Noise for pair `p` comes from its own ChaCha stream, so the result does not
/// depend on evaluation order.
pub fn measure(
    bg: &OpticalBackground,
    grid: &FdGrid,
    phantom: &Phantom,
    sd: &SdArray,
    noise_pct: f64,
    seed: u64,
) -> Result<MeasurementSet> {
    if !(noise_pct >= 0.0 && noise_pct.is_finite()) {
        return Err(Error::param("noise_pct", "must be finite and >= 0"));
    }
    let (u0s, us) = detector_fields(bg, grid, phantom, sd)?;
    let mut out = MeasurementSet {
        pairs: sd.pairs.clone(),
        source_x: Vec::with_capacity(sd.n_pairs()),
        detector_x: Vec::with_capacity(sd.n_pairs()),
        phi_noisy: Vec::with_capacity(sd.n_pairs()),
        phi_clean: Vec::with_capacity(sd.n_pairs()),
        u0: Vec::with_capacity(sd.n_pairs()),
        u: Vec::with_capacity(sd.n_pairs()),
        noise_pct,
        seed,
        redraws: 0,
    };
    for (p, &(s, d)) in sd.pairs.iter().enumerate() {
        let (u0, u) = (u0s[s][d], us[s][d]);
        if !(u0 > 0.0 && u > 0.0) {
            return Err(Error::NonPositive {
                what: format!("detector field for pair {p}"),
                value: u0.min(u),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(p as u64);
        let u_noisy = noisy(u, noise_pct, &mut rng, &mut out.redraws)?;
        let u0_noisy = noisy(u0, noise_pct, &mut rng, &mut out.redraws)?;
        out.source_x.push(sd.sources[s].x);
        out.detector_x.push(sd.detectors[d].x);
        out.phi_noisy.push((u0_noisy / u_noisy).ln());
        out.phi_clean.push((u0 / u).ln());
        out.u0.push(u0);
        out.u.push(u);
    }
    Ok(out)
}
