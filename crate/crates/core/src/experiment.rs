//! Subcommand drivers: simulate, reconstruct (annealing and truncated SVD),
//! diagnose and render. Each writes its artifacts under `config.output_dir`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::annealer::{anneal_chains, AnnealResult};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::forward::{born_terms_all, detector_fields, measure, rytov_data, CellGreen, Disk, MeasurementSet, Phantom, ProbeTables};
use crate::greens::{green, QuadratureSpec};
use crate::hamiltonian::{build_model, cost_psi, sample_triples, theorem1_diagnostic, Kernel, NeglectReport};
use crate::io;
use crate::model::{spin_to_absorption, Point2, RoiGrid, SdArray};
use crate::svd::{tsvd_from, LinearSystem, SortedSvd};

pub const MEASUREMENTS_FILE: &str = "measurements.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const SA_MAP_FILE: &str = "sa_map.csv";
pub const SA_PGM_FILE: &str = "sa_map.pgm";
pub const SA_TRACE_FILE: &str = "sa_trace.csv";
pub const SA_SUMMARY_FILE: &str = "sa_summary.toml";
pub const MODEL_DUMP_FILE: &str = "model.bin";
pub const SVD_SUMMARY_FILE: &str = "svd_summary.toml";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.txt";

pub fn svd_map_file(rank: usize) -> String {
    format!("svd_k{rank}.csv")
}

pub fn svd_pgm_file(rank: usize) -> String {
    format!("svd_k{rank}.pgm")
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.output_dir)?;
    Ok(cfg.output_dir.clone())
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

/// Forward-simulates the configured phantom and writes the measurement CSV
/// plus a manifest holding the resolved configuration.
pub fn run_simulate(cfg: &ExperimentConfig) -> Result<MeasurementSet> {
    cfg.validate()?;
    let set = measure(
        &cfg.background()?,
        &cfg.fd_grid()?,
        &cfg.phantom()?,
        &cfg.sd_array()?,
        cfg.measurement.noise_pct,
        cfg.measurement.seed,
    )?;
    let dir = out_dir(cfg)?;
    io::write_measurements(&dir.join(MEASUREMENTS_FILE), &set)?;
    fs::write(dir.join(MANIFEST_FILE), cfg.to_toml_string()?)?;
    Ok(set)
}

/// Noisy data from a measurement file, checked against the configured array.
pub fn load_data(cfg: &ExperimentConfig, path: &Path) -> Result<Vec<f64>> {
    let rows = io::read_measurements(path)?;
    let sd = cfg.sd_array()?;
    if rows.len() != sd.n_pairs() {
        return Err(Error::DimensionMismatch(format!(
            "{} has {} pairs, configured array has {}",
            path.display(),
            rows.len(),
            sd.n_pairs()
        )));
    }
    for (p, r) in rows.iter().enumerate() {
        let (s, d) = (sd.source_of(p), sd.detector_of(p));
        if (r.src_x - s.x).abs() > 1e-9 || (r.det_x - d.x).abs() > 1e-9 {
            return Err(Error::DimensionMismatch(format!(
                "pair {p}: file has source {} / detector {}, config has {} / {}",
                r.src_x, r.det_x, s.x, d.x
            )));
        }
    }
    Ok(rows.iter().map(|r| r.phi_noisy).collect())
}

pub fn build_kernel_for(cfg: &ExperimentConfig) -> Result<Kernel> {
    let tables = ProbeTables::build(&cfg.roi_grid()?, &cfg.sd_array()?, &cfg.background()?, &cfg.quadrature_spec())?;
    Kernel::from_tables(tables, &cfg.sd_array()?, cfg.annealing.delta_mu_a_max)
}

/// Annealing reconstruction with a prebuilt kernel.
#[derive(Debug, Clone)]
pub struct SaReconstruction {
    pub map: Vec<f64>,
    pub result: AnnealResult,
    pub psi: f64,
    pub runtime_s: f64,
}

pub fn reconstruct_sa(cfg: &ExperimentConfig, kernel: &Kernel, data: &[f64]) -> Result<SaReconstruction> {
    let s = &cfg.annealing;
    let start = Instant::now();
    let model = build_model(kernel, data, s.alpha, s.levels)?;
    let result = anneal_chains(&model, &cfg.schedule()?, s.seed, s.chains, None)?;
    let psi = cost_psi(kernel, data, s.alpha, &result.best, None)?;
    Ok(SaReconstruction {
        map: spin_to_absorption(&result.best),
        result,
        psi,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Serialize)]
struct SaSummary {
    best_energy: f64,
    psi: f64,
    runtime_s: f64,
    winning_chain: usize,
    chains: usize,
    seed: u64,
    map_min: f64,
    map_max: f64,
}

/// Reads the measurements, anneals, and writes map, heatmap, trace and summary.
/// With `dump_model`, also writes `K`, `J`, `h` in binary.
pub fn run_reconstruct_sa(cfg: &ExperimentConfig, measurements: &Path, dump_model: bool) -> Result<SaReconstruction> {
    cfg.validate()?;
    let data = load_data(cfg, measurements)?;
    let start = Instant::now();
    let kernel = build_kernel_for(cfg)?;
    let mut rec = reconstruct_sa(cfg, &kernel, &data)?;
    rec.runtime_s = start.elapsed().as_secs_f64();
    let dir = out_dir(cfg)?;
    let grid = cfg.roi_grid()?;
    io::write_map(&dir.join(SA_MAP_FILE), &grid, &rec.map)?;
    io::write_pgm(&dir.join(SA_PGM_FILE), grid.width(), grid.ny, &rec.map, cfg.annealing.delta_mu_a_max)?;
    io::write_trace(&dir.join(SA_TRACE_FILE), &rec.result.trace)?;
    if dump_model {
        let model = build_model(&kernel, &data, cfg.annealing.alpha, cfg.annealing.levels)?;
        io::write_model_dump(&dir.join(MODEL_DUMP_FILE), &kernel, &model)?;
    }
    write_toml(
        &dir.join(SA_SUMMARY_FILE),
        &SaSummary {
            best_energy: rec.result.best_energy,
            psi: rec.psi,
            runtime_s: rec.runtime_s,
            winning_chain: rec.result.chain,
            chains: cfg.annealing.chains,
            seed: cfg.annealing.seed,
            map_min: rec.map.iter().copied().fold(f64::INFINITY, f64::min),
            map_max: rec.map.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        },
    )?;
    Ok(rec)
}

#[derive(Debug, Clone, Serialize)]
pub struct SvdMap {
    pub rank: usize,
    pub effective_k: usize,
    #[serde(skip)]
    pub values: Vec<f64>,
    pub min: f64,
    pub max: f64,
}

pub fn reconstruct_svd(cfg: &ExperimentConfig, kernel: &Kernel, data: &[f64]) -> Result<Vec<SvdMap>> {
    let system = LinearSystem::from_kernel(kernel, data)?;
    let svd = SortedSvd::new(&system.a);
    cfg.svd
        .ranks
        .iter()
        .map(|&rank| {
            let sol = tsvd_from(&svd, &system, rank)?;
            Ok(SvdMap {
                rank,
                effective_k: sol.effective_k,
                min: sol.x.iter().copied().fold(f64::INFINITY, f64::min),
                max: sol.x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                values: sol.x,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct SvdSummary<'a> {
    maps: &'a [SvdMap],
}

/// One map per configured rank. Values are written unclipped to CSV; the PGM
/// clamps to `[0, dmu_max]` and leaves a sidecar note when it does.
pub fn run_reconstruct_svd(cfg: &ExperimentConfig, measurements: &Path) -> Result<Vec<SvdMap>> {
    cfg.validate()?;
    let data = load_data(cfg, measurements)?;
    let kernel = build_kernel_for(cfg)?;
    let maps = reconstruct_svd(cfg, &kernel, &data)?;
    let dir = out_dir(cfg)?;
    let grid = cfg.roi_grid()?;
    for m in &maps {
        io::write_map(&dir.join(svd_map_file(m.rank)), &grid, &m.values)?;
        io::write_pgm(
            &dir.join(svd_pgm_file(m.rank)),
            grid.width(),
            grid.ny,
            &m.values,
            cfg.annealing.delta_mu_a_max,
        )?;
    }
    write_toml(&dir.join(SVD_SUMMARY_FILE), &SvdSummary { maps: &maps })?;
    Ok(maps)
}

/// Re-renders a map CSV as a PGM heatmap.
pub fn render(cfg: &ExperimentConfig, map_csv: &Path, pgm: &Path) -> Result<io::PgmReport> {
    let grid = cfg.roi_grid()?;
    let values = io::read_map(map_csv)?;
    if values.len() != grid.n_cells() {
        return Err(Error::DimensionMismatch(format!(
            "{} has {} cells, configured grid has {}",
            map_csv.display(),
            values.len(),
            grid.n_cells()
        )));
    }
    io::write_pgm(pgm, grid.width(), grid.ny, &values, cfg.annealing.delta_mu_a_max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RytovRow {
    pub contrast: f64,
    pub max_phi: f64,
    pub max_err_first: f64,
    pub max_err_second: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdRow {
    pub pair: usize,
    pub fd: f64,
    pub analytic: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadRow {
    pub x: Point2,
    pub y: Point2,
    pub de: f64,
    pub adaptive: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct DiagnosticsReport {
    pub theorem1: NeglectReport,
    pub rytov: Vec<RytovRow>,
    pub fd: Vec<FdRow>,
    pub quadrature: Vec<QuadRow>,
}

impl DiagnosticsReport {
    pub fn fd_max_rel(&self) -> f64 {
        self.fd.iter().map(|r| r.rel_err).fold(0.0, f64::max)
    }

    pub fn quadrature_max_rel(&self) -> f64 {
        self.quadrature.iter().map(|r| r.rel_err).fold(0.0, f64::max)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let t = &self.theorem1;
        let (p, i1, i2) = t.argmax;
        let _ = writeln!(s, "second-order neglect ratio |phi g2| / |g1| over {} triples", t.ratios.len());
        let _ = writeln!(s, "  max    {:e} at (p={p}, i1={i1}, i2={i2})", t.max_ratio);
        let _ = writeln!(s, "  mean   {:e}", t.mean_ratio);
        let _ = writeln!(s, "  below1 {}", t.fraction_below_one);
        let _ = writeln!(s, "\nRytov error against contrast");
        let _ = writeln!(s, "  contrast  max|phi|  max|phi-phi_R|  max|phi-phi_R2|");
        for r in &self.rytov {
            let _ = writeln!(
                s,
                "  {}  {:e}  {:e}  {:e}",
                r.contrast, r.max_phi, r.max_err_first, r.max_err_second
            );
        }
        let _ = writeln!(s, "\nfinite-difference u0 against g0 G(x_d, x_s): {} pairs", self.fd.len());
        let _ = writeln!(s, "  max relative error {:e}", self.fd_max_rel());
        let _ = writeln!(s, "\nquadrature cross-check: {} point pairs", self.quadrature.len());
        let _ = writeln!(s, "  max relative difference {:e}", self.quadrature_max_rel());
        s
    }
}

fn with_contrast(phantom: &Phantom, c: f64) -> Result<Phantom> {
    Phantom::new(
        phantom
            .disks
            .iter()
            .map(|d| Disk {
                delta_mu_a: c,
                ..*d
            })
            .collect(),
    )
}

/// Pseudo-random interior point pairs at different depths.
pub fn quadrature_pairs(count: usize, seed: u64, grid: &RoiGrid) -> Vec<(Point2, Point2)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = grid.nx as f64 * grid.h + 0.5 * grid.h;
    let (top, bottom) = (grid.origin.y.max(0.5), grid.origin.y + grid.ny as f64 * grid.h);
    let mut pairs = Vec::with_capacity(count);
    while pairs.len() < count {
        let a = Point2::new(grid.origin.x + rng.random_range(-half..half), rng.random_range(top..bottom));
        let b = Point2::new(grid.origin.x + rng.random_range(-half..half), rng.random_range(top..bottom));
        if (a.y - b.y).abs() > 0.25 && a.distance(b) > 0.5 {
            pairs.push((a, b));
        }
    }
    pairs
}

/// Rytov error per contrast using FD data and analytic Born terms.
pub fn rytov_scaling(
    cfg: &ExperimentConfig,
    tables: &ProbeTables,
    coupling: &CellGreen,
    contrasts: &[f64],
) -> Result<Vec<RytovRow>> {
    let (bg, fd, sd, roi) = (cfg.background()?, cfg.fd_grid()?, cfg.sd_array()?, cfg.roi_grid()?);
    let base = cfg.phantom()?;
    contrasts
        .iter()
        .map(|&c| {
            let ph = with_contrast(&base, c)?;
            let clean = measure(&bg, &fd, &ph, &sd, 0.0, 0)?;
            let born = born_terms_all(tables, Some(coupling), &sd, &ph.rasterize_cells(&roi))?;
            let mut row = RytovRow {
                contrast: c,
                max_phi: 0.0,
                max_err_first: 0.0,
                max_err_second: 0.0,
            };
            for (p, b) in born.iter().enumerate() {
                let (r1, r2) = rytov_data(tables.u0_at_detector(&sd, p), b.v1, b.v2)?;
                let phi = clean.phi_clean[p];
                row.max_phi = row.max_phi.max(phi.abs());
                row.max_err_first = row.max_err_first.max((phi - r1).abs());
                row.max_err_second = row.max_err_second.max((phi - r2).abs());
            }
            Ok(row)
        })
        .collect()
}

/// FD background field at each detector against `g0 G(x_d, x_s)`.
pub fn fd_consistency(cfg: &ExperimentConfig, tables: &ProbeTables, sd: &SdArray) -> Result<Vec<FdRow>> {
    let (u0s, _) = detector_fields(&cfg.background()?, &cfg.fd_grid()?, &Phantom::new(vec![])?, sd)?;
    Ok(sd
        .pairs
        .iter()
        .enumerate()
        .map(|(p, &(s, d))| {
            let analytic = tables.u0_at_detector(sd, p);
            let fd = u0s[s][d];
            FdRow {
                pair: p,
                fd,
                analytic,
                rel_err: (fd - analytic).abs() / analytic,
            }
        })
        .collect())
}

pub fn quadrature_check(cfg: &ExperimentConfig, pairs: &[(Point2, Point2)]) -> Result<Vec<QuadRow>> {
    let bg = cfg.background()?;
    let de = cfg.quadrature_spec();
    let oracle = QuadratureSpec::adaptive(1e-15, 1e-13);
    pairs
        .iter()
        .map(|&(x, y)| {
            let a = green(x, y, &bg, &de)?;
            let b = green(x, y, &bg, &oracle)?;
            Ok(QuadRow {
                x,
                y,
                de: a,
                adaptive: b,
                rel_err: (a - b).abs() / b.abs(),
            })
        })
        .collect()
}

/// Second-order neglect statistics, Rytov error sweep, FD check and
/// quadrature cross-validation. Writes a text report and per-item CSVs.
pub fn run_diagnostics(cfg: &ExperimentConfig) -> Result<DiagnosticsReport> {
    cfg.validate()?;
    let (bg, sd, roi, quad) = (cfg.background()?, cfg.sd_array()?, cfg.roi_grid()?, cfg.quadrature_spec());
    let d = &cfg.diagnostics;
    let tables = ProbeTables::build(&roi, &sd, &bg, &quad)?;
    let coupling = CellGreen::build(&roi, &bg, &quad, d.coupling_diag_offset)?;
    let kernel = Kernel::from_tables(tables.clone(), &sd, cfg.annealing.delta_mu_a_max)?;
    let data = measure(
        &bg,
        &cfg.fd_grid()?,
        &cfg.phantom()?,
        &sd,
        cfg.measurement.noise_pct,
        cfg.measurement.seed,
    )?;
    let triples = sample_triples(d.triples, sd.n_pairs(), roi.n_cells(), d.seed);
    let theorem1 = theorem1_diagnostic(&kernel, &coupling, &data.phi_noisy, &triples)?;
    let rytov = rytov_scaling(cfg, &tables, &coupling, &d.contrasts)?;
    let fd = fd_consistency(cfg, &tables, &sd)?;
    let quadrature = quadrature_check(cfg, &quadrature_pairs(d.quadrature_pairs, d.seed, &roi))?;
    let report = DiagnosticsReport {
        theorem1,
        rytov,
        fd,
        quadrature,
    };

    let dir = out_dir(cfg)?;
    fs::write(dir.join(DIAGNOSTICS_FILE), report.to_text())?;
    let csv_io = |e: csv::Error| Error::Config(e.to_string());
    let mut w = csv::Writer::from_path(dir.join("theorem1.csv")).map_err(csv_io)?;
    w.write_record(["pair", "cell1", "cell2", "ratio"]).map_err(csv_io)?;
    for (&(p, i1, i2), r) in report.theorem1.triples.iter().zip(&report.theorem1.ratios) {
        w.write_record([p.to_string(), i1.to_string(), i2.to_string(), r.to_string()]).map_err(csv_io)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("rytov_scaling.csv")).map_err(csv_io)?;
    w.write_record(["contrast", "max_phi", "max_err_first", "max_err_second"]).map_err(csv_io)?;
    for r in &report.rytov {
        w.write_record([r.contrast, r.max_phi, r.max_err_first, r.max_err_second].map(|v| v.to_string()))
            .map_err(csv_io)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("fd_vs_analytic.csv")).map_err(csv_io)?;
    w.write_record(["pair", "fd", "analytic", "rel_err"]).map_err(csv_io)?;
    for r in &report.fd {
        w.write_record([r.pair.to_string(), r.fd.to_string(), r.analytic.to_string(), r.rel_err.to_string()])
            .map_err(csv_io)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("quadrature_check.csv")).map_err(csv_io)?;
    w.write_record(["x1", "y1", "x2", "y2", "de", "adaptive", "rel_err"]).map_err(csv_io)?;
    for r in &report.quadrature {
        w.write_record([r.x.x, r.x.y, r.y.x, r.y.y, r.de, r.adaptive, r.rel_err].map(|v| v.to_string()))
            .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(report)
}
