//! Experiment configuration, read from TOML. Every field has a default, so an
//! empty file describes the single-disk reference experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annealer::Schedule;
use crate::error::{Error, Result};
use crate::forward::{CellGreen, Disk, FdGrid, Phantom};
use crate::greens::{QuadMethod, QuadratureSpec};
use crate::model::{build_sd_array, linspace_step, OpticalBackground, Point2, RoiGrid, SdArray};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub optics: OpticsConfig,
    pub roi: RoiConfig,
    pub fd: FdConfig,
    pub array: ArrayConfig,
    pub phantom: PhantomConfig,
    pub measurement: MeasurementConfig,
    pub annealing: AnnealingConfig,
    pub svd: SvdConfig,
    pub quadrature: QuadratureConfig,
    pub diagnostics: DiagnosticsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpticsConfig {
    /// Background absorption, mm^-1.
    pub mu_a: f64,
    /// Reduced scattering, mm^-1.
    pub mu_s_prime: f64,
    pub refractive_index: f64,
    /// Source strength g0.
    pub source_strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoiConfig {
    pub nx: usize,
    pub ny: usize,
    /// Cell size, mm.
    pub h: f64,
    pub center_x: f64,
    pub top_depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdConfig {
    pub half_width: f64,
    pub depth: f64,
    pub spacing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    pub source_start: f64,
    pub source_step: f64,
    pub source_count: usize,
    pub detector_start: f64,
    pub detector_step: f64,
    pub detector_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub disks: Vec<Disk>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementConfig {
    /// Relative noise level in percent.
    pub noise_pct: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnealingConfig {
    pub alpha: f64,
    pub t_high: f64,
    pub t_low: f64,
    pub n_temps: usize,
    pub sweeps_per_temp: usize,
    /// Spin levels M (even); each spin takes M + 1 values.
    pub levels: u32,
    pub chains: usize,
    pub delta_mu_a_max: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvdConfig {
    pub ranks: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureMethod {
    DoubleExponential,
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    pub method: QuadratureMethod,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_evals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub triples: usize,
    pub seed: u64,
    pub contrasts: Vec<f64>,
    /// Offset of the self-coupling point inside a cell, in cell widths.
    pub coupling_diag_offset: f64,
    pub quadrature_pairs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            optics: OpticsConfig::default(),
            roi: RoiConfig::default(),
            fd: FdConfig::default(),
            array: ArrayConfig::default(),
            phantom: PhantomConfig::default(),
            measurement: MeasurementConfig::default(),
            annealing: AnnealingConfig::default(),
            svd: SvdConfig::default(),
            quadrature: QuadratureConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
        }
    }
}

impl Default for OpticsConfig {
    fn default() -> Self {
        Self {
            mu_a: 0.02,
            mu_s_prime: 1.0,
            refractive_index: 1.37,
            source_strength: 1.0,
        }
    }
}

impl Default for RoiConfig {
    fn default() -> Self {
        Self {
            nx: 30,
            ny: 30,
            h: 1.0,
            center_x: 0.0,
            top_depth: 0.0,
        }
    }
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            half_width: 60.0,
            depth: 60.0,
            spacing: 0.5,
        }
    }
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            source_start: -30.0,
            source_step: 4.0,
            source_count: 16,
            detector_start: -28.0,
            detector_step: 4.0,
            detector_count: 15,
        }
    }
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            disks: vec![Disk {
                center: Point2::new(0.0, 10.0),
                radius: 2.5,
                delta_mu_a: 0.2,
            }],
        }
    }
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self {
            noise_pct: 3.0,
            seed: 1,
        }
    }
}

impl Default for AnnealingConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            t_high: 1e-5,
            t_low: 1e-10,
            n_temps: 200,
            sweeps_per_temp: 20,
            levels: 256,
            chains: 1,
            delta_mu_a_max: 0.2,
            seed: 7,
        }
    }
}

impl Default for SvdConfig {
    fn default() -> Self {
        Self { ranks: vec![52, 80] }
    }
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        let q = QuadratureSpec::default();
        Self {
            method: QuadratureMethod::DoubleExponential,
            abs_tol: q.abs_tol,
            rel_tol: q.rel_tol,
            max_evals: q.max_evals,
        }
    }
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            triples: 1000,
            seed: 11,
            contrasts: vec![0.2, 0.1, 0.05],
            coupling_diag_offset: CellGreen::DEFAULT_DIAG_OFFSET,
            quadrature_pairs: 25,
        }
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(field, format!("must be finite and > 0, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(field, format!("must be finite and >= 0, got {v}")))
    }
}

fn at_least(field: &str, v: usize, min: usize) -> Result<()> {
    if v >= min {
        Ok(())
    } else {
        Err(Error::param(field, format!("must be >= {min}, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks every field, reporting the first failure by its dotted path.
    pub fn validate(&self) -> Result<()> {
        let o = &self.optics;
        positive("optics.mu_a", o.mu_a)?;
        positive("optics.mu_s_prime", o.mu_s_prime)?;
        positive("optics.source_strength", o.source_strength)?;
        if !(o.refractive_index >= 1.0 && o.refractive_index.is_finite()) {
            return Err(Error::param("optics.refractive_index", "must be finite and >= 1"));
        }

        at_least("roi.ny", self.roi.ny, 1)?;
        positive("roi.h", self.roi.h)?;
        non_negative("roi.top_depth", self.roi.top_depth)?;
        if !self.roi.center_x.is_finite() {
            return Err(Error::param("roi.center_x", "must be finite"));
        }

        positive("fd.half_width", self.fd.half_width)?;
        positive("fd.depth", self.fd.depth)?;
        positive("fd.spacing", self.fd.spacing)?;

        let a = &self.array;
        at_least("array.source_count", a.source_count, 1)?;
        at_least("array.detector_count", a.detector_count, 1)?;
        for (field, v) in [
            ("array.source_start", a.source_start),
            ("array.source_step", a.source_step),
            ("array.detector_start", a.detector_start),
            ("array.detector_step", a.detector_step),
        ] {
            if !v.is_finite() {
                return Err(Error::param(field, "must be finite"));
            }
        }

        for (k, d) in self.phantom.disks.iter().enumerate() {
            positive(&format!("phantom.disks[{k}].radius"), d.radius)?;
            non_negative(&format!("phantom.disks[{k}].delta_mu_a"), d.delta_mu_a)?;
            if !(d.center.x.is_finite() && d.center.y.is_finite()) {
                return Err(Error::param(&format!("phantom.disks[{k}].center"), "must be finite"));
            }
        }

        non_negative("measurement.noise_pct", self.measurement.noise_pct)?;

        let s = &self.annealing;
        positive("annealing.alpha", s.alpha)?;
        positive("annealing.t_high", s.t_high)?;
        positive("annealing.t_low", s.t_low)?;
        if s.t_low >= s.t_high {
            return Err(Error::param("annealing.t_low", "must be < annealing.t_high"));
        }
        at_least("annealing.n_temps", s.n_temps, 2)?;
        at_least("annealing.sweeps_per_temp", s.sweeps_per_temp, 1)?;
        at_least("annealing.chains", s.chains, 1)?;
        if s.levels < 2 || !s.levels.is_multiple_of(2) {
            return Err(Error::param("annealing.levels", "must be even and >= 2"));
        }
        positive("annealing.delta_mu_a_max", s.delta_mu_a_max)?;

        let max_rank = (a.source_count * a.detector_count).min((2 * self.roi.nx + 1) * self.roi.ny);
        for (k, &r) in self.svd.ranks.iter().enumerate() {
            if r == 0 || r > max_rank {
                return Err(Error::param(&format!("svd.ranks[{k}]"), format!("must lie in [1, {max_rank}]")));
            }
        }

        positive("quadrature.abs_tol", self.quadrature.abs_tol)?;
        positive("quadrature.rel_tol", self.quadrature.rel_tol)?;
        at_least("quadrature.max_evals", self.quadrature.max_evals, 64)?;

        let d = &self.diagnostics;
        at_least("diagnostics.triples", d.triples, 1)?;
        for (k, &c) in d.contrasts.iter().enumerate() {
            non_negative(&format!("diagnostics.contrasts[{k}]"), c)?;
        }
        if !(d.coupling_diag_offset > 0.0 && d.coupling_diag_offset <= 0.5) {
            return Err(Error::param("diagnostics.coupling_diag_offset", "must lie in (0, 0.5]"));
        }

        // geometry consistency
        let roi = self.roi_grid()?;
        self.fd_grid()?.check_contains(&roi, 0.0)?;
        self.sd_array()?;
        Ok(())
    }

    pub fn background(&self) -> Result<OpticalBackground> {
        let o = &self.optics;
        OpticalBackground::from_optical_properties(o.mu_a, o.mu_s_prime, o.refractive_index, o.source_strength)
    }

    pub fn roi_grid(&self) -> Result<RoiGrid> {
        RoiGrid::new(
            self.roi.nx,
            self.roi.ny,
            self.roi.h,
            Point2::new(self.roi.center_x, self.roi.top_depth),
        )
    }

    pub fn fd_grid(&self) -> Result<FdGrid> {
        FdGrid::new(self.fd.half_width, self.fd.depth, self.fd.spacing)
    }

    pub fn sd_array(&self) -> Result<SdArray> {
        let a = &self.array;
        build_sd_array(
            &linspace_step(a.source_start, a.source_step, a.source_count),
            &linspace_step(a.detector_start, a.detector_step, a.detector_count),
        )
    }

    pub fn phantom(&self) -> Result<Phantom> {
        Phantom::new(self.phantom.disks.clone())
    }

    pub fn schedule(&self) -> Result<Schedule> {
        let s = &self.annealing;
        Schedule::new(s.t_high, s.t_low, s.n_temps, s.sweeps_per_temp)
    }

    pub fn quadrature_spec(&self) -> QuadratureSpec {
        let q = &self.quadrature;
        QuadratureSpec {
            method: match q.method {
                QuadratureMethod::DoubleExponential => QuadMethod::DoubleExponential,
                QuadratureMethod::Adaptive => QuadMethod::Adaptive,
            },
            abs_tol: q.abs_tol,
            rel_tol: q.rel_tol,
            max_evals: q.max_evals,
        }
    }
}
