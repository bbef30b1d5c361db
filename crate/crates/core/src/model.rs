//! Geometry, optical constants and the spin <-> absorption codec.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the half-space, millimetres. `y` is depth (positive inside the tissue).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn shifted(self, dx: f64, dy: f64) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Diffuse surface reflectance of a tissue/air interface, polynomial fit in the
/// relative refractive index.
pub fn diffuse_reflectance(n: f64) -> f64 {
    -1.4399 / (n * n) + 0.7099 / n + 0.6681 + 0.0636 * n
}

/// Robin coefficient for the boundary condition `-D0 du/dn + u/zeta = 0`.
pub fn robin_zeta(n: f64) -> f64 {
    let rd = diffuse_reflectance(n);
    2.0 * (1.0 + rd) / (1.0 - rd)
}

/// Homogeneous background medium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalBackground {
    /// Diffusion coefficient (mm).
    pub d0: f64,
    /// Background absorption (1/mm).
    pub mu_a_bar: f64,
    /// Reduced scattering (1/mm). Informational once `d0` is fixed.
    pub mu_s_prime: f64,
    pub refractive_index: f64,
    pub zeta: f64,
    /// Extrapolation length `zeta * d0` (mm).
    pub ell: f64,
    /// Pencil-beam amplitude.
    pub g0: f64,
}

impl OpticalBackground {
    /// Builds the medium from absorption, reduced scattering and refractive index:
    /// `D0 = 1 / (3 (mu_a + mu_s'))`, `zeta` from the diffuse reflectance fit.
    pub fn from_optical_properties(mu_a_bar: f64, mu_s_prime: f64, n: f64, g0: f64) -> Result<Self> {
        if !(mu_a_bar >= 0.0 && mu_a_bar.is_finite()) {
            return Err(Error::param("mu_a_bar", "must be finite and >= 0"));
        }
        if !(mu_s_prime > 0.0 && mu_s_prime.is_finite()) {
            return Err(Error::param("mu_s_prime", "must be finite and > 0"));
        }
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::param("refractive_index", "must be finite and > 0"));
        }
        let d0 = 1.0 / (3.0 * (mu_a_bar + mu_s_prime));
        let zeta = robin_zeta(n);
        if !(zeta > 0.0 && zeta.is_finite()) {
            return Err(Error::param(
                "refractive_index",
                format!("gives non-positive Robin coefficient {zeta}"),
            ));
        }
        let mut bg = Self::new(d0, mu_a_bar, zeta, g0)?;
        bg.mu_s_prime = mu_s_prime;
        bg.refractive_index = n;
        Ok(bg)
    }

    /// Direct construction from the model constants.
    pub fn new(d0: f64, mu_a_bar: f64, zeta: f64, g0: f64) -> Result<Self> {
        if !(d0 > 0.0 && d0.is_finite()) {
            return Err(Error::param("d0", "must be finite and > 0"));
        }
        if !(mu_a_bar >= 0.0 && mu_a_bar.is_finite()) {
            return Err(Error::param("mu_a_bar", "must be finite and >= 0"));
        }
        if !(zeta > 0.0 && zeta.is_finite()) {
            return Err(Error::param("zeta", "must be finite and > 0"));
        }
        if !(g0 > 0.0 && g0.is_finite()) {
            return Err(Error::param("g0", "must be finite and > 0"));
        }
        Ok(Self {
            d0,
            mu_a_bar,
            mu_s_prime: 1.0 / (3.0 * d0) - mu_a_bar,
            refractive_index: f64::NAN,
            zeta,
            ell: zeta * d0,
            g0,
        })
    }

    /// Same medium with a different background absorption (D0 and zeta kept).
    pub fn with_mu_a(&self, mu_a_bar: f64) -> Result<Self> {
        let mut bg = Self::new(self.d0, mu_a_bar, self.zeta, self.g0)?;
        bg.mu_s_prime = self.mu_s_prime;
        bg.refractive_index = self.refractive_index;
        Ok(bg)
    }

    /// Effective attenuation `sqrt(mu_a / D0)`.
    pub fn kappa(&self) -> f64 {
        (self.mu_a_bar / self.d0).sqrt()
    }
}

/// Uniform square-cell decomposition of the region of interest.
///
/// Columns run over `-nx..=nx`, rows over `0..ny` with row 0 shallowest.
/// Cell `i = row * (2 nx + 1) + col` has its representative point at the centre.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiGrid {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    /// Lateral position of the centre column and depth of the top edge.
    pub origin: Point2,
    pub centers: Vec<Point2>,
}

impl RoiGrid {
    pub fn new(nx: usize, ny: usize, h: f64, origin: Point2) -> Result<Self> {
        if ny == 0 {
            return Err(Error::param("roi.ny", "must be >= 1"));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::param("roi.h", "must be finite and > 0"));
        }
        if !(origin.y >= 0.0 && origin.x.is_finite() && origin.y.is_finite()) {
            return Err(Error::param("roi.origin", "top edge must lie at depth >= 0"));
        }
        let width = 2 * nx + 1;
        let mut centers = Vec::with_capacity(width * ny);
        for row in 0..ny {
            for col in 0..width {
                centers.push(Point2::new(
                    origin.x + (col as f64 - nx as f64) * h,
                    origin.y + (row as f64 + 0.5) * h,
                ));
            }
        }
        Ok(Self {
            nx,
            ny,
            h,
            origin,
            centers,
        })
    }

    pub fn width(&self) -> usize {
        2 * self.nx + 1
    }

    pub fn n_cells(&self) -> usize {
        self.centers.len()
    }

    pub fn cell_area(&self) -> f64 {
        self.h * self.h
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width() + col
    }

    /// (row, col) of cell `i`.
    pub fn row_col(&self, i: usize) -> (usize, usize) {
        (i / self.width(), i % self.width())
    }

    /// Axis-aligned bounds of cell `i` as (xmin, xmax, ymin, ymax).
    pub fn cell_bounds(&self, i: usize) -> (f64, f64, f64, f64) {
        let c = self.centers[i];
        let half = 0.5 * self.h;
        (c.x - half, c.x + half, c.y - half, c.y + half)
    }

    /// Cell containing `p`, if any. Points on a shared edge go to the higher index.
    pub fn locate(&self, p: Point2) -> Option<usize> {
        let col = ((p.x - self.origin.x) / self.h + self.nx as f64 + 0.5).floor();
        let row = ((p.y - self.origin.y) / self.h).floor();
        if col < 0.0 || row < 0.0 || col >= self.width() as f64 || row >= self.ny as f64 {
            return None;
        }
        Some(self.index(row as usize, col as usize))
    }
}

/// Boundary sources and detectors, fully crossed in source-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct SdArray {
    pub sources: Vec<Point2>,
    pub detectors: Vec<Point2>,
    /// (source index, detector index) per measurement pair.
    pub pairs: Vec<(usize, usize)>,
}

impl SdArray {
    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn source_of(&self, p: usize) -> Point2 {
        self.sources[self.pairs[p].0]
    }

    pub fn detector_of(&self, p: usize) -> Point2 {
        self.detectors[self.pairs[p].1]
    }
}

pub fn build_sd_array(source_xs: &[f64], detector_xs: &[f64]) -> Result<SdArray> {
    if source_xs.is_empty() {
        return Err(Error::param("sources", "list is empty"));
    }
    if detector_xs.is_empty() {
        return Err(Error::param("detectors", "list is empty"));
    }
    if let Some(x) = source_xs.iter().chain(detector_xs).find(|x| !x.is_finite()) {
        return Err(Error::param("sources/detectors", format!("non-finite coordinate {x}")));
    }
    let sources: Vec<_> = source_xs.iter().map(|&x| Point2::new(x, 0.0)).collect();
    let detectors: Vec<_> = detector_xs.iter().map(|&x| Point2::new(x, 0.0)).collect();
    let pairs = (0..sources.len())
        .flat_map(|s| (0..detectors.len()).map(move |d| (s, d)))
        .collect();
    Ok(SdArray {
        sources,
        detectors,
        pairs,
    })
}

/// Arithmetic progression `start, start + step, ...` with `count` terms.
pub fn linspace_step(start: f64, step: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| start + step * k as f64).collect()
}

/// Discrete absorption levels: `S_i` in `[-M/2, M/2]` maps to
/// `delta_mu_a_max * (S_i / M + 1/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinField {
    pub m: u32,
    pub values: Vec<i32>,
    pub delta_mu_a_max: f64,
}

impl SpinField {
    pub fn new(m: u32, values: Vec<i32>, delta_mu_a_max: f64) -> Result<Self> {
        check_levels(m)?;
        if !(delta_mu_a_max > 0.0 && delta_mu_a_max.is_finite()) {
            return Err(Error::param("delta_mu_a_max", "must be finite and > 0"));
        }
        let half = (m / 2) as i32;
        if let Some((cell, &value)) = values.iter().enumerate().find(|(_, v)| v.abs() > half) {
            return Err(Error::SpinOutOfRange { cell, value, half });
        }
        Ok(Self {
            m,
            values,
            delta_mu_a_max,
        })
    }

    /// Every cell at the same level.
    pub fn uniform(m: u32, n: usize, level: i32, delta_mu_a_max: f64) -> Result<Self> {
        Self::new(m, vec![level; n], delta_mu_a_max)
    }

    pub fn half(&self) -> i32 {
        (self.m / 2) as i32
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Occupation `S_i / M + 1/2` in `[0, 1]`.
    pub fn fractions(&self) -> Vec<f64> {
        let m = self.m as f64;
        self.values.iter().map(|&s| s as f64 / m + 0.5).collect()
    }
}

pub(crate) fn check_levels(m: u32) -> Result<()> {
    if m == 0 || m % 2 != 0 {
        return Err(Error::param("m", format!("must be a positive even integer, got {m}")));
    }
    if m > i32::MAX as u32 {
        return Err(Error::param("m", "too large"));
    }
    Ok(())
}

pub fn spin_to_absorption(s: &SpinField) -> Vec<f64> {
    let m = s.m as f64;
    s.values
        .iter()
        .map(|&v| s.delta_mu_a_max * (v as f64 / m + 0.5))
        .collect()
}

pub fn absorption_to_spin(dmu: &[f64], m: u32, delta_mu_a_max: f64) -> Result<SpinField> {
    check_levels(m)?;
    if !(delta_mu_a_max > 0.0 && delta_mu_a_max.is_finite()) {
        return Err(Error::param("delta_mu_a_max", "must be finite and > 0"));
    }
    let half = (m / 2) as i32;
    let mf = m as f64;
    let values = dmu
        .iter()
        .enumerate()
        .map(|(cell, &v)| {
            if !(0.0..=delta_mu_a_max).contains(&v) {
                return Err(Error::AbsorptionOutOfRange {
                    cell,
                    value: v,
                    max: delta_mu_a_max,
                });
            }
            let s = (mf * (v / delta_mu_a_max - 0.5)).round() as i32;
            Ok(s.clamp(-half, half))
        })
        .collect::<Result<Vec<_>>>()?;
    SpinField::new(m, values, delta_mu_a_max)
}
