//! Half-space Green's function of the diffusion equation with a Robin boundary.
//!
//! ```text
//! G(x, y) = 1/(2 pi D0) * int_0^inf cos(q (x1 - y1)) / lambda
//!           * [exp(-lambda |x2 - y2|) + (l lambda - 1)/(l lambda + 1) exp(-lambda (x2 + y2))] dq
//! lambda(q) = sqrt(mu_a / D0 + q^2),  l = zeta D0
//! ```
//!
//! The primary integrator is the double-exponential rule for Fourier-type
//! integrals (Ooura & Mori). When the lateral offset is no larger than the depth
//! separation the exponential damping dominates and the exp-sinh rule is used. An adaptive
//! Gauss-Kronrod integrator over half-periods, with Wynn-epsilon acceleration
//! of the partial sums, serves as the fallback and as an independent check.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{OpticalBackground, Point2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadMethod {
    /// Double-exponential rule, adaptive fallback on failure.
    DoubleExponential,
    /// Adaptive Gauss-Kronrod over half-periods only.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub method: QuadMethod,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_evals: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            method: QuadMethod::DoubleExponential,
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            max_evals: 20_000,
        }
    }
}

impl QuadratureSpec {
    pub fn adaptive(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            method: QuadMethod::Adaptive,
            abs_tol,
            rel_tol,
            max_evals: 2_000_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::param("quadrature.tolerance", "tolerances must be > 0"));
        }
        if self.max_evals < 64 {
            return Err(Error::param("quadrature.max_evals", "must be >= 64"));
        }
        Ok(())
    }

    fn accepts(&self, err: f64, value: f64) -> bool {
        err <= self.abs_tol.max(self.rel_tol * value.abs())
    }
}

pub fn lambda_of_q(q: f64, bg: &OpticalBackground) -> f64 {
    (bg.mu_a_bar / bg.d0 + q * q).sqrt()
}

/// Spectral integrand without the `cos` factor and the `1/(2 pi D0)` prefactor.
#[derive(Debug, Clone, Copy)]
struct Spectral {
    kappa2: f64,
    ell: f64,
    /// |x2 - y2|
    near: f64,
    /// x2 + y2
    far: f64,
}

impl Spectral {
    #[inline]
    fn eval(&self, q: f64) -> f64 {
        let lambda = (self.kappa2 + q * q).sqrt();
        let refl = (self.ell * lambda - 1.0) / (self.ell * lambda + 1.0);
        ((-lambda * self.near).exp() + refl * (-lambda * self.far).exp()) / lambda
    }

    /// Bound on `int_Q^inf |F|`, valid when `near > 0`.
    fn tail_bound(&self, q: f64) -> f64 {
        if self.near <= 0.0 || q <= 0.0 {
            return f64::INFINITY;
        }
        2.0 * (-q * self.near).exp() / (q * self.near)
    }
}

pub fn green(x: Point2, y: Point2, bg: &OpticalBackground, quad: &QuadratureSpec) -> Result<f64> {
    for p in [x, y] {
        if !(p.y >= 0.0) {
            return Err(Error::OutsideDomain(p.y));
        }
    }
    if x == y {
        return Err(Error::CoincidentPoints { x1: x.x, x2: x.y });
    }
    let f = Spectral {
        kappa2: bg.mu_a_bar / bg.d0,
        ell: bg.ell,
        near: (x.y - y.y).abs(),
        far: x.y + y.y,
    };
    let omega = (x.x - y.x).abs();
    let integral = match quad.method {
        QuadMethod::DoubleExponential => {
            match double_exponential(&f, omega, quad) {
                Ok(v) if v > 0.0 => v,
                Ok(_) => adaptive(&f, omega, quad)?,
                Err(Error::QuadratureNonConvergence { .. }) => adaptive(&f, omega, quad)?,
                Err(e) => return Err(e),
            }
        }
        QuadMethod::Adaptive => adaptive(&f, omega, quad)?,
    };
    Ok(integral / (2.0 * PI * bg.d0))
}

/// `table[(i, j)] = green(a[i], b[j])`, evaluated in parallel.
pub fn green_table(
    points_a: &[Point2],
    points_b: &[Point2],
    bg: &OpticalBackground,
    quad: &QuadratureSpec,
) -> Result<DMatrix<f64>> {
    let nb = points_b.len();
    let values = (0..points_a.len() * nb)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / nb, k % nb);
            green(points_a[i], points_b[j], bg, quad).map_err(|e| Error::TableEntry {
                row: i,
                col: j,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_row_slice(points_a.len(), nb, &values))
}

const DE_MAX_LEVEL: u32 = 12;

fn double_exponential(f: &Spectral, omega: f64, quad: &QuadratureSpec) -> Result<f64> {
    let mut evals = 0usize;
    let mut prev: Option<f64> = None;
    let mut last_err = f64::INFINITY;
    for level in 1..=DE_MAX_LEVEL {
        let h = 0.5f64.powi(level as i32);
        // Fourier nodes sit at q ~ 1/omega; when the damping length is shorter
        // than the oscillation length they fall where the integrand has underflowed.
        let (value, n) = if omega > f.near {
            de_fourier_cos(f, omega, h)
        } else {
            de_exp_sinh(f, omega, h)
        };
        evals += n;
        if let Some(p) = prev {
            last_err = (value - p).abs();
            if quad.accepts(last_err, value) {
                return Ok(value);
            }
        }
        if evals > quad.max_evals || !value.is_finite() {
            return Err(Error::QuadratureNonConvergence {
                estimate: value,
                error_bound: last_err,
                evaluations: evals,
            });
        }
        prev = Some(value);
    }
    Err(Error::QuadratureNonConvergence {
        estimate: prev.unwrap_or(f64::NAN),
        error_bound: last_err,
        evaluations: evals,
    })
}

/// One trapezoidal pass of the Ooura-Mori rule for `int_0^inf F(q) cos(omega q) dq`.
///
/// Nodes sit at `t = (n - 1/2) h`, so that `M phi(t)` approaches the zeros of
/// the cosine double-exponentially as `t` grows.
fn de_fourier_cos(f: &Spectral, omega: f64, h: f64) -> (f64, usize) {
    const BETA: f64 = 0.25;
    let m = PI / h;
    let alpha = BETA / (1.0 + m * (1.0 + m).ln() / (4.0 * PI)).sqrt();
    let term = |t: f64| -> Option<f64> {
        let et = t.exp();
        let u = 2.0 * t + alpha * (1.0 - 1.0 / et) + BETA * (et - 1.0);
        if u < -700.0 {
            return None;
        }
        let du = 2.0 + alpha / et + BETA * et;
        let one_minus_e = -(-u).exp_m1();
        let e = (-u).exp();
        let phi = t / one_minus_e;
        let dphi = (one_minus_e - t * e * du) / (one_minus_e * one_minus_e);
        let arg = m * phi;
        Some(f.eval(arg / omega) * arg.cos() * dphi)
    };

    let mut sum = 0.0;
    let mut evals = 0;
    let mut quiet = 0;
    // negative side
    let mut n = 0i64;
    loop {
        let t = (n as f64 - 0.5) * h;
        let Some(v) = term(t) else { break };
        evals += 1;
        sum += v;
        quiet = if v.abs() <= 1e-18 * sum.abs() { quiet + 1 } else { 0 };
        if quiet >= 3 || t < -12.0 {
            break;
        }
        n -= 1;
    }
    quiet = 0;
    let mut n = 1i64;
    loop {
        let t = (n as f64 - 0.5) * h;
        let v = term(t).unwrap_or(0.0);
        evals += 1;
        sum += v;
        quiet = if t > 1.0 && v.abs() <= 1e-18 * sum.abs() { quiet + 1 } else { 0 };
        if quiet >= 3 || t > 12.0 {
            break;
        }
        n += 1;
    }
    (sum * PI / omega, evals)
}

/// One trapezoidal pass of the exp-sinh rule for `int_0^inf F(q) dq`.
fn de_exp_sinh(f: &Spectral, omega: f64, h: f64) -> (f64, usize) {
    let node = |t: f64| -> f64 {
        let q = (FRAC_PI_2 * t.sinh()).exp();
        if q == 0.0 || !q.is_finite() {
            return 0.0;
        }
        let v = f.eval(q) * (omega * q).cos() * q * FRAC_PI_2 * t.cosh();
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    let mut sum = node(0.0);
    let mut evals = 1;
    for dir in [-1.0, 1.0] {
        let mut quiet = 0;
        let mut k = 1;
        loop {
            let v = node(dir * k as f64 * h);
            evals += 1;
            sum += v;
            quiet = if v.abs() <= 1e-18 * sum.abs() { quiet + 1 } else { 0 };
            if quiet >= 3 || k as f64 * h > 8.0 {
                break;
            }
            k += 1;
        }
    }
    (sum * h, evals)
}

// 15-point Kronrod extension of the 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_3,
    0.949_107_912_342_758_524_526_189_684_047_9,
    0.864_864_423_359_769_072_789_712_788_640_9,
    0.741_531_185_599_394_439_863_864_773_280_8,
    0.586_087_235_467_691_130_294_144_845_693_0,
    0.405_845_151_377_397_166_906_606_412_076_96,
    0.207_784_955_007_898_467_600_689_403_773_2,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_97,
    0.063_092_092_629_978_553_290_700_663_189_2,
    0.104_790_010_322_250_183_839_876_322_541_5,
    0.140_653_259_715_525_918_745_189_590_510_2,
    0.169_004_726_639_267_902_826_583_426_598_6,
    0.190_350_578_064_785_409_913_256_402_421_0,
    0.204_432_940_075_298_892_414_161_999_234_6,
    0.209_482_141_084_727_828_012_999_174_891_7,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_1,
    0.279_705_391_489_276_667_901_467_771_423_8,
    0.381_830_050_505_118_944_950_369_775_489_0,
    0.417_959_183_673_469_387_755_102_040_816_3,
];

fn gk15(g: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let fc = g(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for k in 0..7 {
        let dx = r * XGK[k];
        let pair = g(c - dx) + g(c + dx);
        kron += WGK[k] * pair;
        if k % 2 == 1 {
            gauss += WG[k / 2] * pair;
        }
    }
    (kron * r, ((kron - gauss) * r).abs())
}

struct Adaptive<'a> {
    g: &'a dyn Fn(f64) -> f64,
    evals: usize,
    budget: usize,
}

impl Adaptive<'_> {
    fn integrate(&mut self, a: f64, b: f64, tol: f64, depth: u32) -> Result<(f64, f64)> {
        let (v, err) = gk15(self.g, a, b);
        self.evals += 15;
        if err <= tol || depth == 0 || (b - a) <= 1e-14 * a.abs().max(1.0) {
            return Ok((v, err));
        }
        if self.evals > self.budget {
            return Err(Error::QuadratureNonConvergence {
                estimate: v,
                error_bound: err,
                evaluations: self.evals,
            });
        }
        let c = 0.5 * (a + b);
        let (l, el) = self.integrate(a, c, 0.5 * tol, depth - 1)?;
        let (r, er) = self.integrate(c, b, 0.5 * tol, depth - 1)?;
        Ok((l + r, el + er))
    }
}

/// Wynn epsilon extrapolation of a sequence of partial sums; returns the
/// accelerated limit and the change from the previous even column.
fn wynn_epsilon(partial: &[f64]) -> (f64, f64) {
    let n = partial.len();
    let last = partial.last().copied().unwrap_or(0.0);
    if n < 3 {
        return (last, f64::INFINITY);
    }
    let mut older: Vec<f64> = vec![0.0; n + 1];
    let mut col: Vec<f64> = partial.to_vec();
    let mut best = last;
    let mut best_prev = partial[n - 2];
    let mut order = 0;
    while col.len() > 1 {
        let next: Vec<f64> = (0..col.len() - 1)
            .map(|i| older[i + 1] + 1.0 / (col[i + 1] - col[i]))
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            break;
        }
        older = col;
        col = next;
        order += 1;
        if order % 2 == 0 {
            best_prev = best;
            best = col[col.len() - 1];
        }
    }
    (best, (best - best_prev).abs())
}

fn adaptive(f: &Spectral, omega: f64, quad: &QuadratureSpec) -> Result<f64> {
    let g_osc = |q: f64| f.eval(q) * (omega * q).cos();
    let g_plain = |q: f64| f.eval(q);
    let g: &dyn Fn(f64) -> f64 = if omega > 0.0 { &g_osc } else { &g_plain };
    let mut ad = Adaptive {
        g,
        evals: 0,
        budget: quad.max_evals,
    };
    let piece_tol = |scale: f64| 0.01 * quad.abs_tol.max(quad.rel_tol * scale.abs());

    if omega == 0.0 || omega <= f.near {
        // Exponentially damped: integrate panels until the tail bound is negligible.
        let mut panel = if f.near > 0.0 { 1.0 / f.near } else { 1.0 };
        if omega > 0.0 {
            panel = panel.min(PI / omega);
        }
        let mut sum = 0.0f64;
        let mut q = 0.0;
        loop {
            let (v, _) = ad.integrate(q, q + panel, piece_tol(sum.max(v_guess(f))), 40)?;
            sum += v;
            q += panel;
            if f.tail_bound(q) <= piece_tol(sum) {
                return Ok(sum);
            }
            if ad.evals > ad.budget {
                return Err(Error::QuadratureNonConvergence {
                    estimate: sum,
                    error_bound: f.tail_bound(q),
                    evaluations: ad.evals,
                });
            }
        }
    }

    // Oscillatory: split at the zeros of cos(omega q).
    let period = PI / omega;
    let mut partial = Vec::new();
    let mut sum = 0.0f64;
    let mut lo = 0.0;
    let mut k = 0usize;
    let scale = v_guess(f);
    loop {
        let hi = (k as f64 + 0.5) * period;
        let (v, _) = ad.integrate(lo, hi, piece_tol(scale), 40)?;
        sum += v;
        partial.push(sum);
        lo = hi;
        k += 1;
        if f.tail_bound(hi) <= piece_tol(sum) {
            return Ok(sum);
        }
        if partial.len() >= 12 {
            let window = &partial[partial.len().saturating_sub(40)..];
            let (limit, err) = wynn_epsilon(window);
            if quad.accepts(err, limit) {
                return Ok(limit);
            }
        }
        if ad.evals > ad.budget || k > 200_000 {
            let (limit, err) = wynn_epsilon(&partial[partial.len().saturating_sub(40)..]);
            return Err(Error::QuadratureNonConvergence {
                estimate: limit,
                error_bound: err,
                evaluations: ad.evals,
            });
        }
    }
}

/// Rough magnitude of the integral, used to scale absolute piece tolerances.
fn v_guess(f: &Spectral) -> f64 {
    f.eval(0.0).abs().max(1e-300)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bg() -> OpticalBackground {
        OpticalBackground::from_optical_properties(0.02, 1.0, 1.37, 1.0).unwrap()
    }

    #[test]
    fn small_lateral_offset_at_depth() {
        let b = bg();
        let oracle = QuadratureSpec::adaptive(1e-15, 1e-13);
        for (dx, depth) in [(0.05, 8.15), (1e-6, 3.0), (0.5, 20.0), (2.0, 2.0)] {
            let (x, y) = (Point2::new(0.0, 0.0), Point2::new(dx, depth));
            let a = green(x, y, &b, &QuadratureSpec::default()).unwrap();
            let o = green(x, y, &b, &oracle).unwrap();
            assert!(a > 0.0);
            assert!((a - o).abs() <= 1e-9 * o, "dx={dx} depth={depth}: {a} vs {o}");
        }
    }

    #[test]
    fn lambda_examples() {
        let b = bg();
        assert!((lambda_of_q(0.0, &b) - b.kappa()).abs() < 1e-15);
        let b0 = OpticalBackground::new(1.0 / 3.0, 0.0, 6.0, 1.0).unwrap();
        assert_eq!(lambda_of_q(3.0, &b0), 3.0);
        assert!((lambda_of_q(1.0, &b) - (0.0612f64 + 1.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_points() {
        let q = QuadratureSpec::default();
        let p = Point2::new(1.0, 2.0);
        assert!(matches!(green(p, p, &bg(), &q), Err(Error::CoincidentPoints { .. })));
        assert!(matches!(
            green(p, Point2::new(0.0, -1.0), &bg(), &q),
            Err(Error::OutsideDomain(_))
        ));
    }

    #[test]
    fn symmetric_and_translation_invariant() {
        let q = QuadratureSpec::default();
        let b = bg();
        let pts = [
            (Point2::new(0.0, 0.0), Point2::new(3.0, 7.5)),
            (Point2::new(-4.0, 2.5), Point2::new(9.0, 10.5)),
            (Point2::new(2.0, 0.0), Point2::new(-26.0, 0.0)),
        ];
        for (x, y) in pts {
            let gxy = green(x, y, &b, &q).unwrap();
            let gyx = green(y, x, &b, &q).unwrap();
            assert!((gxy - gyx).abs() <= 1e-10 * gxy.abs());
            let gs = green(x.shifted(13.0, 0.0), y.shifted(13.0, 0.0), &b, &q).unwrap();
            assert!((gs - gxy).abs() <= 1e-10 * gxy.abs());
            assert!(gxy > 0.0);
        }
    }

    #[test]
    fn wynn_accelerates_alternating_series() {
        // ln 2 = 1 - 1/2 + 1/3 - ...
        let mut s = 0.0f64;
        let partial: Vec<f64> = (1..=20)
            .map(|k| {
                s += if k % 2 == 1 { 1.0 } else { -1.0 } / k as f64;
                s
            })
            .collect();
        let (limit, _) = wynn_epsilon(&partial);
        assert!((limit - 2f64.ln()).abs() < 1e-12, "{limit}");
    }

    #[test]
    fn exp_sinh_matches_closed_form() {
        // int_0^inf exp(-a sqrt(k^2+q^2)) / sqrt(k^2+q^2) dq = K0(k a); the huge
        // extrapolation length and depth switch the image term off.
        let f = Spectral {
            kappa2: 0.25,
            ell: 1e300,
            near: 2.0,
            far: 1e6,
        };
        let k0_of_1 = 0.421_024_438_240_708_3;
        let (v, _) = de_exp_sinh(&f, 0.0, 1.0 / 64.0);
        assert!((v - k0_of_1).abs() < 1e-12, "{v}");
    }

    #[test]
    fn table_matches_scalar() {
        let q = QuadratureSpec::default();
        let b = bg();
        let a = [Point2::new(0.0, 0.0), Point2::new(4.0, 0.0)];
        let c = [Point2::new(1.0, 3.5), Point2::new(-2.0, 8.5), Point2::new(0.0, 1.5)];
        let t = green_table(&a, &c, &b, &q).unwrap();
        assert_eq!(t.shape(), (2, 3));
        assert_eq!(t[(1, 2)], green(a[1], c[2], &b, &q).unwrap());
        let tt = green_table(&c, &a, &b, &q).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert!((t[(i, j)] - tt[(j, i)]).abs() <= 1e-10 * t[(i, j)]);
            }
        }
        let one = green_table(&a[..1], &c[..1], &b, &q).unwrap();
        assert_eq!(one[(0, 0)], green(a[0], c[0], &b, &q).unwrap());
        let bad = green_table(&a, &a, &b, &q);
        assert!(matches!(bad, Err(Error::TableEntry { row: 0, col: 0, .. })));
    }

    #[test]
    fn decays_laterally() {
        let q = QuadratureSpec::default();
        let b = bg();
        let y = Point2::new(0.0, 5.5);
        let mut last = f64::INFINITY;
        for k in 0..40 {
            let g = green(Point2::new(k as f64, 0.0), y, &b, &q).unwrap();
            assert!(g > 0.0 && g < last, "k={k} g={g}");
            last = g;
        }
    }

    #[test]
    fn tolerance_halving_is_stable() {
        let b = bg();
        let loose = QuadratureSpec {
            abs_tol: 1e-8,
            rel_tol: 1e-6,
            ..Default::default()
        };
        let tight = QuadratureSpec {
            abs_tol: 0.5e-8,
            rel_tol: 0.5e-6,
            ..Default::default()
        };
        for (x, y) in [
            (Point2::new(0.0, 0.0), Point2::new(5.0, 3.5)),
            (Point2::new(-10.0, 0.0), Point2::new(10.0, 0.0)),
            (Point2::new(0.0, 2.5), Point2::new(0.0, 12.5)),
        ] {
            let a = green(x, y, &b, &loose).unwrap();
            let c = green(x, y, &b, &tight).unwrap();
            assert!((a - c).abs() <= 1e-8f64.max(1e-6 * a), "{a} {c}");
        }
    }

    #[test]
    fn quadrature_spec_validation() {
        assert!(QuadratureSpec::default().validate().is_ok());
        let bad = QuadratureSpec {
            max_evals: 10,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = QuadratureSpec {
            rel_tol: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
