//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spindot::annealer::{anneal, chain_rng, sweep, ChainState, Schedule};
use spindot::config::ExperimentConfig;
use spindot::experiment::{
    self, fd_consistency, quadrature_check, quadrature_pairs, rytov_scaling, MEASUREMENTS_FILE, SA_MAP_FILE,
    SA_TRACE_FILE,
};
use spindot::forward::{CellGreen, Disk, ProbeTables};
use spindot::hamiltonian::{
    build_model, cost_psi, energy, sample_triples, theorem1_diagnostic, HamiltonianModel, Kernel,
};
use spindot::model::{Point2, RoiGrid, SpinField};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn exhaustive_minimum(model: &HamiltonianModel) -> f64 {
    let n = model.n();
    let levels = model.m as usize + 1;
    let half = model.half();
    let mut values = vec![-half; n];
    let mut best = f64::INFINITY;
    loop {
        let s = SpinField::new(model.m, values.clone(), 1.0).unwrap();
        best = best.min(energy(model, &s).unwrap());
        let mut k = 0;
        loop {
            if k == n {
                return best;
            }
            values[k] += 1;
            if (values[k] + half) as usize == levels {
                values[k] = -half;
                k += 1;
            } else {
                break;
            }
        }
    }
}

/// Random small model with kernel-like statistics: 12 pairs by 10 cells of
/// positive entries spread over about a decade and a half, data from a random
/// three-level truth plus 5% noise, and a penalty scaled to the data.
fn random_small_model(rng: &mut ChaCha8Rng) -> HamiltonianModel {
    let (pairs, cells, m) = (12, 10, 2u32);
    let k = DMatrix::from_fn(pairs, cells, |_, _| 0.3 * (-3.0 * rng.random::<f64>()).exp());
    let truth = DVector::from_fn(cells, |_, _| rng.random_range(0..3) as f64 * 0.5);
    let clean = &k * truth;
    let scale = clean.amax();
    let data = DVector::from_fn(pairs, |p, _| clean[p] + 0.05 * scale * rng.random_range(-1.0..1.0));
    let alpha = rng.random_range(0.005..0.05) * scale * k.amax();
    // same assembly as build_model, without the optical tables
    let mf = m as f64;
    let mut j = k.tr_mul(&k) * (-1.0 / (2.0 * mf * mf));
    for a in 0..cells {
        for b in 0..a {
            let v = 0.5 * (j[(a, b)] + j[(b, a)]);
            j[(a, b)] = v;
            j[(b, a)] = v;
        }
    }
    let projected = k.tr_mul(&data);
    let row_sums = j.column_sum();
    let h = DVector::from_fn(cells, |i, _| mf * row_sums[i] + (projected[i] - alpha) / mf);
    HamiltonianModel::from_parts(j, h, m, 0.0, alpha).unwrap()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut hits = 0;
    let mut nontrivial = 0;
    for run in 0..100 {
        let model = random_small_model(&mut rng);
        let exact = exhaustive_minimum(&model);
        let scale = (0..model.n())
            .map(|i| model.h[i].abs() + model.j.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let schedule = Schedule::new(scale, scale * 1e-6, 200, 20).unwrap();
        let r = anneal(&model, &schedule, 1000 + run, None).unwrap();
        if (r.best_energy - exact).abs() <= 1e-9 * exact.abs().max(f64::MIN_POSITIVE) {
            hits += 1;
        }
        if r.best.values.iter().any(|&v| v != -1) {
            nontrivial += 1;
        }
    }
    outcome(hits >= 95, format!("{hits}/100 exact minima ({nontrivial} with a non-empty ground state)"))
}

fn criterion_2(kernel: &Kernel, data: &[f64]) -> Outcome {
    let alpha = 0.01;
    let model = build_model(kernel, data, alpha, 256).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut diffs = Vec::new();
    let mut mags = Vec::new();
    for _ in 0..100 {
        let values = (0..model.n()).map(|_| rng.random_range(-128..=128)).collect();
        let s = SpinField::new(256, values, 0.2).unwrap();
        let psi = cost_psi(kernel, data, alpha, &s, None).unwrap();
        let h = energy(&model, &s).unwrap();
        diffs.push(psi - h);
        mags.push(psi.abs());
    }
    let mean = diffs.iter().sum::<f64>() / 100.0;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / 100.0;
    let mag = mags.iter().sum::<f64>() / 100.0;
    let rel = var / (mag * mag);
    outcome(
        rel < 1e-18,
        format!("var(psi - H) / mean|psi|^2 = {rel:.3e}, mean difference {mean:.6e}, offset {:.6e}", model.offset),
    )
}

fn criterion_3(cfg: &ExperimentConfig, tables: &ProbeTables) -> Outcome {
    let sd = cfg.sd_array().unwrap();
    let rows = fd_consistency(cfg, tables, &sd).unwrap();
    let worst = rows.iter().map(|r| r.rel_err).fold(0.0, f64::max);
    outcome(rows.len() == 240 && worst <= 0.02, format!("{} pairs, max relative error {worst:.4e}", rows.len()))
}

fn criterion_4(cfg: &ExperimentConfig) -> Outcome {
    let pairs = quadrature_pairs(25, 3, &cfg.roi_grid().unwrap());
    let rows = quadrature_check(cfg, &pairs).unwrap();
    let worst = rows.iter().map(|r| r.rel_err).fold(0.0, f64::max);
    outcome(rows.len() == 25 && worst <= 1e-8, format!("25 pairs, max relative difference {worst:.3e}"))
}

fn criterion_5(cfg: &ExperimentConfig, tables: &ProbeTables, coupling: &CellGreen) -> Outcome {
    let rows = rytov_scaling(cfg, tables, coupling, &[0.2, 0.1, 0.05]).unwrap();
    let mut pass = true;
    for w in rows.windows(2) {
        pass &= w[1].max_err_first < w[0].max_err_first;
        pass &= w[0].max_err_first / w[1].max_err_first >= 2.0;
        pass &= w[1].max_phi < w[0].max_phi;
    }
    let detail = rows
        .iter()
        .map(|r| format!("c={} max|phi|={:.4e} err={:.4e}", r.contrast, r.max_phi, r.max_err_first))
        .collect::<Vec<_>>()
        .join("; ");
    outcome(pass, detail)
}

fn criterion_6() -> Outcome {
    let j = DMatrix::from_row_slice(2, 2, &[-0.3, 0.4, 0.4, 0.2]);
    let h = DVector::from_row_slice(&[0.5, -0.7]);
    let model = HamiltonianModel::from_parts(j, h, 2, 0.0, 1.0).unwrap();
    let beta = 1.0;
    let states: Vec<[i32; 2]> = (-1..=1).flat_map(|a| (-1..=1).map(move |b| [a, b])).collect();
    let weights: Vec<f64> = states
        .iter()
        .map(|s| {
            let f = SpinField::new(2, s.to_vec(), 1.0).unwrap();
            (-beta * energy(&model, &f).unwrap()).exp()
        })
        .collect();
    let z: f64 = weights.iter().sum();
    let init = SpinField::new(2, vec![0, 0], 1.0).unwrap();
    let mut state = ChainState::new(&model, init, chain_rng(99, 0)).unwrap();
    let mut counts = [0u64; 9];
    let sweeps = 1_000_000;
    for _ in 0..sweeps {
        sweep(&model, &mut state, beta);
        let v = &state.spins.values;
        counts[((v[0] + 1) * 3 + (v[1] + 1)) as usize] += 1;
    }
    let tv = 0.5
        * weights
            .iter()
            .zip(&counts)
            .map(|(w, &c)| (c as f64 / sweeps as f64 - w / z).abs())
            .sum::<f64>();
    outcome(tv < 0.02, format!("total variation {tv:.3e} after {sweeps} sweeps"))
}

fn peak(grid: &RoiGrid, map: &[f64]) -> (Point2, f64) {
    let (i, v) = map
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
    (grid.centers[i], v)
}

fn within(map: &[f64], lo: f64, hi: f64) -> bool {
    map.iter().all(|&v| (lo..=hi).contains(&v))
}

fn criterion_7(dir: &Path) -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.output_dir = dir.to_path_buf();
    let start = Instant::now();
    experiment::run_simulate(&cfg).unwrap();
    let rec = experiment::run_reconstruct_sa(&cfg, &dir.join(MEASUREMENTS_FILE), false).unwrap();
    let grid = cfg.roi_grid().unwrap();
    let (p, v) = peak(&grid, &rec.map);
    let dist = p.distance(Point2::new(0.0, 10.0));
    let bounded = within(&rec.map, 0.0, cfg.annealing.delta_mu_a_max);
    outcome(
        dist <= 5.0 && bounded,
        format!(
            "peak {v} at ({}, {}), {dist:.2} mm from centre, bounded {bounded}, {:.1} s",
            p.x,
            p.y,
            start.elapsed().as_secs_f64()
        ),
    )
}

/// Value of the map on the line y = `y`, interpolated between the two rows
/// whose centres bracket it, at every column.
fn profile(grid: &RoiGrid, map: &[f64], y: f64) -> Vec<(f64, f64)> {
    let t = (y - grid.origin.y) / grid.h - 0.5;
    let r0 = (t.floor().max(0.0) as usize).min(grid.ny - 1);
    let r1 = (r0 + 1).min(grid.ny - 1);
    let w = (t - r0 as f64).clamp(0.0, 1.0);
    (0..grid.width())
        .map(|c| {
            let a = map[grid.index(r0, c)];
            let b = map[grid.index(r1, c)];
            (grid.centers[grid.index(r0, c)].x, (1.0 - w) * a + w * b)
        })
        .collect()
}

/// Largest value within `radius` of `center`, if that cell is a local maximum
/// over its 8-neighbourhood.
fn local_max_near(grid: &RoiGrid, map: &[f64], center: Point2, radius: f64) -> Option<(Point2, f64)> {
    let (i, v) = (0..map.len())
        .filter(|&i| grid.centers[i].distance(center) <= radius)
        .map(|i| (i, map[i]))
        .fold((usize::MAX, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    if i == usize::MAX || v <= 0.0 {
        return None;
    }
    let (r, c) = grid.row_col(i);
    for dr in -1i64..=1 {
        for dc in -1i64..=1 {
            let (rr, cc) = (r as i64 + dr, c as i64 + dc);
            if (dr, dc) == (0, 0) || rr < 0 || cc < 0 || rr >= grid.ny as i64 || cc >= grid.width() as i64 {
                continue;
            }
            if map[grid.index(rr as usize, cc as usize)] > v {
                return None;
            }
        }
    }
    Some((grid.centers[i], v))
}

fn criterion_8(dir: &Path) -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.output_dir = dir.to_path_buf();
    cfg.phantom.disks = [-10.0, 10.0]
        .iter()
        .map(|&x| Disk {
            center: Point2::new(x, 10.0),
            radius: 2.5,
            delta_mu_a: 0.2,
        })
        .collect();
    experiment::run_simulate(&cfg).unwrap();
    let input = dir.join(MEASUREMENTS_FILE);
    let rec = experiment::run_reconstruct_sa(&cfg, &input, false).unwrap();
    let maps = experiment::run_reconstruct_svd(&cfg, &input).unwrap();
    let grid = cfg.roi_grid().unwrap();

    let left = local_max_near(&grid, &rec.map, Point2::new(-10.0, 10.0), 5.0);
    let right = local_max_near(&grid, &rec.map, Point2::new(10.0, 10.0), 5.0);
    let prof = profile(&grid, &rec.map, 10.0);
    let peak_in = |lo: f64, hi: f64| {
        prof.iter()
            .filter(|(x, _)| (lo..=hi).contains(x))
            .fold((0.0, f64::NEG_INFINITY), |a, &(x, v)| if v > a.1 { (x, v) } else { a })
    };
    let (xl, pl) = peak_in(-15.0, -5.0);
    let (xr, pr) = peak_in(5.0, 15.0);
    let valley = prof
        .iter()
        .filter(|(x, _)| *x > xl && *x < xr)
        .map(|&(_, v)| v)
        .fold(f64::INFINITY, f64::min);
    let depth = 1.0 - valley / pl.min(pr);
    let sa_bounded = within(&rec.map, 0.0, 0.2);
    let svd_unbounded: Vec<bool> = maps.iter().map(|m| m.min < 0.0 || m.max > 0.2).collect();
    let pass = left.is_some()
        && right.is_some()
        && depth >= 0.3
        && sa_bounded
        && maps.len() == 2
        && svd_unbounded.iter().all(|&u| u);
    let fmt_max = |m: Option<(Point2, f64)>| match m {
        Some((p, v)) => format!("{v} at ({}, {})", p.x, p.y),
        None => "none".into(),
    };
    let svd = maps
        .iter()
        .map(|m| format!("k={} [{:.4}, {:.4}]", m.rank, m.min, m.max))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        pass,
        format!(
            "maxima {} / {}, valley depth {:.0}% along y=10, SA bounded {sa_bounded}, TSVD {svd}",
            fmt_max(left),
            fmt_max(right),
            100.0 * depth
        ),
    )
}

fn criterion_9(kernel: &Kernel, coupling: &CellGreen, data: &[f64]) -> Outcome {
    let triples = sample_triples(1000, kernel.n_pairs(), kernel.n_cells(), 17);
    let r = theorem1_diagnostic(kernel, coupling, data, &triples).unwrap();
    let finite = r.ratios.iter().all(|v| v.is_finite());
    let (p, i1, i2) = r.argmax;
    outcome(
        r.ratios.len() >= 1000 && finite,
        format!(
            "{} triples, max ratio {:.4e} at (p={p}, i1={i1}, i2={i2}), mean {:.4e}, below one {:.1}%",
            r.ratios.len(),
            r.max_ratio,
            r.mean_ratio,
            100.0 * r.fraction_below_one
        ),
    )
}

fn criterion_10(first: &Path, second: &Path) -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.output_dir = second.to_path_buf();
    experiment::run_simulate(&cfg).unwrap();
    experiment::run_reconstruct_sa(&cfg, &second.join(MEASUREMENTS_FILE), false).unwrap();
    let mut same = Vec::new();
    for f in [MEASUREMENTS_FILE, SA_MAP_FILE, SA_TRACE_FILE] {
        let a = std::fs::read(first.join(f)).unwrap();
        let b = std::fs::read(second.join(f)).unwrap();
        same.push((f, a == b && !a.is_empty()));
    }
    let pass = same.iter().all(|(_, s)| *s);
    let detail = same.iter().map(|(f, s)| format!("{f}: {}", if *s { "identical" } else { "differs" }));
    outcome(pass, detail.collect::<Vec<_>>().join(", "))
}

fn main() {
    let cfg = ExperimentConfig::default();
    let bg = cfg.background().unwrap();
    let (roi, sd, quad) = (cfg.roi_grid().unwrap(), cfg.sd_array().unwrap(), cfg.quadrature_spec());
    let tables = ProbeTables::build(&roi, &sd, &bg, &quad).unwrap();
    let coupling = CellGreen::build(&roi, &bg, &quad, CellGreen::DEFAULT_DIAG_OFFSET).unwrap();
    let kernel = Kernel::from_tables(tables.clone(), &sd, cfg.annealing.delta_mu_a_max).unwrap();
    let data = spindot::forward::measure(
        &bg,
        &cfg.fd_grid().unwrap(),
        &cfg.phantom().unwrap(),
        &sd,
        cfg.measurement.noise_pct,
        cfg.measurement.seed,
    )
    .unwrap()
    .phi_noisy;
    let single = tempfile::tempdir().unwrap();
    let double = tempfile::tempdir().unwrap();
    let repeat = tempfile::tempdir().unwrap();

    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("ground-state oracle, N=10 M=2", Box::new(criterion_1)),
        ("psi/H identity at full scale", Box::new(|| criterion_2(&kernel, &data))),
        ("FD background vs analytic Green", Box::new(|| criterion_3(&cfg, &tables))),
        ("DE vs adaptive quadrature", Box::new(|| criterion_4(&cfg))),
        ("Rytov error scaling", Box::new(|| criterion_5(&cfg, &tables, &coupling))),
        ("Metropolis stationary distribution", Box::new(criterion_6)),
        ("single-disk reconstruction", Box::new(|| criterion_7(single.path()))),
        ("two-disk reconstruction and TSVD", Box::new(|| criterion_8(double.path()))),
        ("second-order neglect report", Box::new(|| criterion_9(&kernel, &coupling, &data))),
        ("determinism of CSV outputs", Box::new(|| criterion_10(single.path(), repeat.path()))),
    ];

    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!(
            "{tag} [{}] {name}: {} ({:.1} s)",
            k + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
