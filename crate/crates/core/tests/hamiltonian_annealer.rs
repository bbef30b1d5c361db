mod common;

use spindot::annealer::{anneal, Schedule};
use spindot::config::ExperimentConfig;
use spindot::experiment::{build_kernel_for, reconstruct_sa};
use spindot::forward::measure;
use spindot::hamiltonian::{build_model, energy};

fn data_for(c: &ExperimentConfig) -> Vec<f64> {
    measure(
        &c.background().unwrap(),
        &c.fd_grid().unwrap(),
        &c.phantom().unwrap(),
        &c.sd_array().unwrap(),
        c.measurement.noise_pct,
        c.measurement.seed,
    )
    .unwrap()
    .phi_noisy
}

#[test]
fn acceptance_rate_falls_with_temperature_on_reference_problem() {
    let c = ExperimentConfig::default();
    let kernel = build_kernel_for(&c).unwrap();
    let rec = reconstruct_sa(&c, &kernel, &data_for(&c)).unwrap();
    let trace = &rec.result.trace;
    assert_eq!(trace.len(), 200);
    assert!(trace[0].accept_rate > trace[199].accept_rate);
    assert!(trace.windows(2).all(|w| w[1].best_energy <= w[0].best_energy));
    assert!(rec.map.iter().all(|&v| (0.0..=0.2).contains(&v)));
}

#[test]
fn best_energy_is_recomputed_from_spins() {
    let c = common::small_config();
    let kernel = build_kernel_for(&c).unwrap();
    let data = data_for(&c);
    let model = build_model(&kernel, &data, c.annealing.alpha, c.annealing.levels).unwrap();
    let r = anneal(&model, &c.schedule().unwrap(), 4, None).unwrap();
    assert_eq!(r.best_energy, energy(&model, &r.best).unwrap());
    assert!(r.trace.iter().all(|t| r.best_energy <= t.best_energy + 1e-12 * t.best_energy.abs()));
}

#[test]
fn very_large_penalty_gives_an_empty_map() {
    let mut c = common::small_config();
    c.annealing.alpha = 1e6;
    // each site must propose the bottom level at least once: 4000 proposals
    c.annealing.n_temps = 200;
    c.annealing.sweeps_per_temp = 20;
    let kernel = build_kernel_for(&c).unwrap();
    let rec = reconstruct_sa(&c, &kernel, &data_for(&c)).unwrap();
    assert!(rec.map.iter().all(|&v| v == 0.0));
}

#[test]
fn chains_pick_the_lowest_energy() {
    let mut c = common::small_config();
    let kernel = build_kernel_for(&c).unwrap();
    let data = data_for(&c);
    let single = reconstruct_sa(&c, &kernel, &data).unwrap();
    c.annealing.chains = 4;
    let multi = reconstruct_sa(&c, &kernel, &data).unwrap();
    assert!(multi.result.best_energy <= single.result.best_energy);
    let again = reconstruct_sa(&c, &kernel, &data).unwrap();
    assert_eq!(multi.result.best.values, again.result.best.values);
    let s = Schedule::new(1e-5, 1e-10, 200, 20).unwrap();
    assert_eq!(s.temperatures().len(), 200);
}
