//! Single-component Metropolis sampling with a decreasing temperature schedule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hamiltonian::{energy_of, site_delta, HamiltonianModel};
use crate::model::SpinField;

/// Full recomputation of the running energy and local fields every this many sweeps.
pub const RESYNC_SWEEPS: u64 = 100;

/// Geometric cooling `T_k = t_high (t_low / t_high)^(k / (n_temps - 1))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub t_high: f64,
    pub t_low: f64,
    pub n_temps: usize,
    pub sweeps_per_temp: usize,
}

impl Schedule {
    pub fn new(t_high: f64, t_low: f64, n_temps: usize, sweeps_per_temp: usize) -> Result<Self> {
        if !(t_low > 0.0 && t_low < t_high && t_high.is_finite()) {
            return Err(Error::param("schedule", "need 0 < t_low < t_high"));
        }
        if n_temps < 2 {
            return Err(Error::param("schedule.n_temps", "must be >= 2"));
        }
        if sweeps_per_temp == 0 {
            return Err(Error::param("schedule.sweeps_per_temp", "must be >= 1"));
        }
        Ok(Self {
            t_high,
            t_low,
            n_temps,
            sweeps_per_temp,
        })
    }

    /// Ratio between consecutive temperatures.
    pub fn decay(&self) -> f64 {
        (self.t_low / self.t_high).powf(1.0 / (self.n_temps - 1) as f64)
    }

    pub fn temperatures(&self) -> Vec<f64> {
        let last = (self.n_temps - 1) as f64;
        (0..self.n_temps)
            .map(|k| {
                if k + 1 == self.n_temps {
                    self.t_low
                } else {
                    self.t_high * (self.t_low / self.t_high).powf(k as f64 / last)
                }
            })
            .collect()
    }
}

/// Uniform proposal over all `M + 1` levels, the current one included.
pub fn propose<R: Rng + ?Sized>(rng: &mut R, m: u32) -> i32 {
    let half = (m / 2) as i32;
    rng.random_range(-half..=half)
}

/// One Markov chain: spins, running energy, per-site local fields
/// `sum_j J_ij S_j`, and the best configuration seen at a sweep boundary.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub spins: SpinField,
    pub energy: f64,
    pub best_spins: SpinField,
    pub best_energy: f64,
    pub rng: ChaCha8Rng,
    pub proposals: u64,
    pub accepted: u64,
    pub sweeps: u64,
    local: Vec<f64>,
}

impl ChainState {
    pub fn new(model: &HamiltonianModel, initial: SpinField, rng: ChaCha8Rng) -> Result<Self> {
        if initial.len() != model.n() || initial.m != model.m {
            return Err(Error::DimensionMismatch(format!(
                "initial spins (N={}, M={}) vs model (N={}, M={})",
                initial.len(),
                initial.m,
                model.n(),
                model.m
            )));
        }
        let mut state = Self {
            best_spins: initial.clone(),
            spins: initial,
            energy: 0.0,
            best_energy: 0.0,
            rng,
            proposals: 0,
            accepted: 0,
            sweeps: 0,
            local: Vec::new(),
        };
        state.resync(model);
        state.best_energy = state.energy;
        Ok(state)
    }

    /// Uniform random initial spins drawn from the chain's own generator.
    pub fn random(model: &HamiltonianModel, mut rng: ChaCha8Rng) -> Result<Self> {
        let values = (0..model.n()).map(|_| propose(&mut rng, model.m)).collect();
        let spins = SpinField::new(model.m, values, model.delta_mu_a_max)?;
        Self::new(model, spins, rng)
    }

    /// Recomputes local fields and energy from scratch.
    pub fn resync(&mut self, model: &HamiltonianModel) {
        let n = model.n();
        self.local = (0..n)
            .map(|i| {
                model
                    .j
                    .column(i)
                    .iter()
                    .zip(&self.spins.values)
                    .map(|(j, &s)| j * s as f64)
                    .sum()
            })
            .collect();
        self.energy = energy_of(model, &self.spins.values);
    }

    fn note_best(&mut self) {
        if self.energy < self.best_energy {
            self.best_energy = self.energy;
            self.best_spins.values.copy_from_slice(&self.spins.values);
        }
    }
}

/// Proposes a new value for site `i` and accepts it with probability
/// `min(1, exp(-beta dH))`. Returns whether the move was accepted.
pub fn metropolis_step(model: &HamiltonianModel, state: &mut ChainState, i: usize, beta: f64) -> bool {
    let proposed = propose(&mut state.rng, model.m);
    let current = state.spins.values[i];
    let j_ii = model.j[(i, i)];
    let h_eff = 2.0 * (state.local[i] - j_ii * current as f64) + model.h[i];
    let delta = site_delta(j_ii, h_eff, current, proposed);
    let w = beta * delta;
    state.proposals += 1;
    let accept = w <= 0.0 || state.rng.random::<f64>() < (-w).exp();
    if !accept {
        return false;
    }
    state.accepted += 1;
    if proposed != current {
        let step = (proposed - current) as f64;
        for (l, jv) in state.local.iter_mut().zip(model.j.column(i).iter()) {
            *l += jv * step;
        }
        state.spins.values[i] = proposed;
        state.energy += delta;
    }
    true
}

/// One cyclic pass over sites `0..N`. Returns the number of accepted moves.
pub fn sweep(model: &HamiltonianModel, state: &mut ChainState, beta: f64) -> usize {
    let mut accepted = 0;
    for i in 0..model.n() {
        accepted += metropolis_step(model, state, i, beta) as usize;
    }
    state.sweeps += 1;
    if state.sweeps.is_multiple_of(RESYNC_SWEEPS) {
        state.resync(model);
    }
    state.note_best();
    accepted
}

/// One row of the annealing trace, written after the sweeps at each temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub temp: f64,
    pub energy: f64,
    pub best_energy: f64,
    pub accept_rate: f64,
}

#[derive(Debug, Clone)]
pub struct AnnealResult {
    pub best: SpinField,
    pub best_energy: f64,
    pub final_spins: SpinField,
    pub trace: Vec<TraceRecord>,
    pub chain: usize,
}

/// Generator for chain `chain` of a run seeded with `seed`.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Runs the schedule from random (or given) initial spins and returns the best
/// configuration visited, with its energy recomputed from scratch.
pub fn anneal(
    model: &HamiltonianModel,
    schedule: &Schedule,
    seed: u64,
    initial: Option<SpinField>,
) -> Result<AnnealResult> {
    run_chain(model, schedule, seed, 0, initial)
}

fn run_chain(
    model: &HamiltonianModel,
    schedule: &Schedule,
    seed: u64,
    chain: usize,
    initial: Option<SpinField>,
) -> Result<AnnealResult> {
    let rng = chain_rng(seed, chain);
    let mut state = match initial {
        Some(s) => ChainState::new(model, s, rng)?,
        None => ChainState::random(model, rng)?,
    };
    let mut trace = Vec::with_capacity(schedule.n_temps);
    for temp in schedule.temperatures() {
        let beta = 1.0 / temp;
        let mut accepted = 0usize;
        for _ in 0..schedule.sweeps_per_temp {
            accepted += sweep(model, &mut state, beta);
        }
        trace.push(TraceRecord {
            temp,
            energy: state.energy,
            best_energy: state.best_energy,
            accept_rate: accepted as f64 / (schedule.sweeps_per_temp * model.n()).max(1) as f64,
        });
    }
    state.resync(model);
    state.note_best();
    let best_energy = energy_of(model, &state.best_spins.values);
    Ok(AnnealResult {
        best: state.best_spins,
        best_energy,
        final_spins: state.spins,
        trace,
        chain,
    })
}

/// Independent chains in parallel; the lowest best energy wins, ties to the lower chain index.
pub fn anneal_chains(
    model: &HamiltonianModel,
    schedule: &Schedule,
    seed: u64,
    n_chains: usize,
    initial: Option<SpinField>,
) -> Result<AnnealResult> {
    if n_chains == 0 {
        return Err(Error::param("chains", "must be >= 1"));
    }
    let results = (0..n_chains)
        .into_par_iter()
        .map(|c| run_chain(model, schedule, seed, c, initial.clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok(results
        .into_iter()
        .reduce(|a, b| if b.best_energy < a.best_energy { b } else { a })
        .expect("at least one chain"))
}
