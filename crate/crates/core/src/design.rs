//! Iterative sizing loop and the classical reference optimizer.
//!
//! Each iteration solves the truss at the current areas, builds the binary
//! objective over the still-active rods, runs one QAOA circuit, decodes the
//! most frequent string into per-rod multipliers and rescales the areas.
//! Rods that shrink below a fraction of the initial area are frozen and
//! release their qubits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::Bitstring;
use crate::encoding::{
    build_qubo, decode_updaters, EncodingConfig, EncodingError, QuboProblem, VariableRegistry,
};
use crate::fem::{assemble_and_solve, total_volume, FemError, FemSolution, TrussModel};
use crate::qaoa::{fine_tune_energies, flrs_schedule, run_on_energies, QaoaError, Tuner};

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("structure became unsolvable at iteration {iteration}: {source}")]
    StructuralFailure {
        iteration: usize,
        #[source]
        source: FemError,
    },
    #[error("invalid loop configuration: {0}")]
    InvalidConfig(String),
    #[error("no active rods left to optimize")]
    NoActiveRods,
    #[error("reference optimizer failed: {0}")]
    ReferenceUnavailable(String),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Qaoa(#[from] QaoaError),
}

pub type Result<T> = std::result::Result<T, DesignError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub layers: usize,
    pub encoding: EncodingConfig,
    pub shots: u64,
    pub max_iterations: usize,
    /// Fraction of the initial area below which a rod is frozen.
    pub freeze_threshold: f64,
    /// Consecutive all-identity iterations that count as converged.
    pub convergence_window: usize,
    pub seed: u64,
    pub tuner: Tuner,
    /// Expectation evaluations the local-search tuner may spend per iteration.
    pub tuning_budget: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            layers: 6,
            encoding: EncodingConfig::default(),
            shots: 100_000,
            max_iterations: 50,
            freeze_threshold: 0.01,
            convergence_window: 3,
            seed: 0,
            tuner: Tuner::default(),
            tuning_budget: 0,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DesignError::InvalidConfig(m.to_string()));
        if self.layers == 0 {
            return bad("layer count must be positive");
        }
        if self.shots == 0 {
            return bad("shot count must be positive");
        }
        if self.max_iterations == 0 {
            return bad("iteration limit must be positive");
        }
        if !(self.freeze_threshold > 0.0 && self.freeze_threshold < 1.0) {
            return bad("freeze threshold must lie in (0, 1)");
        }
        if self.convergence_window == 0 {
            return bad("convergence window must be positive");
        }
        if let Tuner::Flrs {
            delta_beta,
            delta_gamma,
        } = self.tuner
        {
            if !(delta_beta > 0.0 && delta_gamma > 0.0) || !delta_beta.is_finite() || !delta_gamma.is_finite() {
                return bad("ramp scales must be positive");
            }
        }
        self.encoding.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Binary objective at the chosen string.
    pub objective: f64,
    /// Compliance after the update.
    pub compliance: f64,
    /// `V/V0` after the update.
    pub volume_ratio: f64,
    pub bitstring: Bitstring,
    /// Rods optimized this iteration, ascending.
    pub active_rods: Vec<usize>,
    /// Decoded multipliers, parallel to `active_rods`.
    pub alphas: Vec<f64>,
    pub qubits_used: usize,
    pub energy_min: f64,
    pub energy_max: f64,
    pub exact_expectation: f64,
}

impl IterationRecord {
    /// `(chosen − min)/(max − min)` over all strings of this iteration.
    pub fn gap_ratio(&self) -> f64 {
        let span = self.energy_max - self.energy_min;
        if span > 0.0 {
            (self.objective - self.energy_min) / span
        } else {
            0.0
        }
    }

    pub fn is_identity(&self) -> bool {
        self.alphas.iter().all(|&a| a == 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignState {
    pub iteration: usize,
    pub areas: Vec<f64>,
    pub active: Vec<bool>,
    /// Iteration whose update pushed the rod under the threshold.
    pub frozen_at: Vec<Option<usize>>,
    /// Per iteration, per rod; `None` where the rod was frozen.
    pub updater_history: Vec<Vec<Option<f64>>>,
    pub records: Vec<IterationRecord>,
}

impl DesignState {
    pub fn new(model: &TrussModel) -> Self {
        let rods = model.rods.len();
        Self {
            iteration: 0,
            areas: model.uniform_areas(),
            active: vec![true; rods],
            frozen_at: vec![None; rods],
            updater_history: Vec::new(),
            records: Vec::new(),
        }
    }

    pub fn active_rods(&self) -> Vec<usize> {
        (0..self.active.len()).filter(|&e| self.active[e]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convergence {
    Running,
    Converged,
    BudgetExhausted,
}

/// Structural solve and binary objective for the state's next iteration.
pub fn iteration_qubo(
    state: &DesignState,
    model: &TrussModel,
    config: &LoopConfig,
) -> Result<(FemSolution, QuboProblem)> {
    let active = state.active_rods();
    if active.is_empty() {
        return Err(DesignError::NoActiveRods);
    }
    let fem = assemble_and_solve(model, &state.areas).map_err(|source| {
        DesignError::StructuralFailure {
            iteration: state.iteration,
            source,
        }
    })?;
    let registry = VariableRegistry::new(&active, &config.encoding);
    let qubo = build_qubo(
        model,
        &fem,
        &state.areas,
        &config.encoding,
        model.volume_budget,
        &registry,
    )?;
    Ok((fem, qubo))
}

pub fn run_iteration(
    state: &DesignState,
    model: &TrussModel,
    config: &LoopConfig,
) -> Result<(DesignState, IterationRecord)> {
    let i = state.iteration;
    let (_, qubo) = iteration_qubo(state, model, config)?;
    let energies = qubo.energy_table()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(i as u64));

    let schedule = match config.tuner {
        Tuner::Flrs {
            delta_beta,
            delta_gamma,
        } => flrs_schedule(config.layers, delta_beta, delta_gamma)?,
        Tuner::LocalSearch => fine_tune_energies(
            &energies,
            config.layers,
            &config.tuner,
            config.tuning_budget,
            &mut rng,
        )?,
    };
    let result = run_on_energies(&energies, &schedule, config.shots, &mut rng)?;
    let bits = result.most_frequent;
    let alphas = decode_updaters(&bits, &qubo.registry, &config.encoding, &mut rng);

    let mut next = state.clone();
    let active = qubo.registry.active_rods().to_vec();
    let mut row = vec![None; model.rods.len()];
    for (&e, &alpha) in active.iter().zip(&alphas) {
        next.areas[e] *= alpha;
        row[e] = Some(alpha);
    }
    next.updater_history.push(row);

    let after = assemble_and_solve(model, &next.areas).map_err(|source| {
        DesignError::StructuralFailure {
            iteration: i,
            source,
        }
    })?;
    let (energy_min, energy_max) = energies
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    let record = IterationRecord {
        iteration: i,
        objective: energies[bits.index() as usize],
        compliance: after.compliance,
        volume_ratio: after.total_volume / model.volume_budget,
        bitstring: bits,
        active_rods: active,
        alphas,
        qubits_used: qubo.n(),
        energy_min,
        energy_max,
        exact_expectation: result.exact_expectation,
    };
    next.records.push(record.clone());
    let mut next = early_stop_freeze(&next, model, config);
    next.iteration = i + 1;
    Ok((next, record))
}

/// Freezes active rods whose area is strictly below the threshold. Their
/// residual areas stay in the structure.
pub fn early_stop_freeze(state: &DesignState, model: &TrussModel, config: &LoopConfig) -> DesignState {
    let limit = config.freeze_threshold * model.initial_area;
    let mut next = state.clone();
    for e in 0..next.areas.len() {
        if next.active[e] && next.areas[e] < limit {
            next.active[e] = false;
            next.frozen_at[e] = Some(state.iteration);
        }
    }
    next
}

pub fn check_convergence(state: &DesignState, config: &LoopConfig) -> Convergence {
    let done = state.records.len();
    if done >= config.convergence_window
        && state.records[done - config.convergence_window..]
            .iter()
            .all(IterationRecord::is_identity)
    {
        return Convergence::Converged;
    }
    if done >= config.max_iterations {
        Convergence::BudgetExhausted
    } else {
        Convergence::Running
    }
}

#[derive(Debug)]
pub enum Termination {
    Converged,
    BudgetExhausted,
    StructuralFailure { iteration: usize, message: String },
}

#[derive(Debug)]
pub struct RunOutcome {
    pub state: DesignState,
    pub termination: Termination,
}

/// Iterates until convergence, the iteration limit, or a structural failure.
/// `observe` sees each state before its iteration runs.
pub fn run_observed<F>(model: &TrussModel, config: &LoopConfig, mut observe: F) -> Result<RunOutcome>
where
    F: FnMut(&DesignState) -> Result<()>,
{
    config.validate()?;
    let mut state = DesignState::new(model);
    loop {
        match check_convergence(&state, config) {
            Convergence::Converged => {
                return Ok(RunOutcome {
                    state,
                    termination: Termination::Converged,
                })
            }
            Convergence::BudgetExhausted => {
                return Ok(RunOutcome {
                    state,
                    termination: Termination::BudgetExhausted,
                })
            }
            Convergence::Running => {}
        }
        if state.active.iter().all(|&a| !a) {
            let iteration = state.iteration;
            return Ok(RunOutcome {
                state,
                termination: Termination::StructuralFailure {
                    iteration,
                    message: "every rod fell below the freeze threshold".into(),
                },
            });
        }
        observe(&state)?;
        match run_iteration(&state, model, config) {
            Ok((next, _)) => state = next,
            Err(DesignError::StructuralFailure { iteration, source }) => {
                return Ok(RunOutcome {
                    state,
                    termination: Termination::StructuralFailure {
                        iteration,
                        message: source.to_string(),
                    },
                })
            }
            Err(e) => return Err(e),
        }
    }
}

pub fn run(model: &TrussModel, config: &LoopConfig) -> Result<RunOutcome> {
    run_observed(model, config, |_| Ok(()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcConfig {
    /// Damping exponent on the resizing ratio.
    pub eta: f64,
    /// Lower area bound as a fraction of the initial area.
    pub min_area_fraction: f64,
    /// Stop when no area changes by more than this fraction.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for OcConfig {
    fn default() -> Self {
        Self {
            eta: 0.5,
            min_area_fraction: 1e-6,
            tolerance: 1e-4,
            max_iterations: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcResult {
    pub areas: Vec<f64>,
    pub compliance: f64,
    pub iterations: usize,
}

impl OcResult {
    /// Rods whose area is at least `fraction` of `initial_area`.
    pub fn retained(&self, initial_area: f64, fraction: f64) -> Vec<usize> {
        (0..self.areas.len())
            .filter(|&e| self.areas[e] >= fraction * initial_area)
            .collect()
    }
}

/// Optimality-criteria sizing at fixed total volume `V0`.
pub fn oc_reference(model: &TrussModel, config: &OcConfig) -> Result<OcResult> {
    let lengths: Vec<f64> = model.rods.iter().map(|r| r.length()).collect();
    let v0 = model.volume_budget;
    let min_area = config.min_area_fraction * model.initial_area;
    if lengths.iter().sum::<f64>() * min_area >= v0 {
        return Err(DesignError::ReferenceUnavailable(
            "the lower area bound alone exceeds the volume budget".into(),
        ));
    }
    let mut areas = model.uniform_areas();
    for iteration in 1..=config.max_iterations {
        let fem = assemble_and_solve(model, &areas)?;
        // Sensitivity of compliance per unit area, per unit volume.
        let ratio: Vec<f64> = (0..areas.len())
            .map(|e| fem.rod_strain_energy[e] / (areas[e] * lengths[e]))
            .collect();
        if ratio.iter().all(|&r| r <= 0.0) {
            return Err(DesignError::ReferenceUnavailable(
                "the load does no work on the structure".into(),
            ));
        }
        let resize = |multiplier: f64| -> Vec<f64> {
            areas
                .iter()
                .zip(&ratio)
                .map(|(&a, &r)| (a * (r / multiplier).powf(config.eta)).max(min_area))
                .collect()
        };
        let volume = |a: &[f64]| -> f64 { a.iter().zip(&lengths).map(|(a, l)| a * l).sum() };

        let (mut lo, mut hi) = (1e-30f64, 1e30f64);
        if volume(&resize(lo)) < v0 || volume(&resize(hi)) > v0 {
            return Err(DesignError::ReferenceUnavailable(
                "could not bracket the volume multiplier".into(),
            ));
        }
        for _ in 0..400 {
            let mid = (lo * hi).sqrt();
            if volume(&resize(mid)) > v0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi / lo < 1.0 + 1e-14 {
                break;
            }
        }
        let next = resize(hi);
        if (volume(&next) - v0).abs() > 1e-9 * v0 {
            return Err(DesignError::ReferenceUnavailable(format!(
                "volume multiplier search stalled at {:e}",
                volume(&next)
            )));
        }
        let change = next
            .iter()
            .zip(&areas)
            .map(|(n, a)| ((n - a) / a).abs())
            .fold(0.0, f64::max);
        areas = next;
        if change < config.tolerance {
            let compliance = assemble_and_solve(model, &areas)?.compliance;
            return Ok(OcResult {
                areas,
                compliance,
                iterations: iteration,
            });
        }
    }
    Err(DesignError::ReferenceUnavailable(format!(
        "no convergence within {} iterations",
        config.max_iterations
    )))
}

/// `V/V0` for the given areas.
pub fn volume_ratio(model: &TrussModel, areas: &[f64]) -> f64 {
    total_volume(model, areas) / model.volume_budget
}
