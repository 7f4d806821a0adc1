//! Dense statevector QAOA for diagonal cost functions.
//!
//! Energies are tabulated once per circuit. The phase separator multiplies
//! amplitude `x` by `exp(−iγ·C(x))` and the mixer applies `exp(−iβX)` on each
//! qubit. With both angles positive this ramp concentrates probability on
//! the *largest* values of `C`, so circuits are driven with the standardized
//! negated objective `C = −(E − mean)/std`: the low-energy states of `E` are
//! the ones the ramp amplifies, and a unit spread keeps the fixed schedule in
//! the same angular range for every problem scale.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::Bitstring;
use crate::encoding::{EncodingError, QuboProblem};
use crate::MAX_QUBITS;

#[derive(Debug, Error)]
pub enum QaoaError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("{n} qubits is outside the supported range 1..={max}")]
    TooLarge { n: usize, max: usize },
    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),
    #[error("unknown tuner {0:?} (expected `flrs` or `local-search`)")]
    UnknownTuner(String),
    #[error("percentage error is undefined for a zero reference")]
    UndefinedMetric,
    #[error("malformed schedule at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
}

pub type Result<T> = std::result::Result<T, QaoaError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaoaSchedule {
    pub gammas: Vec<f64>,
    pub betas: Vec<f64>,
    pub delta_gamma: f64,
    pub delta_beta: f64,
}

impl QaoaSchedule {
    /// Explicit angles; the scale factors are recorded as 1.
    pub fn new(gammas: Vec<f64>, betas: Vec<f64>) -> Result<Self> {
        if gammas.len() != betas.len() {
            return Err(QaoaError::InvalidSchedule(format!(
                "{} gammas but {} betas",
                gammas.len(),
                betas.len()
            )));
        }
        if gammas.iter().chain(&betas).any(|a| !a.is_finite()) {
            return Err(QaoaError::InvalidSchedule("angles must be finite".into()));
        }
        Ok(Self {
            gammas,
            betas,
            delta_gamma: 1.0,
            delta_beta: 1.0,
        })
    }

    pub fn p(&self) -> usize {
        self.gammas.len()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# layer gamma beta\n");
        for (i, (g, b)) in self.gammas.iter().zip(&self.betas).enumerate() {
            writeln!(out, "{i} {g:e} {b:e}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut gammas = Vec::new();
        let mut betas = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let err = |message: String| QaoaError::Parse {
                line: k + 1,
                message,
            };
            let fields: Vec<&str> = raw.split_whitespace().collect();
            if fields.is_empty() || fields[0].starts_with('#') {
                continue;
            }
            if fields.len() != 3 {
                return Err(err(format!("expected `layer gamma beta`, got {raw:?}")));
            }
            let layer: usize = fields[0]
                .parse()
                .map_err(|_| err(format!("bad layer index {:?}", fields[0])))?;
            if layer != gammas.len() {
                return Err(err(format!(
                    "layer {layer} out of order, expected {}",
                    gammas.len()
                )));
            }
            let angle = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("bad angle {s:?}")))
            };
            gammas.push(angle(fields[1])?);
            betas.push(angle(fields[2])?);
        }
        Self::new(gammas, betas)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Fixed linear ramp: `β_i = (1 − i/p)Δβ`, `γ_i = ((i+1)/p)Δγ` for `i < p`.
pub fn flrs_schedule(p: usize, delta_beta: f64, delta_gamma: f64) -> Result<QaoaSchedule> {
    if p < 1 {
        return Err(QaoaError::InvalidSchedule("at least one layer is required".into()));
    }
    if !delta_beta.is_finite() || !delta_gamma.is_finite() {
        return Err(QaoaError::InvalidSchedule("ramp scales must be finite".into()));
    }
    let pf = p as f64;
    let betas = (0..p).map(|i| (1.0 - i as f64 / pf) * delta_beta).collect();
    let gammas = (0..p).map(|i| ((i + 1) as f64 / pf) * delta_gamma).collect();
    Ok(QaoaSchedule {
        gammas,
        betas,
        delta_gamma,
        delta_beta,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let len = amps.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(QaoaError::Inconsistent(format!(
                "{len} amplitudes is not a power of two"
            )));
        }
        let n = len.trailing_zeros() as usize;
        if n > MAX_QUBITS {
            return Err(QaoaError::TooLarge { n, max: MAX_QUBITS });
        }
        Ok(Self { n, amps })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    /// `Σ |amp_x|² values_x`.
    pub fn expectation(&self, values: &[f64]) -> f64 {
        self.amps
            .iter()
            .zip(values)
            .map(|(a, v)| a.norm_sqr() * v)
            .sum()
    }
}

pub fn init_plus_state(n: usize) -> Result<StateVector> {
    if n == 0 || n > MAX_QUBITS {
        return Err(QaoaError::TooLarge { n, max: MAX_QUBITS });
    }
    let dim = 1usize << n;
    let amp = Complex64::new((dim as f64).sqrt().recip(), 0.0);
    Ok(StateVector {
        n,
        amps: vec![amp; dim],
    })
}

pub fn apply_phase_separator(state: &mut StateVector, table: &[f64], gamma: f64) -> Result<()> {
    if table.len() != state.amps.len() {
        return Err(QaoaError::Inconsistent(format!(
            "energy table has {} entries for {} amplitudes",
            table.len(),
            state.amps.len()
        )));
    }
    if gamma == 0.0 {
        return Ok(());
    }
    for (a, &c) in state.amps.iter_mut().zip(table) {
        let (s, co) = (gamma * c).sin_cos();
        *a *= Complex64::new(co, -s);
    }
    Ok(())
}

pub fn apply_mixer(state: &mut StateVector, beta: f64) {
    if beta == 0.0 {
        return;
    }
    let (s, c) = beta.sin_cos();
    for j in 0..state.n {
        let stride = 1usize << j;
        for block in state.amps.chunks_exact_mut(2 * stride) {
            let (lo, hi) = block.split_at_mut(stride);
            for (a0, a1) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a0, *a1);
                // c·x − i·s·y and c·y − i·s·x
                *a0 = Complex64::new(c * x.re + s * y.im, c * x.im - s * y.re);
                *a1 = Complex64::new(c * y.re + s * x.im, c * y.im - s * x.re);
            }
        }
    }
}

/// Standardized negated energies `−(E − mean)/std` over all basis states.
/// A flat landscape maps to zeros.
pub fn cost_table(energies: &[f64]) -> Vec<f64> {
    let count = energies.len() as f64;
    let mean = energies.iter().sum::<f64>() / count;
    let var = energies.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / count;
    let std = var.sqrt();
    if !(std > 1e-300) || std <= 1e-14 * mean.abs() {
        return vec![0.0; energies.len()];
    }
    energies.iter().map(|e| -(e - mean) / std).collect()
}

/// Runs `schedule` from the uniform superposition with phase table `table`.
pub fn evolve(table: &[f64], schedule: &QaoaSchedule) -> Result<StateVector> {
    let len = table.len();
    if len < 2 || !len.is_power_of_two() {
        return Err(QaoaError::Inconsistent(format!(
            "table of {len} entries is not a power of two"
        )));
    }
    let mut state = init_plus_state(len.trailing_zeros() as usize)?;
    for (&gamma, &beta) in schedule.gammas.iter().zip(&schedule.betas) {
        apply_phase_separator(&mut state, table, gamma)?;
        apply_mixer(&mut state, beta);
    }
    Ok(state)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementHistogram {
    pub shots: u64,
    pub counts: BTreeMap<Bitstring, u64>,
}

impl MeasurementHistogram {
    /// Highest count; ties go to the lexicographically smallest string.
    pub fn most_frequent(&self) -> Option<Bitstring> {
        let mut best: Option<(Bitstring, u64)> = None;
        for (&bits, &count) in &self.counts {
            if best.map_or(true, |(_, c)| count > c) {
                best = Some((bits, count));
            }
        }
        best.map(|(b, _)| b)
    }
}

/// Draws `shots` basis states from `|amp|²` by sweeping sorted uniforms over
/// the cumulative distribution.
pub fn sample<R: Rng + ?Sized>(state: &StateVector, shots: u64, rng: &mut R) -> MeasurementHistogram {
    let total = state.norm_sqr();
    let mut draws: Vec<f64> = (0..shots).map(|_| rng.gen::<f64>() * total).collect();
    draws.sort_unstable_by(f64::total_cmp);
    let last_nonzero = state
        .amps
        .iter()
        .rposition(|a| a.norm_sqr() > 0.0)
        .unwrap_or(0);

    let mut counts = BTreeMap::new();
    let mut cumulative = 0.0;
    let mut x = 0usize;
    let mut k = 0usize;
    while k < draws.len() {
        while x < last_nonzero && cumulative + state.amps[x].norm_sqr() <= draws[k] {
            cumulative += state.amps[x].norm_sqr();
            x += 1;
        }
        let upper = cumulative + state.amps[x].norm_sqr();
        let start = k;
        while k < draws.len() && (draws[k] < upper || x == last_nonzero) {
            k += 1;
        }
        *counts.entry(Bitstring::new(x as u64, state.n)).or_insert(0) += (k - start) as u64;
    }
    MeasurementHistogram { shots, counts }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaoaResult {
    pub most_frequent: Bitstring,
    /// Mean energy over the sampled shots.
    pub expectation: f64,
    pub histogram: MeasurementHistogram,
    pub exact_expectation: f64,
}

/// One circuit on tabulated energies: evolve under the standardized cost,
/// then measure.
pub fn run_on_energies<R: Rng + ?Sized>(
    energies: &[f64],
    schedule: &QaoaSchedule,
    shots: u64,
    rng: &mut R,
) -> Result<QaoaResult> {
    if shots == 0 {
        return Err(QaoaError::Inconsistent("at least one shot is required".into()));
    }
    let state = evolve(&cost_table(energies), schedule)?;
    let exact_expectation = state.expectation(energies);
    let histogram = sample(&state, shots, rng);
    let expectation = histogram
        .counts
        .iter()
        .map(|(b, &c)| energies[b.index() as usize] * c as f64)
        .sum::<f64>()
        / shots as f64;
    let most_frequent = histogram
        .most_frequent()
        .expect("a histogram with shots has entries");
    Ok(QaoaResult {
        most_frequent,
        expectation,
        histogram,
        exact_expectation,
    })
}

pub fn run_circuit(qubo: &QuboProblem, schedule: &QaoaSchedule, shots: u64, seed: u64) -> Result<QaoaResult> {
    let n = qubo.n();
    if n == 0 || n > MAX_QUBITS {
        return Err(QaoaError::TooLarge { n, max: MAX_QUBITS });
    }
    let energies = qubo.energy_table()?;
    run_on_energies(&energies, schedule, shots, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Tuner {
    Flrs { delta_beta: f64, delta_gamma: f64 },
    LocalSearch,
}

impl Default for Tuner {
    fn default() -> Self {
        Tuner::Flrs {
            delta_beta: 1.0,
            delta_gamma: 1.0,
        }
    }
}

impl Tuner {
    pub fn name(&self) -> &'static str {
        match self {
            Tuner::Flrs { .. } => "flrs",
            Tuner::LocalSearch => "local-search",
        }
    }
}

impl FromStr for Tuner {
    type Err = QaoaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "flrs" => Ok(Tuner::default()),
            "local-search" | "local_search" | "localsearch" => Ok(Tuner::LocalSearch),
            _ => Err(QaoaError::UnknownTuner(s.to_string())),
        }
    }
}

impl std::fmt::Display for Tuner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Chooses the angles for a circuit.
///
/// `Flrs` returns the fixed ramp without evaluating anything. `LocalSearch`
/// starts from a seeded random schedule in `[0, 2π)` and spends at most
/// `budget` exact-expectation evaluations on random restarts with coordinate
/// descent, keeping the best schedule seen.
pub fn fine_tune(qubo: &QuboProblem, p: usize, tuner: &Tuner, budget: usize, seed: u64) -> Result<QaoaSchedule> {
    match tuner {
        Tuner::Flrs { .. } => fine_tune_energies(&[], p, tuner, 0, &mut ChaCha8Rng::seed_from_u64(seed)),
        Tuner::LocalSearch => {
            let energies = if budget > 0 { qubo.energy_table()? } else { Vec::new() };
            fine_tune_energies(&energies, p, tuner, budget, &mut ChaCha8Rng::seed_from_u64(seed))
        }
    }
}

/// As [`fine_tune`], on tabulated energies and a caller-owned generator.
pub fn fine_tune_energies<R: Rng + ?Sized>(
    energies: &[f64],
    p: usize,
    tuner: &Tuner,
    budget: usize,
    rng: &mut R,
) -> Result<QaoaSchedule> {
    if let Tuner::Flrs {
        delta_beta,
        delta_gamma,
    } = tuner
    {
        return flrs_schedule(p, *delta_beta, *delta_gamma);
    }
    if p < 1 {
        return Err(QaoaError::InvalidSchedule("at least one layer is required".into()));
    }
    let random_angles = |rng: &mut R| -> Vec<f64> {
        (0..2 * p)
            .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
            .collect()
    };
    let to_schedule = |x: &[f64]| QaoaSchedule::new(x[..p].to_vec(), x[p..].to_vec());

    let mut start = random_angles(rng);
    if budget == 0 {
        return to_schedule(&start);
    }
    let table = cost_table(energies);
    let objective = |x: &[f64]| -> Result<f64> {
        Ok(evolve(&table, &to_schedule(x)?)?.expectation(energies))
    };

    let mut best_x = start.clone();
    let mut best_f = f64::INFINITY;
    let mut used = 0usize;
    'restarts: while used < budget {
        let mut x = start;
        let mut fx = objective(&x)?;
        used += 1;
        if fx < best_f {
            best_f = fx;
            best_x = x.clone();
        }
        let mut step = 0.5;
        while step >= 1e-3 {
            let mut improved = false;
            for k in 0..2 * p {
                for dir in [1.0, -1.0] {
                    if used >= budget {
                        break 'restarts;
                    }
                    let mut trial = x.clone();
                    trial[k] += dir * step;
                    let ft = objective(&trial)?;
                    used += 1;
                    if ft < fx {
                        x = trial;
                        fx = ft;
                        improved = true;
                        if fx < best_f {
                            best_f = fx;
                            best_x = x.clone();
                        }
                        break;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        start = random_angles(rng);
    }
    to_schedule(&best_x)
}

/// Absolute percentage error, clamped to 100.
pub fn mape(observed: f64, reference: f64) -> Result<f64> {
    if reference == 0.0 || !reference.is_finite() {
        return Err(QaoaError::UndefinedMetric);
    }
    let pct = ((observed - reference) / reference).abs() * 100.0;
    Ok(if pct.is_nan() { 100.0 } else { pct.min(100.0) })
}
