//! Binary objective for one design iteration.
//!
//! Each active rod's updater is an on-off sum of candidate digits
//! `α_e = Σ_m r_m q_{e,m}` and the volume slack is `S = Σ_c k_c q_c / Σ_c k_c`.
//! The objective is
//!
//! ```text
//! f(q) = −Σ_e α_e U_eᵀ K_e U_e + λ (Σ_e V_e(α_e) / V0 + S − 1)²
//! ```
//!
//! with displacements frozen from the last structural solve, so the stiffness
//! term is linear in `q` and the penalty is quadratic.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{lex_key, Bitstring};
use crate::fem::{FemSolution, TrussModel};
use crate::MAX_QUBITS;

#[derive(Debug, Error)]
pub enum EncodingError {
    #[error("invalid encoding configuration: {0}")]
    InvalidConfig(String),
    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),
    #[error("{n} qubits exceeds the limit of {max}")]
    TooLarge { n: usize, max: usize },
    #[error("malformed QUBO text at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, EncodingError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    /// Candidate digits `r`; one qubit per digit per rod.
    pub candidates: Vec<f64>,
    /// Slack digits `k`; one qubit each.
    pub slack_coefficients: Vec<f64>,
    /// Volume-penalty weight λ.
    pub lambda: f64,
    /// Upper bound θ on any updater.
    pub theta: f64,
    /// Range sampled when an updater decodes to exactly zero.
    pub epsilon_range: (f64, f64),
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            candidates: vec![0.1, 1.0],
            slack_coefficients: vec![2.0, 4.0],
            lambda: 0.5,
            theta: 1.1,
            epsilon_range: (1e-10, 2e-10),
        }
    }
}

impl EncodingConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(EncodingError::InvalidConfig(msg));
        if self.candidates.is_empty() {
            return bad("candidate vector is empty".into());
        }
        if self.candidates.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
            return bad(format!("candidates must be positive: {:?}", self.candidates));
        }
        let span: f64 = self.candidates.iter().sum();
        if span > self.theta * (1.0 + 1e-12) {
            return bad(format!(
                "candidate digits sum to {span}, above the updater bound θ = {}",
                self.theta
            ));
        }
        if self.slack_coefficients.is_empty()
            || self
                .slack_coefficients
                .iter()
                .any(|&k| !(k > 0.0) || !k.is_finite())
        {
            return bad(format!(
                "slack coefficients must be non-empty and positive: {:?}",
                self.slack_coefficients
            ));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("λ must be finite and non-negative, got {}", self.lambda));
        }
        let (lo, hi) = self.epsilon_range;
        if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
            return bad(format!("ε range must satisfy 0 < lo ≤ hi, got [{lo}, {hi}]"));
        }
        Ok(())
    }

    pub fn digits_per_rod(&self) -> usize {
        self.candidates.len()
    }

    fn slack_total(&self) -> f64 {
        self.slack_coefficients.iter().sum()
    }
}

/// Maps active rods' digits and the slack digits onto qubit indices.
///
/// Active rod at position `t` (ascending rod id) owns qubits
/// `t·M .. t·M + M` in candidate order; slack digits take the trailing indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableRegistry {
    rods: Vec<usize>,
    digits_per_rod: usize,
    slack_digits: usize,
}

impl VariableRegistry {
    pub fn new(active_rods: &[usize], config: &EncodingConfig) -> Self {
        let mut rods = active_rods.to_vec();
        rods.sort_unstable();
        rods.dedup();
        Self {
            rods,
            digits_per_rod: config.digits_per_rod(),
            slack_digits: config.slack_coefficients.len(),
        }
    }

    /// Registry for a bare QUBO with no structural meaning.
    pub fn plain(n: usize) -> Self {
        Self {
            rods: Vec::new(),
            digits_per_rod: 0,
            slack_digits: n,
        }
    }

    pub fn qubit_count(&self) -> usize {
        self.rods.len() * self.digits_per_rod + self.slack_digits
    }

    pub fn active_rods(&self) -> &[usize] {
        &self.rods
    }

    pub fn digits_per_rod(&self) -> usize {
        self.digits_per_rod
    }

    pub fn rod_qubit(&self, position: usize, digit: usize) -> usize {
        debug_assert!(position < self.rods.len() && digit < self.digits_per_rod);
        position * self.digits_per_rod + digit
    }

    /// Qubit for digit `digit` of rod id `rod`, if the rod is active.
    pub fn qubit_for(&self, rod: usize, digit: usize) -> Option<usize> {
        let position = self.rods.binary_search(&rod).ok()?;
        (digit < self.digits_per_rod).then(|| self.rod_qubit(position, digit))
    }

    pub fn slack_qubit(&self, digit: usize) -> usize {
        debug_assert!(digit < self.slack_digits);
        self.rods.len() * self.digits_per_rod + digit
    }

    pub fn slack_digits(&self) -> usize {
        self.slack_digits
    }
}

/// `constant + Σ_i linear_i q_i + Σ_{i<j} Q_ij q_i q_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuboProblem {
    pub constant: f64,
    pub linear: Vec<f64>,
    /// Row-major `n × n`, only `i < j` is populated.
    quadratic: Vec<f64>,
    pub registry: VariableRegistry,
}

impl QuboProblem {
    pub fn new(n: usize) -> Self {
        Self::with_registry(VariableRegistry::plain(n))
    }

    pub fn with_registry(registry: VariableRegistry) -> Self {
        let n = registry.qubit_count();
        Self {
            constant: 0.0,
            linear: vec![0.0; n],
            quadratic: vec![0.0; n * n],
            registry,
        }
    }

    pub fn n(&self) -> usize {
        self.linear.len()
    }

    pub fn add_linear(&mut self, i: usize, value: f64) {
        self.linear[i] += value;
    }

    /// Adds `value·q_i·q_j`; the diagonal folds into the linear part.
    pub fn add_quadratic(&mut self, i: usize, j: usize, value: f64) {
        if i == j {
            self.linear[i] += value;
        } else {
            let (a, b) = if i < j { (i, j) } else { (j, i) };
            let n = self.n();
            self.quadratic[a * n + b] += value;
        }
    }

    pub fn quadratic(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Less => self.quadratic[i * self.n() + j],
            std::cmp::Ordering::Greater => self.quadratic[j * self.n() + i],
            std::cmp::Ordering::Equal => 0.0,
        }
    }

    pub fn quadratic_terms(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.n();
        (0..n).flat_map(move |i| {
            (i + 1..n).filter_map(move |j| {
                let v = self.quadratic[i * n + j];
                (v != 0.0).then_some((i, j, v))
            })
        })
    }

    pub fn evaluate_index(&self, index: u64) -> f64 {
        let n = self.n();
        let mut energy = self.constant;
        for i in 0..n {
            if (index >> i) & 1 == 0 {
                continue;
            }
            energy += self.linear[i];
            let row = &self.quadratic[i * n..(i + 1) * n];
            for (j, q) in row.iter().enumerate().skip(i + 1) {
                if (index >> j) & 1 == 1 {
                    energy += q;
                }
            }
        }
        energy
    }

    pub fn evaluate(&self, bits: &Bitstring) -> f64 {
        debug_assert_eq!(bits.len(), self.n());
        self.evaluate_index(bits.index())
    }

    /// Energy of every basis index, built by doubling over the highest bit.
    pub fn energy_table(&self) -> Result<Vec<f64>> {
        let n = self.n();
        if n > MAX_QUBITS {
            return Err(EncodingError::TooLarge { n, max: MAX_QUBITS });
        }
        let mut table = vec![0.0; 1usize << n];
        table[0] = self.constant;
        let mut field = vec![0.0; (1usize << n) / 2];
        for h in 0..n {
            let half = 1usize << h;
            // field[x] = Σ_{j<h, x_j = 1} Q_jh
            field[0] = 0.0;
            for x in 1..half {
                let j = x.trailing_zeros() as usize;
                field[x] = field[x & (x - 1)] + self.quadratic[j * n + h];
            }
            let lin = self.linear[h];
            let (lower, upper) = table.split_at_mut(half);
            for ((dst, &src), &f) in upper[..half].iter_mut().zip(lower.iter()).zip(&field[..half]) {
                *dst = src + lin + f;
            }
        }
        Ok(table)
    }

    /// Plain-text listing for external solvers.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "n {}", self.n()).unwrap();
        writeln!(out, "constant {:e}", self.constant).unwrap();
        for (i, v) in self.linear.iter().enumerate() {
            writeln!(out, "linear {i} {v:e}").unwrap();
        }
        for (i, j, v) in self.quadratic_terms() {
            writeln!(out, "quad {i} {j} {v:e}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let err = |line: usize, message: String| EncodingError::Parse { line, message };
        let mut qubo: Option<QuboProblem> = None;
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let fields: Vec<&str> = raw.split_whitespace().collect();
            if fields.is_empty() || fields[0].starts_with('#') {
                continue;
            }
            let num = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| err(line, format!("bad number {s:?}")))
            };
            let idx = |s: &str, n: usize| -> Result<usize> {
                let i: usize = s.parse().map_err(|_| err(line, format!("bad index {s:?}")))?;
                if i >= n {
                    return Err(err(line, format!("index {i} out of range for n = {n}")));
                }
                Ok(i)
            };
            match (fields[0], fields.len()) {
                ("n", 2) => {
                    let n = fields[1]
                        .parse()
                        .map_err(|_| err(line, format!("bad size {:?}", fields[1])))?;
                    qubo = Some(QuboProblem::new(n));
                }
                (kind, _) => {
                    let q = qubo
                        .as_mut()
                        .ok_or_else(|| err(line, "size line `n` must come first".into()))?;
                    let n = q.n();
                    match (kind, fields.len()) {
                        ("constant", 2) => q.constant += num(fields[1])?,
                        ("linear", 3) => {
                            let i = idx(fields[1], n)?;
                            q.add_linear(i, num(fields[2])?);
                        }
                        ("quad", 4) => {
                            let i = idx(fields[1], n)?;
                            let j = idx(fields[2], n)?;
                            q.add_quadratic(i, j, num(fields[3])?);
                        }
                        _ => return Err(err(line, format!("unrecognized line {raw:?}"))),
                    }
                }
            }
        }
        qubo.ok_or_else(|| err(0, "missing `n` line".into()))
    }
}

/// Spin form under `z_j = 1 − 2 q_j`:
/// `offset + Σ h_j z_j + Σ_{i<j} J_ij z_i z_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct IsingHamiltonian {
    pub offset: f64,
    pub h: Vec<f64>,
    pub couplings: Vec<(usize, usize, f64)>,
}

impl IsingHamiltonian {
    pub fn energy_spins(&self, z: &[i8]) -> f64 {
        let mut e = self.offset;
        for (hj, &zj) in self.h.iter().zip(z) {
            e += hj * zj as f64;
        }
        for &(i, j, w) in &self.couplings {
            e += w * (z[i] * z[j]) as f64;
        }
        e
    }

    /// Energy of the spin configuration matching basis index `index`
    /// (`q_j = 1` ↦ `z_j = −1`).
    pub fn energy_index(&self, index: u64) -> f64 {
        let z: Vec<i8> = (0..self.h.len())
            .map(|j| if (index >> j) & 1 == 1 { -1 } else { 1 })
            .collect();
        self.energy_spins(&z)
    }
}

pub fn qubo_to_ising(qubo: &QuboProblem) -> IsingHamiltonian {
    let n = qubo.n();
    let mut offset = qubo.constant;
    let mut h = vec![0.0; n];
    let mut couplings = Vec::new();
    for (i, &l) in qubo.linear.iter().enumerate() {
        offset += 0.5 * l;
        h[i] -= 0.5 * l;
    }
    for (i, j, q) in qubo.quadratic_terms() {
        offset += 0.25 * q;
        h[i] -= 0.25 * q;
        h[j] -= 0.25 * q;
        couplings.push((i, j, 0.25 * q));
    }
    IsingHamiltonian {
        offset,
        h,
        couplings,
    }
}

/// Builds the iteration objective over the rods in `registry`.
///
/// Rods outside the registry are frozen: their volume enters the penalty as a
/// constant and they contribute nothing to the stiffness term.
pub fn build_qubo(
    model: &TrussModel,
    fem: &FemSolution,
    areas: &[f64],
    config: &EncodingConfig,
    volume_budget: f64,
    registry: &VariableRegistry,
) -> Result<QuboProblem> {
    config.validate()?;
    if !(volume_budget > 0.0) || !volume_budget.is_finite() {
        return Err(EncodingError::InvalidConfig(format!(
            "volume budget must be positive, got {volume_budget}"
        )));
    }
    let rods = model.rods.len();
    if areas.len() != rods || fem.rod_strain_energy.len() != rods || fem.rod_volume.len() != rods {
        return Err(EncodingError::Inconsistent(format!(
            "model has {rods} rods, areas {} and solution {}",
            areas.len(),
            fem.rod_strain_energy.len()
        )));
    }
    if registry.digits_per_rod() != config.digits_per_rod()
        || registry.slack_digits() != config.slack_coefficients.len()
    {
        return Err(EncodingError::Inconsistent(
            "registry layout does not match the encoding configuration".into(),
        ));
    }
    for (e, rod) in model.rods.iter().enumerate() {
        let expected = areas[e] * rod.length();
        if (fem.rod_volume[e] - expected).abs() > 1e-9 * expected.abs() {
            return Err(EncodingError::Inconsistent(format!(
                "solution was computed for a different area on rod {e}"
            )));
        }
    }
    if let Some(&bad) = registry.active_rods().iter().find(|&&e| e >= rods) {
        return Err(EncodingError::Inconsistent(format!(
            "registry references rod {bad} but the model has {rods} rods"
        )));
    }

    let mut qubo = QuboProblem::with_registry(registry.clone());
    let active = registry.active_rods();

    // Penalty argument g(q) = Σ_v c_v q_v + d.
    let mut coeffs: Vec<(usize, f64)> = Vec::with_capacity(qubo.n());
    for (position, &e) in active.iter().enumerate() {
        let share = fem.rod_volume[e] / volume_budget;
        for (m, &r) in config.candidates.iter().enumerate() {
            let q = registry.rod_qubit(position, m);
            qubo.add_linear(q, -r * fem.rod_strain_energy[e]);
            coeffs.push((q, r * share));
        }
    }
    let slack_total = config.slack_total();
    for (c, &k) in config.slack_coefficients.iter().enumerate() {
        coeffs.push((registry.slack_qubit(c), k / slack_total));
    }
    let frozen_share: f64 = (0..rods)
        .filter(|e| active.binary_search(e).is_err())
        .map(|e| fem.rod_volume[e] / volume_budget)
        .sum();
    let d = frozen_share - 1.0;

    let lambda = config.lambda;
    qubo.constant += lambda * d * d;
    for (a, &(qa, ca)) in coeffs.iter().enumerate() {
        qubo.add_linear(qa, lambda * (ca * ca + 2.0 * d * ca));
        for &(qb, cb) in &coeffs[a + 1..] {
            qubo.add_quadratic(qa, qb, 2.0 * lambda * ca * cb);
        }
    }
    Ok(qubo)
}

/// Raw on-off sums `Σ_m r_m q_{e,m}` per registry rod, without ε replacement.
pub fn raw_updaters(bits: &Bitstring, registry: &VariableRegistry, config: &EncodingConfig) -> Vec<f64> {
    debug_assert_eq!(bits.len(), registry.qubit_count());
    (0..registry.active_rods().len())
        .map(|position| {
            config
                .candidates
                .iter()
                .enumerate()
                .filter(|&(m, _)| bits.bit(registry.rod_qubit(position, m)))
                .map(|(_, r)| r)
                .sum()
        })
        .collect()
}

/// Updaters per registry rod, in registry order. A zero sum is replaced by a
/// fresh draw from the ε range.
pub fn decode_updaters<R: Rng + ?Sized>(
    bits: &Bitstring,
    registry: &VariableRegistry,
    config: &EncodingConfig,
    rng: &mut R,
) -> Vec<f64> {
    let (lo, hi) = config.epsilon_range;
    raw_updaters(bits, registry, config)
        .into_iter()
        .map(|alpha| {
            if alpha == 0.0 {
                if hi > lo {
                    rng.gen_range(lo..=hi)
                } else {
                    lo
                }
            } else {
                alpha
            }
        })
        .collect()
}

pub fn decode_slack(bits: &Bitstring, registry: &VariableRegistry, config: &EncodingConfig) -> f64 {
    let total = config.slack_total();
    config
        .slack_coefficients
        .iter()
        .enumerate()
        .filter(|&(c, _)| bits.bit(registry.slack_qubit(c)))
        .map(|(_, k)| k / total)
        .sum()
}

/// Inverse of the decoders: picks, per rod, the digit subset whose sum equals
/// the requested updater.
pub fn encode_updaters(
    updaters: &[f64],
    slack_bits: &[bool],
    registry: &VariableRegistry,
    config: &EncodingConfig,
) -> Result<Bitstring> {
    let rods = registry.active_rods().len();
    if updaters.len() != rods || slack_bits.len() != registry.slack_digits() {
        return Err(EncodingError::Inconsistent(format!(
            "expected {rods} updaters and {} slack bits",
            registry.slack_digits()
        )));
    }
    let m = config.digits_per_rod();
    let mut bits = vec![false; registry.qubit_count()];
    for (position, &alpha) in updaters.iter().enumerate() {
        let subset = (0u32..1 << m)
            .find(|mask| {
                let sum: f64 = (0..m)
                    .filter(|d| mask >> d & 1 == 1)
                    .map(|d| config.candidates[d])
                    .sum();
                (sum - alpha).abs() <= 1e-12
            })
            .ok_or_else(|| {
                EncodingError::Inconsistent(format!("updater {alpha} is not representable"))
            })?;
        for d in 0..m {
            bits[registry.rod_qubit(position, d)] = subset >> d & 1 == 1;
        }
    }
    for (c, &b) in slack_bits.iter().enumerate() {
        bits[registry.slack_qubit(c)] = b;
    }
    Ok(Bitstring::from_bits(&bits))
}

/// Exact minimizer by exhaustive Gray-code enumeration. Ties resolve to the
/// lexicographically smallest bitstring.
pub fn brute_force_minimum(qubo: &QuboProblem) -> Result<(Bitstring, f64)> {
    let n = qubo.n();
    if n > MAX_QUBITS {
        return Err(EncodingError::TooLarge { n, max: MAX_QUBITS });
    }
    // Tolerance for ties and for incremental drift between exact resyncs.
    let scale = qubo.constant.abs()
        + qubo.linear.iter().map(|v| v.abs()).sum::<f64>()
        + qubo.quadratic_terms().map(|(_, _, v)| v.abs()).sum::<f64>();
    let tie = 1e-12 * scale.max(1e-300);

    let mut index = 0u64;
    let mut energy = qubo.constant;
    let mut best_index = 0u64;
    let mut best = energy;
    for step in 1u64..(1u64 << n) {
        let j = step.trailing_zeros() as usize;
        let bit_on = (index >> j) & 1 == 1;
        let mut delta = qubo.linear[j];
        for k in 0..n {
            if k != j && (index >> k) & 1 == 1 {
                delta += qubo.quadratic(j, k);
            }
        }
        index ^= 1 << j;
        energy += if bit_on { -delta } else { delta };
        if step % 4096 == 0 {
            energy = qubo.evaluate_index(index);
        }
        if energy < best - tie
            || (energy <= best + tie && lex_key(index, n) < lex_key(best_index, n))
        {
            let exact = qubo.evaluate_index(index);
            if exact < best - tie
                || (exact <= best + tie && lex_key(index, n) < lex_key(best_index, n))
            {
                best = exact;
                best_index = index;
            }
            energy = exact;
        }
    }
    Ok((Bitstring::new(best_index, n), qubo.evaluate_index(best_index)))
}
