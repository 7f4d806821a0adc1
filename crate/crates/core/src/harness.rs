//! Run modes behind the command-line tool and the files they write.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::bits::Bitstring;
use crate::design::{
    iteration_qubo, oc_reference, run_observed, volume_ratio, DesignError, DesignState, LoopConfig,
    OcConfig, OcResult, RunOutcome, Termination,
};
use crate::encoding::brute_force_minimum;
use crate::fem::{assemble_and_solve, FemError, TrussModel};
use crate::qaoa::{mape, Tuner};
use crate::MAX_QUBITS;

pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_BUDGET_EXHAUSTED: i32 = 2;
pub const EXIT_STRUCTURAL_FAILURE: i32 = 3;
pub const EXIT_INPUT_ERROR: i32 = 4;
/// Anything outside the contract above, e.g. an unwritable output directory.
pub const EXIT_INTERNAL: i32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Model(#[from] FemError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error("failed to write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Input(_) | HarnessError::Model(_) => EXIT_INPUT_ERROR,
            HarnessError::Design(DesignError::InvalidConfig(_) | DesignError::Encoding(_)) => {
                EXIT_INPUT_ERROR
            }
            HarnessError::Design(DesignError::StructuralFailure { .. }) => EXIT_STRUCTURAL_FAILURE,
            _ => EXIT_INTERNAL,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Optimize,
    CompareTuners,
    OracleCheck,
    OcOnly,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Optimize => "optimize",
            Mode::CompareTuners => "compare-tuners",
            Mode::OracleCheck => "oracle-check",
            Mode::OcOnly => "oc-only",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "optimize" => Ok(Mode::Optimize),
            "compare-tuners" => Ok(Mode::CompareTuners),
            "oracle-check" => Ok(Mode::OracleCheck),
            "oc-only" => Ok(Mode::OcOnly),
            _ => Err(format!(
                "unknown mode {s:?} (expected optimize, compare-tuners, oracle-check or oc-only)"
            )),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunManifest {
    pub model_path: PathBuf,
    pub mode: Mode,
    pub config: LoopConfig,
    pub repetitions: usize,
    /// `None` picks `runs/<unix-seconds>-<mode>/`.
    pub out_dir: Option<PathBuf>,
}

impl RunManifest {
    pub fn new(model_path: impl Into<PathBuf>, mode: Mode) -> Self {
        Self {
            model_path: model_path.into(),
            mode,
            config: LoopConfig::default(),
            repetitions: 10,
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(HarnessError::Input("repetitions must be at least 1".into()));
        }
        self.config
            .validate()
            .map_err(|e| HarnessError::Input(e.to_string()))
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub mode: Mode,
    pub exit_code: i32,
    pub out_dir: PathBuf,
    pub summary: serde_json::Value,
}

/// Validates inputs, then runs the requested mode. Nothing is written unless
/// the model and configuration are valid.
pub fn execute(manifest: &RunManifest) -> Result<RunReport> {
    manifest.validate()?;
    let model = TrussModel::load(&manifest.model_path)?;
    if manifest.mode == Mode::OracleCheck {
        let encoding = &manifest.config.encoding;
        let n = model.rods.len() * encoding.digits_per_rod() + encoding.slack_coefficients.len();
        if n > MAX_QUBITS {
            return Err(HarnessError::Input(format!(
                "exhaustive checking needs {n} qubits, above the limit of {MAX_QUBITS}"
            )));
        }
    }
    let out_dir = prepare_out_dir(manifest)?;
    let started = Instant::now();
    let (exit_code, mut summary) = match manifest.mode {
        Mode::Optimize => cmd_optimize(&model, manifest, &out_dir)?,
        Mode::CompareTuners => cmd_compare_tuners(&model, manifest, &out_dir)?,
        Mode::OracleCheck => cmd_oracle_check(&model, manifest, &out_dir)?,
        Mode::OcOnly => cmd_oc_only(&model, &out_dir)?,
    };
    summary["mode"] = json!(manifest.mode.name());
    summary["model"] = json!(manifest.model_path.display().to_string());
    summary["exit_code"] = json!(exit_code);
    summary["wall_time_s"] = json!(started.elapsed().as_secs_f64());
    write_file(
        &out_dir.join("summary.json"),
        &(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"),
    )?;
    Ok(RunReport {
        mode: manifest.mode,
        exit_code,
        out_dir,
        summary,
    })
}

fn prepare_out_dir(manifest: &RunManifest) -> Result<PathBuf> {
    let dir = match &manifest.out_dir {
        Some(dir) => dir.clone(),
        None => {
            let secs = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            let base = PathBuf::from("runs").join(format!("{secs}-{}", manifest.mode.name()));
            let mut dir = base.clone();
            let mut k = 1;
            while dir.exists() {
                dir = PathBuf::from(format!("{}-{k}", base.display()));
                k += 1;
            }
            dir
        }
    };
    fs::create_dir_all(&dir).map_err(|source| HarnessError::Output {
        path: dir.clone(),
        source,
    })?;
    Ok(dir)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| HarnessError::Output {
        path: path.to_path_buf(),
        source,
    })
}

/// Fixed scientific notation with 15 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.14e}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => HarnessError::Output {
            path: path.to_path_buf(),
            source,
        },
        other => HarnessError::Input(format!("{other:?}")),
    })
}

fn termination_exit(t: &Termination) -> (i32, &'static str) {
    match t {
        Termination::Converged => (EXIT_CONVERGED, "converged"),
        Termination::BudgetExhausted => (EXIT_BUDGET_EXHAUSTED, "budget-exhausted"),
        Termination::StructuralFailure { .. } => (EXIT_STRUCTURAL_FAILURE, "structural-failure"),
    }
}

pub fn write_iterations_csv(path: &Path, state: &DesignState) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "iteration",
        "objective",
        "compliance",
        "volume_ratio",
        "qubits_used",
        "bitstring",
    ])?;
    for r in &state.records {
        w.write_record([
            r.iteration.to_string(),
            fmt_num(r.objective),
            fmt_num(r.compliance),
            fmt_num(r.volume_ratio),
            r.qubits_used.to_string(),
            r.bitstring.to_string(),
        ])?;
    }
    w.flush().map_err(|source| HarnessError::Output {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_areas_csv(path: &Path, model: &TrussModel, areas: &[f64], active: Option<&[bool]>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["rod", "node_i", "node_j", "length", "area", "area_ratio", "active"])?;
    for (e, rod) in model.rods.iter().enumerate() {
        w.write_record([
            e.to_string(),
            rod.node_i.to_string(),
            rod.node_j.to_string(),
            fmt_num(rod.length()),
            fmt_num(areas[e]),
            fmt_num(areas[e] / model.initial_area),
            active.map_or(String::new(), |a| a[e].to_string()),
        ])?;
    }
    w.flush().map_err(|source| HarnessError::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn final_metrics(model: &TrussModel, outcome: &RunOutcome) -> (Option<f64>, f64) {
    let compliance = assemble_and_solve(model, &outcome.state.areas)
        .ok()
        .map(|f| f.compliance);
    (compliance, volume_ratio(model, &outcome.state.areas))
}

fn retained(model: &TrussModel, areas: &[f64], fraction: f64) -> Vec<usize> {
    (0..areas.len())
        .filter(|&e| areas[e] >= fraction * model.initial_area)
        .collect()
}

fn outcome_summary(model: &TrussModel, config: &LoopConfig, outcome: &RunOutcome) -> serde_json::Value {
    let (compliance, ratio) = final_metrics(model, outcome);
    let (_, status) = termination_exit(&outcome.termination);
    let failure = match &outcome.termination {
        Termination::StructuralFailure { iteration, message } => {
            json!({ "iteration": iteration, "message": message })
        }
        _ => serde_json::Value::Null,
    };
    json!({
        "termination": status,
        "structural_failure": failure,
        "iterations": outcome.state.records.len(),
        "final_compliance": compliance,
        "final_volume_ratio": ratio,
        "retained_rods": retained(model, &outcome.state.areas, config.freeze_threshold),
        "frozen_at": outcome.state.frozen_at,
        "config": config,
    })
}

fn write_run_files(dir: &Path, model: &TrussModel, outcome: &RunOutcome) -> Result<()> {
    write_iterations_csv(&dir.join("iterations.csv"), &outcome.state)?;
    write_areas_csv(
        &dir.join("areas.csv"),
        model,
        &outcome.state.areas,
        Some(&outcome.state.active),
    )?;
    write_file(
        &dir.join("state.json"),
        &(serde_json::to_string_pretty(&outcome.state).expect("state serializes") + "\n"),
    )
}

fn cmd_optimize(model: &TrussModel, manifest: &RunManifest, dir: &Path) -> Result<(i32, serde_json::Value)> {
    let outcome = run_observed(model, &manifest.config, |_| Ok(()))?;
    write_run_files(dir, model, &outcome)?;
    let (code, _) = termination_exit(&outcome.termination);
    Ok((code, outcome_summary(model, &manifest.config, &outcome)))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TunerRun {
    pub tuner: String,
    pub repetition: usize,
    pub seed: u64,
    pub iterations: usize,
    pub termination: String,
    pub final_compliance: Option<f64>,
    pub final_volume_ratio: f64,
    pub mape: f64,
}

/// Seed of repetition `k`; spaced so per-iteration seeds never overlap.
pub fn repetition_seed(base: u64, k: usize) -> u64 {
    base.wrapping_add(1000 * k as u64)
}

/// Runs every tuner `repetitions` times and scores final compliance against
/// the reference.
pub fn compare_tuners(
    model: &TrussModel,
    config: &LoopConfig,
    repetitions: usize,
    reference: f64,
) -> Result<Vec<TunerRun>> {
    let flrs = match config.tuner {
        Tuner::Flrs { .. } => config.tuner.clone(),
        Tuner::LocalSearch => Tuner::default(),
    };
    let mut rows = Vec::new();
    for tuner in [flrs, Tuner::LocalSearch] {
        for k in 0..repetitions {
            let seed = repetition_seed(config.seed, k);
            let run_config = LoopConfig {
                tuner: tuner.clone(),
                seed,
                ..config.clone()
            };
            let outcome = run_observed(model, &run_config, |_| Ok(()))?;
            let (compliance, ratio) = final_metrics(model, &outcome);
            let (_, status) = termination_exit(&outcome.termination);
            let error = match compliance {
                Some(c) => mape(c, reference).unwrap_or(100.0),
                None => 100.0,
            };
            rows.push(TunerRun {
                tuner: tuner.name().to_string(),
                repetition: k,
                seed,
                iterations: outcome.state.records.len(),
                termination: status.to_string(),
                final_compliance: compliance,
                final_volume_ratio: ratio,
                mape: error,
            });
        }
    }
    Ok(rows)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m == 0 {
        f64::NAN
    } else if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

fn cmd_compare_tuners(
    model: &TrussModel,
    manifest: &RunManifest,
    dir: &Path,
) -> Result<(i32, serde_json::Value)> {
    let oc = oc_reference(model, &OcConfig::default())?;
    let rows = compare_tuners(model, &manifest.config, manifest.repetitions, oc.compliance)?;
    let path = dir.join("mape.csv");
    let mut w = csv_writer(&path)?;
    w.write_record([
        "tuner",
        "repetition",
        "seed",
        "iterations",
        "termination",
        "final_compliance",
        "final_volume_ratio",
        "mape",
    ])?;
    for r in &rows {
        w.write_record([
            r.tuner.clone(),
            r.repetition.to_string(),
            r.seed.to_string(),
            r.iterations.to_string(),
            r.termination.clone(),
            r.final_compliance.map_or("nan".to_string(), fmt_num),
            fmt_num(r.final_volume_ratio),
            fmt_num(r.mape),
        ])?;
    }
    w.flush().map_err(|source| HarnessError::Output { path, source })?;

    let medians: serde_json::Map<String, serde_json::Value> = ["flrs", "local-search"]
        .iter()
        .map(|name| {
            let v: Vec<f64> = rows.iter().filter(|r| r.tuner == *name).map(|r| r.mape).collect();
            (name.to_string(), json!(median(&v)))
        })
        .collect();
    Ok((
        EXIT_CONVERGED,
        json!({
            "reference_compliance": oc.compliance,
            "repetitions": manifest.repetitions,
            "median_mape": medians,
            "tuning_budget": manifest.config.tuning_budget,
            "config": manifest.config,
        }),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleRow {
    pub iteration: usize,
    pub qubits: usize,
    pub chosen: Bitstring,
    pub chosen_energy: f64,
    pub minimizer: Bitstring,
    pub min_energy: f64,
    pub max_energy: f64,
    pub gap_ratio: f64,
}

/// Runs the loop and, for every iteration, solves its binary objective
/// exhaustively next to the circuit's choice.
pub fn oracle_check(model: &TrussModel, config: &LoopConfig) -> Result<(RunOutcome, Vec<OracleRow>)> {
    let mut minima = Vec::new();
    let outcome = run_observed(model, config, |state| {
        let (_, qubo) = iteration_qubo(state, model, config)?;
        let (bits, energy) = brute_force_minimum(&qubo).map_err(DesignError::from)?;
        minima.push((bits, energy));
        Ok(())
    })?;
    let rows = outcome
        .state
        .records
        .iter()
        .zip(&minima)
        .map(|(r, &(minimizer, min_energy))| {
            let span = r.energy_max - min_energy;
            OracleRow {
                iteration: r.iteration,
                qubits: r.qubits_used,
                chosen: r.bitstring,
                chosen_energy: r.objective,
                minimizer,
                min_energy,
                max_energy: r.energy_max,
                gap_ratio: if span > 0.0 {
                    (r.objective - min_energy) / span
                } else {
                    0.0
                },
            }
        })
        .collect();
    Ok((outcome, rows))
}

fn cmd_oracle_check(model: &TrussModel, manifest: &RunManifest, dir: &Path) -> Result<(i32, serde_json::Value)> {
    let (outcome, rows) = oracle_check(model, &manifest.config)?;
    let path = dir.join("oracle.csv");
    let mut w = csv_writer(&path)?;
    w.write_record([
        "iteration",
        "qubits",
        "chosen_bitstring",
        "chosen_energy",
        "minimizer",
        "min_energy",
        "max_energy",
        "gap_ratio",
    ])?;
    for r in &rows {
        w.write_record([
            r.iteration.to_string(),
            r.qubits.to_string(),
            r.chosen.to_string(),
            fmt_num(r.chosen_energy),
            r.minimizer.to_string(),
            fmt_num(r.min_energy),
            fmt_num(r.max_energy),
            fmt_num(r.gap_ratio),
        ])?;
    }
    w.flush().map_err(|source| HarnessError::Output { path, source })?;
    write_run_files(dir, model, &outcome)?;

    let gaps: Vec<f64> = rows.iter().map(|r| r.gap_ratio).collect();
    let mean_gap = if gaps.is_empty() {
        0.0
    } else {
        gaps.iter().sum::<f64>() / gaps.len() as f64
    };
    let (code, _) = termination_exit(&outcome.termination);
    let mut summary = outcome_summary(model, &manifest.config, &outcome);
    summary["mean_gap_ratio"] = json!(mean_gap);
    summary["max_gap_ratio"] = json!(gaps.iter().cloned().fold(0.0, f64::max));
    Ok((code, summary))
}

fn cmd_oc_only(model: &TrussModel, dir: &Path) -> Result<(i32, serde_json::Value)> {
    let oc: OcResult = oc_reference(model, &OcConfig::default())?;
    write_areas_csv(&dir.join("areas.csv"), model, &oc.areas, None)?;
    Ok((
        EXIT_CONVERGED,
        json!({
            "reference_compliance": oc.compliance,
            "oc_iterations": oc.iterations,
            "final_volume_ratio": volume_ratio(model, &oc.areas),
            "retained_rods": oc.retained(model.initial_area, 0.01),
        }),
    ))
}
