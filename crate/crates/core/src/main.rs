use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use truss_qaoa::design::LoopConfig;
use truss_qaoa::encoding::EncodingConfig;
use truss_qaoa::harness::{execute, Mode, RunManifest};
use truss_qaoa::qaoa::Tuner;

/// Truss sizing driven by fixed-schedule QAOA.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    /// Truss model (JSON).
    #[arg(long, env = "TRUSS_QAOA_MODEL")]
    model: PathBuf,
    /// optimize, compare-tuners, oracle-check or oc-only.
    #[arg(long, env = "TRUSS_QAOA_MODE", default_value = "optimize")]
    mode: Mode,
    /// Circuit layers p.
    #[arg(long, env = "TRUSS_QAOA_LAYERS", default_value_t = 6)]
    layers: usize,
    /// Volume-penalty weight.
    #[arg(long, env = "TRUSS_QAOA_LAMBDA", default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, env = "TRUSS_QAOA_SHOTS", default_value_t = 100_000)]
    shots: u64,
    #[arg(long, env = "TRUSS_QAOA_DELTA_BETA", default_value_t = 1.0)]
    delta_beta: f64,
    #[arg(long, env = "TRUSS_QAOA_DELTA_GAMMA", default_value_t = 1.0)]
    delta_gamma: f64,
    #[arg(long, env = "TRUSS_QAOA_MAX_ITERS", default_value_t = 50)]
    max_iters: usize,
    #[arg(long, env = "TRUSS_QAOA_SEED", default_value_t = 0)]
    seed: u64,
    /// flrs or local-search.
    #[arg(long, env = "TRUSS_QAOA_TUNER", default_value = "flrs")]
    tuner: String,
    /// Runs per tuner in compare-tuners mode.
    #[arg(long, env = "TRUSS_QAOA_REPETITIONS", default_value_t = 10)]
    repetitions: usize,
    /// Expectation evaluations the local-search tuner may spend per iteration.
    #[arg(long, env = "TRUSS_QAOA_BUDGET", default_value_t = 0)]
    budget: usize,
    /// Output directory; defaults to runs/<unix-seconds>-<mode>/.
    #[arg(long, env = "TRUSS_QAOA_OUT")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Keep code 2 free for budget-exhausted runs.
            return if e.use_stderr() {
                ExitCode::from(4)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let tuner = match cli.tuner.parse::<Tuner>() {
        Ok(Tuner::Flrs { .. }) => Tuner::Flrs {
            delta_beta: cli.delta_beta,
            delta_gamma: cli.delta_gamma,
        },
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(4);
        }
    };
    let manifest = RunManifest {
        model_path: cli.model,
        mode: cli.mode,
        config: LoopConfig {
            layers: cli.layers,
            encoding: EncodingConfig::with_lambda(cli.lambda),
            shots: cli.shots,
            max_iterations: cli.max_iters,
            seed: cli.seed,
            tuner,
            tuning_budget: cli.budget,
            ..LoopConfig::default()
        },
        repetitions: cli.repetitions,
        out_dir: cli.out,
    };
    match execute(&manifest) {
        Ok(report) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&report.summary).expect("summary serializes")
            );
            eprintln!("wrote {}", report.out_dir.display());
            ExitCode::from(report.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
