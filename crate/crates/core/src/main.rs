use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use fedga::cli::{read_config, resolve_workers, run_experiment, Experiment, ExperimentConfig};

/// Local SGD experiments: Gaussian approximation, Berry-Esseen checks and
/// online attack detection.
#[derive(Parser, Debug)]
#[command(name = "fedga", version)]
struct Args {
    /// berry_esseen | phase_transition | qq | ablate_tau | ablate_rho |
    /// ablate_gamma | detect_power | theory_checks
    experiment: String,
    /// JSON object or key=value file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a parameter; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Required unless the config provides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to FEDGA_WORKERS or the core count.
    #[arg(long)]
    workers: Option<usize>,
}

fn run(args: Args) -> fedga::Result<()> {
    let experiment: Experiment = args.experiment.parse()?;
    let text = read_config(args.config.as_deref())?;
    let workers = resolve_workers(args.workers)?;
    let cfg = ExperimentConfig::build(experiment, text.as_deref(), &args.set, args.seed, workers, args.out)?;
    let out = run_experiment(&cfg)?;
    for (name, _) in &out.files {
        println!("{}", cfg.out.join(name).display());
    }
    println!("{}", cfg.out.join("summary.json").display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
