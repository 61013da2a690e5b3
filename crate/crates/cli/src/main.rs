//! Command-line interface for the calibration laboratory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use prefcal_cli::config::{Experiment, RunConfig};
use prefcal_cli::{experiments, report, RunnerError};

#[derive(Parser)]
#[command(
    name = "prefcal",
    version,
    about = "Calibration-aware preference optimization laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for run artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of ECE bins.
    #[arg(long)]
    bins: Option<usize>,
    /// Calibration weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// DPO temperature.
    #[arg(long)]
    beta: Option<f64>,
    /// Candidate counts for Confidence@k, comma separated.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single training leg (SFT, and the configured preference
    /// objective when applicable) and emit checkpoints plus metrics.
    Train(CommonArgs),
    /// The confidence-drift experiment over all method branches.
    Drift(CommonArgs),
    /// The mean-vs-median contamination experiment.
    Contaminate(CommonArgs),
    /// Confidence@k selection accuracy per method branch.
    Confatk(CommonArgs),
    /// Gradient-bound and finite-difference verification suite.
    Gradcheck(CommonArgs),
    /// Metric identity and inequality verification suite.
    MetricsSuite(CommonArgs),
    /// Compute calibration metrics for a prediction-record CSV.
    Ece {
        /// Prediction-record CSV
        /// (`confidence,correct,true_class,group_key,oracle_z`).
        input: PathBuf,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        /// Also write the reliability diagram CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render the summary tables of a finished run directory.
    Report {
        /// A run directory containing manifest.json.
        run: PathBuf,
    },
}

fn load_config(args: &CommonArgs, experiment: Experiment) -> Result<RunConfig, RunnerError> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    config.experiment = experiment;
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    if let Some(bins) = args.bins {
        config.bins = bins;
    }
    if let Some(lambda) = args.lambda {
        config.lambda = lambda;
    }
    if let Some(beta) = args.beta {
        config.beta = beta;
    }
    if let Some(k) = &args.k {
        config.confatk.k = k.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run_train(config: &RunConfig) -> Result<PathBuf, RunnerError> {
    use prefcal::numerics::fmt_f64;
    use prefcal_cli::rundir::RunDir;

    let mut dir = RunDir::create_named(config, "train")?;
    let seed = config.seeds[0];
    let run = dir.time("train", |_| experiments::run_seed(config, seed))?;
    let objective = serde_json::to_string(&config.train_objective)
        .expect("objective serialization cannot fail")
        .trim_matches('"')
        .to_string();
    let branch = run
        .branches
        .iter()
        .find(|b| b.name == objective)
        .or_else(|| run.branches.iter().find(|b| b.name == "sft"))
        .expect("branches are nonempty");
    dir.write(
        &format!("checkpoints/{}_seed{}.csv", branch.name, seed),
        branch.policy.to_checkpoint_csv().as_bytes(),
    )?;
    let (eval, reliability) = experiments::eval_branch(branch, &run, config.bins)?;
    dir.write(
        &format!("reports/reliability_{}_seed{}.csv", branch.name, seed),
        reliability.to_csv().as_bytes(),
    )?;
    let mut csv = String::from("method,seed,exact_accuracy,exact_ece,ece_binned,l1_risk\n");
    csv.push_str(&format!(
        "{},{},{},{},{},{}\n",
        eval.method,
        eval.seed,
        fmt_f64(eval.exact_accuracy),
        fmt_f64(eval.exact_ece),
        fmt_f64(eval.ece_binned),
        fmt_f64(eval.l1_risk),
    ));
    dir.write("reports/train.csv", csv.as_bytes())?;
    dir.finish(config)
}

fn run_ece(input: &PathBuf, bins: usize, out: Option<&PathBuf>) -> Result<(), RunnerError> {
    let text = std::fs::read_to_string(input)
        .map_err(|e| RunnerError::Config(format!("cannot read {}: {e}", input.display())))?;
    let records = prefcal::metrics::records_from_csv(&text).map_err(RunnerError::from)?;
    let summary = prefcal::metrics::calibration_summary(&records, bins)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("summary serialization cannot fail")
    );
    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        let reliability = prefcal::metrics::reliability_diagram(&records, bins)?;
        prefcal_cli::rundir::write_atomic(
            &out.join("reliability.csv"),
            reliability.to_csv().as_bytes(),
        )?;
        prefcal_cli::rundir::write_atomic(
            &out.join("summary.json"),
            serde_json::to_string_pretty(&summary)
                .expect("summary serialization cannot fail")
                .as_bytes(),
        )?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), RunnerError> {
    match cli.command {
        Command::Train(args) => {
            let config = load_config(&args, Experiment::Drift)?;
            let dir = run_train(&config)?;
            println!("run directory: {}", dir.display());
        }
        Command::Drift(args) => {
            let config = load_config(&args, Experiment::Drift)?;
            let dir = experiments::drift::run(&config)?;
            println!("run directory: {}", dir.display());
        }
        Command::Contaminate(args) => {
            let config = load_config(&args, Experiment::Contamination)?;
            let dir = experiments::contamination::run(&config)?;
            println!("run directory: {}", dir.display());
        }
        Command::Confatk(args) => {
            let config = load_config(&args, Experiment::ConfatK)?;
            let dir = experiments::confatk::run(&config)?;
            println!("run directory: {}", dir.display());
        }
        Command::Gradcheck(args) => {
            let config = load_config(&args, Experiment::Gradcheck)?;
            let dir = experiments::gradcheck::run(&config)?;
            println!("run directory: {}", dir.display());
        }
        Command::MetricsSuite(args) => {
            let config = load_config(&args, Experiment::MetricsSuite)?;
            let dir = experiments::metrics_suite::run(&config)?;
            println!("run directory: {}", dir.display());
        }
        Command::Ece { input, bins, out } => run_ece(&input, bins, out.as_ref())?,
        Command::Report { run } => {
            print!("{}", report::render_run(&run)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
