use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rare_quant::calibration::CalibrationMethod;
use rare_quant::cli::{self, CliError, RunConfig};
use rare_quant::ensemble::EstimatorKind;

#[derive(Debug, Parser)]
#[command(name = "rare-quant", version, about = "Estimate rare positive counts with calibrated classifier ensembles")]
struct Args {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum KindArg {
    LabelCount,
    RawProbSum,
    CalibratedSum,
    EnsembleCalibrated,
    All,
}

impl KindArg {
    fn kinds(self) -> Vec<EstimatorKind> {
        match self {
            KindArg::LabelCount => vec![EstimatorKind::LabelCount],
            KindArg::RawProbSum => vec![EstimatorKind::RawProbSum],
            KindArg::CalibratedSum => vec![EstimatorKind::CalibratedSum],
            KindArg::EnsembleCalibrated => vec![EstimatorKind::EnsembleCalibrated],
            KindArg::All => EstimatorKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Em,
    Bayes,
}

impl From<MethodArg> for CalibrationMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Em => CalibrationMethod::EmMl,
            MethodArg::Bayes => CalibrationMethod::BayesPosteriorMean,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic training corpus, target corpus and truth sidecar.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Corpus seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the single model and the ensemble into a bundle file.
    Train {
        /// Labeled JSONL corpus.
        #[arg(long)]
        corpus: PathBuf,
        /// Bundle file to write.
        #[arg(long)]
        out: PathBuf,
        /// Master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Ensemble size.
        #[arg(long)]
        models: Option<usize>,
    },
    /// Estimate the positive count of an unlabeled target corpus.
    Estimate {
        #[arg(long)]
        bundle: PathBuf,
        /// Unlabeled JSONL target corpus.
        #[arg(long)]
        target: PathBuf,
        /// Optional ground-truth sidecar; enables bias and accuracy columns.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        kind: KindArg,
        /// Shorthand for `--kind all`.
        #[arg(long, conflicts_with = "kind")]
        all: bool,
        /// Prevalence estimator; defaults to the configured one.
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        /// Report file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize, train and estimate over the configured seeds.
    Experiment {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Run a single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        models: Option<usize>,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
    },
}

fn with_models(mut cfg: RunConfig, models: Option<usize>) -> Result<RunConfig, CliError> {
    if let Some(m) = models {
        cfg.ensemble.models = m;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn run(args: Args) -> Result<(), CliError> {
    let cfg = cli::load_config(args.config.as_deref())?;
    match args.command {
        Command::Synth { out, seed } => {
            let mut cfg = cfg;
            if let Some(s) = seed {
                cfg.synth.seed = s;
            }
            let s = cli::cmd_synth(&cfg, &out)?;
            println!(
                "train  {} docs, {} positive -> {}",
                s.train_size,
                s.train_positives,
                s.train_path.display()
            );
            println!("target {} docs -> {}", s.target_size, s.target_path.display());
            println!("truth  {} positive -> {}", s.target_positives, s.truth_path.display());
        }
        Command::Train { corpus, out, seed, models } => {
            let mut cfg = with_models(cfg, models)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            let bundle = cli::cmd_train(&corpus, &cfg, &out)?;
            println!("single model  weight {:.4}", bundle.single_model.weight);
            for (i, m) in bundle.ensemble.members.iter().enumerate() {
                println!("member {i:<2} seed {:>20}  weight {:.4}", m.seed, m.weight);
            }
            println!("bundle -> {}", out.display());
        }
        Command::Estimate { bundle, target, truth, kind, all, method, out } => {
            let kind = if all { KindArg::All } else { kind };
            let method = method.map_or(cfg.ensemble.method, Into::into);
            let report = cli::cmd_estimate(&bundle, &target, &kind.kinds(), method, truth.as_deref(), &out)?;
            for row in &report.rows {
                match row.bias {
                    Some(b) => println!("{:<20} est_pos {:>12.3}  bias {:+.5}", row.kind, row.est_pos, b),
                    None => println!("{:<20} est_pos {:>12.3}", row.kind, row.est_pos),
                }
            }
            println!("report -> {}", out.display());
        }
        Command::Experiment { out, seed, models, method } => {
            let mut cfg = with_models(cfg, models)?;
            if let Some(s) = seed {
                cfg.experiment.seeds = vec![s];
            }
            if let Some(m) = method {
                cfg.ensemble.method = m.into();
            }
            let report = cli::cmd_experiment(&cfg, &out)?;
            for s in &report.summary {
                println!("{:<20} median bias {:+.5}  median |bias| {:.5}", s.kind, s.median_bias, s.median_abs_bias);
            }
            let o = &report.ordering;
            println!(
                "ordering: median {}  strict in {}/{} seeds",
                o.median_ordering_holds, o.seeds_with_strict_ordering, o.seeds_total
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rare-quant: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
