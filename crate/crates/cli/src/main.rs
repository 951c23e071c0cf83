use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand, ValueEnum};

use orderflow::features::{Split, Variant};
use orderflow_cli::{checks, cmd_build, cmd_evaluate, cmd_report, cmd_train, Run};

#[derive(Parser)]
#[command(
    name = "orderflow",
    version,
    about = "Order book replay, mid-price datasets, LSTM training and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Orderflow,
    Bench1,
    Bench2,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Orderflow => Variant::OrderFlow,
            VariantArg::Bench1 => Variant::Bench1,
            VariantArg::Bench2 => Variant::Bench2,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(clap::Args)]
struct RunArgs {
    /// Run config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn open(&self) -> Result<Run> {
        Run::open(&self.config, self.seed, self.out.as_deref())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic event stream.
    Generate {
        /// Generator config (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        /// Output .ofr file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay streams into datasets.
    Build {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        pair: Option<String>,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
    },
    /// Fit models with early stopping.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        pair: Option<String>,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
    },
    /// Predict a split with trained models.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Pair the model was trained on.
        #[arg(long)]
        pair: Option<String>,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        /// Pair whose data is scored (default: every pair).
        #[arg(long)]
        test_pair: Option<String>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Tables and figures from prediction sets.
    Report {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Finite-difference gradient verification.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Oracle equivalence checks.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, seed, out } => {
            let n = checks::cmd_generate(config.as_deref(), seed, &out)?;
            println!("wrote {n} events to {}", out.display());
        }
        Command::Build { run, pair, variant } => {
            let r = run.open()?;
            let report = cmd_build(&r, pair.as_deref(), variant.map(Into::into))?;
            for d in &report.datasets {
                println!(
                    "{} {}: train {} validation {} test {} dropped {}",
                    d.pair,
                    d.variant,
                    d.counts.train,
                    d.counts.validation,
                    d.counts.test,
                    d.counts.dropped
                );
            }
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Train { run, pair, variant } => {
            let r = run.open()?;
            for s in cmd_train(&r, pair.as_deref(), variant.map(Into::into))? {
                println!(
                    "{} {}: best epoch {} of {} val loss {} val mcc {}",
                    s.pair, s.variant, s.best_epoch, s.epochs_run, s.best_val_loss, s.best_val_mcc
                );
            }
        }
        Command::Evaluate {
            run,
            pair,
            variant,
            test_pair,
            split,
        } => {
            let r = run.open()?;
            for e in cmd_evaluate(
                &r,
                pair.as_deref(),
                variant.map(Into::into),
                test_pair.as_deref(),
                split.into(),
            )? {
                println!(
                    "{} {} on {} ({}): {} samples over {} days, mcc {}",
                    e.model_pair,
                    e.variant,
                    e.data_pair,
                    e.split.as_str(),
                    e.samples,
                    e.days,
                    e.mcc
                );
            }
        }
        Command::Report { run, split } => {
            let r = run.open()?;
            let s = cmd_report(&r, split.into())?;
            println!("{} series; report in {}", s.series, s.dir.display());
        }
        Command::Gradcheck { seed, out } => {
            let path = checks::cmd_gradcheck(seed, &out)?;
            println!("all gradient checks passed; details in {}", path.display());
        }
        Command::Selftest { seed } => {
            let lines = checks::cmd_selftest(seed)?;
            for l in &lines {
                println!(
                    "[{}] {}: {}",
                    if l.pass { "PASS" } else { "FAIL" },
                    l.name,
                    l.detail
                );
            }
            if lines.iter().any(|l| !l.pass) {
                bail!("self-test failed");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
