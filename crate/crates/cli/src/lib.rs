//! Config-driven pipeline behind the `orderflow` binary.
//!
//! Every command is a pure function of the config, its input files and the
//! seed. Outputs land under one directory:
//!
//! ```text
//! <out>/build_report.json
//! <out>/datasets/<pair>.<variant>.ofds
//! <out>/models/<pair>.<variant>.{ckpt,manifest.txt,train_log.csv,summary.json,search.csv}
//! <out>/predictions/<model pair>.<variant>.<data pair>.<split>.{csv,daily.csv}
//! <out>/report/...
//! ```

pub mod checks;
pub mod config;
pub mod pipeline;
pub mod report;
pub mod svg;

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use orderflow::features::{Split, Variant};

pub use checks::{cmd_generate, cmd_gradcheck, cmd_selftest, SelftestLine};
pub use config::{Loaded, RunConfig};
pub use pipeline::{cmd_build, cmd_evaluate, cmd_train, BuildReport, EvalSummary, TrainSummary};
pub use report::{cmd_report, ReportSummary};

/// Pipeline failures callers may want to match on.
#[derive(Debug, Clone, PartialEq)]
pub enum PipelineError {
    VariantMismatch {
        checkpoint: Variant,
        dataset: Variant,
    },
    EmptySplit {
        pair: String,
        variant: Variant,
        split: Split,
    },
    MissingSeries(String),
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PipelineError::VariantMismatch {
                checkpoint,
                dataset,
            } => {
                write!(
                    f,
                    "checkpoint is a {checkpoint} model but the dataset is {dataset}"
                )
            }
            PipelineError::EmptySplit {
                pair,
                variant,
                split,
            } => {
                write!(
                    f,
                    "{pair} {variant}: the {} split has no samples",
                    split.as_str()
                )
            }
            PipelineError::MissingSeries(what) => write!(f, "missing prediction series: {what}"),
        }
    }
}

impl std::error::Error for PipelineError {}

/// A loaded config with command-line overrides applied.
#[derive(Debug, Clone)]
pub struct Run {
    pub loaded: Loaded,
    pub seed: u64,
    pub out: PathBuf,
}

impl Run {
    pub fn open(config: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<Run> {
        let loaded = Loaded::from_file(config)?;
        let seed = seed.unwrap_or(loaded.config.seed);
        let out = match out {
            Some(dir) => dir.to_path_buf(),
            None => loaded.resolve(&loaded.config.output),
        };
        Ok(Run { loaded, seed, out })
    }

    pub fn config(&self) -> &RunConfig {
        &self.loaded.config
    }

    /// The config as it is actually run: seed override applied.
    pub fn effective_config(&self) -> RunConfig {
        RunConfig {
            seed: self.seed,
            ..self.loaded.config.clone()
        }
    }

    pub fn pair_names(&self, filter: Option<&str>) -> Result<Vec<String>> {
        match filter {
            Some(name) => Ok(vec![self.config().pair(name)?.name.clone()]),
            None => Ok(self.config().pairs.iter().map(|p| p.name.clone()).collect()),
        }
    }

    pub fn variants(&self, filter: Option<Variant>) -> Result<Vec<Variant>> {
        match filter {
            Some(v) if self.config().variants.contains(&v) => Ok(vec![v]),
            Some(v) => bail!("variant {v} is not enabled in the config"),
            None => Ok(self.config().variants.clone()),
        }
    }

    pub fn dataset_path(&self, pair: &str, variant: Variant) -> PathBuf {
        self.out
            .join("datasets")
            .join(format!("{pair}.{variant}.ofds"))
    }

    /// Path prefix of a model's files; extensions are appended.
    pub fn model_stem(&self, pair: &str, variant: Variant) -> PathBuf {
        self.out.join("models").join(format!("{pair}.{variant}"))
    }

    pub fn prediction_stem(
        &self,
        model_pair: &str,
        variant: Variant,
        data_pair: &str,
        split: Split,
    ) -> PathBuf {
        self.out.join("predictions").join(format!(
            "{model_pair}.{variant}.{data_pair}.{}",
            split.as_str()
        ))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out.join("report")
    }
}

pub(crate) fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Finishes an in-memory CSV writer and stores it at `path`.
pub(crate) fn write_csv(path: &Path, w: csv::Writer<Vec<u8>>) -> Result<()> {
    let bytes = w.into_inner().context("flushing csv")?;
    write_file(path, &bytes)
}

pub(crate) fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}
