use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use orderflow::features::{SplitRanges, TimeRange, Variant, WarmUp, DEFAULT_DEPTH, DEFAULT_WINDOW};
use orderflow::net::{Hyper, SearchSpace};

pub const CONFIG_VERSION: u32 = 1;

/// One currency pair's event stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairInput {
    pub name: String,
    /// Relative paths are resolved against the config file's directory.
    pub path: PathBuf,
}

/// UTC calendar dates, `end` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    fn to_range(self) -> TimeRange {
        let ms = |d: NaiveDate| {
            d.and_hms_opt(0, 0, 0)
                .expect("midnight")
                .and_utc()
                .timestamp_millis()
        };
        TimeRange::new(ms(self.start), ms(self.end))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitDates {
    pub train: DateRange,
    pub validation: DateRange,
    pub test: DateRange,
}

impl SplitDates {
    pub fn ranges(&self) -> SplitRanges {
        SplitRanges {
            train: self.train.to_range(),
            validation: self.validation.to_range(),
            test: self.test.to_range(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    #[serde(default)]
    pub space: SearchSpace,
    pub budget: usize,
}

fn default_tick() -> f64 {
    0.01
}
fn default_window() -> usize {
    DEFAULT_WINDOW
}
fn default_depth() -> usize {
    DEFAULT_DEPTH
}
fn default_warm_up() -> WarmUp {
    WarmUp::Events(1000)
}
fn default_output() -> PathBuf {
    PathBuf::from("run")
}
fn default_variants() -> Vec<Variant> {
    Variant::ALL.to_vec()
}

/// The whole run, as one JSON document. Serializing it back gives every
/// default explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    #[serde(default = "default_tick")]
    pub tick_size: f64,
    pub pairs: Vec<PairInput>,
    #[serde(default = "default_warm_up")]
    pub warm_up: WarmUp,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    pub splits: SplitDates,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    #[serde(default)]
    pub model: Hyper,
    #[serde(default)]
    pub search: Option<SearchConfig>,
    /// Output directory, relative to the config file unless absolute.
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

/// A loaded config plus where its relative paths point.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text).context("parsing run config")?;
        Ok(config)
    }

    /// Checks everything that does not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.version == CONFIG_VERSION,
            "unsupported config version {} (expected {CONFIG_VERSION})",
            self.version
        );
        ensure!(
            self.tick_size > 0.0 && self.tick_size.is_finite(),
            "tick_size must be positive"
        );
        ensure!(!self.pairs.is_empty(), "config lists no pairs");
        for (i, p) in self.pairs.iter().enumerate() {
            ensure!(
                valid_name(&p.name),
                "pair name {:?} must be [A-Za-z0-9_-]+",
                p.name
            );
            ensure!(
                !self.pairs[..i].iter().any(|q| q.name == p.name),
                "pair {} listed twice",
                p.name
            );
        }
        ensure!(self.window > 0, "window must be positive");
        ensure!(self.depth > 0, "depth must be positive");
        ensure!(!self.variants.is_empty(), "no variants selected");
        self.splits.ranges().validate().context("split dates")?;
        self.model.validate().context("model hyperparameters")?;
        if let Some(s) = &self.search {
            ensure!(s.budget >= 1, "search budget must be at least 1");
            ensure!(s.space.size() > 0, "search space is empty");
        }
        Ok(())
    }

    pub fn pair(&self, name: &str) -> Result<&PairInput> {
        match self.pairs.iter().find(|p| p.name == name) {
            Some(p) => Ok(p),
            None => bail!("pair {name} is not in the config"),
        }
    }
}

impl Loaded {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config =
            RunConfig::from_json(&text).with_context(|| format!("in {}", path.display()))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = Loaded { config, base_dir };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        for p in &self.config.pairs {
            let path = self.resolve(&p.path);
            ensure!(
                path.is_file(),
                "input for pair {} not found: {}",
                p.name,
                path.display()
            );
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "version": 1,
        "seed": 3,
        "pairs": [{"name": "BTC-USD", "path": "btc.ofr"}],
        "splits": {
            "train": {"start": "2017-11-04", "end": "2017-11-06"},
            "validation": {"start": "2017-11-06", "end": "2017-11-07"},
            "test": {"start": "2017-11-07", "end": "2017-11-09"}
        }
    }"#;

    #[test]
    fn defaults_are_materialized() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.window, DEFAULT_WINDOW);
        assert_eq!(c.variants.len(), 3);
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"lstm_sizes\":[64,64]"));
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn seed_is_required() {
        let text = MINIMAL.replace("\"seed\": 3,", "");
        assert!(RunConfig::from_json(&text).is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = RunConfig::from_json(MINIMAL).unwrap();
        c.version = 2;
        assert!(c.validate().is_err());
        let mut c = RunConfig::from_json(MINIMAL).unwrap();
        c.pairs[0].name = "a/b".into();
        assert!(c.validate().is_err());
        let mut c = RunConfig::from_json(MINIMAL).unwrap();
        c.splits.validation.start = NaiveDate::from_ymd_opt(2017, 11, 5).unwrap();
        assert!(c.validate().is_err());
        assert!(
            RunConfig::from_json(&MINIMAL.replace("\"version\"", "\"extra\": 1, \"version\""))
                .is_err()
        );
    }

    #[test]
    fn split_dates_are_utc_midnights() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        let r = c.splits.ranges();
        assert_eq!(r.train.start_ms, 1_509_753_600_000);
        assert_eq!(r.train.end_ms - r.train.start_ms, 2 * 86_400_000);
    }
}
