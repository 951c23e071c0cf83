//! Labelled datasets built from a replayed event stream.
//!
//! A single pass over the stream yields one row per post-warm-up event in two
//! flavours (order-flow covariates measured at the event's arrival, and the
//! book snapshot right after it) plus one [`Sample`] per mid-price change.
//! A sample's window is the `T` rows strictly preceding the labelling event.

mod build;
mod extract;
mod io;
mod split;

use serde::{Deserialize, Serialize};

use crate::feed::{EventKind, Side};
use crate::lob::{BookError, LobSnapshot};

pub use build::{label_stream, warm_up, BuildOutput, DatasetBuilder, LabelledWindow, WarmUp};
pub use extract::{
    extract_snapshot, flow_channels, orderflow_feature, snapshot_channels, utc_hour, FLOW_CHANNELS,
};
pub use io::{read_dataset, write_dataset, write_text_export, DATASET_MAGIC, DATASET_VERSION};
pub use split::{split_by_date, SplitRanges, TimeRange};

pub const DEFAULT_WINDOW: usize = 100;
pub const DEFAULT_DEPTH: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("event seq {seq}: {source}")]
    Book {
        seq: u64,
        #[source]
        source: BookError,
    },
    #[error("split ranges overlap")]
    OverlappingRanges,
    #[error("split ranges are not ordered train < validation < test")]
    UnorderedRanges,
    #[error("invalid feature config: {0}")]
    InvalidConfig(String),
    #[error("dataset format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[serde(rename = "orderflow")]
    OrderFlow,
    Bench1,
    Bench2,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::OrderFlow, Variant::Bench1, Variant::Bench2];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::OrderFlow => "orderflow",
            Variant::Bench1 => "bench1",
            Variant::Bench2 => "bench2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Variant::ALL.into_iter().find(|v| v.as_str() == s)
    }

    fn code(self) -> u8 {
        match self {
            Variant::OrderFlow => 0,
            Variant::Bench1 => 1,
            Variant::Bench2 => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Variant::ALL.into_iter().find(|v| v.code() == code)
    }

    pub fn uses_snapshots(self) -> bool {
        !matches!(self, Variant::OrderFlow)
    }

    /// Raw numeric channels per step (before embedding of categoricals).
    pub fn numeric_channels(self, depth: usize) -> usize {
        match self {
            Variant::OrderFlow => FLOW_CHANNELS,
            Variant::Bench1 => 4 * depth + 2,
            Variant::Bench2 => 4 * depth,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.as_str())
    }
}

/// Order-flow covariates of one event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderFlowFeature {
    /// Milliseconds since the previous event in the stream (0 for the first).
    pub dt_ms: u64,
    /// UTC hour of arrival, 0..=23.
    pub hour: u8,
    pub size: f64,
    pub kind: EventKind,
    pub side: Side,
    /// Plus-one encoded tick distance from the same-side best at arrival.
    pub rel_price: u64,
}

/// Book snapshot of one step, with market-order rates for `Bench1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotFeature {
    pub snapshot: LobSnapshot,
    pub mid_half_ticks: Option<i64>,
    pub mo_rate_buy: f64,
    pub mo_rate_sell: f64,
    pub variant: Variant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowRow {
    pub ts: i64,
    pub seq: u64,
    /// `None` when the relative price was undefined at arrival (empty same side).
    pub feature: Option<OrderFlowFeature>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BookRow {
    pub ts: i64,
    pub seq: u64,
    /// Book state immediately after the event.
    pub snapshot: LobSnapshot,
    pub mid_half_ticks: Option<i64>,
    pub best_bid_orders: u32,
    pub best_ask_orders: u32,
    /// Side of the event when it was a market order.
    pub market_side: Option<Side>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rows {
    Flow(Vec<FlowRow>),
    Book(Vec<BookRow>),
}

impl Rows {
    pub fn len(&self) -> usize {
        match self {
            Rows::Flow(r) => r.len(),
            Rows::Book(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn timestamp(&self, idx: usize) -> (i64, u64) {
        match self {
            Rows::Flow(r) => (r[idx].ts, r[idx].seq),
            Rows::Book(r) => (r[idx].ts, r[idx].seq),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "validation" | "val" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One labelled training example. Its window is `rows[end - T .. end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub end: usize,
    pub event_ts: i64,
    pub event_seq: u64,
    /// 1 when the mid-price went up, 0 when it went down.
    pub label: u8,
    pub split: Option<Split>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BuildCounters {
    pub events: u64,
    pub warm_up_events: u64,
    pub mid_changes: u64,
    pub insufficient_history: u64,
    pub empty_side_skips: u64,
    pub dropped_market_orders: u64,
    pub undefined_mid_events: u64,
    pub degenerate_rates: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: u64,
    pub validation: u64,
    pub test: u64,
    pub dropped: u64,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> u64 {
        match split {
            Split::Train => self.train,
            Split::Validation => self.validation,
            Split::Test => self.test,
        }
    }
}

/// Per-channel standardization fitted on the training split.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl NormStats {
    pub fn identity(channels: usize) -> Self {
        NormStats {
            mean: vec![0.0; channels],
            sd: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, raw: &mut [f64]) {
        for ((x, m), s) in raw.iter_mut().zip(&self.mean).zip(&self.sd) {
            *x = (*x - m) / s;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetHeader {
    pub variant: Variant,
    pub pair: String,
    pub window: usize,
    pub depth: usize,
    pub ranges: Option<SplitRanges>,
    pub counts: SplitCounts,
    pub counters: BuildCounters,
    pub norm: Option<NormStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub rows: Rows,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn window(&self, sample: &Sample) -> std::ops::Range<usize> {
        sample.end - self.header.window..sample.end
    }

    pub fn split_samples(&self, split: Split) -> impl Iterator<Item = &Sample> + '_ {
        self.samples.iter().filter(move |s| s.split == Some(split))
    }

    /// Order-flow covariates of a sample's window.
    pub fn flow_window(&self, sample: &Sample) -> Option<Vec<OrderFlowFeature>> {
        match &self.rows {
            Rows::Flow(rows) => rows[self.window(sample)]
                .iter()
                .map(|r| r.feature)
                .collect(),
            Rows::Book(_) => None,
        }
    }

    /// Snapshot features of a sample's window; `None` for order-flow datasets.
    pub fn snapshot_window(&self, sample: &Sample) -> Option<Vec<SnapshotFeature>> {
        match &self.rows {
            Rows::Book(rows) => {
                Some(extract_snapshot(&rows[self.window(sample)], self.header.variant).0)
            }
            Rows::Flow(_) => None,
        }
    }

    /// Raw (untransformed) numeric channels for every step of a sample.
    pub fn raw_channels(&self, sample: &Sample) -> Vec<Vec<f64>> {
        match &self.rows {
            Rows::Flow(_) => self
                .flow_window(sample)
                .expect("sample windows have defined features")
                .iter()
                .map(|f| flow_channels(f).to_vec())
                .collect(),
            Rows::Book(_) => self
                .snapshot_window(sample)
                .expect("book rows")
                .iter()
                .map(snapshot_channels)
                .collect(),
        }
    }

    /// Fits per-channel mean and standard deviation over every step of every
    /// training sample. Channels with zero spread get sd 1.
    pub fn fit_normalization(&mut self) {
        let channels = self.header.variant.numeric_channels(self.header.depth);
        let mut sum = vec![0.0; channels];
        let mut sq = vec![0.0; channels];
        let mut n = 0usize;
        let train: Vec<Sample> = self.split_samples(Split::Train).copied().collect();
        for s in &train {
            for step in self.raw_channels(s) {
                for (c, x) in step.iter().enumerate() {
                    sum[c] += x;
                }
                n += 1;
            }
        }
        if n == 0 {
            self.header.norm = Some(NormStats::identity(channels));
            return;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        for s in &train {
            for step in self.raw_channels(s) {
                for (c, x) in step.iter().enumerate() {
                    sq[c] += (x - mean[c]).powi(2);
                }
            }
        }
        let sd = sq
            .iter()
            .map(|q| {
                let sd = (q / n as f64).sqrt();
                if sd > 1e-12 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        self.header.norm = Some(NormStats { mean, sd });
    }
}
