//! Order event records: parsing, canonical serialization, ordered replay and
//! a seeded synthetic stream generator.

mod event;
mod replay;
pub mod synth;
mod wire;

pub use event::{EventKind, OrderEvent, Qty, Side, SizeFormat, QTY_DECIMALS, QTY_SCALE};
pub use replay::{read_events, replay, write_events, OrderCheck, ReplaySummary};
pub use synth::{generate_synthetic, GeneratorConfig, OrderMix, PlantedRule};
pub use wire::{parse_event, serialize_event};

#[derive(Debug, thiserror::Error)]
pub enum FeedError {
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("line {line}: seq {seq} does not follow seq {previous}")]
    OutOfOrder { line: u64, seq: u64, previous: u64 },
    #[error("line {line}: {source}")]
    AtLine {
        line: u64,
        #[source]
        source: Box<FeedError>,
    },
    #[error("line {line}: read failed: {message}")]
    Io { line: u64, message: String },
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
}
