use serde::{Deserialize, Serialize};

use crate::feed::{EventKind, OrderEvent};
use crate::lob::{BookError, OrderBook};

use super::extract::{extract_snapshot, orderflow_feature};
use super::{
    BookRow, BuildCounters, Dataset, DatasetHeader, FeatureError, FlowRow, Rows, Sample,
    SplitCounts, Variant,
};

/// Where the warm-up prefix of a stream ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmUp {
    /// The first `n` events.
    Events(usize),
    /// Every event strictly before this timestamp.
    UntilMs(i64),
}

impl WarmUp {
    fn covers(self, index: usize, ev: &OrderEvent) -> bool {
        match self {
            WarmUp::Events(n) => index < n,
            WarmUp::UntilMs(t) => ev.timestamp_ms < t,
        }
    }
}

fn apply_tolerant(
    book: &mut OrderBook,
    ev: &OrderEvent,
) -> Result<Option<crate::lob::BookDelta>, FeatureError> {
    match book.apply_event(ev) {
        Ok(delta) => Ok(Some(delta)),
        Err(BookError::MarketOnEmptyBook) => Ok(None),
        Err(source) => Err(FeatureError::Book {
            seq: ev.seq,
            source,
        }),
    }
}

/// Applies the warm-up prefix of `events` to `book`.
///
/// Returns `(consumed, dropped)`: the length of the prefix and how many of
/// its market orders found no liquidity and were dropped.
pub fn warm_up(
    events: &[OrderEvent],
    until: WarmUp,
    book: &mut OrderBook,
) -> Result<(usize, u64), FeatureError> {
    let mut dropped = 0;
    let mut consumed = 0;
    for (i, ev) in events.iter().enumerate() {
        if !until.covers(i, ev) {
            break;
        }
        if apply_tolerant(book, ev)?.is_none() {
            dropped += 1;
        }
        consumed += 1;
    }
    Ok((consumed, dropped))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelledWindow {
    pub label: u8,
    pub event_ts: i64,
    pub event_seq: u64,
    /// The `T` events strictly preceding the labelling event, oldest first.
    pub window: Vec<OrderEvent>,
}

/// Emits one labelled window per mid-price change in `events`, replayed on a
/// primed `book`. Returns the windows and the number of changes skipped for
/// lack of `window` prior events.
pub fn label_stream(
    events: &[OrderEvent],
    book: &mut OrderBook,
    window: usize,
) -> Result<(Vec<LabelledWindow>, u64), FeatureError> {
    let mut history: Vec<&OrderEvent> = Vec::new();
    let mut out = Vec::new();
    let mut skipped = 0;
    for ev in events {
        let Some(delta) = apply_tolerant(book, ev)? else {
            continue;
        };
        if delta.mid_changed() {
            if history.len() < window {
                skipped += 1;
            } else {
                out.push(LabelledWindow {
                    label: u8::from(delta.mid_after > delta.mid_before),
                    event_ts: ev.timestamp_ms,
                    event_seq: ev.seq,
                    window: history[history.len() - window..]
                        .iter()
                        .map(|e| (*e).clone())
                        .collect(),
                });
            }
        }
        history.push(ev);
    }
    Ok((out, skipped))
}

/// Rows and samples shared by all three dataset variants.
#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub window: usize,
    pub depth: usize,
    pub flow: Vec<FlowRow>,
    pub book: Vec<BookRow>,
    pub samples: Vec<Sample>,
    pub counters: BuildCounters,
}

impl BuildOutput {
    /// Unsplit dataset of one variant.
    pub fn dataset(&self, variant: Variant, pair: &str) -> Dataset {
        let rows = match variant {
            Variant::OrderFlow => Rows::Flow(self.flow.clone()),
            _ => Rows::Book(self.book.clone()),
        };
        let mut counters = self.counters;
        if variant == Variant::Bench1 {
            counters.degenerate_rates = self
                .samples
                .iter()
                .map(|s| extract_snapshot(&self.book[s.end - self.window..s.end], variant).1)
                .sum();
        }
        Dataset {
            header: DatasetHeader {
                variant,
                pair: pair.to_string(),
                window: self.window,
                depth: self.depth,
                ranges: None,
                counts: SplitCounts::default(),
                counters,
                norm: None,
            },
            rows,
            samples: self.samples.clone(),
        }
    }
}

/// Single-pass dataset construction over an event stream.
#[derive(Debug)]
pub struct DatasetBuilder {
    window: usize,
    depth: usize,
    warm: WarmUp,
    warming: bool,
    index: usize,
    book: OrderBook,
    prev_ts: Option<i64>,
    flow: Vec<FlowRow>,
    rows: Vec<BookRow>,
    samples: Vec<Sample>,
    counters: BuildCounters,
}

impl DatasetBuilder {
    pub fn new(
        window: usize,
        depth: usize,
        warm: WarmUp,
        tick_size: f64,
    ) -> Result<Self, FeatureError> {
        if window == 0 {
            return Err(FeatureError::InvalidConfig(
                "window length T must be at least 1".into(),
            ));
        }
        if depth == 0 {
            return Err(FeatureError::InvalidConfig(
                "snapshot depth S must be at least 1".into(),
            ));
        }
        if !(tick_size > 0.0) {
            return Err(FeatureError::InvalidConfig(
                "tick size must be positive".into(),
            ));
        }
        Ok(DatasetBuilder {
            window,
            depth,
            warm,
            warming: true,
            index: 0,
            book: OrderBook::new(tick_size),
            prev_ts: None,
            flow: Vec::new(),
            rows: Vec::new(),
            samples: Vec::new(),
            counters: BuildCounters::default(),
        })
    }

    pub fn book(&self) -> &OrderBook {
        &self.book
    }

    pub fn counters(&self) -> &BuildCounters {
        &self.counters
    }

    pub fn push(&mut self, ev: &OrderEvent) -> Result<(), FeatureError> {
        let index = self.index;
        self.index += 1;
        self.counters.events += 1;
        if self.warming && self.warm.covers(index, ev) {
            self.counters.warm_up_events += 1;
            if apply_tolerant(&mut self.book, ev)?.is_none() {
                self.counters.dropped_market_orders += 1;
            }
            self.prev_ts = Some(ev.timestamp_ms);
            return Ok(());
        }
        self.warming = false;

        let feature = orderflow_feature(&self.book, self.prev_ts, ev).ok();
        self.prev_ts = Some(ev.timestamp_ms);
        let Some(delta) = apply_tolerant(&mut self.book, ev)? else {
            self.counters.dropped_market_orders += 1;
            return Ok(());
        };

        if delta.mid_before.is_none() || delta.mid_after.is_none() {
            self.counters.undefined_mid_events += 1;
        }
        if delta.mid_changed() {
            self.counters.mid_changes += 1;
            let end = self.flow.len();
            if end < self.window {
                self.counters.insufficient_history += 1;
            } else if self.flow[end - self.window..end]
                .iter()
                .any(|r| r.feature.is_none())
            {
                self.counters.empty_side_skips += 1;
            } else {
                self.samples.push(Sample {
                    end,
                    event_ts: ev.timestamp_ms,
                    event_seq: ev.seq,
                    label: u8::from(delta.mid_after > delta.mid_before),
                    split: None,
                });
            }
        }

        self.flow.push(FlowRow {
            ts: ev.timestamp_ms,
            seq: ev.seq,
            feature,
        });
        self.rows.push(BookRow {
            ts: ev.timestamp_ms,
            seq: ev.seq,
            snapshot: self.book.snapshot(self.depth),
            mid_half_ticks: delta.mid_after.map(|m| m.half_ticks()),
            best_bid_orders: self.book.best_level_orders(crate::feed::Side::Buy),
            best_ask_orders: self.book.best_level_orders(crate::feed::Side::Sell),
            market_side: (ev.kind == EventKind::Market).then_some(ev.side),
        });
        Ok(())
    }

    pub fn finish(self) -> BuildOutput {
        BuildOutput {
            window: self.window,
            depth: self.depth,
            flow: self.flow,
            book: self.rows,
            samples: self.samples,
            counters: self.counters,
        }
    }

    /// Convenience: runs the builder over a whole stream.
    pub fn build(
        events: &[OrderEvent],
        window: usize,
        depth: usize,
        warm: WarmUp,
        tick_size: f64,
    ) -> Result<BuildOutput, FeatureError> {
        let mut builder = DatasetBuilder::new(window, depth, warm, tick_size)?;
        for ev in events {
            builder.push(ev)?;
        }
        Ok(builder.finish())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feed::{generate_synthetic, GeneratorConfig, Qty, Side};

    fn q(n: u64) -> Qty {
        Qty(n * 100_000_000)
    }

    fn base_book_events() -> Vec<OrderEvent> {
        vec![
            OrderEvent::limit(1, 1, Side::Buy, 100, q(1), "b1"),
            OrderEvent::limit(2, 2, Side::Buy, 99, q(1), "b2"),
            OrderEvent::limit(3, 3, Side::Sell, 102, q(1), "s1"),
            OrderEvent::limit(4, 4, Side::Sell, 103, q(1), "s2"),
        ]
    }

    #[test]
    fn warm_up_boundaries() {
        let events = base_book_events();
        let mut book = OrderBook::default();
        assert_eq!(
            warm_up(&events, WarmUp::UntilMs(1), &mut book).unwrap(),
            (0, 0)
        );
        assert!(book.is_empty());
        let mut book = OrderBook::default();
        assert_eq!(
            warm_up(&events, WarmUp::UntilMs(i64::MAX), &mut book).unwrap(),
            (4, 0)
        );
        let out = DatasetBuilder::build(&events, 1, 1, WarmUp::UntilMs(i64::MAX), 1.0).unwrap();
        assert!(out.samples.is_empty());
        assert!(out.flow.is_empty());
    }

    #[test]
    fn lifting_the_ask_labels_up() {
        let mut events = base_book_events();
        events.push(OrderEvent::limit(5, 5, Side::Buy, 98, q(1), "b3"));
        events.push(OrderEvent::market(6, 6, Side::Buy, q(1), "m1"));
        let mut book = OrderBook::default();
        let (n, _) = warm_up(&events, WarmUp::Events(4), &mut book).unwrap();
        let (windows, skipped) = label_stream(&events[n..], &mut book, 1).unwrap();
        assert_eq!(skipped, 0);
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0].label, 1);
        assert_eq!(windows[0].event_seq, 6);
        assert_eq!(windows[0].window[0].seq, 5);
    }

    #[test]
    fn deep_limit_order_is_not_a_sample() {
        let mut events = base_book_events();
        events.push(OrderEvent::limit(5, 5, Side::Sell, 110, q(1), "deep"));
        let out = DatasetBuilder::build(&events, 1, 2, WarmUp::Events(4), 1.0).unwrap();
        assert_eq!(out.counters.mid_changes, 0);
        assert!(out.samples.is_empty());
        assert_eq!(out.flow.len(), 1);
    }

    #[test]
    fn short_history_is_counted() {
        let mut events = base_book_events();
        events.push(OrderEvent::market(6, 5, Side::Sell, q(1), "m1"));
        let out = DatasetBuilder::build(&events, 2, 2, WarmUp::Events(4), 1.0).unwrap();
        assert_eq!(out.counters.mid_changes, 1);
        assert_eq!(out.counters.insufficient_history, 1);
        assert!(out.samples.is_empty());
    }

    #[test]
    fn builder_agrees_with_label_stream() {
        let cfg = GeneratorConfig {
            events: 4000,
            aggressive_probability: 0.05,
            ..GeneratorConfig::default()
        };
        let events = generate_synthetic(&cfg, 2).unwrap();
        let out = DatasetBuilder::build(&events, 10, 3, WarmUp::Events(200), 1.0).unwrap();
        let mut book = OrderBook::default();
        let (n, _) = warm_up(&events, WarmUp::Events(200), &mut book).unwrap();
        let (windows, skipped) = label_stream(&events[n..], &mut book, 10).unwrap();
        assert_eq!(out.counters.insufficient_history, skipped);
        assert_eq!(
            out.samples.len() as u64,
            out.counters.mid_changes - skipped - out.counters.empty_side_skips
        );
        assert_eq!(out.counters.empty_side_skips, 0);
        assert_eq!(windows.len(), out.samples.len());
        for (w, s) in windows.iter().zip(&out.samples) {
            assert_eq!((w.label, w.event_seq), (s.label, s.event_seq));
            let seqs: Vec<u64> = out.flow[s.end - 10..s.end].iter().map(|r| r.seq).collect();
            let want: Vec<u64> = w.window.iter().map(|e| e.seq).collect();
            assert_eq!(seqs, want);
        }
    }

    #[test]
    fn invalid_builder_config() {
        assert!(DatasetBuilder::new(0, 5, WarmUp::Events(0), 1.0).is_err());
        assert!(DatasetBuilder::new(5, 0, WarmUp::Events(0), 1.0).is_err());
    }
}
