//! Dataset container.
//!
//! Little-endian binary layout:
//!
//! ```text
//! magic "OFDS" | version u16 | variant u8 | T u32 | S u32
//! pair: len u16 + UTF-8 bytes
//! ranges: present u8, then train/validation/test as (start i64, end i64)
//! counts: train, validation, test, dropped (u64 each)
//! counters: events, warm_up_events, mid_changes, insufficient_history,
//!           empty_side_skips, dropped_market_orders, undefined_mid_events,
//!           degenerate_rates (u64 each)
//! norm: present u8, channels u32, means f64 x C, sds f64 x C
//! rows: count u64, width u32, then fixed-width rows
//! samples: count u64, width u32, then fixed-width samples
//! ```
//!
//! Order-flow row (44 bytes): ts i64, seq u64, defined u8, kind u8, side u8,
//! hour u8, dt_ms u64, size f64, rel_price u64.
//!
//! Book row (33 + 34 S bytes): ts i64, seq u64, mid_half_ticks i64
//! (`i64::MIN` when undefined), best_bid_orders u32, best_ask_orders u32,
//! market_side u8 (0 none, 1 buy, 2 sell), then S bid levels and S ask levels
//! as (price i64, volume units u64, padded u8).
//!
//! Sample (26 bytes): end u64, event_ts i64, event_seq u64, label u8,
//! split u8 (1 train, 2 validation, 3 test, 0 untagged).

use std::io::{Read, Write};

use serde_json::json;

use crate::feed::{EventKind, Qty, Side};
use crate::lob::{LobSnapshot, SnapshotLevel};

use super::{
    BookRow, BuildCounters, Dataset, DatasetHeader, FeatureError, FlowRow, NormStats,
    OrderFlowFeature, Rows, Sample, Split, SplitCounts, SplitRanges, TimeRange, Variant,
};

pub const DATASET_MAGIC: &[u8; 4] = b"OFDS";
pub const DATASET_VERSION: u16 = 1;

const FLOW_ROW_WIDTH: u32 = 44;
const SAMPLE_WIDTH: u32 = 26;

fn book_row_width(depth: usize) -> u32 {
    33 + 34 * depth as u32
}

struct Out(Vec<u8>);

impl Out {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct In<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> In<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FeatureError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end =
            end.ok_or_else(|| FeatureError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, FeatureError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, FeatureError> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }
    fn u32(&mut self) -> Result<u32, FeatureError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
    fn u64(&mut self) -> Result<u64, FeatureError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn i64(&mut self) -> Result<i64, FeatureError> {
        Ok(i64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn f64(&mut self) -> Result<f64, FeatureError> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

fn kind_code(k: EventKind) -> u8 {
    k.category()
}

fn side_code(s: Option<Side>) -> u8 {
    s.map_or(0, |s| s.category())
}

fn split_code(s: Option<Split>) -> u8 {
    match s {
        None => 0,
        Some(Split::Train) => 1,
        Some(Split::Validation) => 2,
        Some(Split::Test) => 3,
    }
}

fn bad(msg: impl Into<String>) -> FeatureError {
    FeatureError::Format(msg.into())
}

pub fn write_dataset<W: Write>(mut w: W, ds: &Dataset) -> Result<(), FeatureError> {
    let h = &ds.header;
    let mut o = Out(Vec::new());
    o.0.extend_from_slice(DATASET_MAGIC);
    o.u16(DATASET_VERSION);
    o.u8(h.variant.code());
    o.u32(h.window as u32);
    o.u32(h.depth as u32);
    let pair = h.pair.as_bytes();
    o.u16(u16::try_from(pair.len()).map_err(|_| bad("pair name too long"))?);
    o.0.extend_from_slice(pair);
    match &h.ranges {
        None => o.u8(0),
        Some(r) => {
            o.u8(1);
            for range in [r.train, r.validation, r.test] {
                o.i64(range.start_ms);
                o.i64(range.end_ms);
            }
        }
    }
    for c in [
        h.counts.train,
        h.counts.validation,
        h.counts.test,
        h.counts.dropped,
    ] {
        o.u64(c);
    }
    let k = &h.counters;
    for c in [
        k.events,
        k.warm_up_events,
        k.mid_changes,
        k.insufficient_history,
        k.empty_side_skips,
        k.dropped_market_orders,
        k.undefined_mid_events,
        k.degenerate_rates,
    ] {
        o.u64(c);
    }
    match &h.norm {
        None => o.u8(0),
        Some(n) => {
            o.u8(1);
            o.u32(n.channels() as u32);
            n.mean.iter().for_each(|&m| o.f64(m));
            n.sd.iter().for_each(|&s| o.f64(s));
        }
    }

    o.u64(ds.rows.len() as u64);
    match &ds.rows {
        Rows::Flow(rows) => {
            o.u32(FLOW_ROW_WIDTH);
            for r in rows {
                o.i64(r.ts);
                o.u64(r.seq);
                match &r.feature {
                    Some(f) => {
                        o.u8(1);
                        o.u8(kind_code(f.kind));
                        o.u8(f.side.category());
                        o.u8(f.hour);
                        o.u64(f.dt_ms);
                        o.f64(f.size);
                        o.u64(f.rel_price);
                    }
                    None => o.0.extend_from_slice(&[0u8; 28]),
                }
            }
        }
        Rows::Book(rows) => {
            o.u32(book_row_width(h.depth));
            for r in rows {
                o.i64(r.ts);
                o.u64(r.seq);
                o.i64(r.mid_half_ticks.unwrap_or(i64::MIN));
                o.u32(r.best_bid_orders);
                o.u32(r.best_ask_orders);
                o.u8(side_code(r.market_side));
                for level in r.snapshot.bids.iter().chain(&r.snapshot.asks) {
                    o.i64(level.price_ticks);
                    o.u64(level.volume.units());
                    o.u8(u8::from(level.padded));
                }
            }
        }
    }

    o.u64(ds.samples.len() as u64);
    o.u32(SAMPLE_WIDTH);
    for s in &ds.samples {
        o.u64(s.end as u64);
        o.i64(s.event_ts);
        o.u64(s.event_seq);
        o.u8(s.label);
        o.u8(split_code(s.split));
    }
    w.write_all(&o.0)?;
    Ok(())
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Dataset, FeatureError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut i = In { buf: &buf, pos: 0 };
    if i.take(4)? != DATASET_MAGIC {
        return Err(bad("not a dataset file (bad magic)"));
    }
    let version = i.u16()?;
    if version != DATASET_VERSION {
        return Err(bad(format!("unsupported dataset version {version}")));
    }
    let variant = Variant::from_code(i.u8()?).ok_or_else(|| bad("unknown variant code"))?;
    let window = i.u32()? as usize;
    let depth = i.u32()? as usize;
    let pair_len = i.u16()? as usize;
    let pair =
        String::from_utf8(i.take(pair_len)?.to_vec()).map_err(|_| bad("pair is not UTF-8"))?;
    let ranges = match i.u8()? {
        0 => None,
        _ => {
            let mut rr = [TimeRange::new(0, 0); 3];
            for range in rr.iter_mut() {
                *range = TimeRange::new(i.i64()?, i.i64()?);
            }
            Some(SplitRanges {
                train: rr[0],
                validation: rr[1],
                test: rr[2],
            })
        }
    };
    let counts = SplitCounts {
        train: i.u64()?,
        validation: i.u64()?,
        test: i.u64()?,
        dropped: i.u64()?,
    };
    let counters = BuildCounters {
        events: i.u64()?,
        warm_up_events: i.u64()?,
        mid_changes: i.u64()?,
        insufficient_history: i.u64()?,
        empty_side_skips: i.u64()?,
        dropped_market_orders: i.u64()?,
        undefined_mid_events: i.u64()?,
        degenerate_rates: i.u64()?,
    };
    let norm = match i.u8()? {
        0 => None,
        _ => {
            let c = i.u32()? as usize;
            let mean = (0..c).map(|_| i.f64()).collect::<Result<_, _>>()?;
            let sd = (0..c).map(|_| i.f64()).collect::<Result<_, _>>()?;
            Some(NormStats { mean, sd })
        }
    };

    let row_count = i.u64()? as usize;
    let width = i.u32()?;
    let rows = if variant == Variant::OrderFlow {
        if width != FLOW_ROW_WIDTH {
            return Err(bad("unexpected order-flow row width"));
        }
        let mut rows = Vec::with_capacity(row_count);
        for _ in 0..row_count {
            let ts = i.i64()?;
            let seq = i.u64()?;
            let defined = i.u8()?;
            let (kind, side, hour) = (i.u8()?, i.u8()?, i.u8()?);
            let (dt_ms, size, rel_price) = (i.u64()?, i.f64()?, i.u64()?);
            let feature = if defined == 0 {
                None
            } else {
                Some(OrderFlowFeature {
                    dt_ms,
                    hour,
                    size,
                    kind: match kind {
                        1 => EventKind::Limit,
                        2 => EventKind::Market,
                        3 => EventKind::Cancel,
                        _ => return Err(bad("bad kind code")),
                    },
                    side: match side {
                        1 => Side::Buy,
                        2 => Side::Sell,
                        _ => return Err(bad("bad side code")),
                    },
                    rel_price,
                })
            };
            rows.push(FlowRow { ts, seq, feature });
        }
        Rows::Flow(rows)
    } else {
        if width != book_row_width(depth) {
            return Err(bad("unexpected book row width"));
        }
        let mut rows = Vec::with_capacity(row_count);
        for _ in 0..row_count {
            let ts = i.i64()?;
            let seq = i.u64()?;
            let mid = i.i64()?;
            let best_bid_orders = i.u32()?;
            let best_ask_orders = i.u32()?;
            let market_side = match i.u8()? {
                0 => None,
                1 => Some(Side::Buy),
                2 => Some(Side::Sell),
                _ => return Err(bad("bad market side code")),
            };
            let mut levels = Vec::with_capacity(2 * depth);
            for _ in 0..2 * depth {
                levels.push(SnapshotLevel {
                    price_ticks: i.i64()?,
                    volume: Qty(i.u64()?),
                    padded: i.u8()? != 0,
                });
            }
            let asks = levels.split_off(depth);
            rows.push(BookRow {
                ts,
                seq,
                snapshot: LobSnapshot {
                    depth,
                    bids: levels,
                    asks,
                },
                mid_half_ticks: (mid != i64::MIN).then_some(mid),
                best_bid_orders,
                best_ask_orders,
                market_side,
            });
        }
        Rows::Book(rows)
    };

    let sample_count = i.u64()? as usize;
    if i.u32()? != SAMPLE_WIDTH {
        return Err(bad("unexpected sample width"));
    }
    let mut samples = Vec::with_capacity(sample_count);
    for _ in 0..sample_count {
        let end = i.u64()? as usize;
        let event_ts = i.i64()?;
        let event_seq = i.u64()?;
        let label = i.u8()?;
        let split = match i.u8()? {
            0 => None,
            1 => Some(Split::Train),
            2 => Some(Split::Validation),
            3 => Some(Split::Test),
            _ => return Err(bad("bad split code")),
        };
        if end < window || end > rows.len() || label > 1 {
            return Err(bad("sample record out of range"));
        }
        samples.push(Sample {
            end,
            event_ts,
            event_seq,
            label,
            split,
        });
    }
    if i.pos != buf.len() {
        return Err(bad("trailing bytes after samples"));
    }
    Ok(Dataset {
        header: DatasetHeader {
            variant,
            pair,
            window,
            depth,
            ranges,
            counts,
            counters,
            norm,
        },
        rows,
        samples,
    })
}

/// Line-oriented JSON export: one header line, one line per row, one line per
/// sample. Floats print in shortest round-trip form, so nothing is lost.
pub fn write_text_export<W: Write>(mut w: W, ds: &Dataset) -> Result<(), FeatureError> {
    let h = &ds.header;
    let header = json!({
        "type": "header",
        "version": DATASET_VERSION,
        "variant": h.variant,
        "pair": h.pair,
        "window": h.window,
        "depth": h.depth,
        "ranges": h.ranges,
        "counts": h.counts,
        "counters": h.counters,
        "norm": h.norm,
    });
    writeln!(w, "{header}")?;
    match &ds.rows {
        Rows::Flow(rows) => {
            for r in rows {
                let line = match &r.feature {
                    Some(f) => json!({
                        "type": "row", "ts": r.ts, "seq": r.seq, "dt_ms": f.dt_ms, "hour": f.hour,
                        "size": f.size, "kind": f.kind.category(), "side": f.side.category(),
                        "rel_price": f.rel_price,
                    }),
                    None => json!({"type": "row", "ts": r.ts, "seq": r.seq, "undefined": true}),
                };
                writeln!(w, "{line}")?;
            }
        }
        Rows::Book(rows) => {
            let levels = |ls: &[SnapshotLevel]| -> Vec<serde_json::Value> {
                ls.iter()
                    .map(|l| json!([l.price_ticks, l.volume.to_string(), l.padded]))
                    .collect()
            };
            for r in rows {
                let line = json!({
                    "type": "row", "ts": r.ts, "seq": r.seq, "mid_half_ticks": r.mid_half_ticks,
                    "best_bid_orders": r.best_bid_orders, "best_ask_orders": r.best_ask_orders,
                    "market_side": r.market_side.map(|s| s.as_str()),
                    "bids": levels(&r.snapshot.bids), "asks": levels(&r.snapshot.asks),
                });
                writeln!(w, "{line}")?;
            }
        }
    }
    for s in &ds.samples {
        let line = json!({
            "type": "sample", "end": s.end, "event_ts": s.event_ts, "event_seq": s.event_seq,
            "label": s.label, "split": s.split.map(|x| x.as_str()),
        });
        writeln!(w, "{line}")?;
    }
    Ok(())
}
