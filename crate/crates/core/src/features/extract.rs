use crate::feed::{OrderEvent, Side};
use crate::lob::{BookError, OrderBook};

use super::{BookRow, OrderFlowFeature, SnapshotFeature, Variant};

/// Numeric channels per order-flow step: dt, size, relative price.
pub const FLOW_CHANNELS: usize = 3;

const MS_PER_HOUR: i64 = 3_600_000;

pub fn utc_hour(timestamp_ms: i64) -> u8 {
    timestamp_ms.div_euclid(MS_PER_HOUR).rem_euclid(24) as u8
}

/// Covariates of `ev` measured against the book as it stood on arrival.
pub fn orderflow_feature(
    book_before: &OrderBook,
    prev_ts: Option<i64>,
    ev: &OrderEvent,
) -> Result<OrderFlowFeature, BookError> {
    let dt_ms = prev_ts.map_or(0, |p| (ev.timestamp_ms - p).max(0) as u64);
    Ok(OrderFlowFeature {
        dt_ms,
        hour: utc_hour(ev.timestamp_ms),
        size: ev.size.as_f64(),
        kind: ev.kind,
        side: ev.side,
        rel_price: book_before.relative_price(ev.side, ev.price_ticks)?,
    })
}

/// Snapshot features for a window of book rows.
///
/// For `Bench1` the buy rate at each step is the number of buy market orders
/// in the whole window divided by the resting-order count at that step's best
/// bid (sell side symmetric). A best level with no orders gives rate 0; the
/// second return value counts those cases.
pub fn extract_snapshot(rows: &[BookRow], variant: Variant) -> (Vec<SnapshotFeature>, u64) {
    let with_rates = variant == Variant::Bench1;
    let buys = rows
        .iter()
        .filter(|r| r.market_side == Some(Side::Buy))
        .count() as f64;
    let sells = rows
        .iter()
        .filter(|r| r.market_side == Some(Side::Sell))
        .count() as f64;
    let mut degenerate = 0;
    let mut rate = |count: f64, orders: u32| {
        if !with_rates {
            0.0
        } else if orders == 0 {
            degenerate += 1;
            0.0
        } else {
            count / orders as f64
        }
    };
    let features = rows
        .iter()
        .map(|r| SnapshotFeature {
            snapshot: r.snapshot.clone(),
            mid_half_ticks: r.mid_half_ticks,
            mo_rate_buy: rate(buys, r.best_bid_orders),
            mo_rate_sell: rate(sells, r.best_ask_orders),
            variant,
        })
        .collect();
    (features, degenerate)
}

/// `[ln(1 + dt), ln(size), ln(rel_price)]`.
pub fn flow_channels(f: &OrderFlowFeature) -> [f64; FLOW_CHANNELS] {
    [
        (f.dt_ms as f64).ln_1p(),
        f.size.ln(),
        (f.rel_price as f64).ln(),
    ]
}

/// Level prices as tick offsets from the mid, volumes as `ln(1 + v)`, in the
/// order `b1..bS, s1..sS`, then the two rates for `Bench1`.
pub fn snapshot_channels(f: &SnapshotFeature) -> Vec<f64> {
    let snap = &f.snapshot;
    let reference = match f.mid_half_ticks {
        Some(twice) => twice as f64 / 2.0,
        None => snap
            .bids
            .iter()
            .chain(&snap.asks)
            .find(|l| !l.padded)
            .map_or(0.0, |l| l.price_ticks as f64),
    };
    let mut out = Vec::with_capacity(4 * snap.depth + 2);
    for level in snap.bids.iter().chain(&snap.asks) {
        out.push(level.price_ticks as f64 - reference);
        out.push(level.volume.as_f64().ln_1p());
    }
    if f.variant == Variant::Bench1 {
        out.push(f.mo_rate_buy);
        out.push(f.mo_rate_sell);
    }
    out
}
