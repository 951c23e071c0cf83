//! Price-level limit order book rebuilt from order events.
//!
//! Prices are integer ticks and quantities are fixed-point, so level
//! aggregates are exact. Each level keeps its resting orders in arrival order;
//! executions consume the oldest order first.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

use crate::feed::{EventKind, OrderEvent, Qty, Side};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BookError {
    #[error("unknown order id `{0}`")]
    UnknownOrderId(String),
    #[error("cancel of {requested} exceeds remaining {remaining} on order `{id}`")]
    OverCancel {
        id: String,
        requested: Qty,
        remaining: Qty,
    },
    #[error("market order with no opposing liquidity")]
    MarketOnEmptyBook,
    #[error("{0:?} side of the book is empty")]
    EmptySide(Side),
    #[error("order id `{0}` is already resting")]
    DuplicateOrderId(String),
    #[error("cancel for `{0}` does not match the resting order's side or price")]
    CancelMismatch(String),
    #[error("{0}")]
    InvalidEvent(String),
}

/// Mid-price held as the sum of best bid and best ask, so half ticks are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MidPrice {
    twice: i64,
}

impl MidPrice {
    pub fn from_best(bid: i64, ask: i64) -> Self {
        MidPrice { twice: bid + ask }
    }

    pub fn from_half_ticks(twice: i64) -> Self {
        MidPrice { twice }
    }

    /// Mid-price in half ticks (best bid + best ask).
    pub fn half_ticks(self) -> i64 {
        self.twice
    }

    pub fn ticks(self) -> f64 {
        self.twice as f64 / 2.0
    }
}

impl fmt::Display for MidPrice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.twice % 2 == 0 {
            write!(f, "{}", self.twice / 2)
        } else {
            write!(f, "{}", self.ticks())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RestingOrder {
    pub side: Side,
    pub price_ticks: i64,
    pub remaining: Qty,
}

#[derive(Debug, Clone, Default)]
struct Level {
    total: Qty,
    queue: VecDeque<String>,
}

/// Aggregate view of one price level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelView {
    pub price_ticks: i64,
    pub volume: Qty,
    pub order_count: u32,
}

/// What one event did to the book.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BookDelta {
    pub mid_before: Option<MidPrice>,
    pub mid_after: Option<MidPrice>,
    pub executed: Qty,
    /// Market-order quantity left over after the opposing side ran dry.
    pub unfilled: Qty,
    pub levels_touched: u32,
}

impl BookDelta {
    /// Both mids defined and different.
    pub fn mid_changed(&self) -> bool {
        matches!((self.mid_before, self.mid_after), (Some(a), Some(b)) if a != b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnapshotLevel {
    pub price_ticks: i64,
    pub volume: Qty,
    pub padded: bool,
}

/// Top `depth` levels of each side. Bids are in decreasing price order and
/// asks in increasing order; missing levels are padded with zero volume at
/// prices one tick further out than the previous entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LobSnapshot {
    pub depth: usize,
    pub bids: Vec<SnapshotLevel>,
    pub asks: Vec<SnapshotLevel>,
}

#[derive(Debug, Clone)]
pub struct OrderBook {
    bids: BTreeMap<i64, Level>,
    asks: BTreeMap<i64, Level>,
    resting: HashMap<String, RestingOrder>,
    tick_size: f64,
}

impl Default for OrderBook {
    fn default() -> Self {
        OrderBook::new(1.0)
    }
}

impl OrderBook {
    /// `tick_size` is the quote-currency value of one tick.
    pub fn new(tick_size: f64) -> Self {
        assert!(tick_size > 0.0, "tick size must be positive");
        OrderBook {
            bids: BTreeMap::new(),
            asks: BTreeMap::new(),
            resting: HashMap::new(),
            tick_size,
        }
    }

    pub fn tick_size(&self) -> f64 {
        self.tick_size
    }

    pub fn best_bid(&self) -> Option<i64> {
        self.bids.keys().next_back().copied()
    }

    pub fn best_ask(&self) -> Option<i64> {
        self.asks.keys().next().copied()
    }

    pub fn best(&self, side: Side) -> Option<i64> {
        match side {
            Side::Buy => self.best_bid(),
            Side::Sell => self.best_ask(),
        }
    }

    pub fn mid_price(&self) -> Result<MidPrice, BookError> {
        let bid = self.best_bid().ok_or(BookError::EmptySide(Side::Buy))?;
        let ask = self.best_ask().ok_or(BookError::EmptySide(Side::Sell))?;
        Ok(MidPrice::from_best(bid, ask))
    }

    /// Tick distance from the same-side best, plus one. Market orders and
    /// missing prices sit at the best and map to 1.
    pub fn relative_price(&self, side: Side, price_ticks: Option<i64>) -> Result<u64, BookError> {
        let Some(price) = price_ticks else {
            return Ok(1);
        };
        let best = self.best(side).ok_or(BookError::EmptySide(side))?;
        Ok(1 + best.abs_diff(price))
    }

    pub fn order(&self, id: &str) -> Option<&RestingOrder> {
        self.resting.get(id)
    }

    pub fn order_count(&self) -> usize {
        self.resting.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resting.is_empty()
    }

    pub fn level(&self, side: Side, price_ticks: i64) -> Option<LevelView> {
        self.side(side)
            .get(&price_ticks)
            .map(|l| view(price_ticks, l))
    }

    /// Levels from the best price outward.
    pub fn levels(&self, side: Side) -> Box<dyn Iterator<Item = LevelView> + '_> {
        match side {
            Side::Buy => Box::new(self.bids.iter().rev().map(|(&p, l)| view(p, l))),
            Side::Sell => Box::new(self.asks.iter().map(|(&p, l)| view(p, l))),
        }
    }

    pub fn depth(&self, side: Side) -> usize {
        self.side(side).len()
    }

    /// Resting orders at the best price of `side`, 0 on an empty side.
    pub fn best_level_orders(&self, side: Side) -> u32 {
        self.levels(side).next().map_or(0, |l| l.order_count)
    }

    /// Order ids resting at a level, oldest first.
    pub fn level_orders(&self, side: Side, price_ticks: i64) -> Vec<&str> {
        self.side(side)
            .get(&price_ticks)
            .map(|l| l.queue.iter().map(String::as_str).collect())
            .unwrap_or_default()
    }

    pub fn snapshot(&self, depth: usize) -> LobSnapshot {
        assert!(depth >= 1, "snapshot depth must be at least 1");
        LobSnapshot {
            depth,
            bids: padded_levels(self.levels(Side::Buy), depth, -1),
            asks: padded_levels(self.levels(Side::Sell), depth, 1),
        }
    }

    pub fn apply_event(&mut self, ev: &OrderEvent) -> Result<BookDelta, BookError> {
        let mid_before = self.mid_price().ok();
        let mut delta = BookDelta {
            mid_before,
            mid_after: mid_before,
            executed: Qty::ZERO,
            unfilled: Qty::ZERO,
            levels_touched: 0,
        };
        match ev.kind {
            EventKind::Limit => self.apply_limit(ev, &mut delta)?,
            EventKind::Market => self.apply_market(ev, &mut delta)?,
            EventKind::Cancel => self.apply_cancel(ev, &mut delta)?,
        }
        delta.mid_after = self.mid_price().ok();
        Ok(delta)
    }

    fn apply_limit(&mut self, ev: &OrderEvent, delta: &mut BookDelta) -> Result<(), BookError> {
        let price = ev
            .price_ticks
            .ok_or_else(|| BookError::InvalidEvent("limit order without price".into()))?;
        if self.resting.contains_key(&ev.order_id) {
            return Err(BookError::DuplicateOrderId(ev.order_id.clone()));
        }
        let opposite = ev.side.opposite();
        let mut remaining = ev.size;
        while !remaining.is_zero() {
            let Some(best) = self.best(opposite) else {
                break;
            };
            let marketable = match ev.side {
                Side::Buy => best <= price,
                Side::Sell => best >= price,
            };
            if !marketable {
                break;
            }
            let filled = self.execute_at(opposite, best, remaining);
            remaining -= filled;
            delta.executed += filled;
            delta.levels_touched += 1;
        }
        if !remaining.is_zero() {
            self.rest(ev.side, price, remaining, ev.order_id.clone());
            delta.levels_touched += 1;
        }
        Ok(())
    }

    fn apply_market(&mut self, ev: &OrderEvent, delta: &mut BookDelta) -> Result<(), BookError> {
        let opposite = ev.side.opposite();
        if self.best(opposite).is_none() {
            return Err(BookError::MarketOnEmptyBook);
        }
        let mut remaining = ev.size;
        while !remaining.is_zero() {
            let Some(best) = self.best(opposite) else {
                break;
            };
            let filled = self.execute_at(opposite, best, remaining);
            remaining -= filled;
            delta.executed += filled;
            delta.levels_touched += 1;
        }
        delta.unfilled = remaining;
        Ok(())
    }

    fn apply_cancel(&mut self, ev: &OrderEvent, delta: &mut BookDelta) -> Result<(), BookError> {
        let order = self
            .resting
            .get_mut(&ev.order_id)
            .ok_or_else(|| BookError::UnknownOrderId(ev.order_id.clone()))?;
        if order.side != ev.side || Some(order.price_ticks) != ev.price_ticks {
            return Err(BookError::CancelMismatch(ev.order_id.clone()));
        }
        if ev.size > order.remaining {
            return Err(BookError::OverCancel {
                id: ev.order_id.clone(),
                requested: ev.size,
                remaining: order.remaining,
            });
        }
        order.remaining -= ev.size;
        let (side, price, gone) = (order.side, order.price_ticks, order.remaining.is_zero());
        if gone {
            self.resting.remove(&ev.order_id);
        }
        let levels = self.side_mut(side);
        let level = levels.get_mut(&price).expect("resting order has a level");
        level.total -= ev.size;
        if gone {
            let pos = level
                .queue
                .iter()
                .position(|id| id == &ev.order_id)
                .expect("resting order is queued at its level");
            level.queue.remove(pos);
        }
        if level.queue.is_empty() {
            levels.remove(&price);
        }
        delta.levels_touched += 1;
        Ok(())
    }

    /// Executes up to `qty` against the level at `price`, oldest order first.
    fn execute_at(&mut self, side: Side, price: i64, qty: Qty) -> Qty {
        let levels = match side {
            Side::Buy => &mut self.bids,
            Side::Sell => &mut self.asks,
        };
        let level = levels.get_mut(&price).expect("best level exists");
        let mut left = qty;
        while !left.is_zero() {
            let Some(front) = level.queue.front() else {
                break;
            };
            let order = self
                .resting
                .get_mut(front)
                .expect("queued order is resting");
            let take = order.remaining.min(left);
            order.remaining -= take;
            level.total -= take;
            left -= take;
            if order.remaining.is_zero() {
                let id = level.queue.pop_front().expect("front exists");
                self.resting.remove(&id);
            }
        }
        if level.queue.is_empty() {
            levels.remove(&price);
        }
        qty - left
    }

    fn rest(&mut self, side: Side, price: i64, qty: Qty, id: String) {
        let level = self.side_mut(side).entry(price).or_default();
        level.total += qty;
        level.queue.push_back(id.clone());
        self.resting.insert(
            id,
            RestingOrder {
                side,
                price_ticks: price,
                remaining: qty,
            },
        );
    }

    fn side(&self, side: Side) -> &BTreeMap<i64, Level> {
        match side {
            Side::Buy => &self.bids,
            Side::Sell => &self.asks,
        }
    }

    fn side_mut(&mut self, side: Side) -> &mut BTreeMap<i64, Level> {
        match side {
            Side::Buy => &mut self.bids,
            Side::Sell => &mut self.asks,
        }
    }

    /// Deterministic `side price size count` listing, ascending by price.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (side, levels) in [(Side::Buy, &self.bids), (Side::Sell, &self.asks)] {
            for (price, level) in levels {
                out.push_str(&format!(
                    "{} {} {} {}\n",
                    side.as_str(),
                    price,
                    level.total,
                    level.queue.len()
                ));
            }
        }
        out
    }

    /// Verifies the structural invariants; returns a description of the first breach.
    pub fn check_invariants(&self) -> Result<(), String> {
        if let (Some(bid), Some(ask)) = (self.best_bid(), self.best_ask()) {
            if bid >= ask {
                return Err(format!("crossed book: bid {bid} >= ask {ask}"));
            }
        }
        let mut seen = 0usize;
        for side in [Side::Buy, Side::Sell] {
            for (&price, level) in self.side(side) {
                if level.total.is_zero() || level.queue.is_empty() {
                    return Err(format!("empty level at {price}"));
                }
                let mut sum = Qty::ZERO;
                for id in &level.queue {
                    let o = self
                        .resting
                        .get(id)
                        .ok_or_else(|| format!("queued id {id} not resting"))?;
                    if o.side != side || o.price_ticks != price || o.remaining.is_zero() {
                        return Err(format!("order {id} inconsistent with level {price}"));
                    }
                    sum += o.remaining;
                }
                if sum != level.total {
                    return Err(format!(
                        "level {price} total {} != sum {}",
                        level.total, sum
                    ));
                }
                seen += level.queue.len();
            }
        }
        if seen != self.resting.len() {
            return Err(format!(
                "{} resting orders but {seen} queued",
                self.resting.len()
            ));
        }
        Ok(())
    }
}

fn view(price_ticks: i64, level: &Level) -> LevelView {
    LevelView {
        price_ticks,
        volume: level.total,
        order_count: level.queue.len() as u32,
    }
}

fn padded_levels(
    levels: impl Iterator<Item = LevelView>,
    depth: usize,
    outward: i64,
) -> Vec<SnapshotLevel> {
    let mut out: Vec<SnapshotLevel> = levels
        .take(depth)
        .map(|l| SnapshotLevel {
            price_ticks: l.price_ticks,
            volume: l.volume,
            padded: false,
        })
        .collect();
    while out.len() < depth {
        let price_ticks = out.last().map_or(0, |l| l.price_ticks + outward);
        out.push(SnapshotLevel {
            price_ticks,
            volume: Qty::ZERO,
            padded: true,
        });
    }
    out
}
