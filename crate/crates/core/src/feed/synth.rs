//! Seeded synthetic order-flow streams.
//!
//! The generator drives a private [`OrderBook`] and builds each event from
//! the book's current state, so it knows in advance whether an event moves
//! the mid-price and in which direction. Events are either "movers" (a limit
//! order improving the spread, a market order clearing the opposite best
//! level, or a cancel of the last order on the opposite best level) or
//! "quiet" events that leave both best prices unchanged.
//!
//! With [`PlantedRule::SideOfLastEvent`] the direction of every mover is the
//! side of the event right before it (buy means up), which gives downstream
//! models a signal that is recoverable exactly.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::{FeedError, OrderEvent, Qty, Side};
use crate::lob::OrderBook;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderMix {
    pub limit: f64,
    pub market: f64,
    pub cancel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantedRule {
    /// Every mid-price move goes up iff the preceding event was a buy.
    SideOfLastEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Total number of records, including the initial ladder.
    pub events: usize,
    pub start_ms: i64,
    /// Mean of the exponential inter-arrival gap; gaps are at least 1 ms.
    pub mean_gap_ms: f64,
    pub tick_size: f64,
    pub initial_mid_ticks: i64,
    /// Price levels per side seeded before random flow starts.
    pub initial_depth: usize,
    pub mix: OrderMix,
    /// Probability that an event is generated as a mid-price mover.
    pub move_probability: f64,
    /// Quiet limit orders rest up to this many ticks behind the best.
    pub max_offset_ticks: i64,
    /// Size granularity in 1e-8 units.
    pub lot_units: u64,
    pub max_lots: u64,
    pub planted: Option<PlantedRule>,
    /// Probability of an aggressive order (a limit priced through the
    /// opposite best, or an oversized market order) with unpredicted effect.
    /// Must be 0 when a rule is planted.
    pub aggressive_probability: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            events: 10_000,
            start_ms: 1_509_753_600_000, // 2017-11-04T00:00:00Z
            mean_gap_ms: 250.0,
            tick_size: 0.01,
            initial_mid_ticks: 700_000,
            initial_depth: 5,
            mix: OrderMix {
                limit: 0.5,
                market: 0.1,
                cancel: 0.4,
            },
            move_probability: 0.2,
            max_offset_ticks: 6,
            lot_units: 1_000_000,
            max_lots: 100,
            planted: None,
            aggressive_probability: 0.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), FeedError> {
        let bad = |m: &str| Err(FeedError::InvalidConfig(m.to_string()));
        if !(self.mean_gap_ms > 0.0 && self.mean_gap_ms.is_finite()) {
            return bad("mean_gap_ms must be positive");
        }
        if !(self.tick_size > 0.0 && self.tick_size.is_finite()) {
            return bad("tick_size must be positive");
        }
        if self.initial_depth < 2 {
            return bad("initial_depth must be at least 2");
        }
        if self.initial_mid_ticks <= self.initial_depth as i64 + 1 {
            return bad("initial_mid_ticks must exceed initial_depth + 1");
        }
        let parts = [self.mix.limit, self.mix.market, self.mix.cancel];
        if parts.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return bad("order mix proportions must be non-negative");
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("order mix proportions must sum to 1");
        }
        if !(0.0..=1.0).contains(&self.move_probability) {
            return bad("move_probability must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.aggressive_probability) {
            return bad("aggressive_probability must lie in [0, 1]");
        }
        if self.planted.is_some() && self.aggressive_probability > 0.0 {
            return bad("aggressive orders cannot be combined with a planted rule");
        }
        if self.max_offset_ticks < 0 {
            return bad("max_offset_ticks must be non-negative");
        }
        if self.lot_units == 0 {
            return bad("lot_units must be positive");
        }
        if self.max_lots < 2 {
            return bad("max_lots must be at least 2");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Direction {
    Up,
    Down,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Effect {
    Move(Direction),
    Quiet,
    Unknown,
}

struct Generator<'a> {
    cfg: &'a GeneratorConfig,
    rng: ChaCha8Rng,
    book: OrderBook,
    resting_ids: Vec<String>,
    seq: u64,
    ts: i64,
    gap: Exp<f64>,
    last_side: Side,
}

/// Produces `config.events` records; identical `(config, seed)` pairs give
/// identical streams.
pub fn generate_synthetic(
    config: &GeneratorConfig,
    seed: u64,
) -> Result<Vec<OrderEvent>, FeedError> {
    config.validate()?;
    let mut gen = Generator {
        cfg: config,
        rng: ChaCha8Rng::seed_from_u64(seed),
        book: OrderBook::new(config.tick_size),
        resting_ids: Vec::new(),
        seq: 0,
        ts: config.start_ms,
        gap: Exp::new(1.0 / config.mean_gap_ms).expect("positive rate"),
        last_side: Side::Buy,
    };
    let mut out = Vec::with_capacity(config.events);
    for ev in gen.ladder() {
        if out.len() == config.events {
            return Ok(out);
        }
        gen.commit(&ev, Effect::Unknown);
        out.push(ev);
    }
    while out.len() < config.events {
        let (ev, expected) = gen.next_event();
        gen.commit(&ev, expected);
        out.push(ev);
    }
    Ok(out)
}

impl Generator<'_> {
    fn ladder(&mut self) -> Vec<OrderEvent> {
        let mid = self.cfg.initial_mid_ticks;
        let mut events = Vec::new();
        for level in 1..=self.cfg.initial_depth as i64 {
            for side in [Side::Buy, Side::Sell] {
                let price = match side {
                    Side::Buy => mid - level,
                    Side::Sell => mid + level,
                };
                let size = self.random_size();
                self.seq += 1;
                events.push(OrderEvent::limit(
                    self.ts,
                    self.seq,
                    side,
                    price,
                    size,
                    format!("o{}", self.seq),
                ));
                self.ts += 1;
            }
        }
        events
    }

    fn commit(&mut self, ev: &OrderEvent, expected: Effect) {
        let delta = self
            .book
            .apply_event(ev)
            .expect("generated events are valid");
        let moved = match (delta.mid_before, delta.mid_after) {
            (Some(a), Some(b)) if b > a => Effect::Move(Direction::Up),
            (Some(a), Some(b)) if b < a => Effect::Move(Direction::Down),
            _ => Effect::Quiet,
        };
        if delta.mid_before.is_some() && expected != Effect::Unknown {
            assert_eq!(
                moved, expected,
                "generator mis-predicted the mid-price effect of {ev:?}"
            );
        }
        if ev.kind == super::EventKind::Limit && self.book.order(&ev.order_id).is_some() {
            self.resting_ids.push(ev.order_id.clone());
        }
        self.last_side = ev.side;
    }

    fn next_event(&mut self) -> (OrderEvent, Effect) {
        self.ts += (self.gap.sample(&mut self.rng).round() as i64).max(1);
        self.seq += 1;
        if self.cfg.aggressive_probability > 0.0
            && self.rng.gen::<f64>() < self.cfg.aggressive_probability
        {
            return (self.aggressive(), Effect::Unknown);
        }
        if self.rng.gen::<f64>() < self.cfg.move_probability {
            let dir = match self.cfg.planted {
                Some(PlantedRule::SideOfLastEvent) => match self.last_side {
                    Side::Buy => Direction::Up,
                    Side::Sell => Direction::Down,
                },
                None => {
                    if self.rng.gen_bool(0.5) {
                        Direction::Up
                    } else {
                        Direction::Down
                    }
                }
            };
            if let Some(ev) = self.mover(dir) {
                return (ev, Effect::Move(dir));
            }
        }
        (self.quiet(), Effect::Quiet)
    }

    fn aggressive(&mut self) -> OrderEvent {
        let side = if self.rng.gen_bool(0.5) {
            Side::Buy
        } else {
            Side::Sell
        };
        let lots = self.rng.gen_range(1..=3 * self.cfg.max_lots);
        let size = Qty(lots * self.cfg.lot_units);
        let through = self.rng.gen_range(0..=self.cfg.max_offset_ticks);
        match self.book.best(side.opposite()) {
            Some(best) if self.rng.gen_bool(0.7) => {
                let price = match side {
                    Side::Buy => best + through,
                    Side::Sell => (best - through).max(1),
                };
                OrderEvent::limit(
                    self.ts,
                    self.seq,
                    side,
                    price,
                    size,
                    format!("o{}", self.seq),
                )
            }
            Some(_) => OrderEvent::market(self.ts, self.seq, side, size, format!("m{}", self.seq)),
            None => self.quiet_limit(),
        }
    }

    fn pick_kind(&mut self, feasible: [bool; 3]) -> Option<usize> {
        let weights = [self.cfg.mix.limit, self.cfg.mix.market, self.cfg.mix.cancel];
        let total: f64 = (0..3).filter(|&k| feasible[k]).map(|k| weights[k]).sum();
        if total <= 0.0 {
            return None;
        }
        let mut x = self.rng.gen::<f64>() * total;
        for k in 0..3 {
            if !feasible[k] {
                continue;
            }
            if x < weights[k] {
                return Some(k);
            }
            x -= weights[k];
        }
        (0..3).rev().find(|&k| feasible[k] && weights[k] > 0.0)
    }

    fn mover(&mut self, dir: Direction) -> Option<OrderEvent> {
        let (bid, ask) = (self.book.best_bid()?, self.book.best_ask()?);
        // Up: raise the bid or remove the best ask. Down mirrors it.
        let (aggressor, target) = match dir {
            Direction::Up => (Side::Buy, Side::Sell),
            Direction::Down => (Side::Sell, Side::Buy),
        };
        let target_best = self.book.levels(target).next()?;
        let target_deep = self.book.depth(target) >= 2;
        let feasible = [
            ask - bid >= 2,
            target_deep,
            target_deep && target_best.order_count == 1,
        ];
        let (ts, seq) = (self.ts, self.seq);
        match self.pick_kind(feasible)? {
            0 => {
                let price = match dir {
                    Direction::Up => bid + 1,
                    Direction::Down => ask - 1,
                };
                let size = self.random_size();
                Some(OrderEvent::limit(
                    ts,
                    seq,
                    aggressor,
                    price,
                    size,
                    format!("o{seq}"),
                ))
            }
            1 => Some(OrderEvent::market(
                ts,
                seq,
                aggressor,
                target_best.volume,
                format!("m{seq}"),
            )),
            _ => {
                let id = self.book.level_orders(target, target_best.price_ticks)[0].to_string();
                Some(OrderEvent::cancel(
                    ts,
                    seq,
                    target,
                    target_best.price_ticks,
                    target_best.volume,
                    id,
                ))
            }
        }
    }

    fn quiet(&mut self) -> OrderEvent {
        let feasible = [true, true, !self.book.is_empty()];
        let kind = self.pick_kind(feasible).unwrap_or(0);
        let attempt = match kind {
            1 => self.quiet_market(),
            2 => self.quiet_cancel(),
            _ => None,
        };
        attempt.unwrap_or_else(|| self.quiet_limit())
    }

    fn quiet_limit(&mut self) -> OrderEvent {
        let side = if self.rng.gen_bool(0.5) {
            Side::Buy
        } else {
            Side::Sell
        };
        let offset = self.rng.gen_range(0..=self.cfg.max_offset_ticks);
        let best = self.book.best(side).unwrap_or_else(|| {
            let anchor = self.book.best(side.opposite());
            match side {
                Side::Buy => anchor.map_or(self.cfg.initial_mid_ticks - 1, |a| a - 1),
                Side::Sell => anchor.map_or(self.cfg.initial_mid_ticks + 1, |b| b + 1),
            }
        });
        let price = match side {
            Side::Buy => (best - offset).max(1),
            Side::Sell => best + offset,
        };
        let size = self.random_size();
        OrderEvent::limit(
            self.ts,
            self.seq,
            side,
            price,
            size,
            format!("o{}", self.seq),
        )
    }

    fn quiet_market(&mut self) -> Option<OrderEvent> {
        let mut sides = [Side::Buy, Side::Sell];
        sides.shuffle(&mut self.rng);
        for side in sides {
            let Some(level) = self.book.levels(side.opposite()).next() else {
                continue;
            };
            let lots = level.volume.units() / self.cfg.lot_units;
            if lots < 2 {
                continue;
            }
            let take = self.rng.gen_range(1..lots);
            let size = Qty(take * self.cfg.lot_units);
            return Some(OrderEvent::market(
                self.ts,
                self.seq,
                side,
                size,
                format!("m{}", self.seq),
            ));
        }
        None
    }

    fn quiet_cancel(&mut self) -> Option<OrderEvent> {
        for _ in 0..8 {
            if self.resting_ids.is_empty() {
                return None;
            }
            let idx = self.rng.gen_range(0..self.resting_ids.len());
            let id = self.resting_ids[idx].clone();
            let Some(order) = self.book.order(&id).cloned() else {
                self.resting_ids.swap_remove(idx);
                continue;
            };
            let level = self
                .book
                .level(order.side, order.price_ticks)
                .expect("order has a level");
            let at_best = self.book.best(order.side) == Some(order.price_ticks);
            let lots = order.remaining.units() / self.cfg.lot_units;
            let sole_at_best = at_best && level.order_count == 1;
            let size = if sole_at_best || self.rng.gen_bool(0.3) {
                if lots < 2 {
                    if sole_at_best {
                        continue;
                    }
                    order.remaining
                } else {
                    Qty(self.rng.gen_range(1..lots) * self.cfg.lot_units)
                }
            } else {
                order.remaining
            };
            return Some(OrderEvent::cancel(
                self.ts,
                self.seq,
                order.side,
                order.price_ticks,
                size,
                id,
            ));
        }
        None
    }

    fn random_size(&mut self) -> Qty {
        Qty(self.rng.gen_range(1..=self.cfg.max_lots) * self.cfg.lot_units)
    }
}
