//! Slow, obviously-correct reference implementations used as oracles by the
//! test suites and the `selftest` command. Nothing here is on a production
//! path.

use crate::feed::{EventKind, OrderEvent, Side};
use crate::lob::OrderBook;

#[derive(Debug, Clone)]
struct NaiveOrder {
    id: String,
    side: Side,
    price: i64,
    remaining: u64,
}

/// Order book kept as one flat list of resting orders in arrival order.
///
/// Every query is a linear scan; matching repeatedly searches for the best
/// opposing order.
#[derive(Debug, Clone, Default)]
pub struct NaiveBook {
    orders: Vec<NaiveOrder>,
}

impl NaiveBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn best(&self, side: Side) -> Option<i64> {
        let prices = self
            .orders
            .iter()
            .filter(|o| o.side == side)
            .map(|o| o.price);
        match side {
            Side::Buy => prices.max(),
            Side::Sell => prices.min(),
        }
    }

    /// Best bid plus best ask, i.e. twice the mid-price.
    pub fn mid_half_ticks(&self) -> Option<i64> {
        Some(self.best(Side::Buy)? + self.best(Side::Sell)?)
    }

    /// `(price, volume units, order count)` per level, best first.
    pub fn levels(&self, side: Side) -> Vec<(i64, u64, u32)> {
        let mut prices: Vec<i64> = self
            .orders
            .iter()
            .filter(|o| o.side == side)
            .map(|o| o.price)
            .collect();
        prices.sort_unstable();
        prices.dedup();
        if side == Side::Buy {
            prices.reverse();
        }
        prices
            .into_iter()
            .map(|p| {
                let at: Vec<&NaiveOrder> = self
                    .orders
                    .iter()
                    .filter(|o| o.side == side && o.price == p)
                    .collect();
                (p, at.iter().map(|o| o.remaining).sum(), at.len() as u32)
            })
            .collect()
    }

    /// Applies an event. Rejected events leave the book untouched.
    pub fn apply(&mut self, ev: &OrderEvent) -> Result<u64, String> {
        let size = ev.size.units();
        match ev.kind {
            EventKind::Limit => {
                let price = ev.price_ticks.ok_or("limit without price")?;
                if self.orders.iter().any(|o| o.id == ev.order_id) {
                    return Err("duplicate id".into());
                }
                let limit = Some(price);
                let (executed, left) = self.take(ev.side, size, limit);
                if left > 0 {
                    self.orders.push(NaiveOrder {
                        id: ev.order_id.clone(),
                        side: ev.side,
                        price,
                        remaining: left,
                    });
                }
                Ok(executed)
            }
            EventKind::Market => {
                if self.best(ev.side.opposite()).is_none() {
                    return Err("market order on empty side".into());
                }
                Ok(self.take(ev.side, size, None).0)
            }
            EventKind::Cancel => {
                let idx = self
                    .orders
                    .iter()
                    .position(|o| o.id == ev.order_id)
                    .ok_or("unknown order id")?;
                let o = &mut self.orders[idx];
                if o.side != ev.side || Some(o.price) != ev.price_ticks {
                    return Err("cancel mismatch".into());
                }
                if size > o.remaining {
                    return Err("over-cancel".into());
                }
                o.remaining -= size;
                if o.remaining == 0 {
                    self.orders.remove(idx);
                }
                Ok(0)
            }
        }
    }

    fn take(&mut self, aggressor: Side, mut size: u64, limit: Option<i64>) -> (u64, u64) {
        let mut executed = 0;
        while size > 0 {
            let Some(best) = self.best(aggressor.opposite()) else {
                break;
            };
            let crosses = match (aggressor, limit) {
                (_, None) => true,
                (Side::Buy, Some(p)) => best <= p,
                (Side::Sell, Some(p)) => best >= p,
            };
            if !crosses {
                break;
            }
            // Oldest order at the best price comes first in the list.
            let idx = self
                .orders
                .iter()
                .position(|o| o.side == aggressor.opposite() && o.price == best)
                .expect("best price has an order");
            let fill = self.orders[idx].remaining.min(size);
            self.orders[idx].remaining -= fill;
            size -= fill;
            executed += fill;
            if self.orders[idx].remaining == 0 {
                self.orders.remove(idx);
            }
        }
        (executed, size)
    }

    pub fn remaining(&self, id: &str) -> Option<u64> {
        self.orders.iter().find(|o| o.id == id).map(|o| o.remaining)
    }

    pub fn order_count(&self) -> usize {
        self.orders.len()
    }
}

/// Compares every observable of the production book against the reference.
pub fn compare_books(book: &OrderBook, naive: &NaiveBook) -> Result<(), String> {
    for side in [Side::Buy, Side::Sell] {
        if book.best(side) != naive.best(side) {
            return Err(format!(
                "{side:?} best {:?} vs {:?}",
                book.best(side),
                naive.best(side)
            ));
        }
        let got: Vec<(i64, u64, u32)> = book
            .levels(side)
            .map(|l| (l.price_ticks, l.volume.units(), l.order_count))
            .collect();
        let want = naive.levels(side);
        if got != want {
            return Err(format!("{side:?} levels differ: {got:?} vs {want:?}"));
        }
    }
    let mid = book.mid_price().ok().map(|m| m.half_ticks());
    if mid != naive.mid_half_ticks() {
        return Err(format!("mid {mid:?} vs {:?}", naive.mid_half_ticks()));
    }
    if book.order_count() != naive.order_count() {
        return Err(format!(
            "{} vs {} resting orders",
            book.order_count(),
            naive.order_count()
        ));
    }
    Ok(())
}

/// Replays `events` through both books, comparing after every event.
/// Returns the number of events compared.
pub fn book_equivalence(events: &[OrderEvent]) -> Result<usize, String> {
    let mut book = OrderBook::default();
    let mut naive = NaiveBook::new();
    for (i, ev) in events.iter().enumerate() {
        let a = book.apply_event(ev);
        let b = naive.apply(ev);
        match (&a, &b) {
            (Ok(d), Ok(executed)) if d.executed.units() == *executed => {}
            (Err(_), Err(_)) => {}
            _ => return Err(format!("event {i}: outcomes differ: {a:?} vs {b:?}")),
        }
        compare_books(&book, &naive).map_err(|e| format!("event {i} (seq {}): {e}", ev.seq))?;
    }
    Ok(events.len())
}

/// MCC as the Pearson correlation of the expanded label and prediction
/// vectors. Returns 0 when either vector is constant.
pub fn mcc_by_correlation(tp: u64, tn: u64, fp: u64, fn_: u64) -> f64 {
    let mut ys: Vec<f64> = Vec::new();
    let mut ps: Vec<f64> = Vec::new();
    for (y, p, n) in [
        (1.0, 1.0, tp),
        (0.0, 0.0, tn),
        (0.0, 1.0, fp),
        (1.0, 0.0, fn_),
    ] {
        for _ in 0..n {
            ys.push(y);
            ps.push(p);
        }
    }
    let n = ys.len() as f64;
    let my = ys.iter().sum::<f64>() / n;
    let mp = ps.iter().sum::<f64>() / n;
    let cov: f64 = ys.iter().zip(&ps).map(|(y, p)| (y - my) * (p - mp)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let vp: f64 = ps.iter().map(|p| (p - mp).powi(2)).sum();
    if vy == 0.0 || vp == 0.0 {
        0.0
    } else {
        cov / (vy * vp).sqrt()
    }
}

/// Student-t CDF for integer degrees of freedom by adaptive Simpson
/// quadrature of the density. The normalizing constant uses the exact
/// gamma-ratio recursion for integer `df`.
pub fn t_cdf_quadrature(t: f64, df: u32) -> f64 {
    assert!(df >= 1);
    let nu = df as f64;
    // r(nu) = Gamma((nu+1)/2) / Gamma(nu/2), with r(nu+2) = r(nu) (nu+1)/nu.
    let mut ratio = if df % 2 == 1 {
        1.0 / std::f64::consts::PI.sqrt()
    } else {
        std::f64::consts::PI.sqrt() / 2.0
    };
    let mut k = if df % 2 == 1 { 1.0 } else { 2.0 };
    while k < nu {
        ratio *= (k + 1.0) / k;
        k += 2.0;
    }
    let norm = ratio / (nu * std::f64::consts::PI).sqrt();
    let density = |x: f64| norm * (1.0 + x * x / nu).powf(-(nu + 1.0) / 2.0);
    let half = adaptive_simpson(&density, 0.0, t.abs(), 1e-15, 60);
    if t >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    if a == b {
        return 0.0;
    }
    let c = 0.5 * (a + b);
    let (fa, fb, fc) = (f(a), f(b), f(c));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    simpson_step(f, a, b, fa, fb, fc, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fc: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let c = 0.5 * (a + b);
    let (d, e) = (0.5 * (a + c), 0.5 * (c + b));
    let (fd, fe) = (f(d), f(e));
    let left = (c - a) / 6.0 * (fa + 4.0 * fd + fc);
    let right = (b - c) / 6.0 * (fc + 4.0 * fe + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, c, fa, fc, fd, left, tol / 2.0, depth - 1)
        + simpson_step(f, c, b, fc, fb, fe, right, tol / 2.0, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_matches_closed_forms() {
        // df = 1 is Cauchy: 1/2 + atan(t)/pi
        for t in [-3.0, -0.5, 0.0, 1.0, 2.5] {
            let want = 0.5 + f64::atan(t) / std::f64::consts::PI;
            assert!((t_cdf_quadrature(t, 1) - want).abs() < 1e-12, "t={t}");
        }
        // df = 2: 1/2 + t / (2 sqrt(2 + t^2))
        for t in [-2.0f64, 0.3, 4.0] {
            let want = 0.5 + t / (2.0 * (2.0 + t * t).sqrt());
            assert!((t_cdf_quadrature(t, 2) - want).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn correlation_mcc_basics() {
        assert!((mcc_by_correlation(5, 5, 0, 0) - 1.0).abs() < 1e-15);
        assert_eq!(mcc_by_correlation(3, 3, 3, 3), 0.0);
        assert_eq!(mcc_by_correlation(3, 0, 3, 0), 0.0);
    }
}
