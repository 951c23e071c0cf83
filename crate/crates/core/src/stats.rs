//! Evaluation statistics: MCC, per-date grouping, slope regressions, paired
//! t-tests, cross-pair drops and daily market aggregates.

use std::collections::BTreeMap;

use chrono::{DateTime, NaiveDate};
use statrs::function::beta::beta_reg;

use crate::feed::OrderEvent;
use crate::lob::{BookError, OrderBook};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("need at least {need} points, got {n}")]
    TooFewPoints { n: usize, need: usize },
    #[error("all observations share one x value")]
    DegenerateX,
    #[error("dates must be strictly increasing")]
    UnorderedDates,
    #[error("degrees of freedom must be positive")]
    InvalidDf,
    #[error("paired series cover different dates")]
    DateMismatch,
    #[error("base MCC {0} is not positive")]
    NonPositiveBase(f64),
    #[error("event seq {seq}: {source}")]
    Book {
        seq: u64,
        #[source]
        source: BookError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn record(&mut self, actual: bool, predicted: bool) {
        match (actual, predicted) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// True when a margin of the table is empty and MCC is undefined.
    pub fn is_degenerate(&self) -> bool {
        let (tp, tn, fp, fn_) = (self.tp, self.tn, self.fp, self.fn_);
        tp + fp == 0 || tp + fn_ == 0 || tn + fp == 0 || tn + fn_ == 0
    }

    /// MCC, with 0 for an undefined (or empty) table.
    pub fn mcc(&self) -> f64 {
        if self.is_degenerate() {
            return 0.0;
        }
        let (tp, tn, fp, fn_) = (
            self.tp as i128,
            self.tn as i128,
            self.fp as i128,
            self.fn_ as i128,
        );
        let num = (tp * tn - fp * fn_) as f64;
        let den =
            (((tp + fp) * (tp + fn_)) as f64).sqrt() * (((tn + fp) * (tn + fn_)) as f64).sqrt();
        (num / den).clamp(-1.0, 1.0)
    }
}

pub fn mcc(cm: &ConfusionMatrix) -> Result<f64, StatsError> {
    if cm.total() == 0 {
        return Err(StatsError::EmptyMatrix);
    }
    Ok(cm.mcc())
}

pub fn utc_date(timestamp_ms: i64) -> NaiveDate {
    DateTime::from_timestamp_millis(timestamp_ms)
        .expect("timestamp within chrono range")
        .date_naive()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DailyPoint {
    pub date: NaiveDate,
    pub value: f64,
    /// Set when the value is a convention rather than a computed statistic.
    pub degenerate: bool,
}

/// `(date, value)` pairs with strictly increasing dates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DailySeries {
    pub points: Vec<DailyPoint>,
}

impl DailySeries {
    pub fn from_pairs(
        pairs: impl IntoIterator<Item = (NaiveDate, f64)>,
    ) -> Result<Self, StatsError> {
        let points: Vec<DailyPoint> = pairs
            .into_iter()
            .map(|(date, value)| DailyPoint {
                date,
                value,
                degenerate: false,
            })
            .collect();
        if points.windows(2).any(|w| w[0].date >= w[1].date) {
            return Err(StatsError::UnorderedDates);
        }
        Ok(DailySeries { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.points.iter().map(|p| p.date).collect()
    }

    pub fn mean(&self) -> f64 {
        self.points.iter().map(|p| p.value).sum::<f64>() / self.points.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    pub timestamp_ms: i64,
    pub actual: u8,
    pub predicted: u8,
}

/// One MCC per UTC date; undefined dates get 0 and the degenerate flag.
pub fn daily_mcc(predictions: &[Prediction]) -> DailySeries {
    let mut by_day: BTreeMap<NaiveDate, ConfusionMatrix> = BTreeMap::new();
    for p in predictions {
        by_day
            .entry(utc_date(p.timestamp_ms))
            .or_default()
            .record(p.actual == 1, p.predicted == 1);
    }
    DailySeries {
        points: by_day
            .into_iter()
            .map(|(date, cm)| DailyPoint {
                date,
                value: cm.mcc(),
                degenerate: cm.is_degenerate(),
            })
            .collect(),
    }
}

/// Student-t CDF through the regularized incomplete beta function.
pub fn t_cdf(t: f64, df: u32) -> Result<f64, StatsError> {
    if df == 0 {
        return Err(StatsError::InvalidDf);
    }
    if t == 0.0 {
        return Ok(0.5);
    }
    let tail = 0.5 * t_two_sided_p(t, df)?;
    Ok(if t > 0.0 { 1.0 - tail } else { tail })
}

/// `P(|T| ≥ |t|)`, computed directly rather than as `2 (1 − cdf)` so that
/// small p-values keep their relative precision.
pub fn t_two_sided_p(t: f64, df: u32) -> Result<f64, StatsError> {
    if df == 0 {
        return Err(StatsError::InvalidDf);
    }
    if t.is_infinite() {
        return Ok(0.0);
    }
    let nu = df as f64;
    let x = nu / (nu + t * t);
    Ok(beta_reg(nu / 2.0, 0.5, x).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionResult {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub t: f64,
    pub p: f64,
    pub n: usize,
    /// Residuals vanish: the standard error is zero and `p` is 0 for a
    /// sloped line or 1 for a flat one.
    pub exact_fit: bool,
}

/// Ordinary least squares of `y` on `x` with a t-test on the slope.
pub fn ols(x: &[f64], y: &[f64]) -> Result<RegressionResult, StatsError> {
    let n = x.len();
    if n < 3 || y.len() != n {
        return Err(StatsError::TooFewPoints {
            n: n.min(y.len()),
            need: 3,
        });
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(StatsError::DegenerateX);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let df = n - 2;
    let scale = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let exact_fit = (sse / nf).sqrt() <= 1e-12 * scale;
    if exact_fit {
        let flat = slope.abs() * (sxx / nf).sqrt() <= 1e-12 * scale;
        return Ok(RegressionResult {
            slope: if flat { 0.0 } else { slope },
            intercept,
            slope_se: 0.0,
            t: if flat {
                0.0
            } else {
                slope.signum() * f64::INFINITY
            },
            p: if flat { 1.0 } else { 0.0 },
            n,
            exact_fit: true,
        });
    }
    let slope_se = (sse / df as f64 / sxx).sqrt();
    let t = slope / slope_se;
    Ok(RegressionResult {
        slope,
        intercept,
        slope_se,
        t,
        p: t_two_sided_p(t, df as u32)?,
        n,
        exact_fit: false,
    })
}

/// Regression of a daily series on its calendar-day index counted from the
/// first date.
pub fn slope_regression(series: &DailySeries) -> Result<RegressionResult, StatsError> {
    if series.points.windows(2).any(|w| w[0].date >= w[1].date) {
        return Err(StatsError::UnorderedDates);
    }
    let first = series
        .points
        .first()
        .ok_or(StatsError::TooFewPoints { n: 0, need: 3 })?
        .date;
    let x: Vec<f64> = series
        .points
        .iter()
        .map(|p| (p.date - first).num_days() as f64)
        .collect();
    ols(&x, &series.values())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTest {
    pub mean_diff: f64,
    pub t: f64,
    pub df: u32,
    pub p: f64,
    /// Every difference is the same; `p` is 0 for a nonzero difference and
    /// 1 for none.
    pub zero_variance: bool,
}

/// Two-sided paired t-test on the per-date differences `a − b`.
pub fn paired_t_test(a: &DailySeries, b: &DailySeries) -> Result<PairedTest, StatsError> {
    if a.dates() != b.dates() {
        return Err(StatsError::DateMismatch);
    }
    let n = a.len();
    if n < 2 {
        return Err(StatsError::TooFewPoints { n, need: 2 });
    }
    let d: Vec<f64> = a
        .points
        .iter()
        .zip(&b.points)
        .map(|(x, y)| x.value - y.value)
        .collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    let df = (n - 1) as u32;
    let max_abs = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if sd <= 1e-12 * max_abs || max_abs == 0.0 {
        let none = max_abs == 0.0;
        return Ok(PairedTest {
            mean_diff: mean,
            t: if none {
                0.0
            } else {
                mean.signum() * f64::INFINITY
            },
            df,
            p: if none { 1.0 } else { 0.0 },
            zero_variance: true,
        });
    }
    let t = mean / (sd / nf.sqrt());
    Ok(PairedTest {
        mean_diff: mean,
        t,
        df,
        p: t_two_sided_p(t, df)?,
        zero_variance: false,
    })
}

/// Percentage drop from the same-pair MCC to the cross-pair MCC.
pub fn universality_drop(mcc_same: f64, mcc_cross: f64) -> Result<f64, StatsError> {
    if !(mcc_same > 0.0) {
        return Err(StatsError::NonPositiveBase(mcc_same));
    }
    Ok(100.0 * (mcc_same - mcc_cross) / mcc_same)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketAggregates {
    /// Executed size per date, in base units.
    pub volume: DailySeries,
    /// Last mid of the date minus last mid of the previous date, in price
    /// units. Starts at the second date that has a mid.
    pub lagged_mid_diff: DailySeries,
}

/// Replays the stream and aggregates executions and closing mids per date.
pub fn daily_market_aggregates(
    events: &[OrderEvent],
    tick_size: f64,
) -> Result<MarketAggregates, StatsError> {
    let mut book = OrderBook::new(tick_size);
    let mut volume: BTreeMap<NaiveDate, f64> = BTreeMap::new();
    let mut closing: BTreeMap<NaiveDate, i64> = BTreeMap::new();
    for ev in events {
        let delta = match book.apply_event(ev) {
            Ok(delta) => delta,
            // nothing executes; the dataset builder drops these too
            Err(BookError::MarketOnEmptyBook) => continue,
            Err(source) => {
                return Err(StatsError::Book {
                    seq: ev.seq,
                    source,
                })
            }
        };
        let date = utc_date(ev.timestamp_ms);
        *volume.entry(date).or_insert(0.0) += delta.executed.as_f64();
        if let Some(mid) = delta.mid_after {
            closing.insert(date, mid.half_ticks());
        }
    }
    let volume = DailySeries {
        points: volume
            .into_iter()
            .map(|(date, value)| DailyPoint {
                date,
                value,
                degenerate: false,
            })
            .collect(),
    };
    let closes: Vec<(NaiveDate, i64)> = closing.into_iter().collect();
    let lagged_mid_diff = DailySeries {
        points: closes
            .windows(2)
            .map(|w| DailyPoint {
                date: w[1].0,
                value: (w[1].1 - w[0].1) as f64 / 2.0 * tick_size,
                degenerate: false,
            })
            .collect(),
    };
    Ok(MarketAggregates {
        volume,
        lagged_mid_diff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feed::{Qty, Side};

    fn day(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2017, 11, d).unwrap()
    }

    #[test]
    fn mcc_conventions() {
        let cm = ConfusionMatrix {
            tp: 4,
            tn: 5,
            fp: 0,
            fn_: 0,
        };
        assert_eq!(mcc(&cm).unwrap(), 1.0);
        let k = ConfusionMatrix {
            tp: 3,
            tn: 3,
            fp: 3,
            fn_: 3,
        };
        assert_eq!(k.mcc(), 0.0);
        assert_eq!(
            mcc(&ConfusionMatrix::default()),
            Err(StatsError::EmptyMatrix)
        );
        let one_class = ConfusionMatrix {
            tp: 5,
            fp: 2,
            ..Default::default()
        };
        assert_eq!(one_class.mcc(), 0.0);
        assert!(one_class.is_degenerate());
    }

    #[test]
    fn t_cdf_basics() {
        assert_eq!(t_cdf(0.0, 7).unwrap(), 0.5);
        assert!((t_cdf(1.0, 1).unwrap() - 0.75).abs() < 1e-12);
        assert!((t_cdf(1.96, 1000).unwrap() - 0.975).abs() < 1e-3);
        assert_eq!(t_cdf(1.0, 0), Err(StatsError::InvalidDf));
        for t in [0.1, 0.7, 2.0, 9.0] {
            assert!((t_cdf(-t, 5).unwrap() - (1.0 - t_cdf(t, 5).unwrap())).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_and_exact_lines() {
        let flat = DailySeries::from_pairs((1..=5).map(|d| (day(d), 0.3))).unwrap();
        let r = slope_regression(&flat).unwrap();
        assert_eq!((r.slope, r.t, r.p), (0.0, 0.0, 1.0));
        assert!(r.exact_fit);
        let line =
            DailySeries::from_pairs((1..=5).map(|d| (day(d), 0.5 - 0.25 * d as f64))).unwrap();
        let r = slope_regression(&line).unwrap();
        assert!((r.slope + 0.25).abs() < 1e-12);
        assert!(r.exact_fit);
        assert_eq!(r.p, 0.0);
    }

    #[test]
    fn regression_errors() {
        let two = DailySeries::from_pairs([(day(1), 0.1), (day(2), 0.2)]).unwrap();
        assert!(matches!(
            slope_regression(&two),
            Err(StatsError::TooFewPoints { .. })
        ));
        assert_eq!(
            ols(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]),
            Err(StatsError::DegenerateX)
        );
        assert_eq!(
            DailySeries::from_pairs([(day(2), 0.1), (day(1), 0.2)]),
            Err(StatsError::UnorderedDates)
        );
    }

    #[test]
    fn day_index_counts_calendar_gaps() {
        // Missing 3rd: x = 0, 1, 3
        let s = DailySeries::from_pairs([(day(1), 0.0), (day(2), 1.0), (day(4), 3.0)]).unwrap();
        let r = slope_regression(&s).unwrap();
        assert!((r.slope - 1.0).abs() < 1e-12);
    }

    #[test]
    fn paired_test_edges() {
        let a = DailySeries::from_pairs((1..=4).map(|d| (day(d), d as f64 * 0.1))).unwrap();
        let same = paired_t_test(&a, &a).unwrap();
        assert!(same.zero_variance);
        assert_eq!(same.p, 1.0);
        let shifted =
            DailySeries::from_pairs(a.points.iter().map(|p| (p.date, p.value + 0.05))).unwrap();
        let r = paired_t_test(&shifted, &a).unwrap();
        assert!(r.zero_variance);
        assert_eq!(r.p, 0.0);
        let short = DailySeries::from_pairs([(day(1), 0.0), (day(2), 0.0), (day(3), 0.0)]).unwrap();
        assert_eq!(paired_t_test(&a, &short), Err(StatsError::DateMismatch));
    }

    #[test]
    fn drops() {
        assert!((universality_drop(0.40, 0.36).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(universality_drop(0.3, 0.3).unwrap(), 0.0);
        assert!(universality_drop(0.0, 0.1).is_err());
        let a = universality_drop(0.5, 0.2).unwrap();
        let b = universality_drop(0.5 * 3.7, 0.2 * 3.7).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn daily_grouping() {
        let d1 = 1_509_753_600_000; // 2017-11-04T00:00Z
        let d2 = d1 + 86_400_000;
        let preds = vec![
            Prediction {
                timestamp_ms: d1 + 5,
                actual: 1,
                predicted: 0,
            },
            Prediction {
                timestamp_ms: d1 + 6,
                actual: 0,
                predicted: 0,
            },
            Prediction {
                timestamp_ms: d2,
                actual: 1,
                predicted: 1,
            },
            Prediction {
                timestamp_ms: d2 + 1,
                actual: 0,
                predicted: 0,
            },
        ];
        let s = daily_mcc(&preds);
        assert_eq!(s.len(), 2);
        assert!(s.points[0].degenerate);
        assert_eq!(s.points[1].value, 1.0);
        assert!(!s.points[1].degenerate);
        assert_eq!(
            s.points[1].date,
            NaiveDate::from_ymd_opt(2017, 11, 5).unwrap()
        );
    }

    #[test]
    fn market_aggregates_two_days() {
        let d1 = 1_509_753_600_000;
        let d2 = d1 + 86_400_000;
        let events = vec![
            OrderEvent::limit(d1, 1, Side::Buy, 99, Qty(100), "b1"),
            OrderEvent::limit(d1 + 1, 2, Side::Sell, 101, Qty(100), "a1"),
            OrderEvent::limit(d2, 3, Side::Sell, 105, Qty(100), "a2"),
            OrderEvent::cancel(d2 + 1, 4, Side::Sell, 101, Qty(100), "a1"),
            OrderEvent::limit(d2 + 2, 5, Side::Buy, 101, Qty(100), "b2"),
            OrderEvent::market(d2 + 3, 6, Side::Buy, Qty(40), "m"),
        ];
        let agg = daily_market_aggregates(&events, 1.0).unwrap();
        assert_eq!(agg.volume.values(), vec![0.0, 40.0 / 1e8]);
        // mids 100 then 103
        assert_eq!(agg.lagged_mid_diff.values(), vec![3.0]);
        assert_eq!(agg.lagged_mid_diff.points[0].date, utc_date(d2));
    }
}
