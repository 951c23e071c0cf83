use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use orderflow::features::{Split, Variant};
use orderflow::stats::{
    daily_market_aggregates, daily_mcc, paired_t_test, slope_regression, universality_drop,
    DailySeries, Prediction,
};

use crate::pipeline::load_events;
use crate::svg::{self, Panel, Series, Style};
use crate::{csv_writer, with_ext, write_csv, write_file, PipelineError, Run};

#[derive(Debug, Deserialize)]
struct PredictionRecord {
    timestamp_ms: i64,
    #[allow(dead_code)]
    seq: u64,
    y: u8,
    yhat: u8,
    #[allow(dead_code)]
    p1: f64,
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    csv::Reader::from_reader(file)
        .deserialize::<PredictionRecord>()
        .map(|r| {
            let r = r.with_context(|| format!("reading {}", path.display()))?;
            Ok(Prediction {
                timestamp_ms: r.timestamp_ms,
                actual: r.y,
                predicted: r.yhat,
            })
        })
        .collect()
}

/// Key: (variant, model pair, data pair).
type SeriesMap = BTreeMap<(Variant, String, String), DailySeries>;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub dir: PathBuf,
    pub series: usize,
    pub table1_rows: usize,
    pub table2_rows: usize,
    pub paired_rows: usize,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Builds the slope, drop and paired-test tables plus the daily MCC and
/// market-activity figures from whatever prediction sets exist for `split`.
pub fn cmd_report(run: &Run, split: Split) -> Result<ReportSummary> {
    let cfg = run.config();
    let pairs = run.pair_names(None)?;
    let mut series = SeriesMap::new();
    for &v in &cfg.variants {
        for m in &pairs {
            for d in &pairs {
                let path = with_ext(&run.prediction_stem(m, v, d, split), "csv");
                if path.is_file() {
                    series.insert(
                        (v, m.clone(), d.clone()),
                        daily_mcc(&read_predictions(&path)?),
                    );
                }
            }
        }
    }
    if series.is_empty() {
        return Err(PipelineError::MissingSeries(format!(
            "no {} prediction sets under {}",
            split.as_str(),
            run.out.join("predictions").display()
        ))
        .into());
    }
    let dir = run.report_dir();
    let native = |v: Variant, p: &str| series.get(&(v, p.to_string(), p.to_string()));
    let mut text = String::new();

    // Table 1: stationarity slope of the native daily MCC.
    let mut t1 = csv_writer();
    t1.write_record([
        "variant",
        "pair",
        "days",
        "mean_mcc",
        "slope",
        "slope_se",
        "t",
        "p",
        "exact_fit",
        "note",
    ])?;
    let mut table1_rows = 0;
    let _ = writeln!(text, "Daily MCC slope ({} split)", split.as_str());
    for &v in &cfg.variants {
        for p in &pairs {
            let Some(s) = native(v, p) else { continue };
            table1_rows += 1;
            let mean = (!s.is_empty()).then(|| s.mean());
            match slope_regression(s) {
                Ok(r) => {
                    t1.write_record([
                        v.to_string(),
                        p.clone(),
                        s.len().to_string(),
                        opt(mean),
                        r.slope.to_string(),
                        r.slope_se.to_string(),
                        r.t.to_string(),
                        r.p.to_string(),
                        r.exact_fit.to_string(),
                        String::new(),
                    ])?;
                    let _ = writeln!(
                        text,
                        "  {v:<9} {p:<12} days {:>3}  slope {:+.4e}  p {:.4}",
                        s.len(),
                        r.slope,
                        r.p
                    );
                }
                Err(e) => {
                    t1.write_record([
                        v.to_string(),
                        p.clone(),
                        s.len().to_string(),
                        opt(mean),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        e.to_string(),
                    ])?;
                    let _ = writeln!(text, "  {v:<9} {p:<12} days {:>3}  {e}", s.len());
                }
            }
        }
    }
    write_csv(&dir.join("table1.csv"), t1)?;

    // Table 2: drop from the test pair's own model to a model trained elsewhere.
    let mut t2 = csv_writer();
    t2.write_record([
        "variant",
        "trained_on",
        "tested_on",
        "mcc_native",
        "mcc_transfer",
        "drop_pct",
        "note",
    ])?;
    let mut table2_rows = 0;
    let _ = writeln!(text, "\nTransfer drop (mean daily MCC)");
    for &v in &cfg.variants {
        for d in &pairs {
            let Some(base) = native(v, d) else { continue };
            for m in pairs.iter().filter(|m| *m != d) {
                let Some(cross) = series.get(&(v, m.clone(), d.clone())) else {
                    continue;
                };
                table2_rows += 1;
                let (a, b) = (base.mean(), cross.mean());
                let (drop, note) = match universality_drop(a, b) {
                    Ok(x) => (Some(x), String::new()),
                    Err(e) => (None, e.to_string()),
                };
                t2.write_record([
                    v.to_string(),
                    m.clone(),
                    d.clone(),
                    a.to_string(),
                    b.to_string(),
                    opt(drop),
                    note.clone(),
                ])?;
                let shown = drop.map_or(note, |x| format!("{x:.3}%"));
                let _ = writeln!(text, "  {v:<9} {m} -> {d}: {shown}");
            }
        }
    }
    write_csv(&dir.join("table2.csv"), t2)?;

    // Paired t-tests: order flow against each benchmark on the same days.
    let mut pt = csv_writer();
    pt.write_record([
        "pair",
        "model_a",
        "model_b",
        "days",
        "mean_diff",
        "t",
        "df",
        "p",
        "zero_variance",
        "note",
    ])?;
    let mut paired_rows = 0;
    let _ = writeln!(text, "\nPaired t-tests (daily MCC)");
    for p in &pairs {
        let Some(a) = native(Variant::OrderFlow, p) else {
            continue;
        };
        for b_variant in [Variant::Bench1, Variant::Bench2] {
            let Some(b) = native(b_variant, p) else {
                continue;
            };
            paired_rows += 1;
            let head = [
                p.clone(),
                Variant::OrderFlow.to_string(),
                b_variant.to_string(),
                a.len().to_string(),
            ];
            match paired_t_test(a, b) {
                Ok(r) => {
                    pt.write_record(head.into_iter().chain([
                        r.mean_diff.to_string(),
                        r.t.to_string(),
                        r.df.to_string(),
                        r.p.to_string(),
                        r.zero_variance.to_string(),
                        String::new(),
                    ]))?;
                    let _ = writeln!(
                        text,
                        "  {p:<12} orderflow vs {b_variant}: diff {:+.4} p {:.4}",
                        r.mean_diff, r.p
                    );
                }
                Err(e) => {
                    pt.write_record(head.into_iter().chain([
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        e.to_string(),
                    ]))?;
                    let _ = writeln!(text, "  {p:<12} orderflow vs {b_variant}: {e}");
                }
            }
        }
    }
    write_csv(&dir.join("paired_tests.csv"), pt)?;

    // Figure 1: native daily MCC per pair, one line per variant.
    for p in &pairs {
        let mut w = csv_writer();
        w.write_record(["variant", "date", "mcc", "degenerate"])?;
        let mut lines = Vec::new();
        for &v in &cfg.variants {
            let Some(s) = native(v, p) else { continue };
            for pt in &s.points {
                w.write_record([
                    v.to_string(),
                    pt.date.to_string(),
                    pt.value.to_string(),
                    pt.degenerate.to_string(),
                ])?;
            }
            lines.push(Series {
                name: v.to_string(),
                points: s.points.iter().map(|q| (q.date, q.value)).collect(),
            });
        }
        if lines.is_empty() {
            continue;
        }
        write_csv(&dir.join(format!("fig1_{p}.csv")), w)?;
        let panel = Panel {
            title: format!("{p}: daily MCC, {} split", split.as_str()),
            y_label: "MCC".into(),
            style: Style::Line,
            series: lines,
        };
        write_file(
            &dir.join(format!("fig1_{p}.svg")),
            svg::render(&format!("Daily MCC, {p}"), &[panel]).as_bytes(),
        )?;
    }

    // Figure 2: daily volume and lagged mid change from the raw stream.
    for p in &pairs {
        let input = run.loaded.resolve(&cfg.pair(p)?.path);
        let agg = daily_market_aggregates(&load_events(&input)?, cfg.tick_size)
            .with_context(|| format!("aggregating {}", input.display()))?;
        let diffs: BTreeMap<_, _> = agg
            .lagged_mid_diff
            .points
            .iter()
            .map(|q| (q.date, q.value))
            .collect();
        let mut w = csv_writer();
        w.write_record(["date", "volume", "lagged_mid_diff"])?;
        for q in &agg.volume.points {
            w.write_record([
                q.date.to_string(),
                q.value.to_string(),
                opt(diffs.get(&q.date).copied()),
            ])?;
        }
        write_csv(&dir.join(format!("fig2_{p}.csv")), w)?;
        let panels = [
            Panel {
                title: "traded volume".into(),
                y_label: "base units".into(),
                style: Style::Bars,
                series: vec![Series {
                    name: "volume".into(),
                    points: agg
                        .volume
                        .points
                        .iter()
                        .map(|q| (q.date, q.value))
                        .collect(),
                }],
            },
            Panel {
                title: "mid-price change vs previous day".into(),
                y_label: "price".into(),
                style: Style::Bars,
                series: vec![Series {
                    name: "lagged diff".into(),
                    points: diffs.into_iter().collect(),
                }],
            },
        ];
        write_file(
            &dir.join(format!("fig2_{p}.svg")),
            svg::render(&format!("Market activity, {p}"), &panels).as_bytes(),
        )?;
    }

    write_file(&dir.join("report.txt"), text.as_bytes())?;
    Ok(ReportSummary {
        dir,
        series: series.len(),
        table1_rows,
        table2_rows,
        paired_rows,
    })
}
