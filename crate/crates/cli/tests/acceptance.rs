//! Acceptance suite: one line per criterion, then a nonzero exit if any failed.
//!
//! Tolerances are pinned here and nowhere else.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use orderflow::features::{
    split_by_date, DatasetBuilder, NormStats, Split, SplitRanges, TimeRange, Variant, WarmUp,
};
use orderflow::feed::{generate_synthetic, GeneratorConfig, PlantedRule};
use orderflow::net::gradcheck::gradcheck_suite;
use orderflow::net::{
    evaluate, fit, loss, softmax, DatasetSequences, Hyper, InputSpec, LabelledSequence,
    ModelConfig, ModelParams, Sequence, SequenceSource,
};
use orderflow::reference::{book_equivalence, mcc_by_correlation, t_cdf_quadrature};
use orderflow::stats::{ols, paired_t_test, slope_regression, t_cdf, ConfusionMatrix, DailySeries};
use orderflow_cli::{cmd_build, cmd_evaluate, cmd_report, cmd_train, Run};

const LOB_EVENTS: usize = 100_000;
const LOB_BUDGET: Duration = Duration::from_secs(60);
const GRAD_CASES: usize = 20;
const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const LOSS_TOL: f64 = 0.05;
const SOFTMAX_PAIRS: usize = 10_000;
const SOFTMAX_TOL: f64 = 1e-12;
const OVERFIT_SAMPLES: usize = 512;
const OVERFIT_EPOCHS: usize = 200;
const OVERFIT_MCC: f64 = 0.99;
const OVERFIT_BUDGET: Duration = Duration::from_secs(300);
const PLANTED_TRAIN: usize = 50_000;
const PLANTED_TEST: usize = 10_000;
const PLANTED_MCC: f64 = 0.95;
const MCC_MATRICES: usize = 1_000;
const MCC_TOL: f64 = 1e-12;
const PAIRED_TOL: f64 = 1e-10;
const OLS_TOL: f64 = 1e-10;
const P_TOL: f64 = 1e-6;
const TCDF_TOL: f64 = 1e-10;
const TREND_DAYS: usize = 70;
const TREND_SLOPE: f64 = -2e-3;
const TREND_SIGMA: f64 = 0.01;
const TREND_SE: f64 = 3.0;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String), String>) -> Outcome {
    let (pass, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome { name, pass, detail }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn lob_oracle() -> Result<(bool, String), String> {
    let cfg = GeneratorConfig {
        events: LOB_EVENTS,
        aggressive_probability: 0.1,
        ..GeneratorConfig::default()
    };
    let events = generate_synthetic(&cfg, 2024).map_err(e)?;
    let start = Instant::now();
    let n = book_equivalence(&events)?;
    let took = start.elapsed();
    Ok((
        n == LOB_EVENTS && took < LOB_BUDGET,
        format!(
            "{n} events identical after every event in {:.1}s (limit {}s)",
            took.as_secs_f64(),
            LOB_BUDGET.as_secs()
        ),
    ))
}

fn gradients() -> Result<(bool, String), String> {
    let start = Instant::now();
    let results = gradcheck_suite(GRAD_CASES, 5).map_err(e)?;
    let took = start.elapsed();
    let worst = results
        .iter()
        .map(|(_, r)| r.max_rel_error())
        .fold(0.0, f64::max);
    let small = results.iter().all(|(c, _)| {
        c.lstm_sizes.len() <= 2
            && c.dense_layers <= 2
            && c.steps <= 4
            && c.lstm_sizes.iter().all(|&s| s <= 8)
    });
    Ok((
        results.len() == GRAD_CASES && small && worst < GRAD_TOL && took < GRAD_BUDGET,
        format!(
            "{} cases, max rel error {worst:.3e} (tol {GRAD_TOL:e}) in {:.1}s",
            results.len(),
            took.as_secs_f64()
        ),
    ))
}

fn random_batch(
    variant: Variant,
    n: usize,
    steps: usize,
    width: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<LabelledSequence> {
    (0..n)
        .map(|i| LabelledSequence {
            sequence: Sequence {
                steps,
                cats: if variant.uses_snapshots() {
                    Vec::new()
                } else {
                    (0..steps)
                        .map(|_| {
                            [
                                rng.gen_range(0..3),
                                rng.gen_range(0..2),
                                rng.gen_range(0..24),
                            ]
                        })
                        .collect()
                },
                numeric: (0..steps * width)
                    .map(|_| rng.gen_range(-2.0..2.0))
                    .collect(),
            },
            label: (i % 2) as u8,
        })
        .collect()
}

fn loss_sanity() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let ln2 = std::f64::consts::LN_2;
    let mut worst: f64 = 0.0;
    for variant in Variant::ALL {
        let cfg = ModelConfig::new(variant, 5, &Hyper::default()).map_err(e)?;
        let width = cfg.numeric_width;
        let params = ModelParams::init(cfg, NormStats::identity(width), &mut rng).map_err(e)?;
        let batch = random_batch(variant, 256, 20, width, &mut rng);
        worst = worst.max((loss(&params, &batch).map_err(e)? - ln2).abs());
    }
    let mut sum_err: f64 = 0.0;
    for _ in 0..SOFTMAX_PAIRS {
        let z = [rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)];
        sum_err = sum_err.max((softmax(&z).iter().sum::<f64>() - 1.0).abs());
    }
    Ok((
        worst <= LOSS_TOL && sum_err <= SOFTMAX_TOL,
        format!("max |loss - ln2| {worst:.4} (tol {LOSS_TOL}); softmax sum error {sum_err:.1e} over {SOFTMAX_PAIRS} pairs"),
    ))
}

fn overfit() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let hyper = Hyper {
        lstm_sizes: vec![32],
        head_width: 32,
        dropout: 0.0,
        lr: 1e-2,
        batch_size: 32,
        patience: OVERFIT_EPOCHS,
        max_epochs: OVERFIT_EPOCHS,
        ..Hyper::default()
    };
    let variant = Variant::OrderFlow;
    let width = variant.numeric_channels(5);
    let mut batch = random_batch(variant, OVERFIT_SAMPLES, 8, width, &mut rng);
    // labels carry no signal: the model has to memorize them
    for s in &mut batch {
        s.label = rng.gen_range(0..2);
    }
    let input = InputSpec {
        variant,
        depth: 5,
        norm: NormStats::identity(width),
    };
    let start = Instant::now();
    let out = fit(&input, &hyper, 3, &batch, &batch).map_err(e)?;
    let took = start.elapsed();
    let (_, mcc) = evaluate(&out.params, &batch).map_err(e)?;
    Ok((
        mcc >= OVERFIT_MCC && out.history.len() <= OVERFIT_EPOCHS && took < OVERFIT_BUDGET,
        format!(
            "{OVERFIT_SAMPLES} random-label samples: train MCC {mcc:.4} (>= {OVERFIT_MCC}) after {} epochs in {:.1}s",
            out.best_epoch,
            took.as_secs_f64()
        ),
    ))
}

fn planted() -> Result<(bool, String), String> {
    let gen = GeneratorConfig {
        events: 130_000,
        move_probability: 0.6,
        planted: Some(PlantedRule::SideOfLastEvent),
        ..GeneratorConfig::default()
    };
    let events = generate_synthetic(&gen, 9).map_err(e)?;
    let built =
        DatasetBuilder::build(&events, 16, 5, WarmUp::Events(500), gen.tick_size).map_err(e)?;
    let ts: Vec<i64> = built.samples.iter().map(|s| s.event_ts).collect();
    let val = PLANTED_TEST / 2;
    if ts.len() < PLANTED_TRAIN + val + PLANTED_TEST {
        return Err(format!("only {} samples generated", ts.len()));
    }
    // boundaries between consecutive samples: exact split sizes
    let cut = |i: usize| ts[i - 1] + 1;
    let ranges = SplitRanges {
        train: TimeRange::new(ts[0], cut(PLANTED_TRAIN)),
        validation: TimeRange::new(cut(PLANTED_TRAIN), cut(PLANTED_TRAIN + val)),
        test: TimeRange::new(
            cut(PLANTED_TRAIN + val),
            cut(PLANTED_TRAIN + val + PLANTED_TEST),
        ),
    };
    let hyper = Hyper {
        lstm_sizes: vec![16],
        head_width: 16,
        dropout: 0.0,
        lr: 3e-3,
        batch_size: 128,
        patience: 2,
        max_epochs: 8,
        ..Hyper::default()
    };
    let mut details = Vec::new();
    let mut pass = true;
    for variant in Variant::ALL {
        let ds = split_by_date(built.dataset(variant, "PLANTED"), ranges).map_err(e)?;
        let norm = ds.header.norm.clone().ok_or("no normalization")?;
        let set = |split| DatasetSequences::new(&ds, Some(split), Some(&norm)).map_err(e);
        let (train, val, test) = (
            set(Split::Train)?,
            set(Split::Validation)?,
            set(Split::Test)?,
        );
        let input = InputSpec {
            variant,
            depth: 5,
            norm: norm.clone(),
        };
        // the benchmarks only have to run end to end
        let h = if variant == Variant::OrderFlow {
            hyper.clone()
        } else {
            Hyper {
                max_epochs: 1,
                ..hyper.clone()
            }
        };
        let out = fit(&input, &h, 4, &train, &val).map_err(e)?;
        let (_, mcc) = evaluate(&out.params, &test).map_err(e)?;
        if variant == Variant::OrderFlow {
            pass &=
                train.len() == PLANTED_TRAIN && test.len() == PLANTED_TEST && mcc >= PLANTED_MCC;
            details.push(format!(
                "{variant} {}/{} train/test, test MCC {mcc:.4} (>= {PLANTED_MCC})",
                train.len(),
                test.len()
            ));
        } else {
            pass &= mcc.is_finite();
            details.push(format!("{variant} ran, MCC {mcc:.3}"));
        }
    }
    Ok((pass, details.join("; ")))
}

fn metric_oracles() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut mcc_err: f64 = 0.0;
    for _ in 0..MCC_MATRICES {
        let mut c = || rng.gen_range(0..60u64);
        let cm = ConfusionMatrix {
            tp: c(),
            tn: c(),
            fp: c(),
            fn_: c(),
        };
        mcc_err = mcc_err.max((cm.mcc() - mcc_by_correlation(cm.tp, cm.tn, cm.fp, cm.fn_)).abs());
    }

    let day = |i: usize| {
        chrono::NaiveDate::from_ymd_opt(2018, 1, 1).unwrap() + chrono::Duration::days(i as i64)
    };
    let mut t_err: f64 = 0.0;
    let mut p_err: f64 = 0.0;
    let mut slope_err: f64 = 0.0;
    for trial in 0..50 {
        let n = 5 + trial % 20;
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sa =
            DailySeries::from_pairs(a.iter().enumerate().map(|(i, &v)| (day(i), v))).map_err(e)?;
        let sb =
            DailySeries::from_pairs(b.iter().enumerate().map(|(i, &v)| (day(i), v))).map_err(e)?;
        let r = paired_t_test(&sa, &sb).map_err(e)?;
        // textbook: t = mean(d) / (sd(d) / sqrt(n))
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let nf = n as f64;
        let mean = d.iter().sum::<f64>() / nf;
        let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
        let t = mean / (var / nf).sqrt();
        t_err = t_err.max((r.t - t).abs() / t.abs().max(1.0));
        let p_quad = 2.0 * (1.0 - t_cdf_quadrature(t.abs(), (n - 1) as u32));
        p_err = p_err.max((r.p - p_quad).abs());

        // textbook slope: (n Sxy - Sx Sy) / (n Sxx - Sx^2)
        let x: Vec<f64> = (0..n).map(|i| i as f64 + rng.gen_range(0.0..0.5)).collect();
        let fit = ols(&x, &a).map_err(e)?;
        let (sx, sy) = (x.iter().sum::<f64>(), a.iter().sum::<f64>());
        let sxy: f64 = x.iter().zip(&a).map(|(u, v)| u * v).sum();
        let sxx: f64 = x.iter().map(|u| u * u).sum();
        let slope = (nf * sxy - sx * sy) / (nf * sxx - sx * sx);
        slope_err = slope_err.max((fit.slope - slope).abs());
        let p_quad = 2.0 * (1.0 - t_cdf_quadrature(fit.t.abs(), (n - 2) as u32));
        p_err = p_err.max((fit.p - p_quad).abs());
    }
    let half = (t_cdf(1.0, 1).map_err(e)? - 0.75).abs();
    Ok((
        mcc_err <= MCC_TOL && t_err <= PAIRED_TOL && slope_err <= OLS_TOL && p_err <= P_TOL && half <= TCDF_TOL,
        format!(
            "MCC {mcc_err:.1e} over {MCC_MATRICES} matrices; paired t {t_err:.1e}; OLS slope {slope_err:.1e}; p vs quadrature {p_err:.1e}; |t_cdf(1,1) - 0.75| {half:.1e}"
        ),
    ))
}

fn stationarity() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let noise = Normal::new(0.0, TREND_SIGMA).map_err(e)?;
    let start = chrono::NaiveDate::from_ymd_opt(2017, 11, 1).unwrap();
    let series = DailySeries::from_pairs((0..TREND_DAYS).map(|i| {
        (
            start + chrono::Duration::days(i as i64),
            0.3 + TREND_SLOPE * i as f64 + noise.sample(&mut rng),
        )
    }))
    .map_err(e)?;
    let r = slope_regression(&series).map_err(e)?;
    let within = (r.slope - TREND_SLOPE).abs() <= TREND_SE * r.slope_se;
    let flat = DailySeries::from_pairs(
        (0..TREND_DAYS).map(|i| (start + chrono::Duration::days(i as i64), 0.25)),
    )
    .map_err(e)?;
    let c = slope_regression(&flat).map_err(e)?;
    Ok((
        within && c.p == 1.0,
        format!(
            "slope {:.4e} +- {:.2e} vs true {TREND_SLOPE:e} ({:.2} se, limit {TREND_SE}); constant series p = {}",
            r.slope,
            r.slope_se,
            (r.slope - TREND_SLOPE).abs() / r.slope_se,
            c.p
        ),
    ))
}

fn fixture_run(out: &Path) -> Result<Run, String> {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/run.json");
    let run = Run::open(&config, None, Some(out)).map_err(|x| format!("{x:#}"))?;
    let f = |x: anyhow::Error| format!("{x:#}");
    cmd_build(&run, None, None).map_err(f)?;
    cmd_train(&run, None, None).map_err(f)?;
    cmd_evaluate(&run, None, None, None, Split::Test).map_err(f)?;
    cmd_report(&run, Split::Test).map_err(f)?;
    Ok(run)
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

fn determinism(tmp: &Path) -> Result<(bool, String), String> {
    fixture_run(&tmp.join("a"))?;
    fixture_run(&tmp.join("b"))?;
    let (a, b) = (tree(&tmp.join("a")), tree(&tmp.join("b")));
    let differing: Vec<String> = a
        .iter()
        .filter(|(k, v)| b.get(*k) != Some(*v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    let bytes: usize = a.values().map(Vec::len).sum();
    Ok((
        differing.is_empty() && a.len() == b.len() && a.len() > 50,
        if differing.is_empty() {
            format!(
                "{} files ({bytes} bytes) identical across two runs",
                a.len()
            )
        } else {
            format!("differing: {}", differing.join(", "))
        },
    ))
}

fn no_look_ahead(tmp: &Path) -> Result<(bool, String), String> {
    let run = Run::open(
        &Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/run.json"),
        None,
        Some(&tmp.join("audit")),
    )
    .map_err(|x| format!("{x:#}"))?;
    let report = cmd_build(&run, None, None).map_err(|x| format!("{x:#}"))?;
    let mut samples = 0;
    let mut violations = 0;
    for entry in &report.datasets {
        let ds = orderflow::features::read_dataset(
            fs::File::open(run.out.join(&entry.file)).map_err(e)?,
        )
        .map_err(e)?;
        for s in &ds.samples {
            samples += 1;
            let window = ds.window(s);
            let max_ts = window
                .clone()
                .map(|i| ds.rows.timestamp(i).0)
                .max()
                .ok_or("empty window")?;
            let max_seq = window.map(|i| ds.rows.timestamp(i).1).max().unwrap();
            if max_ts >= s.event_ts || max_seq >= s.event_seq {
                violations += 1;
            }
        }
        let last_val = ds
            .split_samples(Split::Validation)
            .map(|s| s.event_ts)
            .max();
        let first_test = ds.split_samples(Split::Test).map(|s| s.event_ts).min();
        let day = |t: i64| orderflow::stats::utc_date(t);
        if let (Some(v), Some(t)) = (last_val, first_test) {
            if day(t) <= day(v) {
                violations += 1;
            }
        }
    }
    Ok((
        violations == 0 && samples > 0,
        format!(
            "{samples} samples over {} datasets, {violations} violations",
            report.datasets.len()
        ),
    ))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let results = [
        check("lob-oracle-equivalence", lob_oracle),
        check("gradient-verification", gradients),
        check("loss-sanity", loss_sanity),
        check("overfit-capacity", overfit),
        check("planted-signal", planted),
        check("metric-oracles", metric_oracles),
        check("stationarity-recovery", stationarity),
        check("determinism", || determinism(tmp.path())),
        check("no-look-ahead", || no_look_ahead(tmp.path())),
    ];
    let failed: Vec<&str> = results.iter().filter(|r| !r.pass).map(|r| r.name).collect();
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        for r in results.iter().filter(|r| !r.pass) {
            eprintln!("failed {}: {}", r.name, r.detail);
        }
        std::process::exit(1);
    }
}
