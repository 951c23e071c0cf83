use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use orderflow::features::{
    read_dataset, split_by_date, write_dataset, BuildCounters, Dataset, DatasetBuilder, Split,
    SplitCounts, Variant,
};
use orderflow::feed::{read_events, OrderEvent};
use orderflow::net::{
    argmax, checkpoint_manifest, encode_checkpoint, fit, hyper_search, predict, read_checkpoint,
    Checkpoint, DatasetSequences, Hyper, InputSpec, SequenceSource, Trial,
};
use orderflow::stats::{daily_mcc, utc_date, ConfusionMatrix, Prediction};

use crate::{csv_writer, with_ext, write_csv, write_file, PipelineError, Run, RunConfig};

pub(crate) fn load_events(path: &Path) -> Result<Vec<OrderEvent>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_events(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

pub(crate) fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path)
        .with_context(|| format!("opening dataset {} (run build first)", path.display()))?;
    read_dataset(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetEntry {
    pub pair: String,
    pub variant: Variant,
    /// Relative to the output directory.
    pub file: String,
    pub rows: usize,
    pub counts: SplitCounts,
    pub counters: BuildCounters,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildReport {
    /// The run config with every default filled in.
    pub config: RunConfig,
    pub datasets: Vec<DatasetEntry>,
    pub warnings: Vec<String>,
}

/// Replays every selected pair and writes one dataset file per variant.
/// Empty splits are not errors here; they are listed under `warnings`.
pub fn cmd_build(run: &Run, pair: Option<&str>, variant: Option<Variant>) -> Result<BuildReport> {
    let cfg = run.config();
    let pairs = run.pair_names(pair)?;
    let variants = run.variants(variant)?;
    let ranges = cfg.splits.ranges();

    let per_pair: Vec<Vec<(Dataset, Vec<u8>)>> = pairs
        .par_iter()
        .map(|name| -> Result<Vec<(Dataset, Vec<u8>)>> {
            let input = run.loaded.resolve(&cfg.pair(name)?.path);
            let events = load_events(&input)?;
            let built =
                DatasetBuilder::build(&events, cfg.window, cfg.depth, cfg.warm_up, cfg.tick_size)
                    .with_context(|| format!("building {name} from {}", input.display()))?;
            variants
                .iter()
                .map(|&v| {
                    let ds = split_by_date(built.dataset(v, name), ranges)?;
                    let mut bytes = Vec::new();
                    write_dataset(&mut bytes, &ds)?;
                    Ok((ds, bytes))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut datasets = Vec::new();
    let mut warnings = Vec::new();
    for (ds, bytes) in per_pair.into_iter().flatten() {
        let h = &ds.header;
        let path = run.dataset_path(&h.pair, h.variant);
        write_file(&path, &bytes)?;
        for split in Split::ALL {
            if h.counts.get(split) == 0 {
                warnings.push(format!(
                    "{} {}: {} split is empty",
                    h.pair,
                    h.variant,
                    split.as_str()
                ));
            }
        }
        datasets.push(DatasetEntry {
            pair: h.pair.clone(),
            variant: h.variant,
            file: format!("datasets/{}.{}.ofds", h.pair, h.variant),
            rows: ds.rows.len(),
            counts: h.counts,
            counters: h.counters,
        });
    }
    let report = BuildReport {
        config: run.effective_config(),
        datasets,
        warnings,
    };
    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    write_file(&run.out.join("build_report.json"), &json)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub pair: String,
    pub variant: Variant,
    pub seed: u64,
    pub hyper: Hyper,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub best_epoch: usize,
    pub stopped_at: Option<usize>,
    pub epochs_run: usize,
    pub best_val_loss: f64,
    pub best_val_mcc: f64,
    /// Index of the winning trial when a search ran.
    pub search_best: Option<usize>,
}

fn non_empty(set: DatasetSequences, ds: &Dataset, split: Split) -> Result<DatasetSequences> {
    if set.is_empty() {
        return Err(PipelineError::EmptySplit {
            pair: ds.header.pair.clone(),
            variant: ds.header.variant,
            split,
        }
        .into());
    }
    Ok(set)
}

fn search_csv(trials: &[Trial]) -> Result<csv::Writer<Vec<u8>>> {
    let mut w = csv_writer();
    w.write_record([
        "trial",
        "lstm_sizes",
        "dense_layers",
        "head_width",
        "dropout",
        "lr",
        "best_val_loss",
        "best_epoch",
        "epochs_run",
    ])?;
    for t in trials {
        let sizes: Vec<String> = t.hyper.lstm_sizes.iter().map(|s| s.to_string()).collect();
        w.write_record([
            t.index.to_string(),
            sizes.join(" "),
            t.hyper.dense_layers.to_string(),
            t.hyper.head_width.to_string(),
            t.hyper.dropout.to_string(),
            t.hyper.lr.to_string(),
            t.best_val_loss.to_string(),
            t.best_epoch.to_string(),
            t.epochs_run.to_string(),
        ])?;
    }
    Ok(w)
}

/// Trains one model per selected (pair, variant) on its train split with
/// early stopping on the validation split.
pub fn cmd_train(
    run: &Run,
    pair: Option<&str>,
    variant: Option<Variant>,
) -> Result<Vec<TrainSummary>> {
    let cfg = run.config();
    let mut out = Vec::new();
    for name in run.pair_names(pair)? {
        for v in run.variants(variant)? {
            let ds = load_dataset(&run.dataset_path(&name, v))?;
            let norm = ds.header.norm.clone().with_context(|| {
                format!("{name} {v}: dataset has no normalization (not split?)")
            })?;
            let train_set = non_empty(
                DatasetSequences::new(&ds, Some(Split::Train), Some(&norm))?,
                &ds,
                Split::Train,
            )?;
            let val_set = non_empty(
                DatasetSequences::new(&ds, Some(Split::Validation), Some(&norm))?,
                &ds,
                Split::Validation,
            )?;
            let input = InputSpec {
                variant: v,
                depth: ds.header.depth,
                norm,
            };
            let stem = run.model_stem(&name, v);
            let (outcome, hyper, search_best) = match &cfg.search {
                Some(search) => {
                    let s = hyper_search(
                        &search.space,
                        &cfg.model,
                        search.budget,
                        run.seed,
                        &input,
                        &train_set,
                        &val_set,
                    )
                    .with_context(|| format!("searching {name} {v}"))?;
                    write_csv(&with_ext(&stem, "search.csv"), search_csv(&s.trials)?)?;
                    let hyper = s.trials[s.best].hyper.clone();
                    (s.outcome, hyper, Some(s.best))
                }
                None => {
                    let o = fit(&input, &cfg.model, run.seed, &train_set, &val_set)
                        .with_context(|| format!("training {name} {v}"))?;
                    (o, cfg.model.clone(), None)
                }
            };

            let mut log = csv_writer();
            log.write_record(["epoch", "train_loss", "val_loss", "val_mcc"])?;
            for r in &outcome.history {
                log.write_record([
                    r.epoch.to_string(),
                    r.train_loss.to_string(),
                    r.val_loss.to_string(),
                    r.val_mcc.to_string(),
                ])?;
            }
            write_csv(&with_ext(&stem, "train_log.csv"), log)?;

            let best = *outcome.best();
            let ck = Checkpoint {
                params: outcome.params,
                hyper: hyper.clone(),
                adam: outcome.adam,
                rng: outcome.rng,
                epoch: outcome.best_epoch,
            };
            write_file(&with_ext(&stem, "ckpt"), &encode_checkpoint(&ck)?)?;
            write_file(
                &with_ext(&stem, "manifest.txt"),
                checkpoint_manifest(&ck)?.as_bytes(),
            )?;

            let summary = TrainSummary {
                pair: name.clone(),
                variant: v,
                seed: run.seed,
                hyper,
                train_samples: train_set.len(),
                validation_samples: val_set.len(),
                best_epoch: outcome.best_epoch,
                stopped_at: outcome.stopped_at,
                epochs_run: outcome.history.len(),
                best_val_loss: best.val_loss,
                best_val_mcc: best.val_mcc,
                search_best,
            };
            let mut json = serde_json::to_vec_pretty(&summary)?;
            json.push(b'\n');
            write_file(&with_ext(&stem, "summary.json"), &json)?;
            out.push(summary);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub model_pair: String,
    pub variant: Variant,
    pub data_pair: String,
    pub split: Split,
    pub samples: usize,
    pub mcc: f64,
    pub days: usize,
}

/// One prediction per sample of `split`, plus its daily MCC series.
pub fn evaluate_checkpoint(
    ck: &Checkpoint,
    ds: &Dataset,
    split: Split,
) -> Result<(Vec<Prediction>, Vec<f64>)> {
    if ck.params.config.variant != ds.header.variant {
        return Err(PipelineError::VariantMismatch {
            checkpoint: ck.params.config.variant,
            dataset: ds.header.variant,
        }
        .into());
    }
    // the model's own normalization, also for datasets of other pairs
    let set = non_empty(
        DatasetSequences::new(ds, Some(split), Some(&ck.params.norm))?,
        ds,
        split,
    )?;
    let p1: Vec<f64> = (0..set.len())
        .into_par_iter()
        .map(|i| predict(&ck.params, &set.sequence(i)).map(|p| p[1]))
        .collect::<Result<_, _>>()?;
    let preds = set
        .samples()
        .iter()
        .zip(&p1)
        .map(|(s, &p)| Prediction {
            timestamp_ms: s.event_ts,
            actual: s.label,
            predicted: argmax(&[1.0 - p, p]),
        })
        .collect();
    Ok((preds, p1))
}

/// Scores each selected model on the chosen split of every data pair (or
/// only `test_pair`), writing per-sample predictions and daily MCC.
pub fn cmd_evaluate(
    run: &Run,
    pair: Option<&str>,
    variant: Option<Variant>,
    test_pair: Option<&str>,
    split: Split,
) -> Result<Vec<EvalSummary>> {
    let mut out = Vec::new();
    for model_pair in run.pair_names(pair)? {
        for v in run.variants(variant)? {
            let path = with_ext(&run.model_stem(&model_pair, v), "ckpt");
            let file = File::open(&path)
                .with_context(|| format!("opening {} (run train first)", path.display()))?;
            let ck = read_checkpoint(BufReader::new(file))
                .with_context(|| format!("reading {}", path.display()))?;
            for data_pair in run.pair_names(test_pair)? {
                let ds = load_dataset(&run.dataset_path(&data_pair, v))?;
                let (preds, p1) = evaluate_checkpoint(&ck, &ds, split)
                    .with_context(|| format!("evaluating {model_pair} {v} on {data_pair}"))?;

                let mut w = csv_writer();
                w.write_record(["timestamp_ms", "seq", "y", "yhat", "p1"])?;
                let samples = ds.split_samples(split);
                let mut cm = ConfusionMatrix::default();
                for ((s, p), prob) in samples.zip(&preds).zip(&p1) {
                    cm.record(p.actual == 1, p.predicted == 1);
                    w.write_record([
                        p.timestamp_ms.to_string(),
                        s.event_seq.to_string(),
                        p.actual.to_string(),
                        p.predicted.to_string(),
                        prob.to_string(),
                    ])?;
                }
                let stem = run.prediction_stem(&model_pair, v, &data_pair, split);
                write_csv(&with_ext(&stem, "csv"), w)?;

                let daily = daily_mcc(&preds);
                let mut per_day: BTreeMap<chrono::NaiveDate, usize> = BTreeMap::new();
                for p in &preds {
                    *per_day.entry(utc_date(p.timestamp_ms)).or_default() += 1;
                }
                let mut w = csv_writer();
                w.write_record(["date", "mcc", "degenerate", "n"])?;
                for pt in &daily.points {
                    w.write_record([
                        pt.date.to_string(),
                        pt.value.to_string(),
                        pt.degenerate.to_string(),
                        per_day[&pt.date].to_string(),
                    ])?;
                }
                write_csv(&with_ext(&stem, "daily.csv"), w)?;

                out.push(EvalSummary {
                    model_pair: model_pair.clone(),
                    variant: v,
                    data_pair,
                    split,
                    samples: preds.len(),
                    mcc: cm.mcc(),
                    days: daily.len(),
                });
            }
        }
    }
    Ok(out)
}
