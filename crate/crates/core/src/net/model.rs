//! Forward pass, loss and backpropagation through time.

use rand::Rng;
use rayon::prelude::*;

use crate::features::{
    flow_channels, snapshot_channels, NormStats, OrderFlowFeature, SnapshotFeature,
};

use super::cell::{
    affine, affine_backward, embed_row, lstm_step, lstm_step_backward, softmax, LayerState,
    StepCache,
};
use super::optim::{dropout_mask, DropoutPlan};
use super::params::Pair;
use super::{Covariate, ModelParams, NetError};

/// Probabilities are clamped here inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Samples per parallel work unit. Fixed so that reductions happen in the
/// same order whatever the thread count.
const CHUNK: usize = 8;

/// One encoded input sequence, before embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub steps: usize,
    /// `(kind, side, hour)` category indices per step; empty for snapshot
    /// models.
    pub cats: Vec<[u8; 3]>,
    /// Normalized numeric channels, `steps x width`, row-major.
    pub numeric: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelledSequence {
    pub sequence: Sequence,
    pub label: u8,
}

fn stats(norm: Option<&NormStats>) -> Result<&NormStats, NetError> {
    norm.ok_or(NetError::MissingStats)
}

impl Sequence {
    pub fn from_flow(
        features: &[OrderFlowFeature],
        norm: Option<&NormStats>,
    ) -> Result<Self, NetError> {
        let norm = stats(norm)?;
        let mut cats = Vec::with_capacity(features.len());
        let mut numeric = Vec::with_capacity(3 * features.len());
        for f in features {
            cats.push([f.kind.category() - 1, f.side.category() - 1, f.hour]);
            let mut ch = flow_channels(f);
            norm.apply(&mut ch);
            numeric.extend_from_slice(&ch);
        }
        Ok(Sequence {
            steps: features.len(),
            cats,
            numeric,
        })
    }

    pub fn from_snapshots(
        features: &[SnapshotFeature],
        norm: Option<&NormStats>,
    ) -> Result<Self, NetError> {
        let norm = stats(norm)?;
        let mut numeric = Vec::new();
        for f in features {
            let mut ch = snapshot_channels(f);
            if ch.len() != norm.channels() {
                return Err(NetError::ShapeMismatch(format!(
                    "{} snapshot channels, normalization has {}",
                    ch.len(),
                    norm.channels()
                )));
            }
            norm.apply(&mut ch);
            numeric.extend_from_slice(&ch);
        }
        Ok(Sequence {
            steps: features.len(),
            cats: Vec::new(),
            numeric,
        })
    }
}

/// Everything a backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    /// Embedding outputs per step and covariate.
    embeds: Vec<Vec<Vec<f64>>>,
    /// `[layer][step]`
    steps: Vec<Vec<StepCache>>,
    input_masks: Vec<Vec<Option<Vec<f64>>>>,
    /// Masked input of each dense layer.
    head_inputs: Vec<Vec<f64>>,
    head_masks: Vec<Option<Vec<f64>>>,
    /// tanh outputs of the hidden dense layers.
    head_acts: Vec<Vec<f64>>,
}

fn check_category(q: Covariate, category: usize) -> Result<(), NetError> {
    if category >= q.cardinality() {
        return Err(NetError::CategoryOutOfRange {
            covariate: q.as_str(),
            category,
            cardinality: q.cardinality(),
        });
    }
    Ok(())
}

fn pair(p: &ModelParams, pair: Pair) -> (&[f64], &[f64]) {
    (p.slice(pair.w), p.slice(pair.b))
}

fn pair_mut<'a>(
    p: &ModelParams,
    grad: &'a mut [f64],
    pair: Pair,
) -> (&'a mut [f64], &'a mut [f64]) {
    let w = &p.layout.tensors[pair.w];
    let b = &p.layout.tensors[pair.b];
    debug_assert_eq!(w.offset + w.len(), b.offset);
    let (dw, rest) = grad[w.offset..].split_at_mut(w.len());
    (dw, &mut rest[..b.len()])
}

/// `g(row_category(U_q) + b_q)`.
pub fn embed(params: &ModelParams, q: Covariate, category: usize) -> Result<Vec<f64>, NetError> {
    let pair = *params
        .layout
        .embed
        .get(q.index())
        .ok_or_else(|| NetError::ShapeMismatch("model has no embeddings".into()))?;
    check_category(q, category)?;
    let (u, b) = (params.slice(pair.w), params.slice(pair.b));
    Ok(embed_row(u, b, category))
}

fn check_sequence(params: &ModelParams, seq: &Sequence) -> Result<(), NetError> {
    let cfg = &params.config;
    if seq.steps == 0 {
        return Err(NetError::ShapeMismatch("empty sequence".into()));
    }
    if seq.numeric.len() != seq.steps * cfg.numeric_width {
        return Err(NetError::ShapeMismatch(format!(
            "{} numeric values for {} steps of width {}",
            seq.numeric.len(),
            seq.steps,
            cfg.numeric_width
        )));
    }
    let want_cats = if cfg.categorical() { seq.steps } else { 0 };
    if seq.cats.len() != want_cats {
        return Err(NetError::ShapeMismatch(format!(
            "{} category rows, expected {want_cats}",
            seq.cats.len()
        )));
    }
    for c in &seq.cats {
        for (q, &v) in Covariate::ALL.iter().zip(c) {
            check_category(*q, v as usize)?;
        }
    }
    Ok(())
}

/// The layer-1 input vector of step `t`: embeddings then numerics.
pub fn encode_input(params: &ModelParams, seq: &Sequence, t: usize) -> Result<Vec<f64>, NetError> {
    check_sequence(params, seq)?;
    Ok(encode_step(params, seq, t).0)
}

fn encode_step(params: &ModelParams, seq: &Sequence, t: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let width = params.config.numeric_width;
    let mut x = Vec::with_capacity(params.config.input_width());
    let mut embeds = Vec::new();
    if params.config.categorical() {
        for (q, &pair) in params.layout.embed.iter().enumerate() {
            let (u, b) = (params.slice(pair.w), params.slice(pair.b));
            let e = embed_row(u, b, seq.cats[t][q] as usize);
            x.extend_from_slice(&e);
            embeds.push(e);
        }
    }
    x.extend_from_slice(&seq.numeric[t * width..(t + 1) * width]);
    (x, embeds)
}

fn masked<R: Rng>(
    x: &mut [f64],
    dropout: &mut Option<(f64, R)>,
) -> Result<Option<Vec<f64>>, NetError> {
    match dropout {
        Some((rate, rng)) if *rate > 0.0 => {
            let mask = dropout_mask(x.len(), *rate, rng)?;
            x.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
            Ok(Some(mask))
        }
        _ => Ok(None),
    }
}

/// Runs the stack over the whole sequence and the head on the top layer's
/// final hidden state. `dropout` is `None` in inference mode.
pub fn forward<R: Rng>(
    params: &ModelParams,
    seq: &Sequence,
    mut dropout: Option<(f64, R)>,
) -> Result<Forward, NetError> {
    check_sequence(params, seq)?;
    let cfg = &params.config;
    let mut embeds = Vec::with_capacity(seq.steps);
    let mut inputs: Vec<Vec<f64>> = (0..seq.steps)
        .map(|t| {
            let (x, e) = encode_step(params, seq, t);
            embeds.push(e);
            x
        })
        .collect();

    let mut steps = Vec::with_capacity(cfg.layers());
    let mut input_masks = Vec::with_capacity(cfg.layers());
    for (l, &size) in cfg.lstm_sizes.iter().enumerate() {
        let (w, b) = pair(params, params.layout.lstm[l]);
        let mut state = LayerState::zeros(size);
        let mut caches = Vec::with_capacity(seq.steps);
        let mut masks = Vec::with_capacity(seq.steps);
        let mut outputs = Vec::with_capacity(seq.steps);
        for mut x in inputs {
            masks.push(masked(&mut x, &mut dropout)?);
            let (next, cache) = lstm_step(w, b, &x, &state)?;
            outputs.push(next.h.clone());
            caches.push(cache);
            state = next;
        }
        steps.push(caches);
        input_masks.push(masks);
        inputs = outputs;
    }

    let mut a = inputs.pop().expect("non-empty sequence");
    let mut head_inputs = Vec::with_capacity(cfg.dense_layers);
    let mut head_masks = Vec::with_capacity(cfg.dense_layers);
    let mut head_acts = Vec::new();
    let mut logits = Vec::new();
    let shapes = cfg.dense_shapes();
    for (d, &(_, out)) in shapes.iter().enumerate() {
        head_masks.push(masked(&mut a, &mut dropout)?);
        let (w, b) = pair(params, params.layout.dense[d]);
        let mut z = vec![0.0; out];
        affine(w, b, &a, &mut z);
        head_inputs.push(std::mem::take(&mut a));
        if d + 1 < shapes.len() {
            z.iter_mut().for_each(|v| *v = v.tanh());
            head_acts.push(z.clone());
            a = z;
        } else {
            logits = z;
        }
    }
    let probs = softmax(&logits);
    Ok(Forward {
        logits,
        probs,
        embeds,
        steps,
        input_masks,
        head_inputs,
        head_masks,
        head_acts,
    })
}

pub fn nll(probs: &[f64], label: u8) -> f64 {
    -probs[label as usize].max(PROB_FLOOR).ln()
}

fn apply_mask(v: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        v.iter_mut().zip(m).for_each(|(x, m)| *x *= m);
    }
}

/// Adds `scale * d loss / d params` for one sample into `grad`.
fn backward_sample(
    params: &ModelParams,
    seq: &Sequence,
    fwd: &Forward,
    label: u8,
    scale: f64,
    grad: &mut [f64],
) {
    let cfg = &params.config;
    let py = fwd.probs[label as usize];
    if py < PROB_FLOOR {
        // clamped: the loss is locally constant
        return;
    }
    let mut dz: Vec<f64> = fwd
        .probs
        .iter()
        .enumerate()
        .map(|(j, p)| scale * (p - if j == label as usize { 1.0 } else { 0.0 }))
        .collect();

    let mut dtop = Vec::new();
    for d in (0..cfg.dense_layers).rev() {
        let pr = params.layout.dense[d];
        let w = params.slice(pr.w);
        let (dw, db) = pair_mut(params, grad, pr);
        let mut dv = affine_backward(w, &fwd.head_inputs[d], &dz, dw, db);
        apply_mask(&mut dv, &fwd.head_masks[d]);
        if d > 0 {
            let act = &fwd.head_acts[d - 1];
            dz = dv.iter().zip(act).map(|(g, a)| g * (1.0 - a * a)).collect();
        } else {
            dtop = dv;
        }
    }

    let t_len = seq.steps;
    let mut dh_above: Vec<Vec<f64>> = vec![Vec::new(); t_len];
    dh_above[t_len - 1] = dtop;
    for l in (0..cfg.layers()).rev() {
        let size = cfg.lstm_sizes[l];
        let pr = params.layout.lstm[l];
        let w = params.slice(pr.w);
        let (dw, db) = pair_mut(params, grad, pr);
        let mut dh_next = vec![0.0; size];
        let mut dc_next = vec![0.0; size];
        let mut dx_all = vec![Vec::new(); t_len];
        for t in (0..t_len).rev() {
            let mut dh = std::mem::take(&mut dh_next);
            for (a, b) in dh.iter_mut().zip(&dh_above[t]) {
                *a += b;
            }
            let (mut dx, dhp, dcp) = lstm_step_backward(w, &fwd.steps[l][t], &dh, &dc_next, dw, db);
            apply_mask(&mut dx, &fwd.input_masks[l][t]);
            dx_all[t] = dx;
            dh_next = dhp;
            dc_next = dcp;
        }
        dh_above = dx_all;
    }

    if cfg.categorical() {
        for (t, dx) in dh_above.iter().enumerate() {
            let mut offset = 0;
            for (q, &pr) in params.layout.embed.iter().enumerate() {
                let e = &fwd.embeds[t][q];
                let dim = e.len();
                let cat = seq.cats[t][q] as usize;
                let (du, db) = pair_mut(params, grad, pr);
                for j in 0..dim {
                    let g = dx[offset + j] * (1.0 - e[j] * e[j]);
                    du[cat * dim + j] += g;
                    db[j] += g;
                }
                offset += dim;
            }
        }
    }
}

fn check_batch(batch: &[LabelledSequence], classes: usize) -> Result<(), NetError> {
    if batch.is_empty() {
        return Err(NetError::EmptyBatch);
    }
    if let Some(s) = batch.iter().find(|s| s.label as usize >= classes) {
        return Err(NetError::InvalidLabel(s.label));
    }
    Ok(())
}

fn sample_rng(dropout: Option<&DropoutPlan>, i: usize) -> Option<(f64, rand_chacha::ChaCha8Rng)> {
    dropout.map(|p| (p.rate, p.rng(i)))
}

/// Mean NLL of the batch and its exact gradient. With a dropout plan the
/// masks are drawn per sample from the plan's streams.
pub fn batch_gradient(
    params: &ModelParams,
    batch: &[LabelledSequence],
    dropout: Option<&DropoutPlan>,
) -> Result<(f64, Vec<f64>), NetError> {
    check_batch(batch, params.config.classes)?;
    let scale = 1.0 / batch.len() as f64;
    let partials: Vec<Result<(f64, Vec<f64>), NetError>> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut grad = vec![0.0; params.layout.total];
            let mut loss = 0.0;
            for (k, s) in chunk.iter().enumerate() {
                let fwd = forward(params, &s.sequence, sample_rng(dropout, c * CHUNK + k))?;
                loss += nll(&fwd.probs, s.label);
                backward_sample(params, &s.sequence, &fwd, s.label, scale, &mut grad);
            }
            Ok((loss, grad))
        })
        .collect();
    let mut grad = vec![0.0; params.layout.total];
    let mut loss = 0.0;
    for part in partials {
        let (l, g) = part?;
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((loss * scale, grad))
}

/// Mean NLL, with the same dropout masks `batch_gradient` would draw.
pub fn loss_with(
    params: &ModelParams,
    batch: &[LabelledSequence],
    dropout: Option<&DropoutPlan>,
) -> Result<f64, NetError> {
    check_batch(batch, params.config.classes)?;
    let parts: Vec<Result<f64, NetError>> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            chunk.iter().enumerate().try_fold(0.0, |acc, (k, s)| {
                let fwd = forward(params, &s.sequence, sample_rng(dropout, c * CHUNK + k))?;
                Ok(acc + nll(&fwd.probs, s.label))
            })
        })
        .collect();
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total / batch.len() as f64)
}

/// Mean NLL in inference mode.
pub fn loss(params: &ModelParams, batch: &[LabelledSequence]) -> Result<f64, NetError> {
    loss_with(params, batch, None)
}

/// Inference-mode class probabilities.
pub fn predict(params: &ModelParams, seq: &Sequence) -> Result<Vec<f64>, NetError> {
    Ok(forward::<rand_chacha::ChaCha8Rng>(params, seq, None)?.probs)
}

/// Class probabilities of many sequences, computed independently and
/// returned in input order.
pub fn predict_many(params: &ModelParams, seqs: &[Sequence]) -> Result<Vec<Vec<f64>>, NetError> {
    seqs.par_iter().map(|s| predict(params, s)).collect()
}

/// Predicted class: the most probable one, ties going to the lower index.
pub fn argmax(probs: &[f64]) -> u8 {
    let mut best = 0;
    for (j, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = j;
        }
    }
    best as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Variant;
    use crate::net::{Hyper, ModelConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(variant: Variant, sizes: Vec<usize>, dense: usize, seed: u64) -> ModelParams {
        let h = Hyper {
            lstm_sizes: sizes,
            dense_layers: dense,
            head_width: 3,
            ..Hyper::default()
        };
        let cfg = ModelConfig::new(variant, 2, &h).unwrap();
        let width = cfg.numeric_width;
        ModelParams::init(
            cfg,
            NormStats::identity(width),
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap()
    }

    fn random_batch(p: &ModelParams, n: usize, steps: usize, seed: u64) -> Vec<LabelledSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let cats = if p.config.categorical() {
                    (0..steps)
                        .map(|_| {
                            [
                                rng.gen_range(0..3),
                                rng.gen_range(0..2),
                                rng.gen_range(0..24),
                            ]
                        })
                        .collect()
                } else {
                    Vec::new()
                };
                let numeric = (0..steps * p.config.numeric_width)
                    .map(|_| rng.gen_range(-1.5..1.5))
                    .collect();
                LabelledSequence {
                    sequence: Sequence {
                        steps,
                        cats,
                        numeric,
                    },
                    label: (i % 2) as u8,
                }
            })
            .collect()
    }

    #[test]
    fn zero_head_gives_even_odds() {
        let mut p = model(Variant::OrderFlow, vec![4], 1, 1);
        p.tensor_mut("dense.0.W").unwrap().fill(0.0);
        p.tensor_mut("dense.0.b").unwrap().fill(0.0);
        let batch = random_batch(&p, 4, 3, 2);
        assert_eq!(predict(&p, &batch[0].sequence).unwrap(), vec![0.5, 0.5]);
        assert!((loss(&p, &batch).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn embedding_contract() {
        let mut p = model(Variant::OrderFlow, vec![4], 1, 1);
        assert!(matches!(
            embed(&p, Covariate::Hour, 24),
            Err(NetError::CategoryOutOfRange {
                cardinality: 24,
                ..
            })
        ));
        p.tensor_mut("embed.side.U").unwrap().fill(0.0);
        p.tensor_mut("embed.side.b").unwrap().fill(0.0);
        assert_eq!(embed(&p, Covariate::Side, 1).unwrap(), vec![0.0, 0.0]);
        // only the selected row matters
        let before = embed(&p, Covariate::Kind, 1).unwrap();
        p.tensor_mut("embed.kind.U").unwrap()[0] = 9.0;
        p.tensor_mut("embed.kind.U").unwrap()[5] = 9.0;
        assert_eq!(embed(&p, Covariate::Kind, 1).unwrap(), before);
        let b2 = model(Variant::Bench2, vec![4], 1, 1);
        assert!(embed(&b2, Covariate::Kind, 0).is_err());
    }

    #[test]
    fn encoded_width_matches_layer_one() {
        for variant in Variant::ALL {
            let p = model(variant, vec![4], 1, 1);
            let batch = random_batch(&p, 1, 2, 3);
            let x = encode_input(&p, &batch[0].sequence, 1).unwrap();
            assert_eq!(x.len(), p.config.input_width());
            assert_eq!(x.len() + 4, p.layout.find("lstm.0.W").unwrap().cols);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = model(Variant::OrderFlow, vec![4], 1, 1);
        assert!(matches!(loss(&p, &[]), Err(NetError::EmptyBatch)));
        let mut batch = random_batch(&p, 1, 2, 3);
        batch[0].label = 2;
        assert!(matches!(loss(&p, &batch), Err(NetError::InvalidLabel(2))));
        batch[0].label = 0;
        batch[0].sequence.cats[1][2] = 24;
        assert!(matches!(
            loss(&p, &batch),
            Err(NetError::CategoryOutOfRange { .. })
        ));
        batch[0].sequence.cats[1][2] = 0;
        batch[0].sequence.numeric.pop();
        assert!(matches!(loss(&p, &batch), Err(NetError::ShapeMismatch(_))));
    }

    #[test]
    fn duplicated_batch_has_the_same_gradient() {
        let p = model(Variant::OrderFlow, vec![3, 4], 2, 4);
        let batch = random_batch(&p, 5, 4, 5);
        let doubled: Vec<LabelledSequence> = batch.iter().chain(&batch).cloned().collect();
        let (l1, g1) = batch_gradient(&p, &batch, None).unwrap();
        let (l2, g2) = batch_gradient(&p, &doubled, None).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn saturated_correct_predictions_have_no_gradient() {
        let mut p = model(Variant::Bench2, vec![3], 1, 6);
        let batch = random_batch(&p, 4, 2, 7);
        let batch: Vec<LabelledSequence> = batch
            .into_iter()
            .map(|mut s| {
                s.label = 1;
                s
            })
            .collect();
        p.tensor_mut("dense.0.W").unwrap().fill(0.0);
        p.tensor_mut("dense.0.b")
            .unwrap()
            .copy_from_slice(&[-40.0, 40.0]);
        let (l, g) = batch_gradient(&p, &batch, None).unwrap();
        assert!(l < 1e-30);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-8, "{norm}");
    }

    #[test]
    fn batch_and_single_predictions_agree() {
        let p = model(Variant::OrderFlow, vec![5, 3], 2, 8);
        let batch = random_batch(&p, 20, 4, 9);
        let seqs: Vec<Sequence> = batch.iter().map(|s| s.sequence.clone()).collect();
        let many = predict_many(&p, &seqs).unwrap();
        for (s, probs) in seqs.iter().zip(&many) {
            let one = predict(&p, s).unwrap();
            assert!((one[0] - probs[0]).abs() < 1e-12);
            assert!((probs[0] + probs[1] - 1.0).abs() < 1e-12);
            assert!(probs[0] > 0.0 && probs[0] < 1.0);
        }
    }

    #[test]
    fn dropout_never_touches_recurrent_weights() {
        // Masks only scale layer inputs; the hidden block of W always sees
        // the unmasked previous state.
        let p = model(Variant::OrderFlow, vec![4, 4], 2, 10);
        let batch = random_batch(&p, 1, 3, 11);
        let rng = ChaCha8Rng::seed_from_u64(12);
        let fwd = forward(&p, &batch[0].sequence, Some((0.5, rng))).unwrap();
        for l in 0..2 {
            for t in 1..3 {
                let cache = &fwd.steps[l][t];
                let prev_h: Vec<f64> = {
                    let c = &fwd.steps[l][t - 1];
                    let h = 4;
                    (0..h).map(|k| c.gates[2 * h + k] * c.tanh_c[k]).collect()
                };
                let recurrent = &cache.input[cache.input.len() - 4..];
                assert_eq!(recurrent, prev_h.as_slice());
                assert!(fwd.input_masks[l][t].is_some());
            }
        }
    }
}
