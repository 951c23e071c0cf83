use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{NormStats, Variant};
use crate::stats::ConfusionMatrix;

use super::model::{argmax, batch_gradient, nll, predict};
use super::optim::{adam_step, AdamConfig, AdamState, DropoutPlan};
use super::{Hyper, LabelledSequence, ModelConfig, ModelParams, NetError, SequenceSource};

/// Stream reserved for dropout masks; the shuffling generator uses stream 0.
const MASK_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        RngState {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches, dropout active.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mcc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters after the best validation epoch.
    pub params: ModelParams,
    pub adam: AdamState,
    pub rng: RngState,
    pub history: Vec<EpochRecord>,
    /// Epoch (1-based) with the lowest validation loss.
    pub best_epoch: usize,
    /// Last epoch run when early stopping fired.
    pub stopped_at: Option<usize>,
}

impl TrainOutcome {
    pub fn best(&self) -> &EpochRecord {
        &self.history[self.best_epoch - 1]
    }
}

/// Validation loss and MCC of `params` on `set`, in inference mode.
pub fn evaluate(params: &ModelParams, set: &dyn SequenceSource) -> Result<(f64, f64), NetError> {
    if set.is_empty() {
        return Err(NetError::EmptyBatch);
    }
    let probs: Vec<Vec<f64>> = (0..set.len())
        .into_par_iter()
        .map(|i| predict(params, &set.sequence(i)))
        .collect::<Result<_, _>>()?;
    let mut loss = 0.0;
    let mut cm = ConfusionMatrix::default();
    for (i, p) in probs.iter().enumerate() {
        let y = set.label(i);
        loss += nll(p, y);
        cm.record(y == 1, argmax(p) == 1);
    }
    Ok((loss / set.len() as f64, cm.mcc()))
}

/// Mini-batch Adam with early stopping on validation loss.
///
/// Training stops after the first epoch that brings the count of
/// consecutive non-improving epochs above `patience`, so with patience `p`
/// the last epoch run is `best + p + 1`. The returned parameters are those
/// of the best epoch.
pub fn train(
    init: ModelParams,
    train_set: &dyn SequenceSource,
    val_set: &dyn SequenceSource,
    hyper: &Hyper,
    seed: u64,
) -> Result<TrainOutcome, NetError> {
    hyper.validate()?;
    init.check()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(NetError::EmptyBatch);
    }
    let adam_cfg = AdamConfig {
        lr: hyper.lr,
        beta1: hyper.beta1,
        beta2: hyper.beta2,
        eps: hyper.eps,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init;
    let mut adam = AdamState::new(params.layout.total);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelParams, AdamState, RngState)> = None;
    let mut stale = 0;
    let mut stopped_at = None;
    let mut mask_stream = MASK_STREAM_BASE;

    for epoch in 1..=hyper.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            let batch: Vec<LabelledSequence> =
                chunk.par_iter().map(|&i| train_set.labelled(i)).collect();
            let plan = DropoutPlan {
                rate: hyper.dropout,
                seed,
                stream: mask_stream,
            };
            mask_stream += batch.len() as u64;
            let dropout = (hyper.dropout > 0.0).then_some(&plan);
            let (loss, grad) = batch_gradient(&params, &batch, dropout)?;
            adam_step(&mut params.values, &grad, &mut adam, &adam_cfg)?;
            loss_sum += loss * batch.len() as f64;
        }
        let (val_loss, val_mcc) = evaluate(&params, val_set)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
            val_mcc,
        });
        let improved = best.as_ref().is_none_or(|b| val_loss < b.0);
        if improved {
            best = Some((
                val_loss,
                epoch,
                params.clone(),
                adam.clone(),
                RngState::capture(seed, &rng),
            ));
            stale = 0;
        } else {
            stale += 1;
            if stale > hyper.patience {
                stopped_at = Some(epoch);
                break;
            }
        }
    }
    let (_, best_epoch, params, adam, rng) =
        best.ok_or_else(|| NetError::InvalidConfig("max_epochs is 0".into()))?;
    Ok(TrainOutcome {
        params,
        adam,
        rng,
        history,
        best_epoch,
        stopped_at,
    })
}

/// Initializes a model for `input` from `seed` and trains it.
pub fn fit(
    input: &InputSpec,
    hyper: &Hyper,
    seed: u64,
    train_set: &dyn SequenceSource,
    val_set: &dyn SequenceSource,
) -> Result<TrainOutcome, NetError> {
    let cfg = ModelConfig::new(input.variant, input.depth, hyper)?;
    let init = ModelParams::init(
        cfg,
        input.norm.clone(),
        &mut ChaCha8Rng::seed_from_u64(seed),
    )?;
    train(init, train_set, val_set, hyper, seed)
}

/// Discrete search space; every list must be non-empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub lstm_layers: Vec<usize>,
    pub state_size: Vec<usize>,
    pub dense_layers: Vec<usize>,
    pub head_width: Vec<usize>,
    pub dropout: Vec<f64>,
    pub lr: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            lstm_layers: vec![1, 2, 3],
            state_size: vec![16, 32, 64],
            dense_layers: vec![1, 2],
            head_width: vec![16, 32],
            dropout: vec![0.0, 0.1, 0.2],
            lr: vec![3e-4, 1e-3, 3e-3],
        }
    }
}

impl SearchSpace {
    pub fn size(&self) -> usize {
        self.lstm_layers.len()
            * self.state_size.len()
            * self.dense_layers.len()
            * self.head_width.len()
            * self.dropout.len()
            * self.lr.len()
    }

    fn sample<R: Rng>(&self, base: &Hyper, rng: &mut R) -> Hyper {
        let layers = *self.lstm_layers.choose(rng).expect("non-empty");
        let state = *self.state_size.choose(rng).expect("non-empty");
        Hyper {
            lstm_sizes: vec![state; layers],
            dense_layers: *self.dense_layers.choose(rng).expect("non-empty"),
            head_width: *self.head_width.choose(rng).expect("non-empty"),
            dropout: *self.dropout.choose(rng).expect("non-empty"),
            lr: *self.lr.choose(rng).expect("non-empty"),
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub hyper: Hyper,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub trials: Vec<Trial>,
    /// Index into `trials` with the lowest validation loss (first on ties).
    pub best: usize,
    pub outcome: TrainOutcome,
}

/// What the model reads; fixed across trials.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSpec {
    pub variant: Variant,
    pub depth: usize,
    pub norm: NormStats,
}

/// Seeded random search: `budget` configurations sampled from `space`,
/// each trained from an initialization seeded with `seed`.
pub fn hyper_search(
    space: &SearchSpace,
    base: &Hyper,
    budget: usize,
    seed: u64,
    input: &InputSpec,
    train_set: &dyn SequenceSource,
    val_set: &dyn SequenceSource,
) -> Result<SearchOutcome, NetError> {
    if space.size() == 0 {
        return Err(NetError::EmptySpace);
    }
    if budget == 0 {
        return Err(NetError::InvalidConfig(
            "search budget must be at least 1".into(),
        ));
    }
    let mut sampler = ChaCha8Rng::seed_from_u64(seed);
    sampler.set_stream(1);
    let mut trials = Vec::with_capacity(budget);
    let mut best: Option<(usize, TrainOutcome)> = None;
    for index in 0..budget {
        let hyper = space.sample(base, &mut sampler);
        let outcome = fit(input, &hyper, seed, train_set, val_set)?;
        let loss = outcome.best().val_loss;
        trials.push(Trial {
            index,
            hyper,
            best_val_loss: loss,
            best_epoch: outcome.best_epoch,
            epochs_run: outcome.history.len(),
        });
        if best
            .as_ref()
            .is_none_or(|(i, _)| loss < trials[*i].best_val_loss)
        {
            best = Some((index, outcome));
        }
    }
    let (best, outcome) = best.expect("budget >= 1");
    Ok(SearchOutcome {
        trials,
        best,
        outcome,
    })
}
