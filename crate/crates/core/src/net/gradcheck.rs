//! Central finite-difference verification of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::{NormStats, Variant};

use super::model::{batch_gradient, loss_with};
use super::optim::DropoutPlan;
use super::{Hyper, LabelledSequence, ModelConfig, ModelParams, NetError, Sequence};

pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for the relative error. Below it both gradients are
/// indistinguishable from finite-difference round-off.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub name: String,
    pub params: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub loss: f64,
    pub groups: Vec<GroupCheck>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| g.max_rel_error)
            .fold(0.0, f64::max)
    }
}

/// Compares every analytic partial derivative of the batch loss against
/// `(L(θ + h) − L(θ − h)) / 2h`. Dropout masks, if any, come from `dropout`
/// and are therefore identical across all evaluations.
pub fn gradcheck(
    params: &ModelParams,
    batch: &[LabelledSequence],
    dropout: Option<&DropoutPlan>,
    step: f64,
) -> Result<GradcheckReport, NetError> {
    let (loss, grad) = batch_gradient(params, batch, dropout)?;
    let mut probe = params.clone();
    let mut groups = Vec::with_capacity(params.layout.tensors.len());
    for spec in &params.layout.tensors {
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for k in spec.range() {
            let orig = probe.values[k];
            probe.values[k] = orig + step;
            let up = loss_with(&probe, batch, dropout)?;
            probe.values[k] = orig - step;
            let down = loss_with(&probe, batch, dropout)?;
            probe.values[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            max_rel = max_rel.max(relative_error(grad[k], numeric));
            max_abs = max_abs.max((grad[k] - numeric).abs());
        }
        groups.push(GroupCheck {
            name: spec.name.clone(),
            params: spec.len(),
            max_rel_error: max_rel,
            max_abs_error: max_abs,
        });
    }
    Ok(GradcheckReport { loss, groups })
}

/// A small random model-and-batch configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckCase {
    pub variant: Variant,
    pub lstm_sizes: Vec<usize>,
    pub dense_layers: usize,
    pub head_width: usize,
    pub embed_dims: [usize; 3],
    pub steps: usize,
    pub batch: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl GradcheckCase {
    /// Draws L ≤ 2, D ≤ 2, T ≤ 4 and state sizes in 3..=8.
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let layers = rng.gen_range(1..=2);
        GradcheckCase {
            variant: Variant::ALL[rng.gen_range(0..3)],
            lstm_sizes: (0..layers).map(|_| rng.gen_range(3..=8)).collect(),
            dense_layers: rng.gen_range(1..=2),
            head_width: rng.gen_range(2..=5),
            embed_dims: [
                rng.gen_range(1..=3),
                rng.gen_range(1..=3),
                rng.gen_range(1..=4),
            ],
            steps: rng.gen_range(1..=4),
            batch: 3,
            dropout: if rng.gen_bool(0.5) { 0.0 } else { 0.3 },
            seed: rng.gen(),
        }
    }

    pub fn build(
        &self,
    ) -> Result<(ModelParams, Vec<LabelledSequence>, Option<DropoutPlan>), NetError> {
        let hyper = Hyper {
            lstm_sizes: self.lstm_sizes.clone(),
            dense_layers: self.dense_layers,
            head_width: self.head_width,
            embed_kind: self.embed_dims[0],
            embed_side: self.embed_dims[1],
            embed_hour: self.embed_dims[2],
            dropout: self.dropout,
            ..Hyper::default()
        };
        let cfg = ModelConfig::new(self.variant, 2, &hyper)?;
        let width = cfg.numeric_width;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let params = ModelParams::init(cfg, NormStats::identity(width), &mut rng)?;
        let categorical = params.config.categorical();
        let batch = (0..self.batch)
            .map(|_| {
                let cats = if categorical {
                    (0..self.steps)
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
                let numeric = (0..self.steps * width)
                    .map(|_| rng.gen_range(-1.5..1.5))
                    .collect();
                LabelledSequence {
                    sequence: Sequence {
                        steps: self.steps,
                        cats,
                        numeric,
                    },
                    label: rng.gen_range(0..2),
                }
            })
            .collect();
        let plan = (self.dropout > 0.0).then_some(DropoutPlan {
            rate: self.dropout,
            seed: self.seed,
            stream: 1,
        });
        Ok((params, batch, plan))
    }

    pub fn describe(&self) -> String {
        format!(
            "{} L={} state={:?} D={} T={} dropout={}",
            self.variant,
            self.lstm_sizes.len(),
            self.lstm_sizes,
            self.dense_layers,
            self.steps,
            self.dropout
        )
    }
}

/// Runs `cases` random configurations drawn from `seed`.
pub fn gradcheck_suite(
    cases: usize,
    seed: u64,
) -> Result<Vec<(GradcheckCase, GradcheckReport)>, NetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cases)
        .map(|_| {
            let case = GradcheckCase::random(&mut rng);
            let (params, batch, plan) = case.build()?;
            let report = gradcheck(&params, &batch, plan.as_ref(), FD_STEP)?;
            Ok((case, report))
        })
        .collect()
}
