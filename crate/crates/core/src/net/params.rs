use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::features::NormStats;

use super::{Covariate, ModelConfig, NetError};

/// One named matrix (or vector, with `cols == 1`) inside the flat parameter
/// buffer. Matrices are row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Indices into [`Layout::tensors`] for a weight matrix and its bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Pair {
    pub w: usize,
    pub b: usize,
}

/// Where every tensor lives in the flat buffer, in declaration order:
/// embeddings (kind, side, hour), LSTM layers bottom-up, dense layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
    pub(crate) embed: Vec<Pair>,
    pub(crate) lstm: Vec<Pair>,
    pub(crate) dense: Vec<Pair>,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut tensors = Vec::new();
        let mut total = 0;
        let mut push = |name: String, rows: usize, cols: usize| {
            tensors.push(TensorSpec {
                name,
                rows,
                cols,
                offset: total,
            });
            total += rows * cols;
            tensors.len() - 1
        };
        let mut embed = Vec::new();
        for (q, &dim) in Covariate::ALL.iter().zip(&cfg.embed_dims) {
            let w = push(format!("embed.{}.U", q.as_str()), q.cardinality(), dim);
            let b = push(format!("embed.{}.b", q.as_str()), dim, 1);
            embed.push(Pair { w, b });
        }
        let mut lstm = Vec::new();
        let mut input = cfg.input_width();
        for (l, &h) in cfg.lstm_sizes.iter().enumerate() {
            let w = push(format!("lstm.{l}.W"), 4 * h, input + h);
            let b = push(format!("lstm.{l}.b"), 4 * h, 1);
            lstm.push(Pair { w, b });
            input = h;
        }
        let mut dense = Vec::new();
        for (d, (i, o)) in cfg.dense_shapes().into_iter().enumerate() {
            let w = push(format!("dense.{d}.W"), o, i);
            let b = push(format!("dense.{d}.b"), o, 1);
            dense.push(Pair { w, b });
        }
        Layout {
            tensors,
            total,
            embed,
            lstm,
            dense,
        }
    }

    pub fn find(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Trainable parameters plus everything needed to encode inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub norm: NormStats,
    pub layout: Layout,
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(config: ModelConfig, norm: NormStats) -> Result<Self, NetError> {
        if norm.channels() != config.numeric_width || norm.sd.len() != norm.mean.len() {
            return Err(NetError::ShapeMismatch(format!(
                "normalization has {} channels, model expects {}",
                norm.channels(),
                config.numeric_width
            )));
        }
        let layout = Layout::new(&config);
        let values = vec![0.0; layout.total];
        Ok(ModelParams {
            config,
            norm,
            layout,
            values,
        })
    }

    /// Uniform(-k, k) with k = 1/sqrt(fan-in) for every tensor; LSTM
    /// forget-gate biases start at +1.
    pub fn init<R: Rng>(
        config: ModelConfig,
        norm: NormStats,
        rng: &mut R,
    ) -> Result<Self, NetError> {
        let mut p = Self::zeros(config, norm)?;
        let fan_in: Vec<usize> = {
            let l = &p.layout;
            let mut f = vec![0; l.tensors.len()];
            for pair in &l.embed {
                // one-hot input over the categories
                f[pair.w] = l.tensors[pair.w].rows;
                f[pair.b] = l.tensors[pair.w].rows;
            }
            for pair in l.lstm.iter().chain(&l.dense) {
                f[pair.w] = l.tensors[pair.w].cols;
                f[pair.b] = l.tensors[pair.w].cols;
            }
            f
        };
        for (spec, fan) in p.layout.tensors.iter().zip(fan_in) {
            let k = 1.0 / (fan as f64).sqrt();
            for v in &mut p.values[spec.range()] {
                *v = rng.gen_range(-k..k);
            }
        }
        for (pair, &h) in p.layout.lstm.clone().iter().zip(&p.config.lstm_sizes) {
            let off = p.layout.tensors[pair.b].offset;
            for v in &mut p.values[off + h..off + 2 * h] {
                *v += 1.0;
            }
        }
        Ok(p)
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.find(name).map(|t| &self.values[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.find(name)?.range();
        Some(&mut self.values[range])
    }

    pub(crate) fn slice(&self, idx: usize) -> &[f64] {
        &self.values[self.layout.tensors[idx].range()]
    }

    pub fn check(&self) -> Result<(), NetError> {
        if self.values.len() != self.layout.total || self.layout != Layout::new(&self.config) {
            return Err(NetError::ShapeMismatch(
                "parameter buffer does not match config".into(),
            ));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(NetError::ShapeMismatch(format!(
                "non-finite parameter at {i}"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Variant;
    use crate::net::Hyper;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config() -> ModelConfig {
        let h = Hyper {
            lstm_sizes: vec![5, 3],
            dense_layers: 2,
            head_width: 4,
            ..Hyper::default()
        };
        ModelConfig::new(Variant::OrderFlow, 5, &h).unwrap()
    }

    #[test]
    fn layout_is_contiguous_and_consistent() {
        let cfg = config();
        let layout = Layout::new(&cfg);
        let mut next = 0;
        for t in &layout.tensors {
            assert_eq!(t.offset, next);
            next += t.len();
        }
        assert_eq!(next, layout.total);
        let w0 = layout.find("lstm.0.W").unwrap();
        assert_eq!((w0.rows, w0.cols), (20, cfg.input_width() + 5));
        let w1 = layout.find("lstm.1.W").unwrap();
        assert_eq!((w1.rows, w1.cols), (12, 5 + 3));
        assert_eq!(layout.find("dense.1.W").unwrap().rows, 2);
        assert_eq!(layout.find("embed.hour.U").unwrap().rows, 24);
    }

    #[test]
    fn init_bounds_and_forget_bias() {
        let cfg = config();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ModelParams::init(cfg, NormStats::identity(3), &mut rng).unwrap();
        p.check().unwrap();
        let b = p.tensor("lstm.0.b").unwrap();
        let k = 1.0 / ((p.config.input_width() + 5) as f64).sqrt();
        assert!(b[5..10].iter().all(|v| (v - 1.0).abs() <= k));
        assert!(b[..5].iter().all(|v| v.abs() <= k));
        let u = p.tensor("embed.kind.U").unwrap();
        assert!(u.iter().all(|v| v.abs() <= 1.0 / 3f64.sqrt()));
    }

    #[test]
    fn norm_width_must_match() {
        assert!(ModelParams::zeros(config(), NormStats::identity(4)).is_err());
    }
}
