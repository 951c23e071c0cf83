use serde::{Deserialize, Serialize};

use crate::features::{Variant, FLOW_CHANNELS};

use super::NetError;

/// Categorical covariates that get an embedding table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Covariate {
    Kind,
    Side,
    Hour,
}

impl Covariate {
    pub const ALL: [Covariate; 3] = [Covariate::Kind, Covariate::Side, Covariate::Hour];

    pub fn cardinality(self) -> usize {
        match self {
            Covariate::Kind => 3,
            Covariate::Side => 2,
            Covariate::Hour => 24,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Covariate::Kind => "kind",
            Covariate::Side => "side",
            Covariate::Hour => "hour",
        }
    }
}

/// Architecture and optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    /// LSTM state size per layer, bottom first.
    pub lstm_sizes: Vec<usize>,
    /// Dense layers in the head, the output layer included.
    pub dense_layers: usize,
    pub head_width: usize,
    pub embed_kind: usize,
    pub embed_side: usize,
    pub embed_hour: usize,
    pub dropout: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            lstm_sizes: vec![64, 64],
            dense_layers: 1,
            head_width: 32,
            embed_kind: 2,
            embed_side: 2,
            embed_hour: 4,
            dropout: 0.1,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 256,
            patience: 5,
            max_epochs: 100,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: &str| Err(NetError::InvalidConfig(m.to_string()));
        if self.lstm_sizes.is_empty() || self.lstm_sizes.contains(&0) {
            return bad("lstm_sizes must be non-empty and positive");
        }
        if self.dense_layers == 0 {
            return bad("dense_layers must be at least 1");
        }
        if self.dense_layers > 1 && self.head_width == 0 {
            return bad("head_width must be positive");
        }
        if self.embed_kind == 0 || self.embed_side == 0 || self.embed_hour == 0 {
            return bad("embedding dims must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NetError::InvalidRate(self.dropout));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }

    pub fn embed_dim(&self, q: Covariate) -> usize {
        match q {
            Covariate::Kind => self.embed_kind,
            Covariate::Side => self.embed_side,
            Covariate::Hour => self.embed_hour,
        }
    }
}

/// Shape of a model: everything needed to lay out its parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Normalized numeric channels per step.
    pub numeric_width: usize,
    /// Embedding width per covariate (kind, side, hour); empty when the
    /// variant has no categorical inputs.
    pub embed_dims: Vec<usize>,
    pub lstm_sizes: Vec<usize>,
    pub dense_layers: usize,
    pub head_width: usize,
    pub classes: usize,
}

impl ModelConfig {
    pub fn new(variant: Variant, depth: usize, hyper: &Hyper) -> Result<Self, NetError> {
        hyper.validate()?;
        let embed_dims = if variant.uses_snapshots() {
            Vec::new()
        } else {
            Covariate::ALL.iter().map(|&q| hyper.embed_dim(q)).collect()
        };
        let numeric_width = match variant {
            Variant::OrderFlow => FLOW_CHANNELS,
            _ => variant.numeric_channels(depth),
        };
        if numeric_width == 0 {
            return Err(NetError::InvalidConfig(
                "snapshot depth must be positive".into(),
            ));
        }
        Ok(ModelConfig {
            variant,
            numeric_width,
            embed_dims,
            lstm_sizes: hyper.lstm_sizes.clone(),
            dense_layers: hyper.dense_layers,
            head_width: hyper.head_width,
            classes: 2,
        })
    }

    pub fn categorical(&self) -> bool {
        !self.embed_dims.is_empty()
    }

    /// Width of the vector fed to the first LSTM layer.
    pub fn input_width(&self) -> usize {
        self.embed_dims.iter().sum::<usize>() + self.numeric_width
    }

    pub fn layers(&self) -> usize {
        self.lstm_sizes.len()
    }

    pub fn top_state(&self) -> usize {
        *self.lstm_sizes.last().expect("at least one layer")
    }

    /// `(inputs, outputs)` of each dense layer.
    pub fn dense_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.dense_layers);
        let mut width = self.top_state();
        for d in 0..self.dense_layers {
            let out = if d + 1 == self.dense_layers {
                self.classes
            } else {
                self.head_width
            };
            shapes.push((width, out));
            width = out;
        }
        shapes
    }
}
