//! Selective state-space entropy model.
//!
//! A stack of Mamba-style layers turns context tokens into per-position
//! features; a linear-softmax head maps features to a probability mass
//! function over the reflectance alphabet. The recurrence is strictly causal,
//! so position i's PMF depends only on tokens 0..=i.

mod backward;
mod checkpoint;
mod forward;
mod params;
mod train;

pub use backward::{backward, Gradients};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::{
    forward_cached, forward_features, mamba_layer, nll_bits, pmf_head, selective_scan,
    ForwardCache,
};
pub use params::{LayerParams, ModelParams};
pub use train::{cosine_lr, train, AdamW, TrainConfig, TrainLog, TrainWindow};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters that shape every trainable tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Model width D; tokens and residual stream have this dimension.
    pub dim: usize,
    /// Number of stacked layers S.
    pub layers: usize,
    /// Parallel window size: sequences are coded in independent windows of
    /// this many points.
    pub window: usize,
    /// State dimension per inner channel.
    pub ssm_state: usize,
    /// Inner expansion factor; the inner width is `expand * dim`.
    pub expand: usize,
    /// Depth-wise convolution kernel width.
    pub conv_kernel: usize,
    /// Reflectance alphabet size the head predicts over.
    pub alphabet: u32,
    /// Token dimensions per context slice: laser, azimuth, distance,
    /// previous symbol. Must sum to `dim`. A zero entry drops that slice,
    /// which is how retrained ablations redistribute capacity.
    pub dim_split: [usize; 4],
}

impl ModelConfig {
    /// Standard configuration: D=256, 5 layers, window 128.
    pub fn standard(alphabet: u32) -> Self {
        Self::with_dims(256, 5, 128, alphabet)
    }

    /// Light configuration: D=64, 3 layers, window 32.
    pub fn light(alphabet: u32) -> Self {
        Self::with_dims(64, 3, 32, alphabet)
    }

    pub fn with_dims(dim: usize, layers: usize, window: usize, alphabet: u32) -> Self {
        let q = dim / 4;
        ModelConfig {
            dim,
            layers,
            window,
            ssm_state: 16,
            expand: 2,
            conv_kernel: 4,
            alphabet,
            dim_split: [q, q, q, dim - 3 * q],
        }
    }

    pub fn inner_dim(&self) -> usize {
        self.expand * self.dim
    }

    /// Rank of the step-size bottleneck, the conventional ceil(D/16).
    pub fn dt_rank(&self) -> usize {
        ((self.dim + 15) / 16).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim % 4 != 0 {
            return Err(Error::validation(format!(
                "model dim {} must be a positive multiple of 4",
                self.dim
            )));
        }
        if self.layers < 1 {
            return Err(Error::validation("layer count must be at least 1"));
        }
        if self.window < 1 || self.window > usize::from(u16::MAX) {
            return Err(Error::validation(format!(
                "window size {} outside [1, 65535]",
                self.window
            )));
        }
        if self.ssm_state < 1 || self.expand < 1 || self.conv_kernel < 1 {
            return Err(Error::validation(
                "ssm_state, expand and conv_kernel must be at least 1",
            ));
        }
        if self.alphabet < 2 || self.alphabet > 1 << 16 {
            return Err(Error::validation(format!(
                "alphabet size {} outside [2, 65536]",
                self.alphabet
            )));
        }
        let total: usize = self.dim_split.iter().sum();
        if total != self.dim {
            return Err(Error::validation(format!(
                "dim_split {:?} sums to {total}, expected {}",
                self.dim_split, self.dim
            )));
        }
        Ok(())
    }
}

/// Probability mass function over the reflectance alphabet. Produced by the
/// head with all entries positive and summing to one within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf(pub Vec<f64>);

impl Pmf {
    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }

    pub fn alphabet(&self) -> usize {
        self.0.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::numeric("PMF contains a non-positive or non-finite entry"));
        }
        let sum: f64 = self.0.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::numeric(format!("PMF sums to {sum}, expected 1 within 1e-9")));
        }
        Ok(())
    }
}
