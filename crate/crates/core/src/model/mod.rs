//! The multi-scale dual-attention network.
//!
//! ```text
//! input [B,1,L]
//!   -> three residual conv branches (k = 3, 5, 7), concatenated -> max-pool
//!   -> attention block -> max-pool -> attention block -> max-pool -> attention block
//!   -> global average pool -> linear -> logits [B,classes]
//! ```
//!
//! An attention block is conv-BN-ReLU-conv-BN, then channel attention (a
//! learned soft threshold per channel), then spatial attention (a sigmoid gate
//! per position), plus the identity, then ReLU.

mod layers;
mod params;

pub use layers::{
    apply_channel_threshold, attention_block, branch_forward, channel_attention, channel_gate,
    input_tensor, model_forward, multiscale_forward, spatial_attention, spatial_gate, Forward, Msdan,
};
pub use params::{init_params, xavier_bound, ModelParams, Param};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("missing parameter {0:?}")]
    MissingParam(String),
    #[error("parameter {name:?} has shape {found:?}, expected {expected:?}")]
    ParamShape { name: String, expected: Vec<usize>, found: Vec<usize> },
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub branch_kernel_sizes: Vec<usize>,
    pub branch_channels: usize,
    /// Width of the fused features; equals `branch_channels` times the branch count.
    pub attention_channels: usize,
    pub attention_blocks: usize,
    pub channel_attention_reduction: usize,
    pub block_kernel_size: usize,
    pub spatial_kernel: usize,
    /// Max-pool size after the branch concat, then after each attention block
    /// but the last. 1 means no pooling.
    pub pool_between_blocks: Vec<usize>,
    pub num_classes: usize,
    pub input_length: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            branch_kernel_sizes: vec![3, 5, 7],
            branch_channels: 32,
            attention_channels: 96,
            attention_blocks: 3,
            channel_attention_reduction: 4,
            block_kernel_size: 3,
            spatial_kernel: 3,
            pool_between_blocks: vec![8, 4, 4],
            num_classes: 5,
            input_length: 3000,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl ModelConfig {
    /// Small configuration for gradient checks and quick tests.
    pub fn micro(branch_channels: usize, input_length: usize) -> Self {
        let pools = if input_length >= 1000 { vec![8, 4, 4] } else { vec![4, 2, 2] };
        Self {
            branch_channels,
            attention_channels: branch_channels * 3,
            input_length,
            pool_between_blocks: pools,
            ..Self::default()
        }
    }

    pub fn reduced_channels(&self) -> usize {
        self.attention_channels / self.channel_attention_reduction
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.branch_kernel_sizes.is_empty() {
            return bad("no branches".into());
        }
        if let Some(k) = self.branch_kernel_sizes.iter().find(|&&k| k % 2 == 0) {
            return bad(format!("branch kernel {k} must be odd"));
        }
        if self.branch_channels == 0 {
            return bad("branch_channels is zero".into());
        }
        if self.attention_channels != self.branch_channels * self.branch_kernel_sizes.len() {
            return bad(format!(
                "attention_channels {} != {} branches x {} channels",
                self.attention_channels,
                self.branch_kernel_sizes.len(),
                self.branch_channels
            ));
        }
        if self.attention_blocks == 0 {
            return bad("attention_blocks is zero".into());
        }
        if self.channel_attention_reduction == 0 || self.reduced_channels() == 0 {
            return bad(format!(
                "reduction {} leaves no hidden units for {} channels",
                self.channel_attention_reduction, self.attention_channels
            ));
        }
        if self.spatial_kernel % 2 == 0 || self.block_kernel_size % 2 == 0 {
            return bad("spatial and block kernels must be odd".into());
        }
        if self.pool_between_blocks.len() != self.attention_blocks {
            return bad(format!(
                "{} pool sizes for {} attention blocks",
                self.pool_between_blocks.len(),
                self.attention_blocks
            ));
        }
        if self.num_classes < 2 {
            return bad("need at least two classes".into());
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("bn_eps must be > 0 and bn_momentum in [0, 1]".into());
        }
        let mut w = self.input_length;
        for &p in &self.pool_between_blocks {
            if p == 0 || p > w {
                return bad(format!("pool {p} does not fit width {w}"));
            }
            w = (w - p) / p + 1;
        }
        Ok(())
    }

    /// Feature width after the branches, after each pooling step, and at the head.
    pub fn widths(&self) -> Vec<usize> {
        let mut out = vec![self.input_length];
        let mut w = self.input_length;
        for &p in &self.pool_between_blocks {
            if p > 1 {
                w = (w - p) / p + 1;
                out.push(w);
            }
        }
        out.push(1);
        out
    }
}
