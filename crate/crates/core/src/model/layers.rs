use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::{init_params, ModelConfig, ModelError, ModelParams, Result};
use crate::tensor::ops::{
    abs, add, batch_norm1d, channel_pool, concat, conv1d, global_avg_pool, linear, max_pool1d, mul, relu,
    reshape, sigmoid, soft_threshold, Mode, RunningStats,
};
use crate::tensor::{read_checkpoint, write_checkpoint, Tensor, TensorError};
use crate::Scalar;

/// One forward pass: parameters bound as graph leaves, plus the batch-norm
/// running statistics the pass produced (train mode only).
pub struct Forward<'p, S: Scalar> {
    pub cfg: &'p ModelConfig,
    params: &'p ModelParams<S>,
    leaves: Vec<Tensor<S>>,
    mode: Mode,
    running: BTreeMap<String, RunningStats<S>>,
}

impl<'p, S: Scalar> Forward<'p, S> {
    /// With `track_grad`, trainable parameters become variables whose
    /// gradients can be read back through [`Forward::grads`].
    pub fn new(cfg: &'p ModelConfig, params: &'p ModelParams<S>, mode: Mode, track_grad: bool) -> Self {
        let leaves = params
            .iter()
            .map(|p| {
                let a = &p.array;
                let t = if track_grad && p.trainable {
                    Tensor::variable(a.shape.clone(), a.values.clone())
                } else {
                    Tensor::new(a.shape.clone(), a.values.clone())
                };
                t.expect("parameter shapes are consistent")
            })
            .collect();
        Self { cfg, params, leaves, mode, running: BTreeMap::new() }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn param(&self, name: &str) -> Result<Tensor<S>> {
        self.params
            .position(name)
            .map(|i| self.leaves[i].clone())
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn conv(&self, prefix: &str, x: &Tensor<S>, padding: usize) -> Result<Tensor<S>> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let b = self.param(&format!("{prefix}.bias"))?;
        Ok(conv1d(x, &w, &b, 1, padding)?)
    }

    pub fn linear(&self, prefix: &str, x: &Tensor<S>) -> Result<Tensor<S>> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let b = self.param(&format!("{prefix}.bias"))?;
        Ok(linear(x, &w, &b)?)
    }

    pub fn batch_norm(&mut self, prefix: &str, x: &Tensor<S>) -> Result<Tensor<S>> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        if !self.running.contains_key(prefix) {
            let stats = RunningStats {
                mean: self.params.get(&format!("{prefix}.running_mean"))?.values.clone(),
                var: self.params.get(&format!("{prefix}.running_var"))?.values.clone(),
            };
            self.running.insert(prefix.to_string(), stats);
        }
        let running = self.running.get_mut(prefix).expect("inserted above");
        let eps = S::from_f64_lossy(self.cfg.bn_eps);
        let momentum = S::from_f64_lossy(self.cfg.bn_momentum);
        Ok(batch_norm1d(x, &gamma, &beta, running, self.mode, eps, momentum)?)
    }

    /// Gradient of every parameter, aligned with the parameter order. `None`
    /// for buffers and for parameters the loss does not depend on.
    pub fn grads(&self) -> Vec<Option<Vec<S>>> {
        self.leaves.iter().map(|t| t.grad()).collect()
    }

    /// Running statistics after this pass, keyed by batch-norm prefix.
    pub fn into_running(self) -> BTreeMap<String, RunningStats<S>> {
        self.running
    }
}

/// Stacks equal-length epochs into a `[B,1,L]` input.
pub fn input_tensor<S: Scalar>(epochs: &[&[f32]], length: usize) -> Result<Tensor<S>> {
    let mut data = Vec::with_capacity(epochs.len() * length);
    for e in epochs {
        if e.len() != length {
            return Err(TensorError::ShapeMismatch(format!("epoch of {} samples, model expects {length}", e.len())).into());
        }
        data.extend(e.iter().map(|&v| S::from_f64_lossy(f64::from(v))));
    }
    Ok(Tensor::new(vec![epochs.len(), 1, length], data)?)
}

/// conv-BN-ReLU-conv-BN with "same" padding, plus a 1x1 projection of the
/// input as the residual, then ReLU. `[B,1,L] -> [B,C,L]`.
pub fn branch_forward<S: Scalar>(ctx: &mut Forward<'_, S>, kernel: usize, x: &Tensor<S>) -> Result<Tensor<S>> {
    let p = format!("branch{kernel}");
    let pad = kernel / 2;
    let h = ctx.conv(&format!("{p}.conv1"), x, pad)?;
    let h = relu(&ctx.batch_norm(&format!("{p}.bn1"), &h)?);
    let h = ctx.conv(&format!("{p}.conv2"), &h, pad)?;
    let h = ctx.batch_norm(&format!("{p}.bn2"), &h)?;
    let skip = ctx.conv(&format!("{p}.proj"), x, 0)?;
    Ok(relu(&add(&h, &skip)?))
}

/// All branches concatenated along channels, then the first max-pool.
pub fn multiscale_forward<S: Scalar>(ctx: &mut Forward<'_, S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    let kernels = ctx.cfg.branch_kernel_sizes.clone();
    let outs = kernels.iter().map(|&k| branch_forward(ctx, k, x)).collect::<Result<Vec<_>>>()?;
    let fused = concat(&outs)?;
    pool(&fused, ctx.cfg.pool_between_blocks[0])
}

fn pool<S: Scalar>(x: &Tensor<S>, size: usize) -> Result<Tensor<S>> {
    if size <= 1 {
        return Ok(x.clone());
    }
    Ok(max_pool1d(x, size, size)?)
}

/// Per-channel scale in (0, 1) from the mean absolute activation
/// `[B,C] -> [B,C]`: FC, BN, ReLU, FC, sigmoid.
pub fn channel_gate<S: Scalar>(ctx: &mut Forward<'_, S>, prefix: &str, mean_abs: &Tensor<S>) -> Result<Tensor<S>> {
    let h = ctx.linear(&format!("{prefix}.ca.fc1"), mean_abs)?;
    let h = relu(&ctx.batch_norm(&format!("{prefix}.ca.bn"), &h)?);
    let h = ctx.linear(&format!("{prefix}.ca.fc2"), &h)?;
    Ok(sigmoid(&h))
}

/// Soft-thresholds `x [B,C,W]` with `tau = theta * mean_abs`, one threshold per
/// batch element and channel.
pub fn apply_channel_threshold<S: Scalar>(x: &Tensor<S>, mean_abs: &Tensor<S>, theta: &Tensor<S>) -> Result<Tensor<S>> {
    let (b, c) = (x.shape()[0], x.shape()[1]);
    let tau = reshape(&mul(theta, mean_abs)?, vec![b, c, 1])?;
    Ok(soft_threshold(x, &tau)?)
}

pub fn channel_attention<S: Scalar>(ctx: &mut Forward<'_, S>, prefix: &str, x: &Tensor<S>) -> Result<Tensor<S>> {
    let mean_abs = global_avg_pool(&abs(x))?;
    let theta = channel_gate(ctx, prefix, &mean_abs)?;
    apply_channel_threshold(x, &mean_abs, &theta)
}

/// Position weights `beta [B,1,W]` in (0, 1) from the channel-wise mean and max.
pub fn spatial_gate<S: Scalar>(ctx: &mut Forward<'_, S>, prefix: &str, x: &Tensor<S>) -> Result<Tensor<S>> {
    let pooled = channel_pool(x)?;
    let pad = ctx.cfg.spatial_kernel / 2;
    Ok(sigmoid(&ctx.conv(&format!("{prefix}.sa.gate"), &pooled, pad)?))
}

/// Pointwise projection of `x` weighted by the spatial gate.
pub fn spatial_attention<S: Scalar>(ctx: &mut Forward<'_, S>, prefix: &str, x: &Tensor<S>) -> Result<Tensor<S>> {
    let beta = spatial_gate(ctx, prefix, x)?;
    let projected = ctx.conv(&format!("{prefix}.sa.proj"), x, 0)?;
    Ok(mul(&projected, &beta)?)
}

pub fn attention_block<S: Scalar>(ctx: &mut Forward<'_, S>, index: usize, x: &Tensor<S>) -> Result<Tensor<S>> {
    let p = format!("block{index}");
    let pad = ctx.cfg.block_kernel_size / 2;
    let h = ctx.conv(&format!("{p}.conv1"), x, pad)?;
    let h = relu(&ctx.batch_norm(&format!("{p}.bn1"), &h)?);
    let h = ctx.conv(&format!("{p}.conv2"), &h, pad)?;
    let h = ctx.batch_norm(&format!("{p}.bn2"), &h)?;
    let h = channel_attention(ctx, &p, &h)?;
    let h = spatial_attention(ctx, &p, &h)?;
    Ok(relu(&add(&h, x)?))
}

/// `[B,1,L] -> [B,classes]` logits.
pub fn model_forward<S: Scalar>(ctx: &mut Forward<'_, S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    let mut h = multiscale_forward(ctx, x)?;
    let blocks = ctx.cfg.attention_blocks;
    for i in 0..blocks {
        h = attention_block(ctx, i, &h)?;
        if i + 1 < blocks {
            h = pool(&h, ctx.cfg.pool_between_blocks[i + 1])?;
        }
    }
    let features = global_avg_pool(&h)?;
    ctx.linear("head", &features)
}

/// Configuration plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Msdan<S: Scalar> {
    pub config: ModelConfig,
    pub params: ModelParams<S>,
}

impl<S: Scalar> Msdan<S> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Self { config, params })
    }

    /// Eval-mode logits, computed `chunk` epochs at a time.
    pub fn logits(&self, epochs: &[&[f32]], chunk: usize) -> Result<Vec<Vec<S>>> {
        let mut out = Vec::with_capacity(epochs.len());
        for part in epochs.chunks(chunk.max(1)) {
            let x = input_tensor(part, self.config.input_length)?;
            let mut ctx = Forward::new(&self.config, &self.params, Mode::Eval, false);
            let y = model_forward(&mut ctx, &x)?;
            out.extend(y.data().chunks(self.config.num_classes).map(<[S]>::to_vec));
        }
        Ok(out)
    }

    /// Copies running statistics from a train-mode pass into the buffers.
    pub fn apply_running(&mut self, running: BTreeMap<String, RunningStats<S>>) -> Result<()> {
        for (prefix, stats) in running {
            self.params.get_mut(&format!("{prefix}.running_mean"))?.values = stats.mean;
            self.params.get_mut(&format!("{prefix}.running_var"))?.values = stats.var;
        }
        Ok(())
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        Ok(write_checkpoint(w, &self.params.to_arrays())?)
    }

    pub fn load<R: Read>(config: ModelConfig, r: R) -> Result<Self> {
        let arrays = read_checkpoint(r)?;
        let params = ModelParams::from_arrays(&config, arrays)?;
        Ok(Self { config, params })
    }
}
