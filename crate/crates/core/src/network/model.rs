//! Forward and backward passes of the multi-task CNN.
//!
//! Layout after the input max-pool is `[batch, channel, time, mel]`:
//!
//! ```text
//! X (N x D) -> time max-pool /6 -> [conv3x3 -> BN -> ReLU -> mel max-pool] x k
//!   -> temporal conv (kernel x 1) -> BN -> ReLU
//!   -> time pooling (mean ++ max; local windows or global) -> dense -> sigmoid
//! ```

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2};

use super::config::{ModelConfig, Variant};
use super::ops::{self, BnCache, BnStats, TimePooling};
use super::params::{conv_block, head_index, temporal_block, BlockIndex, ModelParams, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in every batch norm.
    Train,
    /// Running statistics; pure and deterministic.
    Eval,
}

/// One conv + BN + ReLU (+ mel pool) block's geometry.
#[derive(Debug, Clone, Copy)]
struct BlockShape {
    c_in: usize,
    c_out: usize,
    t: usize,
    f: usize,
    kt: usize,
    kf: usize,
    mel_pool: usize,
}

#[derive(Debug)]
struct BlockCache<A> {
    shape: BlockShape,
    input: Vec<A>,
    bn: Option<BnCache<A>>,
    pool_idx: Vec<u32>,
}

/// Activations saved by a train-mode forward pass.
#[derive(Debug)]
pub struct Cache<A> {
    batch: usize,
    blocks: Vec<BlockCache<A>>,
    temporal_out: Vec<A>,
    pool_argmax: Vec<u32>,
    head_in: Array2<A>,
}

impl<A: Real> Cache<A> {
    /// Batch means and variances of every BN layer, in block order (conv blocks, then temporal).
    pub(crate) fn batch_stats(&self) -> impl Iterator<Item = (&[A], &[A])> {
        self.blocks.iter().filter_map(|b| {
            b.bn.as_ref()
                .map(|bn| (bn.batch_mean.as_slice(), bn.batch_var.as_slice()))
        })
    }
}

impl<A: Real> Cache<A> {
    /// Identifies the piecewise-linear region of the network: every ReLU sign
    /// and every max-pool winner. Two parameter settings with equal signatures
    /// lie on the same smooth piece of the loss.
    pub fn activation_signature(&self, params: &ModelParams<A>) -> Vec<u32> {
        let mut sig = Vec::new();
        for (idx, bc) in block_indices(&params.config).into_iter().zip(&self.blocks) {
            if let Some(bn) = &bc.bn {
                let plane = bc.shape.t * bc.shape.f;
                let (gamma, beta) = (
                    &params.tensors[idx.gamma].data,
                    &params.tensors[idx.beta].data,
                );
                for (i, &xh) in bn.xhat.iter().enumerate() {
                    let ch = (i / plane) % bc.shape.c_out;
                    sig.push(u32::from(gamma[ch] * xh + beta[ch] > A::zero()));
                }
            }
            sig.extend_from_slice(&bc.pool_idx);
        }
        sig.extend_from_slice(&self.pool_argmax);
        sig
    }
}

/// Network outputs for a batch.
#[derive(Debug)]
pub struct Forward<A> {
    /// `[batch, head_outputs]` logits.
    pub logits: Array2<A>,
    pub cache: Option<Cache<A>>,
}

impl<A: Real> Forward<A> {
    /// Sigmoid probabilities in f64, split into (chorus, boundary) per sample.
    pub fn probabilities(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        let k = self.logits.ncols() / 2;
        self.logits
            .rows()
            .into_iter()
            .map(|row| {
                let p: Vec<f64> = row.iter().map(|&z| ops::sigmoid(z.as_f64())).collect();
                (p[..k].to_vec(), p[k..].to_vec())
            })
            .collect()
    }
}

fn block_shapes(cfg: &ModelConfig) -> Vec<BlockShape> {
    let mut shapes = Vec::new();
    let t = cfg.out_frames();
    let mut f = cfg.n_mels;
    let mut c_in = 1;
    for (&c_out, &p) in cfg.conv_channels.iter().zip(&cfg.mel_pools) {
        shapes.push(BlockShape {
            c_in,
            c_out,
            t,
            f,
            kt: 3,
            kf: 3,
            mel_pool: p,
        });
        c_in = c_out;
        f /= p;
    }
    shapes.push(BlockShape {
        c_in,
        c_out: cfg.temporal_channels,
        t,
        f: 1,
        kt: cfg.temporal_kernel,
        kf: 1,
        mel_pool: 1,
    });
    shapes
}

fn block_indices(cfg: &ModelConfig) -> Vec<BlockIndex> {
    (0..cfg.conv_channels.len())
        .map(conv_block)
        .chain(std::iter::once(temporal_block(cfg)))
        .collect()
}

fn time_pooling(cfg: &ModelConfig) -> TimePooling {
    let (pool, stride, pad, windows) = cfg.head_pooling();
    TimePooling {
        pool,
        stride,
        pad,
        windows,
    }
}

/// Temporal max-pool of each `(N, D)` input into a `[b, 1, N/p, D]` buffer.
fn pool_inputs<A: Real>(cfg: &ModelConfig, inputs: &[ArrayView2<'_, f64>]) -> Result<Vec<A>> {
    let (n, d, p) = (cfg.n_frames, cfg.n_mels, cfg.input_pool);
    let t = n / p;
    let mut out = Vec::with_capacity(inputs.len() * t * d);
    for x in inputs {
        if x.dim() != (n, d) {
            return Err(Error::ShapeMismatch {
                expected: format!("({n}, {d}) input"),
                actual: format!("{:?}", x.dim()),
            });
        }
        for ti in 0..t {
            for fi in 0..d {
                let mut m = f64::NEG_INFINITY;
                for k in 0..p {
                    m = m.max(x[[ti * p + k, fi]]);
                }
                out.push(A::from_f64(m));
            }
        }
    }
    Ok(out)
}

fn block_forward<A: Real>(
    params: &ModelParams<A>,
    idx: BlockIndex,
    sh: BlockShape,
    input: Vec<A>,
    b: usize,
    mode: Mode,
) -> (Vec<A>, BlockCache<A>) {
    let plane = sh.t * sh.f;
    let patch = sh.c_in * sh.kt * sh.kf;
    let w = ArrayView2::from_shape((sh.c_out, patch), &params.tensors[idx.weight].data)
        .expect("weight shape");
    let mut z = vec![A::zero(); b * sh.c_out * plane];
    let mut cols = vec![A::zero(); patch * plane];
    for bi in 0..b {
        let x = &input[bi * sh.c_in * plane..(bi + 1) * sh.c_in * plane];
        ops::im2col(x, sh.c_in, sh.t, sh.f, sh.kt, sh.kf, &mut cols);
        let cm = ArrayView2::from_shape((patch, plane), &cols).expect("cols shape");
        let mut out = ArrayViewMut2::from_shape(
            (sh.c_out, plane),
            &mut z[bi * sh.c_out * plane..(bi + 1) * sh.c_out * plane],
        )
        .expect("out shape");
        general_mat_mul(A::one(), &w, &cm, A::zero(), &mut out);
    }
    let gamma = &params.tensors[idx.gamma].data;
    let beta = &params.tensors[idx.beta].data;
    let stats = match mode {
        Mode::Train => BnStats::Batch,
        Mode::Eval => BnStats::Running {
            mean: &params.tensors[idx.running_mean].data,
            var: &params.tensors[idx.running_var].data,
        },
    };
    let bn = ops::bn_relu_forward(&mut z, b, sh.c_out, plane, gamma, beta, stats);
    let (out, pool_idx) = if sh.mel_pool > 1 {
        ops::max_pool_inner(&z, b * sh.c_out * sh.t, sh.f, sh.mel_pool)
    } else {
        (z, Vec::new())
    };
    let cache = BlockCache {
        shape: sh,
        input: if mode == Mode::Train {
            input
        } else {
            Vec::new()
        },
        bn,
        pool_idx,
    };
    (out, cache)
}

/// Runs a batch of `(N, D)` log-mel chunks through the network.
pub fn forward_batch<A: Real>(
    params: &ModelParams<A>,
    inputs: &[ArrayView2<'_, f64>],
    mode: Mode,
) -> Result<Forward<A>> {
    let cfg = &params.config;
    let b = inputs.len();
    if b == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut h = pool_inputs::<A>(cfg, inputs)?;
    let mut blocks = Vec::new();
    for (idx, sh) in block_indices(cfg).into_iter().zip(block_shapes(cfg)) {
        let (out, cache) = block_forward(params, idx, sh, h, b, mode);
        h = out;
        blocks.push(cache);
    }
    let (c, t) = (cfg.temporal_channels, cfg.out_frames());
    let tp = time_pooling(cfg);
    let (feats, pool_argmax) = ops::time_pool_forward(&h, b, c, t, tp);
    let k = cfg.head_inputs();
    let head_in = Array2::from_shape_vec((b, k), feats).expect("head input shape");
    let (wi, bi) = head_index(cfg);
    let o = cfg.head_outputs();
    let w = ArrayView2::from_shape((o, k), &params.tensors[wi].data).expect("head weight shape");
    let bias = &params.tensors[bi].data;
    let mut logits = Array2::from_shape_fn((b, o), |(_, j)| bias[j]);
    general_mat_mul(A::one(), &head_in, &w.t(), A::one(), &mut logits);
    let cache = (mode == Mode::Train).then(|| Cache {
        batch: b,
        blocks,
        temporal_out: h,
        pool_argmax,
        head_in,
    });
    Ok(Forward { logits, cache })
}

/// Gradients of `sum(dlogits * logits)` with respect to every tensor
/// (zero-filled for non-trainable state).
pub fn backward<A: Real>(
    params: &ModelParams<A>,
    cache: &Cache<A>,
    dlogits: &Array2<A>,
) -> Vec<Vec<A>> {
    let cfg = &params.config;
    let b = cache.batch;
    let mut grads: Vec<Vec<A>> = params
        .tensors
        .iter()
        .map(|t| vec![A::zero(); t.len()])
        .collect();

    let (wi, bi) = head_index(cfg);
    let (o, k) = (cfg.head_outputs(), cfg.head_inputs());
    {
        let mut dw = ArrayViewMut2::from_shape((o, k), &mut grads[wi]).expect("head grad shape");
        general_mat_mul(A::one(), &dlogits.t(), &cache.head_in, A::zero(), &mut dw);
    }
    for (j, g) in grads[bi].iter_mut().enumerate() {
        *g = dlogits.column(j).sum();
    }
    let w = ArrayView2::from_shape((o, k), &params.tensors[wi].data).expect("head weight shape");
    let dfeats = dlogits.dot(&w);
    let dfeats = dfeats.as_standard_layout();

    let (c, t) = (cfg.temporal_channels, cfg.out_frames());
    let mut dh = ops::time_pool_backward(
        dfeats.as_slice().expect("contiguous"),
        &cache.pool_argmax,
        b,
        c,
        t,
        time_pooling(cfg),
    );
    debug_assert_eq!(dh.len(), cache.temporal_out.len());

    let indices = block_indices(cfg);
    for (layer, (idx, bc)) in indices.iter().zip(&cache.blocks).enumerate().rev() {
        let sh = bc.shape;
        let plane = sh.t * sh.f;
        // Undo the mel pool.
        let mut dz = if sh.mel_pool > 1 {
            let mut full = vec![A::zero(); b * sh.c_out * plane];
            ops::max_pool_inner_backward(&dh, &bc.pool_idx, &mut full);
            full
        } else {
            dh
        };
        let bn = bc.bn.as_ref().expect("train-mode cache");
        {
            let (gamma, beta) = (
                &params.tensors[idx.gamma].data,
                &params.tensors[idx.beta].data,
            );
            let (lo, hi) = grads.split_at_mut(idx.beta);
            ops::bn_relu_backward(
                &mut dz,
                b,
                sh.c_out,
                plane,
                bn,
                gamma,
                beta,
                &mut lo[idx.gamma],
                &mut hi[0],
            );
        }
        let patch = sh.c_in * sh.kt * sh.kf;
        let w = ArrayView2::from_shape((sh.c_out, patch), &params.tensors[idx.weight].data)
            .expect("weight shape");
        let need_input_grad = layer > 0;
        let mut dx = if need_input_grad {
            vec![A::zero(); b * sh.c_in * plane]
        } else {
            Vec::new()
        };
        let mut cols = vec![A::zero(); patch * plane];
        let mut dcols = vec![A::zero(); patch * plane];
        for s in 0..b {
            let x = &bc.input[s * sh.c_in * plane..(s + 1) * sh.c_in * plane];
            ops::im2col(x, sh.c_in, sh.t, sh.f, sh.kt, sh.kf, &mut cols);
            let cm = ArrayView2::from_shape((patch, plane), &cols).expect("cols shape");
            let dzs = ArrayView2::from_shape(
                (sh.c_out, plane),
                &dz[s * sh.c_out * plane..(s + 1) * sh.c_out * plane],
            )
            .expect("dz shape");
            {
                let mut dw = ArrayViewMut2::from_shape((sh.c_out, patch), &mut grads[idx.weight])
                    .expect("grad shape");
                general_mat_mul(A::one(), &dzs, &cm.t(), A::one(), &mut dw);
            }
            if need_input_grad {
                let mut dc =
                    ArrayViewMut2::from_shape((patch, plane), &mut dcols).expect("dcols shape");
                general_mat_mul(A::one(), &w.t(), &dzs, A::zero(), &mut dc);
                ops::col2im(
                    &dcols,
                    sh.c_in,
                    sh.t,
                    sh.f,
                    sh.kt,
                    sh.kf,
                    &mut dx[s * sh.c_in * plane..(s + 1) * sh.c_in * plane],
                );
            }
        }
        dh = dx;
    }
    grads
}

/// Single-chunk forward pass returning `(chorus, boundary)` probabilities:
/// `N/6` values each for the temporal variant, one each for the scalar variant.
pub fn forward<A: Real>(
    params: &ModelParams<A>,
    x: ArrayView2<'_, f64>,
    mode: Mode,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let out = forward_batch(params, &[x], mode)?;
    Ok(out.probabilities().remove(0))
}

/// Eval-mode forward over many chunks, in batches of `batch` to bound memory.
pub fn predict_chunks<A: Real>(
    params: &ModelParams<A>,
    inputs: &[ArrayView2<'_, f64>],
    batch: usize,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let mut out = Vec::with_capacity(inputs.len());
    for group in inputs.chunks(batch.max(1)) {
        out.extend(forward_batch(params, group, Mode::Eval)?.probabilities());
    }
    Ok(out)
}

pub(crate) fn expect_variant<A>(params: &ModelParams<A>, variant: Variant) -> Result<()> {
    if params.config.variant != variant {
        return Err(Error::Variant(format!(
            "expected a {variant} model, got a {} model",
            params.config.variant
        )));
    }
    Ok(())
}
