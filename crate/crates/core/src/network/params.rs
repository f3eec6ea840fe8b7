use std::fmt::{Debug, Display};
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{ArrayView, ArrayViewMut, IxDyn};

use super::config::{ModelConfig, Variant};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Floating-point element type the network runs in (f32 for training, f64 for gradient checks).
pub trait Real:
    num_traits::Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + std::iter::Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// A named, flat, row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<A> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<A>,
    /// Batch-norm running statistics are state, not optimised parameters.
    pub trainable: bool,
}

impl<A: Real> Tensor<A> {
    fn zeros(name: String, shape: Vec<usize>, trainable: bool) -> Self {
        let n = shape.iter().product();
        Self {
            name,
            shape,
            data: vec![A::zero(); n],
            trainable,
        }
    }

    fn filled(name: String, shape: Vec<usize>, value: A, trainable: bool) -> Self {
        let mut t = Self::zeros(name, shape, trainable);
        t.data.iter_mut().for_each(|v| *v = value);
        t
    }

    pub fn view(&self) -> ArrayView<'_, A, IxDyn> {
        ArrayView::from_shape(IxDyn(&self.shape), &self.data).expect("shape matches data")
    }

    pub fn view_mut(&mut self) -> ArrayViewMut<'_, A, IxDyn> {
        ArrayViewMut::from_shape(IxDyn(&self.shape), &mut self.data).expect("shape matches data")
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Positions of one conv/BN block inside the tensor list.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockIndex {
    pub weight: usize,
    pub gamma: usize,
    pub beta: usize,
    pub running_mean: usize,
    pub running_var: usize,
}

impl BlockIndex {
    fn at(base: usize) -> Self {
        Self {
            weight: base,
            gamma: base + 1,
            beta: base + 2,
            running_mean: base + 3,
            running_var: base + 4,
        }
    }
}

pub(crate) fn conv_block(i: usize) -> BlockIndex {
    BlockIndex::at(5 * i)
}

pub(crate) fn temporal_block(cfg: &ModelConfig) -> BlockIndex {
    BlockIndex::at(5 * cfg.conv_channels.len())
}

/// (weight, bias) indices of the output dense layer.
pub(crate) fn head_index(cfg: &ModelConfig) -> (usize, usize) {
    let base = 5 * cfg.conv_channels.len() + 5;
    (base, base + 1)
}

/// Trainable tensors, batch-norm state and the configuration they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<A = f32> {
    pub config: ModelConfig,
    pub tensors: Vec<Tensor<A>>,
    pub training_step: u64,
    /// Chorus-count prior (choruses per 3 minutes) of the training data, when known.
    pub theta: Option<f64>,
}

/// Expected `(name, shape, trainable)` manifest for a configuration.
pub fn manifest(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, bool)> {
    let mut out = Vec::new();
    let bn = |out: &mut Vec<(String, Vec<usize>, bool)>, prefix: &str, c: usize| {
        out.push((format!("{prefix}.bn.gamma"), vec![c], true));
        out.push((format!("{prefix}.bn.beta"), vec![c], true));
        out.push((format!("{prefix}.bn.running_mean"), vec![c], false));
        out.push((format!("{prefix}.bn.running_var"), vec![c], false));
    };
    let mut c_in = 1;
    for (i, &c_out) in cfg.conv_channels.iter().enumerate() {
        let prefix = format!("conv{i}");
        out.push((format!("{prefix}.weight"), vec![c_out, c_in, 3, 3], true));
        bn(&mut out, &prefix, c_out);
        c_in = c_out;
    }
    out.push((
        "temporal.weight".into(),
        vec![cfg.temporal_channels, c_in, cfg.temporal_kernel, 1],
        true,
    ));
    bn(&mut out, "temporal", cfg.temporal_channels);
    out.push((
        "head.weight".into(),
        vec![cfg.head_outputs(), cfg.head_inputs()],
        true,
    ));
    out.push(("head.bias".into(), vec![cfg.head_outputs()], true));
    out
}

/// Seeded initialisation: He-uniform conv kernels, fan-in uniform head,
/// zero biases, unit BN scale, zero BN shift and running mean, unit running variance.
pub fn init_model<A: Real>(cfg: &ModelConfig) -> Result<ModelParams<A>> {
    cfg.validate()?;
    let mut rng = SplitMix64::for_stream(cfg.seed, 0x1417);
    let tensors = manifest(cfg)
        .into_iter()
        .map(|(name, shape, trainable)| {
            if name.ends_with(".weight") {
                let fan_in: usize = shape[1..].iter().product();
                let limit = if name == "head.weight" {
                    (3.0 / fan_in as f64).sqrt()
                } else {
                    (6.0 / fan_in as f64).sqrt()
                };
                let mut t = Tensor::zeros(name, shape, trainable);
                t.data
                    .iter_mut()
                    .for_each(|v| *v = A::from_f64(rng.uniform(-limit, limit)));
                t
            } else if name.ends_with("gamma") || name.ends_with("running_var") {
                Tensor::filled(name, shape, A::one(), trainable)
            } else {
                Tensor::zeros(name, shape, trainable)
            }
        })
        .collect();
    Ok(ModelParams {
        config: cfg.clone(),
        tensors,
        training_step: 0,
        theta: None,
    })
}

impl<A: Real> ModelParams<A> {
    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<A>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Checks the tensor list against the manifest implied by the config.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let expected = manifest(&self.config);
        if expected.len() != self.tensors.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} tensors", expected.len()),
                actual: format!("{} tensors", self.tensors.len()),
            });
        }
        for ((name, shape, _), t) in expected.iter().zip(&self.tensors) {
            if name != &t.name
                || shape != &t.shape
                || t.data.len() != shape.iter().product::<usize>()
            {
                return Err(Error::ShapeMismatch {
                    expected: format!("{name} {shape:?}"),
                    actual: format!("{} {:?}", t.name, t.shape),
                });
            }
        }
        Ok(())
    }

    /// Total number of scalar values across all tensors.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn cast<B: Real>(&self) -> ModelParams<B> {
        ModelParams {
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| B::from_f64(v.as_f64())).collect(),
                    trainable: t.trainable,
                })
                .collect(),
            training_step: self.training_step,
            theta: self.theta,
        }
    }
}
