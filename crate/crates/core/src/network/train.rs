//! Mini-batch Adam training with step-halving learning rate.

use ndarray::ArrayView2;

use super::config::{ModelConfig, Variant};
use super::loss::{batch_loss, Targets};
use super::model::{backward, forward_batch, Mode};
use super::params::{conv_block, init_model, temporal_block, ModelParams, Real};
use crate::chunking::Chunk;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// A chunk's features with targets laid out for the configured head.
#[derive(Debug, Clone)]
pub struct Example<'a> {
    pub features: ArrayView2<'a, f64>,
    pub targets: Targets,
}

/// Pools chunk labels onto the output grid. The scalar variant keeps only the
/// center output index (`N / 12`).
pub fn examples_from_chunks<'a>(
    chunks: &'a [Chunk<'_>],
    cfg: &ModelConfig,
) -> Result<Vec<Example<'a>>> {
    chunks
        .iter()
        .map(|ch| {
            if ch.features.dim() != (cfg.n_frames, cfg.n_mels) {
                return Err(Error::ShapeMismatch {
                    expected: format!("({}, {}) chunk", cfg.n_frames, cfg.n_mels),
                    actual: format!("{:?}", ch.features.dim()),
                });
            }
            let (chorus, boundary) = ch
                .pooled_labels(cfg.input_pool)
                .ok_or_else(|| Error::InvalidArgument("training chunk has no labels".into()))??;
            let mask = ch.pooled_mask(cfg.input_pool);
            let targets = match cfg.variant {
                Variant::Temporal => Targets {
                    chorus,
                    boundary,
                    mask,
                },
                Variant::Scalar => {
                    let center = cfg.out_frames() / 2;
                    Targets {
                        chorus: vec![chorus[center]],
                        boundary: vec![boundary[center]],
                        mask: vec![mask[center]],
                    }
                }
            };
            Ok(Example {
                features: ch.features.view(),
                targets,
            })
        })
        .collect()
}

/// Stateful optimiser over a fixed example set.
pub struct Trainer<'a, A: Real> {
    params: ModelParams<A>,
    examples: &'a [Example<'a>],
    first_moment: Vec<Vec<A>>,
    second_moment: Vec<Vec<A>>,
    updates: i32,
    rng: SplitMix64,
    order: Vec<usize>,
    cursor: usize,
}

impl<'a, A: Real> Trainer<'a, A> {
    pub fn new(params: ModelParams<A>, examples: &'a [Example<'a>]) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        params.validate()?;
        let zeros: Vec<Vec<A>> = params
            .tensors
            .iter()
            .map(|t| vec![A::zero(); t.len()])
            .collect();
        let rng = SplitMix64::for_stream(params.config.seed, 0x5348_5546 + params.training_step);
        Ok(Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            updates: 0,
            rng,
            order: (0..examples.len()).collect(),
            cursor: examples.len(),
            params,
            examples,
        })
    }

    pub fn params(&self) -> &ModelParams<A> {
        &self.params
    }

    pub fn into_params(self) -> ModelParams<A> {
        self.params
    }

    /// Next batch of example indices; reshuffles at each epoch boundary.
    fn next_batch(&mut self) -> Vec<usize> {
        let size = self.params.config.batch_size.min(self.examples.len());
        let mut batch = Vec::with_capacity(size);
        while batch.len() < size {
            if self.cursor == self.order.len() {
                self.rng.shuffle(&mut self.order);
                self.cursor = 0;
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }

    /// One optimisation step; returns the batch loss before the update.
    pub fn step(&mut self) -> Result<f64> {
        let batch = self.next_batch();
        let inputs: Vec<_> = batch.iter().map(|&i| self.examples[i].features).collect();
        let targets: Vec<&Targets> = batch.iter().map(|&i| &self.examples[i].targets).collect();
        let out = forward_batch(&self.params, &inputs, Mode::Train)?;
        let cache = out.cache.as_ref().expect("train mode keeps a cache");
        let (loss, dlogits) = batch_loss(&out.logits, &targets, self.params.config.alpha);
        let grads = backward(&self.params, cache, &dlogits);

        let cfg = self.params.config.clone();
        let momentum = A::from_f64(cfg.bn_momentum);
        let blocks = (0..cfg.conv_channels.len())
            .map(conv_block)
            .chain(std::iter::once(temporal_block(&cfg)));
        for (idx, (mean, var)) in blocks.zip(cache.batch_stats()) {
            for (r, &m) in self.params.tensors[idx.running_mean]
                .data
                .iter_mut()
                .zip(mean)
            {
                *r = momentum * *r + (A::one() - momentum) * m;
            }
            for (r, &v) in self.params.tensors[idx.running_var]
                .data
                .iter_mut()
                .zip(var)
            {
                *r = momentum * *r + (A::one() - momentum) * v;
            }
        }

        self.updates += 1;
        let lr = cfg.learning_rate(self.params.training_step);
        let step_size = A::from_f64(
            lr * (1.0 - BETA2.powi(self.updates)).sqrt() / (1.0 - BETA1.powi(self.updates)),
        );
        let (b1, b2) = (A::from_f64(BETA1), A::from_f64(BETA2));
        let eps = A::from_f64(ADAM_EPS * (1.0 - BETA2.powi(self.updates)).sqrt());
        for (ti, tensor) in self.params.tensors.iter_mut().enumerate() {
            if !tensor.trainable {
                continue;
            }
            let (m, v) = (&mut self.first_moment[ti], &mut self.second_moment[ti]);
            for (((p, &g), m), v) in tensor
                .data
                .iter_mut()
                .zip(&grads[ti])
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = b1 * *m + (A::one() - b1) * g;
                *v = b2 * *v + (A::one() - b2) * g * g;
                *p -= step_size * *m / (v.sqrt() + eps);
            }
        }
        self.params.training_step += 1;
        Ok(loss)
    }

    /// Runs `steps` updates, reporting `(step, loss)` after each.
    pub fn run(&mut self, steps: u64, mut on_step: impl FnMut(u64, f64)) -> Result<Vec<f64>> {
        let mut losses = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let loss = self.step()?;
            on_step(self.params.training_step, loss);
            losses.push(loss);
        }
        Ok(losses)
    }
}

/// Trained parameters plus the per-step loss log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    pub losses: Vec<f64>,
}

/// Trains a freshly initialised f32 model on `dataset` for `steps` steps.
pub fn train(dataset: &[Chunk<'_>], cfg: &ModelConfig, steps: u64) -> Result<TrainOutcome> {
    train_with(dataset, cfg, steps, |_, _| {})
}

pub fn train_with(
    dataset: &[Chunk<'_>],
    cfg: &ModelConfig,
    steps: u64,
    on_step: impl FnMut(u64, f64),
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let params = init_model::<f32>(cfg)?;
    if steps == 0 {
        return Ok(TrainOutcome {
            params,
            losses: Vec::new(),
        });
    }
    let examples = examples_from_chunks(dataset, cfg)?;
    let mut trainer = Trainer::new(params, &examples)?;
    let losses = trainer.run(steps, on_step)?;
    Ok(TrainOutcome {
        params: trainer.into_params(),
        losses,
    })
}
