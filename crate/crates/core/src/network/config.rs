use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Predicts the full pooled activation curves of a chunk.
    Temporal,
    /// Predicts one chorus and one boundary probability at the chunk center.
    Scalar,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Temporal => "temporal",
            Variant::Scalar => "scalar",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "temporal" => Ok(Variant::Temporal),
            "scalar" => Ok(Variant::Scalar),
            other => Err(Error::InvalidArgument(format!("unknown variant {other:?}"))),
        }
    }
}

/// Architecture and optimisation settings. Everything here is persisted in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Chunk length N in input frames.
    pub n_frames: usize,
    /// Mel bands D.
    pub n_mels: usize,
    /// Temporal max-pool applied to the input (and median pool applied to labels).
    pub input_pool: usize,
    /// Output channels of each 3x3 conv block.
    pub conv_channels: Vec<usize>,
    /// Mel-axis max-pool after each conv block; the product must equal `n_mels`.
    pub mel_pools: Vec<usize>,
    pub temporal_channels: usize,
    pub temporal_kernel: usize,
    /// Local pooling window and stride over time (temporal head).
    pub local_pool: usize,
    pub local_stride: usize,
    pub alpha: f64,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_halving_steps: u64,
    pub bn_momentum: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Temporal,
            n_frames: 600,
            n_mels: 96,
            input_pool: 6,
            conv_channels: vec![32, 64, 64],
            mel_pools: vec![4, 4, 6],
            temporal_channels: 128,
            temporal_kernel: 7,
            local_pool: 24,
            local_stride: 12,
            alpha: 0.1,
            batch_size: 32,
            lr0: 0.0005,
            lr_halving_steps: 15_000,
            bn_momentum: 0.9,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    /// Tiny two-block network (N = 36, D = 8) used for gradient verification.
    pub fn miniature(variant: Variant) -> Self {
        Self {
            variant,
            n_frames: 36,
            n_mels: 8,
            conv_channels: vec![3, 4],
            mel_pools: vec![2, 4],
            temporal_channels: 5,
            temporal_kernel: 3,
            local_pool: 4,
            local_stride: 2,
            batch_size: 3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if self.n_frames == 0
            || self.n_mels == 0
            || self.input_pool == 0
            || self.temporal_channels == 0
            || self.temporal_kernel == 0
            || self.local_pool == 0
            || self.local_stride == 0
            || self.batch_size == 0
            || self.lr_halving_steps == 0
        {
            return bad("all counts must be positive".into());
        }
        if !self.n_frames.is_multiple_of(self.input_pool) {
            return bad(format!(
                "chunk length {} not divisible by input pool {}",
                self.n_frames, self.input_pool
            ));
        }
        if self.conv_channels.is_empty() || self.conv_channels.len() != self.mel_pools.len() {
            return bad("conv_channels and mel_pools must be non-empty and the same length".into());
        }
        if self.conv_channels.contains(&0) || self.mel_pools.contains(&0) {
            return bad("conv channel and pool sizes must be positive".into());
        }
        let mut bins = self.n_mels;
        for &p in &self.mel_pools {
            if !bins.is_multiple_of(p) {
                return bad(format!(
                    "mel pool {p} does not divide {bins} remaining bins"
                ));
            }
            bins /= p;
        }
        if bins != 1 {
            return bad(format!("mel pools leave {bins} bins, expected 1"));
        }
        if self.variant == Variant::Temporal && self.local_pool > self.out_frames() {
            return bad("local pool longer than the pooled sequence".into());
        }
        if !(self.lr0 > 0.0) || !(0.0..1.0).contains(&self.bn_momentum) {
            return bad("lr0 must be positive and bn_momentum in [0, 1)".into());
        }
        Ok(())
    }

    /// Frames on the output grid per chunk (N / 6).
    pub fn out_frames(&self) -> usize {
        self.n_frames / self.input_pool
    }

    /// Outputs per task: the whole pooled curve or a single center value.
    pub fn outputs_per_task(&self) -> usize {
        match self.variant {
            Variant::Temporal => self.out_frames(),
            Variant::Scalar => 1,
        }
    }

    pub fn head_outputs(&self) -> usize {
        2 * self.outputs_per_task()
    }

    /// (window, stride, left padding, window count) of the head's time pooling.
    /// The scalar head pools globally.
    pub fn head_pooling(&self) -> (usize, usize, usize, usize) {
        let t = self.out_frames();
        match self.variant {
            Variant::Scalar => (t, t, 0, 1),
            Variant::Temporal => {
                let (pool, stride) = (self.local_pool, self.local_stride);
                let pad = (stride - (t - pool) % stride) % stride;
                (pool, stride, pad, (t + pad - pool) / stride + 1)
            }
        }
    }

    pub fn head_inputs(&self) -> usize {
        let (_, _, _, windows) = self.head_pooling();
        windows * 2 * self.temporal_channels
    }

    /// Learning rate at (0-based) training step `step`.
    pub fn learning_rate(&self, step: u64) -> f64 {
        self.lr0 * 0.5f64.powi((step / self.lr_halving_steps) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_head_geometry() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.out_frames(), 100);
        assert_eq!(cfg.head_pooling(), (24, 12, 8, 8));
        assert_eq!(cfg.head_inputs(), 8 * 256);
        assert_eq!(cfg.head_outputs(), 200);
        let scalar = ModelConfig::new(Variant::Scalar);
        assert_eq!(scalar.head_pooling(), (100, 100, 0, 1));
        assert_eq!(scalar.head_outputs(), 2);
        ModelConfig::miniature(Variant::Temporal)
            .validate()
            .unwrap();
        ModelConfig::miniature(Variant::Scalar).validate().unwrap();
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.learning_rate(0), 0.0005);
        assert_eq!(cfg.learning_rate(14_999), 0.0005);
        assert_eq!(cfg.learning_rate(15_000), 0.00025);
        assert_eq!(cfg.learning_rate(30_000), 0.000125);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = ModelConfig::default();
        cfg.alpha = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::default();
        cfg.mel_pools = vec![4, 4, 4];
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::default();
        cfg.n_frames = 601;
        assert!(cfg.validate().is_err());
    }
}
