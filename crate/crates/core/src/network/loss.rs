//! Weighted two-task binary cross-entropy.

use ndarray::Array2;

use super::ops::sigmoid;
use super::params::Real;

/// Probabilities are clipped to `[PROB_CLIP, 1 - PROB_CLIP]` before taking logs.
pub const PROB_CLIP: f64 = 1e-7;

/// Clipped binary cross-entropy of probability `p` against soft target `y`.
pub fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// `alpha * mean BCE(chorus) + (1 - alpha) * mean BCE(boundary)` over frames where `mask` is set.
pub fn multitask_loss(
    chorus_pred: &[f64],
    boundary_pred: &[f64],
    chorus: &[f64],
    boundary: &[f64],
    mask: &[bool],
    alpha: f64,
) -> f64 {
    assert!(
        chorus_pred.len() == chorus.len()
            && boundary_pred.len() == boundary.len()
            && chorus.len() == boundary.len()
            && mask.len() == chorus.len(),
        "loss inputs must have equal lengths"
    );
    let valid = mask.iter().filter(|&&m| m).count();
    if valid == 0 {
        return 0.0;
    }
    let mean = |pred: &[f64], target: &[f64]| {
        pred.iter()
            .zip(target)
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|((&p, &y), _)| bce(p, y))
            .sum::<f64>()
            / valid as f64
    };
    alpha * mean(chorus_pred, chorus) + (1.0 - alpha) * mean(boundary_pred, boundary)
}

/// Targets of one training sample on the head's output layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub chorus: Vec<f64>,
    pub boundary: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Batch loss (means over all valid frames of the batch) and its gradient
/// with respect to the logits `[batch, 2k]` (chorus outputs first).
pub fn batch_loss<A: Real>(
    logits: &Array2<A>,
    targets: &[&Targets],
    alpha: f64,
) -> (f64, Array2<A>) {
    let k = logits.ncols() / 2;
    let valid: usize = targets
        .iter()
        .map(|t| t.mask.iter().filter(|&&m| m).count())
        .sum();
    let mut grad = Array2::zeros(logits.dim());
    if valid == 0 {
        return (0.0, grad);
    }
    let (wc, wb) = (alpha / valid as f64, (1.0 - alpha) / valid as f64);
    let mut loss = 0.0;
    for (s, t) in targets.iter().enumerate() {
        for j in 0..k {
            if !t.mask[j] {
                continue;
            }
            for (col, y, w) in [(j, t.chorus[j], wc), (k + j, t.boundary[j], wb)] {
                let p = sigmoid(logits[[s, col]].as_f64());
                loss += w * bce(p, y);
                if (PROB_CLIP..=1.0 - PROB_CLIP).contains(&p) {
                    grad[[s, col]] = A::from_f64(w * (p - y));
                }
            }
        }
    }
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_hard_predictions_hit_clip_floor() {
        let y = [0.0, 1.0, 1.0, 0.0];
        let m = [true; 4];
        let loss = multitask_loss(&y, &y, &y, &y, &m, 0.1);
        assert!(loss <= 2e-6 && loss > 0.0, "{loss}");
    }

    #[test]
    fn half_probability_boundary_loss() {
        let c = [0.2, 0.7, 1.0];
        let chat = c;
        let b = [0.0; 3];
        let bhat = [0.5; 3];
        let loss = multitask_loss(&chat, &bhat, &c, &b, &[true; 3], 0.1);
        // Chorus term: mean binary entropy of the targets themselves.
        let h = |p: f64| bce(p, p);
        let chorus_term = (h(0.2) + h(0.7) + h(1.0)) / 3.0;
        let expected = 0.1 * chorus_term + 0.9 * std::f64::consts::LN_2;
        assert!((loss - expected).abs() < 1e-12);

        // Hard chorus targets give the closed form 0.9 ln 2 up to the clip floor.
        let c = [0.0, 1.0, 1.0];
        let loss = multitask_loss(&c, &bhat, &c, &b, &[true; 3], 0.1);
        assert!((loss - 0.9 * std::f64::consts::LN_2).abs() < 1e-6);
        assert!((0.9 * std::f64::consts::LN_2 - 0.6238).abs() < 1e-4);
    }

    #[test]
    fn alpha_one_is_chorus_only() {
        let chat = [0.3, 0.6];
        let c = [0.0, 1.0];
        let loss = multitask_loss(&chat, &[0.9, 0.9], &c, &[0.0, 0.0], &[true, true], 1.0);
        assert!((loss - (bce(0.3, 0.0) + bce(0.6, 1.0)) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn mask_excludes_frames_and_loss_is_finite() {
        let loss = multitask_loss(
            &[0.0, 1.0],
            &[1.0, 0.0],
            &[1.0, 0.0],
            &[0.0, 1.0],
            &[false, true],
            0.5,
        );
        assert!(loss.is_finite() && loss > 10.0);
        let only_valid = multitask_loss(&[1.0], &[0.0], &[0.0], &[1.0], &[true], 0.5);
        assert_eq!(loss, only_valid);
    }
}
