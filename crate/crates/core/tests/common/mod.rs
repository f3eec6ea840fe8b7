//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use chorusnet::network::loss::{batch_loss, Targets};
use chorusnet::network::{backward, forward_batch, init_model, Mode, ModelConfig, ModelParams};
use chorusnet::rng::SplitMix64;
use ndarray::Array2;

/// Random inputs and soft targets for a miniature-config gradient check.
pub struct GradProblem {
    pub params: ModelParams<f64>,
    pub inputs: Vec<Array2<f64>>,
    pub targets: Vec<Targets>,
}

pub fn grad_problem(cfg: &ModelConfig, seed: u64) -> GradProblem {
    let mut cfg = cfg.clone();
    cfg.seed = seed;
    let mut params = init_model::<f64>(&cfg).unwrap();
    let mut rng = SplitMix64::new(seed.wrapping_mul(7919) + 1);
    // Perturb BN affine parameters and biases away from their init values.
    for t in params
        .tensors
        .iter_mut()
        .filter(|t| t.trainable && !t.name.ends_with("weight"))
    {
        for v in &mut t.data {
            *v += 0.3 * rng.normal();
        }
    }
    let k = cfg.outputs_per_task();
    let inputs = (0..cfg.batch_size)
        .map(|_| Array2::from_shape_fn((cfg.n_frames, cfg.n_mels), |_| rng.normal()))
        .collect();
    let targets = (0..cfg.batch_size)
        .map(|_| Targets {
            chorus: (0..k).map(|_| rng.next_f64()).collect(),
            boundary: (0..k).map(|_| rng.next_f64()).collect(),
            mask: (0..k).map(|_| rng.next_f64() > 0.15).collect(),
        })
        .collect();
    GradProblem {
        params,
        inputs,
        targets,
    }
}

impl GradProblem {
    pub fn loss(&self, params: &ModelParams<f64>) -> f64 {
        let views: Vec<_> = self.inputs.iter().map(|x| x.view()).collect();
        let out = forward_batch(params, &views, Mode::Train).unwrap();
        let targets: Vec<&Targets> = self.targets.iter().collect();
        batch_loss(&out.logits, &targets, params.config.alpha).0
    }

    pub fn analytic(&self) -> Vec<Vec<f64>> {
        let views: Vec<_> = self.inputs.iter().map(|x| x.view()).collect();
        let out = forward_batch(&self.params, &views, Mode::Train).unwrap();
        let targets: Vec<&Targets> = self.targets.iter().collect();
        let (_, dlogits) = batch_loss(&out.logits, &targets, self.params.config.alpha);
        backward(&self.params, out.cache.as_ref().unwrap(), &dlogits)
    }

    /// Central differences for every trainable value.
    pub fn numeric(&self, h: f64) -> Vec<Vec<f64>> {
        let mut params = self.params.clone();
        let mut out = Vec::new();
        for ti in 0..params.tensors.len() {
            let mut g = vec![0.0; params.tensors[ti].len()];
            if params.tensors[ti].trainable {
                for (i, gi) in g.iter_mut().enumerate() {
                    let orig = params.tensors[ti].data[i];
                    params.tensors[ti].data[i] = orig + h;
                    let up = self.loss(&params);
                    params.tensors[ti].data[i] = orig - h;
                    let down = self.loss(&params);
                    params.tensors[ti].data[i] = orig;
                    *gi = (up - down) / (2.0 * h);
                }
            }
            out.push(g);
        }
        out
    }
}

/// Elementwise relative error with an absolute floor on the denominator.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

impl GradProblem {
    pub fn signature(&self, params: &ModelParams<f64>) -> Vec<u32> {
        let views: Vec<_> = self.inputs.iter().map(|x| x.view()).collect();
        let out = forward_batch(params, &views, Mode::Train).unwrap();
        out.cache.as_ref().unwrap().activation_signature(params)
    }

    pub fn numeric_one(&self, ti: usize, i: usize, h: f64) -> (f64, bool) {
        let mut params = self.params.clone();
        let base = self.signature(&params);
        let orig = params.tensors[ti].data[i];
        params.tensors[ti].data[i] = orig + h;
        let up = self.loss(&params);
        let sig_up = self.signature(&params);
        params.tensors[ti].data[i] = orig - h;
        let down = self.loss(&params);
        let sig_down = self.signature(&params);
        ((up - down) / (2.0 * h), sig_up == base && sig_down == base)
    }
}

/// Outcome of a full elementwise gradient comparison.
#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    /// Elements whose +-h perturbation crossed a ReLU / max-pool switch.
    pub kinks: usize,
    pub worst: f64,
    pub worst_name: String,
}

/// Compares analytic and central-difference gradients (step `h`) for every
/// trainable value. Elements where the step crosses a non-differentiable
/// point are re-measured with the largest step in {h/10, h/100, h/1000}
/// that stays on one smooth piece.
pub fn check_gradients(p: &GradProblem, h: f64, floor: f64) -> GradReport {
    let analytic = p.analytic();
    let numeric = p.numeric(h);
    let mut report = GradReport::default();
    for (ti, t) in p.params.tensors.iter().enumerate() {
        if !t.trainable {
            continue;
        }
        for i in 0..t.len() {
            report.checked += 1;
            let mut err = relative_error(analytic[ti][i], numeric[ti][i], floor);
            let (_, smooth) = p.numeric_one(ti, i, h);
            if !smooth {
                report.kinks += 1;
                err = [h / 10.0, h / 100.0, h / 1000.0]
                    .iter()
                    .map(|&hs| p.numeric_one(ti, i, hs))
                    .find(|&(_, s)| s)
                    .map(|(g, _)| relative_error(analytic[ti][i], g, floor))
                    .unwrap_or(f64::INFINITY);
            }
            if err > report.worst {
                report.worst = err;
                report.worst_name = format!("{}[{i}]", t.name);
            }
        }
    }
    report
}

/// AUC by explicit enumeration of (positive, negative) pairs.
pub fn brute_auc(pred: &[f64], reference: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0u64);
    for (i, &ri) in reference.iter().enumerate() {
        for (j, &rj) in reference.iter().enumerate() {
            if ri && !rj {
                pairs += 1;
                if pred[i] > pred[j] {
                    wins += 1.0;
                } else if pred[i] == pred[j] {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

/// Pairwise precision / recall / F1 by enumerating all frame pairs.
pub fn brute_pairwise(est: &[bool], reference: &[bool]) -> (f64, f64, f64) {
    let n = est.len();
    let (mut agree, mut est_pairs, mut ref_pairs) = (0u64, 0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let same_est = est[i] == est[j];
            let same_ref = reference[i] == reference[j];
            est_pairs += same_est as u64;
            ref_pairs += same_ref as u64;
            agree += (same_est && same_ref) as u64;
        }
    }
    let p = if est_pairs == 0 {
        1.0
    } else {
        agree as f64 / est_pairs as f64
    };
    let r = if ref_pairs == 0 {
        1.0
    } else {
        agree as f64 / ref_pairs as f64
    };
    let f = if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (p, r, f)
}

/// Peak candidates as `(index, score)` by scanning each 10 s window separately.
pub fn brute_peaks(values: &[f64], rate: f64) -> Vec<(usize, f64)> {
    let centre = |i: usize| (i as f64 + 0.5) / rate;
    let last = centre(values.len() - 1);
    let windows = (last / 10.0).floor() as usize + 1;
    let mut out = Vec::new();
    for w in 0..windows {
        let (lo, hi) = (w as f64 * 10.0, (w + 1) as f64 * 10.0);
        let mut best: Option<usize> = None;
        for i in 0..values.len() {
            let t = centre(i);
            if t >= lo && t < hi && best.is_none_or(|b| values[i] > values[b]) {
                best = Some(i);
            }
        }
        if let Some(b) = best {
            let t = centre(b);
            let ctx: Vec<f64> = (0..values.len())
                .filter(|&j| centre(j) >= t - 10.0 && centre(j) <= t + 5.0)
                .map(|j| values[j])
                .collect();
            let mean = ctx.iter().sum::<f64>() / ctx.len() as f64;
            out.push((b, values[b] - mean));
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}
