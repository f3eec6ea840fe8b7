//! Low-level kernels on flat row-major buffers.
//!
//! Activations are laid out `[batch, channel, time, mel]`; a per-sample slice
//! is `[channel, time * mel]` so convolutions reduce to one GEMM per sample.

use super::params::Real;

pub(crate) const BN_EPS: f64 = 1e-3;

/// Unfolds a `[c, t, f]` input into `[c * kt * kf, t * f]` patch columns
/// for a stride-1, same-padded `kt x kf` convolution.
pub(crate) fn im2col<A: Real>(
    x: &[A],
    c: usize,
    t: usize,
    f: usize,
    kt: usize,
    kf: usize,
    cols: &mut [A],
) {
    let plane = t * f;
    debug_assert_eq!(x.len(), c * plane);
    debug_assert_eq!(cols.len(), c * kt * kf * plane);
    for ci in 0..c {
        let src = &x[ci * plane..(ci + 1) * plane];
        for dt in 0..kt {
            let ot = dt as isize - (kt / 2) as isize;
            for df in 0..kf {
                let of = df as isize - (kf / 2) as isize;
                let row = (ci * kt + dt) * kf + df;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let lo = (-of).max(0) as usize;
                let hi = (f as isize - of).min(f as isize).max(0) as usize;
                for ti in 0..t {
                    let d = &mut dst[ti * f..(ti + 1) * f];
                    let st = ti as isize + ot;
                    if st < 0 || st >= t as isize || lo >= hi {
                        d.fill(A::zero());
                        continue;
                    }
                    let s = &src[st as usize * f..(st as usize + 1) * f];
                    d[..lo].fill(A::zero());
                    d[hi..].fill(A::zero());
                    let (slo, shi) = ((lo as isize + of) as usize, (hi as isize + of) as usize);
                    d[lo..hi].copy_from_slice(&s[slo..shi]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch-column gradients into `dx`.
pub(crate) fn col2im<A: Real>(
    cols: &[A],
    c: usize,
    t: usize,
    f: usize,
    kt: usize,
    kf: usize,
    dx: &mut [A],
) {
    let plane = t * f;
    for ci in 0..c {
        let dst = &mut dx[ci * plane..(ci + 1) * plane];
        for dt in 0..kt {
            let ot = dt as isize - (kt / 2) as isize;
            for df in 0..kf {
                let of = df as isize - (kf / 2) as isize;
                let row = (ci * kt + dt) * kf + df;
                let src = &cols[row * plane..(row + 1) * plane];
                let lo = (-of).max(0) as usize;
                let hi = (f as isize - of).min(f as isize).max(0) as usize;
                if lo >= hi {
                    continue;
                }
                for ti in 0..t {
                    let st = ti as isize + ot;
                    if st < 0 || st >= t as isize {
                        continue;
                    }
                    let s = &src[ti * f + lo..ti * f + hi];
                    let d = &mut dst[st as usize * f..(st as usize + 1) * f];
                    let (dlo, dhi) = ((lo as isize + of) as usize, (hi as isize + of) as usize);
                    for (o, &g) in d[dlo..dhi].iter_mut().zip(s) {
                        *o += g;
                    }
                }
            }
        }
    }
}

/// Saved state of a train-mode batch norm + ReLU.
#[derive(Debug, Clone)]
pub(crate) struct BnCache<A> {
    pub xhat: Vec<A>,
    pub inv_std: Vec<A>,
    pub batch_mean: Vec<A>,
    pub batch_var: Vec<A>,
}

/// Statistics source for batch norm.
pub(crate) enum BnStats<'a, A> {
    Batch,
    Running { mean: &'a [A], var: &'a [A] },
}

/// In-place `relu(gamma * (z - mean) / sqrt(var + eps) + beta)` over a
/// `[b, c, s]` buffer, normalising per channel. Returns the cache in batch mode.
pub(crate) fn bn_relu_forward<A: Real>(
    z: &mut [A],
    b: usize,
    c: usize,
    s: usize,
    gamma: &[A],
    beta: &[A],
    stats: BnStats<'_, A>,
) -> Option<BnCache<A>> {
    let eps = A::from_f64(BN_EPS);
    match stats {
        BnStats::Running { mean, var } => {
            for bi in 0..b {
                for ci in 0..c {
                    let scale = gamma[ci] / (var[ci] + eps).sqrt();
                    let shift = beta[ci] - mean[ci] * scale;
                    for v in &mut z[(bi * c + ci) * s..(bi * c + ci + 1) * s] {
                        *v = (*v * scale + shift).max(A::zero());
                    }
                }
            }
            None
        }
        BnStats::Batch => {
            let m = A::from_f64((b * s) as f64);
            let mut batch_mean = vec![A::zero(); c];
            let mut batch_var = vec![A::zero(); c];
            let mut inv_std = vec![A::zero(); c];
            for ci in 0..c {
                let mut sum = A::zero();
                for bi in 0..b {
                    for &v in &z[(bi * c + ci) * s..(bi * c + ci + 1) * s] {
                        sum += v;
                    }
                }
                let mean = sum / m;
                let mut sq = A::zero();
                for bi in 0..b {
                    for &v in &z[(bi * c + ci) * s..(bi * c + ci + 1) * s] {
                        let d = v - mean;
                        sq += d * d;
                    }
                }
                batch_mean[ci] = mean;
                batch_var[ci] = sq / m;
                inv_std[ci] = A::one() / (batch_var[ci] + eps).sqrt();
            }
            let mut xhat = vec![A::zero(); z.len()];
            for bi in 0..b {
                for ci in 0..c {
                    let range = (bi * c + ci) * s..(bi * c + ci + 1) * s;
                    let (mean, istd, g, bt) = (batch_mean[ci], inv_std[ci], gamma[ci], beta[ci]);
                    for (v, xh) in z[range.clone()].iter_mut().zip(&mut xhat[range]) {
                        *xh = (*v - mean) * istd;
                        *v = (g * *xh + bt).max(A::zero());
                    }
                }
            }
            Some(BnCache {
                xhat,
                inv_std,
                batch_mean,
                batch_var,
            })
        }
    }
}

/// Backward of [`bn_relu_forward`] in batch mode: turns `dy` (gradient at the
/// ReLU output) into the gradient at the BN input, in place, and accumulates
/// the gamma/beta gradients.
#[allow(clippy::too_many_arguments)]
pub(crate) fn bn_relu_backward<A: Real>(
    dy: &mut [A],
    b: usize,
    c: usize,
    s: usize,
    cache: &BnCache<A>,
    gamma: &[A],
    beta: &[A],
    dgamma: &mut [A],
    dbeta: &mut [A],
) {
    let m = A::from_f64((b * s) as f64);
    for ci in 0..c {
        let (g, bt) = (gamma[ci], beta[ci]);
        let mut sum_dy = A::zero();
        let mut sum_dy_xhat = A::zero();
        for bi in 0..b {
            let range = (bi * c + ci) * s..(bi * c + ci + 1) * s;
            for (d, &xh) in dy[range.clone()].iter_mut().zip(&cache.xhat[range]) {
                if g * xh + bt <= A::zero() {
                    *d = A::zero();
                }
                sum_dy += *d;
                sum_dy_xhat += *d * xh;
            }
        }
        dgamma[ci] += sum_dy_xhat;
        dbeta[ci] += sum_dy;
        let k = g * cache.inv_std[ci] / m;
        for bi in 0..b {
            let range = (bi * c + ci) * s..(bi * c + ci + 1) * s;
            for (d, &xh) in dy[range.clone()].iter_mut().zip(&cache.xhat[range]) {
                *d = k * (m * *d - sum_dy - xh * sum_dy_xhat);
            }
        }
    }
}

/// Max-pool the innermost axis of `rows x f` by `p`; returns pooled values
/// and the winning position of each output.
pub(crate) fn max_pool_inner<A: Real>(
    x: &[A],
    rows: usize,
    f: usize,
    p: usize,
) -> (Vec<A>, Vec<u32>) {
    let n = rows * (f / p);
    let mut out = vec![A::zero(); n];
    let mut idx = vec![0u32; n];
    for (j, ((window, o), slot)) in x
        .chunks_exact(p)
        .zip(out.iter_mut())
        .zip(idx.iter_mut())
        .enumerate()
    {
        let mut best = 0;
        let mut val = window[0];
        for (k, &v) in window.iter().enumerate().skip(1) {
            if v > val {
                best = k;
                val = v;
            }
        }
        *o = val;
        *slot = (j * p + best) as u32;
    }
    (out, idx)
}

pub(crate) fn max_pool_inner_backward<A: Real>(dout: &[A], idx: &[u32], dx: &mut [A]) {
    for (&g, &i) in dout.iter().zip(idx) {
        dx[i as usize] += g;
    }
}

/// Window geometry of the head pooling over time.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TimePooling {
    pub pool: usize,
    pub stride: usize,
    pub pad: usize,
    pub windows: usize,
}

impl TimePooling {
    /// Valid frame range of window `w` (left padding excluded).
    pub fn range(&self, w: usize, t: usize) -> (usize, usize) {
        let start = (w * self.stride) as isize - self.pad as isize;
        let lo = start.max(0) as usize;
        let hi = ((start + self.pool as isize).max(0) as usize).min(t);
        (lo, hi)
    }
}

/// Mean and max over each time window of a `[b, c, t]` buffer.
/// Output feature `(w * 2 + stat) * c + ch`, stat 0 = mean, 1 = max.
pub(crate) fn time_pool_forward<A: Real>(
    x: &[A],
    b: usize,
    c: usize,
    t: usize,
    tp: TimePooling,
) -> (Vec<A>, Vec<u32>) {
    let k = tp.windows * 2 * c;
    let mut out = vec![A::zero(); b * k];
    let mut argmax = vec![0u32; b * tp.windows * c];
    for bi in 0..b {
        for w in 0..tp.windows {
            let (lo, hi) = tp.range(w, t);
            let count = A::from_f64((hi - lo) as f64);
            for ch in 0..c {
                let row = &x[(bi * c + ch) * t..(bi * c + ch + 1) * t];
                let mut sum = A::zero();
                let mut best = lo;
                for (i, &v) in row.iter().enumerate().take(hi).skip(lo) {
                    sum += v;
                    if v > row[best] {
                        best = i;
                    }
                }
                out[bi * k + (w * 2) * c + ch] = sum / count;
                out[bi * k + (w * 2 + 1) * c + ch] = row[best];
                argmax[(bi * tp.windows + w) * c + ch] = best as u32;
            }
        }
    }
    (out, argmax)
}

pub(crate) fn time_pool_backward<A: Real>(
    dout: &[A],
    argmax: &[u32],
    b: usize,
    c: usize,
    t: usize,
    tp: TimePooling,
) -> Vec<A> {
    let k = tp.windows * 2 * c;
    let mut dx = vec![A::zero(); b * c * t];
    for bi in 0..b {
        for w in 0..tp.windows {
            let (lo, hi) = tp.range(w, t);
            let inv = A::one() / A::from_f64((hi - lo) as f64);
            for ch in 0..c {
                let row = &mut dx[(bi * c + ch) * t..(bi * c + ch + 1) * t];
                let gm = dout[bi * k + (w * 2) * c + ch] * inv;
                for v in &mut row[lo..hi] {
                    *v += gm;
                }
                let best = argmax[(bi * tp.windows + w) * c + ch] as usize;
                row[best] += dout[bi * k + (w * 2 + 1) * c + ch];
            }
        }
    }
    dx
}

pub(crate) fn sigmoid<A: Real>(z: A) -> A {
    if z >= A::zero() {
        A::one() / (A::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (A::one() + e)
    }
}
