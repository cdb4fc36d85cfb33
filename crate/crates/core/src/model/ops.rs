//! Row-wise kernels with hand-written adjoints.

use crate::kernels::Float;

/// `y = g ⊙ x / rms(x)` per row of width `d`; stores `1/rms` per row.
pub(crate) fn rmsnorm<F: Float>(x: &[F], g: &[F], d: usize, eps: F, y: &mut [F], inv: &mut [F]) {
    for ((xr, yr), iv) in x.chunks_exact(d).zip(y.chunks_exact_mut(d)).zip(inv.iter_mut()) {
        let ms = xr.iter().map(|&v| v * v).sum::<F>() / F::of(d as f64);
        let r = F::one() / (ms + eps).sqrt();
        *iv = r;
        for ((o, &v), &gi) in yr.iter_mut().zip(xr).zip(g) {
            *o = gi * v * r;
        }
    }
}

/// Accumulates `dx += ∂/∂x`, `dg += ∂/∂g`.
pub(crate) fn rmsnorm_backward<F: Float>(x: &[F], g: &[F], inv: &[F], dy: &[F], d: usize, dx: &mut [F], dg: &mut [F]) {
    let dn = F::of(d as f64);
    for (((xr, dyr), dxr), &r) in x.chunks_exact(d).zip(dy.chunks_exact(d)).zip(dx.chunks_exact_mut(d)).zip(inv) {
        let mut dot = F::zero();
        for i in 0..d {
            dg[i] += dyr[i] * xr[i] * r;
            dot += g[i] * dyr[i] * xr[i];
        }
        let c = r * r * r * dot / dn;
        for i in 0..d {
            dxr[i] += r * g[i] * dyr[i] - xr[i] * c;
        }
    }
}

#[cfg(test)]
pub(crate) fn sigmoid<F: Float>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

#[cfg(test)]
pub(crate) fn silu<F: Float>(x: F) -> F {
    x * sigmoid(x)
}

#[cfg(test)]
pub(crate) fn silu_grad<F: Float>(x: F) -> F {
    let s = sigmoid(x);
    s * (F::one() + x * (F::one() - s))
}

/// `out = σ(x)` elementwise through the vectorised exponential.
pub(crate) fn sigmoid_slice<F: Float>(x: &[F], out: &mut [F]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = -v;
    }
    F::exp_slice(out);
    for o in out.iter_mut() {
        *o = F::one() / (F::one() + *o);
    }
}

/// Softmax of a score row restricted to the always-visible prefix
/// `[0, prefix)` and the half-open `intervals` offset by `prefix`; every
/// other entry becomes an exact zero.
pub(crate) fn masked_softmax<F: Float>(row: &mut [F], prefix: usize, intervals: &[(usize, usize)]) {
    let spans = || std::iter::once((0, prefix)).chain(intervals.iter().map(|&(a, b)| (prefix + a, prefix + b)));
    let mut max = F::neg_infinity();
    for (a, b) in spans() {
        for &x in &row[a..b] {
            max = max.max(x);
        }
    }
    if max == F::neg_infinity() {
        row.iter_mut().for_each(|x| *x = F::zero());
        return;
    }
    let mut sum = F::zero();
    let mut cursor = 0;
    for (a, b) in spans() {
        row[cursor..a].iter_mut().for_each(|x| *x = F::zero());
        let seg = &mut row[a..b];
        seg.iter_mut().for_each(|x| *x -= max);
        F::exp_slice(seg);
        for &x in seg.iter() {
            sum += x;
        }
        cursor = cursor.max(b);
    }
    row[cursor..].iter_mut().for_each(|x| *x = F::zero());
    let inv = F::one() / sum;
    for (a, b) in spans() {
        row[a..b].iter_mut().for_each(|x| *x *= inv);
    }
}

/// Cos/sin tables for a list of rotary positions, `half = head_dim/2`
/// entries per position.
pub(crate) struct RopeTable<F> {
    pub cos: Vec<F>,
    pub sin: Vec<F>,
    pub half: usize,
}

impl<F: Float> RopeTable<F> {
    pub fn new(positions: &[u32], head_dim: usize, base: f64) -> RopeTable<F> {
        let half = head_dim / 2;
        let mut cos = Vec::with_capacity(positions.len() * half);
        let mut sin = Vec::with_capacity(positions.len() * half);
        for &p in positions {
            for i in 0..half {
                let theta = p as f64 * base.powf(-2.0 * i as f64 / head_dim as f64);
                cos.push(F::of(theta.cos()));
                sin.push(F::of(theta.sin()));
            }
        }
        RopeTable { cos, sin, half }
    }

    /// Rotate each head's `(i, i + half)` pairs in place; `inverse` applies
    /// the transpose (used for gradients).
    pub fn apply(&self, x: &mut [F], width: usize, inverse: bool) {
        let h = self.half;
        for (r, row) in x.chunks_exact_mut(width).enumerate() {
            let (c, s) = (&self.cos[r * h..(r + 1) * h], &self.sin[r * h..(r + 1) * h]);
            for head in row.chunks_exact_mut(2 * h) {
                for i in 0..h {
                    let (a, b) = (head[i], head[i + h]);
                    let sn = if inverse { -s[i] } else { s[i] };
                    head[i] = a * c[i] - b * sn;
                    head[i + h] = a * sn + b * c[i];
                }
            }
        }
    }
}

/// `[sin(1000·t·ω_i)…, cos(1000·t·ω_i)…]`, `ω_i = 10000^(−i/half)`.
pub fn sinusoidal_features(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let w = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let a = 1000.0 * t * w;
        out[i] = a.sin();
        out[i + half] = a.cos();
    }
    out
}

/// Max-subtracted softmax; `-inf` entries become exact zeros.
pub fn softmax_in_place<F: Float>(row: &mut [F]) {
    let max = row.iter().fold(F::neg_infinity(), |m, &x| m.max(x));
    if max == F::neg_infinity() {
        row.iter_mut().for_each(|x| *x = F::zero());
        return;
    }
    let mut sum = F::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = F::one() / sum;
    row.iter_mut().for_each(|x| *x *= inv);
}
