//! Row-wise kernels shared by the training and inference passes.

use super::Scalar;

pub(crate) const LN_EPS: f64 = 1e-5;

/// Normalized rows `xhat` and reciprocal deviations, kept for backward.
pub(crate) struct NormCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

pub(crate) fn layer_norm<T: Scalar>(x: &[T], d: usize, gain: &[T], bias: &[T], out: &mut [T]) -> NormCache<T> {
    let rows = x.len() / d;
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    let inv_d = T::of(1.0 / d as f64);
    let eps = T::of(LN_EPS);
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().copied().sum::<T>() * inv_d;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        let xh = &mut xhat[r * d..(r + 1) * d];
        let o = &mut out[r * d..(r + 1) * d];
        for i in 0..d {
            xh[i] = (xr[i] - mean) * rs;
            o[i] = xh[i] * gain[i] + bias[i];
        }
    }
    NormCache { xhat, rstd }
}

/// Inference-only normalization without a cache.
pub(crate) fn layer_norm_rows<T: Scalar>(x: &[T], d: usize, gain: &[T], bias: &[T], out: &mut [T]) {
    let inv_d = T::of(1.0 / d as f64);
    let eps = T::of(LN_EPS);
    for (xr, o) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        let mean = xr.iter().copied().sum::<T>() * inv_d;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        for i in 0..d {
            o[i] = (xr[i] - mean) * rs * gain[i] + bias[i];
        }
    }
}

/// Accumulates gain/bias gradients and adds the input gradient into `dx`.
pub(crate) fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    d: usize,
    cache: &NormCache<T>,
    gain: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
    dx: &mut [T],
) {
    let inv_d = T::of(1.0 / d as f64);
    let mut dxhat = vec![T::zero(); d];
    for (r, &rs) in cache.rstd.iter().enumerate() {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for i in 0..d {
            dgain[i] = dgain[i] + dyr[i] * xh[i];
            dbias[i] = dbias[i] + dyr[i];
            dxhat[i] = dyr[i] * gain[i];
            mean_dxhat = mean_dxhat + dxhat[i];
            mean_dxhat_xhat = mean_dxhat_xhat + dxhat[i] * xh[i];
        }
        mean_dxhat = mean_dxhat * inv_d;
        mean_dxhat_xhat = mean_dxhat_xhat * inv_d;
        let dxr = &mut dx[r * d..(r + 1) * d];
        for i in 0..d {
            dxr[i] = dxr[i] + rs * (dxhat[i] - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
}

/// `x[r, :] += b` for every row.
pub(crate) fn add_bias<T: Scalar>(x: &mut [T], b: &[T]) {
    for row in x.chunks_exact_mut(b.len()) {
        for (v, &bi) in row.iter_mut().zip(b) {
            *v = *v + bi;
        }
    }
}

/// `db += Σ_r dy[r, :]`.
pub(crate) fn accumulate_colsum<T: Scalar>(dy: &[T], db: &mut [T]) {
    for row in dy.chunks_exact(db.len()) {
        for (g, &v) in db.iter_mut().zip(row) {
            *g = *g + v;
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_K: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub(crate) fn gelu<T: Scalar>(u: &[T], out: &mut [T]) {
    let (c, k, half) = (T::of(GELU_C), T::of(GELU_K), T::of(0.5));
    for (o, &x) in out.iter_mut().zip(u) {
        let t = (c * (x + k * x * x * x)).tanh();
        *o = half * x * (T::one() + t);
    }
}

/// `du = dg · gelu'(u)`, in place over `dg`.
pub(crate) fn gelu_backward<T: Scalar>(u: &[T], dg: &mut [T]) {
    let (c, k, half, three) = (T::of(GELU_C), T::of(GELU_K), T::of(0.5), T::of(3.0));
    for (g, &x) in dg.iter_mut().zip(u) {
        let t = (c * (x + k * x * x * x)).tanh();
        let dt = (T::one() - t * t) * c * (T::one() + three * k * x * x);
        *g = *g * (half * (T::one() + t) + half * x * dt);
    }
}

/// Numerically stable softmax in place.
pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v = *v * inv;
    }
}

/// Index of the largest value, lowest index on ties.
pub(crate) fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// One query row of one head attending over `n` keys. `keys` and `values`
/// start at the head's first column and advance by `stride` per position.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attend<T: Scalar>(
    q: &[T],
    keys: &[T],
    values: &[T],
    stride: usize,
    n: usize,
    scale: T,
    probs: &mut [T],
    ctx: &mut [T],
) {
    let hd = q.len();
    for j in 0..n {
        let k = &keys[j * stride..j * stride + hd];
        probs[j] = q.iter().zip(k).map(|(&a, &b)| a * b).sum::<T>() * scale;
    }
    softmax_in_place(&mut probs[..n]);
    ctx.iter_mut().for_each(|c| *c = T::zero());
    for j in 0..n {
        let p = probs[j];
        let v = &values[j * stride..j * stride + hd];
        for (c, &vv) in ctx.iter_mut().zip(v) {
            *c = *c + p * vv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut row = vec![1.0f32, 2.0, -3.0, 40.0, 40.0];
        softmax_in_place(&mut row);
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert_eq!(row[3], row[4]);
    }

    #[test]
    fn argmax_prefers_lowest_id_on_ties() {
        assert_eq!(argmax(&[0.5f32, 2.0, 2.0, 1.0]), 1);
        assert_eq!(argmax(&[3.0f32, 3.0]), 0);
    }

    #[test]
    fn gelu_derivative_matches_differences() {
        let xs = [-3.0f64, -0.7, 0.0, 0.4, 2.5];
        for &x in &xs {
            let h = 1e-6;
            let mut hi = [0.0];
            let mut lo = [0.0];
            gelu(&[x + h], &mut hi);
            gelu(&[x - h], &mut lo);
            let numeric = (hi[0] - lo[0]) / (2.0 * h);
            let mut g = [1.0];
            gelu_backward(&[x], &mut g);
            assert!((g[0] - numeric).abs() < 1e-8, "{x}");
        }
    }

    #[test]
    fn layer_norm_backward_matches_differences() {
        let d = 5;
        let x: Vec<f64> = (0..2 * d).map(|i| (i as f64 * 0.9).sin()).collect();
        let gain: Vec<f64> = (0..d).map(|i| 1.0 + 0.1 * i as f64).collect();
        let bias = vec![0.2; d];
        let w: Vec<f64> = (0..2 * d).map(|i| (i as f64 * 0.3).cos()).collect();
        let objective = |x: &[f64]| {
            let mut y = vec![0.0; x.len()];
            layer_norm(x, d, &gain, &bias, &mut y);
            y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut y = vec![0.0; x.len()];
        let cache = layer_norm(&x, d, &gain, &bias, &mut y);
        let (mut dg, mut db, mut dx) = (vec![0.0; d], vec![0.0; d], vec![0.0; x.len()]);
        layer_norm_backward(&w, d, &cache, &gain, &mut dg, &mut db, &mut dx);
        for i in 0..x.len() {
            let h = 1e-6;
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let numeric = (objective(&xp) - objective(&xm)) / (2.0 * h);
            assert!((dx[i] - numeric).abs() < 1e-7, "{i}: {} vs {numeric}", dx[i]);
        }
    }
}
