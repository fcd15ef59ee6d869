//! Fused `dense(activation(x))` for the common network tail of an
//! activation followed by the output layer. Evaluated once per removal step
//! on the Shapley path, so it is the hot loop of attribution.

use crate::nn::{Activation, Dense};

/// `out[r, j] = bias[j] + Σ_i weight[j, i] · act(x[r, i])` for each row.
/// `scratch` holds the activated inputs and is reused across calls.
pub(crate) fn activation_dense(
    x: &[f64],
    act: Option<Activation>,
    dense: &Dense,
    out: &mut [f64],
    scratch: &mut Vec<f64>,
) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were just detected.
            unsafe { activation_dense_fma(x, act, dense, out, scratch) };
            return;
        }
    }
    activation_dense_generic(x, act, dense, out, |a, b, c| a * b + c);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn activation_dense_fma(x: &[f64], act: Option<Activation>, dense: &Dense, out: &mut [f64], h: &mut Vec<f64>) {
    let (k, o) = (dense.in_units(), dense.out_units());
    h.clear();
    h.extend_from_slice(x);
    if let Some(a) = act {
        a.apply_slice(h);
    }
    let h = &h[..];
    let rows = h.len() / k;
    let w = dense.weight.data();
    let b = dense.bias.data();
    // Tiles of up to 3 samples by 4 outputs: 12 accumulators, three input
    // vectors and one weight vector fill the 16 vector registers. The four
    // weight rows stay in L1 while the samples stream past.
    for j0 in (0..o).step_by(4) {
        for s0 in (0..rows).step_by(3) {
            let (hs, ws) = (&h[s0 * k..], &w[j0 * k..]);
            let ys = &mut out[s0 * o + j0..];
            match ((rows - s0).min(3), (o - j0).min(4)) {
                (3, 4) => tile::<3, 4>(hs, ws, k, o, ys),
                (3, 3) => tile::<3, 3>(hs, ws, k, o, ys),
                (3, 2) => tile::<3, 2>(hs, ws, k, o, ys),
                (3, _) => tile::<3, 1>(hs, ws, k, o, ys),
                (2, 4) => tile::<2, 4>(hs, ws, k, o, ys),
                (2, 3) => tile::<2, 3>(hs, ws, k, o, ys),
                (2, 2) => tile::<2, 2>(hs, ws, k, o, ys),
                (2, _) => tile::<2, 1>(hs, ws, k, o, ys),
                (_, 4) => tile::<1, 4>(hs, ws, k, o, ys),
                (_, 3) => tile::<1, 3>(hs, ws, k, o, ys),
                (_, 2) => tile::<1, 2>(hs, ws, k, o, ys),
                _ => tile::<1, 1>(hs, ws, k, o, ys),
            }
        }
    }
    for yr in out.chunks_exact_mut(o) {
        for (y, bias) in yr.iter_mut().zip(b) {
            *y += bias;
        }
    }
}

/// Writes the dot products of `S` input rows with `J` weight rows (without
/// bias) into `y`, whose rows are `o` apart.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
#[allow(clippy::needless_range_loop)]
unsafe fn tile<const S: usize, const J: usize>(h: &[f64], w: &[f64], k: usize, o: usize, y: &mut [f64]) {
    use std::arch::x86_64::*;

    let full = k / 4 * 4;
    let mut acc = [[_mm256_setzero_pd(); J]; S];
    for i in (0..full).step_by(4) {
        let mut hv = [_mm256_setzero_pd(); S];
        for (s, v) in hv.iter_mut().enumerate() {
            *v = _mm256_loadu_pd(h.as_ptr().add(s * k + i));
        }
        for j in 0..J {
            let wv = _mm256_loadu_pd(w.as_ptr().add(j * k + i));
            for s in 0..S {
                acc[s][j] = _mm256_fmadd_pd(wv, hv[s], acc[s][j]);
            }
        }
    }
    for s in 0..S {
        for j in 0..J {
            let mut lanes = [0.0f64; 4];
            _mm256_storeu_pd(lanes.as_mut_ptr(), acc[s][j]);
            y[s * o + j] = finish(lanes, &w[j * k + full..(j + 1) * k], &h[s * k + full..(s + 1) * k], f64::mul_add);
        }
    }
}

fn activation_dense_generic(
    x: &[f64],
    act: Option<Activation>,
    dense: &Dense,
    out: &mut [f64],
    fma: impl Fn(f64, f64, f64) -> f64 + Copy,
) {
    let (k, o) = (dense.in_units(), dense.out_units());
    let w = dense.weight.data();
    let b = dense.bias.data();
    let full = k / 4 * 4;
    let mut h = vec![0.0; k];
    for (xr, yr) in x.chunks_exact(k).zip(out.chunks_exact_mut(o)) {
        h.copy_from_slice(xr);
        if let Some(a) = act {
            a.apply_slice(&mut h);
        }
        for j in 0..o {
            let row = &w[j * k..(j + 1) * k];
            let mut lanes = [0.0f64; 4];
            for i in (0..full).step_by(4) {
                for l in 0..4 {
                    lanes[l] = fma(row[i + l], h[i + l], lanes[l]);
                }
            }
            yr[j] = finish(lanes, &row[full..], &h[full..], fma) + b[j];
        }
    }
}

/// Reduces the four lanes in a fixed order and adds the leftover products.
#[inline(always)]
fn finish(lanes: [f64; 4], w: &[f64], h: &[f64], fma: impl Fn(f64, f64, f64) -> f64) -> f64 {
    let mut s = (lanes[0] + lanes[2]) + (lanes[1] + lanes[3]);
    for (a, b) in w.iter().zip(h) {
        s = fma(*a, *b, s);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn matches_layer_forward() {
        let (m, k, o) = (3, 11, 6);
        let w: Vec<f64> = (0..o * k).map(|i| ((i * 37) % 23) as f64 / 7.0 - 1.5).collect();
        let dense =
            Dense::new(Tensor::new(vec![o, k], w).unwrap(), Tensor::new(vec![o], vec![0.5; o]).unwrap()).unwrap();
        let x: Vec<f64> = (0..m * k).map(|i| ((i * 13) % 17) as f64 / 4.0 - 2.0).collect();
        let act = Activation::LeakyRelu(0.1);
        let mut out = vec![0.0; m * o];
        activation_dense(&x, Some(act), &dense, &mut out, &mut Vec::new());
        for r in 0..m {
            for j in 0..o {
                let want: f64 =
                    0.5 + (0..k).map(|i| dense.weight.data()[j * k + i] * act.apply(x[r * k + i])).sum::<f64>();
                assert!((out[r * o + j] - want).abs() < 1e-12, "{} vs {want}", out[r * o + j]);
            }
        }
    }
}
