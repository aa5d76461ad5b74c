//! Raw f64 kernels shared by the tape ops and the cached inference path.
//!
//! Every kernel iterates in a fixed order so that outputs are bit-identical
//! across runs and across the full-sequence / stepwise code paths.

/// out = a @ b, a: [m x k], b: [k x n].
pub fn matmul(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    out.fill(0.0);
    matmul_acc(out, a, b, m, k, n);
}

/// out += a @ b.
pub fn matmul_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..i * k + k];
        let out_row = &mut out[i * n..i * n + n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..p * n + n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o += a_ip * bv;
            }
        }
    }
}

/// out += a @ b^T, a: [m x k], b: [n x k], out: [m x n].
pub fn matmul_nt_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..i * k + k];
        let out_row = &mut out[i * n..i * n + n];
        for (j, o) in out_row.iter_mut().enumerate() {
            *o += dot(a_row, &b[j * k..j * k + k]);
        }
    }
}

/// out += a^T @ b, a: [m x k], b: [m x n], out: [k x n].
pub fn matmul_tn_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let a_row = &a[i * k..i * k + k];
        let b_row = &b[i * n..i * n + n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let out_row = &mut out[p * n..p * n + n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o += a_ip * bv;
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// In-place numerically stabilized softmax over one row. `-inf` entries map
/// to weight zero (there must be at least one finite entry).
pub fn softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        if *v == f64::NEG_INFINITY {
            *v = 0.0;
        } else {
            *v = (*v - max).exp();
        }
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// d/dx silu(x) = sigmoid(x) * (1 + x * (1 - sigmoid(x))).
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Standardize one row to mean 0 / variance 1 (population variance), then
/// apply the affine gain/bias. Returns (mean, rstd) for the backward pass.
pub fn layer_norm_row(
    out: &mut [f64],
    x: &[f64],
    gain: &[f64],
    bias: &[f64],
    eps: f64,
) -> (f64, f64) {
    let d = x.len();
    let mean = x.iter().sum::<f64>() / d as f64;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
    let rstd = 1.0 / (var + eps).sqrt();
    for i in 0..d {
        out[i] = (x[i] - mean) * rstd * gain[i] + bias[i];
    }
    (mean, rstd)
}

/// Rotate consecutive dimension pairs of one row of head-major Q/K data by
/// position-dependent angles. `row` holds `n_heads * head_dim` values with
/// each head contiguous; pair i of each head rotates by
/// `pos * theta^(-2i/head_dim)`, negated angles for `inverse` (the backward).
pub fn rope_rotate_row(row: &mut [f64], head_dim: usize, pos: usize, theta: f64, inverse: bool) {
    debug_assert_eq!(row.len() % head_dim, 0);
    let half = head_dim / 2;
    let n_heads = row.len() / head_dim;
    for i in 0..half {
        let freq = theta.powf(-2.0 * i as f64 / head_dim as f64);
        let angle = pos as f64 * freq;
        let (sin, cos) = if inverse {
            ((-angle).sin(), (-angle).cos())
        } else {
            (angle.sin(), angle.cos())
        };
        for h in 0..n_heads {
            let base = h * head_dim + 2 * i;
            let x0 = row[base];
            let x1 = row[base + 1];
            row[base] = x0 * cos - x1 * sin;
            row[base + 1] = x0 * sin + x1 * cos;
        }
    }
}

/// Causal attention probabilities for one head.
///
/// q: [t_q x hd], keys: [t_k x hd]; query row i attends to key columns
/// j <= i + offset. Writes softmax(scale * q_i . k_j) into `probs` ([t_q x t_k],
/// masked entries exactly zero).
pub fn attn_probs_causal(
    probs: &mut [f64],
    q: &[f64],
    keys: &[f64],
    t_q: usize,
    t_k: usize,
    hd: usize,
    offset: usize,
    scale: f64,
) {
    debug_assert_eq!(probs.len(), t_q * t_k);
    for i in 0..t_q {
        let lim = (i + offset).min(t_k - 1);
        let q_row = &q[i * hd..i * hd + hd];
        let p_row = &mut probs[i * t_k..i * t_k + t_k];
        for j in 0..=lim {
            p_row[j] = scale * dot(q_row, &keys[j * hd..j * hd + hd]);
        }
        softmax_row(&mut p_row[..=lim]);
        p_row[lim + 1..].fill(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_hand_example() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut out = [0.0; 4];
        matmul(&mut out, &a, &b, 2, 2, 2);
        assert_eq!(out, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn transposed_variants_agree_with_explicit_transpose() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 * 0.7 - 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..6).map(|i| (i as f64).sin()).collect(); // 2x3
        // a @ b^T, b^T is 3x2
        let mut nt = vec![0.0; 4];
        matmul_nt_acc(&mut nt, &a, &b, 2, 3, 2);
        let mut bt = vec![0.0; 6];
        for r in 0..2 {
            for c in 0..3 {
                bt[c * 2 + r] = b[r * 3 + c];
            }
        }
        let mut direct = vec![0.0; 4];
        matmul(&mut direct, &a, &bt, 2, 3, 2);
        for (x, y) in nt.iter().zip(direct.iter()) {
            assert!((x - y).abs() < 1e-15);
        }
        // a^T @ b, a^T is 3x2
        let mut tn = vec![0.0; 9];
        matmul_tn_acc(&mut tn, &a, &b, 2, 3, 3);
        let mut at = vec![0.0; 6];
        for r in 0..2 {
            for c in 0..3 {
                at[c * 2 + r] = a[r * 3 + c];
            }
        }
        let mut direct2 = vec![0.0; 9];
        matmul(&mut direct2, &at, &b, 3, 2, 3);
        for (x, y) in tn.iter().zip(direct2.iter()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_handles_neg_infinity() {
        let mut row = [0.0, f64::NEG_INFINITY, 0.0];
        softmax_row(&mut row);
        assert_eq!(row[1], 0.0);
        assert!((row[0] - 0.5).abs() < 1e-15);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
