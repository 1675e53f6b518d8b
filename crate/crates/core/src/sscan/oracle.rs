//! Reference implementations used to check the scan kernels.
//!
//! These share no code with the fast path: projections are plain loops, all
//! arithmetic is in `f64`, and every hidden state `hₜ` is materialised.

use super::SSMParams;
use crate::error::{arg_err, shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Upper bound on `L·D·N` accepted by [`s6_scan_oracle`].
pub const ORACLE_MAX_WORK: usize = 1_000_000;

fn f64s<T: Scalar>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.as_f64()).collect()
}

/// `W x` for a row-major `[out, in]` matrix.
fn matvec(w: &[f64], x: &[f64], out: usize) -> Vec<f64> {
    let din = x.len();
    (0..out)
        .map(|o| (0..din).map(|i| w[o * din + i] * x[i]).sum())
        .collect()
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Explicit-loop S6 over `x: [B, L, D]`.
pub fn s6_scan_oracle<T: Scalar>(x: &Tensor<T>, params: &SSMParams<T>) -> Result<Tensor<T>> {
    if x.rank() != 3 || x.dim(2) != params.d_inner {
        return Err(shape_err!(
            "s6_scan_oracle: input {:?} vs d_inner {}",
            x.shape(),
            params.d_inner
        ));
    }
    let (bsz, l, d) = (x.dim(0), x.dim(1), x.dim(2));
    let n = params.d_state;
    if l == 0 {
        return Err(arg_err!("s6_scan_oracle: empty sequence"));
    }
    if l * d * n > ORACLE_MAX_WORK {
        return Err(arg_err!(
            "s6_scan_oracle: L·D·N = {} exceeds {}",
            l * d * n,
            ORACLE_MAX_WORK
        ));
    }
    for p in params.params() {
        if p.tensor.has_non_finite() {
            return Err(Error::Numeric(format!("{} contains NaN or Inf", p.name)));
        }
    }
    let xs = f64s(x);
    let a: Vec<f64> = f64s(&params.a_log.tensor)
        .iter()
        .map(|v| -v.exp())
        .collect();
    let d_skip = f64s(&params.d_skip.tensor);
    let dt_down = f64s(&params.dt_down.tensor);
    let dt_up = f64s(&params.dt_up.tensor);
    let dt_bias = f64s(&params.dt_bias.tensor);
    let b_proj = f64s(&params.b_proj.tensor);
    let c_proj = f64s(&params.c_proj.tensor);

    let mut y = Vec::with_capacity(bsz * l * d);
    for bi in 0..bsz {
        // hs[t][d][n], with hs[0] = h₀ = 0
        let mut hs = vec![vec![vec![0.0f64; n]; d]; l + 1];
        for t in 0..l {
            let xt = &xs[(bi * l + t) * d..][..d];
            let low = matvec(&dt_down, xt, params.dt_rank);
            let delta: Vec<f64> = matvec(&dt_up, &low, d)
                .iter()
                .zip(&dt_bias)
                .map(|(v, b)| softplus(v + b))
                .collect();
            let bt = matvec(&b_proj, xt, n);
            let ct = matvec(&c_proj, xt, n);
            for di in 0..d {
                let mut yt = d_skip[di] * xt[di];
                for k in 0..n {
                    let a_bar = (delta[di] * a[di * n + k]).exp();
                    let b_bar = delta[di] * bt[k];
                    hs[t + 1][di][k] = a_bar * hs[t][di][k] + b_bar * xt[di];
                    yt += ct[k] * hs[t + 1][di][k];
                }
                y.push(T::lit(yt));
            }
        }
    }
    Tensor::new(x.shape(), y)
}

/// Grid coordinates `(row, col)` in visiting order for scan direction
/// `v ∈ 0..4`, enumerated with nested loops.
fn visit_order(v: usize, h: usize, w: usize) -> Vec<(usize, usize)> {
    let mut rows = Vec::new();
    for r in 0..h {
        for c in 0..w {
            rows.push((r, c));
        }
    }
    let mut cols = Vec::new();
    for c in 0..w {
        for r in 0..h {
            cols.push((r, c));
        }
    }
    match v {
        0 => rows,
        1 => cols,
        2 => rows.into_iter().rev().collect(),
        _ => cols.into_iter().rev().collect(),
    }
}

/// Naive `[B, H, W, C]` → `[B, 4, H·W, C]`.
pub fn expand_oracle<T: Scalar>(f: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, h, w, c) = (f.dim(0), f.dim(1), f.dim(2), f.dim(3));
    let x = f.data();
    let mut out = Vec::with_capacity(4 * f.numel());
    for bi in 0..b {
        for v in 0..4 {
            for (r, col) in visit_order(v, h, w) {
                for k in 0..c {
                    out.push(x[((bi * h + r) * w + col) * c + k]);
                }
            }
        }
    }
    Tensor::new(&[b, 4, h * w, c], out)
}

/// Naive `[B, 4, H·W, C]` → `[B, H, W, C]` with summation.
pub fn merge_oracle<T: Scalar>(s: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (b, c) = (s.dim(0), s.dim(3));
    let x = s.data();
    let mut out = vec![0.0f64; b * h * w * c];
    for bi in 0..b {
        for v in 0..4 {
            for (si, (r, col)) in visit_order(v, h, w).into_iter().enumerate() {
                for k in 0..c {
                    out[((bi * h + r) * w + col) * c + k] +=
                        x[((bi * 4 + v) * h * w + si) * c + k].as_f64();
                }
            }
        }
    }
    Tensor::new(&[b, h, w, c], out.into_iter().map(T::lit).collect())
}

/// SS2D assembled from the three oracles.
pub fn ss2d_oracle<T: Scalar>(f: &Tensor<T>, params: &SSMParams<T>) -> Result<Tensor<T>> {
    let (b, h, w, c) = (f.dim(0), f.dim(1), f.dim(2), f.dim(3));
    let seqs = expand_oracle(f)?.reshape(&[b * 4, h * w, c])?;
    let scanned = s6_scan_oracle(&seqs, params)?;
    merge_oracle(&scanned.reshape(&[b, 4, h * w, c])?, h, w)
}
