//! Neural-network primitives with fused backward rules.

use rand::Rng;

use super::Tensor;
use crate::error::{arg_err, shape_err, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsampleMode {
    Nearest,
    /// Half-pixel centres (`align_corners = false`).
    Bilinear,
}

/// Per-channel running statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BatchNormStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

impl<T: Scalar> Tensor<T> {
    /// 2-D cross-correlation over `[B,Cin,H,W]` with weight
    /// `[Cout, Cin/groups, k, k]`.
    pub fn conv2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Tensor<T>> {
        let geo = ConvGeometry::new(self.shape(), weight.shape(), stride, padding, groups)?;
        if let Some(b) = bias {
            if b.shape() != [geo.cout] {
                return Err(shape_err!(
                    "conv2d: bias shape {:?} does not match {} output channels",
                    b.shape(),
                    geo.cout
                ));
            }
        }
        let mut out = vec![T::zero(); geo.out_len()];
        geo.forward(self.data(), weight.data(), &mut out);
        if let Some(b) = bias {
            let plane = geo.oh * geo.ow;
            for (i, chunk) in out.chunks_mut(plane).enumerate() {
                let bv = b.data()[i % geo.cout];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
        let x = self.data_arc();
        let w = weight.data_arc();
        let has_bias = bias.is_some();
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        Ok(Tensor::from_op(
            "conv2d",
            geo.out_shape(),
            out,
            &inputs,
            move |g| {
                let mut gx = vec![T::zero(); x.len()];
                let mut gw = vec![T::zero(); w.len()];
                geo.backward(&x, &w, g, &mut gx, &mut gw);
                let mut grads = vec![Some(gx), Some(gw)];
                if has_bias {
                    let plane = geo.oh * geo.ow;
                    let mut gb = vec![T::zero(); geo.cout];
                    for (i, chunk) in g.chunks(plane).enumerate() {
                        gb[i % geo.cout] += chunk.iter().fold(T::zero(), |a, &b| a + b);
                    }
                    grads.push(Some(gb));
                }
                grads
            },
        ))
    }

    /// `y = x Wᵀ + b` over the last axis.
    pub fn linear(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        if weight.rank() != 2 {
            return Err(shape_err!(
                "linear: weight must be 2-D, got {:?}",
                weight.shape()
            ));
        }
        let (dout, din) = (weight.dim(0), weight.dim(1));
        if *self.shape().last().unwrap() != din {
            return Err(shape_err!(
                "linear: input {:?} has last dim {}, weight {:?} expects {}",
                self.shape(),
                self.shape().last().unwrap(),
                weight.shape(),
                din
            ));
        }
        if let Some(b) = bias {
            if b.shape() != [dout] {
                return Err(shape_err!(
                    "linear: bias {:?} vs {} outputs",
                    b.shape(),
                    dout
                ));
            }
        }
        let rows = self.numel() / din;
        let x = self.data();
        let w = weight.data();
        let mut out = vec![T::zero(); rows * dout];
        for r in 0..rows {
            let xr = &x[r * din..(r + 1) * din];
            let yr = &mut out[r * dout..(r + 1) * dout];
            for (o, y) in yr.iter_mut().enumerate() {
                let wr = &w[o * din..(o + 1) * din];
                let mut acc = bias.map(|b| b.data()[o]).unwrap_or_else(T::zero);
                for (&a, &b) in xr.iter().zip(wr) {
                    acc += a * b;
                }
                *y = acc;
            }
        }
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        let xa = self.data_arc();
        let wa = weight.data_arc();
        let has_bias = bias.is_some();
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        Ok(Tensor::from_op("linear", shape, out, &inputs, move |g| {
            let mut gx = vec![T::zero(); xa.len()];
            let mut gw = vec![T::zero(); wa.len()];
            let mut gb = vec![T::zero(); dout];
            for r in 0..rows {
                let xr = &xa[r * din..(r + 1) * din];
                let gxr = &mut gx[r * din..(r + 1) * din];
                for o in 0..dout {
                    let go = g[r * dout + o];
                    if go == T::zero() {
                        continue;
                    }
                    gb[o] += go;
                    let wr = &wa[o * din..(o + 1) * din];
                    for (gxi, &wi) in gxr.iter_mut().zip(wr) {
                        *gxi += go * wi;
                    }
                    let gwr = &mut gw[o * din..(o + 1) * din];
                    for (gwi, &xi) in gwr.iter_mut().zip(xr) {
                        *gwi += go * xi;
                    }
                }
            }
            let mut grads = vec![Some(gx), Some(gw)];
            if has_bias {
                grads.push(Some(gb));
            }
            grads
        }))
    }

    /// Normalises over the last axis, then applies `gamma * x̂ + beta`.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
        let c = *self.shape().last().unwrap();
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(shape_err!(
                "layer_norm: gamma {:?} / beta {:?} vs channels {}",
                gamma.shape(),
                beta.shape(),
                c
            ));
        }
        let rows = self.numel() / c;
        let x = self.data();
        let (gm, bt) = (gamma.data(), beta.data());
        let mut xhat = vec![T::zero(); self.numel()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); self.numel()];
        let cn = T::from_usize_lossy(c);
        for r in 0..rows {
            let xr = &x[r * c..(r + 1) * c];
            let mean = xr.iter().fold(T::zero(), |a, &b| a + b) / cn;
            let var = xr
                .iter()
                .fold(T::zero(), |a, &b| a + (b - mean) * (b - mean))
                / cn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (xr[j] - mean) * rs;
                xhat[r * c + j] = h;
                out[r * c + j] = gm[j] * h + bt[j];
            }
        }
        let gma = gamma.data_arc();
        Ok(Tensor::from_op(
            "layer_norm",
            self.shape().to_vec(),
            out,
            &[self, gamma, beta],
            move |g| {
                let mut gx = vec![T::zero(); xhat.len()];
                let mut gg = vec![T::zero(); c];
                let mut gb = vec![T::zero(); c];
                let mut ghat = vec![T::zero(); c];
                for (r, &rs) in rstd.iter().enumerate().take(rows) {
                    let base = r * c;
                    let mut mean_g = T::zero();
                    let mut mean_gx = T::zero();
                    for j in 0..c {
                        let go = g[base + j];
                        let h = xhat[base + j];
                        gg[j] += go * h;
                        gb[j] += go;
                        ghat[j] = go * gma[j];
                        mean_g += ghat[j];
                        mean_gx += ghat[j] * h;
                    }
                    mean_g /= cn;
                    mean_gx /= cn;
                    for j in 0..c {
                        gx[base + j] = rs * (ghat[j] - mean_g - xhat[base + j] * mean_gx);
                    }
                }
                vec![Some(gx), Some(gg), Some(gb)]
            },
        ))
    }

    /// Batch normalisation over `[B,C,H,W]`.
    ///
    /// In training mode the batch statistics are used and `stats` is updated
    /// in place with `momentum` (running variance uses the unbiased
    /// estimate). In eval mode `stats` is read only.
    pub fn batch_norm(
        &self,
        stats: &mut BatchNormStats<T>,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        training: bool,
        momentum: T,
        eps: T,
    ) -> Result<Tensor<T>> {
        if training {
            let (y, mean, var_unbiased) = self.batch_norm_train(gamma, beta, eps)?;
            for ch in 0..stats.mean.len() {
                stats.mean[ch] = (T::one() - momentum) * stats.mean[ch] + momentum * mean[ch];
                stats.var[ch] = (T::one() - momentum) * stats.var[ch] + momentum * var_unbiased[ch];
            }
            Ok(y)
        } else {
            self.batch_norm_eval(stats, gamma, beta, eps)
        }
    }

    fn bn_dims(&self, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(usize, usize, usize)> {
        if self.rank() != 4 {
            return Err(shape_err!(
                "batch_norm: expected [B,C,H,W], got {:?}",
                self.shape()
            ));
        }
        let (b, c) = (self.dim(0), self.dim(1));
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(shape_err!(
                "batch_norm: gamma {:?} / beta {:?} vs channels {}",
                gamma.shape(),
                beta.shape(),
                c
            ));
        }
        Ok((b, c, self.dim(2) * self.dim(3)))
    }

    /// Returns the output plus batch mean and unbiased batch variance.
    pub(crate) fn batch_norm_train(
        &self,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        eps: T,
    ) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
        let (b, c, hw) = self.bn_dims(gamma, beta)?;
        let count = b * hw;
        if count <= 1 {
            return Err(Error::Numeric(format!(
                "batch_norm: training statistics over {count} value per channel (shape {:?}) have degenerate variance",
                self.shape()
            )));
        }
        let n = T::from_usize_lossy(count);
        let x = self.data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for bi in 0..b {
            for (ch, m) in mean.iter_mut().enumerate() {
                let base = (bi * c + ch) * hw;
                *m += x[base..base + hw].iter().fold(T::zero(), |a, &v| a + v);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for bi in 0..b {
            for ch in 0..c {
                let base = (bi * c + ch) * hw;
                let m = mean[ch];
                var[ch] += x[base..base + hw]
                    .iter()
                    .fold(T::zero(), |a, &v| a + (v - m) * (v - m));
            }
        }
        let unbiased: Vec<T> = var.iter().map(|&v| v / (n - T::one())).collect();
        var.iter_mut().for_each(|v| *v /= n);
        let rstd: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (gm, bt) = (gamma.data(), beta.data());
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for bi in 0..b {
            for ch in 0..c {
                let base = (bi * c + ch) * hw;
                for i in base..base + hw {
                    let h = (x[i] - mean[ch]) * rstd[ch];
                    xhat[i] = h;
                    out[i] = gm[ch] * h + bt[ch];
                }
            }
        }
        let gma = gamma.data_arc();
        let y = Tensor::from_op(
            "batch_norm",
            self.shape().to_vec(),
            out,
            &[self, gamma, beta],
            move |g| {
                let mut gg = vec![T::zero(); c];
                let mut gb = vec![T::zero(); c];
                for bi in 0..b {
                    for ch in 0..c {
                        let base = (bi * c + ch) * hw;
                        for i in base..base + hw {
                            gg[ch] += g[i] * xhat[i];
                            gb[ch] += g[i];
                        }
                    }
                }
                // dx = gamma*rstd/n * (n*g - sum(g) - xhat*sum(g*xhat))
                let mut gx = vec![T::zero(); xhat.len()];
                for bi in 0..b {
                    for ch in 0..c {
                        let base = (bi * c + ch) * hw;
                        let k = gma[ch] * rstd[ch] / n;
                        for i in base..base + hw {
                            gx[i] = k * (n * g[i] - gb[ch] - xhat[i] * gg[ch]);
                        }
                    }
                }
                vec![Some(gx), Some(gg), Some(gb)]
            },
        );
        Ok((y, mean, unbiased))
    }

    fn batch_norm_eval(
        &self,
        stats: &BatchNormStats<T>,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        eps: T,
    ) -> Result<Tensor<T>> {
        let (b, c, hw) = self.bn_dims(gamma, beta)?;
        let rstd: Vec<T> = stats
            .var
            .iter()
            .map(|&v| T::one() / (v + eps).sqrt())
            .collect();
        let mean = stats.mean.clone();
        let x = self.data();
        let (gm, bt) = (gamma.data(), beta.data());
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for bi in 0..b {
            for ch in 0..c {
                let base = (bi * c + ch) * hw;
                for i in base..base + hw {
                    let h = (x[i] - mean[ch]) * rstd[ch];
                    xhat[i] = h;
                    out[i] = gm[ch] * h + bt[ch];
                }
            }
        }
        let gma = gamma.data_arc();
        Ok(Tensor::from_op(
            "batch_norm_eval",
            self.shape().to_vec(),
            out,
            &[self, gamma, beta],
            move |g| {
                let mut gx = vec![T::zero(); xhat.len()];
                let mut gg = vec![T::zero(); c];
                let mut gb = vec![T::zero(); c];
                for bi in 0..b {
                    for ch in 0..c {
                        let base = (bi * c + ch) * hw;
                        for i in base..base + hw {
                            gx[i] = g[i] * gma[ch] * rstd[ch];
                            gg[ch] += g[i] * xhat[i];
                            gb[ch] += g[i];
                        }
                    }
                }
                vec![Some(gx), Some(gg), Some(gb)]
            },
        ))
    }

    /// Softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() {
            return Err(arg_err!(
                "softmax: axis {axis} out of range for {:?}",
                self.shape()
            ));
        }
        let shape = self.shape();
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.data();
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut m = T::neg_infinity();
                for k in 0..len {
                    m = m.max(x[base + k * inner]);
                }
                let mut s = T::zero();
                for k in 0..len {
                    let e = (x[base + k * inner] - m).exp();
                    out[base + k * inner] = e;
                    s += e;
                }
                for k in 0..len {
                    out[base + k * inner] /= s;
                }
            }
        }
        let out = std::sync::Arc::new(out);
        let y = out.clone();
        Ok(Tensor::from_op_arc(
            "softmax",
            shape.to_vec(),
            out,
            &[self],
            move |g| {
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut dot = T::zero();
                        for k in 0..len {
                            dot += g[base + k * inner] * y[base + k * inner];
                        }
                        for k in 0..len {
                            let idx = base + k * inner;
                            gx[idx] = y[idx] * (g[idx] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Integer-factor spatial upsampling of `[B,C,H,W]`.
    pub fn upsample(&self, factor: usize, mode: UpsampleMode) -> Result<Tensor<T>> {
        if factor < 1 {
            return Err(arg_err!("upsample: factor must be >= 1, got {factor}"));
        }
        if self.rank() != 4 {
            return Err(shape_err!(
                "upsample: expected [B,C,H,W], got {:?}",
                self.shape()
            ));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (planes, h, w) = (self.dim(0) * self.dim(1), self.dim(2), self.dim(3));
        let (oh, ow) = (h * factor, w * factor);
        // Each output pixel is a weighted sum of up to four source pixels.
        let taps_y = axis_taps::<T>(h, factor, mode);
        let taps_x = axis_taps::<T>(w, factor, mode);
        let x = self.data();
        let mut out = vec![T::zero(); planes * oh * ow];
        for p in 0..planes {
            let src = &x[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for (oy, &(y0, y1, ly)) in taps_y.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in taps_x.iter().enumerate() {
                    let top = src[y0 * w + x0] * (T::one() - lx) + src[y0 * w + x1] * lx;
                    let bot = src[y1 * w + x0] * (T::one() - lx) + src[y1 * w + x1] * lx;
                    dst[oy * ow + ox] = top * (T::one() - ly) + bot * ly;
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape[2] = oh;
        shape[3] = ow;
        Ok(Tensor::from_op("upsample", shape, out, &[self], move |g| {
            let mut gx = vec![T::zero(); planes * h * w];
            for p in 0..planes {
                let gs = &g[p * oh * ow..(p + 1) * oh * ow];
                let gd = &mut gx[p * h * w..(p + 1) * h * w];
                for (oy, &(y0, y1, ly)) in taps_y.iter().enumerate() {
                    for (ox, &(x0, x1, lx)) in taps_x.iter().enumerate() {
                        let v = gs[oy * ow + ox];
                        gd[y0 * w + x0] += v * (T::one() - ly) * (T::one() - lx);
                        gd[y0 * w + x1] += v * (T::one() - ly) * lx;
                        gd[y1 * w + x0] += v * ly * (T::one() - lx);
                        gd[y1 * w + x1] += v * ly * lx;
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Inverted dropout. Eval mode returns `self` unchanged.
    pub fn dropout(&self, p: f64, training: bool, rng: &mut impl Rng) -> Result<Tensor<T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(arg_err!("dropout: p must lie in [0, 1), got {p}"));
        }
        if !training || p == 0.0 {
            return Ok(self.clone());
        }
        let scale = T::lit(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.numel())
            .map(|_| {
                if rng.random::<f64>() < p {
                    T::zero()
                } else {
                    scale
                }
            })
            .collect();
        let data = self
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        Ok(Tensor::from_op(
            "dropout",
            self.shape().to_vec(),
            data,
            &[self],
            move |g| vec![Some(g.iter().zip(&mask).map(|(&g, &m)| g * m).collect())],
        ))
    }
}

/// `(lo, hi, weight_of_hi)` source taps for each output coordinate.
fn axis_taps<T: Scalar>(n: usize, factor: usize, mode: UpsampleMode) -> Vec<(usize, usize, T)> {
    (0..n * factor)
        .map(|o| match mode {
            UpsampleMode::Nearest => {
                let i = o / factor;
                (i, i, T::zero())
            }
            UpsampleMode::Bilinear => {
                let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(n - 1);
                let i1 = (i0 + 1).min(n - 1);
                let lambda = if i1 == i0 { 0.0 } else { src - i0 as f64 };
                (i0, i1, T::lit(lambda))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    groups: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeometry {
    fn new(x: &[usize], w: &[usize], stride: usize, pad: usize, groups: usize) -> Result<Self> {
        if x.len() != 4 || w.len() != 4 {
            return Err(shape_err!(
                "conv2d: input {:?} and weight {:?} must both be 4-D",
                x,
                w
            ));
        }
        let (b, cin, h, wd) = (x[0], x[1], x[2], x[3]);
        let (cout, cig, k, k2) = (w[0], w[1], w[2], w[3]);
        if groups == 0 || stride == 0 {
            return Err(arg_err!("conv2d: groups and stride must be positive"));
        }
        if k != k2 || k % 2 == 0 {
            return Err(shape_err!(
                "conv2d: weight {:?} must have an odd square kernel",
                w
            ));
        }
        if cin % groups != 0 || cout % groups != 0 || cig != cin / groups {
            return Err(shape_err!(
                "conv2d: input {:?} and weight {:?} are incompatible with groups={}",
                x,
                w,
                groups
            ));
        }
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(shape_err!(
                "conv2d: input {:?} smaller than kernel {:?}",
                x,
                w
            ));
        }
        Ok(Self {
            b,
            cin,
            h,
            w: wd,
            cout,
            k,
            stride,
            pad,
            groups,
            oh: (h + 2 * pad - k) / stride + 1,
            ow: (wd + 2 * pad - k) / stride + 1,
        })
    }

    fn out_shape(&self) -> Vec<usize> {
        vec![self.b, self.cout, self.oh, self.ow]
    }

    fn out_len(&self) -> usize {
        self.b * self.cout * self.oh * self.ow
    }

    /// Output x-range `[lo, hi)` whose input column `ox*stride + kx - pad`
    /// falls inside the image.
    fn valid_range(&self, kk: usize, n_in: usize, n_out: usize) -> (usize, usize) {
        let s = self.stride;
        // ox*s + kk >= pad
        let lo = if kk >= self.pad {
            0
        } else {
            (self.pad - kk).div_ceil(s)
        };
        // ox*s + kk - pad <= n_in - 1
        let hi = if n_in + self.pad < kk + 1 {
            0
        } else {
            ((n_in + self.pad - kk - 1) / s + 1).min(n_out)
        };
        (lo, hi.max(lo))
    }

    fn forward<T: Scalar>(&self, x: &[T], w: &[T], out: &mut [T]) {
        let cig = self.cin / self.groups;
        let cog = self.cout / self.groups;
        let (k, s) = (self.k, self.stride);
        for bi in 0..self.b {
            for oc in 0..self.cout {
                let gi = oc / cog;
                let dst =
                    &mut out[(bi * self.cout + oc) * self.oh * self.ow..][..self.oh * self.ow];
                for icg in 0..cig {
                    let ic = gi * cig + icg;
                    let src = &x[(bi * self.cin + ic) * self.h * self.w..][..self.h * self.w];
                    for ky in 0..k {
                        let (y_lo, y_hi) = self.valid_range(ky, self.h, self.oh);
                        for kx in 0..k {
                            let wv = w[((oc * cig + icg) * k + ky) * k + kx];
                            let (x_lo, x_hi) = self.valid_range(kx, self.w, self.ow);
                            for oy in y_lo..y_hi {
                                let iy = oy * s + ky - self.pad;
                                let srow = &src[iy * self.w..];
                                let drow = &mut dst[oy * self.ow..];
                                for ox in x_lo..x_hi {
                                    drow[ox] += wv * srow[ox * s + kx - self.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn backward<T: Scalar>(&self, x: &[T], w: &[T], g: &[T], gx: &mut [T], gw: &mut [T]) {
        let cig = self.cin / self.groups;
        let cog = self.cout / self.groups;
        let (k, s) = (self.k, self.stride);
        for bi in 0..self.b {
            for oc in 0..self.cout {
                let gi = oc / cog;
                let go = &g[(bi * self.cout + oc) * self.oh * self.ow..][..self.oh * self.ow];
                for icg in 0..cig {
                    let ic = gi * cig + icg;
                    let off = (bi * self.cin + ic) * self.h * self.w;
                    let src = &x[off..off + self.h * self.w];
                    for ky in 0..k {
                        let (y_lo, y_hi) = self.valid_range(ky, self.h, self.oh);
                        for kx in 0..k {
                            let widx = ((oc * cig + icg) * k + ky) * k + kx;
                            let wv = w[widx];
                            let (x_lo, x_hi) = self.valid_range(kx, self.w, self.ow);
                            let mut acc = T::zero();
                            for oy in y_lo..y_hi {
                                let iy = oy * s + ky - self.pad;
                                let grow = &go[oy * self.ow..];
                                for (ox, &gv) in grow.iter().enumerate().take(x_hi).skip(x_lo) {
                                    let ix = ox * s + kx - self.pad;
                                    acc += gv * src[iy * self.w + ix];
                                    gx[off + iy * self.w + ix] += gv * wv;
                                }
                            }
                            gw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f32]) -> Tensor<f32> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn conv_identity_kernel() {
        let y = t(&[1, 1, 1, 1], &[1.0])
            .conv2d(&t(&[1, 1, 1, 1], &[1.0]), None, 1, 0, 1)
            .unwrap();
        assert_eq!(y.to_vec(), vec![1.0]);
    }

    #[test]
    fn conv_zero_input_is_zero() {
        let w = Tensor::<f32>::from_fn(&[3, 2, 3, 3], |i| i as f32 * 0.1 - 2.0);
        let y = Tensor::<f32>::zeros(&[2, 2, 5, 5])
            .conv2d(&w, None, 1, 1, 1)
            .unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(y.shape(), &[2, 3, 5, 5]);
    }

    #[test]
    fn conv_ramp_against_ones() {
        let x = Tensor::<f32>::from_fn(&[1, 1, 3, 3], |i| (i + 1) as f32);
        let y = x
            .conv2d(&Tensor::ones(&[1, 1, 3, 3]), None, 1, 0, 1)
            .unwrap();
        assert_eq!(y.to_vec(), vec![45.0]);
    }

    #[test]
    fn conv_output_geometry_and_errors() {
        let x = Tensor::<f32>::zeros(&[1, 4, 7, 6]);
        let y = x
            .conv2d(&Tensor::zeros(&[8, 4, 3, 3]), None, 2, 1, 1)
            .unwrap();
        assert_eq!(y.shape(), &[1, 8, 4, 3]);
        let dw = x
            .conv2d(&Tensor::zeros(&[4, 1, 3, 3]), None, 1, 1, 4)
            .unwrap();
        assert_eq!(dw.shape(), &[1, 4, 7, 6]);
        let err = x
            .conv2d(&Tensor::zeros(&[8, 3, 3, 3]), None, 1, 1, 1)
            .unwrap_err()
            .to_string();
        assert!(
            err.contains("[1, 4, 7, 6]") && err.contains("[8, 3, 3, 3]"),
            "{err}"
        );
    }

    #[test]
    fn conv_matches_naive_padded_loop() {
        let x = Tensor::<f64>::from_fn(&[2, 4, 5, 6], |i| ((i * 37 % 11) as f64) - 5.0);
        let w = Tensor::<f64>::from_fn(&[6, 2, 3, 3], |i| ((i * 13 % 7) as f64) - 3.0);
        let b = Tensor::<f64>::from_fn(&[6], |i| i as f64);
        for stride in [1, 2] {
            let y = x.conv2d(&w, Some(&b), stride, 1, 2).unwrap();
            let (oh, ow) = (y.dim(2), y.dim(3));
            for bi in 0..2 {
                for oc in 0..6 {
                    let g = oc / 3;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = b.data()[oc];
                            for icg in 0..2 {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let iy = (oy * stride + ky) as isize - 1;
                                        let ix = (ox * stride + kx) as isize - 1;
                                        if iy < 0 || ix < 0 || iy >= 5 || ix >= 6 {
                                            continue;
                                        }
                                        let ic = g * 2 + icg;
                                        acc += x.data()
                                            [((bi * 4 + ic) * 5 + iy as usize) * 6 + ix as usize]
                                            * w.data()[((oc * 2 + icg) * 3 + ky) * 3 + kx];
                                    }
                                }
                            }
                            assert_eq!(y.data()[((bi * 6 + oc) * oh + oy) * ow + ox], acc);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn linear_examples() {
        let eye = t(&[2, 2], &[1., 0., 0., 1.]);
        let x = t(&[2], &[1., 2.]);
        assert_eq!(
            x.linear(&eye, Some(&t(&[2], &[0., 0.]))).unwrap().to_vec(),
            vec![1., 2.]
        );
        assert_eq!(
            x.linear(&t(&[1, 2], &[1., 1.]), Some(&t(&[1], &[3.])))
                .unwrap()
                .to_vec(),
            vec![6.]
        );
        let z = Tensor::<f32>::zeros(&[2])
            .linear(&t(&[1, 2], &[4., -1.]), Some(&t(&[1], &[5.])))
            .unwrap();
        assert_eq!(z.to_vec(), vec![5.]);
        assert!(x.linear(&t(&[1, 3], &[1., 1., 1.]), None).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        let ones = t(&[3], &[1., 1., 1.]);
        let zeros = t(&[3], &[0., 0., 0.]);
        let y = t(&[3], &[3., 3., 3.])
            .layer_norm(&ones, &zeros, 1e-6)
            .unwrap();
        assert_eq!(y.to_vec(), vec![0., 0., 0.]);
        let y = t(&[2], &[1., -1.])
            .layer_norm(&t(&[2], &[1., 1.]), &t(&[2], &[0., 0.]), 0.0)
            .unwrap();
        assert_eq!(y.to_vec(), vec![1., -1.]);
        let y = t(&[2], &[4., -9.])
            .layer_norm(&t(&[2], &[0., 0.]), &t(&[2], &[7., 7.]), 1e-6)
            .unwrap();
        assert_eq!(y.to_vec(), vec![7., 7.]);
    }

    #[test]
    fn batch_norm_examples() {
        let one = t(&[1], &[1.]);
        let zero = t(&[1], &[0.]);
        let mut stats = BatchNormStats::new(1);
        let y = t(&[2, 1, 1, 2], &[5., 5., 5., 5.])
            .batch_norm(&mut stats, &one, &zero, true, 0.1, 1e-5)
            .unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        // running stats moved towards the batch mean 5 and variance 0
        assert!((stats.mean[0] - 0.5).abs() < 1e-6);
        assert!((stats.var[0] - 0.9).abs() < 1e-6);

        let y = t(&[1, 1, 1, 2], &[0., 2.])
            .batch_norm(&mut BatchNormStats::new(1), &one, &zero, true, 0.1, 0.0)
            .unwrap();
        assert_eq!(y.to_vec(), vec![-1., 1.]);

        let x = t(&[1, 1, 2, 2], &[0.3, -1.2, 4.0, 0.0]);
        let y = x
            .batch_norm(&mut BatchNormStats::new(1), &one, &zero, false, 0.1, 1e-5)
            .unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-4);
        }

        let err = t(&[1, 1, 1, 1], &[3.])
            .batch_norm(&mut BatchNormStats::new(1), &one, &zero, true, 0.1, 1e-5)
            .unwrap_err();
        assert!(err.is_numeric());
    }

    #[test]
    fn softmax_symmetric() {
        assert_eq!(
            t(&[2], &[0., 0.]).softmax(0).unwrap().to_vec(),
            vec![0.5, 0.5]
        );
    }

    #[test]
    fn upsample_examples() {
        let x = t(&[1, 1, 2, 2], &[1., 2., 3., 4.]);
        assert_eq!(
            x.upsample(1, UpsampleMode::Bilinear).unwrap().to_vec(),
            x.to_vec()
        );
        let y = x.upsample(2, UpsampleMode::Nearest).unwrap();
        assert_eq!(
            y.to_vec(),
            vec![1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
        );
        let c = Tensor::<f32>::full(&[1, 2, 3, 3], 2.5)
            .upsample(4, UpsampleMode::Bilinear)
            .unwrap();
        assert!(c.data().iter().all(|&v| (v - 2.5).abs() < 1e-6));
        assert!(x.upsample(0, UpsampleMode::Nearest).is_err());
    }

    #[test]
    fn bilinear_half_pixel_values() {
        // src coords for factor 2 over [0, 10]: -0.25→0, 0.25, 0.75, 1.25→clamp
        let x = t(&[1, 1, 1, 2], &[0., 10.]);
        let y = x.upsample(2, UpsampleMode::Bilinear).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 4]);
        let row: Vec<f32> = y.data()[..4].to_vec();
        assert_eq!(row, vec![0., 2.5, 7.5, 10.]);
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f32>::from_fn(&[1000], |i| i as f32);
        let eval = x.dropout(0.5, false, &mut rng).unwrap();
        assert_eq!(eval.id(), x.id());
        assert_eq!(x.dropout(0.0, true, &mut rng).unwrap().to_vec(), x.to_vec());
        assert!(x.dropout(1.0, true, &mut rng).is_err());

        let ones = Tensor::<f32>::ones(&[20_000]);
        let y = ones
            .dropout(0.5, true, &mut ChaCha8Rng::seed_from_u64(42))
            .unwrap();
        let survivors = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / 20_000.0;
        assert!((survivors - 0.5).abs() < 0.05, "{survivors}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }
}
