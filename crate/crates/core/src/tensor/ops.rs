//! Elementwise, reduction and layout ops.

use std::sync::Arc;

use super::{numel_of, Tensor};
use crate::error::{arg_err, shape_err, Result};
use crate::scalar::Scalar;

impl<T: Scalar> Tensor<T> {
    fn check_same_shape(&self, other: &Tensor<T>, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_err!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape(),
                other.shape()
            ));
        }
        Ok(())
    }

    /// Elementwise op whose derivative is a function of the input and output.
    fn unary(&self, op: &'static str, f: impl Fn(T) -> T, df: fn(T, T) -> T) -> Tensor<T> {
        let out: Vec<T> = self.data().iter().map(|&v| f(v)).collect();
        let out = Arc::new(out);
        let x = self.data_arc();
        let y = out.clone();
        Tensor::from_op_arc(op, self.shape().to_vec(), out, &[self], move |g| {
            let gx = g
                .iter()
                .zip(x.iter().zip(y.iter()))
                .map(|(&g, (&x, &y))| g * df(x, y))
                .collect();
            vec![Some(gx)]
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_same_shape(other, "add")?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor::from_op(
            "add",
            self.shape().to_vec(),
            data,
            &[self, other],
            |g| vec![Some(g.to_vec()), Some(g.to_vec())],
        ))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_same_shape(other, "sub")?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Tensor::from_op(
            "sub",
            self.shape().to_vec(),
            data,
            &[self, other],
            |g| vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())],
        ))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_same_shape(other, "mul")?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a * b)
            .collect();
        let (a, b) = (self.data_arc(), other.data_arc());
        Ok(Tensor::from_op(
            "mul",
            self.shape().to_vec(),
            data,
            &[self, other],
            move |g| {
                let ga = g.iter().zip(b.iter()).map(|(&g, &b)| g * b).collect();
                let gb = g.iter().zip(a.iter()).map(|(&g, &a)| g * a).collect();
                vec![Some(ga), Some(gb)]
            },
        ))
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_same_shape(other, "div")?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a / b)
            .collect();
        let (a, b) = (self.data_arc(), other.data_arc());
        Ok(Tensor::from_op(
            "div",
            self.shape().to_vec(),
            data,
            &[self, other],
            move |g| {
                let ga = g.iter().zip(b.iter()).map(|(&g, &b)| g / b).collect();
                let gb = g
                    .iter()
                    .zip(a.iter().zip(b.iter()))
                    .map(|(&g, (&a, &b))| -g * a / (b * b))
                    .collect();
                vec![Some(ga), Some(gb)]
            },
        ))
    }

    pub fn add_scalar(&self, s: T) -> Tensor<T> {
        let data = self.data().iter().map(|&v| v + s).collect();
        Tensor::from_op("add_scalar", self.shape().to_vec(), data, &[self], |g| {
            vec![Some(g.to_vec())]
        })
    }

    pub fn mul_scalar(&self, s: T) -> Tensor<T> {
        let data = self.data().iter().map(|&v| v * s).collect();
        Tensor::from_op(
            "mul_scalar",
            self.shape().to_vec(),
            data,
            &[self],
            move |g| vec![Some(g.iter().map(|&v| v * s).collect())],
        )
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary("neg", |x| -x, |_, _| -T::one())
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary("exp", |x| x.exp(), |_, y| y)
    }

    /// Natural log with the argument clamped below at `floor`; the gradient
    /// is zero where the clamp is active.
    pub fn log_clamped(&self, floor: T) -> Tensor<T> {
        let out: Vec<T> = self.data().iter().map(|&v| v.max(floor).ln()).collect();
        let x = self.data_arc();
        Tensor::from_op("log", self.shape().to_vec(), out, &[self], move |g| {
            let gx = g
                .iter()
                .zip(x.iter())
                .map(|(&g, &x)| if x > floor { g / x } else { T::zero() })
                .collect();
            vec![Some(gx)]
        })
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary("sigmoid", sigmoid, |_, y| y * (T::one() - y))
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&self) -> Tensor<T> {
        self.unary(
            "silu",
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            },
        )
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary(
            "relu",
            |x| x.max(T::zero()),
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    /// `min(max(x, 0), 6)`.
    pub fn relu6(&self) -> Tensor<T> {
        self.unary(
            "relu6",
            |x| x.max(T::zero()).min(T::lit(6.0)),
            |x, _| {
                if x > T::zero() && x < T::lit(6.0) {
                    T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(&self) -> Tensor<T> {
        self.unary("softplus", softplus, |x, _| sigmoid(x))
    }

    pub fn sum(&self) -> Tensor<T> {
        let s = self.data().iter().fold(T::zero(), |a, &b| a + b);
        let n = self.numel();
        Tensor::from_op("sum", vec![1], vec![s], &[self], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = T::from_usize_lossy(self.numel());
        self.sum().mul_scalar(T::one() / n)
    }

    /// Same data, new shape.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel_of(shape) != self.numel() {
            return Err(shape_err!(
                "cannot reshape {:?} to {:?}",
                self.shape(),
                shape
            ));
        }
        Ok(Tensor::from_op_arc(
            "reshape",
            shape.to_vec(),
            self.data_arc(),
            &[self],
            |g| vec![Some(g.to_vec())],
        ))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<T>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank
            || perm
                .iter()
                .any(|&p| p >= rank || std::mem::replace(&mut seen[p], true))
        {
            return Err(arg_err!(
                "permute: {:?} is not a permutation of rank {}",
                perm,
                rank
            ));
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let src_index = permutation_table(&in_shape, perm);
        let x = self.data();
        let data = src_index.iter().map(|&i| x[i]).collect();
        let n = self.numel();
        Ok(Tensor::from_op(
            "permute",
            out_shape,
            data,
            &[self],
            move |g| {
                let mut gx = vec![T::zero(); n];
                for (o, &i) in src_index.iter().enumerate() {
                    gx[i] = g[o];
                }
                vec![Some(gx)]
            },
        ))
    }

    /// `[B,C,H,W]` to `[B,H,W,C]`.
    pub fn nchw_to_nhwc(&self) -> Result<Tensor<T>> {
        self.permute(&[0, 2, 3, 1])
    }

    /// `[B,H,W,C]` to `[B,C,H,W]`.
    pub fn nhwc_to_nchw(&self) -> Result<Tensor<T>> {
        self.permute(&[0, 3, 1, 2])
    }

    /// Picks rows along the first axis.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Tensor<T>> {
        let n = self.dim(0);
        let row = self.numel() / n;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(arg_err!("select_rows: row {bad} out of range for {n} rows"));
        }
        if rows.is_empty() {
            return Err(arg_err!("select_rows: no rows selected"));
        }
        let x = self.data();
        let mut data = Vec::with_capacity(rows.len() * row);
        for &r in rows {
            data.extend_from_slice(&x[r * row..(r + 1) * row]);
        }
        let mut shape = self.shape().to_vec();
        shape[0] = rows.len();
        let rows = rows.to_vec();
        let total = self.numel();
        Ok(Tensor::from_op(
            "select_rows",
            shape,
            data,
            &[self],
            move |g| {
                let mut gx = vec![T::zero(); total];
                for (k, &r) in rows.iter().enumerate() {
                    for j in 0..row {
                        gx[r * row + j] += g[k * row + j];
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Index of the maximum along `axis` (ties go to the lowest index).
    pub fn argmax(&self, axis: usize) -> Vec<usize> {
        let shape = self.shape();
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.data();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut best = 0;
                let mut best_v = x[base];
                for k in 1..len {
                    let v = x[base + k * inner];
                    if v > best_v {
                        best = k;
                        best_v = v;
                    }
                }
                out.push(best);
            }
        }
        out
    }
}

/// For each output position (row-major over the permuted shape), the flat
/// source index in the input.
fn permutation_table(in_shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let rank = in_shape.len();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = numel_of(in_shape);
    let mut table = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..n {
        table.push(src);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    table
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    // log1p(exp(-|x|)) + max(x, 0)
    (-x.abs()).exp().ln_1p() + x.max(T::zero())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f32]) -> Tensor<f32> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn activation_examples() {
        assert_eq!(t(&[1], &[0.0]).silu().item(), 0.0);
        assert_eq!(t(&[2], &[10.0, -1.0]).relu6().to_vec(), vec![6.0, 0.0]);
        assert!((t(&[1], &[0.0]).softplus().item() - std::f32::consts::LN_2).abs() < 1e-7);
        assert!(t(&[1], &[200.0]).softplus().item().is_finite());
    }

    #[test]
    fn permute_matches_manual_transpose() {
        let x = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let y = x.permute(&[1, 0]).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.to_vec(), vec![1., 4., 2., 5., 3., 6.]);
        let z = Tensor::<f32>::from_fn(&[2, 3, 4], |i| i as f32);
        let back = z.permute(&[2, 0, 1]).unwrap().permute(&[1, 2, 0]).unwrap();
        assert_eq!(back.to_vec(), z.to_vec());
        assert!(x.permute(&[0, 0]).is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = t(&[2], &[1., 2.]);
        let b = t(&[3], &[1., 2., 3.]);
        let err = a.add(&b).unwrap_err().to_string();
        assert!(err.contains("[2]") && err.contains("[3]"), "{err}");
    }

    #[test]
    fn argmax_along_axis() {
        let x = t(&[1, 3, 2], &[0., 5., 2., 1., 1., 1.]);
        assert_eq!(x.argmax(1), vec![1, 0]);
    }

    #[test]
    fn select_rows_gathers_and_scatters() {
        let x = Tensor::<f32>::parameter(&[3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let y = x.select_rows(&[2, 0, 2]).unwrap();
        assert_eq!(y.to_vec(), vec![5., 6., 1., 2., 5., 6.]);
        let g = y.sum().backward().unwrap().wrt(&x);
        assert_eq!(g, vec![1., 1., 0., 0., 2., 2.]);
    }
}
