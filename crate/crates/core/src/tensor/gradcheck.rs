//! Central finite-difference gradient checks.

use super::{no_grad, Tensor};
use crate::error::{arg_err, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1, |numeric|)` over checked coordinates.
    pub max_rel_err: f64,
    /// Input index and flat coordinate where the maximum occurred.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compares the gradient of scalar-valued `f` at `x` against central
/// differences with step `h`, over every coordinate of `x`.
pub fn finite_diff_check<T, F>(f: F, x: &Tensor<T>, h: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> Result<Tensor<T>>,
{
    let report = check_gradients(
        |xs: &[Tensor<T>]| f(&xs[0]),
        std::slice::from_ref(x),
        h,
        None,
    )?;
    Ok(report.max_rel_err)
}

/// Multi-input variant. `coords`, when given, restricts the check to the
/// listed `(input, flat index)` pairs; otherwise every coordinate of every
/// input is perturbed.
pub fn check_gradients<T, F>(
    f: F,
    inputs: &[Tensor<T>],
    h: f64,
    coords: Option<&[(usize, usize)]>,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
{
    let leaves: Vec<Tensor<T>> = inputs.iter().map(|t| t.detach().into_parameter()).collect();
    let out = f(&leaves)?;
    if out.numel() != 1 {
        return Err(arg_err!(
            "finite_diff_check: f must be scalar-valued, got {:?}",
            out.shape()
        ));
    }
    let grads = out.backward()?;
    let analytic: Vec<Vec<T>> = leaves.iter().map(|l| grads.wrt(l)).collect();

    let all: Vec<(usize, usize)>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = inputs
                .iter()
                .enumerate()
                .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
                .collect();
            &all
        }
    };

    let hs = T::lit(h);
    let eval = |which: usize, idx: usize, delta: T| -> Result<f64> {
        let mut data = inputs[which].to_vec();
        data[idx] += delta;
        let mut xs: Vec<Tensor<T>> = inputs.iter().map(|t| t.detach()).collect();
        xs[which] = Tensor::new(inputs[which].shape(), data)?;
        Ok(no_grad(|| f(&xs))?.item().as_f64())
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for &(which, idx) in coords {
        if which >= inputs.len() || idx >= inputs[which].numel() {
            return Err(arg_err!(
                "finite_diff_check: coordinate ({which}, {idx}) out of range"
            ));
        }
        let plus = eval(which, idx, hs)?;
        let minus = eval(which, idx, -hs)?;
        // the effective step after rounding x ± h in T
        let x0 = inputs[which].data()[idx];
        let step = ((x0 + hs) - (x0 - hs)).as_f64();
        let numeric = (plus - minus) / step;
        let a = analytic[which][idx].as_f64();
        let err = (a - numeric).abs() / numeric.abs().max(1.0);
        if err > report.max_rel_err || report.checked == 0 {
            report.max_rel_err = err;
            report.worst = (which, idx);
        }
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn sum_is_exact() {
        // f32 rounding of the summed value alone is ~1e-7/h, so exactness is
        // checked on integer-valued inputs in f32 and on arbitrary ones in f64
        let x = Tensor::<f32>::from_fn(&[3, 4], |i| i as f32 - 5.0);
        assert!(finite_diff_check(|x| Ok(x.sum()), &x, 1.0 / 1024.0).unwrap() < 1e-6);
        let x = random(&[3, 4], 1).cast::<f64>();
        assert!(finite_diff_check(|x| Ok(x.sum()), &x, 1e-3).unwrap() < 1e-6);
    }

    #[test]
    fn silu_sum() {
        for seed in 0..3 {
            let x = random(&[5, 3], seed);
            assert!(finite_diff_check(|x| Ok(x.silu().sum()), &x, 1e-3).unwrap() < 1e-2);
        }
    }

    #[test]
    fn detects_wrong_gradient() {
        // y = x*x but with a backward that claims 3x
        let x = random(&[4], 9);
        let bad = |x: &Tensor<f32>| {
            let data = x.data().iter().map(|v| v * v).collect();
            let xa = x.data_arc();
            Ok(
                Tensor::from_op("bad", x.shape().to_vec(), data, &[x], move |g| {
                    vec![Some(
                        g.iter().zip(xa.iter()).map(|(g, x)| g * 3.0 * x).collect(),
                    )]
                })
                .sum(),
            )
        };
        assert!(finite_diff_check(bad, &x, 1e-3).unwrap() > 1e-1);
    }
}
