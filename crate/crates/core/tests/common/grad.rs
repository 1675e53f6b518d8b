//! Finite-difference gradient cases: every differentiable primitive, the
//! scan, the VSS block and the whole model. Each case runs in f32 (1e-2 for
//! single primitives and the scan, 2e-2 for composite blocks) and in f64
//! against a tight tolerance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use unetmamba::metrics::{total_loss, LossConfig};
use unetmamba::model::{ModelConfig, Module, UNetMamba, VssBlock};
use unetmamba::sscan::{
    cross_scan_expand, cross_scan_merge, s6_scan, selective_scan, ss2d, SSMParams,
};
use unetmamba::tensor::{check_gradients, no_grad, BatchNormStats, Parameter, UpsampleMode};
use unetmamba::{Result, Scalar, SeedStream, Tensor};

pub const SEEDS: [u64; 3] = [0, 1, 2];
pub const F32_TOL: f64 = 1e-2;
pub const F32_COMPOSITE_TOL: f64 = 2e-2;
const F32_STEP: f64 = 1e-3;
pub const F64_TOL: f64 = 1e-6;
const F64_STEP: f64 = 1e-6;

fn uniform<T: Scalar>(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(lo..hi)))
}

/// Values of magnitude in `[lo, hi]` with random sign, keeping clear of
/// kinks at zero.
fn away_from_zero<T: Scalar>(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let m: f64 = rng.random_range(lo..hi);
        T::lit(if rng.random::<bool>() { m } else { -m })
    })
}

/// Contracts `y` with fixed random weights so that every output element
/// contributes a distinct amount (a plain sum hides e.g. softmax gradients).
fn contract<T: Scalar>(y: &Tensor<T>, seed: u64) -> Result<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w: Tensor<T> = uniform(y.shape(), -1.0, 1.0, &mut rng);
    Ok(y.mul(&w)?.sum())
}

fn step<T: Scalar>() -> f64 {
    if std::mem::size_of::<T>() == 4 {
        F32_STEP
    } else {
        F64_STEP
    }
}

/// Checks `f` with respect to all of `inputs`.
fn check<T, F>(inputs: &[Tensor<T>], f: F) -> f64
where
    T: Scalar,
    F: Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
{
    let h = step::<T>();
    check_gradients(f, inputs, h, None).unwrap().max_rel_err
}

/// Checks `f(state)` with respect to `picks` random coordinates of the
/// parameters returned by `list`, perturbing them in place.
fn check_params<T, S, F>(
    state: &mut S,
    list: fn(&mut S) -> Vec<&mut Parameter<T>>,
    f: F,
    picks: usize,
    seed: u64,
) -> f64
where
    T: Scalar,
    F: Fn(&S) -> Result<Tensor<T>>,
{
    let h = step::<T>();
    let tensors: Vec<Tensor<T>> = list(state).iter().map(|p| p.tensor.clone()).collect();
    let grads = f(state).unwrap().backward().unwrap();
    let analytic: Vec<Vec<T>> = tensors.iter().map(|t| grads.wrt(t)).collect();

    let total: usize = tensors.iter().map(|t| t.numel()).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..picks {
        let mut flat = rng.random_range(0..total);
        let mut which = 0;
        while flat >= tensors[which].numel() {
            flat -= tensors[which].numel();
            which += 1;
        }
        let original = tensors[which].detach();
        let mut eval = |delta: f64| -> (f64, f64) {
            let mut data = original.to_vec();
            let x0 = data[flat];
            data[flat] += T::lit(delta);
            let moved = data[flat];
            list(state)[which].set(Tensor::new(original.shape(), data).unwrap());
            let v = no_grad(|| f(state)).unwrap().item().as_f64();
            (v, (moved - x0).as_f64())
        };
        let (plus, dp) = eval(h);
        let (minus, dm) = eval(-h);
        list(state)[which].set(original.clone());
        let numeric = (plus - minus) / (dp - dm);
        let a = analytic[which][flat].as_f64();
        worst = worst.max((a - numeric).abs() / numeric.abs().max(1.0));
    }
    worst
}

pub fn elementwise_binary<T: Scalar>(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Tensor<T> = uniform(&[3, 4], -2.0, 2.0, &mut rng);
    let b: Tensor<T> = away_from_zero(&[3, 4], 0.5, 2.0, &mut rng);
    check(&[a, b], |x| {
        let y = x[0]
            .add(&x[1])?
            .mul(&x[0])?
            .sub(&x[1].mul_scalar(T::lit(0.5)))?;
        let y = y.div(&x[1])?.neg().add_scalar(T::lit(0.25));
        contract(&y, seed)
    })
}

pub fn elementwise_unary<T: Scalar>(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Tensor<T> = uniform(&[2, 5], -2.0, 2.0, &mut rng);
    check(&[x], |x| {
        let y = x[0]
            .exp()
            .add(&x[0].sigmoid())?
            .add(&x[0].silu())?
            .add(&x[0].softplus())?;
        contract(&y, seed)
    })
}

pub fn log_clamped<T: Scalar>(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Tensor<T> = uniform(&[6], 0.2, 3.0, &mut rng);
    check(&[x], |x| contract(&x[0].log_clamped(T::lit(1e-12)), seed))
}

pub fn relus<T: Scalar>(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // relu6(2x + 2) has kinks at x = -1 and x = 2; nudge values off them
    let x: Tensor<T> = away_from_zero(&[12], 0.1, 2.9, &mut rng);
    let x = Tensor::from_fn(x.shape(), |i| {
        let v = x.data()[i].as_f64();
        let near = (v + 1.0).abs() < 0.05 || (v - 2.0).abs() < 0.05;
        T::lit(if near { v + 0.1 } else { v })
    });
    check(&[x], |x| {
        let y = x[0]
            .relu()
            .add(&x[0].mul_scalar(T::lit(2.0)).add_scalar(T::lit(2.0)).relu6())?;
        contract(&y, seed)
    })
}

pub fn reductions_and_layout<T: Scalar>(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Tensor<T> = uniform(&[2, 3, 4, 5], -1.0, 1.0, &mut rng);
    check(&[x], |x| {
        let p = x[0].permute(&[0, 2, 3, 1])?.reshape(&[40, 3])?;
        let rows = p.select_rows(&[0, 7, 7, 39, 12])?;
        let a = contract(&rows, seed)?;
        let b = x[0]
            .nchw_to_nhwc()?
            .nhwc_to_nchw()?
            .mean()
            .mul_scalar(T::lit(3.0));
        let c = x[0].mul(&x[0])?.sum();
        a.add(&b)?.add(&c)
    })
}

pub fn conv<T: Scalar>(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Tensor<T> = uniform(&[2, 4, 5, 5], -1.0, 1.0, &mut rng);
    let w: Tensor<T> = uniform(&[6, 2, 3, 3], -0.5, 0.5, &mut rng);
    let b: Tensor<T> = uniform(&[6], -0.5, 0.5, &mut rng);
    let dw: Tensor<T> = uniform(&[4, 1, 3, 3], -0.5, 0.5, &mut rng);
    check(&[x, w, b, dw], |x| {
        // grouped, strided and padded; then depthwise
        let y = x[0].conv2d(&x[1], Some(&x[2]), 2, 1, 2)?;
        let z = x[0].conv2d(&x[3], None, 1, 1, 4)?;
        contract(&y, seed)?.add(&contract(&z, seed + 1)?)
    })
}

pub fn linear<T: Scalar>(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Tensor<T> = uniform(&[2, 3, 5], -1.0, 1.0, &mut rng);
    let w: Tensor<T> = uniform(&[4, 5], -0.5, 0.5, &mut rng);
    let b: Tensor<T> = uniform(&[4], -0.5, 0.5, &mut rng);
    check(&[x, w, b], |x| {
        contract(&x[0].linear(&x[1], Some(&x[2]))?, seed)
    })
}

pub fn layer_norm<T: Scalar>(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Tensor<T> = uniform(&[3, 2, 6], -2.0, 2.0, &mut rng);
    let g: Tensor<T> = uniform(&[6], 0.5, 1.5, &mut rng);
    let b: Tensor<T> = uniform(&[6], -0.5, 0.5, &mut rng);
    check(&[x, g, b], |x| {
        contract(&x[0].layer_norm(&x[1], &x[2], T::lit(1e-6))?, seed)
    })
}

pub fn batch_norm<T: Scalar>(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Tensor<T> = uniform(&[3, 2, 3, 3], -2.0, 2.0, &mut rng);
    let g: Tensor<T> = uniform(&[2], 0.5, 1.5, &mut rng);
    let b: Tensor<T> = uniform(&[2], -0.5, 0.5, &mut rng);
    let running = BatchNormStats {
        mean: vec![T::lit(0.3), T::lit(-0.2)],
        var: vec![T::lit(1.5), T::lit(0.7)],
    };
    check(&[x, g, b], |x| {
        let train = x[0].batch_norm(
            &mut running.clone(),
            &x[1],
            &x[2],
            true,
            T::lit(0.1),
            T::lit(1e-5),
        )?;
        let eval = x[0].batch_norm(
            &mut running.clone(),
            &x[1],
            &x[2],
            false,
            T::lit(0.1),
            T::lit(1e-5),
        )?;
        contract(&train, seed)?.add(&contract(&eval, seed + 1)?)
    })
}

pub fn softmax<T: Scalar>(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Tensor<T> = uniform(&[2, 4, 3], -3.0, 3.0, &mut rng);
    check(&[x], |x| {
        contract(&x[0].softmax(1)?, seed)?.add(&contract(&x[0].softmax(2)?, seed + 1)?)
    })
}

pub fn upsample<T: Scalar>(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Tensor<T> = uniform(&[1, 2, 3, 4], -1.0, 1.0, &mut rng);
    check(&[x], |x| {
        let a = x[0].upsample(4, UpsampleMode::Bilinear)?;
        let b = x[0].upsample(2, UpsampleMode::Nearest)?;
        contract(&a, seed)?.add(&contract(&b, seed + 1)?)
    })
}

pub fn dropout<T: Scalar>(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Tensor<T> = uniform(&[4, 8], -1.0, 1.0, &mut rng);
    check(&[x], |x| {
        // the same mask on every evaluation
        let mut mask_rng = ChaCha8Rng::seed_from_u64(seed + 7);
        contract(&x[0].dropout(0.3, true, &mut mask_rng)?, seed)
    })
}

pub fn cross_scan<T: Scalar>(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f: Tensor<T> = uniform(&[2, 3, 4, 2], -1.0, 1.0, &mut rng);
    let s: Tensor<T> = uniform(&[2, 4, 12, 2], -1.0, 1.0, &mut rng);
    check(&[f, s], |x| {
        contract(&cross_scan_expand(&x[0])?, seed)?
            .add(&contract(&cross_scan_merge(&x[1], 3, 4)?, seed + 1)?)
    })
}

pub fn scan_kernel<T: Scalar>(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, l, d, n) = (2, 7, 3, 4);
    let u: Tensor<T> = uniform(&[b, l, d], -1.0, 1.0, &mut rng);
    let delta: Tensor<T> = uniform(&[b, l, d], 0.05, 0.8, &mut rng);
    let a: Tensor<T> = uniform(&[d, n], -2.0, -0.2, &mut rng);
    let bb: Tensor<T> = uniform(&[b, l, n], -1.0, 1.0, &mut rng);
    let c: Tensor<T> = uniform(&[b, l, n], -1.0, 1.0, &mut rng);
    let dskip: Tensor<T> = uniform(&[d], -1.0, 1.0, &mut rng);
    check(&[u, delta, a, bb, c, dskip], |x| {
        contract(
            &selective_scan(&x[0], &x[1], &x[2], &x[3], &x[4], &x[5])?,
            seed,
        )
    })
}

fn ssm_params<T: Scalar>(d: usize, n: usize, seed: u64) -> SSMParams<T> {
    let mut p = SSMParams::init("ssm", d, n, &mut ChaCha8Rng::seed_from_u64(seed));
    // move A and D off their structured initial values
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 11);
    p.a_log.set(uniform(&[d, n], -1.0, 1.0, &mut rng));
    p.d_skip.set(uniform(&[d], -1.0, 1.0, &mut rng));
    p
}

pub fn s6<T: Scalar>(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ssm_params::<T>(4, 3, seed);
    let x: Tensor<T> = uniform(&[2, 9, 4], -1.0, 1.0, &mut rng);
    let wrt_x = check(std::slice::from_ref(&x), |x| {
        contract(&s6_scan(&x[0], &params)?, seed)
    });
    let wrt_p = check_params(
        &mut params,
        SSMParams::params_mut,
        |p| contract(&s6_scan(&x, p)?, seed),
        40,
        seed,
    );
    wrt_x.max(wrt_p)
}

pub fn ss2d_case<T: Scalar>(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ssm_params::<T>(3, 2, seed);
    let f: Tensor<T> = uniform(&[1, 3, 4, 3], -1.0, 1.0, &mut rng);
    let wrt_f = check(std::slice::from_ref(&f), |x| {
        contract(&ss2d(&x[0], &params)?, seed)
    });
    let wrt_p = check_params(
        &mut params,
        SSMParams::params_mut,
        |p| contract(&ss2d(&f, p)?, seed),
        30,
        seed,
    );
    wrt_f.max(wrt_p)
}

pub fn vss<T: Scalar>(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut block = VssBlock::<T>::new("vss", 4, 2, 3, &SeedStream::new(seed));
    let f: Tensor<T> = uniform(&[2, 3, 3, 4], -1.0, 1.0, &mut rng);
    let wrt_f = check(std::slice::from_ref(&f), |x| {
        contract(&block.forward(&x[0])?, seed)
    });
    let wrt_p = check_params(
        &mut block,
        <VssBlock<T> as Module<T>>::params_mut,
        |b| contract(&b.forward(&f)?, seed),
        40,
        seed,
    );
    wrt_f.max(wrt_p)
}

/// The full training loss of the toy model (LSM on, batch-norm batch
/// statistics, a fixed dropout mask) against 20 sampled parameters.
///
/// At 32×32 the deepest stage is 1×1, so its batch norms see one value per
/// image; a batch of two makes the loss too sharply curved for a 1e-3 step,
/// hence eight.
pub fn end_to_end<T: Scalar>(seed: u64) -> f64 {
    let mut model = UNetMamba::<T>::new(ModelConfig {
        seed,
        lsm_enabled: true,
        ..ModelConfig::toy(3)
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image: Tensor<T> = uniform(&[8, 3, 32, 32], 0.0, 1.0, &mut rng);
    let labels: Vec<u8> = (0..8 * 32 * 32).map(|_| rng.random_range(0..3u8)).collect();
    let cfg = LossConfig::default();
    let loss = |m: &UNetMamba<T>| -> Result<Tensor<T>> {
        let out = m.forward_train(&image, &mut ChaCha8Rng::seed_from_u64(seed + 3))?;
        Ok(total_loss(&out.logits, out.aux_logits.as_ref(), &labels, &cfg)?.loss)
    };
    check_params(
        &mut model,
        <UNetMamba<T> as Module<T>>::params_mut,
        loss,
        20,
        seed,
    )
}

pub struct GradCase {
    pub name: &'static str,
    pub f32: fn(u64) -> f64,
    pub f64: fn(u64) -> f64,
    pub f32_tol: f64,
}

macro_rules! case {
    ($name:literal, $f:ident, $tol:expr) => {
        GradCase {
            name: $name,
            f32: $f::<f32>,
            f64: $f::<f64>,
            f32_tol: $tol,
        }
    };
}

/// Every case, in report order.
pub fn all_cases() -> Vec<GradCase> {
    vec![
        case!("add_sub_mul_div", elementwise_binary, F32_TOL),
        case!("exp_sigmoid_silu_softplus", elementwise_unary, F32_TOL),
        case!("log_clamped_above_floor", log_clamped, F32_TOL),
        case!("relu_and_relu6_away_from_kinks", relus, F32_TOL),
        case!(
            "sum_mean_permute_reshape_select",
            reductions_and_layout,
            F32_TOL
        ),
        case!("conv2d_grouped_strided", conv, F32_TOL),
        case!("linear_with_bias", linear, F32_TOL),
        case!("layer_norm_last_axis", layer_norm, F32_TOL),
        case!("batch_norm_train_and_eval", batch_norm, F32_TOL),
        case!("softmax_any_axis", softmax, F32_TOL),
        case!("upsample_bilinear_and_nearest", upsample, F32_TOL),
        case!("dropout_fixed_mask", dropout, F32_TOL),
        case!("cross_scan_expand_and_merge", cross_scan, F32_TOL),
        case!("selective_scan_all_inputs", scan_kernel, F32_TOL),
        case!("s6_scan_input_and_parameters", s6, F32_TOL),
        case!("ss2d_input_and_parameters", ss2d_case, F32_TOL),
        case!("vss_block_input_and_parameters", vss, F32_COMPOSITE_TOL),
        case!("end_to_end_toy_model", end_to_end, F32_COMPOSITE_TOL),
    ]
}

/// Worst f32 and f64 errors of `case` over [`SEEDS`].
pub fn run(case: &GradCase) -> (f64, f64) {
    SEEDS
        .iter()
        .map(|&s| ((case.f32)(s), (case.f64)(s)))
        .fold((0.0, 0.0), |(a, b), (x, y)| {
            (f64::max(a, x), f64::max(b, y))
        })
}
