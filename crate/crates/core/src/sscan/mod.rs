//! Selective scan (S6) and its four-direction 2-D form (SS2D).
//!
//! For every channel `d` and state index `n` the recurrence is
//!
//! ```text
//! Δₜ = softplus(dt_up(dt_down(xₜ)) + dt_bias)
//! hₜ = exp(Δₜ·A) ⊙ hₜ₋₁ + Δₜ·Bₜ·xₜ        (h₀ = 0)
//! yₜ = Σₙ Cₜ·hₜ + D·xₜ
//! ```
//!
//! with `A = −exp(A_log) < 0`, and `B`, `C` linear in the input. The input
//! projection `B̄ = Δ·B` is the simplified zero-order hold.

mod bench;
mod cross;
pub mod oracle;

use rand::Rng;

use crate::error::{arg_err, shape_err, Error, Result};
use crate::init::{kaiming_bound, uniform};
use crate::scalar::Scalar;
use crate::tensor::{Parameter, Tensor};

pub use bench::{bench_scan, bench_to_csv, BenchRow};
pub use cross::{cross_scan_expand, cross_scan_merge, ScanDirection};

/// Selective-scan parameters for `d_inner` channels and `d_state` states.
#[derive(Debug, Clone)]
pub struct SSMParams<T: Scalar> {
    pub d_inner: usize,
    pub d_state: usize,
    pub dt_rank: usize,
    /// `[d_inner, d_state]`, with `A = −exp(a_log)`.
    pub a_log: Parameter<T>,
    /// `[d_inner]`
    pub d_skip: Parameter<T>,
    /// `[dt_rank, d_inner]`, no bias.
    pub dt_down: Parameter<T>,
    /// `[d_inner, dt_rank]`
    pub dt_up: Parameter<T>,
    /// `[d_inner]`
    pub dt_bias: Parameter<T>,
    /// `[d_state, d_inner]`, no bias.
    pub b_proj: Parameter<T>,
    /// `[d_state, d_inner]`, no bias.
    pub c_proj: Parameter<T>,
}

/// Rank of the Δ projection: `ceil(d_inner / 16)`.
pub fn default_dt_rank(d_inner: usize) -> usize {
    d_inner.div_ceil(16)
}

impl<T: Scalar> SSMParams<T> {
    /// Standard initialisation: S4D-real `A = −(1..=N)`, `D = 1`, Δ bias such
    /// that the initial step is log-uniform in `[0.001, 0.1]`, projections
    /// Kaiming-uniform.
    pub fn init(prefix: &str, d_inner: usize, d_state: usize, rng: &mut impl Rng) -> Self {
        let dt_rank = default_dt_rank(d_inner);
        let a_log = Tensor::from_fn(&[d_inner, d_state], |i| {
            T::lit(((i % d_state) + 1) as f64).ln()
        });
        let (dt_min, dt_max) = (1e-3f64, 1e-1f64);
        let dt_bias = Tensor::from_fn(&[d_inner], |_| {
            let u: f64 = rng.random();
            let dt = (dt_min.ln() + u * (dt_max.ln() - dt_min.ln()))
                .exp()
                .max(1e-4);
            // inverse softplus
            T::lit(dt + (-(-dt).exp_m1()).ln())
        });
        let dt_up_bound = (dt_rank as f64).powf(-0.5);
        Self {
            d_inner,
            d_state,
            dt_rank,
            a_log: Parameter::new(format!("{prefix}.a_log"), a_log),
            d_skip: Parameter::new(format!("{prefix}.d_skip"), Tensor::ones(&[d_inner])),
            dt_down: Parameter::new(
                format!("{prefix}.dt_down.weight"),
                uniform(&[dt_rank, d_inner], kaiming_bound(d_inner), rng),
            ),
            dt_up: Parameter::new(
                format!("{prefix}.dt_up.weight"),
                uniform(&[d_inner, dt_rank], dt_up_bound, rng),
            ),
            dt_bias: Parameter::new(format!("{prefix}.dt_up.bias"), dt_bias),
            b_proj: Parameter::new(
                format!("{prefix}.b_proj.weight"),
                uniform(&[d_state, d_inner], kaiming_bound(d_inner), rng),
            ),
            c_proj: Parameter::new(
                format!("{prefix}.c_proj.weight"),
                uniform(&[d_state, d_inner], kaiming_bound(d_inner), rng),
            ),
        }
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        vec![
            &self.a_log,
            &self.d_skip,
            &self.dt_down,
            &self.dt_up,
            &self.dt_bias,
            &self.b_proj,
            &self.c_proj,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![
            &mut self.a_log,
            &mut self.d_skip,
            &mut self.dt_down,
            &mut self.dt_up,
            &mut self.dt_bias,
            &mut self.b_proj,
            &mut self.c_proj,
        ]
    }

    fn validate(&self) -> Result<()> {
        let (d, n, r) = (self.d_inner, self.d_state, self.dt_rank);
        let expect: [(&Parameter<T>, Vec<usize>); 7] = [
            (&self.a_log, vec![d, n]),
            (&self.d_skip, vec![d]),
            (&self.dt_down, vec![r, d]),
            (&self.dt_up, vec![d, r]),
            (&self.dt_bias, vec![d]),
            (&self.b_proj, vec![n, d]),
            (&self.c_proj, vec![n, d]),
        ];
        for (p, shape) in expect {
            if p.shape() != shape.as_slice() {
                return Err(shape_err!(
                    "{}: shape {:?}, expected {:?}",
                    p.name,
                    p.shape(),
                    shape
                ));
            }
            if p.tensor.has_non_finite() {
                return Err(Error::Numeric(format!("{} contains NaN or Inf", p.name)));
            }
        }
        Ok(())
    }

    /// Per-position Δ (after softplus), B and C for an input whose last axis
    /// is `d_inner`.
    pub fn project(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        let delta = x
            .linear(&self.dt_down.tensor, None)?
            .linear(&self.dt_up.tensor, Some(&self.dt_bias.tensor))?
            .softplus();
        let b = x.linear(&self.b_proj.tensor, None)?;
        let c = x.linear(&self.c_proj.tensor, None)?;
        Ok((delta, b, c))
    }

    /// `A = −exp(A_log)`.
    pub fn a(&self) -> Tensor<T> {
        self.a_log.tensor.exp().neg()
    }
}

/// S6 over `x: [B, L, D]`.
pub fn s6_scan<T: Scalar>(x: &Tensor<T>, params: &SSMParams<T>) -> Result<Tensor<T>> {
    check_sequence(x, params)?;
    params.validate()?;
    let (delta, b, c) = params.project(x)?;
    selective_scan(x, &delta, &params.a(), &b, &c, &params.d_skip.tensor)
}

fn check_sequence<T: Scalar>(x: &Tensor<T>, params: &SSMParams<T>) -> Result<()> {
    if x.rank() != 3 {
        return Err(shape_err!(
            "s6_scan: expected [B, L, D], got {:?}",
            x.shape()
        ));
    }
    if x.dim(1) == 0 {
        return Err(arg_err!("s6_scan: sequence length must be at least 1"));
    }
    if x.dim(2) != params.d_inner {
        return Err(shape_err!(
            "s6_scan: input {:?} vs d_inner {}",
            x.shape(),
            params.d_inner
        ));
    }
    Ok(())
}

/// SS2D over a channels-last map `[B, H, W, D]`: expand into four scan
/// orders, run S6 on each with shared parameters, and merge by summation.
pub fn ss2d<T: Scalar>(f: &Tensor<T>, params: &SSMParams<T>) -> Result<Tensor<T>> {
    if f.rank() != 4 || f.dim(3) != params.d_inner {
        return Err(shape_err!(
            "ss2d: expected [B, H, W, {}], got {:?}",
            params.d_inner,
            f.shape()
        ));
    }
    params.validate()?;
    let (bsz, h, w) = (f.dim(0), f.dim(1), f.dim(2));
    let l = h * w;
    // Δ, B and C are pointwise in the input, so they are projected once on
    // the grid and reordered alongside it.
    let (delta, b, c) = params.project(f)?;
    let seq = |t: &Tensor<T>| -> Result<Tensor<T>> {
        let ch = t.dim(3);
        cross_scan_expand(t)?.reshape(&[bsz * 4, l, ch])
    };
    let y = selective_scan(
        &seq(f)?,
        &seq(&delta)?,
        &params.a(),
        &seq(&b)?,
        &seq(&c)?,
        &params.d_skip.tensor,
    )?;
    cross_scan_merge(&y.reshape(&[bsz, 4, l, params.d_inner])?, h, w)
}

/// The scan kernel with explicit per-timestep inputs.
///
/// `u, delta: [B, L, D]`, `a: [D, N]`, `b, c: [B, L, N]`, `d_skip: [D]`.
pub fn selective_scan<T: Scalar>(
    u: &Tensor<T>,
    delta: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    c: &Tensor<T>,
    d_skip: &Tensor<T>,
) -> Result<Tensor<T>> {
    if u.rank() != 3 {
        return Err(shape_err!(
            "selective_scan: u must be [B, L, D], got {:?}",
            u.shape()
        ));
    }
    let (bsz, l, d) = (u.dim(0), u.dim(1), u.dim(2));
    if a.rank() != 2 || a.dim(0) != d {
        return Err(shape_err!(
            "selective_scan: A {:?} vs u {:?}",
            a.shape(),
            u.shape()
        ));
    }
    let n = a.dim(1);
    if delta.shape() != u.shape()
        || b.shape() != [bsz, l, n]
        || c.shape() != [bsz, l, n]
        || d_skip.shape() != [d]
    {
        return Err(shape_err!(
            "selective_scan: inconsistent shapes u {:?} delta {:?} A {:?} B {:?} C {:?} D {:?}",
            u.shape(),
            delta.shape(),
            a.shape(),
            b.shape(),
            c.shape(),
            d_skip.shape()
        ));
    }
    let dims = ScanDims { bsz, l, d, n };
    let mut y = vec![T::zero(); bsz * l * d];
    let mut h = vec![T::zero(); d * n];
    for bi in 0..bsz {
        h.iter_mut().for_each(|v| *v = T::zero());
        dims.run_forward(
            bi,
            u.data(),
            delta.data(),
            a.data(),
            b.data(),
            c.data(),
            d_skip.data(),
            &mut h,
            &mut y,
            None,
        );
    }
    let (ua, da, aa, ba, ca, dsa) = (
        u.data_arc(),
        delta.data_arc(),
        a.data_arc(),
        b.data_arc(),
        c.data_arc(),
        d_skip.data_arc(),
    );
    Ok(Tensor::from_op(
        "selective_scan",
        vec![bsz, l, d],
        y,
        &[u, delta, a, b, c, d_skip],
        move |g| {
            let grads = dims.backward(&ua, &da, &aa, &ba, &ca, &dsa, g);
            grads.into_iter().map(Some).collect()
        },
    ))
}

#[derive(Debug, Clone, Copy)]
struct ScanDims {
    bsz: usize,
    l: usize,
    d: usize,
    n: usize,
}

impl ScanDims {
    /// Runs one batch element. When `states` is given, `hₜ` for every step is
    /// stored there (`[L, D, N]`).
    #[allow(clippy::too_many_arguments)]
    fn run_forward<T: Scalar>(
        &self,
        bi: usize,
        u: &[T],
        delta: &[T],
        a: &[T],
        b: &[T],
        c: &[T],
        d_skip: &[T],
        h: &mut [T],
        y: &mut [T],
        mut states: Option<&mut [T]>,
    ) {
        let (l, d, n) = (self.l, self.d, self.n);
        for t in 0..l {
            let row = (bi * l + t) * d;
            let bt = &b[(bi * l + t) * n..][..n];
            let ct = &c[(bi * l + t) * n..][..n];
            for di in 0..d {
                let ut = u[row + di];
                let dt = delta[row + di];
                let du = dt * ut;
                let hd = &mut h[di * n..(di + 1) * n];
                let ad = &a[di * n..(di + 1) * n];
                let mut acc = T::zero();
                for k in 0..n {
                    hd[k] = (dt * ad[k]).exp() * hd[k] + du * bt[k];
                    acc += ct[k] * hd[k];
                }
                y[row + di] = acc + d_skip[di] * ut;
            }
            if let Some(s) = states.as_deref_mut() {
                s[t * d * n..(t + 1) * d * n].copy_from_slice(h);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backward<T: Scalar>(
        &self,
        u: &[T],
        delta: &[T],
        a: &[T],
        b: &[T],
        c: &[T],
        d_skip: &[T],
        g: &[T],
    ) -> [Vec<T>; 6] {
        let ScanDims { bsz, l, d, n } = *self;
        let mut gu = vec![T::zero(); u.len()];
        let mut gdelta = vec![T::zero(); delta.len()];
        let mut ga = vec![T::zero(); a.len()];
        let mut gb = vec![T::zero(); b.len()];
        let mut gc = vec![T::zero(); c.len()];
        let mut gd = vec![T::zero(); d_skip.len()];
        let mut states = vec![T::zero(); l * d * n];
        let mut h = vec![T::zero(); d * n];
        let mut scratch = vec![T::zero(); bsz * l * d];
        let mut carry = vec![T::zero(); d * n];
        for bi in 0..bsz {
            h.iter_mut().for_each(|v| *v = T::zero());
            self.run_forward(
                bi,
                u,
                delta,
                a,
                b,
                c,
                d_skip,
                &mut h,
                &mut scratch,
                Some(&mut states),
            );
            carry.iter_mut().for_each(|v| *v = T::zero());
            for t in (0..l).rev() {
                let row = (bi * l + t) * d;
                let brow = (bi * l + t) * n;
                for di in 0..d {
                    let gy = g[row + di];
                    let ut = u[row + di];
                    let dt = delta[row + di];
                    gd[di] += gy * ut;
                    let mut gut = gy * d_skip[di];
                    let mut gdt = T::zero();
                    for k in 0..n {
                        let ak = a[di * n + k];
                        let decay = (dt * ak).exp();
                        let h_t = states[(t * d + di) * n + k];
                        let h_prev = if t > 0 {
                            states[((t - 1) * d + di) * n + k]
                        } else {
                            T::zero()
                        };
                        let gh = carry[di * n + k] + gy * c[brow + k];
                        gc[brow + k] += gy * h_t;
                        gdt += gh * (ak * decay * h_prev + b[brow + k] * ut);
                        ga[di * n + k] += gh * dt * decay * h_prev;
                        gb[brow + k] += gh * dt * ut;
                        gut += gh * dt * b[brow + k];
                        carry[di * n + k] = gh * decay;
                    }
                    gu[row + di] = gut;
                    gdelta[row + di] = gdt;
                }
            }
        }
        [gu, gdelta, ga, gb, gc, gd]
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
    fn single_step_hand_evaluation() {
        // A = −1, Δ = 1, B = C = 1, D = 0, x = 2  ⇒  h₁ = 2, y = 2
        let y = selective_scan(
            &t(&[1, 1, 1], &[2.0]),
            &t(&[1, 1, 1], &[1.0]),
            &t(&[1, 1], &[-1.0]),
            &t(&[1, 1, 1], &[1.0]),
            &t(&[1, 1, 1], &[1.0]),
            &t(&[1], &[0.0]),
        )
        .unwrap();
        assert_eq!(y.to_vec(), vec![2.0]);
    }

    #[test]
    fn single_step_through_projections() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = SSMParams::<f32>::init("ssm", 1, 1, &mut rng);
        assert_eq!(p.dt_rank, 1);
        p.a_log.set(t(&[1, 1], &[0.0]));
        p.d_skip.set(t(&[1], &[0.0]));
        p.dt_down.set(t(&[1, 1], &[0.0]));
        p.dt_up.set(t(&[1, 1], &[0.0]));
        // softplus(ln(e − 1)) = 1
        p.dt_bias.set(t(&[1], &[(std::f32::consts::E - 1.0).ln()]));
        // B = C = 0.5·x = 1 at x = 2
        p.b_proj.set(t(&[1, 1], &[0.5]));
        p.c_proj.set(t(&[1, 1], &[0.5]));
        let y = s6_scan(&t(&[1, 1, 1], &[2.0]), &p).unwrap();
        assert!((y.item() - 2.0).abs() < 1e-6, "{}", y.item());
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = SSMParams::<f32>::init("ssm", 4, 3, &mut rng);
        let y = s6_scan(&Tensor::zeros(&[2, 5, 4]), &p).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let y = ss2d(&Tensor::zeros(&[1, 3, 2, 4]), &p).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_conventions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = SSMParams::<f64>::init("ssm", 32, 4, &mut rng);
        assert_eq!(p.dt_rank, 2);
        let a = p.a();
        for (got, want) in a.data()[..8]
            .iter()
            .zip([-1.0, -2.0, -3.0, -4.0, -1.0, -2.0, -3.0, -4.0])
        {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(a.data().iter().all(|&v| v < 0.0));
        let dt = p.dt_bias.tensor.softplus();
        assert!(
            dt.data()
                .iter()
                .all(|&v| (1e-3 - 1e-9..=0.1 + 1e-9).contains(&v)),
            "{dt:?}"
        );
        assert!(p.d_skip.tensor.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = SSMParams::<f32>::init("ssm", 2, 2, &mut rng);
        assert!(s6_scan(&Tensor::zeros(&[1, 3, 3]), &p).is_err());
        // a zero-length sequence cannot even be constructed
        assert!(Tensor::<f32>::new(&[1, 0, 2], vec![]).is_err());
        p.a_log.set(t(&[2, 2], &[0.0, f32::NAN, 0.0, 0.0]));
        let err = s6_scan(&Tensor::zeros(&[1, 3, 2]), &p).unwrap_err();
        assert!(err.is_numeric(), "{err}");
    }

    #[test]
    fn one_by_one_grid_is_four_single_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = SSMParams::<f64>::init("ssm", 3, 2, &mut rng);
        let f = Tensor::<f64>::new(&[1, 1, 1, 3], vec![0.3, -0.7, 1.1]).unwrap();
        let single = s6_scan(&f.reshape(&[1, 1, 3]).unwrap(), &p).unwrap();
        let grid = ss2d(&f, &p).unwrap();
        for (g, s) in grid.data().iter().zip(single.data()) {
            assert!((g - 4.0 * s).abs() < 1e-12);
        }
    }
}
