//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Gradients, Parameter, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
    /// Global-norm gradient clipping threshold; off when `None`.
    pub grad_clip: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 6e-4,
            weight_decay: 2.5e-4,
            betas: (0.9, 0.999),
            eps: 1e-8,
            epochs: 100,
            batch_size: 8,
            max_steps: None,
            grad_clip: None,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let (b1, b2) = self.betas;
        if self.lr.is_nan()
            || self.lr < 0.0
            || !(0.0..1.0).contains(&b1)
            || !(0.0..1.0).contains(&b2)
        {
            return Err(Error::Config(format!(
                "need lr >= 0 and betas in [0, 1), got lr {} betas {:?}",
                self.lr, self.betas
            )));
        }
        if self.eps.is_nan()
            || self.eps <= 0.0
            || self.weight_decay.is_nan()
            || self.weight_decay < 0.0
        {
            return Err(Error::Config(
                "eps must be positive and weight_decay non-negative".into(),
            ));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "batch_size and epochs must be positive".into(),
            ));
        }
        if matches!(self.grad_clip, Some(c) if c.is_nan() || c <= 0.0) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

/// First and second moments per parameter, in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new(params: &[&Parameter<T>]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        }
    }
}

/// Global L2 norm of the gradients of `params`.
pub fn grad_norm<T: Scalar>(params: &[&mut Parameter<T>], grads: &Gradients<T>) -> f64 {
    params
        .iter()
        .filter_map(|p| grads.get(&p.tensor))
        .flat_map(|g| g.iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// One update of every parameter. Parameters without a gradient count as
/// having a zero gradient (their moments still decay and weight decay
/// applies). A non-finite gradient aborts before anything is modified.
pub fn adamw_step<T: Scalar>(
    params: &mut [&mut Parameter<T>],
    grads: &Gradients<T>,
    state: &mut AdamWState<T>,
    cfg: &OptimConfig,
) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::Argument(format!(
            "optimizer state holds {} parameters, model has {}",
            state.m.len(),
            params.len()
        )));
    }
    for p in params.iter() {
        if let Some(g) = grads.get(&p.tensor) {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in {} at element {i}",
                    p.name
                )));
            }
        }
    }
    let scale = match cfg.grad_clip {
        Some(max) => {
            let norm = grad_norm(params, grads);
            if norm > max {
                max / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.betas.0), T::lit(cfg.betas.1));
    let (one, lr, wd, eps) = (
        T::one(),
        T::lit(cfg.lr),
        T::lit(cfg.weight_decay),
        T::lit(cfg.eps),
    );
    let c1 = T::lit(1.0 - cfg.betas.0.powi(t));
    let c2 = T::lit(1.0 - cfg.betas.1.powi(t));
    let scale = T::lit(scale);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads.get(&p.tensor);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let theta: Vec<T> = p
            .tensor
            .data()
            .iter()
            .enumerate()
            .map(|(j, &th)| {
                let gj = g.map_or(T::zero(), |g| g[j] * scale);
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                th - lr * (m_hat / (v_hat.sqrt() + eps) + wd * th)
            })
            .collect();
        let shape = p.shape().to_vec();
        p.set(Tensor::new(&shape, theta)?);
    }
    Ok(())
}
