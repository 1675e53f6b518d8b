//! Seeded checks shared by the integration tests and the acceptance report.

#![allow(dead_code)]

pub mod grad;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use unetmamba::sscan::oracle::{s6_scan_oracle, ss2d_oracle};
use unetmamba::sscan::{cross_scan_expand, cross_scan_merge, s6_scan, ss2d, SSMParams};
use unetmamba::Tensor;

pub fn random(shape: &[usize], lo: f32, hi: f32, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Parameters with A and D moved off their structured initial values.
pub fn random_params(d: usize, n: usize, rng: &mut ChaCha8Rng) -> SSMParams<f32> {
    let mut p = SSMParams::init("ssm", d, n, rng);
    p.a_log.set(random(&[d, n], -1.0, 1.5, rng));
    p.d_skip.set(random(&[d], -1.0, 1.0, rng));
    p
}

fn max_abs_diff(a: &Tensor<f32>, b: &Tensor<f32>) -> f32 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}

/// Largest `|s6_scan − oracle|` over `instances` seeded problems with
/// `L ≤ 64`, `D ≤ 8`, `N ≤ 8`.
pub fn scan_oracle_max_err(instances: u64) -> f32 {
    (0..instances)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (b, l, d, n) = (
                rng.random_range(1..=2),
                rng.random_range(1..=64),
                rng.random_range(1..=8),
                rng.random_range(1..=8),
            );
            let params = random_params(d, n, &mut rng);
            let x = random(&[b, l, d], -1.0, 1.0, &mut rng);
            max_abs_diff(
                &s6_scan(&x, &params).unwrap(),
                &s6_scan_oracle(&x, &params).unwrap(),
            )
        })
        .fold(0.0, f32::max)
}

/// Largest `|ss2d − oracle|` over seeded grids up to 8×8.
pub fn ss2d_oracle_max_err(instances: u64) -> f32 {
    (0..instances)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let (h, w, d, n) = (
                rng.random_range(1..=8),
                rng.random_range(1..=8),
                rng.random_range(1..=6),
                rng.random_range(1..=6),
            );
            let params = random_params(d, n, &mut rng);
            let f = random(&[1, h, w, d], -1.0, 1.0, &mut rng);
            max_abs_diff(
                &ss2d(&f, &params).unwrap(),
                &ss2d_oracle(&f, &params).unwrap(),
            )
        })
        .fold(0.0, f32::max)
}

pub struct CrossScanReport {
    /// `merge(expand(F)) == 4F` held exactly on every integer instance.
    pub exact: bool,
    /// Largest relative gap in `⟨expand(F), S⟩ = ⟨F, merge(S)⟩`.
    pub adjoint_rel_err: f64,
}

pub fn cross_scan_check(instances: u64) -> CrossScanReport {
    let mut exact = true;
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let (b, h, w, c) = (
            rng.random_range(1..=2),
            rng.random_range(1..=9),
            rng.random_range(1..=9),
            rng.random_range(1..=4),
        );
        let ints = Tensor::<f32>::from_fn(&[b, h, w, c], |_| rng.random_range(-50..=50) as f32);
        let round = cross_scan_merge(&cross_scan_expand(&ints).unwrap(), h, w).unwrap();
        exact &= round
            .data()
            .iter()
            .zip(ints.data())
            .all(|(r, f)| *r == 4.0 * f);

        let f = random(&[b, h, w, c], -1.0, 1.0, &mut rng);
        let s = random(&[b, 4, h * w, c], -1.0, 1.0, &mut rng);
        let dot = |x: &Tensor<f32>, y: &Tensor<f32>| -> f64 {
            x.data()
                .iter()
                .zip(y.data())
                .map(|(a, b)| *a as f64 * *b as f64)
                .sum()
        };
        let lhs = dot(&cross_scan_expand(&f).unwrap(), &s);
        let rhs = dot(&f, &cross_scan_merge(&s, h, w).unwrap());
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12));
    }
    CrossScanReport {
        exact,
        adjoint_rel_err: worst,
    }
}
