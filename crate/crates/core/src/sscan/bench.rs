//! Wall-clock scaling of the scan kernel in sequence length.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{s6_scan, SSMParams};
use crate::error::Result;
use crate::tensor::{no_grad, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchRow {
    pub l: usize,
    pub median_ns: u128,
    pub reps: usize,
}

/// Times `s6_scan` on `[1, L, d_inner]` for each `L`, on the calling thread.
/// One untimed warm-up run precedes the timed repeats.
pub fn bench_scan(
    ls: &[usize],
    d_inner: usize,
    d_state: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    let repeats = repeats.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = SSMParams::<f32>::init("bench", d_inner, d_state, &mut rng);
    let mut rows = Vec::with_capacity(ls.len());
    for &l in ls {
        let x = Tensor::<f32>::from_fn(&[1, l, d_inner], |_| rng.random_range(-1.0..1.0));
        no_grad(|| s6_scan(&x, &params))?;
        let mut times = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let start = Instant::now();
            let y = no_grad(|| s6_scan(&x, &params))?;
            times.push(start.elapsed().as_nanos());
            std::hint::black_box(y);
        }
        times.sort_unstable();
        rows.push(BenchRow {
            l,
            median_ns: times[times.len() / 2],
            reps: repeats,
        });
    }
    Ok(rows)
}

pub fn bench_to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("L,median_ns,reps\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.l, r.median_ns, r.reps));
    }
    out
}
