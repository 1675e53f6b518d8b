//! Visual state-space block and patch expansion.

use super::flops::{FlopTrace, SCAN_MACS_PER_STATE};
use super::layers::{Conv2d, LayerNorm, Linear, Module};
use crate::error::{shape_err, Result};
use crate::rng::SeedStream;
use crate::scalar::Scalar;
use crate::sscan::{ss2d, SSMParams};
use crate::tensor::{Parameter, Tensor};

/// Residual VSS block on channels-last maps `[B, H, W, C]`:
///
/// ```text
/// x       = LN(F)
/// main    = SiLU(DWConv3x3(Linear_main(x)))
/// scanned = LN(SS2D(main))
/// bypass  = SiLU(Linear_bypass(x))
/// out     = F + Linear_out(scanned ⊙ bypass)
/// ```
#[derive(Debug, Clone)]
pub struct VssBlock<T: Scalar> {
    pub dim: usize,
    pub d_inner: usize,
    pub norm_in: LayerNorm<T>,
    pub in_main: Linear<T>,
    pub in_bypass: Linear<T>,
    pub dwconv: Conv2d<T>,
    pub ssm: SSMParams<T>,
    pub norm_scan: LayerNorm<T>,
    pub out: Linear<T>,
}

impl<T: Scalar> VssBlock<T> {
    pub fn new(name: &str, dim: usize, expand: usize, d_state: usize, seeds: &SeedStream) -> Self {
        let d_inner = expand * dim;
        Self {
            dim,
            d_inner,
            norm_in: LayerNorm::new(&format!("{name}.norm_in"), dim),
            in_main: Linear::new(&format!("{name}.in_main"), dim, d_inner, true, seeds),
            in_bypass: Linear::new(&format!("{name}.in_bypass"), dim, d_inner, true, seeds),
            dwconv: Conv2d::new(
                &format!("{name}.dwconv"),
                d_inner,
                d_inner,
                3,
                1,
                d_inner,
                true,
                seeds,
            ),
            ssm: SSMParams::init(
                &format!("{name}.ssm"),
                d_inner,
                d_state,
                &mut seeds.child(&format!("{name}.ssm")).rng(),
            ),
            norm_scan: LayerNorm::new(&format!("{name}.norm_scan"), d_inner),
            out: Linear::new(&format!("{name}.out"), d_inner, dim, true, seeds),
        }
    }

    pub fn forward(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        if f.rank() != 4 || f.dim(3) != self.dim {
            return Err(shape_err!(
                "vss block: expected [B, H, W, {}], got {:?}",
                self.dim,
                f.shape()
            ));
        }
        let x = self.norm_in.forward(f)?;
        let main = self.in_main.forward(&x)?.nhwc_to_nchw()?;
        let main = self.dwconv.forward(&main)?.silu().nchw_to_nhwc()?;
        let scanned = self.norm_scan.forward(&ss2d(&main, &self.ssm)?)?;
        let bypass = self.in_bypass.forward(&x)?.silu();
        f.add(&self.out.forward(&scanned.mul(&bypass)?)?)
    }

    /// `input` is channels-last `[B, H, W, C]`.
    pub fn trace(&self, input: [usize; 4], trace: &mut FlopTrace) {
        let [b, h, w, _] = input;
        let positions = b * h * w;
        self.in_main.trace(positions, trace);
        self.in_bypass.trace(positions, trace);
        self.dwconv.trace([b, self.d_inner, h, w], trace);
        let ssm = &self.ssm;
        let prefix = ssm.a_log.name.trim_end_matches(".a_log");
        let proj = ssm.d_inner * ssm.dt_rank * 2 + 2 * ssm.d_inner * ssm.d_state;
        trace.record(
            &format!("{prefix}.proj"),
            "linear",
            (positions * proj) as u64,
        );
        // four directions, each a scan over all H·W positions
        let scan = 4 * positions as u64 * (ssm.d_inner * ssm.d_state) as u64 * SCAN_MACS_PER_STATE;
        trace.record(&format!("{prefix}.scan"), "selective_scan", scan);
        self.out.trace(positions, trace);
    }
}

impl<T: Scalar> Module<T> for VssBlock<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        let mut p = self.norm_in.params();
        p.extend(self.in_main.params());
        p.extend(self.in_bypass.params());
        p.extend(self.dwconv.params());
        p.extend(self.ssm.params());
        p.extend(self.norm_scan.params());
        p.extend(self.out.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut p = self.norm_in.params_mut();
        p.extend(self.in_main.params_mut());
        p.extend(self.in_bypass.params_mut());
        p.extend(self.dwconv.params_mut());
        p.extend(self.ssm.params_mut());
        p.extend(self.norm_scan.params_mut());
        p.extend(self.out.params_mut());
        p
    }
}

/// 2× upsampling: a linear map `C → 4·C_out` followed by placing the four
/// channel groups into a 2×2 spatial block (group `2i + j` lands at row
/// offset `i`, column offset `j`).
#[derive(Debug, Clone)]
pub struct PatchExpand<T: Scalar> {
    pub proj: Linear<T>,
    pub c_out: usize,
}

impl<T: Scalar> PatchExpand<T> {
    pub fn new(name: &str, c_in: usize, c_out: usize, seeds: &SeedStream) -> Self {
        Self {
            proj: Linear::new(&format!("{name}.proj"), c_in, 4 * c_out, true, seeds),
            c_out,
        }
    }

    pub fn forward(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        pixel_shuffle_nhwc(&self.proj.forward(f)?, self.c_out)
    }

    pub fn trace(&self, input: [usize; 4], trace: &mut FlopTrace) -> [usize; 4] {
        let [b, h, w, _] = input;
        self.proj.trace(b * h * w, trace);
        [b, 2 * h, 2 * w, self.c_out]
    }
}

impl<T: Scalar> Module<T> for PatchExpand<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        self.proj.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.proj.params_mut()
    }
}

/// `[B, H, W, 4·C]` → `[B, 2H, 2W, C]`.
pub fn pixel_shuffle_nhwc<T: Scalar>(x: &Tensor<T>, c_out: usize) -> Result<Tensor<T>> {
    if x.rank() != 4 || x.dim(3) != 4 * c_out {
        return Err(shape_err!(
            "pixel shuffle: expected [B, H, W, {}], got {:?}",
            4 * c_out,
            x.shape()
        ));
    }
    let (b, h, w) = (x.dim(0), x.dim(1), x.dim(2));
    x.reshape(&[b, h, w, 2, 2, c_out])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape(&[b, 2 * h, 2 * w, c_out])
}
