//! Analytic FLOP counts for one multi-head attention step.
//!
//! Counts follow the cumulative per-step expressions for the low-rank, kernel
//! and fused mechanisms term by term: one FLOP per multiply-accumulate as
//! written, softmax counted as `N·H·d_k`. The full-attention count is not part
//! of that family; it is a quadratic baseline added for speedup reporting.
//!
//! The regime predicates are sufficient conditions. [`crossover_n`] finds the
//! actual smallest sequence length where the fused count wins, which can lie
//! well below the predicate's threshold.

use serde::Serialize;

use crate::error::{Error, Result};

/// Per-step FLOP counts broken down by stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CostBreakdown {
    pub downsampling: u64,
    pub linear_transform: u64,
    pub qk_product: u64,
    pub kernel_map: u64,
    pub softmax: u64,
    pub av_product: u64,
    pub total: u64,
}

impl CostBreakdown {
    fn finish(mut self, what: &'static str) -> Result<Self> {
        self.total = [
            self.downsampling,
            self.linear_transform,
            self.qk_product,
            self.kernel_map,
            self.softmax,
            self.av_product,
        ]
        .iter()
        .try_fold(0u64, |acc, &x| acc.checked_add(x))
        .ok_or(Error::Overflow(what))?;
        Ok(self)
    }
}

fn prod(what: &'static str, factors: &[u64]) -> Result<u64> {
    factors
        .iter()
        .try_fold(1u64, |acc, &x| acc.checked_mul(x))
        .ok_or(Error::Overflow(what))
}

fn sum(what: &'static str, terms: &[u64]) -> Result<u64> {
    terms
        .iter()
        .try_fold(0u64, |acc, &x| acc.checked_add(x))
        .ok_or(Error::Overflow(what))
}

/// `2N·d_k·d_m + N·d_m² + 2d_k·d_m² + N·d_m·d_k + N·H·d_k + N·d_k·d_m`
pub fn flops_lowrank(n: u64, d_m: u64, d_k: u64, h: u64) -> Result<CostBreakdown> {
    const W: &str = "low-rank cost";
    CostBreakdown {
        downsampling: prod(W, &[2, n, d_k, d_m])?,
        linear_transform: sum(W, &[prod(W, &[n, d_m, d_m])?, prod(W, &[2, d_k, d_m, d_m])?])?,
        qk_product: prod(W, &[n, d_m, d_k])?,
        softmax: prod(W, &[n, h, d_k])?,
        av_product: prod(W, &[n, d_k, d_m])?,
        ..Default::default()
    }
    .finish(W)
}

/// `3N·d_m² + 2N·d_m + 2N·d_m·d_h`
pub fn flops_kernel(n: u64, d_m: u64, d_h: u64) -> Result<CostBreakdown> {
    const W: &str = "kernel cost";
    CostBreakdown {
        linear_transform: prod(W, &[3, n, d_m, d_m])?,
        kernel_map: prod(W, &[2, n, d_m])?,
        av_product: prod(W, &[2, n, d_m, d_h])?,
        ..Default::default()
    }
    .finish(W)
}

/// `2N·d_k·d_m + N·d_m² + 2d_k·d_m² + N·d_m + d_m·d_k + d_k·d_m·d_h + N·d_h·d_m`
pub fn flops_flurka(n: u64, d_m: u64, d_k: u64, d_h: u64) -> Result<CostBreakdown> {
    const W: &str = "fused cost";
    CostBreakdown {
        downsampling: prod(W, &[2, n, d_k, d_m])?,
        linear_transform: sum(W, &[prod(W, &[n, d_m, d_m])?, prod(W, &[2, d_k, d_m, d_m])?])?,
        kernel_map: sum(W, &[prod(W, &[n, d_m])?, prod(W, &[d_m, d_k])?])?,
        av_product: sum(W, &[prod(W, &[d_k, d_m, d_h])?, prod(W, &[n, d_h, d_m])?])?,
        ..Default::default()
    }
    .finish(W)
}

/// Quadratic baseline: `3N·d_m²` projections, `2N²·d_m` for the two
/// products and `N²·H` for the softmax.
pub fn flops_full(n: u64, d_m: u64, h: u64) -> Result<CostBreakdown> {
    const W: &str = "full-attention cost";
    CostBreakdown {
        linear_transform: prod(W, &[3, n, d_m, d_m])?,
        qk_product: prod(W, &[n, n, d_m])?,
        av_product: prod(W, &[n, n, d_m])?,
        softmax: prod(W, &[n, n, h])?,
        ..Default::default()
    }
    .finish(W)
}

/// `N > d_k(H+2) > d_m > d_k > d_h`: fewer FLOPs than both constituents.
pub fn claim1_regime(n: u64, d_m: u64, d_k: u64, d_h: u64, h: u64) -> bool {
    let bound = (d_k as u128) * (h as u128 + 2);
    (n as u128) > bound && bound > d_m as u128 && d_m > d_k && d_k > d_h
}

/// `N - 1 > d_k > d_h`: fewer FLOPs than the low-rank mechanism.
pub fn claim2_regime(n: u64, d_k: u64, d_h: u64) -> bool {
    n > 0 && n - 1 > d_k && d_k > d_h
}

/// `N > d_k(H+2)` and `d_m > d_k`: fewer FLOPs than the kernel mechanism.
pub fn claim3_regime(n: u64, d_m: u64, d_k: u64, h: u64) -> bool {
    (n as u128) > (d_k as u128) * (h as u128 + 2) && d_m > d_k
}

fn fused_wins(n: u64, d_m: u64, d_k: u64, d_h: u64, h: u64) -> Result<bool> {
    let f = flops_flurka(n, d_m, d_k, d_h)?.total;
    let l = flops_lowrank(n, d_m, d_k, h)?.total;
    let k = flops_kernel(n, d_m, d_h)?.total;
    Ok(f < l.min(k))
}

/// Smallest `n <= n_max` at which the fused count is strictly below both
/// constituents, by exhaustive scan.
pub fn crossover_n(d_m: u64, d_k: u64, d_h: u64, h: u64, n_max: u64) -> Result<Option<u64>> {
    for n in 1..=n_max {
        if fused_wins(n, d_m, d_k, d_h, h)? {
            return Ok(Some(n));
        }
    }
    Ok(None)
}

/// One row of the cost table, serialised with the column names below.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostRow {
    #[serde(rename = "N")]
    pub n: u64,
    pub d_m: u64,
    pub d_k: u64,
    pub d_h: u64,
    #[serde(rename = "H")]
    pub h: u64,
    pub flops_full: u64,
    pub flops_lowrank: u64,
    pub flops_kernel: u64,
    pub flops_flurka: u64,
    pub claim1: u8,
    pub claim2: u8,
    pub claim3: u8,
}

pub const COST_CSV_HEADER: &str =
    "N,d_m,d_k,d_h,H,flops_full,flops_lowrank,flops_kernel,flops_flurka,claim1,claim2,claim3";

impl CostRow {
    pub fn evaluate(n: u64, d_m: u64, d_k: u64, d_h: u64, h: u64) -> Result<Self> {
        Ok(Self {
            n,
            d_m,
            d_k,
            d_h,
            h,
            flops_full: flops_full(n, d_m, h)?.total,
            flops_lowrank: flops_lowrank(n, d_m, d_k, h)?.total,
            flops_kernel: flops_kernel(n, d_m, d_h)?.total,
            flops_flurka: flops_flurka(n, d_m, d_k, d_h)?.total,
            claim1: claim1_regime(n, d_m, d_k, d_h, h) as u8,
            claim2: claim2_regime(n, d_k, d_h) as u8,
            claim3: claim3_regime(n, d_m, d_k, h) as u8,
        })
    }
}
