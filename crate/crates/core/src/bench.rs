//! Wall-clock timing of the attention variants.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::attention::{
    full_attention, kernel_attention, linformer_attention, sample_inputs, sample_params, AttentionConfig,
    FeatureMap, FeatureMapSpec, HeadWeights, LowRankProjections, ProjectionMode,
};
use crate::error::{config_err, Error, Result};
use crate::fusion::{flurka_attention, flurka_naive_attention};
use crate::tensor::{Matrix, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    LowRank,
    Kernel,
    Flurka,
    FlurkaNaive,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::LowRank,
        Variant::Kernel,
        Variant::Flurka,
        Variant::FlurkaNaive,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::LowRank => "lowrank",
            Variant::Kernel => "kernel",
            Variant::Flurka => "flurka",
            Variant::FlurkaNaive => "flurka-naive",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// Parameters and inputs for one benchmark configuration, sampled up front.
pub struct BenchSetup {
    pub cfg: AttentionConfig,
    pub heads: Vec<HeadWeights>,
    pub proj: LowRankProjections,
    pub map: FeatureMap,
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
}

impl BenchSetup {
    pub fn sample(cfg: &AttentionConfig, spec: &FeatureMapSpec, input_std: f64) -> Result<Self> {
        let (heads, proj) = sample_params(cfg, ProjectionMode::Practical)?;
        let map = spec.build(cfg.d_head)?;
        let mut rng = RngStream::new(cfg.seed).fork();
        let q = sample_inputs(&mut rng, cfg, input_std);
        let k = sample_inputs(&mut rng, cfg, input_std);
        let v = sample_inputs(&mut rng, cfg, input_std);
        Ok(Self {
            cfg: *cfg,
            heads,
            proj,
            map,
            q,
            k,
            v,
        })
    }

    pub fn forward(&self, variant: Variant) -> Result<Matrix> {
        let (q, k, v, h, c) = (&self.q, &self.k, &self.v, &self.heads, &self.cfg);
        match variant {
            Variant::Full => full_attention(q, k, v, h, c),
            Variant::LowRank => linformer_attention(q, k, v, h, &self.proj, c),
            Variant::Kernel => Ok(kernel_attention(q, k, v, h, &self.map, c)?.output),
            Variant::Flurka => Ok(flurka_attention(q, k, v, h, &self.proj, &self.map, c)?.output),
            Variant::FlurkaNaive => Ok(flurka_naive_attention(q, k, v, h, &self.proj, &self.map, c)?.output),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub reps: usize,
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
}

/// Linear-interpolated percentile of sorted samples, `p` in `[0, 100]`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Timing {
    pub fn from_samples(mut ms: Vec<f64>) -> Self {
        ms.sort_by(|a, b| a.total_cmp(b));
        Self {
            reps: ms.len(),
            median_ms: percentile(&ms, 50.0),
            p10_ms: percentile(&ms, 10.0),
            p90_ms: percentile(&ms, 90.0),
        }
    }
}

/// Runs `warmup` untimed and `reps` timed forward passes of `variant`.
pub fn time_forward(setup: &BenchSetup, variant: Variant, warmup: usize, reps: usize) -> Result<Timing> {
    if reps == 0 {
        return config_err("reps must be at least 1");
    }
    for _ in 0..warmup {
        std::hint::black_box(setup.forward(variant)?);
    }
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        std::hint::black_box(setup.forward(variant)?);
        samples.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(Timing::from_samples(samples))
}

/// Times several variants on one setup, alternating between them in every
/// round so slow phases of the host are shared across variants.
pub fn time_interleaved(
    setup: &BenchSetup,
    variants: &[Variant],
    warmup: usize,
    reps: usize,
) -> Result<Vec<Timing>> {
    if reps == 0 {
        return config_err("reps must be at least 1");
    }
    for _ in 0..warmup {
        for &v in variants {
            std::hint::black_box(setup.forward(v)?);
        }
    }
    let mut samples = vec![Vec::with_capacity(reps); variants.len()];
    for _ in 0..reps {
        for (&v, s) in variants.iter().zip(samples.iter_mut()) {
            let t = Instant::now();
            std::hint::black_box(setup.forward(v)?);
            s.push(t.elapsed().as_secs_f64() * 1e3);
        }
    }
    Ok(samples.into_iter().map(Timing::from_samples).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub variant: &'static str,
    pub kernel: &'static str,
    #[serde(rename = "N")]
    pub n: usize,
    pub d_m: usize,
    pub d_k: usize,
    pub d_h: usize,
    #[serde(rename = "H")]
    pub h: usize,
    pub reps: usize,
    pub warmup: usize,
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
}

pub const BENCH_CSV_HEADER: &str = "variant,kernel,N,d_m,d_k,d_h,H,reps,warmup,median_ms,p10_ms,p90_ms";

impl BenchRecord {
    pub fn new(
        variant: Variant,
        spec: &FeatureMapSpec,
        cfg: &AttentionConfig,
        warmup: usize,
        t: Timing,
    ) -> Self {
        Self {
            variant: variant.name(),
            kernel: crate::analysis::kernel_label(spec.kind),
            n: cfg.n,
            d_m: cfg.d_model,
            d_k: cfg.d_k,
            d_h: cfg.d_head,
            h: cfg.heads,
            reps: t.reps,
            warmup,
            median_ms: t.median_ms,
            p10_ms: t.p10_ms,
            p90_ms: t.p90_ms,
        }
    }
}
