//! Numerical experiments on kernelized attention: rank structure of the
//! implicit attention matrix, decomposed approximation error of the fused
//! mechanism, and an empirical check that positive random features are
//! unbiased for `exp(xᵀy)`.

use serde::Serialize;

use crate::attention::{
    apply_feature_map, full_attention, linformer_attention, project_query, sample_inputs, sample_params,
    AttentionConfig, FeatureMap, FeatureMapSpec, HeadWeights, KernelKind, LowRankProjections, ProjectionMode,
    DENOMINATOR_FLOOR,
};
use crate::error::{config_err, Result};
use crate::fusion::{flurka_attention, make_theorem_projections};
use crate::tensor::{Matrix, RngStream};

/// Largest sequence length for which the rank profile materialises `n x n`.
pub const RANK_PROFILE_MAX_N: usize = 512;
/// Largest sequence length for the error lab's full-attention reference.
pub const ERROR_LAB_MAX_N: usize = 256;
/// Slack allowed in `err_fused <= bound_sum`.
pub const TRIANGLE_SLACK: f64 = 1e-9;

/// Singular-value cutoff used to count numerical rank.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum TolPolicy {
    /// `σmax · max(rows, cols) · 2⁻⁵²`.
    #[default]
    Machine,
    /// `σmax · factor`.
    Relative(f64),
    Absolute(f64),
}

impl TolPolicy {
    pub fn tolerance(&self, sigma_max: f64, rows: usize, cols: usize) -> f64 {
        match *self {
            TolPolicy::Machine => sigma_max * rows.max(cols) as f64 * f64::EPSILON,
            TolPolicy::Relative(f) => sigma_max * f,
            TolPolicy::Absolute(t) => t,
        }
    }
}

/// Numerical rank of `m` and the tolerance it was counted against.
pub fn numerical_rank(m: &Matrix, policy: TolPolicy) -> (usize, f64) {
    let sv = m.singular_values();
    let sigma_max = sv.first().copied().unwrap_or(0.0);
    let tol = policy.tolerance(sigma_max, m.rows(), m.cols());
    (sv.iter().filter(|&&s| s > tol).count(), tol)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankRecord {
    pub layer: usize,
    pub head: usize,
    pub n: usize,
    pub d_p: usize,
    pub rank: usize,
    pub tol: f64,
}

/// Unnormalised kernelized attention `φ(Q')φ(K')ᵀ` for one head of
/// self-attention on `x`.
pub fn kernelized_matrix(x: &Matrix, w: &HeadWeights, map: &FeatureMap) -> Result<Matrix> {
    let phi_q = apply_feature_map(&project_query(x, &w.wq, map.scales_inputs())?, map)?;
    let phi_k = apply_feature_map(&x.matmul(&w.wk)?, map)?;
    phi_q.matmul(&phi_k.transpose())
}

/// Numerical rank of `φ(Q')φ(K')ᵀ` for every head of `layers` independently
/// initialised self-attention layers.
///
/// Each layer draws its own weights, inputs (N(0, input_std²)) and, for
/// random maps, its own feature projection; all of it derives from
/// `cfg.seed` and `spec.seed`.
pub fn kernelized_rank_profile(
    cfg: &AttentionConfig,
    spec: &FeatureMapSpec,
    layers: usize,
    tol_policy: TolPolicy,
    input_std: f64,
) -> Result<Vec<RankRecord>> {
    cfg.validate()?;
    if cfg.n > RANK_PROFILE_MAX_N {
        return config_err(format!(
            "rank profile materialises n x n; n = {} exceeds {RANK_PROFILE_MAX_N}",
            cfg.n
        ));
    }
    let d_p = spec.output_dim(cfg.d_head);
    let mut root = RngStream::new(cfg.seed);
    let mut map_seeds = RngStream::new(spec.seed);
    let mut records = Vec::with_capacity(layers * cfg.heads);
    for layer in 0..layers {
        let mut layer_rng = root.fork();
        let layer_cfg = cfg.with_seed(layer_rng.next_u64());
        let (heads, _) = sample_params(&layer_cfg, ProjectionMode::Practical)?;
        let x = sample_inputs(&mut layer_rng, cfg, input_std);
        let map = FeatureMapSpec {
            seed: map_seeds.next_u64(),
            ..*spec
        }
        .build(cfg.d_head)?;
        for (head, w) in heads.iter().enumerate() {
            let m = kernelized_matrix(&x, w, &map)?;
            let (rank, tol) = numerical_rank(&m, tol_policy);
            records.push(RankRecord {
                layer,
                head,
                n: cfg.n,
                d_p,
                rank,
                tol,
            });
        }
    }
    Ok(records)
}

/// How the error lab picks `E1`, `E2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProjectionChoice {
    /// `E1 = E2 = I`; requires `d_k = n`.
    Identity,
    Practical,
    Theorem {
        delta: f64,
    },
}

impl ProjectionChoice {
    pub fn label(&self) -> &'static str {
        match self {
            ProjectionChoice::Identity => "identity",
            ProjectionChoice::Practical => "practical",
            ProjectionChoice::Theorem { .. } => "theorem",
        }
    }
}

pub fn kernel_label(kind: KernelKind) -> &'static str {
    match kind {
        KernelKind::Prf { .. } => "prf",
        KernelKind::Elu => "elu",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRecord {
    pub trial: usize,
    pub n: usize,
    pub d_k: usize,
    pub m: usize,
    pub kernel: &'static str,
    pub proj_mode: &'static str,
    pub err_kernel_inf: f64,
    pub err_lowrank_inf: f64,
    pub err_fused_inf: f64,
    pub bound_sum: f64,
    /// `‖fused − low-rank‖∞`, the kernel half of `bound_sum`.
    #[serde(skip)]
    pub kernel_term: f64,
}

impl ErrorRecord {
    pub fn triangle_holds(&self) -> bool {
        self.err_fused_inf <= self.bound_sum + TRIANGLE_SLACK
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorExperiment {
    pub cfg: AttentionConfig,
    pub spec: FeatureMapSpec,
    pub projection: ProjectionChoice,
    pub trials: usize,
    pub seed: u64,
    pub input_std: f64,
}

/// Row-normalised `φ(Q')φ(K')ᵀ` with the same denominator floor as the
/// attention mechanisms.
pub fn implicit_attention(phi_q: &Matrix, phi_k: &Matrix) -> Result<Matrix> {
    let mut a = phi_q.matmul(&phi_k.transpose())?;
    for i in 0..a.rows() {
        let s: f64 = a.row(i).iter().sum();
        let d = if s >= DENOMINATOR_FLOOR {
            s
        } else {
            DENOMINATOR_FLOOR
        };
        for x in a.row_mut(i) {
            *x /= d;
        }
    }
    Ok(a)
}

/// `softmax(Q'K'ᵀ / sqrt(d_head))` for one head.
pub fn softmax_attention_matrix(q: &Matrix, k: &Matrix, w: &HeadWeights) -> Result<Matrix> {
    let qp = project_query(q, &w.wq, true)?;
    let kp = k.matmul(&w.wk)?;
    Ok(qp.matmul(&kp.transpose())?.row_softmax())
}

/// Largest `‖Â_h − A_h‖∞` over heads, comparing the materialised kernelized
/// attention against softmax attention.
pub fn kernel_matrix_error(q: &Matrix, k: &Matrix, heads: &[HeadWeights], map: &FeatureMap) -> Result<f64> {
    let mut worst = 0.0f64;
    for w in heads {
        let phi_q = apply_feature_map(&project_query(q, &w.wq, map.scales_inputs())?, map)?;
        let phi_k = apply_feature_map(&k.matmul(&w.wk)?, map)?;
        let a_hat = implicit_attention(&phi_q, &phi_k)?;
        let a = softmax_attention_matrix(q, k, w)?;
        worst = worst.max(a_hat.sub(&a)?.norm_inf());
    }
    Ok(worst)
}

/// Runs `trials` independent instances and records the decomposed errors of
/// the fused mechanism against full softmax attention.
///
/// Every record satisfies `err_fused <= bound_sum + 1e-9`; a violation is
/// reported as an error.
pub fn error_bound_experiment(exp: &ErrorExperiment) -> Result<Vec<ErrorRecord>> {
    let cfg = exp.cfg;
    cfg.validate()?;
    if cfg.n > ERROR_LAB_MAX_N {
        return config_err(format!(
            "error lab needs a full-attention reference; n = {} exceeds {ERROR_LAB_MAX_N}",
            cfg.n
        ));
    }
    if exp.projection == ProjectionChoice::Identity && cfg.d_k != cfg.n {
        return config_err(format!(
            "identity projections need d_k = n, got d_k = {} and n = {}",
            cfg.d_k, cfg.n
        ));
    }
    let m = exp.spec.output_dim(cfg.d_head);
    let mut root = RngStream::new(exp.seed);
    let mut records = Vec::with_capacity(exp.trials);
    for trial in 0..exp.trials {
        let mut rng = root.fork();
        let trial_cfg = cfg.with_seed(rng.next_u64());
        let (heads, practical) = sample_params(&trial_cfg, ProjectionMode::Practical)?;
        let proj = match exp.projection {
            ProjectionChoice::Identity => LowRankProjections::identity(cfg.n),
            ProjectionChoice::Practical => practical,
            ProjectionChoice::Theorem { delta } => {
                make_theorem_projections(cfg.n, cfg.d_k, delta, rng.next_u64())?
            }
        };
        let map = FeatureMapSpec {
            seed: rng.next_u64(),
            ..exp.spec
        }
        .build(cfg.d_head)?;
        let q = sample_inputs(&mut rng, &cfg, exp.input_std);
        let k = sample_inputs(&mut rng, &cfg, exp.input_std);
        let v = sample_inputs(&mut rng, &cfg, exp.input_std);

        let full = full_attention(&q, &k, &v, &heads, &cfg)?;
        let lin = linformer_attention(&q, &k, &v, &heads, &proj, &cfg)?;
        let fused = flurka_attention(&q, &k, &v, &heads, &proj, &map, &cfg)?.output;

        let err_lowrank = lin.sub(&full)?.norm_inf();
        let kernel_term = fused.sub(&lin)?.norm_inf();
        let record = ErrorRecord {
            trial,
            n: cfg.n,
            d_k: cfg.d_k,
            m,
            kernel: kernel_label(exp.spec.kind),
            proj_mode: exp.projection.label(),
            err_kernel_inf: kernel_matrix_error(&q, &k, &heads, &map)?,
            err_lowrank_inf: err_lowrank,
            err_fused_inf: fused.sub(&full)?.norm_inf(),
            bound_sum: kernel_term + err_lowrank,
            kernel_term,
        };
        if !record.triangle_holds() {
            return Err(crate::Error::Assertion(format!(
                "trial {trial}: err_fused {} exceeds bound_sum {}",
                record.err_fused_inf, record.bound_sum
            )));
        }
        records.push(record);
    }
    Ok(records)
}

/// Median of a slice; `NaN` for an empty one.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairStat {
    pub pair: usize,
    pub dot: f64,
    pub target: f64,
    pub mean: f64,
    pub std_error: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnbiasednessReport {
    /// `false` for deterministic maps, which do not estimate `exp(xᵀy)`.
    pub applicable: bool,
    pub features: usize,
    pub seeds: usize,
    pub pairs: Vec<PairStat>,
    pub max_abs_z: f64,
}

/// `count` probe pairs in `d_h` dimensions with norms uniform in `[0, max_norm]`.
pub fn random_probe_pairs(d_h: usize, count: usize, max_norm: f64, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = RngStream::new(seed);
    let draw = |rng: &mut RngStream| {
        let g = Matrix::gaussian(rng, 1, d_h, 1.0).into_vec();
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        let r = max_norm * rng.next_f64();
        g.into_iter().map(|x| x * r / norm).collect::<Vec<_>>()
    };
    (0..count)
        .map(|_| {
            let x = draw(&mut rng);
            let y = draw(&mut rng);
            (x, y)
        })
        .collect()
}

/// Sample mean of `φ(x)ᵀφ(y)` over `seeds` independent feature draws, its
/// standard error and the z-score against `exp(xᵀy)`, for every pair.
pub fn unbiasedness_report(
    pairs: &[(Vec<f64>, Vec<f64>)],
    kind: KernelKind,
    seeds: usize,
    seed: u64,
) -> Result<UnbiasednessReport> {
    let KernelKind::Prf { features } = kind else {
        return Ok(UnbiasednessReport {
            applicable: false,
            features: 0,
            seeds,
            pairs: Vec::new(),
            max_abs_z: 0.0,
        });
    };
    if seeds < 2 {
        return config_err("unbiasedness needs at least two seeds");
    }
    let Some(d_h) = pairs.first().map(|p| p.0.len()) else {
        return config_err("no probe pairs");
    };
    if pairs.iter().any(|(x, y)| x.len() != d_h || y.len() != d_h) {
        return config_err("probe pairs must share one dimension");
    }
    let xs = Matrix::from_rows(&pairs.iter().map(|p| p.0.clone()).collect::<Vec<_>>())?;
    let ys = Matrix::from_rows(&pairs.iter().map(|p| p.1.clone()).collect::<Vec<_>>())?;
    let mut samples = vec![Vec::with_capacity(seeds); pairs.len()];
    let mut seed_rng = RngStream::new(seed);
    for _ in 0..seeds {
        let map = FeatureMapSpec::prf(features, seed_rng.next_u64()).build(d_h)?;
        let px = apply_feature_map(&xs, &map)?;
        let py = apply_feature_map(&ys, &map)?;
        for (i, s) in samples.iter_mut().enumerate() {
            s.push(px.row(i).iter().zip(py.row(i)).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    let mut stats = Vec::with_capacity(pairs.len());
    for (i, ((x, y), s)) in pairs.iter().zip(&samples).enumerate() {
        let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let target = dot.exp();
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std_error = (var / n).sqrt();
        let diff = mean - target;
        let z = if std_error > 0.0 {
            diff / std_error
        } else if diff.abs() <= 1e-12 * target {
            0.0
        } else {
            f64::INFINITY.copysign(diff)
        };
        stats.push(PairStat {
            pair: i,
            dot,
            target,
            mean,
            std_error,
            z,
        });
    }
    let max_abs_z = stats.iter().map(|p| p.z.abs()).fold(0.0, f64::max);
    Ok(UnbiasednessReport {
        applicable: true,
        features,
        seeds,
        pairs: stats,
        max_abs_z,
    })
}

/// [`unbiasedness_report`] on `pairs` random probes with norms up to 1.
pub fn unbiasedness_test(
    d_h: usize,
    kind: KernelKind,
    pairs: usize,
    seeds: usize,
    seed: u64,
) -> Result<UnbiasednessReport> {
    let probes = random_probe_pairs(d_h, pairs, 1.0, seed);
    unbiasedness_report(&probes, kind, seeds, seed.wrapping_add(1))
}
