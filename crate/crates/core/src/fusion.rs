//! Fused low-rank and kernel attention.
//!
//! The optimised construction contracts keys and values to `d_k` rows first
//! and only then applies the projections and the feature map:
//! `φ(QW^Q) · (φ((E1 K) W^K)ᵀ · (E2 V) W^V)`, row-normalised. Feature maps on
//! the key side therefore run over `d_k` rows instead of `n`.
//!
//! The naive construction kernelizes first and contracts afterwards,
//! `φ(QW^Q) · ((E1 φ(KW^K))ᵀ · (E2 VW^V))`. A transpose on `E1 φ(KW^K)` is
//! needed for the product to be well formed.

use crate::attention::{
    apply_feature_map, check_inputs, check_map, check_projections, kernel_head, project_heads,
    AttentionConfig, AttentionOutput, FeatureMap, FeatureMapSpec, HeadWeights, KernelKind,
    LowRankProjections, ModelKind, ModelParams, ProjectionMode,
};
use crate::error::{config_err, Error, Result};
use crate::tensor::{Matrix, RngStream};

/// Default δ for theorem-mode projections.
pub const DEFAULT_DELTA: f64 = 0.1;

pub fn flurka_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    heads: &[HeadWeights],
    proj: &LowRankProjections,
    map: &FeatureMap,
    cfg: &AttentionConfig,
) -> Result<AttentionOutput> {
    check_inputs(q, k, v, heads, cfg)?;
    check_projections(proj, cfg)?;
    check_map(map, cfg)?;
    // d_k x d_model; everything on the key/value side stays d_k rows long.
    let k_c = proj.e1.matmul(k)?;
    let v_c = proj.e2.matmul(v)?;
    let qp = project_heads(q, heads, |w| &w.wq, map.scales_inputs())?;
    let kp = project_heads(&k_c, heads, |w| &w.wk, false)?;
    let vp = project_heads(&v_c, heads, |w| &w.wv, false)?;
    let mut out = Matrix::zeros(cfg.n, cfg.d_model);
    let mut clamped = false;
    for h in 0..heads.len() {
        let phi_q = apply_feature_map(&qp.head(h), map)?;
        let phi_k = apply_feature_map(&kp.head(h), map)?;
        debug_assert_eq!(phi_k.rows(), cfg.d_k);
        let (head, c) = kernel_head(&phi_q, &phi_k, &vp.head(h))?;
        clamped |= c;
        out.set_block(0, h * cfg.d_head, &head);
    }
    Ok(AttentionOutput { output: out, clamped })
}

pub fn flurka_naive_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    heads: &[HeadWeights],
    proj: &LowRankProjections,
    map: &FeatureMap,
    cfg: &AttentionConfig,
) -> Result<AttentionOutput> {
    check_inputs(q, k, v, heads, cfg)?;
    check_projections(proj, cfg)?;
    check_map(map, cfg)?;
    let qp = project_heads(q, heads, |w| &w.wq, map.scales_inputs())?;
    let kp = project_heads(k, heads, |w| &w.wk, false)?;
    let vp_c = project_heads(v, heads, |w| &w.wv, false)?.left_mul(&proj.e2)?;
    let mut out = Matrix::zeros(cfg.n, cfg.d_model);
    let mut clamped = false;
    for h in 0..heads.len() {
        let phi_q = apply_feature_map(&qp.head(h), map)?;
        let phi_k_c = proj.e1.matmul(&apply_feature_map(&kp.head(h), map)?)?;
        let (head, c) = kernel_head(&phi_q, &phi_k_c, &vp_c.head(h))?;
        clamped |= c;
        out.set_block(0, h * cfg.d_head, &head);
    }
    Ok(AttentionOutput { output: out, clamped })
}

/// Projections `E1 = δR`, `E2 = e^{-δ}R` sharing one `R` with N(0, 1/k)
/// entries. `R` is drawn `n x k` and stored transposed as `k x n`.
pub fn make_theorem_projections(n: usize, k_dim: usize, delta: f64, seed: u64) -> Result<LowRankProjections> {
    if !(delta > 0.0) {
        return config_err(format!("delta must be positive, got {delta}"));
    }
    if n == 0 || k_dim == 0 {
        return config_err(format!(
            "projection dimensions must be positive, got n={n}, k={k_dim}"
        ));
    }
    Ok(LowRankProjections::sample(
        &mut RngStream::new(seed),
        n,
        k_dim,
        ProjectionMode::Theorem { delta },
    ))
}

/// Projection width `ceil(5 ln d / gap)` where `gap = ε₂² − ε₃²` from the
/// low-rank approximation guarantee.
pub fn theorem_projection_dim(d: usize, gap: f64) -> Result<usize> {
    if !(gap > 0.0) || d == 0 {
        return config_err(format!(
            "need d >= 1 and a positive epsilon gap (d={d}, gap={gap})"
        ));
    }
    Ok((5.0 * (d as f64).ln() / gap).ceil().max(1.0) as usize)
}

fn transfer_err<T>(msg: String) -> Result<T> {
    Err(Error::Transfer(msg))
}

fn check_transfer_weights(base: &ModelParams, cfg: &AttentionConfig) -> Result<()> {
    let want = (cfg.d_model, cfg.d_head);
    for (h, w) in base.heads.iter().enumerate() {
        for (name, m) in [("wq", &w.wq), ("wk", &w.wk), ("wv", &w.wv)] {
            if m.shape() != want {
                return transfer_err(format!(
                    "head {h} {name} is {}x{} but d_model x d_head is {}x{}",
                    m.rows(),
                    m.cols(),
                    want.0,
                    want.1
                ));
            }
        }
    }
    if base.heads.len() != cfg.heads {
        return transfer_err(format!(
            "base has {} heads, target expects {}",
            base.heads.len(),
            cfg.heads
        ));
    }
    Ok(())
}

/// Initialises fused-model parameters from a trained low-rank or kernel base.
///
/// A low-rank base keeps its weights and projections and gets a fresh feature
/// map of kind `kernel` seeded from `cfg.seed`. A kernel base keeps its weights
/// and feature map and gets fresh practical-mode projections from `cfg.seed`.
pub fn uptrain_transfer(
    base: &ModelParams,
    cfg: &AttentionConfig,
    kernel: KernelKind,
) -> Result<ModelParams> {
    cfg.validate()?;
    check_transfer_weights(base, cfg)?;
    let mut rng = RngStream::new(cfg.seed);
    let (projections, feature_map) = match base.kind {
        ModelKind::LowRank => {
            let Some(p) = &base.projections else {
                return transfer_err("low-rank base has no projections".into());
            };
            if p.e1.shape() != (cfg.d_k, cfg.n) || p.e2.shape() != (cfg.d_k, cfg.n) {
                return transfer_err(format!(
                    "base projections are {}x{} / {}x{} but d_k x n is {}x{}",
                    p.e1.rows(),
                    p.e1.cols(),
                    p.e2.rows(),
                    p.e2.cols(),
                    cfg.d_k,
                    cfg.n
                ));
            }
            let spec = FeatureMapSpec {
                kind: kernel,
                seed: rng.next_u64(),
                scale_inputs: true,
            };
            (p.clone(), spec)
        }
        ModelKind::Kernel => {
            let Some(spec) = base.feature_map else {
                return transfer_err("kernel base has no feature map".into());
            };
            let mut proj_rng = rng.fork();
            let p = LowRankProjections::sample(&mut proj_rng, cfg.n, cfg.d_k, ProjectionMode::Practical);
            (p, spec)
        }
        other => {
            return transfer_err(format!(
                "up-training starts from a low-rank or kernel base, not {other:?}"
            ));
        }
    };
    // Fails early if the feature map cannot be built for these dimensions.
    feature_map
        .build(cfg.d_head)
        .map_err(|e| Error::Transfer(format!("feature map incompatible with d_head: {e}")))?;
    Ok(ModelParams {
        kind: ModelKind::Flurka,
        heads: base.heads.clone(),
        projections: Some(projections),
        feature_map: Some(feature_map),
    })
}
