use crate::attention::{apply_feature_map, AttentionConfig, FeatureMap, HeadWeights, LowRankProjections};
use crate::error::{config_err, Result};
use crate::tensor::Matrix;

/// Lower clamp on kernel normalisers.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

// Full attention materialises scores for this many query rows at a time.
const FULL_ROW_BLOCK: usize = 256;

/// Output of a kernelized mechanism together with its numerical warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub output: Matrix,
    /// Some normaliser fell below [`DENOMINATOR_FLOOR`] and was clamped.
    pub clamped: bool,
}

pub(crate) fn check_inputs(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    heads: &[HeadWeights],
    cfg: &AttentionConfig,
) -> Result<()> {
    cfg.validate()?;
    let want = (cfg.n, cfg.d_model);
    for (name, m) in [("q", q), ("k", k), ("v", v)] {
        if m.shape() != want {
            return config_err(format!(
                "{name} is {}x{}, expected {}x{}",
                m.rows(),
                m.cols(),
                want.0,
                want.1
            ));
        }
    }
    if heads.len() != cfg.heads {
        return config_err(format!("{} head weights for {} heads", heads.len(), cfg.heads));
    }
    let w = (cfg.d_model, cfg.d_head);
    for (h, hw) in heads.iter().enumerate() {
        for (name, m) in [("wq", &hw.wq), ("wk", &hw.wk), ("wv", &hw.wv)] {
            if m.shape() != w {
                return config_err(format!(
                    "head {h} {name} is {}x{}, expected {}x{}",
                    m.rows(),
                    m.cols(),
                    w.0,
                    w.1
                ));
            }
        }
    }
    Ok(())
}

pub(crate) fn check_projections(proj: &LowRankProjections, cfg: &AttentionConfig) -> Result<()> {
    let want = (cfg.d_k, cfg.n);
    for (name, m) in [("e1", &proj.e1), ("e2", &proj.e2)] {
        if m.shape() != want {
            return config_err(format!(
                "{name} is {}x{}, expected {}x{}",
                m.rows(),
                m.cols(),
                want.0,
                want.1
            ));
        }
    }
    Ok(())
}

pub(crate) fn check_map(map: &FeatureMap, cfg: &AttentionConfig) -> Result<()> {
    if map.d_head() != cfg.d_head {
        return config_err(format!(
            "feature map built for d_head {} but config has {}",
            map.d_head(),
            cfg.d_head
        ));
    }
    Ok(())
}

/// `x · w`, multiplied by `1/sqrt(d_head)` when `scale` is set.
pub(crate) fn project_query(x: &Matrix, w: &Matrix, scale: bool) -> Result<Matrix> {
    let p = x.matmul(w)?;
    Ok(if scale {
        p.scale(1.0 / (w.cols() as f64).sqrt())
    } else {
        p
    })
}

/// One input projected through every head's weights with a single product.
pub(crate) struct Projected {
    all: Matrix,
    d_head: usize,
}

impl Projected {
    pub(crate) fn head(&self, h: usize) -> Matrix {
        self.all.columns(h * self.d_head..(h + 1) * self.d_head)
    }

    /// `lhs` times every head's block at once.
    pub(crate) fn left_mul(&self, lhs: &Matrix) -> Result<Projected> {
        Ok(Projected {
            all: lhs.matmul(&self.all)?,
            d_head: self.d_head,
        })
    }
}

/// `x · [W_1 | ... | W_H]`, scaled by `1/sqrt(d_head)` when `scale` is set.
/// Entry-for-entry identical to projecting head by head.
pub(crate) fn project_heads(
    x: &Matrix,
    heads: &[HeadWeights],
    pick: impl Fn(&HeadWeights) -> &Matrix,
    scale: bool,
) -> Result<Projected> {
    let blocks: Vec<Matrix> = heads.iter().map(|w| pick(w).clone()).collect();
    let d_head = blocks[0].cols();
    let mut all = x.matmul(&Matrix::hconcat(&blocks)?)?;
    if scale {
        let s = 1.0 / (d_head as f64).sqrt();
        all.data_mut().iter_mut().for_each(|v| *v *= s);
    }
    Ok(Projected { all, d_head })
}

/// Normalised kernel attention for one head, contracted right to left:
/// `φ(Q')(φ(K')ᵀV') / φ(Q')(φ(K')ᵀ1)`. Never forms the query-by-key matrix.
pub(crate) fn kernel_head(phi_q: &Matrix, phi_k: &Matrix, v: &Matrix) -> Result<(Matrix, bool)> {
    let phi_k_t = phi_k.transpose();
    let kv = phi_k_t.matmul(v)?;
    let ones = Matrix::filled(phi_k.rows(), 1, 1.0);
    let k_sum = phi_k_t.matmul(&ones)?;
    let mut out = phi_q.matmul(&kv)?;
    let den = phi_q.matmul(&k_sum)?;
    let mut clamped = false;
    for i in 0..out.rows() {
        let mut d = den.get(i, 0);
        if !(d >= DENOMINATOR_FLOOR) {
            d = DENOMINATOR_FLOOR;
            clamped = true;
        }
        for x in out.row_mut(i) {
            *x /= d;
        }
    }
    Ok((out, clamped))
}

/// Softmax attention for one head given the already-scaled query projection.
fn softmax_head(q_scaled: &Matrix, k_proj: &Matrix, v_proj: &Matrix) -> Result<Matrix> {
    let k_t = k_proj.transpose();
    let n = q_scaled.rows();
    let mut out = Matrix::zeros(n, v_proj.cols());
    for start in (0..n).step_by(FULL_ROW_BLOCK) {
        let end = (start + FULL_ROW_BLOCK).min(n);
        let mut scores = q_scaled.row_block(start..end).matmul(&k_t)?;
        scores.row_softmax_in_place();
        out.set_block(start, 0, &scores.matmul(v_proj)?);
    }
    Ok(out)
}

/// Multi-head softmax attention: per head
/// `softmax(QW^Q (KW^K)ᵀ / sqrt(d_head)) · VW^V`, heads concatenated.
pub fn full_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    heads: &[HeadWeights],
    cfg: &AttentionConfig,
) -> Result<Matrix> {
    check_inputs(q, k, v, heads, cfg)?;
    let qp = project_heads(q, heads, |w| &w.wq, true)?;
    let kp = project_heads(k, heads, |w| &w.wk, false)?;
    let vp = project_heads(v, heads, |w| &w.wv, false)?;
    let mut out = Matrix::zeros(cfg.n, cfg.d_model);
    for h in 0..heads.len() {
        out.set_block(
            0,
            h * cfg.d_head,
            &softmax_head(&qp.head(h), &kp.head(h), &vp.head(h))?,
        );
    }
    Ok(out)
}

/// Low-rank attention: keys and values are contracted to `d_k` rows by `E1`
/// and `E2` before projection, then per head
/// `softmax(Q' (E1 K W^K)ᵀ / sqrt(d_head)) · E2 V W^V`.
pub fn linformer_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    heads: &[HeadWeights],
    proj: &LowRankProjections,
    cfg: &AttentionConfig,
) -> Result<Matrix> {
    check_inputs(q, k, v, heads, cfg)?;
    check_projections(proj, cfg)?;
    let k_c = proj.e1.matmul(k)?;
    let v_c = proj.e2.matmul(v)?;
    let qp = project_heads(q, heads, |w| &w.wq, true)?;
    let kp = project_heads(&k_c, heads, |w| &w.wk, false)?;
    let vp = project_heads(&v_c, heads, |w| &w.wv, false)?;
    let mut out = Matrix::zeros(cfg.n, cfg.d_model);
    for h in 0..heads.len() {
        out.set_block(
            0,
            h * cfg.d_head,
            &softmax_head(&qp.head(h), &kp.head(h), &vp.head(h))?,
        );
    }
    Ok(out)
}

/// Kernelized attention `φ(Q')(φ(K')ᵀV')`, row-normalised, heads
/// concatenated.
pub fn kernel_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    heads: &[HeadWeights],
    map: &FeatureMap,
    cfg: &AttentionConfig,
) -> Result<AttentionOutput> {
    check_inputs(q, k, v, heads, cfg)?;
    check_map(map, cfg)?;
    let qp = project_heads(q, heads, |w| &w.wq, map.scales_inputs())?;
    let kp = project_heads(k, heads, |w| &w.wk, false)?;
    let vp = project_heads(v, heads, |w| &w.wv, false)?;
    let mut out = Matrix::zeros(cfg.n, cfg.d_model);
    let mut clamped = false;
    for h in 0..heads.len() {
        let phi_q = apply_feature_map(&qp.head(h), map)?;
        let phi_k = apply_feature_map(&kp.head(h), map)?;
        let (head, c) = kernel_head(&phi_q, &phi_k, &vp.head(h))?;
        clamped |= c;
        out.set_block(0, h * cfg.d_head, &head);
    }
    Ok(AttentionOutput { output: out, clamped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{sample_params, FeatureMapSpec, ProjectionMode};
    use crate::tensor::RngStream;

    struct Instance {
        cfg: AttentionConfig,
        q: Matrix,
        k: Matrix,
        v: Matrix,
        heads: Vec<HeadWeights>,
        proj: LowRankProjections,
    }

    fn instance(n: usize, d_head: usize, heads: usize, d_k: usize, seed: u64, std: f64) -> Instance {
        let cfg = AttentionConfig::new(n, d_head, heads, d_k, seed).unwrap();
        let (hw, proj) = sample_params(&cfg, ProjectionMode::Practical).unwrap();
        let mut rng = RngStream::new(seed ^ 0xabcdef);
        let q = Matrix::gaussian(&mut rng, n, cfg.d_model, std);
        let k = Matrix::gaussian(&mut rng, n, cfg.d_model, std);
        let v = Matrix::gaussian(&mut rng, n, cfg.d_model, std);
        Instance {
            cfg,
            q,
            k,
            v,
            heads: hw,
            proj,
        }
    }

    fn dot_col(x: &Matrix, i: usize, w: &Matrix, c: usize) -> f64 {
        (0..x.cols()).map(|t| x.get(i, t) * w.get(t, c)).sum()
    }

    /// Scalar oracle: every weight computed from explicit dot products.
    /// `keys`/`values` are the (possibly contracted) key and value inputs.
    fn scalar_softmax_oracle(q: &Matrix, keys: &Matrix, values: &Matrix, heads: &[HeadWeights]) -> Matrix {
        let d_head = heads[0].wq.cols();
        let n = q.rows();
        let m = keys.rows();
        let mut out = Matrix::zeros(n, d_head * heads.len());
        for (h, w) in heads.iter().enumerate() {
            for i in 0..n {
                let qi: Vec<f64> = (0..d_head).map(|c| dot_col(q, i, &w.wq, c)).collect();
                let logits: Vec<f64> = (0..m)
                    .map(|j| {
                        (0..d_head)
                            .map(|c| qi[c] * dot_col(keys, j, &w.wk, c))
                            .sum::<f64>()
                            / (d_head as f64).sqrt()
                    })
                    .collect();
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in 0..d_head {
                    let s: f64 = (0..m).map(|j| e[j] / z * dot_col(values, j, &w.wv, c)).sum();
                    out.set(i, h * d_head + c, s);
                }
            }
        }
        out
    }

    fn max_diff(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).unwrap().max_abs()
    }

    #[test]
    fn full_matches_scalar_oracle() {
        let t = instance(6, 2, 2, 3, 5, 1.0);
        let out = full_attention(&t.q, &t.k, &t.v, &t.heads, &t.cfg).unwrap();
        let oracle = scalar_softmax_oracle(&t.q, &t.k, &t.v, &t.heads);
        assert!(max_diff(&out, &oracle) < 1e-12);
    }

    #[test]
    fn full_with_zero_queries_and_keys_averages_values() {
        let t = instance(7, 3, 2, 3, 8, 1.0);
        let zero = Matrix::zeros(7, 6);
        let out = full_attention(&zero, &zero, &t.v, &t.heads, &t.cfg).unwrap();
        for (h, w) in t.heads.iter().enumerate() {
            let vp = t.v.matmul(&w.wv).unwrap();
            let mean: Vec<f64> = vp.column_sums().iter().map(|s| s / 7.0).collect();
            for i in 0..7 {
                for (c, m) in mean.iter().enumerate() {
                    assert!((out.get(i, h * 3 + c) - m).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn full_with_single_token_returns_values() {
        let t = instance(1, 2, 3, 1, 4, 1.0);
        let out = full_attention(&t.q, &t.k, &t.v, &t.heads, &t.cfg).unwrap();
        let parts: Vec<Matrix> = t.heads.iter().map(|w| t.v.matmul(&w.wv).unwrap()).collect();
        assert!(max_diff(&out, &Matrix::hconcat(&parts).unwrap()) < 1e-15);
    }

    #[test]
    fn full_is_permutation_equivariant_in_queries() {
        let t = instance(9, 2, 2, 3, 13, 1.0);
        let perm = [3usize, 0, 8, 1, 5, 7, 2, 6, 4];
        let mut qp = Matrix::zeros(9, 4);
        for (dst, &src) in perm.iter().enumerate() {
            qp.row_mut(dst).copy_from_slice(t.q.row(src));
        }
        let a = full_attention(&t.q, &t.k, &t.v, &t.heads, &t.cfg).unwrap();
        let b = full_attention(&qp, &t.k, &t.v, &t.heads, &t.cfg).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            assert_eq!(b.row(dst), a.row(src));
        }
    }

    #[test]
    fn full_handles_more_rows_than_one_block() {
        let t = instance(300, 2, 1, 3, 21, 1.0);
        let out = full_attention(&t.q, &t.k, &t.v, &t.heads, &t.cfg).unwrap();
        let oracle = scalar_softmax_oracle(&t.q, &t.k, &t.v, &t.heads);
        assert!(max_diff(&out, &oracle) < 1e-12);
    }

    #[test]
    fn linformer_matches_scalar_oracle() {
        let t = instance(8, 2, 2, 3, 17, 1.0);
        let out = linformer_attention(&t.q, &t.k, &t.v, &t.heads, &t.proj, &t.cfg).unwrap();
        let kc = t.proj.e1.matmul(&t.k).unwrap();
        let vc = t.proj.e2.matmul(&t.v).unwrap();
        let oracle = scalar_softmax_oracle(&t.q, &kc, &vc, &t.heads);
        assert!(max_diff(&out, &oracle) < 1e-12);
    }

    #[test]
    fn linformer_with_identity_projection_is_full() {
        let t = instance(10, 3, 2, 10, 23, 1.0);
        let id = LowRankProjections::identity(10);
        let a = linformer_attention(&t.q, &t.k, &t.v, &t.heads, &id, &t.cfg).unwrap();
        let b = full_attention(&t.q, &t.k, &t.v, &t.heads, &t.cfg).unwrap();
        assert!(max_diff(&a, &b) <= 1e-12);
    }

    #[test]
    fn linformer_single_slot_broadcasts_contracted_value() {
        let t = instance(5, 2, 2, 1, 29, 1.0);
        let out = linformer_attention(&t.q, &t.k, &t.v, &t.heads, &t.proj, &t.cfg).unwrap();
        let vc = t.proj.e2.matmul(&t.v).unwrap();
        let parts: Vec<Matrix> = t.heads.iter().map(|w| vc.matmul(&w.wv).unwrap()).collect();
        let expect = Matrix::hconcat(&parts).unwrap();
        for i in 0..5 {
            for (a, b) in out.row(i).iter().zip(expect.row(0)) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let t = instance(5, 2, 2, 2, 1, 1.0);
        let bad = Matrix::zeros(4, 4);
        assert!(full_attention(&bad, &t.k, &t.v, &t.heads, &t.cfg).is_err());
        assert!(full_attention(&t.q, &t.k, &t.v, &t.heads[..1], &t.cfg).is_err());
        let wrong = LowRankProjections::identity(5);
        assert!(linformer_attention(&t.q, &t.k, &t.v, &t.heads, &wrong, &t.cfg).is_err());
        let map = FeatureMapSpec::elu().build(3).unwrap();
        assert!(kernel_attention(&t.q, &t.k, &t.v, &t.heads, &map, &t.cfg).is_err());
    }

    /// Materialises the n x n kernelized attention, normalises and multiplies.
    fn explicit_kernel(t: &Instance, map: &FeatureMap) -> (Matrix, Vec<Matrix>) {
        let mut parts = Vec::new();
        let mut attn = Vec::new();
        for w in &t.heads {
            let qp = project_query(&t.q, &w.wq, map.scales_inputs()).unwrap();
            let pq = apply_feature_map(&qp, map).unwrap();
            let pk = apply_feature_map(&t.k.matmul(&w.wk).unwrap(), map).unwrap();
            let mut a = pq.matmul(&pk.transpose()).unwrap();
            for i in 0..a.rows() {
                let s: f64 = a.row(i).iter().sum();
                a.row_mut(i).iter_mut().for_each(|x| *x /= s);
            }
            parts.push(a.matmul(&t.v.matmul(&w.wv).unwrap()).unwrap());
            attn.push(a);
        }
        (Matrix::hconcat(&parts).unwrap(), attn)
    }

    #[test]
    fn kernel_contraction_order_is_irrelevant() {
        let t = instance(12, 4, 2, 3, 31, 0.7);
        for spec in [FeatureMapSpec::prf(16, 9), FeatureMapSpec::elu()] {
            let map = spec.build(4).unwrap();
            let out = kernel_attention(&t.q, &t.k, &t.v, &t.heads, &map, &t.cfg).unwrap();
            assert!(!out.clamped);
            let (oracle, attn) = explicit_kernel(&t, &map);
            assert!(max_diff(&out.output, &oracle) < 1e-10);
            for a in attn {
                assert!(a.data().iter().all(|&x| x >= 0.0));
                for s in a.row_sums() {
                    assert!((s - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn kernel_with_zero_queries_and_keys_averages_values() {
        let t = instance(6, 2, 2, 3, 37, 1.0);
        let zero = Matrix::zeros(6, 4);
        let map = FeatureMapSpec::prf(8, 2).build(2).unwrap();
        let out = kernel_attention(&zero, &zero, &t.v, &t.heads, &map, &t.cfg).unwrap();
        for (h, w) in t.heads.iter().enumerate() {
            let vp = t.v.matmul(&w.wv).unwrap();
            let mean: Vec<f64> = vp.column_sums().iter().map(|s| s / 6.0).collect();
            for i in 0..6 {
                for (c, m) in mean.iter().enumerate() {
                    assert!((out.output.get(i, h * 2 + c) - m).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn kernel_clamp_is_flagged() {
        let t = instance(4, 2, 1, 2, 3, 1.0);
        let map = FeatureMapSpec::prf(4, 0).build(2).unwrap();
        // Enormous keys make every PRF feature underflow to zero.
        let k = t.k.scale(1e6);
        let out = kernel_attention(&t.q, &k, &t.v, &t.heads, &map, &t.cfg).unwrap();
        assert!(out.clamped);
        assert!(out.output.is_finite());
    }

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    #[test]
    fn kernel_error_shrinks_with_more_features() {
        let t = instance(64, 8, 1, 8, 41, 0.5);
        let softmax_attn = |w: &HeadWeights| {
            let qp = project_query(&t.q, &w.wq, true).unwrap();
            let kp = t.k.matmul(&w.wk).unwrap();
            qp.matmul(&kp.transpose()).unwrap().row_softmax()
        };
        let exact = softmax_attn(&t.heads[0]);
        let err = |m: usize, seed: u64| {
            let map = FeatureMapSpec::prf(m, seed).build(8).unwrap();
            let (_, attn) = explicit_kernel(&t, &map);
            attn[0].sub(&exact).unwrap().norm_inf()
        };
        let small = median((0..20).map(|s| err(32, s)).collect());
        let large = median((0..20).map(|s| err(2048, 100 + s)).collect());
        assert!(large < small, "m=2048 median {large} vs m=32 median {small}");
    }
}
