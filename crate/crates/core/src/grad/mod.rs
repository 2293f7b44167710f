//! Reverse-mode derivatives of the attention mechanisms.
//!
//! `E1`, `E2` and the feature-map projection are treated as constants unless
//! projection gradients are requested explicitly.

mod check;
mod train;

pub use check::{gradient_check, relative_error, GradCheckConfig, GradCheckReport, FD_STEP, GRAD_TOLERANCE};
pub use train::{toy_train, TaskSpec, TrainConfig, TrainReport, Uptrain};

use crate::attention::{
    apply_feature_map, check_inputs, check_map, check_projections, flush_subnormal, full_attention,
    kernel_attention, linformer_attention, AttentionConfig, FeatureMap, HeadWeights, LowRankProjections,
    ModelKind, DENOMINATOR_FLOOR,
};
use crate::error::{config_err, Result};
use crate::fusion::flurka_attention;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub heads: Vec<HeadGradients>,
    /// Present only when projection gradients were requested.
    pub e1: Option<Matrix>,
    pub e2: Option<Matrix>,
}

/// One attention layer of a given kind, borrowing its parameters.
#[derive(Debug, Clone, Copy)]
pub struct AttentionLayer<'a> {
    pub kind: ModelKind,
    pub heads: &'a [HeadWeights],
    pub proj: Option<&'a LowRankProjections>,
    pub map: Option<&'a FeatureMap>,
}

impl<'a> AttentionLayer<'a> {
    fn contracted(&self) -> bool {
        matches!(self.kind, ModelKind::LowRank | ModelKind::Flurka)
    }

    fn kernelized(&self) -> bool {
        matches!(self.kind, ModelKind::Kernel | ModelKind::Flurka)
    }

    fn parts(&self) -> Result<(Option<&'a LowRankProjections>, Option<&'a FeatureMap>)> {
        let proj = match (self.contracted(), self.proj) {
            (true, None) => return config_err(format!("{:?} attention needs projections", self.kind)),
            (true, p) => p,
            (false, _) => None,
        };
        let map = match (self.kernelized(), self.map) {
            (true, None) => return config_err(format!("{:?} attention needs a feature map", self.kind)),
            (true, m) => m,
            (false, _) => None,
        };
        Ok((proj, map))
    }

    pub fn forward(&self, q: &Matrix, k: &Matrix, v: &Matrix, cfg: &AttentionConfig) -> Result<Matrix> {
        let (proj, map) = self.parts()?;
        match self.kind {
            ModelKind::Full => full_attention(q, k, v, self.heads, cfg),
            ModelKind::LowRank => linformer_attention(q, k, v, self.heads, proj.unwrap(), cfg),
            ModelKind::Kernel => Ok(kernel_attention(q, k, v, self.heads, map.unwrap(), cfg)?.output),
            ModelKind::Flurka => {
                Ok(flurka_attention(q, k, v, self.heads, proj.unwrap(), map.unwrap(), cfg)?.output)
            }
        }
    }

    /// Gradients of `sum(upstream ⊙ forward(q, k, v))`.
    pub fn backward(
        &self,
        q: &Matrix,
        k: &Matrix,
        v: &Matrix,
        cfg: &AttentionConfig,
        upstream: &Matrix,
        projection_grads: bool,
    ) -> Result<Gradients> {
        let (proj, map) = self.parts()?;
        check_inputs(q, k, v, self.heads, cfg)?;
        if let Some(p) = proj {
            check_projections(p, cfg)?;
        }
        if let Some(m) = map {
            check_map(m, cfg)?;
        }
        if upstream.shape() != (cfg.n, cfg.d_model) {
            return config_err(format!(
                "upstream gradient is {}x{}, expected {}x{}",
                upstream.rows(),
                upstream.cols(),
                cfg.n,
                cfg.d_model
            ));
        }
        let (kc, vc) = match proj {
            Some(p) => (p.e1.matmul(k)?, p.e2.matmul(v)?),
            None => (k.clone(), v.clone()),
        };
        let scale = map.is_none_or(|m| m.scales_inputs());
        let s = if scale {
            1.0 / (cfg.d_head as f64).sqrt()
        } else {
            1.0
        };

        let mut dq = Matrix::zeros(q.rows(), q.cols());
        let mut dkc = Matrix::zeros(kc.rows(), kc.cols());
        let mut dvc = Matrix::zeros(vc.rows(), vc.cols());
        let mut head_grads = Vec::with_capacity(self.heads.len());
        for (h, w) in self.heads.iter().enumerate() {
            let g = upstream.columns(h * cfg.d_head..(h + 1) * cfg.d_head);
            let qp = q.matmul(&w.wq)?.scale(s);
            let kp = kc.matmul(&w.wk)?;
            let vp = vc.matmul(&w.wv)?;
            let (dqp, dkp, dvp) = match map {
                Some(m) => kernel_core_backward(&qp, &kp, &vp, m, &g)?,
                None => softmax_core_backward(&qp, &kp, &vp, &g)?,
            };
            dq.axpy(s, &dqp.matmul(&w.wq.transpose())?)?;
            dkc.axpy(1.0, &dkp.matmul(&w.wk.transpose())?)?;
            dvc.axpy(1.0, &dvp.matmul(&w.wv.transpose())?)?;
            head_grads.push(HeadGradients {
                wq: q.transpose().matmul(&dqp)?.scale(s),
                wk: kc.transpose().matmul(&dkp)?,
                wv: vc.transpose().matmul(&dvp)?,
            });
        }
        let (dk, dv, de1, de2) = match proj {
            Some(p) => {
                let (de1, de2) = if projection_grads {
                    (
                        Some(dkc.matmul(&k.transpose())?),
                        Some(dvc.matmul(&v.transpose())?),
                    )
                } else {
                    (None, None)
                };
                (
                    p.e1.transpose().matmul(&dkc)?,
                    p.e2.transpose().matmul(&dvc)?,
                    de1,
                    de2,
                )
            }
            None => (dkc, dvc, None, None),
        };
        Ok(Gradients {
            q: dq,
            k: dk,
            v: dv,
            heads: head_grads,
            e1: de1,
            e2: de2,
        })
    }
}

/// Gradients of the fused mechanism with `E1`, `E2` held fixed.
#[allow(clippy::too_many_arguments)]
pub fn flurka_backward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    heads: &[HeadWeights],
    proj: &LowRankProjections,
    map: &FeatureMap,
    cfg: &AttentionConfig,
    upstream: &Matrix,
) -> Result<Gradients> {
    AttentionLayer {
        kind: ModelKind::Flurka,
        heads,
        proj: Some(proj),
        map: Some(map),
    }
    .backward(q, k, v, cfg, upstream, false)
}

/// Pulls `dφ` back through the feature map evaluated at `x` (with `phi = φ(x)`).
pub fn feature_map_backward(x: &Matrix, phi: &Matrix, dphi: &Matrix, map: &FeatureMap) -> Result<Matrix> {
    match map.omega() {
        // dφ_j/dx = φ_j (w_j - x)
        Some(omega) => {
            let gp = dphi.hadamard(phi)?;
            let mut dx = gp.matmul(&omega.transpose())?;
            for i in 0..dx.rows() {
                let r: f64 = gp.row(i).iter().sum();
                for (d, xi) in dx.row_mut(i).iter_mut().zip(x.row(i)) {
                    *d -= xi * r;
                }
            }
            Ok(dx)
        }
        None => {
            let slope = x.map(|v| if v >= 0.0 { 1.0 } else { flush_subnormal(v.exp()) });
            dphi.hadamard(&slope)
        }
    }
}

type Triple = (Matrix, Matrix, Matrix);

fn kernel_core_backward(
    qp: &Matrix,
    kp: &Matrix,
    vp: &Matrix,
    map: &FeatureMap,
    g: &Matrix,
) -> Result<Triple> {
    let phi_q = apply_feature_map(qp, map)?;
    let phi_k = apply_feature_map(kp, map)?;
    let phi_k_t = phi_k.transpose();
    let kv = phi_k_t.matmul(vp)?;
    let ks = phi_k_t.matmul(&Matrix::filled(phi_k.rows(), 1, 1.0))?;
    let num = phi_q.matmul(&kv)?;
    let den = phi_q.matmul(&ks)?;

    let mut dnum = Matrix::zeros(g.rows(), g.cols());
    let mut dden = Matrix::zeros(g.rows(), 1);
    for i in 0..g.rows() {
        let d = den.get(i, 0);
        if d >= DENOMINATOR_FLOOR {
            let dot: f64 = g.row(i).iter().zip(num.row(i)).map(|(a, b)| a * b).sum();
            dden.set(i, 0, -dot / (d * d));
            for (o, gi) in dnum.row_mut(i).iter_mut().zip(g.row(i)) {
                *o = gi / d;
            }
        } else {
            // Clamped rows are constant in the denominator.
            for (o, gi) in dnum.row_mut(i).iter_mut().zip(g.row(i)) {
                *o = gi / DENOMINATOR_FLOOR;
            }
        }
    }
    let mut dphi_q = dnum.matmul(&kv.transpose())?;
    dphi_q.axpy(1.0, &dden.matmul(&ks.transpose())?)?;
    let phi_q_t = phi_q.transpose();
    let dkv = phi_q_t.matmul(&dnum)?;
    let dks = phi_q_t.matmul(&dden)?;
    let mut dphi_k = vp.matmul(&dkv.transpose())?;
    dphi_k.axpy(
        1.0,
        &Matrix::filled(phi_k.rows(), 1, 1.0).matmul(&dks.transpose())?,
    )?;
    let dvp = phi_k.matmul(&dkv)?;
    Ok((
        feature_map_backward(qp, &phi_q, &dphi_q, map)?,
        feature_map_backward(kp, &phi_k, &dphi_k, map)?,
        dvp,
    ))
}

fn softmax_core_backward(qp: &Matrix, kp: &Matrix, vp: &Matrix, g: &Matrix) -> Result<Triple> {
    let a = qp.matmul(&kp.transpose())?.row_softmax();
    let dvp = a.transpose().matmul(g)?;
    let da = g.matmul(&vp.transpose())?;
    let mut ds = da;
    for i in 0..ds.rows() {
        let c: f64 = ds.row(i).iter().zip(a.row(i)).map(|(x, y)| x * y).sum();
        for (d, ai) in ds.row_mut(i).iter_mut().zip(a.row(i)) {
            *d = ai * (*d - c);
        }
    }
    Ok((ds.matmul(kp)?, ds.transpose().matmul(qp)?, dvp))
}
