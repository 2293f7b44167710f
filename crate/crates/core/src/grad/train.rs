//! Toy regression trainer: one attention layer plus a linear readout fitted
//! by plain gradient descent.

use crate::attention::{
    sample_params, AttentionConfig, FeatureMapSpec, HeadWeights, KernelKind, ModelKind, ModelParams,
    ProjectionMode,
};
use crate::error::{config_err, Error, Result};
use crate::fusion::uptrain_transfer;
use crate::tensor::{Matrix, RngStream};

use super::AttentionLayer;

/// Synthetic task: each target row is the mean of the inputs within
/// `radius` positions of it, excluding the position itself. Inputs carry a
/// per-feature offset of magnitude in `[0.5, 1.5]` plus unit Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskSpec {
    pub batch: usize,
    pub radius: usize,
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            batch: 4,
            radius: 2,
            seed: 0,
        }
    }
}

/// Train a low-rank or kernel base for `ceil(alpha * steps)` steps, then
/// continue as the fused model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Uptrain {
    pub base: ModelKind,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub kernel: KernelKind,
    pub n: usize,
    pub d_head: usize,
    pub heads: usize,
    pub d_k: usize,
    pub steps: usize,
    pub lr: f64,
    pub task: TaskSpec,
    pub uptrain: Option<Uptrain>,
}

impl TrainConfig {
    pub fn new(kind: ModelKind, steps: usize, lr: f64, task_seed: u64) -> Self {
        Self {
            kind,
            kernel: KernelKind::Elu,
            n: 32,
            d_head: 4,
            heads: 2,
            d_k: 8,
            steps,
            lr,
            task: TaskSpec {
                seed: task_seed,
                ..TaskSpec::default()
            },
            uptrain: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Loss before each update; `losses[t]` is the loss at step `t`.
    pub losses: Vec<f64>,
    /// First step trained as the fused model after an up-training transfer.
    pub transfer_step: Option<usize>,
}

impl TrainReport {
    pub fn initial(&self) -> f64 {
        self.losses[0]
    }

    pub fn last(&self) -> f64 {
        *self.losses.last().unwrap()
    }
}

fn make_task(task: &TaskSpec, n: usize, d_model: usize) -> Result<Vec<(Matrix, Matrix)>> {
    if task.batch == 0 || task.radius == 0 || task.radius >= n {
        return config_err(format!(
            "task needs batch >= 1 and 1 <= radius < n (batch={}, radius={}, n={n})",
            task.batch, task.radius
        ));
    }
    let mut rng = RngStream::new(task.seed);
    let offset: Vec<f64> = (0..d_model)
        .map(|_| {
            let mag = 0.5 + rng.next_f64();
            if rng.next_f64() < 0.5 {
                -mag
            } else {
                mag
            }
        })
        .collect();
    let mut data = Vec::with_capacity(task.batch);
    for _ in 0..task.batch {
        let mut x = Matrix::gaussian(&mut rng, n, d_model, 1.0);
        for i in 0..n {
            for (v, o) in x.row_mut(i).iter_mut().zip(&offset) {
                *v += o;
            }
        }
        let mut y = Matrix::zeros(n, d_model);
        for i in 0..n {
            let lo = i.saturating_sub(task.radius);
            let hi = (i + task.radius).min(n - 1);
            let count = (hi - lo) as f64;
            for j in (lo..=hi).filter(|&j| j != i) {
                for c in 0..d_model {
                    y.set(i, c, y.get(i, c) + x.get(j, c) / count);
                }
            }
        }
        data.push((x, y));
    }
    Ok(data)
}

struct Model {
    params: ModelParams,
    map: Option<crate::attention::FeatureMap>,
    readout: Matrix,
}

impl Model {
    fn layer(&self) -> AttentionLayer<'_> {
        AttentionLayer {
            kind: self.params.kind,
            heads: &self.params.heads,
            proj: self.params.projections.as_ref(),
            map: self.map.as_ref(),
        }
    }

    /// Loss and, when `lr` is nonzero, one gradient-descent update.
    fn step(&mut self, data: &[(Matrix, Matrix)], cfg: &AttentionConfig, lr: f64) -> Result<f64> {
        let scale = 1.0 / (data.len() * cfg.n * cfg.d_model) as f64;
        let mut loss = 0.0;
        let mut d_readout = Matrix::zeros(cfg.d_model, cfg.d_model);
        let mut d_heads: Vec<HeadWeights> = self
            .params
            .heads
            .iter()
            .map(|w| HeadWeights {
                wq: Matrix::zeros(w.wq.rows(), w.wq.cols()),
                wk: Matrix::zeros(w.wk.rows(), w.wk.cols()),
                wv: Matrix::zeros(w.wv.rows(), w.wv.cols()),
            })
            .collect();
        for (x, y) in data {
            let layer = self.layer();
            let attn = layer.forward(x, x, x, cfg)?;
            let resid = attn.matmul(&self.readout)?.sub(y)?;
            loss += resid.data().iter().map(|r| r * r).sum::<f64>() * scale;
            if lr == 0.0 {
                continue;
            }
            let d_pred = resid.scale(2.0 * scale);
            d_readout.axpy(1.0, &attn.transpose().matmul(&d_pred)?)?;
            let d_attn = d_pred.matmul(&self.readout.transpose())?;
            let g = layer.backward(x, x, x, cfg, &d_attn, false)?;
            for (acc, hg) in d_heads.iter_mut().zip(&g.heads) {
                acc.wq.axpy(1.0, &hg.wq)?;
                acc.wk.axpy(1.0, &hg.wk)?;
                acc.wv.axpy(1.0, &hg.wv)?;
            }
        }
        if lr != 0.0 && loss.is_finite() {
            self.readout.axpy(-lr, &d_readout)?;
            for (w, d) in self.params.heads.iter_mut().zip(&d_heads) {
                w.wq.axpy(-lr, &d.wq)?;
                w.wk.axpy(-lr, &d.wk)?;
                w.wv.axpy(-lr, &d.wv)?;
            }
        }
        Ok(loss)
    }
}

fn initial_model(kind: ModelKind, kernel: KernelKind, cfg: &AttentionConfig) -> Result<Model> {
    let (heads, proj) = sample_params(cfg, ProjectionMode::Practical)?;
    let mut rng = RngStream::new(cfg.seed).fork();
    let spec = FeatureMapSpec {
        kind: kernel,
        seed: rng.next_u64(),
        scale_inputs: true,
    };
    let readout = Matrix::gaussian(
        &mut rng,
        cfg.d_model,
        cfg.d_model,
        1.0 / (cfg.d_model as f64).sqrt(),
    );
    let uses_proj = matches!(kind, ModelKind::LowRank | ModelKind::Flurka);
    let uses_map = matches!(kind, ModelKind::Kernel | ModelKind::Flurka);
    let map = if uses_map {
        Some(spec.build(cfg.d_head)?)
    } else {
        None
    };
    Ok(Model {
        params: ModelParams {
            kind,
            heads,
            projections: uses_proj.then_some(proj),
            feature_map: uses_map.then_some(spec),
        },
        map,
        readout,
    })
}

/// Trains on the synthetic neighbourhood-mean task and returns the per-step
/// mean squared error.
pub fn toy_train(tc: &TrainConfig) -> Result<TrainReport> {
    if tc.steps == 0 {
        return config_err("steps must be at least 1");
    }
    let cfg = AttentionConfig::new(tc.n, tc.d_head, tc.heads, tc.d_k, tc.task.seed)?;
    let data = make_task(&tc.task, cfg.n, cfg.d_model)?;
    let (start_kind, switch_at) = match tc.uptrain {
        None => (tc.kind, None),
        Some(u) => {
            if tc.kind != ModelKind::Flurka {
                return config_err("up-training continues as the fused model; set the variant to flurka");
            }
            if !matches!(u.base, ModelKind::LowRank | ModelKind::Kernel) {
                return config_err(format!(
                    "up-training base must be low-rank or kernel, got {:?}",
                    u.base
                ));
            }
            if !(0.0..=1.0).contains(&u.alpha) {
                return config_err(format!("alpha must lie in [0, 1], got {}", u.alpha));
            }
            let at = (u.alpha * tc.steps as f64).ceil() as usize;
            (u.base, Some(at.min(tc.steps)))
        }
    };
    let mut model = initial_model(start_kind, tc.kernel, &cfg)?;
    let mut losses = Vec::with_capacity(tc.steps);
    for step in 0..tc.steps {
        if Some(step) == switch_at {
            let transfer_cfg = cfg.with_seed(cfg.seed.wrapping_add(1));
            let params = uptrain_transfer(&model.params, &transfer_cfg, tc.kernel)?;
            model.map = Some(params.feature_map.unwrap().build(cfg.d_head)?);
            model.params = params;
        }
        let loss = model.step(&data, &cfg, tc.lr)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        losses.push(loss);
    }
    Ok(TrainReport {
        losses,
        transfer_step: switch_at.filter(|&s| s < tc.steps),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_learning_rate_keeps_loss_constant() {
        let r = toy_train(&TrainConfig::new(ModelKind::Flurka, 5, 0.0, 3)).unwrap();
        assert!(r.losses.iter().all(|&l| l == r.losses[0]));
    }

    #[test]
    fn targets_are_neighbourhood_means() {
        let task = TaskSpec {
            batch: 1,
            radius: 1,
            seed: 2,
        };
        let (x, y) = &make_task(&task, 5, 3).unwrap()[0];
        for c in 0..3 {
            assert!((y.get(0, c) - x.get(1, c)).abs() < 1e-15);
            assert!((y.get(2, c) - 0.5 * (x.get(1, c) + x.get(3, c))).abs() < 1e-15);
            assert!((y.get(4, c) - x.get(3, c)).abs() < 1e-15);
        }
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let err = toy_train(&TrainConfig::new(ModelKind::Full, 200, 1e6, 1)).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err:?}");
    }

    #[test]
    fn every_kind_reduces_loss() {
        for kind in [
            ModelKind::Full,
            ModelKind::LowRank,
            ModelKind::Kernel,
            ModelKind::Flurka,
        ] {
            let r = toy_train(&TrainConfig::new(kind, 60, 1e-2, 4)).unwrap();
            assert!(r.last() < r.initial(), "{kind:?}");
        }
    }

    #[test]
    fn uptraining_switches_once() {
        let mut tc = TrainConfig::new(ModelKind::Flurka, 8, 1e-2, 0);
        tc.uptrain = Some(Uptrain {
            base: ModelKind::LowRank,
            alpha: 0.25,
        });
        let r = toy_train(&tc).unwrap();
        assert_eq!(r.transfer_step, Some(2));
        assert_eq!(r.losses.len(), 8);
        tc.uptrain = Some(Uptrain {
            base: ModelKind::Full,
            alpha: 0.25,
        });
        assert!(toy_train(&tc).is_err());
    }
}
