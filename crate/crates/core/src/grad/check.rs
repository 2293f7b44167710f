use crate::attention::{
    sample_inputs, sample_params, AttentionConfig, FeatureMapSpec, HeadWeights, KernelKind, ModelKind,
    ProjectionMode,
};
use crate::error::Result;
use crate::tensor::{Matrix, RngStream};

use super::AttentionLayer;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Largest accepted relative error between analytic and numeric gradients.
pub const GRAD_TOLERANCE: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub kind: ModelKind,
    pub kernel: KernelKind,
    pub seed: u64,
    pub entries: usize,
    pub max_rel_error: f64,
    /// Parameter and index of the worst entry, e.g. `head1.wk[3][2]`.
    pub worst: String,
}

impl GradCheckReport {
    pub fn passes(&self) -> bool {
        self.max_rel_error <= GRAD_TOLERANCE
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub kind: ModelKind,
    pub kernel: KernelKind,
    pub n: usize,
    pub d_k: usize,
    pub d_head: usize,
    pub heads: usize,
    pub seed: u64,
    pub input_std: f64,
}

impl GradCheckConfig {
    pub fn new(kind: ModelKind, kernel: KernelKind, seed: u64) -> Self {
        Self {
            kind,
            kernel,
            n: 12,
            d_k: 4,
            d_head: 4,
            heads: 2,
            seed,
            input_std: 1.0,
        }
    }
}

enum Slot {
    Input(usize),
    Weight(usize, usize),
}

/// Compares every analytic gradient entry of `sum(forward)` with respect to
/// the inputs and head weights against central differences.
pub fn gradient_check(gc: &GradCheckConfig) -> Result<GradCheckReport> {
    let cfg = AttentionConfig::new(gc.n, gc.d_head, gc.heads, gc.d_k, gc.seed)?;
    let (heads, proj) = sample_params(&cfg, ProjectionMode::Practical)?;
    let mut rng = RngStream::new(gc.seed).fork();
    let map = FeatureMapSpec {
        kind: gc.kernel,
        seed: rng.next_u64(),
        scale_inputs: true,
    }
    .build(gc.d_head)?;
    let inputs = [
        sample_inputs(&mut rng, &cfg, gc.input_std),
        sample_inputs(&mut rng, &cfg, gc.input_std),
        sample_inputs(&mut rng, &cfg, gc.input_std),
    ];
    let layer = AttentionLayer {
        kind: gc.kind,
        heads: &heads,
        proj: Some(&proj),
        map: Some(&map),
    };
    let ones = Matrix::filled(cfg.n, cfg.d_model, 1.0);
    let grads = layer.backward(&inputs[0], &inputs[1], &inputs[2], &cfg, &ones, false)?;

    let eval = |ins: &[Matrix; 3], hw: &[HeadWeights]| -> Result<f64> {
        let l = AttentionLayer { heads: hw, ..layer };
        Ok(l.forward(&ins[0], &ins[1], &ins[2], &cfg)?.sum())
    };

    let mut slots: Vec<(Slot, &Matrix, String)> = Vec::new();
    for (i, (g, name)) in [(&grads.q, "q"), (&grads.k, "k"), (&grads.v, "v")]
        .into_iter()
        .enumerate()
    {
        slots.push((Slot::Input(i), g, name.to_string()));
    }
    for (h, hg) in grads.heads.iter().enumerate() {
        for (j, (g, name)) in [(&hg.wq, "wq"), (&hg.wk, "wk"), (&hg.wv, "wv")]
            .into_iter()
            .enumerate()
        {
            slots.push((Slot::Weight(h, j), g, format!("head{h}.{name}")));
        }
    }

    let mut worst = (0.0f64, String::new());
    let mut entries = 0;
    for (slot, grad, name) in &slots {
        for r in 0..grad.rows() {
            for c in 0..grad.cols() {
                let probe = |t: f64| -> Result<f64> {
                    match *slot {
                        Slot::Input(i) => {
                            let mut ins = inputs.clone();
                            ins[i].set(r, c, ins[i].get(r, c) + t);
                            eval(&ins, &heads)
                        }
                        Slot::Weight(h, j) => {
                            let mut hw = heads.clone();
                            let w = match j {
                                0 => &mut hw[h].wq,
                                1 => &mut hw[h].wk,
                                _ => &mut hw[h].wv,
                            };
                            w.set(r, c, w.get(r, c) + t);
                            eval(&inputs, &hw)
                        }
                    }
                };
                let numeric = (probe(FD_STEP)? - probe(-FD_STEP)?) / (2.0 * FD_STEP);
                let err = relative_error(grad.get(r, c), numeric);
                entries += 1;
                if err > worst.0 || worst.1.is_empty() {
                    worst = (err, format!("{name}[{r}][{c}]"));
                }
            }
        }
    }
    Ok(GradCheckReport {
        kind: gc.kind,
        kernel: gc.kernel,
        seed: gc.seed,
        entries,
        max_rel_error: worst.0,
        worst: worst.1,
    })
}
