use crate::error::{config_err, Result};
use crate::tensor::{Matrix, RngStream};

/// Dimensional parameters of one multi-head attention layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    /// Sequence length N.
    pub n: usize,
    /// Hidden dimension d_m; always `heads * d_head`.
    pub d_model: usize,
    /// Per-head dimension d_h.
    pub d_head: usize,
    pub heads: usize,
    /// Downsampling factor: the contracted key/value length.
    pub d_k: usize,
    pub seed: u64,
}

impl AttentionConfig {
    /// Builds and validates a config with `d_model = heads * d_head`.
    pub fn new(n: usize, d_head: usize, heads: usize, d_k: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            n,
            d_model: heads * d_head,
            d_head,
            heads,
            d_k,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n", self.n),
            ("d_model", self.d_model),
            ("d_head", self.d_head),
            ("heads", self.heads),
            ("d_k", self.d_k),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return config_err(format!("{name} must be at least 1"));
        }
        if self.d_model != self.heads * self.d_head {
            return config_err(format!(
                "d_model ({}) must equal heads * d_head ({} * {})",
                self.d_model, self.heads, self.d_head
            ));
        }
        if self.d_k > self.n {
            return config_err(format!("d_k ({}) must not exceed n ({})", self.d_k, self.n));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Per-head projections `W^Q`, `W^K`, `W^V`, each `d_model x d_head`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProjectionMode {
    /// Independent `E1`, `E2` with N(0, 1/d_k) entries.
    Practical,
    /// `E1 = delta * R` and `E2 = exp(-delta) * R` for one shared `R`.
    Theorem { delta: f64 },
}

/// Key/value contraction matrices, both `d_k x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankProjections {
    pub e1: Matrix,
    pub e2: Matrix,
    pub mode: ProjectionMode,
}

impl LowRankProjections {
    pub fn sample(rng: &mut RngStream, n: usize, d_k: usize, mode: ProjectionMode) -> Self {
        let std = 1.0 / (d_k as f64).sqrt();
        match mode {
            ProjectionMode::Practical => {
                let e1 = Matrix::gaussian(rng, d_k, n, std);
                let e2 = Matrix::gaussian(rng, d_k, n, std);
                Self { e1, e2, mode }
            }
            ProjectionMode::Theorem { delta } => {
                // R is drawn n x d_k and stored transposed.
                let r = Matrix::gaussian(rng, n, d_k, std).transpose();
                Self {
                    e1: r.scale(delta),
                    e2: r.scale((-delta).exp()),
                    mode,
                }
            }
        }
    }

    /// `E1 = E2 = I_n`; reduces low-rank variants to their uncontracted forms.
    pub fn identity(n: usize) -> Self {
        Self {
            e1: Matrix::identity(n),
            e2: Matrix::identity(n),
            mode: ProjectionMode::Practical,
        }
    }

    pub fn d_k(&self) -> usize {
        self.e1.rows()
    }

    pub fn n(&self) -> usize {
        self.e1.cols()
    }
}

/// Which mechanism a parameter set was trained for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Full,
    LowRank,
    Kernel,
    Flurka,
}

/// Learnable and sampled parameters of one attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub heads: Vec<HeadWeights>,
    pub projections: Option<LowRankProjections>,
    pub feature_map: Option<crate::attention::FeatureMapSpec>,
}

/// Samples head weights (N(0, 1/d_model)) and low-rank projections, fully
/// determined by `cfg.seed`.
pub fn sample_params(
    cfg: &AttentionConfig,
    mode: ProjectionMode,
) -> Result<(Vec<HeadWeights>, LowRankProjections)> {
    cfg.validate()?;
    if let ProjectionMode::Theorem { delta } = mode {
        if !(delta > 0.0) {
            return config_err(format!("theorem-mode delta must be positive, got {delta}"));
        }
    }
    let mut root = RngStream::new(cfg.seed);
    let mut weight_rng = root.fork();
    let mut proj_rng = root.fork();
    let std = 1.0 / (cfg.d_model as f64).sqrt();
    let heads = (0..cfg.heads)
        .map(|_| HeadWeights {
            wq: Matrix::gaussian(&mut weight_rng, cfg.d_model, cfg.d_head, std),
            wk: Matrix::gaussian(&mut weight_rng, cfg.d_model, cfg.d_head, std),
            wv: Matrix::gaussian(&mut weight_rng, cfg.d_model, cfg.d_head, std),
        })
        .collect();
    let proj = LowRankProjections::sample(&mut proj_rng, cfg.n, cfg.d_k, mode);
    Ok((heads, proj))
}

/// `n x d_model` input with N(0, std²) entries.
pub fn sample_inputs(rng: &mut RngStream, cfg: &AttentionConfig, std: f64) -> Matrix {
    Matrix::gaussian(rng, cfg.n, cfg.d_model, std)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_invariants() {
        assert!(AttentionConfig::new(8, 4, 2, 3, 0).is_ok());
        assert!(AttentionConfig::new(8, 4, 2, 9, 0).is_err());
        assert!(AttentionConfig::new(8, 0, 2, 3, 0).is_err());
        let mut cfg = AttentionConfig::new(8, 4, 2, 3, 0).unwrap();
        cfg.d_model = 9;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = AttentionConfig::new(10, 4, 3, 5, 1234).unwrap();
        let a = sample_params(&cfg, ProjectionMode::Practical).unwrap();
        let b = sample_params(&cfg, ProjectionMode::Practical).unwrap();
        assert_eq!(a, b);
        let c = sample_params(&cfg.with_seed(1235), ProjectionMode::Practical).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn projection_shapes_when_dk_equals_n() {
        let cfg = AttentionConfig::new(6, 2, 2, 6, 0).unwrap();
        let (_, p) = sample_params(&cfg, ProjectionMode::Practical).unwrap();
        assert_eq!(p.e1.shape(), (6, 6));
        assert_eq!(p.e2.shape(), (6, 6));
    }

    #[test]
    fn bert_base_head_shapes() {
        let cfg = AttentionConfig::new(16, 64, 12, 8, 0).unwrap();
        let (heads, _) = sample_params(&cfg, ProjectionMode::Practical).unwrap();
        assert_eq!(heads.len(), 12);
        for h in &heads {
            assert_eq!(h.wq.shape(), (768, 64));
            assert_eq!(h.wk.shape(), (768, 64));
            assert_eq!(h.wv.shape(), (768, 64));
        }
    }

    #[test]
    fn theorem_mode_shares_r() {
        let cfg = AttentionConfig::new(12, 2, 1, 4, 3).unwrap();
        let delta = 0.3;
        let (_, p) = sample_params(&cfg, ProjectionMode::Theorem { delta }).unwrap();
        let ratio = delta * delta.exp();
        for (a, b) in p.e1.data().iter().zip(p.e2.data()) {
            assert!((a / b - ratio).abs() < 1e-12 * ratio);
        }
        assert!(sample_params(&cfg, ProjectionMode::Theorem { delta: 0.0 }).is_err());
    }
}
