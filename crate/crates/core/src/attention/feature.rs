use crate::error::{config_err, Error, Result};
use crate::tensor::{Matrix, RngStream};

/// Largest exponent a positive random feature may take before it is rejected.
pub const PRF_EXPONENT_LIMIT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// Positive random features `exp(wᵀx - |x|²/2) / sqrt(m)` with `m` draws of
    /// `w ~ N(0, I)`; an unbiased estimator of `exp(xᵀy)`.
    Prf { features: usize },
    /// `elu(x) + 1`, applied elementwise.
    Elu,
}

/// Choice and parameters of the feature map φ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureMapSpec {
    pub kind: KernelKind,
    /// Seed for the random projection (PRF only).
    pub seed: u64,
    /// Scale the query projection by `1/sqrt(d_head)` before mapping.
    pub scale_inputs: bool,
}

impl FeatureMapSpec {
    pub fn prf(features: usize, seed: u64) -> Self {
        Self {
            kind: KernelKind::Prf { features },
            seed,
            scale_inputs: true,
        }
    }

    pub fn elu() -> Self {
        Self {
            kind: KernelKind::Elu,
            seed: 0,
            scale_inputs: true,
        }
    }

    /// Output dimension d_p for inputs of width `d_head`.
    pub fn output_dim(&self, d_head: usize) -> usize {
        match self.kind {
            KernelKind::Prf { features } => features,
            KernelKind::Elu => d_head,
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self.kind, KernelKind::Prf { .. })
    }

    /// Draws the random projection (if any) for inputs of width `d_head`.
    pub fn build(&self, d_head: usize) -> Result<FeatureMap> {
        if d_head == 0 {
            return config_err("feature map input width must be positive");
        }
        let omega = match self.kind {
            KernelKind::Prf { features: 0 } => {
                return config_err("PRF feature count must be positive");
            }
            KernelKind::Prf { features } => Some(Matrix::gaussian(
                &mut RngStream::new(self.seed),
                d_head,
                features,
                1.0,
            )),
            KernelKind::Elu => None,
        };
        Ok(FeatureMap {
            spec: *self,
            d_head,
            omega,
        })
    }
}

/// A feature map with its random projection materialised.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    spec: FeatureMapSpec,
    d_head: usize,
    /// `d_head x m` matrix whose columns are the PRF directions `w_i`.
    omega: Option<Matrix>,
}

impl FeatureMap {
    pub fn spec(&self) -> &FeatureMapSpec {
        &self.spec
    }

    pub fn d_head(&self) -> usize {
        self.d_head
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim(self.d_head)
    }

    pub fn omega(&self) -> Option<&Matrix> {
        self.omega.as_ref()
    }

    pub fn scales_inputs(&self) -> bool {
        self.spec.scale_inputs
    }
}

/// Applies φ to every row of `x` (`rows x d_head`).
pub fn apply_feature_map(x: &Matrix, map: &FeatureMap) -> Result<Matrix> {
    if x.cols() != map.d_head {
        return config_err(format!(
            "feature map expects {} columns, got {}",
            map.d_head,
            x.cols()
        ));
    }
    match &map.omega {
        None => Ok(x.map(|v| flush_subnormal(elu_plus_one(v)))),
        Some(omega) => {
            let m = omega.cols();
            let inv_sqrt_m = 1.0 / (m as f64).sqrt();
            let mut proj = x.matmul(omega)?;
            for i in 0..x.rows() {
                let half_sq = 0.5 * x.row(i).iter().map(|v| v * v).sum::<f64>();
                for p in proj.row_mut(i) {
                    let exponent = *p - half_sq;
                    if exponent > PRF_EXPONENT_LIMIT {
                        return Err(Error::FeatureOverflow {
                            exponent,
                            limit: PRF_EXPONENT_LIMIT,
                        });
                    }
                    *p = flush_subnormal(exponent.exp() * inv_sqrt_m);
                }
            }
            Ok(proj)
        }
    }
}

/// Subnormal feature values become zero; products on them are very slow.
#[inline]
pub(crate) fn flush_subnormal(v: f64) -> f64 {
    if v < f64::MIN_POSITIVE {
        0.0
    } else {
        v
    }
}

#[inline]
pub(crate) fn elu_plus_one(x: f64) -> f64 {
    if x >= 0.0 {
        x + 1.0
    } else {
        x.exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prf_at_zero_is_flat() {
        let map = FeatureMapSpec::prf(16, 3).build(4).unwrap();
        let phi = apply_feature_map(&Matrix::zeros(1, 4), &map).unwrap();
        for &v in phi.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
        let dot: f64 = phi.row(0).iter().map(|v| v * v).sum();
        assert!((dot - 1.0).abs() < 1e-14);
    }

    #[test]
    fn elu_closed_form() {
        let map = FeatureMapSpec::elu().build(2).unwrap();
        let x = Matrix::from_rows(&[[-1.0, 2.0]]).unwrap();
        let phi = apply_feature_map(&x, &map).unwrap();
        assert!((phi.get(0, 0) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(phi.get(0, 1), 3.0);
        assert_eq!(map.output_dim(), 2);
    }

    #[test]
    fn tiny_features_are_flushed() {
        let map = FeatureMapSpec::elu().build(2).unwrap();
        let x = Matrix::from_rows(&[[-720.0, -700.0]]).unwrap();
        let phi = apply_feature_map(&x, &map).unwrap();
        assert_eq!(phi.get(0, 0), 0.0);
        assert!(phi.get(0, 1).is_normal());
        let prf = FeatureMapSpec::prf(32, 4).build(8).unwrap();
        let far = Matrix::filled(1, 8, 14.0);
        let phi = apply_feature_map(&far, &prf).unwrap();
        assert!(phi.data().iter().all(|&v| v == 0.0 || v.is_normal()));
    }

    #[test]
    fn elu_is_strictly_positive() {
        let map = FeatureMapSpec::elu().build(3).unwrap();
        let x = Matrix::gaussian(&mut RngStream::new(1), 50, 3, 5.0);
        assert!(apply_feature_map(&x, &map)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v > 0.0));
    }

    #[test]
    fn prf_overflow_is_reported() {
        // wᵀx - ‖x‖²/2 peaks at ‖w‖²/2 when x = w, so overflow needs a very
        // wide input; with d_head = 2000 the peak is about 1000.
        let map = FeatureMapSpec::prf(1, 0).build(2000).unwrap();
        let w = map.omega().unwrap().transpose();
        assert!(matches!(
            apply_feature_map(&w, &map),
            Err(Error::FeatureOverflow { .. })
        ));
        assert!(apply_feature_map(&w.scale(0.01), &map).is_ok());
    }

    #[test]
    fn prf_monte_carlo_matches_exp() {
        // x, y with xᵀy = 0.5; standard error measured across 50 seeds.
        let x = Matrix::from_rows(&[[0.5, 0.5, 0.0, 0.0]]).unwrap();
        let y = Matrix::from_rows(&[[0.5, 0.5, 0.3, -0.2]]).unwrap();
        let target = 0.5f64.exp();
        let est: Vec<f64> = (0..50)
            .map(|s| {
                let map = FeatureMapSpec::prf(4096, 1000 + s).build(4).unwrap();
                let px = apply_feature_map(&x, &map).unwrap();
                let py = apply_feature_map(&y, &map).unwrap();
                px.row(0).iter().zip(py.row(0)).map(|(a, b)| a * b).sum()
            })
            .collect();
        let mean = est.iter().sum::<f64>() / 50.0;
        let sd = (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 49.0).sqrt();
        // Each single estimate must be within 3 standard deviations.
        assert!(
            (est[0] - target).abs() < 3.0 * sd,
            "{} vs {target} (sd {sd})",
            est[0]
        );
        assert!((mean - target).abs() < 3.0 * sd / 50f64.sqrt());
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let map = FeatureMapSpec::prf(4, 0).build(3).unwrap();
        assert!(apply_feature_map(&Matrix::zeros(2, 4), &map).is_err());
        assert!(FeatureMapSpec::prf(0, 0).build(3).is_err());
    }
}
