use crate::tensor::{Matrix, RngStream};

/// Relative off-diagonal threshold below which a Jacobi rotation is skipped.
pub const JACOBI_THRESHOLD: f64 = 1e-14;
pub const JACOBI_MAX_SWEEPS: usize = 60;

/// Result of power iteration: the estimate, whether it met the tolerance, and
/// how many iterations ran.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralNorm {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl Matrix {
    /// Largest singular value by power iteration on `AᵀA`, started from a
    /// seed-0 Gaussian vector. Stops once successive estimates differ by less
    /// than `tol` times the estimate.
    pub fn norm_spectral(&self, max_iters: usize, tol: f64) -> SpectralNorm {
        let max_iters = max_iters.max(1);
        let mut v = Matrix::gaussian(&mut RngStream::new(0), self.cols(), 1, 1.0).into_vec();
        normalize(&mut v);
        let mut estimate = 0.0;
        for it in 1..=max_iters {
            let av = mat_vec(self, &v);
            let next = dot(&av, &av).sqrt();
            if next == 0.0 {
                return SpectralNorm {
                    value: 0.0,
                    converged: true,
                    iterations: it,
                };
            }
            let mut w = mat_t_vec(self, &av);
            normalize(&mut w);
            v = w;
            let done = it > 1 && (next - estimate).abs() < tol * next;
            estimate = next;
            if done {
                return SpectralNorm {
                    value: estimate,
                    converged: true,
                    iterations: it,
                };
            }
        }
        SpectralNorm {
            value: estimate,
            converged: false,
            iterations: max_iters,
        }
    }

    /// All `min(rows, cols)` singular values in descending order.
    ///
    /// One-sided (Hestenes) cyclic Jacobi: each rotation is the Jacobi rotation
    /// that diagonalises a 2x2 block of the Gram matrix, applied to the columns
    /// directly so the Gram matrix is never formed and small singular values
    /// keep their accuracy.
    pub fn singular_values(&self) -> Vec<f64> {
        // Work on whichever orientation has the fewer columns.
        let x = if self.rows() >= self.cols() {
            self.transpose()
        } else {
            self.clone()
        };
        // Rows of `x` are the columns being orthogonalised.
        let k = x.rows();
        let len = x.cols();
        let mut cols: Vec<Vec<f64>> = (0..k).map(|i| x.row(i).to_vec()).collect();

        for _ in 0..JACOBI_MAX_SWEEPS {
            let mut rotated = false;
            for p in 0..k {
                for q in p + 1..k {
                    let (left, right) = cols.split_at_mut(q);
                    let (xp, xq) = (&mut left[p], &mut right[0]);
                    let alpha = dot(xp, xp);
                    let beta = dot(xq, xq);
                    let gamma = dot(xp, xq);
                    if gamma.abs() <= JACOBI_THRESHOLD * (alpha * beta).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for i in 0..len {
                        let a = xp[i];
                        let b = xq[i];
                        xp[i] = c * a - s * b;
                        xq[i] = s * a + c * b;
                    }
                }
            }
            if !rotated {
                break;
            }
        }

        let mut sv: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        sv
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn mat_vec(a: &Matrix, v: &[f64]) -> Vec<f64> {
    (0..a.rows()).map(|i| dot(a.row(i), v)).collect()
}

fn mat_t_vec(a: &Matrix, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.cols()];
    for (i, &ui) in u.iter().enumerate() {
        for (o, &x) in out.iter_mut().zip(a.row(i)) {
            *o += ui * x;
        }
    }
    out
}
