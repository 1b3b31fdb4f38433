//! Multivariate normal sampling head and the distance-kernel covariance.

use crate::error::{dim_err, Result};
use crate::numerics::matrix::{cholesky, solve_lower};
use crate::numerics::tape::kernel_matrix_value;
use crate::numerics::{Matrix, Rng};

pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Smallest jitter ever added to a proposal covariance.
pub const JITTER_FLOOR: f64 = 1e-12;

/// Starting jitter for a covariance: `1e-9·trace/N`, never below
/// [`JITTER_FLOOR`].
pub fn head_jitter(cov: &Matrix) -> f64 {
    (1e-9 * cov.trace().abs() / cov.rows().max(1) as f64).max(JITTER_FLOOR)
}

/// `C K(z) Cᵀ` with `K_ij = exp(-(z_i - z_j)^2)`.
pub fn kernel_covariance(z: &[f64], c: &Matrix) -> Result<Matrix> {
    if c.cols() != z.len() {
        return Err(dim_err!("kernel of length {} against C {:?}", z.len(), c.shape()));
    }
    let k = kernel_matrix_value(z);
    Ok(c.matmul(&k)?.matmul_t(c)?.symmetrized())
}

/// Mean, covariance and the Cholesky factor of `cov + jitter·I`.
#[derive(Clone, Debug)]
pub struct GaussianProposalParams {
    pub mean: Vec<f64>,
    pub cov: Matrix,
    pub chol: Matrix,
    pub jitter: f64,
}

impl GaussianProposalParams {
    pub fn new(mean: Vec<f64>, cov: Matrix) -> Result<Self> {
        if cov.shape() != (mean.len(), mean.len()) {
            return Err(dim_err!("mean of length {} with covariance {:?}", mean.len(), cov.shape()));
        }
        let (chol, jitter) = cholesky(&cov, head_jitter(&cov))?;
        Ok(Self { mean, cov, chol, jitter })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `Σ log L_ii`, half the log-determinant of the jittered covariance.
    pub fn half_log_det(&self) -> f64 {
        (0..self.dim()).map(|i| self.chol[(i, i)].ln()).sum()
    }

    /// `μ + L u`.
    pub fn transform(&self, u: &[f64]) -> Vec<f64> {
        let lu = self.chol.matvec(u).expect("matching dimension");
        self.mean.iter().zip(lu).map(|(m, v)| m + v).collect()
    }

    /// Log-density of the standardized draw `u`.
    pub fn logpdf_of_noise(&self, u: &[f64]) -> f64 {
        -0.5 * u.iter().map(|v| v * v).sum::<f64>() - self.half_log_det() - self.dim() as f64 * HALF_LN_2PI
    }

    pub fn logpdf(&self, x: &[f64]) -> f64 {
        let r: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        self.logpdf_of_noise(&solve_lower(&self.chol, &r))
    }

    /// Differential entropy `½ ln det(2πe Σ)` of the jittered covariance.
    pub fn entropy(&self) -> f64 {
        self.half_log_det() + self.dim() as f64 * (HALF_LN_2PI + 0.5)
    }
}

/// Draws `x = μ + L u` with `u ~ N(0, I)` and returns `(x, log π(x))`.
pub fn gaussian_sample(params: &GaussianProposalParams, rng: &mut Rng) -> (Vec<f64>, f64) {
    let mut u = vec![0.0; params.dim()];
    rng.fill_normal(&mut u);
    (params.transform(&u), params.logpdf_of_noise(&u))
}
