//! Gaussian prior over per-element log-moduli with exponential covariance.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{log_det_chol, Chol};
use crate::mesh::Point;

pub const MU_THETA0: f64 = -0.112;
pub const SIGMA_G2: f64 = 0.223;
pub const CORRELATION_LENGTH: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct FieldPrior {
    pub mu_theta0: f64,
    pub sigma_g2: f64,
    pub x0: f64,
    /// Diagonal regularization that was needed for the factorization (0 if none).
    pub nugget: f64,
    cov: DMatrix<f64>,
    chol: Chol,
}

pub fn build_covariance(centroids: &[Point], sigma_g2: f64, x0: f64, mu_theta0: f64) -> Result<FieldPrior> {
    if !(sigma_g2 > 0.0 && sigma_g2.is_finite()) {
        return Err(Error::InvalidArgument(format!("field variance must be positive, got {sigma_g2}")));
    }
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(Error::InvalidArgument(format!("correlation length must be positive, got {x0}")));
    }
    let n = centroids.len();
    let mut cov = DMatrix::zeros(n, n);
    for j in 0..n {
        cov[(j, j)] = sigma_g2;
        for i in j + 1..n {
            let d = ((centroids[i][0] - centroids[j][0]).powi(2) + (centroids[i][1] - centroids[j][1]).powi(2)).sqrt();
            let v = sigma_g2 * (-d / x0).exp();
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    FieldPrior::from_covariance(cov, mu_theta0, sigma_g2, x0)
}

impl FieldPrior {
    /// Factorizes a given covariance, retrying once with a `1e-10·σ²` nugget.
    pub fn from_covariance(mut cov: DMatrix<f64>, mu_theta0: f64, sigma_g2: f64, x0: f64) -> Result<Self> {
        let mut nugget = 0.0;
        let chol = match Chol::new(cov.clone()) {
            Some(c) => c,
            None => {
                nugget = 1e-10 * sigma_g2;
                for i in 0..cov.nrows() {
                    cov[(i, i)] += nugget;
                }
                Chol::new(cov.clone()).ok_or(Error::CovarianceFactorization { nugget })?
            }
        };
        Ok(Self { mu_theta0, sigma_g2, x0, nugget, cov, chol })
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower-triangular factor `L` with `C = L Lᵀ`.
    pub fn chol_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn mean_vector(&self) -> DVector<f64> {
        DVector::from_element(self.dim(), self.mu_theta0)
    }

    /// `C v`.
    pub fn mul(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.cov * v
    }

    pub fn mul_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        &self.cov * m
    }

    /// `C⁻¹ v`.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(v)
    }

    /// `C⁻¹ M`.
    pub fn solve_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(m)
    }

    pub fn log_det(&self) -> f64 {
        log_det_chol(&self.chol)
    }

    /// `(θ − μ₀)ᵀ C⁻¹ (θ − μ₀)`.
    pub fn mahalanobis(&self, theta: &DVector<f64>) -> f64 {
        let mut y = theta.add_scalar(-self.mu_theta0);
        // reads only the lower triangle of the stored factor
        self.chol.l_dirty().solve_lower_triangular_mut(&mut y);
        y.norm_squared()
    }

    /// `L ξ`, i.e. a zero-mean draw given standard normal `ξ`.
    pub fn correlate(&self, xi: &DVector<f64>) -> DVector<f64> {
        let l = self.chol.l_dirty();
        let n = self.dim();
        let mut out = DVector::zeros(n);
        for j in 0..n {
            let x = xi[j];
            if x == 0.0 {
                continue;
            }
            for i in j..n {
                out[i] += l[(i, j)] * x;
            }
        }
        out
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let xi = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        self.correlate(&xi).add_scalar(self.mu_theta0)
    }
}

/// One realization of the log-field `λ_g = μ_θ0·1 + L ξ`, deterministic in `seed`.
pub fn sample_log_field(prior: &FieldPrior, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    prior.sample_with(&mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_regular_mesh;

    #[test]
    fn diagonal_and_unit_distance_entries() {
        let pts = [[0.0, 0.0], [0.1, 0.0], [0.3, 0.4]];
        let p = build_covariance(&pts, 0.223, 0.1, -0.112).unwrap();
        let c = p.covariance();
        for i in 0..3 {
            assert_eq!(c[(i, i)], 0.223);
        }
        assert!((c[(0, 1)] - 0.223 * (-1.0f64).exp()).abs() < 1e-15);
        assert!((c[(0, 2)] - 0.223 * (-5.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_parameters() {
        let pts = [[0.0, 0.0]];
        assert!(build_covariance(&pts, 0.0, 0.1, 0.0).is_err());
        assert!(build_covariance(&pts, 1.0, -0.1, 0.0).is_err());
    }

    #[test]
    fn heat_grid_factorizes_and_is_symmetric() {
        let mesh = build_regular_mesh(40, 20, 2.0, 1.0).unwrap();
        let p = build_covariance(mesh.centroids(), SIGMA_G2, CORRELATION_LENGTH, MU_THETA0).unwrap();
        let c = p.covariance();
        assert_eq!((c - c.transpose()).amax(), 0.0);
        assert_eq!(p.nugget, 0.0);
        let l = p.chol_factor();
        let err = (&l * l.transpose() - c).amax();
        assert!(err < 1e-12, "reconstruction error {err}");
    }

    #[test]
    fn lognormal_mean_identity() {
        assert!(((MU_THETA0 + SIGMA_G2 / 2.0).exp() - 1.0).abs() < 1e-2);
        let cv = (SIGMA_G2.exp() - 1.0).sqrt();
        assert!((cv - 0.5).abs() < 1e-2);
    }

    #[test]
    fn sampling_is_reproducible() {
        let pts: Vec<Point> = (0..20).map(|i| [i as f64 * 0.05, 0.0]).collect();
        let p = build_covariance(&pts, 0.5, 0.1, 0.3).unwrap();
        let a = sample_log_field(&p, 11);
        let b = sample_log_field(&p, 11);
        assert_eq!(a, b);
        assert_ne!(a, sample_log_field(&p, 12));
    }

    #[test]
    fn mahalanobis_matches_dense_solve() {
        let pts: Vec<Point> = (0..15).map(|i| [(i % 5) as f64 * 0.07, (i / 5) as f64 * 0.05]).collect();
        let p = build_covariance(&pts, 0.4, 0.1, 0.2).unwrap();
        let theta = DVector::from_fn(15, |i, _| (i as f64).cos());
        let d = theta.add_scalar(-0.2);
        let direct = d.dot(&p.solve(&d));
        assert!((p.mahalanobis(&theta) - direct).abs() < 1e-9 * direct.abs());
    }
}
