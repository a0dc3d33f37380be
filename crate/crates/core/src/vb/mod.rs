//! Gaussian variational family over `(η_θ, y, η_z)` and its closed-form updates.
//!
//! The approximating density factorizes as `q(η_θ, y) q(η_z)`, with `z = μ_z + W y + η_z`
//! and `η_z` confined to the orthogonal complement of `span(W)` with precision `τ_z`.

mod bound;
mod em;
mod estep;
mod spectrum;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

pub use bound::{evaluate_f, BoundInputs, BoundTerms, ConstraintTerm};
pub use em::{random_orthonormal, run_vbem, VbemOptions, VbemRecord, VbemResult};
pub use estep::{vb_expectation, vb_expectation_constrained, vb_expectation_with};
pub use spectrum::{sample_designs, sensitive_directions, SensitivitySpectrum};

use crate::coupling::ThetaCoupling;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, log_det_chol};
use crate::random_field::FieldPrior;

/// Priors on `y`, `η_z` and the field `θ`.
#[derive(Debug, Clone)]
pub struct PriorConfig {
    pub tau_y0: f64,
    pub eps2: f64,
    pub field: Arc<FieldPrior>,
}

impl PriorConfig {
    pub fn new(tau_y0_inv: f64, eps2: f64, field: Arc<FieldPrior>) -> Result<Self> {
        if !(tau_y0_inv > 0.0 && tau_y0_inv.is_finite()) {
            return Err(Error::InvalidArgument(format!("tau_y0_inv must be positive, got {tau_y0_inv}")));
        }
        if !(eps2 > 0.0 && eps2 < 1.0) {
            return Err(Error::InvalidArgument(format!("eps2 must lie in (0, 1), got {eps2}")));
        }
        Ok(Self { tau_y0: 1.0 / tau_y0_inv, eps2, field })
    }

    /// `τ_z0 = τ_y0 ε²`, i.e. the complement prior is wider by `1/ε²`.
    pub fn tau_z0(&self) -> f64 {
        self.tau_y0 * self.eps2
    }
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub mu_z: DVector<f64>,
    pub w: DMatrix<f64>,
    pub mu_theta: DVector<f64>,
}

impl ModelParams {
    pub fn d_y(&self) -> usize {
        self.w.ncols()
    }

    pub fn d_z(&self) -> usize {
        self.w.nrows()
    }
}

/// The `η_θ` covariance, either explicit or through the output-space reduction.
#[derive(Debug, Clone)]
pub enum ThetaBlock {
    Dense(DMatrix<f64>),
    /// `C_θθ = C − B N⁻¹ Bᵀ + X C_yy Xᵀ`, `C_θy = −X C_yy`.
    Reduced {
        coupling: Arc<ThetaCoupling>,
        x: DMatrix<f64>,
        /// `G_θ X`, n × d_y.
        gx: DMatrix<f64>,
        /// `Xᵀ C⁻¹ X`, d_y × d_y.
        xcx: DMatrix<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct VariationalState {
    pub theta: ThetaBlock,
    pub c_thy: DMatrix<f64>,
    pub c_yy: DMatrix<f64>,
    pub tau_z: f64,
}

impl VariationalState {
    pub fn d_y(&self) -> usize {
        self.c_yy.nrows()
    }

    /// Explicit `C_θθ`. Quadratic in `d_θ`; intended for moderate sizes and tests.
    pub fn c_thth(&self, prior: &FieldPrior) -> DMatrix<f64> {
        match &self.theta {
            ThetaBlock::Dense(c) => c.clone(),
            ThetaBlock::Reduced { coupling, x, .. } => {
                let b = &coupling.b;
                let mut c = prior.covariance() - b * coupling.n_solve(&b.transpose());
                c += x * &self.c_yy * x.transpose();
                crate::linalg::sym(&c)
            }
        }
    }

    /// The joint `(η_θ, y)` covariance as one dense matrix.
    pub fn joint_covariance(&self, prior: &FieldPrior) -> DMatrix<f64> {
        let dt = self.c_thy.nrows();
        let dy = self.d_y();
        let mut s = DMatrix::zeros(dt + dy, dt + dy);
        s.view_mut((0, 0), (dt, dt)).copy_from(&self.c_thth(prior));
        s.view_mut((0, dt), (dt, dy)).copy_from(&self.c_thy);
        s.view_mut((dt, 0), (dy, dt)).copy_from(&self.c_thy.transpose());
        s.view_mut((dt, dt), (dy, dy)).copy_from(&self.c_yy);
        s
    }

    /// `log det` of the joint `(η_θ, y)` covariance.
    pub fn log_det_joint(&self, prior: &FieldPrior) -> Result<f64> {
        match &self.theta {
            ThetaBlock::Dense(_) => Ok(log_det_chol(&cholesky(self.joint_covariance(prior), "joint covariance")?)),
            ThetaBlock::Reduced { coupling, .. } => {
                let n = coupling.n_outputs() as f64;
                let ld_yy = log_det_chol(&cholesky(self.c_yy.clone(), "C_yy")?);
                Ok(prior.log_det() - n * coupling.tau_q.ln() - coupling.log_det_n + ld_yy)
            }
        }
    }

    /// `G_θ C_θy`, n × d_y.
    pub fn g_theta_c_thy(&self, g_theta: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.theta {
            ThetaBlock::Dense(_) => g_theta * &self.c_thy,
            ThetaBlock::Reduced { gx, .. } => -(gx * &self.c_yy),
        }
    }

    /// Design covariance `C_zz = W C_yy Wᵀ + τ_z⁻¹(I − WWᵀ)`.
    pub fn c_zz(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let dz = w.nrows();
        let wwt = w * w.transpose();
        let mut c = w * &self.c_yy * w.transpose() - wwt / self.tau_z;
        for i in 0..dz {
            c[(i, i)] += 1.0 / self.tau_z;
        }
        c
    }
}
