//! A model whose outputs are exactly affine in `(θ, z)`.
//!
//! Its linearization is exact, which makes it the reference case for the
//! Gauss-Newton and importance-sampling oracles.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{ConstraintDescriptor, ForwardModel, Linearization, MuZPrior};
use crate::error::{Error, Result};
use crate::random_field::FieldPrior;

#[derive(Debug, Clone)]
pub struct LinearModel {
    pub offset: DVector<f64>,
    pub g_theta: DMatrix<f64>,
    pub g_z: DMatrix<f64>,
    pub u_target: DVector<f64>,
    pub tau_q: f64,
    pub prior: Arc<FieldPrior>,
    pub mu_z_prior: MuZPrior,
    pub constraint: Option<ConstraintDescriptor>,
}

impl LinearModel {
    pub fn new(
        offset: DVector<f64>,
        g_theta: DMatrix<f64>,
        g_z: DMatrix<f64>,
        u_target: DVector<f64>,
        tau_q: f64,
        prior: Arc<FieldPrior>,
        z_precision: f64,
    ) -> Result<Self> {
        let n = u_target.len();
        if offset.len() != n || g_theta.nrows() != n || g_z.nrows() != n {
            return Err(Error::DimensionMismatch { what: "linear model outputs", expected: n, got: offset.len() });
        }
        if g_theta.ncols() != prior.dim() {
            return Err(Error::DimensionMismatch { what: "linear model theta", expected: prior.dim(), got: g_theta.ncols() });
        }
        if !(tau_q > 0.0) {
            return Err(Error::InvalidArgument("tau_Q must be positive".into()));
        }
        Ok(Self {
            offset,
            g_theta,
            g_z,
            u_target,
            tau_q,
            prior,
            mu_z_prior: MuZPrior::Gaussian { precision: z_precision },
            constraint: None,
        })
    }
}

impl ForwardModel for LinearModel {
    fn name(&self) -> &str {
        "linear"
    }

    fn d_theta(&self) -> usize {
        self.g_theta.ncols()
    }

    fn d_z(&self) -> usize {
        self.g_z.ncols()
    }

    fn u_target(&self) -> &DVector<f64> {
        &self.u_target
    }

    fn tau_q(&self) -> f64 {
        self.tau_q
    }

    fn field_prior(&self) -> &Arc<FieldPrior> {
        &self.prior
    }

    fn mu_z_prior(&self) -> MuZPrior {
        self.mu_z_prior
    }

    fn initial_mu_z(&self) -> DVector<f64> {
        DVector::zeros(self.d_z())
    }

    fn constraint(&self) -> Option<ConstraintDescriptor> {
        self.constraint
    }

    fn evaluate(&self, theta: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dims(theta, z)?;
        Ok(&self.offset + &self.g_theta * theta + &self.g_z * z)
    }

    fn linearize(&self, theta: &DVector<f64>, z: &DVector<f64>) -> Result<Linearization> {
        Ok(Linearization { u: self.evaluate(theta, z)?, g_theta: self.g_theta.clone(), g_z: self.g_z.clone() })
    }
}
