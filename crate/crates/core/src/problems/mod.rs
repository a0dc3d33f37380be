//! Forward models: the contract consumed by the optimizers, plus the two PDE
//! illustrations and an exactly linear model used as an oracle.

mod heat;
mod linear;
mod topo;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

pub use heat::{HeatFluxConfig, HeatFluxProblem};
pub use linear::LinearModel;
pub use topo::{TopologyConfig, TopologyProblem};

use crate::error::{Error, Result};
use crate::fem::OutputOperator;
use crate::mesh::{Mesh, Point};
use crate::random_field::FieldPrior;

/// Outputs and their Jacobians at one evaluation point.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub u: DVector<f64>,
    /// `∂u/∂θ`, n × d_θ.
    pub g_theta: DMatrix<f64>,
    /// `∂u/∂z`, n × d_z.
    pub g_z: DMatrix<f64>,
}

/// Volume-fraction equality constraint with its soft-enforcement variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintDescriptor {
    pub target_vf: f64,
    pub eps_c2: f64,
}

/// Regularization of the design mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MuZPrior {
    /// Zero-mean isotropic Gaussian with the given precision.
    Gaussian { precision: f64 },
    /// Two-mode mixture at `±m` with width `s2`, coupled through spins.
    Bimodal { m: f64, s2: f64 },
}

pub trait ForwardModel: Send + Sync {
    fn name(&self) -> &str;
    fn d_theta(&self) -> usize;
    fn d_z(&self) -> usize;
    fn u_target(&self) -> &DVector<f64>;
    fn tau_q(&self) -> f64;
    fn field_prior(&self) -> &Arc<FieldPrior>;
    fn mu_z_prior(&self) -> MuZPrior;
    fn initial_mu_z(&self) -> DVector<f64>;

    fn n_outputs(&self) -> usize {
        self.u_target().len()
    }

    fn constraint(&self) -> Option<ConstraintDescriptor> {
        None
    }

    /// Mesh carrying per-element fields, when the model has one.
    fn mesh(&self) -> Option<&Mesh> {
        None
    }

    fn evaluate(&self, theta: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>>;

    /// Outputs and Jacobians from one forward solve plus adjoints.
    fn linearize(&self, theta: &DVector<f64>, z: &DVector<f64>) -> Result<Linearization>;

    fn check_dims(&self, theta: &DVector<f64>, z: &DVector<f64>) -> Result<()> {
        if theta.len() != self.d_theta() {
            return Err(Error::DimensionMismatch { what: "theta", expected: self.d_theta(), got: theta.len() });
        }
        if z.len() != self.d_z() {
            return Err(Error::DimensionMismatch { what: "z", expected: self.d_z(), got: z.len() });
        }
        Ok(())
    }
}

/// `−(τ_Q/2)‖u_target − u‖²`.
pub fn log_utility(model: &dyn ForwardModel, u: &DVector<f64>) -> f64 {
    -0.5 * model.tau_q() * (model.u_target() - u).norm_squared()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `c(z) = mean σ(z_j) − VF` and its gradient `f_j = σ(z_j)(1 − σ(z_j))/d_z`.
pub fn constraint_value_and_gradient(desc: &ConstraintDescriptor, z: &DVector<f64>) -> (f64, DVector<f64>) {
    let d = z.len() as f64;
    let mut mean = 0.0;
    let f = z.map(|v| {
        let s = sigmoid(v);
        mean += s;
        s * (1.0 - s) / d
    });
    (mean / d - desc.target_vf, f)
}

/// Output operator sampling component `comp` of the nodal field at `points`,
/// each scaled by `sign`, by barycentric interpolation.
pub(crate) fn point_outputs(mesh: &Mesh, points: &[Point], dofs_per_node: usize, comp: usize, sign: f64) -> Result<OutputOperator> {
    let mut rows = Vec::with_capacity(points.len());
    for p in points {
        let loc = mesh
            .locate(*p)
            .ok_or_else(|| Error::InvalidArgument(format!("observation point {p:?} lies outside the mesh")))?;
        let tri = mesh.triangles()[loc.element];
        let row: Vec<(usize, f64)> = (0..3)
            .filter(|&k| loc.weights[k].abs() > 1e-12)
            .map(|k| (tri[k] * dofs_per_node + comp, sign * loc.weights[k]))
            .collect();
        rows.push(row);
    }
    Ok(OutputOperator { rows })
}
