//! Output-space reduction of the θ-block.
//!
//! With `B = C Gθᵀ`, `K = Gθ C Gθᵀ` and `N = τ⁻¹I + K`, the push-through and
//! Woodbury identities give
//!
//! ```text
//! (τ GθᵀGθ + C⁻¹)⁻¹        = C − B N⁻¹ Bᵀ
//! (τ GθᵀGθ + C⁻¹)⁻¹ τ Gθᵀ  = B N⁻¹
//! τI − τ² Gθ (…)⁻¹ Gθᵀ     = N⁻¹
//! ```
//!
//! so every update touches `C` only through products with `n` columns.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::linalg::{cholesky, log_det_chol, Chol};
use crate::random_field::FieldPrior;

#[derive(Debug, Clone)]
pub struct ThetaCoupling {
    /// `C Gθᵀ`, d_θ × n.
    pub b: DMatrix<f64>,
    /// `Gθ C Gθᵀ`, n × n.
    pub k: DMatrix<f64>,
    pub n_chol: Chol,
    pub log_det_n: f64,
    pub tau_q: f64,
    /// θ is held fixed (zero prior covariance).
    pub fixed: bool,
}

impl ThetaCoupling {
    pub fn new(prior: &FieldPrior, g_theta: &DMatrix<f64>, tau_q: f64) -> Result<Self> {
        let b = prior.mul_mat(&g_theta.transpose());
        let k = crate::linalg::sym(&(g_theta * &b));
        Self::from_parts(b, k, tau_q, false)
    }

    /// Coupling for a deterministic θ: `B = 0`, `K = 0`, `N = τ⁻¹I`.
    pub fn fixed(d_theta: usize, n: usize, tau_q: f64) -> Result<Self> {
        Self::from_parts(DMatrix::zeros(d_theta, n), DMatrix::zeros(n, n), tau_q, true)
    }

    fn from_parts(b: DMatrix<f64>, k: DMatrix<f64>, tau_q: f64, fixed: bool) -> Result<Self> {
        let mut n = k.clone();
        for i in 0..n.nrows() {
            n[(i, i)] += 1.0 / tau_q;
        }
        let n_chol = cholesky(n, "output-space covariance N")?;
        let log_det_n = log_det_chol(&n_chol);
        Ok(Self { b, k, n_chol, log_det_n, tau_q, fixed })
    }

    pub fn n_outputs(&self) -> usize {
        self.k.nrows()
    }

    pub fn n_solve(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.n_chol.solve(m)
    }

    pub fn n_solve_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        self.n_chol.solve(v)
    }

    /// `(τ GθᵀGθ + C⁻¹)⁻¹ v` given `w = C v`-type input already multiplied by `C`.
    ///
    /// Callers pass `cv = C·h` and `g_cv = Gθ·cv`; returns `cv − B N⁻¹ g_cv`.
    pub fn apply_h_inv(&self, cv: &DVector<f64>, g_cv: &DVector<f64>) -> DVector<f64> {
        cv - &self.b * self.n_solve_vec(g_cv)
    }
}
