use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{evaluate_f, vb_expectation_with, BoundInputs, ConstraintTerm, ModelParams, PriorConfig, VariationalState};
use crate::coupling::ThetaCoupling;
use crate::error::{Error, Result};
use crate::linalg::orthonormalize;
use crate::problems::Linearization;
use crate::stiefel::{optimize_w, StiefelOptions, StiefelProblem};

#[derive(Debug, Clone, Copy)]
pub struct VbemOptions {
    pub d_y: usize,
    /// Stiefel steps per M-step.
    pub w_steps: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Consecutive iterations below `rel_tol` required to stop.
    pub patience: usize,
    pub seed: u64,
}

impl Default for VbemOptions {
    fn default() -> Self {
        Self { d_y: 10, w_steps: 100, max_iters: 200, rel_tol: 1e-8, patience: 3, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VbemRecord {
    pub iter: usize,
    pub f_after_e: f64,
    pub f_after_m: f64,
    pub tau_z: f64,
    pub w_steps: usize,
    pub w_stalled: bool,
}

#[derive(Debug, Clone)]
pub struct VbemResult {
    pub params: ModelParams,
    /// Optimal `q` for the returned `W`.
    pub state: VariationalState,
    pub f_final: f64,
    pub trace: Vec<VbemRecord>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// Orthonormalized standard-normal `d_z × d_y` matrix.
pub fn random_orthonormal(d_z: usize, d_y: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    orthonormalize(&DMatrix::from_fn(d_z, d_y, |_, _| StandardNormal.sample(&mut rng)))
}

/// Alternates the closed-form `q` update with Stiefel optimization of `W`
/// at a fixed linearization point. No forward solves are performed.
#[allow(clippy::too_many_arguments)]
pub fn run_vbem(
    lin: &Linearization,
    u_target: &DVector<f64>,
    mu_theta: &DVector<f64>,
    mu_z: &DVector<f64>,
    prior: &PriorConfig,
    tau_q: f64,
    constraint: Option<ConstraintTerm<'_>>,
    log_p_mu_z: f64,
    options: VbemOptions,
    w0: Option<DMatrix<f64>>,
) -> Result<VbemResult> {
    let dz = lin.g_z.ncols();
    if options.d_y == 0 || options.d_y > dz {
        return Err(Error::InvalidArgument(format!("d_y must lie in 1..={dz}, got {}", options.d_y)));
    }
    let coupling = Arc::new(ThetaCoupling::new(&prior.field, &lin.g_theta, tau_q)?);
    let residual = u_target - &lin.u;
    let inputs = BoundInputs { residual: &residual, g_theta: &lin.g_theta, g_z: &lin.g_z, constraint, log_p_mu_z };
    let c_pair = constraint.map(|c| (c.f, c.eps_c2));

    let mut params = ModelParams {
        mu_z: mu_z.clone(),
        w: w0.unwrap_or_else(|| random_orthonormal(dz, options.d_y, options.seed)),
        mu_theta: mu_theta.clone(),
    };
    let mut trace = Vec::new();
    let mut warnings = Vec::new();
    let mut quiet = 0;
    let mut converged = false;
    let mut previous: Option<f64> = None;

    for iter in 1..=options.max_iters {
        let state = vb_expectation_with(&coupling, &lin.g_theta, &lin.g_z, &params.w, prior, c_pair)?;
        let f_after_e = evaluate_f(&state, &params, prior, tau_q, &inputs)?.total;

        let problem = StiefelProblem::from_state(&state, &lin.g_theta, &lin.g_z, tau_q, c_pair);
        let rep = optimize_w(&problem, &params.w, StiefelOptions { max_steps: options.w_steps, tol: 1e-8 })?;
        if rep.stalled && !rep.precision_floor {
            warnings.push(format!("iteration {iter}: W line search stalled"));
        }
        if rep.reorthonormalized {
            warnings.push(format!("iteration {iter}: W re-orthonormalized after drift"));
        }
        params.w = rep.w;
        let f_after_m = evaluate_f(&state, &params, prior, tau_q, &inputs)?.total;
        trace.push(VbemRecord { iter, f_after_e, f_after_m, tau_z: state.tau_z, w_steps: rep.steps, w_stalled: rep.stalled });

        if let Some(prev) = previous {
            let rel = (f_after_m - prev).abs() / f_after_m.abs().max(f64::MIN_POSITIVE);
            quiet = if rel < options.rel_tol { quiet + 1 } else { 0 };
            if quiet >= options.patience {
                converged = true;
                break;
            }
        }
        previous = Some(f_after_m);
    }

    let state = vb_expectation_with(&coupling, &lin.g_theta, &lin.g_z, &params.w, prior, c_pair)?;
    let f_final = evaluate_f(&state, &params, prior, tau_q, &inputs)?.total;
    Ok(VbemResult { params, state, f_final, trace, converged, warnings })
}
