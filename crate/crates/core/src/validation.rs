//! Importance-sampling check of the Gaussian approximation against the exact model.
//!
//! Draws from `q`, weighs each draw by the exact auxiliary density over `q`, and
//! reports `KL(q ‖ p_aux(· | R)) ≈ log⟨w⟩ − ⟨log w⟩`, normalized by the entropy of `q`.
//! Log-densities use the same constant convention as [`crate::vb::evaluate_f`], so
//! `⟨log w⟩` estimates the bound itself when the model is linear.

use std::f64::consts::PI;
use std::thread;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, log_sum_exp, Chol};
use crate::problems::{constraint_value_and_gradient, ForwardModel};
use crate::vb::{ModelParams, PriorConfig, ThetaBlock, VariationalState};

/// One draw from `q`.
#[derive(Debug, Clone)]
pub struct QSample {
    pub eta_theta: DVector<f64>,
    pub y: DVector<f64>,
    pub eta_z: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationReport {
    pub m: usize,
    pub log_mean_w: f64,
    pub mean_log_w: f64,
    pub kl: f64,
    /// Jackknife standard error of `kl`.
    pub kl_se: f64,
    pub h_q: f64,
    pub nkl: f64,
    pub nkl_se: f64,
    /// `(Σw)²/Σw²`.
    pub ess: f64,
    pub forward_calls: usize,
}

impl ValidationReport {
    /// `key = value` lines, 17 significant digits.
    pub fn to_text(&self) -> String {
        format!(
            "M = {}\nlog_mean_w = {:.16e}\nmean_log_w = {:.16e}\nKL = {:.16e}\nKL_se = {:.16e}\nH_q = {:.16e}\nnKL = {:.16e}\nnKL_se = {:.16e}\ness = {:.16e}\nforward_calls = {}\n",
            self.m, self.log_mean_w, self.mean_log_w, self.kl, self.kl_se, self.h_q, self.nkl, self.nkl_se, self.ess, self.forward_calls
        )
    }
}

/// Pieces of `q` reused across draws.
struct QFactors<'a> {
    state: &'a VariationalState,
    prior: &'a PriorConfig,
    w: &'a DMatrix<f64>,
    /// Cholesky factorization of `C_yy` (reduced) or of the joint covariance (dense).
    chol: Chol,
    l: DMatrix<f64>,
    log_det_joint: f64,
}

impl<'a> QFactors<'a> {
    fn new(state: &'a VariationalState, params: &'a ModelParams, prior: &'a PriorConfig) -> Result<Self> {
        let chol = match &state.theta {
            ThetaBlock::Dense(_) => cholesky(state.joint_covariance(&prior.field), "joint covariance")?,
            ThetaBlock::Reduced { .. } => cholesky(state.c_yy.clone(), "C_yy")?,
        };
        let log_det_joint = state.log_det_joint(&prior.field)?;
        let l = chol.l();
        Ok(Self { state, prior, w: &params.w, chol, l, log_det_joint })
    }

    fn d_theta(&self) -> usize {
        self.prior.field.dim()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> QSample {
        let dt = self.d_theta();
        let dy = self.state.d_y();
        let mut normal = |k: usize| DVector::from_iterator(k, (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let (eta_theta, y) = match &self.state.theta {
            ThetaBlock::Dense(_) => {
                let v = &self.l * normal(dt + dy);
                (v.rows(0, dt).into_owned(), v.rows(dt, dy).into_owned())
            }
            ThetaBlock::Reduced { coupling, x, .. } => {
                let y = &self.l * normal(dy);
                // conditional draw with covariance C − B N⁻¹ Bᵀ by perturbing a prior draw
                let prior_draw = self.prior.field.correlate(&normal(dt));
                // Bᵀ C⁻¹ d = Gθ d
                let g_draw = coupling.b.transpose() * self.prior.field.solve(&prior_draw);
                let noise = normal(coupling.n_outputs()) / coupling.tau_q.sqrt();
                let cond = &prior_draw - &coupling.b * coupling.n_solve_vec(&(g_draw + noise));
                (cond - x * &y, y)
            }
        };
        let xi = normal(self.w.nrows());
        let eta_z = (&xi - self.w * (self.w.transpose() * &xi)) / self.state.tau_z.sqrt();
        QSample { eta_theta, y, eta_z }
    }

    /// `log q` in the bound's convention: `−½ log|Σ| + ½ d_c log τ_z − ½ vᵀΣ⁻¹v − ½ τ_z‖η_z‖² + (d_θ + d_y + d_c)/2`
    /// with `d_c = d_z − d_y`.
    fn log_q(&self, s: &QSample) -> f64 {
        let dt = self.d_theta();
        let dy = self.state.d_y();
        let dc = (self.w.nrows() - dy) as f64;
        let quad = match &self.state.theta {
            ThetaBlock::Dense(_) => {
                let mut v = DVector::zeros(dt + dy);
                v.rows_mut(0, dt).copy_from(&s.eta_theta);
                v.rows_mut(dt, dy).copy_from(&s.y);
                v.dot(&self.chol.solve(&v))
            }
            ThetaBlock::Reduced { coupling, x, .. } => {
                // q(y) q(η_θ | y) with conditional precision C⁻¹ + τ GθᵀGθ
                let yq = s.y.dot(&self.chol.solve(&s.y));
                let e = &s.eta_theta + x * &s.y;
                let ce = self.prior.field.solve(&e);
                let ge = coupling.b.transpose() * &ce;
                let eq = e.dot(&ce) + coupling.tau_q * ge.norm_squared();
                yq + eq
            }
        };
        -0.5 * self.log_det_joint + 0.5 * dc * self.state.tau_z.ln() - 0.5 * quad - 0.5 * self.state.tau_z * s.eta_z.norm_squared()
            + 0.5 * (dt + dy) as f64
            + 0.5 * dc
    }
}

/// Draws `(η_θ, y, η_z)` from `q`. `W` must match the state.
pub fn sample_q<R: Rng + ?Sized>(
    state: &VariationalState,
    params: &ModelParams,
    prior: &PriorConfig,
    count: usize,
    rng: &mut R,
) -> Result<Vec<QSample>> {
    let f = QFactors::new(state, params, prior)?;
    Ok((0..count).map(|_| f.sample(rng)).collect())
}

/// Entropy of `q` as `−((d_θ + d_y)/2) log 2π − ½ log|Σ| − ((d_z − d_y)/2) log(2π/τ_z)`.
pub fn entropy_q(state: &VariationalState, params: &ModelParams, prior: &PriorConfig) -> Result<f64> {
    let dt = prior.field.dim() as f64;
    let dy = state.d_y() as f64;
    let dc = params.d_z() as f64 - dy;
    let log_det = state.log_det_joint(&prior.field)?;
    Ok(-0.5 * (dt + dy) * (2.0 * PI).ln() - 0.5 * log_det - 0.5 * dc * (2.0 * PI / state.tau_z).ln())
}

/// Validation inputs that do not depend on the draws.
#[derive(Debug, Clone, Copy)]
pub struct ValidationInputs<'a> {
    pub state: &'a VariationalState,
    pub params: &'a ModelParams,
    pub prior: &'a PriorConfig,
    pub log_p_mu_z: f64,
    /// Worker threads for the forward solves; `0` uses the available parallelism.
    pub threads: usize,
}

/// Importance-sampling estimate of `KL(q ‖ p_aux)` with `m` exact forward solves.
pub fn estimate_nkl<R: Rng + ?Sized>(model: &dyn ForwardModel, inputs: ValidationInputs<'_>, m: usize, rng: &mut R) -> Result<ValidationReport> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("validation needs at least 2 samples, got {m}")));
    }
    let ValidationInputs { state, params, prior, log_p_mu_z, threads } = inputs;
    let factors = QFactors::new(state, params, prior)?;
    let samples: Vec<QSample> = (0..m).map(|_| factors.sample(rng)).collect();

    let log_joint = |s: &QSample| -> Result<f64> {
        let theta = &params.mu_theta + &s.eta_theta;
        let z = &params.mu_z + &params.w * &s.y + &s.eta_z;
        let u = model.evaluate(&theta, &z)?;
        let mut lp = -0.5 * model.tau_q() * (model.u_target() - u).norm_squared() - 0.5 * prior.field.mahalanobis(&theta)
            - 0.5 * prior.tau_y0 * s.y.norm_squared()
            - 0.5 * prior.tau_z0() * s.eta_z.norm_squared()
            + log_p_mu_z;
        if let Some(desc) = model.constraint() {
            let (c, _) = constraint_value_and_gradient(&desc, &z);
            lp -= c * c / (2.0 * desc.eps_c2);
        }
        Ok(lp - factors.log_q(s))
    };

    let workers = if threads == 0 { thread::available_parallelism().map_or(1, |n| n.get()) } else { threads };
    let chunk = m.div_ceil(workers.max(1));
    let log_w: Vec<f64> = thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| scope.spawn(|| part.iter().map(&log_joint).collect::<Result<Vec<f64>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("validation worker panicked"))
            .collect::<Result<Vec<Vec<f64>>>>()
            .map(|parts| parts.concat())
    })?;

    let h_q = entropy_q(state, params, prior)?;
    summarize(&log_w, h_q)
}

/// Report from per-sample log-weights.
pub fn summarize(log_w: &[f64], h_q: f64) -> Result<ValidationReport> {
    let m = log_w.len();
    if log_w.iter().any(|v| v.is_nan()) || log_w.iter().all(|v| *v == f64::NEG_INFINITY) {
        return Err(Error::WeightUnderflow);
    }
    let kl_of = |lw: &mut dyn Iterator<Item = f64>| -> (f64, f64, f64) {
        let v: Vec<f64> = lw.collect();
        let n = v.len() as f64;
        let lme = log_sum_exp(&v) - n.ln();
        let ml = v.iter().sum::<f64>() / n;
        (lme, ml, lme - ml)
    };
    let (log_mean_w, mean_log_w, kl) = kl_of(&mut log_w.iter().copied());
    if !log_mean_w.is_finite() || !mean_log_w.is_finite() {
        return Err(Error::WeightUnderflow);
    }
    let loo: Vec<f64> = (0..m)
        .map(|i| kl_of(&mut log_w.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v)).2)
        .collect();
    let loo_mean = loo.iter().sum::<f64>() / m as f64;
    let kl_se = ((m as f64 - 1.0) / m as f64 * loo.iter().map(|v| (v - loo_mean).powi(2)).sum::<f64>()).sqrt();
    let ess = (2.0 * log_sum_exp(log_w) - log_sum_exp(&log_w.iter().map(|v| 2.0 * v).collect::<Vec<_>>())).exp();
    Ok(ValidationReport {
        m,
        log_mean_w,
        mean_log_w,
        kl,
        kl_se,
        h_q,
        nkl: kl / h_q,
        nkl_se: kl_se / h_q.abs(),
        ess,
        forward_calls: m,
    })
}
