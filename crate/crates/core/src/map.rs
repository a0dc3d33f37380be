//! Gauss-Newton point estimation of `(μ_θ, μ_z)`.
//!
//! Each step solves the linearized normal equations in output space: the
//! `θ`-block is eliminated through the Woodbury coupling and the remaining
//! `d_z` system `ρI + G_zᵀN⁻¹G_z` is inverted through a thin SVD, so no
//! `d_θ` or `d_z` sized factorization is ever formed.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::coupling::ThetaCoupling;
use crate::error::{Error, Result};
use crate::ising::{build_neighbor_graph, estimate_phi_mean, log_prior_mu_z, IsingOptions, TopoPriorState};
use crate::problems::{constraint_value_and_gradient, ForwardModel, Linearization, MuZPrior};
use crate::random_field::FieldPrior;

/// Quadratic regularizer `−(ρ/2)‖μ_z − center‖²` on the design mean.
#[derive(Debug, Clone)]
pub struct ZRegularizer {
    pub precision: f64,
    pub center: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct GnStep {
    pub d_theta: DVector<f64>,
    pub d_z: DVector<f64>,
    /// Multiplier of the linearized equality constraint, when one was imposed.
    pub lambda: Option<f64>,
}

/// Inverse of `S = ρI + G_zᵀ N⁻¹ G_z` through the SVD of `(L_N⁻¹ G_z)ᵀ`.
struct ZSolver {
    u: DMatrix<f64>,
    sigma: DVector<f64>,
    v_t: DMatrix<f64>,
    l_n: DMatrix<f64>,
    rho: f64,
}

impl ZSolver {
    fn new(coupling: &ThetaCoupling, g_z: &DMatrix<f64>, rho: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::SingularKkt);
        }
        let l_n = coupling.n_chol.l();
        let a = l_n.solve_lower_triangular(g_z).ok_or(Error::SingularKkt)?;
        let svd = a.transpose().svd(true, true);
        let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
            return Err(Error::SingularKkt);
        };
        Ok(Self { u, sigma: svd.singular_values, v_t, l_n, rho })
    }

    /// `S⁻¹ x`.
    fn solve(&self, x: &DVector<f64>) -> DVector<f64> {
        let ux = self.u.transpose() * x;
        let scaled = DVector::from_fn(ux.len(), |i, _| ux[i] / (self.sigma[i] * self.sigma[i] + self.rho));
        let inside = &self.u * &ux;
        &self.u * scaled + (x - inside) / self.rho
    }

    /// `S⁻¹ G_zᵀ v`, exact in range form so the `1/ρ` complement never multiplies roundoff.
    fn solve_range(&self, v: &DVector<f64>) -> DVector<f64> {
        let t = &self.v_t * (self.l_n.transpose() * v);
        let scaled = DVector::from_fn(t.len(), |i, _| {
            let s = self.sigma[i];
            t[i] * s / (s * s + self.rho)
        });
        &self.u * scaled
    }
}

/// One Gauss-Newton step at a linearization point.
///
/// `residual = u_target − u`. With `constraint = Some((c, f))` the step also
/// satisfies `c + fᵀΔμ_z = 0`.
#[allow(clippy::too_many_arguments)]
pub fn gn_step(
    lin: &Linearization,
    residual: &DVector<f64>,
    mu_theta: &DVector<f64>,
    mu_z: &DVector<f64>,
    coupling: &ThetaCoupling,
    field: &FieldPrior,
    zreg: &ZRegularizer,
    constraint: Option<(f64, &DVector<f64>)>,
) -> Result<GnStep> {
    let tau = coupling.tau_q;
    let dt = mu_theta.len();
    let (w, gw) = if coupling.fixed {
        (DVector::zeros(dt), DVector::zeros(residual.len()))
    } else {
        // w = C h_θ with h_θ = τ G_θᵀ r − C⁻¹(μ_θ − μ_θ0)
        let dth = mu_theta.add_scalar(-field.mu_theta0);
        let w = tau * (&coupling.b * residual) - &dth;
        let gw = tau * (&coupling.k * residual) - &lin.g_theta * &dth;
        (w, gw)
    };
    let n_gw = coupling.n_solve_vec(&gw);
    let v = tau * residual - &n_gw;

    let solver = ZSolver::new(coupling, &lin.g_z, zreg.precision)?;
    let offset = (mu_z - &zreg.center) * (-zreg.precision);
    let s_g = solver.solve_range(&v) + solver.solve(&offset);

    let (d_z, lambda) = match constraint {
        None => (s_g, None),
        Some((c, f)) => {
            let s_f = solver.solve(f);
            let denom = f.dot(&s_f);
            if !(denom > 0.0 && denom.is_finite()) {
                return Err(Error::SingularKkt);
            }
            let lambda = -(c + f.dot(&s_g)) / denom;
            (s_g + s_f * lambda, Some(lambda))
        }
    };
    let d_theta = if coupling.fixed {
        DVector::zeros(dt)
    } else {
        let coupled = coupling.n_solve_vec(&(&lin.g_z * &d_z));
        w - &coupling.b * (n_gw + coupled)
    };
    if d_theta.iter().chain(d_z.iter()).any(|x| !x.is_finite()) {
        return Err(Error::SingularKkt);
    }
    Ok(GnStep { d_theta, d_z, lambda })
}

/// Gradient of `F_μ` (plus `λ f` for an active constraint) with respect to `(μ_θ, μ_z)`.
pub fn objective_gradient(
    lin: &Linearization,
    residual: &DVector<f64>,
    mu_theta: &DVector<f64>,
    mu_z: &DVector<f64>,
    tau_q: f64,
    field: &FieldPrior,
    zreg: &ZRegularizer,
    multiplier: Option<(f64, &DVector<f64>)>,
) -> (DVector<f64>, DVector<f64>) {
    let g_theta = tau_q * lin.g_theta.transpose() * residual - field.solve(&mu_theta.add_scalar(-field.mu_theta0));
    let mut g_z = tau_q * lin.g_z.transpose() * residual - (mu_z - &zreg.center) * zreg.precision;
    if let Some((lambda, f)) = multiplier {
        g_z += f * lambda;
    }
    (g_theta, g_z)
}

#[derive(Debug, Clone, Copy)]
pub struct MapOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub max_halvings: usize,
    /// Hold `μ_θ = μ_θ0`, i.e. optimize the deterministic problem.
    pub fix_theta: bool,
    pub ising: IsingOptions,
    pub seed: u64,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self { max_iters: 100, tol: 1e-5, max_halvings: 20, fix_theta: false, ising: IsingOptions::default(), seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapRecord {
    pub iter: usize,
    pub f_mu: f64,
    pub forward_calls: usize,
    pub step_norm_theta: f64,
    pub step_norm_z: f64,
    pub constraint_c: f64,
}

#[derive(Debug, Clone)]
pub struct MapResult {
    pub mu_theta: DVector<f64>,
    pub mu_z: DVector<f64>,
    /// Outputs and Jacobians at the returned point.
    pub lin: Linearization,
    pub f_mu: f64,
    /// `log p_μz(μ_z)` at the returned point.
    pub log_p_mu_z: f64,
    pub zreg: ZRegularizer,
    pub lambda: Option<f64>,
    pub phi_mean: Option<DVector<f64>>,
    pub beta: Option<f64>,
    pub trace: Vec<MapRecord>,
    pub forward_calls: usize,
    pub converged: bool,
    /// Step halving failed to find an improving point.
    pub stalled: bool,
}

struct Objective<'a> {
    model: &'a dyn ForwardModel,
    fix_theta: bool,
}

impl Objective<'_> {
    fn log_p_mu_z(&self, mu_z: &DVector<f64>, zreg: &ZRegularizer, phi: Option<&DVector<f64>>) -> f64 {
        match (self.model.mu_z_prior(), phi) {
            (MuZPrior::Bimodal { m, s2 }, Some(phi)) => log_prior_mu_z(mu_z, phi, m, s2),
            _ => -0.5 * zreg.precision * (mu_z - &zreg.center).norm_squared(),
        }
    }

    fn f_mu(&self, lin: &Linearization, mu_theta: &DVector<f64>, mu_z: &DVector<f64>, zreg: &ZRegularizer, phi: Option<&DVector<f64>>) -> f64 {
        let r = self.model.u_target() - &lin.u;
        let prior_theta = if self.fix_theta { 0.0 } else { -0.5 * self.model.field_prior().mahalanobis(mu_theta) };
        -0.5 * self.model.tau_q() * r.norm_squared() + prior_theta + self.log_p_mu_z(mu_z, zreg, phi)
    }

    fn constraint_c(&self, mu_z: &DVector<f64>) -> f64 {
        self.model.constraint().map_or(0.0, |d| constraint_value_and_gradient(&d, mu_z).0)
    }
}

/// Second-order correction: Newton steps along `∇c` back onto `c(z) = 0`.
/// The constraint is cheap, so this costs no forward solve.
fn restore_feasibility(model: &dyn ForwardModel, mut z: DVector<f64>) -> DVector<f64> {
    let Some(desc) = model.constraint() else { return z };
    for _ in 0..20 {
        let (c, f) = constraint_value_and_gradient(&desc, &z);
        let ff = f.norm_squared();
        if c.abs() <= 1e-15 || ff == 0.0 {
            break;
        }
        z.axpy(-c / ff, &f, 1.0);
    }
    z
}

fn rel(step: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let s = step.norm();
    if s == 0.0 {
        0.0
    } else {
        s / x.norm().max(f64::MIN_POSITIVE)
    }
}

/// Damped Gauss-Newton from `μ_θ = μ_θ0` and the model's initial design.
pub fn optimize_map(model: &dyn ForwardModel, options: MapOptions) -> Result<MapResult> {
    let field = model.field_prior().clone();
    let tau = model.tau_q();
    let obj = Objective { model, fix_theta: options.fix_theta };
    let mut mu_theta = field.mean_vector();
    let mut mu_z = model.initial_mu_z();
    let mut calls = 0usize;
    let mut lin = model.linearize(&mu_theta, &mu_z)?;
    calls += 1;

    let mut ising = match model.mu_z_prior() {
        MuZPrior::Bimodal { m, s2 } => {
            let mesh = model
                .mesh()
                .ok_or_else(|| Error::InvalidArgument("a bimodal design prior needs a mesh for its neighbor graph".into()))?;
            Some(TopoPriorState::new(build_neighbor_graph(mesh), m, s2, &options.ising))
        }
        MuZPrior::Gaussian { .. } => None,
    };
    let zreg_for = |mu_z: &DVector<f64>, ising: &mut Option<TopoPriorState>| -> ZRegularizer {
        match (model.mu_z_prior(), ising.as_mut()) {
            (MuZPrior::Bimodal { m, s2 }, Some(st)) => {
                // common random numbers: same seed and start at every iteration
                st.reset(mu_z);
                let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
                let phi = estimate_phi_mean(st, mu_z, options.ising.sweeps, options.ising.burn_in, &mut rng);
                ZRegularizer { precision: 1.0 / s2, center: phi * m }
            }
            (MuZPrior::Gaussian { precision }, _) => ZRegularizer { precision, center: DVector::zeros(mu_z.len()) },
            (MuZPrior::Bimodal { .. }, None) => unreachable!("state built above"),
        }
    };
    let phi_of = |ising: &Option<TopoPriorState>| ising.as_ref().map(|s| s.phi_mean.clone());

    let mut zreg = zreg_for(&mu_z, &mut ising);
    let mut phi = phi_of(&ising);
    let mut trace = vec![MapRecord {
        iter: 0,
        f_mu: obj.f_mu(&lin, &mu_theta, &mu_z, &zreg, phi.as_ref()),
        forward_calls: calls,
        step_norm_theta: 0.0,
        step_norm_z: 0.0,
        constraint_c: obj.constraint_c(&mu_z),
    }];
    let mut rho_pen = 0.0f64;
    let mut converged = false;
    let mut stalled = false;
    let mut lambda = None;
    // the trial step length carries over; it doubles after two first-try acceptances
    let mut alpha0 = 1.0f64;
    let mut easy = 0usize;

    for iter in 1..=options.max_iters {
        if iter > 1 {
            zreg = zreg_for(&mu_z, &mut ising);
            phi = phi_of(&ising);
        }
        let coupling = if options.fix_theta {
            ThetaCoupling::fixed(mu_theta.len(), lin.u.len(), tau)?
        } else {
            ThetaCoupling::new(&field, &lin.g_theta, tau)?
        };
        let cons = model.constraint().map(|d| constraint_value_and_gradient(&d, &mu_z));
        let residual = model.u_target() - &lin.u;
        let step = gn_step(&lin, &residual, &mu_theta, &mu_z, &coupling, &field, &zreg, cons.as_ref().map(|(c, f)| (*c, f)))?;
        lambda = step.lambda;
        if let Some(l) = step.lambda {
            rho_pen = rho_pen.max(1.5 * l.abs());
        }
        if rel(&step.d_theta, &mu_theta) < options.tol && rel(&step.d_z, &mu_z) < options.tol {
            converged = true;
            break;
        }

        let merit = |lin: &Linearization, th: &DVector<f64>, z: &DVector<f64>| {
            obj.f_mu(lin, th, z, &zreg, phi.as_ref()) - rho_pen * obj.constraint_c(z).abs()
        };
        let current = merit(&lin, &mu_theta, &mu_z);
        let mut alpha = alpha0;
        let mut accepted = None;
        for h in 0..=options.max_halvings {
            let th = &mu_theta + &step.d_theta * alpha;
            let z = restore_feasibility(model, &mu_z + &step.d_z * alpha);
            calls += 1;
            if let Ok(l) = model.linearize(&th, &z) {
                let m = merit(&l, &th, &z);
                if m.is_finite() && m >= current {
                    accepted = Some((th, z, l));
                    easy = if h == 0 { easy + 1 } else { 0 };
                    alpha0 = if easy >= 2 { (2.0 * alpha).min(1.0) } else { alpha };
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((th, z, l)) = accepted else {
            stalled = true;
            break;
        };
        let (nt, nz) = ((&th - &mu_theta).norm(), (&z - &mu_z).norm());
        mu_theta = th;
        mu_z = z;
        lin = l;
        trace.push(MapRecord {
            iter,
            f_mu: obj.f_mu(&lin, &mu_theta, &mu_z, &zreg, phi.as_ref()),
            forward_calls: calls,
            step_norm_theta: nt,
            step_norm_z: nz,
            constraint_c: obj.constraint_c(&mu_z),
        });
    }

    let f_mu = obj.f_mu(&lin, &mu_theta, &mu_z, &zreg, phi.as_ref());
    let log_p_mu_z = obj.log_p_mu_z(&mu_z, &zreg, phi.as_ref());
    let beta = ising.as_ref().map(|s| s.beta);
    Ok(MapResult {
        mu_theta,
        mu_z,
        lin,
        f_mu,
        log_p_mu_z,
        zreg,
        lambda,
        phi_mean: phi,
        beta,
        trace,
        forward_calls: calls,
        converged,
        stalled,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::problems::LinearModel;

    fn linear_model() -> LinearModel {
        let c0 = DMatrix::from_fn(5, 5, |i, j| 0.4 * (-(i as f64 - j as f64).abs() / 2.0).exp());
        let field = Arc::new(FieldPrior::from_covariance(c0, -0.1, 0.4, 2.0).unwrap());
        LinearModel::new(
            DVector::from_vec(vec![0.3, -0.2, 0.1]),
            DMatrix::from_fn(3, 5, |i, j| ((i * 5 + j) as f64 * 0.71).sin()),
            DMatrix::from_fn(3, 7, |i, j| ((i * 7 + j) as f64 * 0.43).cos()),
            DVector::from_vec(vec![1.0, 0.5, -0.4]),
            30.0,
            field,
            0.2,
        )
        .unwrap()
    }

    #[test]
    fn one_step_solves_linear_least_squares() {
        let m = linear_model();
        let field = m.prior.clone();
        let th0 = field.mean_vector();
        let z0 = DVector::zeros(7);
        let lin = m.linearize(&th0, &z0).unwrap();
        let r = &m.u_target - &lin.u;
        let coupling = ThetaCoupling::new(&field, &lin.g_theta, m.tau_q).unwrap();
        let zreg = ZRegularizer { precision: 0.2, center: DVector::zeros(7) };
        let st = gn_step(&lin, &r, &th0, &z0, &coupling, &field, &zreg, None).unwrap();

        // direct normal equations
        let g = {
            let mut g = DMatrix::zeros(3, 12);
            g.view_mut((0, 0), (3, 5)).copy_from(&m.g_theta);
            g.view_mut((0, 5), (3, 7)).copy_from(&m.g_z);
            g
        };
        let mut h = m.tau_q * g.transpose() * &g;
        let cinv = field.covariance().clone().try_inverse().unwrap();
        let mut hv = h.view_mut((0, 0), (5, 5));
        hv += &cinv;
        for i in 5..12 {
            h[(i, i)] += 0.2;
        }
        let rhs = m.tau_q * g.transpose() * &r;
        let x = h.lu().solve(&rhs).unwrap();
        assert!((st.d_theta - x.rows(0, 5)).amax() < 1e-10);
        assert!((st.d_z - x.rows(5, 7)).amax() < 1e-10);
    }

    #[test]
    fn stationary_point_gives_zero_step() {
        let mut m = linear_model();
        let field = m.prior.clone();
        let th0 = field.mean_vector();
        let z0 = DVector::zeros(7);
        m.u_target = m.evaluate(&th0, &z0).unwrap();
        let lin = m.linearize(&th0, &z0).unwrap();
        let r = &m.u_target - &lin.u;
        let coupling = ThetaCoupling::new(&field, &lin.g_theta, m.tau_q).unwrap();
        let zreg = ZRegularizer { precision: 0.2, center: DVector::zeros(7) };
        let st = gn_step(&lin, &r, &th0, &z0, &coupling, &field, &zreg, None).unwrap();
        assert!(st.d_theta.amax() < 1e-14 && st.d_z.amax() < 1e-14);
    }

    #[test]
    fn constrained_step_satisfies_linearization() {
        let m = linear_model();
        let field = m.prior.clone();
        let th0 = field.mean_vector();
        let z0 = DVector::from_element(7, 0.3);
        let lin = m.linearize(&th0, &z0).unwrap();
        let r = &m.u_target - &lin.u;
        let coupling = ThetaCoupling::new(&field, &lin.g_theta, m.tau_q).unwrap();
        let zreg = ZRegularizer { precision: 1.0, center: DVector::zeros(7) };
        let f = DVector::from_fn(7, |i, _| 0.1 + 0.02 * i as f64);
        let st = gn_step(&lin, &r, &th0, &z0, &coupling, &field, &zreg, Some((0.05, &f))).unwrap();
        assert!((0.05 + f.dot(&st.d_z)).abs() < 1e-13);
        // KKT stationarity of the quadratic model
        let th1 = &th0 + &st.d_theta;
        let z1 = &z0 + &st.d_z;
        let lin1 = m.linearize(&th1, &z1).unwrap();
        let r1 = &m.u_target - &lin1.u;
        let (gt, gz) = objective_gradient(&lin1, &r1, &th1, &z1, m.tau_q, &field, &zreg, Some((st.lambda.unwrap(), &f)));
        assert!(gt.amax() < 1e-9 && gz.amax() < 1e-9, "{gt} {gz}");
    }

    #[test]
    fn optimize_linear_model_converges() {
        let m = linear_model();
        let res = optimize_map(&m, MapOptions::default()).unwrap();
        assert!(res.converged);
        assert!(res.forward_calls <= 4, "{}", res.forward_calls);
        let r = &m.u_target - &res.lin.u;
        let zreg = ZRegularizer { precision: 0.2, center: DVector::zeros(7) };
        let (gt, gz) = objective_gradient(&res.lin, &r, &res.mu_theta, &res.mu_z, m.tau_q, &m.prior, &zreg, None);
        assert!(gt.norm() + gz.norm() < 1e-6 * (1.0 + res.f_mu.abs()));
        for w in res.trace.windows(2) {
            assert!(w[1].f_mu >= w[0].f_mu);
            assert_eq!(w[1].forward_calls, w[0].forward_calls + 1);
        }
    }
}
