use nalgebra::{DMatrix, DVector};

use super::{ModelParams, PriorConfig, ThetaBlock, VariationalState};
use crate::error::{Error, Result};
use crate::linalg::frob;

/// Soft constraint `c(μ_z)` with gradient `f` and variance `ε_c²`.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintTerm<'a> {
    pub c: f64,
    pub f: &'a DVector<f64>,
    pub eps_c2: f64,
}

/// Everything tied to the linearization point.
#[derive(Debug, Clone, Copy)]
pub struct BoundInputs<'a> {
    /// `u_target − u(μ_θ, μ_z)`.
    pub residual: &'a DVector<f64>,
    pub g_theta: &'a DMatrix<f64>,
    pub g_z: &'a DMatrix<f64>,
    pub constraint: Option<ConstraintTerm<'a>>,
    pub log_p_mu_z: f64,
}

/// The variational bound split into its named contributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTerms {
    pub utility: f64,
    pub theta_prior: f64,
    pub y_prior: f64,
    pub eta_z_prior: f64,
    pub entropy: f64,
    pub mu_z_prior: f64,
    pub constraint: f64,
    pub total: f64,
}

/// Variational lower bound `F(q, μ_z, W, μ_θ)` under the quadratic approximation, up to constants.
pub fn evaluate_f(
    state: &VariationalState,
    params: &ModelParams,
    prior: &PriorConfig,
    tau_q: f64,
    inputs: &BoundInputs<'_>,
) -> Result<BoundTerms> {
    let field = &prior.field;
    let w = &params.w;
    let (n, dz) = inputs.g_z.shape();
    let dy = w.ncols();
    let dt = field.dim();
    if inputs.residual.len() != n || inputs.g_theta.nrows() != n {
        return Err(Error::DimensionMismatch { what: "residual", expected: n, got: inputs.residual.len() });
    }
    if w.nrows() != dz || state.d_y() != dy {
        return Err(Error::DimensionMismatch { what: "W", expected: dz, got: w.nrows() });
    }
    let ddim = (dz - dy) as f64;
    let gzw = inputs.g_z * w;
    let c_yy = &state.c_yy;

    let (gtg_thth, cinv_thth) = match &state.theta {
        ThetaBlock::Dense(c) => {
            let gc = inputs.g_theta * c;
            let gtg = frob(&gc, inputs.g_theta);
            (gtg, field.solve_mat(c).trace())
        }
        ThetaBlock::Reduced { coupling, gx, xcx, .. } => {
            let k = &coupling.k;
            let nk = coupling.n_solve(k);
            let gtg = k.trace() - frob(k, &nk) + frob(&(gx * c_yy), gx);
            let cinv = dt as f64 - nk.trace() + frob(xcx, c_yy);
            (gtg, cinv)
        }
    };
    let gt_cthy = state.g_theta_c_thy(inputs.g_theta);
    let cross = frob(&gzw, &gt_cthy);
    let yy = frob(&(gzw.transpose() * &gzw), c_yy);
    let complement = (inputs.g_z - &gzw * w.transpose()).norm_squared() / state.tau_z;

    let utility = -0.5 * tau_q * (inputs.residual.norm_squared() + gtg_thth + yy + complement + 2.0 * cross);
    let theta_prior = -0.5 * field.mahalanobis(&params.mu_theta) - 0.5 * cinv_thth;
    let y_prior = -0.5 * prior.tau_y0 * c_yy.trace();
    let eta_z_prior = -0.5 * ddim * prior.tau_z0() / state.tau_z;
    let entropy = 0.5 * state.log_det_joint(field)? - 0.5 * ddim * state.tau_z.ln();
    let constraint = match inputs.constraint {
        None => 0.0,
        Some(ct) => {
            let wf = w.transpose() * ct.f;
            let rf = ct.f - w * &wf;
            let quad = (wf.transpose() * c_yy * &wf)[(0, 0)];
            -(ct.c * ct.c + quad + rf.norm_squared() / state.tau_z) / (2.0 * ct.eps_c2)
        }
    };
    let mu_z_prior = inputs.log_p_mu_z;

    let named = [
        ("utility", utility),
        ("theta_prior", theta_prior),
        ("y_prior", y_prior),
        ("eta_z_prior", eta_z_prior),
        ("entropy", entropy),
        ("mu_z_prior", mu_z_prior),
        ("constraint", constraint),
    ];
    for (name, v) in named {
        if !v.is_finite() {
            return Err(Error::NonFiniteBound(name));
        }
    }
    let total = utility + theta_prior + y_prior + eta_z_prior + entropy + mu_z_prior + constraint;
    Ok(BoundTerms { utility, theta_prior, y_prior, eta_z_prior, entropy, mu_z_prior, constraint, total })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;
    use crate::linalg::{orthonormalize, sym};
    use crate::random_field::FieldPrior;
    use crate::vb::{vb_expectation, vb_expectation_constrained};

    struct Toy {
        prior: PriorConfig,
        params: ModelParams,
        gt: DMatrix<f64>,
        gz: DMatrix<f64>,
        r: DVector<f64>,
        tau: f64,
    }

    fn toy(dt: usize, dz: usize, dy: usize, n: usize) -> Toy {
        let c0 = DMatrix::from_fn(dt, dt, |i, j| 0.5 * (-(i as f64 - j as f64).abs() / 1.5).exp());
        let field = Arc::new(FieldPrior::from_covariance(c0, 0.2, 0.5, 1.5).unwrap());
        let prior = PriorConfig::new(4.0, 0.05, field).unwrap();
        let w = orthonormalize(&DMatrix::from_fn(dz, dy, |i, j| ((2 * i + 5 * j) as f64 * 0.9).sin() + 0.05 * j as f64));
        let params = ModelParams {
            mu_z: DVector::from_fn(dz, |i, _| 0.1 * i as f64),
            w,
            mu_theta: DVector::from_fn(dt, |i, _| 0.3 - 0.1 * i as f64),
        };
        Toy {
            prior,
            params,
            gt: DMatrix::from_fn(n, dt, |i, j| ((i * dt + j) as f64 * 0.37).cos()),
            gz: DMatrix::from_fn(n, dz, |i, j| ((i * dz + j) as f64 * 0.61).sin()),
            r: DVector::from_fn(n, |i, _| 0.2 * (i as f64 - 1.0)),
            tau: 1.7,
        }
    }

    fn inputs(t: &Toy) -> BoundInputs<'_> {
        BoundInputs { residual: &t.r, g_theta: &t.gt, g_z: &t.gz, constraint: None, log_p_mu_z: -0.25 }
    }

    fn dense_state(c_thth: DMatrix<f64>, c_thy: DMatrix<f64>, c_yy: DMatrix<f64>, tau_z: f64) -> VariationalState {
        VariationalState { theta: ThetaBlock::Dense(c_thth), c_thy, c_yy, tau_z }
    }

    #[test]
    fn reduced_and_dense_paths_agree() {
        let t = toy(4, 6, 2, 3);
        let s = vb_expectation(&t.gt, &t.gz, &t.params, &t.prior, t.tau).unwrap();
        let d = dense_state(s.c_thth(&t.prior.field), s.c_thy.clone(), s.c_yy.clone(), s.tau_z);
        let a = evaluate_f(&s, &t.params, &t.prior, t.tau, &inputs(&t)).unwrap();
        let b = evaluate_f(&d, &t.params, &t.prior, t.tau, &inputs(&t)).unwrap();
        assert!((a.total - b.total).abs() < 1e-10 * (1.0 + a.total.abs()), "{a:?} vs {b:?}");
    }

    #[test]
    fn prior_state_is_deterministic() {
        let t = toy(3, 4, 1, 2);
        let z = DMatrix::zeros(2, 3);
        let zz = DMatrix::zeros(2, 4);
        let s = vb_expectation(&z, &zz, &t.params, &t.prior, t.tau).unwrap();
        let r = DVector::zeros(2);
        let inp = BoundInputs { residual: &r, g_theta: &z, g_z: &zz, constraint: None, log_p_mu_z: 0.0 };
        let a = evaluate_f(&s, &t.params, &t.prior, t.tau, &inp).unwrap();
        let b = evaluate_f(&s, &t.params, &t.prior, t.tau, &inp).unwrap();
        assert_eq!(a.total.to_bits(), b.total.to_bits());
        assert_eq!(a.utility, 0.0);
    }

    /// Random perturbations of the optimal state never increase F.
    #[test]
    fn estep_is_a_local_maximum() {
        let t = toy(3, 5, 2, 3);
        for constrained in [false, true] {
            let f = DVector::from_fn(5, |i, _| 0.3 - 0.1 * i as f64);
            let s = if constrained {
                vb_expectation_constrained(&t.gt, &t.gz, &t.params, &t.prior, t.tau, &f, 0.2).unwrap()
            } else {
                vb_expectation(&t.gt, &t.gz, &t.params, &t.prior, t.tau).unwrap()
            };
            let mut inp = inputs(&t);
            if constrained {
                inp.constraint = Some(ConstraintTerm { c: 0.05, f: &f, eps_c2: 0.2 });
            }
            let joint = s.joint_covariance(&t.prior.field);
            let best = evaluate_f(&s, &t.params, &t.prior, t.tau, &inp).unwrap().total;
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            for _ in 0..50 {
                let e = DMatrix::from_fn(5, 5, |_, _| StandardNormal.sample(&mut rng)) * 1e-3;
                let pert = sym(&(&joint + &e * e.transpose() - e.transpose() * &e * 0.5));
                let tz = s.tau_z * (1.0 + 1e-2 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng));
                let d = dense_state(
                    pert.view((0, 0), (3, 3)).into(),
                    pert.view((0, 3), (3, 2)).into(),
                    pert.view((3, 3), (2, 2)).into(),
                    tz,
                );
                if let Ok(v) = evaluate_f(&d, &t.params, &t.prior, t.tau, &inp) {
                    assert!(v.total <= best + 1e-12 * best.abs(), "perturbed {} > optimum {best}", v.total);
                }
            }
        }
    }
}
