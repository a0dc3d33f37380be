//! Optimization of the sensitive-direction basis `W` over the Stiefel manifold.
//!
//! Iterates stay exactly column-orthonormal through the Cayley transform; step
//! sizes come from Barzilai-Borwein with a non-monotone Armijo line search.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{frob, orthonormality_error, orthonormalize, sym};
use crate::vb::VariationalState;

const W_TOLERANCE: f64 = 1e-8;
const DRIFT_TOLERANCE: f64 = 1e-10;
const WINDOW: usize = 5;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 30;
const STEP_MIN: f64 = 1e-10;
const STEP_MAX: f64 = 1e10;

/// The `W`-dependent part of the bound for a fixed `q`.
#[derive(Debug, Clone)]
pub struct StiefelProblem {
    /// n × d_z. `G_zᵀG_z` is only ever applied through this factor.
    pub g_z: DMatrix<f64>,
    pub tau_q: f64,
    /// `τ_Q G_zᵀ G_θ C_θy`, d_z × d_y.
    pub cross: DMatrix<f64>,
    pub c_yy: DMatrix<f64>,
    pub tau_z: f64,
    /// Constraint gradient `f` and its variance `ε_c²`.
    pub constraint: Option<(DVector<f64>, f64)>,
}

impl StiefelProblem {
    pub fn from_state(
        state: &VariationalState,
        g_theta: &DMatrix<f64>,
        g_z: &DMatrix<f64>,
        tau_q: f64,
        constraint: Option<(&DVector<f64>, f64)>,
    ) -> Self {
        let cross = tau_q * g_z.transpose() * state.g_theta_c_thy(g_theta);
        Self {
            g_z: g_z.clone(),
            tau_q,
            cross,
            c_yy: state.c_yy.clone(),
            tau_z: state.tau_z,
            constraint: constraint.map(|(f, e)| (f.clone(), e)),
        }
    }

    fn check(&self, w: &DMatrix<f64>) -> Result<()> {
        if w.nrows() != self.g_z.ncols() || w.ncols() != self.c_yy.nrows() {
            return Err(Error::DimensionMismatch { what: "W", expected: self.g_z.ncols(), got: w.nrows() });
        }
        let err = orthonormality_error(w);
        if err > W_TOLERANCE {
            return Err(Error::NotOrthonormal(err));
        }
        Ok(())
    }

    /// `S = C_yy − τ_z⁻¹ I`.
    fn s_matrix(&self) -> DMatrix<f64> {
        let mut s = self.c_yy.clone();
        for i in 0..s.nrows() {
            s[(i, i)] -= 1.0 / self.tau_z;
        }
        s
    }

    /// `M W = τ G_zᵀ G_z W + f fᵀW / ε_c²`.
    fn m_times(&self, w: &DMatrix<f64>, gzw: &DMatrix<f64>) -> DMatrix<f64> {
        let mut mw = self.tau_q * self.g_z.transpose() * gzw;
        if let Some((f, e)) = &self.constraint {
            mw += f * (w.transpose() * f).transpose() / *e;
        }
        mw
    }

    fn wmw(&self, w: &DMatrix<f64>, gzw: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = self.tau_q * gzw.transpose() * gzw;
        if let Some((f, e)) = &self.constraint {
            let wf = w.transpose() * f;
            a += &wf * wf.transpose() / *e;
        }
        a
    }

    /// `F_W(W) = −½ WᵀMW : (C_yy − τ_z⁻¹I) − Wᵀ : cross`.
    pub fn objective_fw(&self, w: &DMatrix<f64>) -> Result<f64> {
        self.check(w)?;
        let gzw = &self.g_z * w;
        Ok(-0.5 * frob(&self.wmw(w, &gzw), &self.s_matrix()) - frob(w, &self.cross))
    }

    /// Euclidean gradient `J = ∂F_W/∂W = −M W (C_yy − τ_z⁻¹I) − cross`.
    pub fn gradient_j(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(w)?;
        let gzw = &self.g_z * w;
        Ok(-(self.m_times(w, &gzw) * self.s_matrix()) - &self.cross)
    }

    /// `½ τ_z⁻¹ tr M`, the constant separating `F_W` from [`Self::loss`].
    pub fn offset(&self) -> f64 {
        let mut tr = self.tau_q * self.g_z.norm_squared();
        if let Some((f, e)) = &self.constraint {
            tr += f.norm_squared() / e;
        }
        0.5 * tr / self.tau_z
    }

    /// `offset − F_W`, evaluated without the large cancelling constant.
    ///
    /// Uses `tr(WᵀMW) = tr M − tr((I − WWᵀ)M)` with the complement computed from residuals.
    pub fn loss(&self, w: &DMatrix<f64>) -> f64 {
        let gzw = &self.g_z * w;
        let mut rest = self.tau_q * (&self.g_z - &gzw * w.transpose()).norm_squared();
        if let Some((f, e)) = &self.constraint {
            rest += (f - w * (w.transpose() * f)).norm_squared() / e;
        }
        0.5 * frob(&self.wmw(w, &gzw), &self.c_yy) + frob(w, &self.cross) + 0.5 * rest / self.tau_z
    }

    /// Tangent-space gradient of [`Self::loss`], i.e. `−(J − W sym(WᵀJ))`, in the
    /// residual form that avoids the `τ_z⁻¹ M W` cancellation.
    pub fn loss_gradient(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let gzw = &self.g_z * w;
        let a = self.m_times(w, &gzw) * &self.c_yy + &self.cross;
        let mut g = &a - w * sym(&(w.transpose() * &a));
        let resid = &self.g_z - &gzw * w.transpose();
        let mut qmw = self.tau_q * resid.transpose() * &gzw;
        if let Some((f, e)) = &self.constraint {
            let wf = w.transpose() * f;
            qmw += (f - w * &wf) * wf.transpose() / *e;
        }
        g -= qmw / self.tau_z;
        g
    }
}

/// Projection of `J` onto the tangent space at `W`: `J − W sym(WᵀJ)`.
pub fn project_tangent(w: &DMatrix<f64>, j: &DMatrix<f64>) -> DMatrix<f64> {
    j - w * sym(&(w.transpose() * j))
}

/// `W' = (I + (a/2)A)⁻¹(I − (a/2)A) W` with `A = J Wᵀ − W Jᵀ`, through a 2d_y × 2d_y system.
pub fn cayley_step(w: &DMatrix<f64>, j: &DMatrix<f64>, a: f64) -> Result<DMatrix<f64>> {
    if a == 0.0 {
        return Ok(w.clone());
    }
    let (dz, dy) = w.shape();
    let mut u = DMatrix::zeros(dz, 2 * dy);
    u.view_mut((0, 0), (dz, dy)).copy_from(j);
    u.view_mut((0, dy), (dz, dy)).copy_from(w);
    let mut v = DMatrix::zeros(dz, 2 * dy);
    v.view_mut((0, 0), (dz, dy)).copy_from(w);
    v.view_mut((0, dy), (dz, dy)).copy_from(&(-j));
    let vt = v.transpose();
    let mut small = &vt * &u * (0.5 * a);
    for i in 0..2 * dy {
        small[(i, i)] += 1.0;
    }
    let rhs = &vt * w;
    let sol = small.lu().solve(&rhs).ok_or(Error::SingularCayley(a))?;
    if sol.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularCayley(a));
    }
    Ok(w - (u * sol) * a)
}

/// The same transform through the full d_z × d_z inverse. Reference implementation.
pub fn cayley_step_full(w: &DMatrix<f64>, j: &DMatrix<f64>, a: f64) -> Result<DMatrix<f64>> {
    let dz = w.nrows();
    let big = j * w.transpose() - w * j.transpose();
    let eye = DMatrix::<f64>::identity(dz, dz);
    let lhs = &eye + &big * (0.5 * a);
    let rhs = (&eye - &big * (0.5 * a)) * w;
    lhs.lu().solve(&rhs).ok_or(Error::SingularCayley(a))
}

#[derive(Debug, Clone, Copy)]
pub struct StiefelOptions {
    pub max_steps: usize,
    pub tol: f64,
}

impl Default for StiefelOptions {
    fn default() -> Self {
        Self { max_steps: 100, tol: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StiefelStep {
    pub step: usize,
    pub f_w: f64,
    pub grad_norm: f64,
    pub a: f64,
}

#[derive(Debug, Clone)]
pub struct StiefelReport {
    pub w: DMatrix<f64>,
    pub steps: usize,
    pub f_w_start: f64,
    pub f_w_end: f64,
    pub converged: bool,
    /// The line search exhausted its halvings.
    pub stalled: bool,
    /// The stall happened where the predicted decrease is below the loss round-off.
    pub precision_floor: bool,
    /// Orthonormality drift exceeded tolerance and `W` was re-orthonormalized.
    pub reorthonormalized: bool,
    pub trace: Vec<StiefelStep>,
}

/// Maximizes `F_W` from `w0`. Returns the best iterate seen.
pub fn optimize_w(problem: &StiefelProblem, w0: &DMatrix<f64>, options: StiefelOptions) -> Result<StiefelReport> {
    problem.check(w0)?;
    let offset = problem.offset();
    let mut w = w0.clone();
    let mut phi = problem.loss(&w);
    let mut g = problem.loss_gradient(&w);
    let g0 = g.norm();
    let mut trace = vec![StiefelStep { step: 0, f_w: offset - phi, grad_norm: g0, a: 0.0 }];
    let mut report = StiefelReport {
        w: w.clone(),
        steps: 0,
        f_w_start: offset - phi,
        f_w_end: offset - phi,
        converged: false,
        stalled: false,
        precision_floor: false,
        reorthonormalized: false,
        trace: Vec::new(),
    };
    if g0 <= options.tol * (1.0 + phi.abs()) || g0 == 0.0 {
        report.converged = true;
        report.trace = trace;
        return Ok(report);
    }

    // Work on the objective scaled by the initial gradient norm so step sizes are O(1).
    let scale = 1.0 / g0;
    let mut best_phi = phi;
    let mut history: VecDeque<f64> = VecDeque::from([phi * scale]);
    let mut a = 0.1;

    for step in 1..=options.max_steps {
        let gs = &g * scale;
        let reference = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (dz, dy) = w.shape();
        let mut uu = DMatrix::zeros(dz, 2 * dy);
        uu.view_mut((0, 0), (dz, dy)).copy_from(&gs);
        uu.view_mut((0, dy), (dz, dy)).copy_from(&w);
        let mut vv = DMatrix::zeros(dz, 2 * dy);
        vv.view_mut((0, 0), (dz, dy)).copy_from(&w);
        vv.view_mut((0, dy), (dz, dy)).copy_from(&(-&gs));
        let slope = -0.5 * frob(&(uu.transpose() * &uu), &(vv.transpose() * &vv));

        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            if let Ok(cand) = cayley_step(&w, &gs, a) {
                let p = problem.loss(&cand);
                if p.is_finite() && p * scale <= reference + ARMIJO * a * slope {
                    accepted = Some((cand, p));
                    break;
                }
            }
            a *= 0.5;
        }
        let Some((mut w_new, mut phi_new)) = accepted else {
            report.stalled = true;
            // the last trial predicted a decrease below the resolution of the loss
            let predicted = 2.0 * a * slope.abs() / scale;
            report.precision_floor = predicted <= 64.0 * f64::EPSILON * (offset.abs() + phi.abs());
            break;
        };
        if orthonormality_error(&w_new) > DRIFT_TOLERANCE {
            w_new = orthonormalize(&w_new);
            phi_new = problem.loss(&w_new);
            report.reorthonormalized = true;
        }
        let g_new = problem.loss_gradient(&w_new);
        let gn = g_new.norm();
        trace.push(StiefelStep { step, f_w: offset - phi_new, grad_norm: gn, a });
        report.steps = step;

        let s = &w_new - &w;
        let y = (&g_new - &g) * scale;
        let sy = frob(&s, &y).abs();
        let bb = if step % 2 == 1 { s.norm_squared() / sy } else { sy / y.norm_squared() };
        a = if bb.is_finite() { bb.clamp(STEP_MIN, STEP_MAX) } else { STEP_MAX };

        w = w_new;
        phi = phi_new;
        g = g_new;
        if phi < best_phi {
            best_phi = phi;
            report.w = w.clone();
        }
        history.push_back(phi * scale);
        if history.len() > WINDOW {
            history.pop_front();
        }
        if gn <= options.tol * (1.0 + phi.abs()) {
            report.converged = true;
            break;
        }
    }
    report.f_w_end = offset - best_phi;
    report.trace = trace;
    Ok(report)
}
