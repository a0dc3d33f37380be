use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{ModelParams, PriorConfig, ThetaBlock, VariationalState};
use crate::coupling::ThetaCoupling;
use crate::error::{Error, Result};
use crate::linalg::{orthonormality_error, spd_inverse, sym};

const W_TOLERANCE: f64 = 1e-8;

/// Optimal `q` for fixed `(μ_θ, μ_z, W)`.
pub fn vb_expectation(
    g_theta: &DMatrix<f64>,
    g_z: &DMatrix<f64>,
    params: &ModelParams,
    prior: &PriorConfig,
    tau_q: f64,
) -> Result<VariationalState> {
    let coupling = Arc::new(ThetaCoupling::new(&prior.field, g_theta, tau_q)?);
    vb_expectation_with(&coupling, g_theta, g_z, &params.w, prior, None)
}

/// As [`vb_expectation`], with the soft volume constraint folded into the `y` and `η_z` blocks.
pub fn vb_expectation_constrained(
    g_theta: &DMatrix<f64>,
    g_z: &DMatrix<f64>,
    params: &ModelParams,
    prior: &PriorConfig,
    tau_q: f64,
    f: &DVector<f64>,
    eps_c2: f64,
) -> Result<VariationalState> {
    let coupling = Arc::new(ThetaCoupling::new(&prior.field, g_theta, tau_q)?);
    vb_expectation_with(&coupling, g_theta, g_z, &params.w, prior, Some((f, eps_c2)))
}

/// E-step reusing a precomputed coupling. The coupling depends only on the
/// linearization point, so a VB-EM loop builds it once.
pub fn vb_expectation_with(
    coupling: &Arc<ThetaCoupling>,
    g_theta: &DMatrix<f64>,
    g_z: &DMatrix<f64>,
    w: &DMatrix<f64>,
    prior: &PriorConfig,
    constraint: Option<(&DVector<f64>, f64)>,
) -> Result<VariationalState> {
    let (n, dz) = g_z.shape();
    let dy = w.ncols();
    if w.nrows() != dz {
        return Err(Error::DimensionMismatch { what: "W rows", expected: dz, got: w.nrows() });
    }
    if coupling.n_outputs() != n || g_theta.nrows() != n {
        return Err(Error::DimensionMismatch { what: "Jacobian rows", expected: coupling.n_outputs(), got: n });
    }
    if dy == 0 || dy > dz {
        return Err(Error::InvalidArgument(format!("d_y must lie in 1..={dz}, got {dy}")));
    }
    let err = orthonormality_error(w);
    if err > W_TOLERANCE {
        return Err(Error::NotOrthonormal(err));
    }
    let tau = coupling.tau_q;

    let gzw = g_z * w;
    let p = coupling.n_solve(&gzw);
    let mut prec_yy = gzw.transpose() * &p;
    for i in 0..dy {
        prec_yy[(i, i)] += prior.tau_y0;
    }
    let mut complement = tau * (g_z - &gzw * w.transpose()).norm_squared();
    if let Some((f, eps_c2)) = constraint {
        if f.len() != dz {
            return Err(Error::DimensionMismatch { what: "constraint gradient", expected: dz, got: f.len() });
        }
        let wf = w.transpose() * f;
        prec_yy += &wf * wf.transpose() / eps_c2;
        complement += (f - w * &wf).norm_squared() / eps_c2;
    }
    let (c_yy, _) = spd_inverse(sym(&prec_yy), "y-block precision")?;

    let tau_z = if dz > dy { prior.tau_z0() + complement / (dz - dy) as f64 } else { prior.tau_z0() };

    let x = &coupling.b * &p;
    let gx = &coupling.k * &p;
    let xcx = sym(&(p.transpose() * &gx));
    let c_thy = -(&x * &c_yy);
    Ok(VariationalState {
        theta: ThetaBlock::Reduced { coupling: Arc::clone(coupling), x, gx, xcx },
        c_thy,
        c_yy,
        tau_z,
    })
}
