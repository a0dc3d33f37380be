use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{ModelParams, VariationalState};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, normalize_column_signs, sym_eigen_ascending};

/// Design directions ordered from most to least sensitive.
#[derive(Debug, Clone)]
pub struct SensitivitySpectrum {
    /// `W U`, d_z × d_y.
    pub w_hat: DMatrix<f64>,
    /// Ascending variances of `q` along each column of `w_hat`.
    pub sigma2: DVector<f64>,
}

/// Diagonalizes `C_yy = U diag(σ²) Uᵀ` and rotates `W` accordingly.
///
/// Column signs are fixed so the largest-magnitude entry of each `ŵ_j` is positive.
pub fn sensitive_directions(state: &VariationalState, params: &ModelParams) -> Result<SensitivitySpectrum> {
    let (sigma2, u) = sym_eigen_ascending(&state.c_yy)?;
    if sigma2[0] <= 0.0 {
        return Err(Error::DegenerateCovariance("C_yy"));
    }
    let mut w_hat = &params.w * u;
    normalize_column_signs(&mut w_hat);
    Ok(SensitivitySpectrum { w_hat, sigma2 })
}

/// Designs `z = μ_z + W y` with `y` uniform on the ellipsoid `yᵀ C_yy⁻¹ y = −2 ln(level)`.
///
/// Under the Gaussian approximation the expected utility of each sample is
/// `level` times that of `μ_z`.
pub fn sample_designs<R: Rng + ?Sized>(
    params: &ModelParams,
    state: &VariationalState,
    level: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("utility level must lie in (0, 1), got {level}")));
    }
    let chol = cholesky(state.c_yy.clone(), "C_yy").map_err(|_| Error::DegenerateCovariance("C_yy"))?;
    let l = chol.l();
    let radius = (-2.0 * level.ln()).sqrt();
    let dy = state.d_y();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let g = DVector::from_iterator(dy, (0..dy).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let norm = g.norm();
        if norm < 1e-300 {
            continue;
        }
        let y = &l * (g * (radius / norm));
        out.push(&params.mu_z + &params.w * y);
    }
    Ok(out)
}
