//! Gauss-Newton on an exactly affine model reaches the regularized
//! least-squares solution in a single step.
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use vbdesign::map::{optimize_map, MapOptions};
use vbdesign::mesh::build_regular_mesh;
use vbdesign::problems::LinearModel;
use vbdesign::random_field::build_covariance;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mesh = build_regular_mesh(4, 2, 1.0, 0.5)?;
    let prior = Arc::new(build_covariance(mesh.centroids(), 0.3, 0.2, 0.1)?);
    let (n, d_t, d_z) = (6, prior.dim(), 4);
    let g_theta = DMatrix::from_fn(n, d_t, |i, j| ((i + 1) as f64 * (j + 2) as f64 * 0.37).cos());
    let g_z = DMatrix::from_fn(n, d_z, |i, j| ((i + 2) as f64 * (j + 1) as f64 * 0.53).sin());
    let target = DVector::from_fn(n, |i, _| 1.0 + i as f64);
    let model = LinearModel::new(DVector::zeros(n), g_theta.clone(), g_z.clone(), target.clone(), 50.0, prior.clone(), 1e-2)?;

    let map = optimize_map(&model, MapOptions::default())?;
    println!("{} forward calls, converged: {}", map.forward_calls, map.converged);

    // normal equations of the same quadratic objective
    let g = DMatrix::from_fn(n, d_t + d_z, |i, j| if j < d_t { g_theta[(i, j)] } else { g_z[(i, j - d_t)] });
    let mut h = 50.0 * g.transpose() * &g;
    let mut block = h.view_mut((0, 0), (d_t, d_t));
    block += prior.solve_mat(&DMatrix::identity(d_t, d_t));
    for k in 0..d_z {
        h[(d_t + k, d_t + k)] += 1e-2;
    }
    let mut rhs = 50.0 * g.transpose() * &target;
    let mut top = rhs.rows_mut(0, d_t);
    top += prior.solve(&prior.mean_vector());
    let x = h.cholesky().ok_or("normal equations not positive definite")?.solve(&rhs);
    let err_t = (&map.mu_theta - x.rows(0, d_t)).amax();
    let err_z = (&map.mu_z - x.rows(d_t, d_z)).amax();
    println!("max |mu_theta - direct| = {err_t:.3e}, max |mu_z - direct| = {err_z:.3e}");
    Ok(())
}
