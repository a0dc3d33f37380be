//! Feasible Cayley-transform ascent on the Stiefel manifold.
//!
//! A small synthetic problem with a known answer: without coupling terms the
//! optimal subspace is spanned by the leading right singular vectors of `G_z`.
use nalgebra::{DMatrix, DVector};
use vbdesign::linalg::orthonormality_error;
use vbdesign::stiefel::{optimize_w, StiefelOptions, StiefelProblem};
use vbdesign::vb::random_orthonormal;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (n, d_z, d_y) = (12, 30, 4);
    let g_z = DMatrix::from_fn(n, d_z, |i, j| (((i + 1) * (j + 2)) as f64 * 0.61).sin() / (1.0 + j as f64));
    let problem = StiefelProblem {
        g_z: g_z.clone(),
        tau_q: 1.0,
        cross: DMatrix::zeros(d_z, d_y),
        c_yy: DMatrix::from_diagonal(&DVector::from_element(d_y, 1e-3)),
        tau_z: 1.0,
        constraint: None,
    };
    let w0 = random_orthonormal(d_z, d_y, 7);
    let report = optimize_w(&problem, &w0, StiefelOptions { max_steps: 500, tol: 1e-10 })?;
    println!("F_W: {:.10e} -> {:.10e} in {} steps (converged: {})", report.f_w_start, report.f_w_end, report.steps, report.converged);
    for s in report.trace.iter().step_by(25) {
        println!("  step {:>4}  F_W = {:.10e}  |grad| = {:.3e}  a = {:.3e}", s.step, s.f_w, s.grad_norm, s.a);
    }
    println!("orthonormality error = {:.3e}", orthonormality_error(&report.w));

    let svd = g_z.svd(false, true);
    let v = svd.v_t.expect("requested").transpose().columns(0, d_y).into_owned();
    let overlap = (v.transpose() * &report.w).singular_values();
    let cosines: Vec<String> = overlap.iter().map(|c| format!("{c:.10}")).collect();
    println!("principal-angle cosines against the top right singular vectors: {}", cosines.join(" "));
    Ok(())
}
