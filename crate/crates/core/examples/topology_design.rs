//! Stochastic topology optimization of a clamped plate under a volume constraint.
//!
//! The design mean carries a bimodal prior whose spins are sampled with Gibbs
//! updates inside every Gauss-Newton iteration.
//!
//! ```text
//! cargo run --release --example topology_design -- [VF] [d_y]
//! ```
use std::time::Instant;

use vbdesign::map::{optimize_map, MapOptions};
use vbdesign::problems::{constraint_value_and_gradient, sigmoid, ForwardModel, TopologyConfig, TopologyProblem};
use vbdesign::vb::{run_vbem, sensitive_directions, ConstraintTerm, PriorConfig, VbemOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let vf: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.4);
    let d_y: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20);

    let problem = TopologyProblem::new(TopologyConfig { volume_fraction: vf, ..TopologyConfig::default() })?;
    let t = Instant::now();
    let map = optimize_map(&problem, MapOptions::default())?;
    println!(
        "MAP: F = {:.6e}, {} forward calls, converged: {}, beta = {:.3}, {:.1?}",
        map.f_mu,
        map.forward_calls,
        map.converged,
        map.beta.unwrap_or(f64::NAN),
        t.elapsed()
    );

    let desc = problem.constraint().expect("topology problem is constrained");
    let (c, f) = constraint_value_and_gradient(&desc, &map.mu_z);
    let solid = map.mu_z.iter().filter(|&&z| z > 0.0).count() as f64 / map.mu_z.len() as f64;
    println!("c(mu_z) = {c:.3e}, solid fraction = {solid:.3}");

    // coarse ascii rendering of the expected density, top row first
    let cfg = problem.config();
    for row in (0..cfg.ny).rev() {
        let line: String = (0..cfg.nx)
            .map(|col| {
                let cell = 2 * (col * cfg.ny + row);
                let rho = 0.5 * (sigmoid(map.mu_z[cell]) + sigmoid(map.mu_z[cell + 1]));
                if rho > 0.5 { '#' } else { '.' }
            })
            .collect();
        println!("{line}");
    }

    let prior = PriorConfig::new(1e4, 1e-10, problem.field_prior().clone())?;
    let constraint = Some(ConstraintTerm { c, f: &f, eps_c2: desc.eps_c2 });
    let options = VbemOptions { d_y, ..VbemOptions::default() };
    let vb = run_vbem(&map.lin, problem.u_target(), &map.mu_theta, &map.mu_z, &prior, problem.tau_q(), constraint, map.log_p_mu_z, options, None)?;
    let spectrum = sensitive_directions(&vb.state, &vb.params)?;
    let cos = spectrum.w_hat.column(0).dot(&f).abs() / f.norm();
    println!("VB-EM: F = {:.6e} after {} iterations", vb.f_final, vb.trace.len());
    println!("sigma2_1..3 = {:.3e} {:.3e} {:.3e}", spectrum.sigma2[0], spectrum.sigma2[1], spectrum.sigma2[2]);
    println!("|cos(w_1, f)| = {cos:.8}");
    Ok(())
}
