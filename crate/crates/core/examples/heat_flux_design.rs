//! Flux design on a conducting plate with an uncertain log-normal conductivity.
//!
//! Finds the MAP flux profile, then runs VB-EM to expose the flux directions
//! the expected utility is most sensitive to.
//!
//! ```text
//! cargo run --release --example heat_flux_design -- [d_y]
//! ```
use vbdesign::map::{optimize_map, MapOptions};
use vbdesign::problems::{ForwardModel, HeatFluxConfig, HeatFluxProblem};
use vbdesign::vb::{run_vbem, sensitive_directions, PriorConfig, VbemOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let d_y: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(10);
    let problem = HeatFluxProblem::new(HeatFluxConfig::default())?;
    println!("d_theta = {}, d_z = {}, outputs = {}", problem.d_theta(), problem.d_z(), problem.n_outputs());

    let map = optimize_map(&problem, MapOptions::default())?;
    println!("MAP: F = {:.6e} after {} forward calls (converged: {})", map.f_mu, map.forward_calls, map.converged);
    println!("{:>6} {:>14}", "x2", "mu_z");
    for (x2, z) in problem.design_coordinates().iter().zip(map.mu_z.iter()) {
        println!("{x2:>6.2} {z:>14.4e}");
    }
    let misfit = problem.u_target() - &map.lin.u;
    println!("max |u_target - u| = {:.3e}", misfit.amax());

    let prior = PriorConfig::new(1e4, 1e-10, problem.field_prior().clone())?;
    let options = VbemOptions { d_y, ..VbemOptions::default() };
    let vb = run_vbem(&map.lin, problem.u_target(), &map.mu_theta, &map.mu_z, &prior, problem.tau_q(), None, map.log_p_mu_z, options, None)?;
    println!("VB-EM: F = {:.6e} after {} iterations, tau_z = {:.3e}", vb.f_final, vb.trace.len(), vb.state.tau_z);

    let spectrum = sensitive_directions(&vb.state, &vb.params)?;
    for (j, s2) in spectrum.sigma2.iter().enumerate() {
        println!("sigma2_{} = {s2:.4e}", j + 1);
    }
    let w1: Vec<String> = spectrum.w_hat.column(0).iter().map(|v| format!("{v:+.3}")).collect();
    println!("w_1 = [{}]", w1.join(" "));
    Ok(())
}
