//! Importance-sampling check of the Gaussian approximation on the heat problem.
//!
//! Sweeps the number of sensitive directions and reports the normalized KL
//! divergence between `q` and the exact posterior, with its jackknife error.
//! Pass `linear` to replace the PDE by its linearization at the MAP point; the
//! weights then measure only the Gaussian-family error.
//!
//! ```text
//! cargo run --release --example validation_nkl -- [M] [linear]
//! ```
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vbdesign::map::{optimize_map, MapOptions};
use vbdesign::problems::{ForwardModel, HeatFluxConfig, HeatFluxProblem, LinearModel};
use vbdesign::validation::{estimate_nkl, ValidationInputs};
use vbdesign::vb::{run_vbem, PriorConfig, VbemOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let m: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let linear = args.next().as_deref() == Some("linear");

    let problem = HeatFluxProblem::new(HeatFluxConfig::default())?;
    let map = optimize_map(&problem, MapOptions::default())?;
    let prior = PriorConfig::new(1e4, 1e-10, problem.field_prior().clone())?;
    let lin = &map.lin;
    let surrogate = LinearModel::new(
        &lin.u - &lin.g_theta * &map.mu_theta - &lin.g_z * &map.mu_z,
        lin.g_theta.clone(),
        lin.g_z.clone(),
        problem.u_target().clone(),
        problem.tau_q(),
        problem.field_prior().clone(),
        1e-10,
    )?;
    let model: &dyn ForwardModel = if linear { &surrogate } else { &problem };

    println!("{:>4} {:>14} {:>14} {:>11} {:>9} {:>9} {:>8}", "d_y", "F", "<log w>", "KL", "H(q)", "nKL", "ESS");
    for d_y in [1, 2, 5, 10, 20] {
        let options = VbemOptions { d_y, ..VbemOptions::default() };
        let vb = run_vbem(lin, problem.u_target(), &map.mu_theta, &map.mu_z, &prior, problem.tau_q(), None, map.log_p_mu_z, options, None)?;
        let inputs = ValidationInputs { state: &vb.state, params: &vb.params, prior: &prior, log_p_mu_z: map.log_p_mu_z, threads: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = estimate_nkl(model, inputs, m, &mut rng)?;
        println!(
            "{d_y:>4} {:>14.6e} {:>14.6e} {:>11.3e} {:>9.2} {:>9.2e} {:>8.1}",
            vb.f_final, r.mean_log_w, r.kl, r.h_q, r.nkl, r.ess
        );
    }
    Ok(())
}
