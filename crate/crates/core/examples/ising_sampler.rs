//! Gibbs sampling of the spin field behind the bimodal topology prior.
//!
//! With a zero design mean only the coupling `β` shapes the spins; negative
//! values favor aligned neighbors and grow patches.
//!
//! ```text
//! cargo run --release --example ising_sampler -- [beta]
//! ```
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vbdesign::ising::{build_neighbor_graph, gibbs_sweep, IsingOptions, TopoPriorState};
use vbdesign::mesh::build_regular_mesh;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let beta: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(-0.8);
    let (nx, ny) = (32, 16);
    let mesh = build_regular_mesh(nx, ny, 2.0, 1.0)?;
    let options = IsingOptions { beta_step: None, ..IsingOptions::default() };
    let mut state = TopoPriorState::new(build_neighbor_graph(&mesh), 999f64.ln(), 1.0, &options);
    state.beta = beta;
    let mu = DVector::zeros(mesh.n_elements());
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    for sweep in 1..=400 {
        gibbs_sweep(&mut state, &mu, &mut rng);
        if sweep % 100 == 0 {
            let mut agree = 0.0;
            let mut pairs = 0.0;
            for (j, nb) in state.neighbors.iter().enumerate() {
                for &k in nb {
                    agree += f64::from(state.phi[j] * state.phi[k]);
                    pairs += 1.0;
                }
            }
            let magnet = state.phi.iter().map(|&p| f64::from(p)).sum::<f64>() / state.phi.len() as f64;
            println!("sweep {sweep:>3}: neighbor correlation {:+.3}, magnetization {magnet:+.3}", agree / pairs);
        }
    }

    // one character per grid cell, from the lower-left triangle
    for row in (0..ny).rev() {
        let line: String = (0..nx).map(|col| if state.phi[2 * (col * ny + row)] > 0 { '#' } else { '.' }).collect();
        println!("{line}");
    }
    Ok(())
}
