//! Bimodal prior on the topology design mean with an auto-logistic spin field.
//!
//! Each element carries a spin `φ_j ∈ {−1, +1}` selecting the mode `±m` of its
//! design mean; neighboring spins interact through the coupling `β`.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::mesh::Mesh;
use crate::problems::sigmoid;

#[derive(Debug, Clone, Copy)]
pub struct IsingOptions {
    pub sweeps: usize,
    pub burn_in: usize,
    /// Random-walk proposal width for `β`; `None` keeps `β` fixed.
    pub beta_step: Option<f64>,
    pub beta_bounds: (f64, f64),
}

impl Default for IsingOptions {
    fn default() -> Self {
        Self { sweeps: 500, burn_in: 100, beta_step: Some(0.1), beta_bounds: (-2.0, 2.0) }
    }
}

#[derive(Debug, Clone)]
pub struct TopoPriorState {
    pub phi: Vec<i8>,
    pub beta: f64,
    pub m: f64,
    pub s2: f64,
    pub neighbors: Vec<Vec<usize>>,
    pub phi_mean: DVector<f64>,
    pub beta_step: Option<f64>,
    pub beta_bounds: (f64, f64),
}

/// Elements are neighbors iff they share an edge.
pub fn build_neighbor_graph(mesh: &Mesh) -> Vec<Vec<usize>> {
    mesh.edge_neighbors()
}

impl TopoPriorState {
    pub fn new(neighbors: Vec<Vec<usize>>, m: f64, s2: f64, options: &IsingOptions) -> Self {
        let n = neighbors.len();
        Self {
            phi: vec![1; n],
            beta: 0.0,
            m,
            s2,
            neighbors,
            phi_mean: DVector::zeros(n),
            beta_step: options.beta_step,
            beta_bounds: options.beta_bounds,
        }
    }

    /// Spins set to the sign of `μ_z` (ties go to `+1`), `β = 0`.
    pub fn reset(&mut self, mu_z: &DVector<f64>) {
        for (p, v) in self.phi.iter_mut().zip(mu_z.iter()) {
            *p = if *v < 0.0 { -1 } else { 1 };
        }
        self.beta = 0.0;
    }

    fn neighbor_sum(&self, j: usize) -> f64 {
        self.neighbors[j].iter().map(|&k| f64::from(self.phi[k])).sum()
    }

    /// `log` pseudo-likelihood of the current spins at coupling `beta`.
    fn log_pseudo_likelihood(&self, beta: f64) -> f64 {
        (0..self.phi.len())
            .map(|j| {
                let h = beta * self.neighbor_sum(j);
                let a = h.abs();
                // log(2 cosh h) computed without overflow
                -f64::from(self.phi[j]) * h - (a + (-2.0 * a).exp().ln_1p())
            })
            .sum()
    }
}

/// One raster-scan sweep of single-site updates followed by one Metropolis step on `β`.
///
/// The spin conditional is `p(φ_j = +1 | ·) = σ(2(m μ_j / s² − β Σ_{k∼j} φ_k))`.
pub fn gibbs_sweep<R: Rng + ?Sized>(state: &mut TopoPriorState, mu_z: &DVector<f64>, rng: &mut R) {
    for j in 0..state.phi.len() {
        let field = state.m * mu_z[j] / state.s2 - state.beta * state.neighbor_sum(j);
        let p_up = sigmoid(2.0 * field);
        state.phi[j] = if rng.random::<f64>() < p_up { 1 } else { -1 };
    }
    if let Some(step) = state.beta_step {
        let proposal = state.beta + Normal::new(0.0, step).expect("positive proposal width").sample(rng);
        let (lo, hi) = state.beta_bounds;
        if proposal >= lo && proposal <= hi {
            let log_ratio = state.log_pseudo_likelihood(proposal) - state.log_pseudo_likelihood(state.beta);
            if rng.random::<f64>().ln() < log_ratio {
                state.beta = proposal;
            }
        }
    }
}

/// Post-burn-in average of the spins. Stores the result in `state.phi_mean`.
pub fn estimate_phi_mean<R: Rng + ?Sized>(
    state: &mut TopoPriorState,
    mu_z: &DVector<f64>,
    sweeps: usize,
    burn_in: usize,
    rng: &mut R,
) -> DVector<f64> {
    assert!(sweeps > burn_in, "sweeps must exceed burn-in");
    let mut acc = DVector::zeros(state.phi.len());
    for s in 0..sweeps {
        gibbs_sweep(state, mu_z, rng);
        if s >= burn_in {
            for (a, p) in acc.iter_mut().zip(&state.phi) {
                *a += f64::from(*p);
            }
        }
    }
    acc /= (sweeps - burn_in) as f64;
    state.phi_mean = acc.clone();
    acc
}

/// `−(1/2s²)(μ_zᵀμ_z − 2m μ_zᵀ⟨φ⟩ + m² d_z)`.
pub fn log_prior_mu_z(mu_z: &DVector<f64>, phi_mean: &DVector<f64>, m: f64, s2: f64) -> f64 {
    assert_eq!(mu_z.len(), phi_mean.len(), "dimension mismatch");
    -(mu_z.norm_squared() - 2.0 * m * mu_z.dot(phi_mean) + m * m * mu_z.len() as f64) / (2.0 * s2)
}

/// Gradient of [`log_prior_mu_z`]: `−(μ_z − m⟨φ⟩)/s²`.
pub fn log_prior_mu_z_gradient(mu_z: &DVector<f64>, phi_mean: &DVector<f64>, m: f64, s2: f64) -> DVector<f64> {
    -(mu_z - phi_mean * m) / s2
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::mesh::build_regular_mesh;

    fn fixed_beta() -> IsingOptions {
        IsingOptions { beta_step: None, ..IsingOptions::default() }
    }

    #[test]
    fn neighbor_counts() {
        let one = build_regular_mesh(1, 1, 1.0, 1.0).unwrap();
        assert!(build_neighbor_graph(&one).iter().all(|n| n.len() == 1));
        let mesh = build_regular_mesh(52, 34, 1.6, 1.0).unwrap();
        let g = build_neighbor_graph(&mesh);
        for (j, nb) in g.iter().enumerate() {
            assert!((1..=3).contains(&nb.len()));
            for &k in nb {
                assert!(g[k].contains(&j));
            }
        }
        // two corner triangles own two boundary edges each
        assert_eq!(g.iter().filter(|n| n.len() == 3).count(), mesh.n_elements() - 2 * (52 + 34) + 2);
    }

    #[test]
    fn zero_coupling_matches_bernoulli() {
        let mesh = build_regular_mesh(2, 1, 2.0, 1.0).unwrap();
        let mut st = TopoPriorState::new(build_neighbor_graph(&mesh), 0.7, 1.0, &fixed_beta());
        let mu = DVector::from_vec(vec![0.5, -0.3, 0.0, 1.2]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 20_000;
        let mean = estimate_phi_mean(&mut st, &mu, n + 1, 1, &mut rng);
        for j in 0..4 {
            let p = sigmoid(2.0 * 0.7 * mu[j]);
            let se = (4.0 * p * (1.0 - p) / n as f64).sqrt();
            assert!((mean[j] - (2.0 * p - 1.0)).abs() < 4.0 * se, "site {j}");
        }
    }

    #[test]
    fn strong_negative_coupling_aligns_neighbors() {
        let mesh = build_regular_mesh(6, 4, 1.5, 1.0).unwrap();
        let mut st = TopoPriorState::new(build_neighbor_graph(&mesh), 6.9, 1.0, &fixed_beta());
        st.beta = -2.0;
        let mu = DVector::zeros(mesh.n_elements());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut corr = 0.0;
        let mut count = 0.0;
        for s in 0..2000 {
            gibbs_sweep(&mut st, &mu, &mut rng);
            if s >= 200 {
                for (j, nb) in st.neighbors.iter().enumerate() {
                    for &k in nb {
                        corr += f64::from(st.phi[j] * st.phi[k]);
                        count += 1.0;
                    }
                }
            }
        }
        assert!(corr / count > 0.9, "{}", corr / count);
    }

    #[test]
    fn seeded_replay_is_identical() {
        let mesh = build_regular_mesh(5, 3, 1.0, 1.0).unwrap();
        let mu = DVector::from_fn(mesh.n_elements(), |i, _| ((i as f64) * 0.37).sin());
        let run = || {
            let mut st = TopoPriorState::new(build_neighbor_graph(&mesh), 6.9, 1.0, &IsingOptions::default());
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            for _ in 0..50 {
                gibbs_sweep(&mut st, &mu, &mut rng);
            }
            (st.phi, st.beta.to_bits())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn prior_gradient_matches_finite_differences() {
        let mu = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        let phi = DVector::from_vec(vec![0.5, -0.9, 1.0]);
        let g = log_prior_mu_z_gradient(&mu, &phi, 6.9, 1.3);
        for j in 0..3 {
            let h = 1e-3;
            let mut p = mu.clone();
            p[j] += h;
            let mut q = mu.clone();
            q[j] -= h;
            let fd = (log_prior_mu_z(&p, &phi, 6.9, 1.3) - log_prior_mu_z(&q, &phi, 6.9, 1.3)) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-10 * (1.0 + g[j].abs()), "{fd} vs {}", g[j]);
        }
        let spins = DVector::from_vec(vec![1.0, -1.0, 1.0]);
        assert!(log_prior_mu_z(&(&spins * 6.9), &spins, 6.9, 1.3).abs() < 1e-12);
    }
}
