#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use vbdesign::linalg::orthonormalize;
use vbdesign::random_field::FieldPrior;
use vbdesign::vb::{ModelParams, PriorConfig};

/// A small fully specified instance of the quadraticized bound.
pub struct Toy {
    pub prior: PriorConfig,
    pub params: ModelParams,
    pub g_theta: DMatrix<f64>,
    pub g_z: DMatrix<f64>,
    pub residual: DVector<f64>,
    pub tau_q: f64,
}

pub fn field(dt: usize, var: f64, mean: f64) -> Arc<FieldPrior> {
    let cov = DMatrix::from_fn(dt, dt, |i, j| var * (-(i as f64 - j as f64).abs() / 1.5).exp());
    Arc::new(FieldPrior::from_covariance(cov, mean, var, 1.5).unwrap())
}

/// Jacobian entries built from products of indices, so the matrices have full rank.
pub fn toy(n: usize, dt: usize, dz: usize, dy: usize) -> Toy {
    let prior = PriorConfig::new(2.0, 0.2, field(dt, 0.5, 0.1)).unwrap();
    let w = orthonormalize(&DMatrix::from_fn(dz, dy, |i, j| (((i + 1) * (j + 3)) as f64 * 0.83).cos()));
    Toy {
        prior,
        params: ModelParams {
            mu_z: DVector::from_fn(dz, |i, _| 0.2 * i as f64 - 0.1),
            w,
            mu_theta: DVector::from_fn(dt, |i, _| 0.25 - 0.1 * i as f64),
        },
        g_theta: DMatrix::from_fn(n, dt, |i, j| (((i + 1) * (j + 2)) as f64 * 0.61).sin()),
        g_z: DMatrix::from_fn(n, dz, |i, j| (((i + 1) * (j + 3)) as f64 * 0.37 + i as f64).cos()),
        residual: DVector::from_fn(n, |i, _| 0.3 * (i as f64 - 1.0)),
        tau_q: 1.7,
    }
}

use argmin::core::{CostFunction, Error as ArgminError, Executor};
use argmin::solver::neldermead::NelderMead;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use vbdesign::ising::{build_neighbor_graph, gibbs_sweep, IsingOptions, TopoPriorState};
use vbdesign::linalg::orthonormality_error;
use vbdesign::map::{optimize_map, MapOptions};
use vbdesign::mesh::build_regular_mesh;
use vbdesign::problems::{ForwardModel, LinearModel};
use vbdesign::stiefel::{cayley_step, cayley_step_full};
use vbdesign::vb::{
    evaluate_f, vb_expectation, vb_expectation_constrained, BoundInputs, ConstraintTerm, ThetaBlock, VariationalState,
};

/// Negative bound over an unconstrained parametrization of the joint
/// covariance (log-diagonal Cholesky factor) and `log τ_z`.
struct NegBound<'a> {
    toy: &'a Toy,
    constraint: Option<ConstraintTerm<'a>>,
}

fn unpack(p: &[f64], dt: usize, dy: usize) -> VariationalState {
    let d = dt + dy;
    let mut l = DMatrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in 0..=i {
            l[(i, j)] = if i == j { p[k].exp() } else { p[k] };
            k += 1;
        }
    }
    let s = &l * l.transpose();
    VariationalState {
        theta: ThetaBlock::Dense(s.view((0, 0), (dt, dt)).into()),
        c_thy: s.view((0, dt), (dt, dy)).into(),
        c_yy: s.view((dt, dt), (dy, dy)).into(),
        tau_z: p[k].exp(),
    }
}

impl CostFunction for NegBound<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> Result<f64, ArgminError> {
        let t = self.toy;
        let state = unpack(p, t.g_theta.ncols(), t.params.d_y());
        let inputs = BoundInputs {
            residual: &t.residual,
            g_theta: &t.g_theta,
            g_z: &t.g_z,
            constraint: self.constraint,
            log_p_mu_z: 0.0,
        };
        Ok(evaluate_f(&state, &t.params, &t.prior, t.tau_q, &inputs).map_or(f64::INFINITY, |b| -b.total))
    }
}

fn nelder_mead(toy: &Toy, constraint: Option<ConstraintTerm<'_>>, start: Vec<f64>) -> Vec<f64> {
    let mut best = start;
    // restarts from the incumbent with a fresh simplex
    for size in [0.5, 0.05, 5e-3, 5e-4] {
        let mut simplex = vec![best.clone()];
        for i in 0..best.len() {
            let mut v = best.clone();
            v[i] += size;
            simplex.push(v);
        }
        let solver = NelderMead::new(simplex).with_sd_tolerance(1e-15).unwrap();
        let res = Executor::new(NegBound { toy, constraint }, solver).configure(|s| s.max_iters(20_000)).run().unwrap();
        best = res.state().best_param.clone().unwrap();
    }
    best
}

/// Largest deviation between the closed-form E-step and a derivative-free
/// maximization of the bound on a `d_θ = 2, d_y = 1, d_z = 3` instance,
/// with and without the constraint term.
pub fn vb_expectation_brute_force_error() -> f64 {
    let t = toy(3, 2, 3, 1);
    let f = DVector::from_vec(vec![0.4, -0.2, 0.7]);
    let mut worst: f64 = 0.0;
    for constrained in [false, true] {
        let (closed, constraint) = if constrained {
            let s = vb_expectation_constrained(&t.g_theta, &t.g_z, &t.params, &t.prior, t.tau_q, &f, 0.3).unwrap();
            (s, Some(ConstraintTerm { c: 0.1, f: &f, eps_c2: 0.3 }))
        } else {
            (vb_expectation(&t.g_theta, &t.g_z, &t.params, &t.prior, t.tau_q).unwrap(), None)
        };
        let mut start = vec![0.0; 7];
        start[6] = 0.5;
        let best = unpack(&nelder_mead(&t, constraint, start), 2, 1);
        worst = worst
            .max((closed.c_thth(&t.prior.field) - best.c_thth(&t.prior.field)).amax())
            .max((&closed.c_thy - &best.c_thy).amax())
            .max((&closed.c_yy - &best.c_yy).amax())
            .max((closed.tau_z - best.tau_z).abs() / closed.tau_z);
    }
    worst
}

/// Largest entrywise gap between the `2d_y × 2d_y` Cayley update and the
/// full `d_z × d_z` inversion on `d_z = 30, d_y = 4`.
pub fn cayley_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (dz, dy) = (30, 4);
    let w = orthonormalize(&DMatrix::from_fn(dz, dy, |_, _| StandardNormal.sample(&mut rng)));
    let j = DMatrix::from_fn(dz, dy, |_, _| StandardNormal.sample(&mut rng));
    [1e-3, 0.1, 1.0, 7.5]
        .into_iter()
        .map(|a| (cayley_step(&w, &j, a).unwrap() - cayley_step_full(&w, &j, a).unwrap()).amax())
        .fold(0.0, f64::max)
}

/// Feasibility drift after 100 consecutive Cayley steps along random directions.
pub fn cayley_drift(seed: u64, dz: usize, dy: usize, a: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = orthonormalize(&DMatrix::from_fn(dz, dy, |_, _| StandardNormal.sample(&mut rng)));
    for _ in 0..100 {
        let j = DMatrix::from_fn(dz, dy, |_, _| StandardNormal.sample(&mut rng));
        w = cayley_step(&w, &j, a).unwrap();
    }
    orthonormality_error(&w)
}

/// Relative gap between Gauss-Newton on an affine model and the direct solve
/// of the regularized normal equations.
pub fn linear_gauss_newton_error() -> f64 {
    let t = toy(6, 5, 4, 1);
    let tau = 30.0;
    let z_precision = 0.02;
    let target = DVector::from_fn(6, |i, _| 1.0 - 0.4 * i as f64);
    let offset = DVector::from_fn(6, |i, _| 0.1 * i as f64);
    let model =
        LinearModel::new(offset.clone(), t.g_theta.clone(), t.g_z.clone(), target.clone(), tau, t.prior.field.clone(), z_precision)
            .unwrap();
    let map = optimize_map(&model, MapOptions::default()).unwrap();

    let (dt, dz) = (5, 4);
    let g = DMatrix::from_fn(6, dt + dz, |i, j| if j < dt { t.g_theta[(i, j)] } else { t.g_z[(i, j - dt)] });
    let c0_inv = t.prior.field.covariance().clone().try_inverse().unwrap();
    let mut h = tau * g.transpose() * &g;
    let mut block = h.view_mut((0, 0), (dt, dt));
    block += &c0_inv;
    for k in 0..dz {
        h[(dt + k, dt + k)] += z_precision;
    }
    let mut rhs = tau * g.transpose() * (&target - &offset);
    let mut top = rhs.rows_mut(0, dt);
    top += &c0_inv * t.prior.field.mean_vector();
    let x = h.lu().solve(&rhs).unwrap();
    let got = DVector::from_iterator(dt + dz, map.mu_theta.iter().chain(map.mu_z.iter()).copied());
    (&got - &x).norm() / x.norm()
}

/// Worst relative error of the adjoint `G_θ` columns against central differences
/// with step `1e-5(1 + |θ_j|)`.
pub fn jacobian_fd_error(model: &dyn ForwardModel, theta: &DVector<f64>, z: &DVector<f64>, columns: &[usize]) -> f64 {
    let lin = model.linearize(theta, z).unwrap();
    columns
        .iter()
        .map(|&j| {
            let h = 1e-5 * (1.0 + theta[j].abs());
            let mut tp = theta.clone();
            tp[j] += h;
            let mut tm = theta.clone();
            tm[j] -= h;
            let fd = (model.evaluate(&tp, z).unwrap() - model.evaluate(&tm, z).unwrap()) / (2.0 * h);
            (&fd - lin.g_theta.column(j)).norm() / lin.g_theta.column(j).norm()
        })
        .fold(0.0, f64::max)
}

/// Largest relative error of `G_θ v` and `G_z v` against central differences
/// of `evaluate` along `probes` random unit directions.
pub fn jacobian_probe_error(model: &dyn ForwardModel, theta: &DVector<f64>, z: &DVector<f64>, probes: usize, seed: u64) -> f64 {
    let lin = model.linearize(theta, z).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unit = |n: usize| {
        let v: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        v.normalize()
    };
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let v = unit(theta.len());
        let fd = (model.evaluate(&(theta + h * &v), z).unwrap() - model.evaluate(&(theta - h * &v), z).unwrap()) / (2.0 * h);
        let exact = &lin.g_theta * &v;
        worst = worst.max((&fd - &exact).norm() / exact.norm());

        let v = unit(z.len());
        let fd = (model.evaluate(theta, &(z + h * &v)).unwrap() - model.evaluate(theta, &(z - h * &v)).unwrap()) / (2.0 * h);
        let exact = &lin.g_z * &v;
        worst = worst.max((&fd - &exact).norm() / exact.norm());
    }
    worst
}

/// Total variation between the Gibbs sampler's empirical spin distribution on
/// the 4-element mesh and exhaustive enumeration of the joint.
pub fn ising_total_variation(beta: f64, mu: [f64; 4], m: f64, sweeps: usize, seed: u64) -> f64 {
    let mesh = build_regular_mesh(2, 1, 2.0, 1.0).unwrap();
    let neighbors = build_neighbor_graph(&mesh);
    let options = IsingOptions { beta_step: None, ..IsingOptions::default() };
    let mut state = TopoPriorState::new(neighbors.clone(), m, 1.0, &options);
    state.beta = beta;
    let mu_z = DVector::from_row_slice(&mu);

    let spin = |code: usize, j: usize| if code >> j & 1 == 1 { 1.0 } else { -1.0 };
    let log_p: Vec<f64> = (0..16)
        .map(|code| {
            let field: f64 = (0..4).map(|j| spin(code, j) * m * mu[j]).sum();
            let pairs: f64 = (0..4)
                .flat_map(|j| neighbors[j].iter().filter(move |&&k| k > j).map(move |&k| (j, k)))
                .map(|(j, k)| spin(code, j) * spin(code, k))
                .sum();
            field - beta * pairs
        })
        .collect();
    let norm: f64 = log_p.iter().map(|l| l.exp()).sum();

    let mut counts = [0usize; 16];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..1000 {
        gibbs_sweep(&mut state, &mu_z, &mut rng);
    }
    for _ in 0..sweeps {
        gibbs_sweep(&mut state, &mu_z, &mut rng);
        let code = (0..4).filter(|&j| state.phi[j] > 0).fold(0, |c, j| c | 1 << j);
        counts[code] += 1;
    }
    0.5 * (0..16).map(|c| (counts[c] as f64 / sweeps as f64 - log_p[c].exp() / norm).abs()).sum::<f64>()
}
