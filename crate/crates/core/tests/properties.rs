mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vbdesign::linalg::orthonormality_error;
use vbdesign::problems::LinearModel;
use vbdesign::stiefel::{optimize_w, StiefelOptions, StiefelProblem};
use vbdesign::validation::{estimate_nkl, sample_q, summarize, ValidationInputs};
use vbdesign::vb::{random_orthonormal, vb_expectation};

use common::toy;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cayley_steps_stay_on_the_manifold(seed in any::<u64>(), dz in 3usize..40, frac in 0.05f64..1.0, log_a in -4.0f64..2.0) {
        let dy = ((dz as f64 * frac) as usize).clamp(1, dz);
        let drift = common::cayley_drift(seed, dz, dy, 10f64.powf(log_a));
        prop_assert!(drift <= 1e-10, "drift {drift:e}");
    }

    #[test]
    fn optimizer_iterates_stay_feasible(seed in any::<u64>(), n in 2usize..8, dz in 4usize..25, dy in 1usize..4, tau_z in 0.1f64..10.0) {
        let dy = dy.min(dz - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(n, dz, |_, _| rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng));
        let cross = DMatrix::from_fn(dz, dy, |_, _| 0.1 * rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng));
        let problem = StiefelProblem {
            g_z: g,
            tau_q: 1.0,
            cross,
            c_yy: DMatrix::from_diagonal(&DVector::from_fn(dy, |i, _| 0.01 * (i + 1) as f64)),
            tau_z,
            constraint: None,
        };
        let w0 = random_orthonormal(dz, dy, seed);
        let report = optimize_w(&problem, &w0, StiefelOptions { max_steps: 100, tol: 0.0 }).unwrap();
        prop_assert!(orthonormality_error(&report.w) <= 1e-10);
        prop_assert!(report.f_w_end >= report.f_w_start - 1e-12 * report.f_w_start.abs());
    }

    #[test]
    fn every_report_satisfies_jensen(log_w in prop::collection::vec(-50.0f64..50.0, 2..200), h_q in 0.5f64..100.0) {
        let r = summarize(&log_w, h_q).unwrap();
        prop_assert!(r.log_mean_w >= r.mean_log_w - 1e-12 * (1.0 + r.mean_log_w.abs()));
        prop_assert!(r.kl >= -1e-12);
        prop_assert!(r.ess >= 1.0 - 1e-12 && r.ess <= log_w.len() as f64 + 1e-9);
    }

    #[test]
    fn sampling_is_seed_deterministic(seed in any::<u64>()) {
        let t = toy(4, 5, 6, 2);
        let state = vb_expectation(&t.g_theta, &t.g_z, &t.params, &t.prior, t.tau_q).unwrap();
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_q(&state, &t.params, &t.prior, 5, &mut rng).unwrap()
        };
        let (a, b) = (draw(), draw());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(&x.eta_theta, &y.eta_theta);
            prop_assert_eq!(&x.y, &y.y);
            prop_assert_eq!(&x.eta_z, &y.eta_z);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn ising_sampler_is_stationary(beta in -0.4f64..0.4, mu in prop::array::uniform4(-0.3f64..0.3), seed in any::<u64>()) {
        let tv = common::ising_total_variation(beta, mu, 0.7, 100_000, seed);
        prop_assert!(tv <= 1e-2, "total variation {tv:e}");
    }

    #[test]
    fn validation_report_is_thread_independent(seed in any::<u64>(), threads in 2usize..6) {
        let t = toy(4, 5, 6, 2);
        let model = LinearModel::new(
            DVector::zeros(4), t.g_theta.clone(), t.g_z.clone(), t.residual.clone(), t.tau_q, t.prior.field.clone(), 1e-3,
        ).unwrap();
        let state = vb_expectation(&t.g_theta, &t.g_z, &t.params, &t.prior, t.tau_q).unwrap();
        let run = |threads| {
            let inputs = ValidationInputs { state: &state, params: &t.params, prior: &t.prior, log_p_mu_z: 0.0, threads };
            estimate_nkl(&model, inputs, 64, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
        };
        let (a, b) = (run(1), run(threads));
        prop_assert_eq!(a.to_text(), b.to_text());
        prop_assert!(a.log_mean_w >= a.mean_log_w);
    }
}
