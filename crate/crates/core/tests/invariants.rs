use nalgebra::DVector;
use proptest::prelude::*;

use tdlab::algos::{td_increment, CtdConfig, CtdState, SampleMode, StepSchedule, TdState};
use tdlab::bounds::check_td_admissible;
use tdlab::chain::{stationary_distribution, TransitionSampler};
use tdlab::geometry::{build_system, expected_increment, project, psi_norm};
use tdlab::harness::{build_example2, Problem};
use tdlab::rng::stream_rng;

fn instance(n: usize, d: usize, seed: u64) -> Problem {
    let (mrp, features) = build_example2(n, d, seed, 0.9).unwrap();
    Problem::new(mrp, features).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projection_is_idempotent(seed in 0u64..10_000, n in 3usize..15, v in prop::collection::vec(-10.0f64..10.0, 15)) {
        let p = instance(n, 2, seed);
        let v = DVector::from_column_slice(&v[..n]);
        let once = project(&v, &p.features, &p.psi).unwrap();
        let twice = project(&once, &p.features, &p.psi).unwrap();
        prop_assert!((twice - &once).amax() <= 1e-10 * (1.0 + once.amax()));
    }

    #[test]
    fn projection_is_psi_orthogonal(seed in 0u64..10_000, v in prop::collection::vec(-10.0f64..10.0, 8)) {
        let p = instance(8, 3, seed);
        let v = DVector::from_column_slice(&v);
        let pv = project(&v, &p.features, &p.psi).unwrap();
        let resid = &v - &pv;
        let w = p.psi.psi();
        let phi = p.features.matrix();
        for k in 0..3 {
            let inner: f64 = (0..8).map(|s| w[s] * resid[s] * phi[(s, k)]).sum();
            prop_assert!(inner.abs() <= 1e-10 * (1.0 + v.amax()));
        }
    }

    #[test]
    fn transition_is_psi_non_expansive(seed in 0u64..10_000, v in prop::collection::vec(-10.0f64..10.0, 10)) {
        let p = instance(10, 3, seed);
        let v = DVector::from_column_slice(&v);
        let pv = p.mrp.transition() * &v;
        prop_assert!(psi_norm(&pv, &p.psi).unwrap() <= psi_norm(&v, &p.psi).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn a_is_coercive(seed in 0u64..10_000, x in prop::collection::vec(-10.0f64..10.0, 3)) {
        let p = instance(10, 3, seed);
        let x = DVector::from_column_slice(&x);
        let quad = x.dot(&(&p.system.a_matrix * &x));
        let floor = p.system.mu * (1.0 - p.mrp.discount()) * x.norm_squared();
        prop_assert!(quad >= floor * (1.0 - 1e-10) - 1e-14);
    }

    #[test]
    fn mean_update_vanishes_only_at_theta_star(seed in 0u64..10_000, x in prop::collection::vec(-5.0f64..5.0, 2)) {
        let p = instance(7, 2, seed);
        let at_star = expected_increment(&p.mrp, &p.features, &p.psi, &p.system.theta_star).unwrap();
        prop_assert!(at_star.amax() <= 1e-10);
        let x = DVector::from_column_slice(&x);
        let away = expected_increment(&p.mrp, &p.features, &p.psi, &(&p.system.theta_star + &x)).unwrap();
        // g(theta* + x) = -A x, so its inner product with x is at most -mu (1 - beta) |x|^2
        let inner = away.dot(&x);
        prop_assert!(inner <= -p.system.mu * 0.1 * x.norm_squared() * (1.0 - 1e-9) + 1e-14);
    }

    #[test]
    fn increment_differences_are_bilinear(
        seed in 0u64..10_000,
        s in 0usize..9,
        t in 0usize..9,
        x in prop::collection::vec(-5.0f64..5.0, 3),
        y in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let p = instance(9, 3, seed);
        let (x, y) = (DVector::from_column_slice(&x), DVector::from_column_slice(&y));
        let fx = td_increment(&p.mrp, &p.features, s, t, &x).unwrap().0;
        let fy = td_increment(&p.mrp, &p.features, s, t, &y).unwrap().0;
        let phi_s = DVector::from_column_slice(p.features.row(s));
        let phi_t = DVector::from_column_slice(p.features.row(t));
        let coef = (&phi_t * p.mrp.discount() - &phi_s).dot(&(&x - &y));
        prop_assert!(((fx - fy) - phi_s * coef).amax() <= 1e-12 * (1.0 + x.amax() + y.amax()));
    }

    #[test]
    fn polyak_mean_matches_running_sum(seed in 0u64..10_000, steps in 1usize..400, alpha in 0.55f64..0.95) {
        let p = instance(6, 2, seed);
        let schedule = StepSchedule::inverse_power(0.3, 5.0, alpha).unwrap();
        let sampler = TransitionSampler::new(&p.mrp);
        let mut rng = stream_rng(seed, 3);
        let mut st = TdState::new(DVector::zeros(2));
        let mut sum = DVector::<f64>::zeros(2);
        let mut s = 0;
        for _ in 0..steps {
            let t = sampler.next_state(s, &mut rng);
            let inc = td_increment(&p.mrp, &p.features, s, t, &st.theta).unwrap();
            st.advance(&schedule, &inc);
            sum += &st.theta;
            s = t;
        }
        let mean = sum / steps as f64;
        prop_assert_eq!(st.n, steps as u64);
        prop_assert!((&st.theta_bar - &mean).amax() <= 1e-12 * (1.0 + mean.amax()));
    }

    #[test]
    fn ctd_stays_in_ball(seed in 0u64..10_000, radius in 0.01f64..5.0, m in 1usize..30, resample in any::<bool>()) {
        let p = instance(6, 2, seed);
        let mode = if resample { SampleMode::ResampleStored } else { SampleMode::Online };
        let config = CtdConfig { gamma: 0.1, epoch_length: m, radius, sample_mode: mode };
        let mut st = CtdState::new(DVector::zeros(2), config).unwrap();
        let sampler = TransitionSampler::new(&p.mrp);
        let mut rng = stream_rng(seed, 4);
        let mut s = 0;
        for _ in 0..300 {
            let t = sampler.next_state(s, &mut rng);
            st.step(&p.mrp, &p.features, s, t, &mut rng);
            prop_assert!(st.theta.norm() <= radius * (1.0 + 1e-12));
            if st.epoch_full() {
                st.epoch_transition(&p.mrp, &p.features, &mut rng).unwrap();
                prop_assert!(st.theta.norm() <= radius * (1.0 + 1e-12));
            }
            s = t;
        }
    }

    #[test]
    fn schedules_are_positive_and_nonincreasing(c0 in 1e-4f64..2.0, c in 0.0f64..1e4, alpha in 0.51f64..1.0) {
        for sched in [StepSchedule::inverse_linear(c0, c).unwrap(), StepSchedule::inverse_power(c0, c.max(1.0), alpha).unwrap()] {
            let mut prev = f64::INFINITY;
            for n in [0u64, 1, 2, 10, 1_000, 1_000_000] {
                let g = sched.gamma(n);
                prop_assert!(g > 0.0 && g <= prev);
                prev = g;
            }
        }
    }

    #[test]
    fn admissibility_flags_small_c0(mu in 0.01f64..10.0, beta in 0.1f64..0.99) {
        let report = check_td_admissible(mu, beta, 1.0, 1.0);
        let ok = check_td_admissible(mu, beta, 0.5 * report.c0_limit, 2.0 / (mu * (1.0 - beta) * 0.5 * report.c0_limit));
        prop_assert!(ok.admissible, "{:?}", ok);
    }
}

#[test]
fn stationary_distribution_is_invariant() {
    for seed in 0..25 {
        let (mrp, _) = build_example2(20, 2, seed, 0.9).unwrap();
        let psi = stationary_distribution(&mrp).unwrap();
        let w = psi.psi();
        assert!((w.sum() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|&p| p > 0.0));
        let moved = mrp.transition().transpose() * w;
        assert!((moved - w).amax() < 1e-12);
    }
}

#[test]
fn theta_star_solves_the_projected_equation() {
    for seed in 0..10 {
        let (mrp, features) = build_example2(15, 4, seed, 0.9).unwrap();
        let psi = stationary_distribution(&mrp).unwrap();
        let sys = build_system(&mrp, &features, &psi).unwrap();
        let v = features.matrix() * &sys.theta_star;
        let tv = tdlab::geometry::bellman_apply(&mrp, &v).unwrap();
        let ptv = project(&tv, &features, &psi).unwrap();
        assert!((ptv - v).amax() < 1e-10);
    }
}
