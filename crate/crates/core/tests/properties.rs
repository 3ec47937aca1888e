use proptest::prelude::*;

use pslab::env::CorrelationKernel;
use pslab::expansion::{sum_estimates, CoefficientEstimate, Method};
use pslab::lab::num;
use pslab::mm1::{busy_lst, QueueParams};
use pslab::parallel::Pool;
use pslab::stats::{ks_statistic, Moments};
use pslab::MarkovEnv;

// Irreducible generators: every off-diagonal rate is positive.
fn env_strategy() -> impl Strategy<Value = MarkovEnv> {
    (2usize..=4)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(0.05f64..3.0, n * n),
                prop::collection::vec(-1.0f64..2.0, n),
                0.1f64..5.0,
            )
        })
        .prop_map(|(rates, p, alpha)| {
            let n = p.len();
            let mut rows = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        rows[i][j] = rates[i * n + j];
                    }
                }
                rows[i][i] = -rows[i].iter().sum::<f64>();
            }
            MarkovEnv::new(rows, p, alpha).unwrap()
        })
}

fn moments(xs: &[f64]) -> Moments {
    let mut m = Moments::new();
    xs.iter().for_each(|&x| m.push(x));
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_error_iff_closed_form(v in -1e6f64..1e6, xs in prop::collection::vec(-10.0f64..10.0, 2..50)) {
        let c = CoefficientEstimate::closed_form(v);
        prop_assert_eq!(c.std_error, 0.0);
        prop_assert_eq!(c.method, Method::ClosedForm);
        let m = moments(&xs);
        let e = CoefficientEstimate::from_moments(&m, 1.0, Method::McJoint);
        prop_assert_eq!(e.std_error > 0.0, m.variance() > 0.0);
        prop_assert_eq!(e.n_samples, xs.len() as u64);
    }

    #[test]
    fn sums_propagate_independent_errors(
        terms in prop::collection::vec((-5.0f64..5.0, -100.0f64..100.0, 0.0f64..3.0), 1..6),
    ) {
        let parts: Vec<(f64, CoefficientEstimate)> = terms
            .iter()
            .map(|&(w, v, se)| (w, CoefficientEstimate { value: v, std_error: se, n_samples: 10, method: Method::McJoint }))
            .collect();
        let s = sum_estimates(&parts);
        let v: f64 = terms.iter().map(|(w, v, _)| w * v).sum();
        let var: f64 = terms.iter().map(|(w, _, se)| (w * se).powi(2)).sum();
        prop_assert!((s.value - v).abs() <= 1e-12 * (1.0 + v.abs()));
        prop_assert!((s.std_error - var.sqrt()).abs() <= 1e-12 * (1.0 + var.sqrt()));
        prop_assert_eq!(s.method, Method::McJoint);
    }

    #[test]
    fn closed_form_sums_stay_exact(vs in prop::collection::vec(-10.0f64..10.0, 1..5)) {
        let parts: Vec<_> = vs.iter().map(|&v| (2.0, CoefficientEstimate::closed_form(v))).collect();
        let s = sum_estimates(&parts);
        prop_assert_eq!(s.method, Method::ClosedForm);
        prop_assert_eq!(s.std_error, 0.0);
    }

    #[test]
    fn stationary_law_is_invariant(env in env_strategy()) {
        let pi = env.stationary().probabilities().to_vec();
        let n = pi.len();
        prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(pi.iter().all(|&x| x > 0.0));
        for j in 0..n {
            let flow: f64 = (0..n).map(|i| pi[i] * env.rate(i, j)).sum();
            prop_assert!(flow.abs() < 1e-10, "column {} flow {}", j, flow);
        }
        let moved = env.propagate(&pi, 0.7);
        for (a, b) in moved.iter().zip(&pi) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transition_rows_are_distributions(env in env_strategy(), u in 0.0f64..4.0) {
        for row in env.transition_matrix(u) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&x| x > -1e-14));
        }
    }

    #[test]
    fn covariance_starts_at_variance_and_is_bounded(env in env_strategy(), u in 0.0f64..10.0) {
        let var = env.p_moments().variance();
        prop_assert!((env.covariance(0.0).unwrap() - var).abs() < 1e-12);
        prop_assert!(env.covariance(u).unwrap().abs() <= var + 1e-12);
    }

    #[test]
    fn kernel_tracks_exact_cross_moment(env in env_strategy(), v in 0.0f64..6.0) {
        let (f, g) = (env.p_plus(), env.p_minus());
        let k = CorrelationKernel::correlation(&env, &f, &g);
        prop_assume!(!k.truncated());
        let exact = env.cross_moment(&f, &g, v).unwrap();
        prop_assert!((k.value(v) - exact).abs() < 1e-11, "{} vs {}", k.value(v), exact);
        let c = CorrelationKernel::covariance(&env);
        prop_assert!((c.value(v) - env.covariance(v).unwrap()).abs() < 1e-11);
    }

    #[test]
    fn kernel_lag_moments_are_consistent(env in env_strategy(), b in 0.01f64..8.0) {
        let k = CorrelationKernel::covariance(&env);
        prop_assume!(!k.truncated());
        let [m0, m1, m2] = k.lag_moments(b);
        // d/db of int (b - v)^k r(v) dv equals k times the lower moment
        let h = 1e-5;
        let [p0, p1, _] = k.lag_moments(b + h);
        let [q0, q1, _] = k.lag_moments(b - h);
        let d1 = (p1 - q1) / (2.0 * h);
        let d0 = (p0 - q0) / (2.0 * h);
        prop_assert!((d1 - m0).abs() < 1e-6 * (1.0 + m0.abs()), "{} vs {}", d1, m0);
        prop_assert!((d0 - k.value(b)).abs() < 1e-6 * (1.0 + k.value(b).abs()));
        let var = env.p_moments().variance();
        prop_assert!(m2.abs() <= var * b.powi(3) / 3.0 + 1e-12);
        prop_assert!(m1.abs() <= var * b * b / 2.0 + 1e-12);
    }

    #[test]
    fn fold_is_worker_invariant(seed in any::<u32>(), n in 1u64..20_000, workers in 2usize..5) {
        let f = |m: &mut Moments, i: u64| m.push(((i as f64 + seed as f64) * 0.618).sin());
        let a = Pool::new(1).fold(n, Moments::new, f);
        let b = Pool::new(workers).fold(n, Moments::new, f);
        prop_assert_eq!(a.mean().to_bits(), b.mean().to_bits());
        prop_assert_eq!(a.variance().to_bits(), b.variance().to_bits());
        prop_assert_eq!(a.count(), n);
    }

    #[test]
    fn busy_transform_is_a_decreasing_probability(l in 0.05f64..0.95, s in 0.0f64..20.0) {
        let q = QueueParams::new(l, 1.0).unwrap();
        let a = busy_lst(&q, s).unwrap();
        let b = busy_lst(&q, s + 0.1).unwrap();
        prop_assert!(a > 0.0 && a <= 1.0 + 1e-15);
        prop_assert!(b < a);
    }

    #[test]
    fn ks_statistic_is_a_symmetric_distance(
        a in prop::collection::vec(-5.0f64..5.0, 1..60),
        b in prop::collection::vec(-5.0f64..5.0, 1..60),
    ) {
        let d = ks_statistic(&a, &b);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, ks_statistic(&b, &a));
        prop_assert_eq!(ks_statistic(&a, &a), 0.0);
    }

    #[test]
    fn csv_numbers_round_trip(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        let back: f64 = num(v).parse().unwrap();
        prop_assert_eq!(back, if v == 0.0 { 0.0 } else { v });
    }
}
