//! Library results checked against independent computations.

use irplan_core::analysis::{
    compute_delta, compute_eta, induced_chain, model_time_to_go, solve_time_to_go, true_time_to_go, tv_distance,
};
use irplan_core::hallucination::{hoeffding_confidence, hoeffding_failure_bound, joint_bound, required_epsilon};
use irplan_core::model::{build_synthetic, SyntheticConfig, SyntheticModel, TransitionKernel};
use irplan_core::planner::{Planner, PlannerConfig};
use irplan_core::stream::RandomStream;
use irplan_core::verify::{blank_incident, prop2_trials, random_config};
use irplan_core::RecoveryState;

fn models(count: u64, lambda: f64) -> Vec<SyntheticModel> {
    (0..count)
        .filter_map(|k| {
            let mut stream = RandomStream::from_seed(1000 + k);
            build_synthetic(&random_config(&mut stream, lambda * (k as f64 / count as f64))).ok()
        })
        .collect()
}

/// `J = 1 + F J` iterated from zero: the partial sums of the Neumann series.
fn value_iteration(chain: &TransitionKernel) -> Vec<f64> {
    let n = chain.size();
    let t = n - 1;
    let mut j = vec![0.0; n];
    for _ in 0..200_000 {
        let next: Vec<f64> = (0..n)
            .map(|s| {
                if s == t {
                    0.0
                } else {
                    1.0 + (0..t).map(|u| chain.get(s, u) * j[u]).sum::<f64>()
                }
            })
            .collect();
        let diff = next.iter().zip(&j).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        j = next;
        if diff < 1e-12 {
            break;
        }
    }
    j
}

#[test]
fn linear_solve_matches_value_iteration() {
    for m in models(12, 0.3) {
        for kernels in [&m.true_kernels, &m.model_kernels] {
            let chain = induced_chain(kernels, &m.proposal).unwrap();
            let lu = solve_time_to_go(&chain).unwrap();
            let vi = value_iteration(&chain);
            for (s, v) in vi.iter().enumerate() {
                let rel = (lu.get(s) - v).abs() / v.max(1.0);
                assert!(rel < 1e-8, "state {s}: {} vs {v}", lu.get(s));
            }
        }
    }
}

#[test]
fn eta_matches_direct_total_variation() {
    for m in models(10, 0.3) {
        let mut brute = 0.0f64;
        for (p, q) in m.true_kernels.iter().zip(&m.model_kernels) {
            for s in 0..63 {
                let tv: f64 = (0..64).map(|t| (p.get(s, t) - q.get(s, t)).abs()).sum();
                brute = brute.max(tv);
            }
        }
        assert!((brute - m.eta).abs() < 1e-12);
        assert!((compute_eta(&m.true_kernels, &m.model_kernels).unwrap() - brute).abs() < 1e-12);
        assert!(m.eta <= 2.0);
    }
    assert_eq!(tv_distance(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
}

#[test]
fn delta_matches_direct_minimum() {
    for m in models(10, 0.0) {
        let j = true_time_to_go(&m).unwrap();
        let mut brute = f64::INFINITY;
        for (a, k) in m.true_kernels.iter().enumerate() {
            if m.hallucinated[a] {
                continue;
            }
            for s in 0..63 {
                let next: f64 = (0..64).map(|t| k.get(s, t) * j.get(t)).sum();
                brute = brute.min(j.get(s) - next);
            }
        }
        if brute.is_finite() {
            assert!((compute_delta(&m, &j).unwrap() - brute).abs() < 1e-9);
            assert!(brute > 0.0);
        }
    }
}

#[test]
fn exact_q_is_one_step_lookahead_on_model_values() {
    let incident = blank_incident();
    for m in models(6, 0.2) {
        let j_tilde = model_time_to_go(&m).unwrap();
        let planner = Planner::new(
            &m,
            &incident,
            PlannerConfig {
                exact_expectation: true,
                ..Default::default()
            },
        )
        .unwrap();
        let mut stream = RandomStream::from_seed(0);
        for s in [0usize, 7, 31, 62] {
            let state = RecoveryState::from_index(s).unwrap();
            for a in 0..m.n_actions() {
                let q = planner.estimate_q(state, &m.action(a), &[], &mut stream).unwrap().q_estimate;
                let k = &m.model_kernels[a];
                let oracle = 1.0 + (0..64).map(|t| k.get(s, t) * j_tilde.get(t)).sum::<f64>();
                assert!((q - oracle).abs() < 1e-9);
            }
        }
    }
}

fn binomial_cdf(n: u64, p: f64, k: u64) -> f64 {
    let mut total = 0.0;
    let mut coeff = 1.0f64;
    for i in 0..=k {
        if i > 0 {
            coeff *= (n - i + 1) as f64 / i as f64;
        }
        total += coeff * p.powi(i as i32) * (1.0 - p).powi((n - i) as i32);
    }
    total
}

#[test]
fn estimation_trials_match_binomial_tail() {
    // exceedance is "at most 3 of 30 samples hallucinated"
    let exact = binomial_cdf(30, 0.3, 3);
    assert!((exact - 0.00929).abs() < 1e-4);
    let s = prop2_trials(10, 3, 30, 0.2, 40_000, 99).unwrap();
    let se = (exact * (1.0 - exact) / s.trials as f64).sqrt();
    assert!((s.empirical_probability - exact).abs() < 4.0 * se, "{} vs {exact}", s.empirical_probability);
    assert!(s.empirical_probability <= s.hoeffding_bound);
}

#[test]
fn bound_curves_match_plotted_points() {
    assert!((hoeffding_confidence(0.1, 1) - 0.019801326693244747).abs() < 1e-12);
    assert!((hoeffding_confidence(0.2, 99) - 0.999636597673505).abs() < 1e-12);
    assert!((joint_bound(0.4, 0.0, 2).value - 0.16).abs() < 1e-15);
    assert_eq!(joint_bound(0.5, 0.0, 10).value, 0.0009765625);
    assert!((hoeffding_failure_bound(0.2, 30) - (-2.4f64).exp()).abs() < 1e-15);
}

#[test]
fn required_epsilon_inverts_confidence() {
    let eps = required_epsilon(30, 0.99).unwrap();
    assert!((eps - 0.2770430).abs() < 1e-6);
    assert!((hoeffding_confidence(eps, 30) - 0.99).abs() < 1e-12);
    let b = joint_bound(0.14, eps, 2);
    assert!((b.value - (0.14 + eps).powi(2)).abs() < 1e-15);
    assert!(!b.vacuous);
}

#[test]
fn zero_mixing_gives_identical_values() {
    let m = build_synthetic(&SyntheticConfig { seed: 3, ..Default::default() }).unwrap();
    assert_eq!(m.eta, 0.0);
    let j = true_time_to_go(&m).unwrap();
    let jt = model_time_to_go(&m).unwrap();
    assert!(j.distance_inf(&jt) < 1e-12);
}
