//! Randomized invariants over generated instances.

use dlqr::baselines::{centralized_design, centralized_design_and_run};
use dlqr::controller::{run_closed_loop, RunOptions};
use dlqr::init_consensus::{broadcast_init, partial_obs_init};
use dlqr::linalg::{lambda_min, symmetrize};
use dlqr::metrics::{cost_decomposition, performance_bound, realized_cost, surrogate_cost};
use dlqr::presets::{random_instance, random_strongly_connected, RandomSpec};
use dlqr::recursion::boundedness_report;
use dlqr::weights_opt::optimize_weights;
use dlqr::{
    design_backward, solve_stationary, DirectedGraph, FusionWeights, SystemSchedule, WeightMatrix,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn small() -> RandomSpec {
    RandomSpec {
        max_horizon: 25,
        ..RandomSpec::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn reversal_is_an_involution(seed in any::<u64>(), n in 1usize..9) {
        let g = random_strongly_connected(&mut rng(seed), n, 0.3);
        prop_assert_eq!(g.reverse().reverse(), g.clone());
        prop_assert!(g.reverse().is_strongly_connected());
        for l in n.saturating_sub(1).max(1)..n + 2 {
            prop_assert!(g.adjacency_power_all_positive(l));
        }
    }

    #[test]
    fn default_weights_are_column_stochastic(seed in any::<u64>(), n in 1usize..9) {
        let g = random_strongly_connected(&mut rng(seed), n, 0.4);
        let w = WeightMatrix::<f64>::default_for(&g);
        for j in 0..n {
            let col: f64 = w.matrix().column(j).sum();
            prop_assert!((col - 1.0).abs() < 1e-12);
        }
        for (i, j) in g.edges() {
            prop_assert!(w.matrix()[(i, j)] > 0.0);
        }
    }

    #[test]
    fn transition_products_compose(seed in any::<u64>(), h1 in 0usize..4, h2 in 0usize..4) {
        let p = random_instance(&mut rng(seed), &small());
        let s = &p.schedule;
        prop_assume!(h1 + h2 <= s.horizon().unwrap());
        let whole = s.transition_product(0, h1 + h2).unwrap();
        let split = s.transition_product(h1, h2).unwrap() * s.transition_product(0, h1).unwrap();
        prop_assert!((&whole - &split).amax() <= 1e-12 * (1.0 + whole.amax()));
    }

    #[test]
    fn gramian_is_psd(seed in any::<u64>(), l in 1usize..5) {
        let p = random_instance(&mut rng(seed), &small());
        let r = p.schedule.joint_controllability_check(0, l, 1e-9).unwrap();
        prop_assert!((&r.gramian - r.gramian.transpose()).amax() < 1e-12);
        prop_assert!(lambda_min(&r.gramian) >= -1e-10 * (1.0 + r.gramian.amax()));
    }

    #[test]
    fn fusion_identity_and_lower_bound(seed in any::<u64>()) {
        let p = random_instance(&mut rng(seed), &small());
        let (s, g) = (&p.schedule, &p.graph);
        let w = WeightMatrix::default_for(g);
        let t = design_backward(s, g, &w).unwrap();
        let n = s.state_dim();
        for k in 1..=t.end() {
            for i in 0..s.n_agents() {
                let mut acc = DMatrix::zeros(n, n);
                for j in g.in_neighbors(i) {
                    acc += t.p_bar_inv(k, j) * w.weight(k, i, j);
                }
                let id = acc * t.p(k, i);
                prop_assert!((id - DMatrix::identity(n, n)).amax() < 1e-10 * (1.0 + t.p(k, i).amax()));
            }
        }
        let rep = boundedness_report(&t, s).unwrap();
        prop_assert!(rep.min_lambda_p >= rep.rho_lower - 1e-10);
    }

    #[test]
    fn cost_chain_and_virtual_identity(seed in any::<u64>()) {
        let p = random_instance(&mut rng(seed), &small());
        let (s, g) = (&p.schedule, &p.graph);
        let t = design_backward(s, g, &WeightMatrix::default_for(g)).unwrap();
        let run = run_closed_loop(s, g, &t, &p.x0, RunOptions { keep_virtual: true }).unwrap();
        let hist = run.virtual_history.as_ref().unwrap();
        for (x, v) in run.trajectory.states.iter().zip(hist) {
            prop_assert!((x - v.sum()).norm() <= 1e-8 * (1.0 + x.norm()));
        }
        prop_assert!(run.trajectory.replay_residual(s) <= 1e-10 * (1.0 + p.x0.norm()));
        let j = realized_cost(&run.trajectory, s).unwrap();
        let hat = surrogate_cost(hist, &run.trajectory, s).unwrap();
        let bound = performance_bound(&t, &p.x0);
        let slack = 1e-8 * (1.0 + bound);
        prop_assert!(j <= hat + slack);
        prop_assert!(hat <= bound + slack);
        let (c, _) = centralized_design_and_run(s, &p.x0).unwrap();
        prop_assert!(realized_cost(&c, s).unwrap() <= j + slack);
    }

    #[test]
    fn decomposition_sums_to_cost(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_instance(&mut r, &small());
        let (s, g) = (&p.schedule, &p.graph);
        let t = design_backward(s, g, &WeightMatrix::default_for(g)).unwrap();
        let run = run_closed_loop(s, g, &t, &p.x0, RunOptions::default()).unwrap();
        let raw: Vec<f64> = (0..s.n_agents()).map(|_| r.gen_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let pi: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let shares = cost_decomposition(&run.trajectory, s, &pi).unwrap();
        let j = realized_cost(&run.trajectory, s).unwrap();
        prop_assert!((shares.iter().sum::<f64>() - j).abs() <= 1e-10 * (1.0 + j));
    }

    #[test]
    fn single_agent_matches_centralized(seed in any::<u64>()) {
        let spec = RandomSpec { max_agents: 1, ..small() };
        let p = random_instance(&mut rng(seed), &spec);
        let s = &p.schedule;
        let g = DirectedGraph::new(1, []).unwrap();
        let t = design_backward(s, &g, &WeightMatrix::default_for(&g)).unwrap();
        let c = centralized_design(s).unwrap();
        for k in 0..=t.end() {
            prop_assert!((t.p_breve(k, 0) - &c.p[k]).amax() <= 1e-10 * (1.0 + c.p[k].amax()));
        }
    }

    #[test]
    fn stationary_iteration_is_monotone(seed in any::<u64>()) {
        let p = random_instance(&mut rng(seed), &small());
        let s = p.schedule.with_horizon(None).unwrap();
        let st = solve_stationary(&s, &p.graph, &WeightMatrix::default_for(&p.graph), 1e-10, 10_000);
        if let Ok(st) = st {
            prop_assert!(st.min_increment_eigenvalue >= -1e-10 * (1.0 + st.p_breve.iter().map(|m| m.amax()).fold(0.0, f64::max)));
        }
    }

    #[test]
    fn optimized_weights_stay_in_box(seed in any::<u64>()) {
        let spec = RandomSpec { max_horizon: 12, ..RandomSpec::default() };
        let p = random_instance(&mut rng(seed), &spec);
        let (s, g) = (&p.schedule, &p.graph);
        let d = optimize_weights(s, g, 1e-6).unwrap();
        for k in 1..=s.horizon().unwrap() {
            for i in 0..g.n_nodes() {
                for j in 0..g.n_nodes() {
                    let w = d.schedule.weight(k, i, j);
                    if g.has_edge(i, j) {
                        prop_assert!(w > 0.0 && w <= 1.0 / g.out_degree(j) as f64);
                    } else {
                        prop_assert_eq!(w, 0.0);
                    }
                }
            }
        }
        let def = design_backward(s, g, &WeightMatrix::default_for(g)).unwrap();
        let b_def = performance_bound(&def, &p.x0);
        prop_assert!(performance_bound(&d.tables, &p.x0) <= b_def + 1e-8 * (1.0 + b_def));
    }

    #[test]
    fn consensus_init_recovers(seed in any::<u64>(), n in 1usize..11, dim in 1usize..5) {
        let mut r = rng(seed);
        let g = random_strongly_connected(&mut r, n, 0.2);
        let x0 = DVector::from_fn(dim, |_, _| r.gen_range(-10.0..10.0));
        let holder = r.gen_range(0..n);
        let tol = 1e-9;
        let e = broadcast_init(&g, &[holder], &x0, tol, 100 * n.max(1) * 10).unwrap();
        prop_assert!(e.max_error(&x0) <= tol * x0.norm());
        // nonincreasing after the first N rounds
        let h = &e.error_history;
        for w in h[n.min(h.len())..].windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }

        let obs: Vec<DMatrix<f64>> = (0..n)
            .map(|_| DMatrix::from_fn(r.gen_range(1..=dim), dim, |_, _| r.gen_range(-1.0..1.0)))
            .collect();
        let mut stacked = obs[0].clone();
        for h in &obs[1..] {
            stacked = DMatrix::from_fn(stacked.nrows() + h.nrows(), dim, |i, j| {
                if i < stacked.nrows() { stacked[(i, j)] } else { h[(i - stacked.nrows(), j)] }
            });
        }
        let full_rank = stacked.clone().svd(false, false).singular_values.iter().all(|&v| v > 1e-3);
        prop_assume!(full_rank && stacked.nrows() >= dim);
        let e = partial_obs_init(&g, &obs, &x0, tol, 100 * n.max(1) * 10).unwrap();
        for v in &e.estimates {
            prop_assert!((v - &x0).norm() <= 10.0 * tol * x0.norm());
        }
    }

    #[test]
    fn symmetrize_is_idempotent(seed in any::<u64>(), n in 1usize..6) {
        let mut r = rng(seed);
        let m = DMatrix::from_fn(n, n, |_, _| r.gen_range(-1.0..1.0));
        let s = symmetrize(&m);
        prop_assert_eq!(symmetrize(&s), s.clone());
        prop_assert_eq!(s.transpose(), s);
    }
}

#[test]
fn schedule_horizon_change_keeps_matrices() {
    let p = random_instance(&mut rng(1), &small());
    let s: SystemSchedule<f64> = p.schedule.with_horizon(Some(3)).unwrap();
    assert_eq!(s.a(0), p.schedule.a(0));
    assert_eq!(s.horizon(), Some(3));
}
