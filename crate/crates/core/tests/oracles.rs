//! Worked examples for each public operation, checked against hand-derived values.

use approx::assert_relative_eq;
use dlqr::baselines::{
    centralized_design, centralized_design_and_run, centralized_stationary,
    consensus_design_and_run, decentralized_design_and_run,
};
use dlqr::controller::{
    distributed_gain, fusion_term, run_closed_loop, run_receding_horizon, NeighborMessage,
    RunOptions,
};
use dlqr::init_consensus::{broadcast_init, partial_obs_init, InitError};
use dlqr::metrics::{performance_bound, realized_cost, surrogate_cost};
use dlqr::model::{InputSchedule, MatrixSeq};
use dlqr::presets;
use dlqr::recursion::{boundedness_report, lower_bound_rho};
use dlqr::weights_opt::optimize_weights;
use dlqr::{
    design_backward, solve_stationary, DirectedGraph, FusionWeights, ModelError, SystemSchedule,
    WeightMatrix,
};
use nalgebra::{dmatrix, DMatrix, DVector};

fn s1(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

/// n = 1, N = 2, A = B_i = Q = R_i = 1.
fn scalar_pair(m: Option<usize>) -> SystemSchedule<f64> {
    SystemSchedule::time_invariant(
        s1(1.0),
        vec![s1(1.0), s1(1.0)],
        s1(1.0),
        vec![s1(1.0), s1(1.0)],
        m,
    )
    .unwrap()
}

fn scalar_single(m: Option<usize>) -> SystemSchedule<f64> {
    SystemSchedule::time_invariant(s1(1.0), vec![s1(1.0)], s1(1.0), vec![s1(1.0)], m).unwrap()
}

// graph

#[test]
fn connectivity_examples() {
    assert!(DirectedGraph::new(3, [(0, 2), (1, 0), (2, 1)])
        .unwrap()
        .is_strongly_connected());
    assert!(!DirectedGraph::new(3, [(1, 0), (2, 1)])
        .unwrap()
        .is_strongly_connected());
    assert!(presets::part1().graph.is_strongly_connected());
}

#[test]
fn reversal_examples() {
    let sym = DirectedGraph::bidirectional_ring(5).unwrap();
    assert_eq!(sym.reverse(), sym);
    let g = DirectedGraph::new(3, [(0, 2), (1, 0), (2, 1)]).unwrap();
    assert_eq!(
        g.reverse(),
        DirectedGraph::new(3, [(0, 1), (1, 2), (2, 0)]).unwrap()
    );
    assert!(g.reverse().is_strongly_connected());
}

#[test]
fn adjacency_power_examples() {
    let g = DirectedGraph::new(3, [(0, 2), (1, 0), (2, 1)]).unwrap();
    assert_eq!(
        g.adjacency_power(2),
        vec![vec![1, 1, 2], vec![2, 1, 1], vec![1, 2, 1]]
    );
    assert!(g.adjacency_power_all_positive(2));
    assert!(!g.adjacency_power_all_positive(1));
}

#[test]
fn default_weight_examples() {
    let one = WeightMatrix::<f64>::default_for(&DirectedGraph::new(1, []).unwrap());
    assert_eq!(one.matrix()[(0, 0)], 1.0);
    let two = WeightMatrix::<f64>::default_for(&DirectedGraph::complete(2).unwrap());
    assert!(two.matrix().iter().all(|&w| w == 0.5));
    let g = presets::part1().graph;
    let w = WeightMatrix::<f64>::default_for(&g);
    for (i, j) in g.edges() {
        assert_eq!(w.matrix()[(i, j)], 0.5);
    }
}

// model

#[test]
fn transition_product_examples() {
    let p = presets::part1();
    assert_eq!(
        p.schedule.transition_product(0, 0).unwrap(),
        DMatrix::identity(8, 8)
    );
    let a = p.schedule.a(0);
    assert_relative_eq!(
        p.schedule.transition_product(5, 3).unwrap(),
        a * a * a,
        epsilon = 1e-14
    );
    let s = SystemSchedule::new(
        MatrixSeq::PerStep((0..4).map(|k| s1(k as f64 + 2.0)).collect()),
        InputSchedule::PerAgent(vec![MatrixSeq::Constant(s1(1.0))]),
        MatrixSeq::Constant(s1(1.0)),
        vec![MatrixSeq::Constant(s1(1.0))],
        Some(4),
    )
    .unwrap();
    assert_eq!(s.transition_product(0, 2).unwrap()[(0, 0)], 6.0);
}

#[test]
fn controllability_examples() {
    let r = scalar_pair(Some(3))
        .joint_controllability_check(0, 1, 2.0)
        .unwrap();
    assert_eq!(r.gramian[(0, 0)], 2.0);
    assert!(r.satisfied);
    assert!(
        !scalar_pair(Some(3))
            .joint_controllability_check(0, 1, 2.5)
            .unwrap()
            .satisfied
    );

    let r = presets::part1()
        .schedule
        .joint_controllability_check(0, 1, 1e-3)
        .unwrap();
    assert_relative_eq!(
        r.gramian,
        DMatrix::identity(8, 8) * (0.25 / 30.0),
        epsilon = 1e-15
    );
    assert_relative_eq!(r.lambda_min, 0.25 / 30.0, epsilon = 1e-15);

    let zero =
        SystemSchedule::time_invariant(s1(1.0), vec![s1(0.0)], s1(1.0), vec![s1(1.0)], Some(3))
            .unwrap();
    let r = zero.joint_controllability_check(0, 2, 1e-12).unwrap();
    assert_eq!(r.gramian[(0, 0)], 0.0);
    assert!(!r.satisfied);
}

#[test]
fn validation_examples() {
    let rep = presets::part1().schedule.validate().unwrap();
    assert_relative_eq!(rep.q_eig_min, 20.0, epsilon = 1e-12);
    assert_relative_eq!(rep.r_eig_min, 30.0, epsilon = 1e-12);

    let singular = SystemSchedule::time_invariant(
        dmatrix![1.0, 0.0; 0.0, 0.0],
        vec![dmatrix![1.0; 1.0]],
        DMatrix::identity(2, 2),
        vec![s1(1.0)],
        Some(2),
    )
    .unwrap();
    assert!(matches!(
        singular.validate(),
        Err(ModelError::SingularA { .. })
    ));

    let indefinite = SystemSchedule::time_invariant(
        DMatrix::identity(2, 2),
        vec![dmatrix![1.0; 1.0]],
        dmatrix![1.0, 0.0; 0.0, -1.0],
        vec![s1(1.0)],
        Some(2),
    )
    .unwrap();
    assert!(matches!(
        indefinite.validate(),
        Err(ModelError::NotSpd { .. })
    ));
}

// recursion

#[test]
fn design_scalar_pair_by_hand() {
    let s = scalar_pair(Some(4));
    let g = DirectedGraph::complete(2).unwrap();
    let t = design_backward(&s, &g, &WeightMatrix::default_for(&g)).unwrap();
    for i in 0..2 {
        assert_eq!(t.p_breve(4, i)[(0, 0)], 2.0);
        assert_relative_eq!(t.p_bar(4, i)[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(t.p(4, i)[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(t.p_breve(3, i)[(0, 0)], 8.0 / 3.0, epsilon = 1e-15);
    }
}

#[test]
fn design_single_agent_matches_centralized() {
    let s = SystemSchedule::time_invariant(
        dmatrix![1.0, 0.3; -0.2, 1.1],
        vec![dmatrix![0.0, 1.0; 1.0, 0.5]],
        dmatrix![2.0, 0.1; 0.1, 1.0],
        vec![dmatrix![1.0, 0.0; 0.0, 3.0]],
        Some(30),
    )
    .unwrap();
    let g = DirectedGraph::new(1, []).unwrap();
    let t = design_backward(&s, &g, &WeightMatrix::default_for(&g)).unwrap();
    let c = centralized_design(&s).unwrap();
    for k in 0..=30 {
        assert_relative_eq!(*t.p_breve(k, 0), c.p[k], max_relative = 1e-10);
    }
}

#[test]
fn part1_tables_bounded() {
    let p = presets::part1();
    let t = design_backward(&p.schedule, &p.graph, &WeightMatrix::default_for(&p.graph)).unwrap();
    let rep = boundedness_report(&t, &p.schedule).unwrap();
    assert!(rep.uniformly_bounded);
    assert!(!rep.lower_bound_violated);
    assert!(rep.max_lambda_p_breve.is_finite());
    assert!(rep.min_lambda_p > 0.0);
}

#[test]
fn stationary_examples() {
    let g = DirectedGraph::complete(2).unwrap();
    let st = solve_stationary(
        &scalar_pair(None),
        &g,
        &WeightMatrix::default_for(&g),
        1e-12,
        10_000,
    )
    .unwrap();
    let r3 = 3f64.sqrt();
    for i in 0..2 {
        assert!((st.p_breve[i][(0, 0)] - (1.0 + r3)).abs() < 1e-9);
        assert!((st.p[i][(0, 0)] - (r3 - 1.0)).abs() < 1e-9);
    }
    // residuals settle monotonically
    let tail = &st.residuals[5..];
    assert!(tail.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));

    let g1 = DirectedGraph::new(1, []).unwrap();
    let st = solve_stationary(
        &scalar_single(None),
        &g1,
        &WeightMatrix::default_for(&g1),
        1e-12,
        10_000,
    )
    .unwrap();
    // scalar DARE p = p/(1+p) + 1  ⇒  p = (1+√5)/2
    assert!((st.p_breve[0][(0, 0)] - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-9);
}

#[test]
fn lower_bound_scalar_pair_is_tight() {
    let s = scalar_pair(Some(6));
    let g = DirectedGraph::complete(2).unwrap();
    let t = design_backward(&s, &g, &WeightMatrix::default_for(&g)).unwrap();
    let rep = boundedness_report(&t, &s).unwrap();
    assert_relative_eq!(rep.rho_lower, 2.0 / 3.0, epsilon = 1e-15);
    assert_relative_eq!(
        lower_bound_rho(0.5, 2, &s.validate().unwrap()),
        2.0 / 3.0,
        epsilon = 1e-15
    );
    assert_relative_eq!(rep.min_lambda_p, 2.0 / 3.0, epsilon = 1e-12);
    assert!(!rep.lower_bound_violated);
}

// controller

#[test]
fn gain_examples() {
    assert_relative_eq!(
        distributed_gain(&s1(2.0), &s1(1.0), &s1(1.0)).unwrap()[(0, 0)],
        -2.0 / 3.0,
        epsilon = 1e-15
    );
    let k = distributed_gain(
        &DMatrix::<f64>::identity(3, 3),
        &DMatrix::zeros(3, 2),
        &DMatrix::identity(2, 2),
    )
    .unwrap();
    assert_eq!(k, DMatrix::zeros(2, 3));
}

#[test]
fn fusion_examples() {
    let g1 = DirectedGraph::new(1, []).unwrap();
    let p = dmatrix![2.0, 0.5; 0.5, 1.0];
    let p_inv = p.clone().try_inverse().unwrap();
    let a = dmatrix![1.0, 0.2; 0.0, 0.9];
    let x = DVector::from_vec(vec![1.0, -3.0]);
    let inbox = [NeighborMessage {
        from: 0,
        p_next: &p,
        x: &x,
    }];
    let f = fusion_term(0, &g1, &inbox, &p_inv, &a, &s1(1.0)).unwrap();
    assert_relative_eq!(f, &a * &x, epsilon = 1e-14);

    let zero = DVector::zeros(2);
    let inbox = [NeighborMessage {
        from: 0,
        p_next: &p,
        x: &zero,
    }];
    assert_eq!(
        fusion_term(0, &g1, &inbox, &p_inv, &a, &s1(1.0)).unwrap(),
        zero
    );

    // scalar pair at k = M − 1: P̄⁻¹ = 3/2, P = 2/3, ω = 1/2, x_j = x/2
    let g2 = DirectedGraph::complete(2).unwrap();
    let pm = s1(2.0 / 3.0);
    let half = DVector::from_element(1, 0.5);
    let inbox = [
        NeighborMessage {
            from: 0,
            p_next: &pm,
            x: &half,
        },
        NeighborMessage {
            from: 1,
            p_next: &pm,
            x: &half,
        },
    ];
    let f = fusion_term(
        0,
        &g2,
        &inbox,
        &s1(1.5),
        &s1(1.0),
        &DMatrix::from_element(2, 2, 0.5),
    )
    .unwrap();
    assert_relative_eq!(f[0], 0.5, epsilon = 1e-15);
}

#[test]
fn closed_loop_examples() {
    let p = presets::part1();
    let t = design_backward(&p.schedule, &p.graph, &WeightMatrix::default_for(&p.graph)).unwrap();
    let run = run_closed_loop(&p.schedule, &p.graph, &t, &p.x0, RunOptions::default()).unwrap();
    let last = run.trajectory.final_state();
    for c in 0..8 {
        assert!(last[c].abs() < p.x0[c].abs());
    }
    let zero = run_closed_loop(
        &p.schedule,
        &p.graph,
        &t,
        &DVector::zeros(8),
        RunOptions::default(),
    )
    .unwrap();
    assert!(zero
        .trajectory
        .states
        .iter()
        .all(|x| x.iter().all(|&v| v == 0.0)));
    assert!(zero
        .trajectory
        .inputs
        .iter()
        .flatten()
        .all(|u| u.iter().all(|&v| v == 0.0)));
}

#[test]
fn closed_loop_single_agent_matches_centralized() {
    let s = scalar_single(Some(25));
    let g = DirectedGraph::new(1, []).unwrap();
    let x0 = DVector::from_element(1, 4.0);
    let t = design_backward(&s, &g, &WeightMatrix::default_for(&g)).unwrap();
    let run = run_closed_loop(&s, &g, &t, &x0, RunOptions::default()).unwrap();
    let (c, _) = centralized_design_and_run(&s, &x0).unwrap();
    for (a, b) in run.trajectory.states.iter().zip(&c.states) {
        assert!((a - b).norm() <= 1e-9 * (1.0 + b.norm()));
    }
}

#[test]
fn receding_examples() {
    let p = presets::part1();
    let w = WeightMatrix::default_for(&p.graph);
    let t = design_backward(&p.schedule, &p.graph, &w).unwrap();
    let plain = run_closed_loop(&p.schedule, &p.graph, &t, &p.x0, RunOptions::default()).unwrap();
    let one = run_receding_horizon(&p.schedule, &p.graph, &w, &p.x0, 120, 1).unwrap();
    assert_eq!(one.intervals, vec![(0, 120)]);
    assert_eq!(one.trajectory, plain.trajectory);

    let zero = run_receding_horizon(&p.schedule, &p.graph, &w, &DVector::zeros(8), 20, 1).unwrap();
    assert!(zero
        .trajectory
        .states
        .iter()
        .all(|x| x.iter().all(|&v| v == 0.0)));

    let j_plain = realized_cost(&plain.trajectory, &p.schedule).unwrap();
    let rec = run_receding_horizon(&p.schedule, &p.graph, &w, &p.x0, 20, 1).unwrap();
    let j_rec = realized_cost(&rec.trajectory, &p.schedule).unwrap();
    assert!(
        (j_rec - j_plain).abs() <= 0.25 * j_plain,
        "{j_rec} vs {j_plain}"
    );
}

// init_consensus

#[test]
fn broadcast_examples() {
    let g = DirectedGraph::ring(3).unwrap();
    let x0 = DVector::<f64>::from_element(1, 6.0);
    let all = broadcast_init(&g, &[0, 1, 2], &x0, 1e-9, 500).unwrap();
    assert_eq!(all.iterations, 0);
    let one = broadcast_init(&g, &[0], &x0, 1e-9 / 6.0, 500).unwrap();
    assert!(one.iterations <= 500);
    for e in &one.estimates {
        assert!((e[0] - 6.0).abs() <= 1e-9);
    }
    // eventually geometric: successive error ratios settle below one
    let h = &one.error_history;
    let ratios: Vec<f64> = h.windows(2).skip(3).map(|w| w[1] / w[0]).collect();
    let r = ratios[ratios.len() - 1];
    assert!(r < 1.0 && ratios.iter().rev().take(5).all(|q| (q - r).abs() < 1e-3));
}

#[test]
fn partial_observation_examples() {
    let g = DirectedGraph::ring(4).unwrap();
    let obs: Vec<DMatrix<f64>> = (0..4)
        .map(|i| {
            let mut h = DMatrix::zeros(1, 4);
            h[(0, i)] = 1.0;
            h
        })
        .collect();
    let x0 = DVector::from_vec(vec![1.5, -2.0, 0.25, 8.0]);
    let e = partial_obs_init(&g, &obs, &x0, 1e-10, 1000).unwrap();
    for v in &e.estimates {
        assert!((v - &x0).norm() <= 1e-8 * x0.norm());
    }

    let g1 = DirectedGraph::new(1, []).unwrap();
    let e = partial_obs_init(&g1, &[DMatrix::identity(4, 4)], &x0, 1e-9, 10).unwrap();
    let b = broadcast_init(&g1, &[0], &x0, 1e-9, 10).unwrap();
    assert_eq!(e.iterations, b.iterations);
    assert!((&e.estimates[0] - &b.estimates[0]).norm() < 1e-12);

    let dup = vec![
        dmatrix![1.0, 0.0, 0.0, 0.0],
        dmatrix![1.0, 0.0, 0.0, 0.0],
        dmatrix![0.0, 1.0, 0.0, 0.0],
        dmatrix![0.0, 0.0, 1.0, 0.0],
    ];
    assert!(matches!(
        partial_obs_init(&g, &dup, &x0, 1e-9, 100),
        Err(InitError::RankDeficient { rank: 3, n: 4 })
    ));
}

// baselines

#[test]
fn centralized_examples() {
    let p = presets::part1();
    let (traj, t) = centralized_design_and_run(&p.schedule, &p.x0).unwrap();
    let j = realized_cost(&traj, &p.schedule).unwrap();
    assert!((j - 8.3e4).abs() <= 0.1 * 8.3e4, "{j}");
    assert_relative_eq!(
        j,
        dlqr::linalg::quad_form(&t.p[0], &p.x0),
        max_relative = 1e-8
    );

    let s = scalar_pair(Some(5));
    let t = centralized_design(&s).unwrap();
    assert_relative_eq!(t.p[4][(0, 0)], 4.0 / 3.0, epsilon = 1e-15);
    let ps = centralized_stationary(&scalar_pair(None), 1e-14, 10_000).unwrap();
    assert_relative_eq!(ps[(0, 0)], (1.0 + 3f64.sqrt()) / 2.0, epsilon = 1e-12);

    let (z, _) = centralized_design_and_run(&p.schedule, &DVector::zeros(8)).unwrap();
    assert_eq!(realized_cost(&z, &p.schedule).unwrap(), 0.0);
}

#[test]
fn decentralized_examples() {
    let p = presets::part1();
    let run = decentralized_design_and_run(&p.schedule, &[0.125; 8], &p.x0).unwrap();
    assert!(run.trajectory.is_some() && run.tables.truncated_at.is_none());

    let s = SystemSchedule::time_invariant(
        s1(1.1),
        vec![s1(1.0), s1(0.0)],
        s1(1.0),
        vec![s1(1.0), s1(1.0)],
        Some(200),
    )
    .unwrap();
    let run =
        decentralized_design_and_run(&s, &[0.5, 0.5], &DVector::from_element(1, 1.0)).unwrap();
    let hist = &run.tables.lambda_max[1];
    assert!(hist[0] > 1e6 * hist[200]);
    assert!(run.tables.diverged[1]);

    let s = scalar_single(Some(10));
    let x0 = DVector::from_element(1, 2.0);
    let d = decentralized_design_and_run(&s, &[1.0], &x0)
        .unwrap()
        .trajectory
        .unwrap();
    let (c, _) = centralized_design_and_run(&s, &x0).unwrap();
    assert_eq!(d.states, c.states);
}

#[test]
fn consensus_examples() {
    let p = presets::part1();
    let run = consensus_design_and_run(&p.schedule, &p.graph, 12, &p.x0).unwrap();
    let norms: Vec<f64> = run.trajectory.states.iter().map(|x| x.norm()).collect();
    assert!(norms[120] < 0.05 * norms[0]);

    let g = DirectedGraph::complete(3).unwrap();
    let s = SystemSchedule::time_invariant(
        dmatrix![1.0, 0.1; 0.0, 1.0],
        vec![dmatrix![1.0; 0.0], dmatrix![0.0; 1.0], dmatrix![1.0; 1.0]],
        DMatrix::identity(2, 2),
        vec![s1(1.0), s1(2.0), s1(3.0)],
        Some(10),
    )
    .unwrap();
    let run = consensus_design_and_run(&s, &g, 200, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
    for k in 1..=10 {
        for i in 1..3 {
            assert!((&run.theta[k][i] - &run.theta[k][0]).amax() < 1e-6);
        }
    }
}

// weights_opt

#[test]
fn weight_optimizer_examples() {
    // single-neighbor rows: each agent hears only itself plus one other, optimum at the top
    let p = presets::part1();
    let d = optimize_weights(&p.schedule.with_horizon(Some(15)).unwrap(), &p.graph, 1e-6).unwrap();
    for k in 1..=15 {
        for (i, j) in p.graph.edges() {
            assert_eq!(
                d.schedule.weight(k, i, j),
                1.0 / p.graph.out_degree(j) as f64
            );
        }
    }

    let g = DirectedGraph::complete(2).unwrap();
    let d = optimize_weights(&scalar_pair(Some(4)), &g, 1e-6).unwrap();
    assert!(d.schedule.at(1).iter().all(|&w| w == 0.5));

    let s = p.schedule.clone();
    let opt = optimize_weights(&s, &p.graph, 1e-6).unwrap();
    let def = design_backward(&s, &p.graph, &WeightMatrix::default_for(&p.graph)).unwrap();
    assert!(performance_bound(&opt.tables, &p.x0) <= performance_bound(&def, &p.x0) + 1e-8);
}

// metrics

#[test]
fn scalar_pair_costs_by_hand() {
    // M = 2, x0 = 1: u_{0,i} = −4/11, x_1 = 3/11, u_{1,i} = −1/11, x_2 = 1/11
    let s = scalar_pair(Some(2));
    let g = DirectedGraph::complete(2).unwrap();
    let t = design_backward(&s, &g, &WeightMatrix::default_for(&g)).unwrap();
    let x0 = DVector::from_element(1, 1.0);
    let run = run_closed_loop(&s, &g, &t, &x0, RunOptions { keep_virtual: true }).unwrap();
    let tr = &run.trajectory;
    assert_relative_eq!(tr.inputs[0][0][0], -4.0 / 11.0, epsilon = 1e-15);
    assert_relative_eq!(tr.states[1][0], 3.0 / 11.0, epsilon = 1e-15);
    assert_relative_eq!(tr.inputs[1][1][0], -1.0 / 11.0, epsilon = 1e-15);
    assert_relative_eq!(tr.states[2][0], 1.0 / 11.0, epsilon = 1e-15);
    let hand = 1.0 + 9.0 / 121.0 + 1.0 / 121.0 + 2.0 * 16.0 / 121.0 + 2.0 / 121.0;
    assert_relative_eq!(realized_cost(tr, &s).unwrap(), hand, epsilon = 1e-14);
    let hat = surrogate_cost(run.virtual_history.as_ref().unwrap(), tr, &s).unwrap();
    assert_relative_eq!(hat, 15.0 / 11.0, epsilon = 1e-14);
    assert_relative_eq!(performance_bound(&t, &x0), 15.0 / 11.0, epsilon = 1e-14);
}

#[test]
fn surrogate_single_agent_equals_cost() {
    let s = SystemSchedule::time_invariant(
        dmatrix![1.0, 0.5; 0.0, 1.0],
        vec![dmatrix![0.0; 1.0]],
        DMatrix::identity(2, 2),
        vec![s1(2.0)],
        Some(12),
    )
    .unwrap();
    let g = DirectedGraph::new(1, []).unwrap();
    let t = design_backward(&s, &g, &WeightMatrix::default_for(&g)).unwrap();
    let x0 = DVector::from_vec(vec![1.0, -1.0]);
    let run = run_closed_loop(&s, &g, &t, &x0, RunOptions { keep_virtual: true }).unwrap();
    let j = realized_cost(&run.trajectory, &s).unwrap();
    let hat = surrogate_cost(run.virtual_history.as_ref().unwrap(), &run.trajectory, &s).unwrap();
    assert_relative_eq!(hat, j, max_relative = 1e-12);
}

#[test]
fn bound_examples() {
    let g = DirectedGraph::complete(2).unwrap();
    let st = solve_stationary(
        &scalar_pair(None),
        &g,
        &WeightMatrix::default_for(&g),
        1e-12,
        10_000,
    )
    .unwrap();
    let x0 = DVector::from_element(1, 3.0);
    assert!((performance_bound(&st, &x0) - (1.0 + 3f64.sqrt()) / 2.0 * 9.0).abs() < 1e-8);
    assert_eq!(performance_bound(&st, &DVector::zeros(1)), 0.0);

    let p = presets::part1();
    let t = design_backward(&p.schedule, &p.graph, &WeightMatrix::default_for(&p.graph)).unwrap();
    let run = run_closed_loop(&p.schedule, &p.graph, &t, &p.x0, RunOptions::default()).unwrap();
    let j = realized_cost(&run.trajectory, &p.schedule).unwrap();
    assert!((j - 1.11e5).abs() <= 0.1 * 1.11e5, "{j}");
    assert!(performance_bound(&t, &p.x0) >= j);
}
