//! Property tests for the operator inequalities and fixed-set identities.

mod common;

use kmconsensus::graph::{GraphUniverse, WeightedGraph};
use kmconsensus::instances::{random_instance, random_state, InstanceLimits, RandomInstance};
use kmconsensus::linalg::{affine_solution_set, spectral_norm};
use kmconsensus::operators::{
    as_vector_map, check_firmly_nonexpansive, check_nonexpansive, CheckConfig, OperatorBundle,
};
use kmconsensus::problem::{build_tilde, default_thetas, StackedState, TildeSystem};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn setup(seed: u64) -> (RandomInstance, TildeSystem) {
    let inst = random_instance(seed, InstanceLimits::default(), seed % 3 == 0).unwrap();
    let tilde = build_tilde(&inst.system, &default_thetas(&inst.system).unwrap()).unwrap();
    (inst, tilde)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn operators_are_nonexpansive(seed in 0u64..10_000, beta in 0.05f64..0.95) {
        let (inst, tilde) = setup(seed);
        let b = OperatorBundle::new(&inst.universe, &tilde, beta).unwrap();
        let (m, q) = (b.m(), b.q());
        let cfg = CheckConfig { seed, ..CheckConfig::default() };
        let h = check_nonexpansive("H", as_vector_map(m, q, |x| b.eval_h(x)), b.dim(), &cfg);
        prop_assert!(h.passed(), "{:?}", h);
        for g in 0..inst.universe.len() {
            let cfg = CheckConfig { trials: 300, seed: seed ^ g as u64, ..CheckConfig::default() };
            for r in [
                check_nonexpansive("T", as_vector_map(m, q, |x| b.eval_t(g, x)), b.dim(), &cfg),
                check_nonexpansive("D", as_vector_map(m, q, |x| b.eval_d(g, x)), b.dim(), &cfg),
                check_nonexpansive("S", as_vector_map(m, q, |x| b.eval_s(g, x)), b.dim(), &cfg),
                check_firmly_nonexpansive("Q1", as_vector_map(m, q, |x| b.eval_q1(g, x)), b.dim(), &cfg),
                check_firmly_nonexpansive("Q2", as_vector_map(m, q, |x| b.eval_q2(g, x)), b.dim(), &cfg),
            ] {
                prop_assert!(r.passed(), "{:?}", r);
            }
        }
    }

    #[test]
    fn fvp_d_equals_fix_h_cap_fvp_t(seed in 0u64..10_000, beta in 0.05f64..0.95) {
        let (inst, tilde) = setup(seed);
        let b = OperatorBundle::new(&inst.universe, &tilde, beta).unwrap();
        let lhs = b.fvp_d().unwrap();
        let rhs = b.fix_h_cap_fvp_t();
        prop_assert!(lhs.residual < 1e-9 && rhs.residual < 1e-9);
        prop_assert_eq!(lhs.dim(), rhs.dim());
        prop_assert!(lhs.approx_eq(&rhs, 1e-9));
        let sol = StackedState::consensus(inst.system.m(), &inst.solution);
        prop_assert!(lhs.contains(&sol.data, 1e-9));
    }

    #[test]
    fn fvp_s_is_a_subspace(seed in 0u64..10_000, beta in 0.05f64..0.95, coeffs in prop::collection::vec(-5.0f64..5.0, 8)) {
        let (inst, tilde) = setup(seed);
        let b = OperatorBundle::new(&inst.universe, &tilde, beta).unwrap();
        let set = b.fvp_s().unwrap();
        prop_assert!(set.particular.norm() < 1e-12);
        let mut x = DVector::zeros(b.dim());
        for (k, col) in set.basis.column_iter().enumerate() {
            x += col * coeffs[k % coeffs.len()];
        }
        let xs = StackedState::from_vector(b.m(), b.q(), x);
        for g in 0..inst.universe.len() {
            let s = b.eval_s(g, &xs).unwrap();
            prop_assert!((&s.data - &xs.data).norm() <= 1e-9 * (1.0 + xs.data.norm()));
        }
    }

    #[test]
    fn q2_is_linear(seed in 0u64..10_000, alpha in -3.0f64..3.0, gamma in -3.0f64..3.0) {
        let (inst, tilde) = setup(seed);
        let b = OperatorBundle::new(&inst.universe, &tilde, 0.4).unwrap();
        let (m, q) = (b.m(), b.q());
        let x = random_state(m, q, 10.0, seed);
        let y = random_state(m, q, 10.0, seed + 1);
        let combo = StackedState::from_vector(m, q, &x.data * alpha + &y.data * gamma);
        for g in 0..inst.universe.len() {
            let lhs = b.eval_q2(g, &combo).unwrap().data;
            let rhs = b.eval_q2(g, &x).unwrap().data * alpha + b.eval_q2(g, &y).unwrap().data * gamma;
            prop_assert!((lhs - rhs).norm() <= 1e-12 * (1.0 + combo.data.norm()));
        }
    }

    #[test]
    fn fixed_points_of_h_solve_every_block(seed in 0u64..10_000) {
        let (inst, tilde) = setup(seed);
        let (m, q) = (inst.system.m(), inst.system.q());
        let sol = StackedState::consensus(m, &inst.solution);
        prop_assert!((tilde.apply(&sol).data - &sol.data).norm() <= 1e-12 * (1.0 + sol.data.norm()));

        // Conversely: every point of Fix(H) zeroes the residual.
        let n = m * q;
        let fix = affine_solution_set(&(DMatrix::identity(n, n) - tilde.dense_linear()), &tilde.offset(), 1e-10);
        let mut x = fix.particular.clone();
        for (k, col) in fix.basis.column_iter().enumerate() {
            x += col * (k as f64 - 1.5);
        }
        let xs = StackedState::from_vector(m, q, x);
        prop_assert!(inst.system.residual(&xs).unwrap() <= 1e-12 * (1.0 + xs.data.norm_squared()));
    }

    #[test]
    fn thetas_are_interior_and_blocks_contract(seed in 0u64..10_000) {
        let (inst, tilde) = setup(seed);
        for (blk, &theta) in inst.system.blocks().iter().zip(tilde.thetas()) {
            let prod = theta * blk.lambda_max();
            prop_assert!((prod - 1.0).abs() < 1e-12);
        }
        for (mat, _) in tilde.blocks() {
            prop_assert!(spectral_norm(mat) <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn common_fixed_set_of_graphs_is_consensus(seed in 0u64..10_000) {
        let (inst, tilde) = setup(seed);
        let (m, q) = (tilde.m(), tilde.q());
        let n = m * q;
        let k = inst.universe.len();
        let mut c = DMatrix::zeros(k * n, n);
        for (g, graph) in inst.universe.graphs().iter().enumerate() {
            c.rows_mut(g * n, n).copy_from(&(DMatrix::identity(n, n) - graph.lifted_dense(q)));
        }
        let set = affine_solution_set(&c, &DVector::zeros(k * n), 1e-10);
        prop_assert_eq!(set.dim(), q);
        let consensus_proj = DMatrix::from_element(m, m, 1.0 / m as f64).kronecker(&DMatrix::<f64>::identity(q, q));
        prop_assert!((set.projector() - consensus_proj).norm() < 1e-9);
    }

    #[test]
    fn lift_preserves_consensus(seed in 0u64..10_000, v in prop::collection::vec(-10.0f64..10.0, 1..5)) {
        let (inst, _) = setup(seed);
        let v = DVector::from_vec(v);
        let x = StackedState::consensus(inst.universe.m(), &v);
        for g in inst.universe.graphs() {
            let y = kmconsensus::graph::lift(g, v.len()).apply(&x);
            prop_assert!((y.data - &x.data).amax() < 1e-14);
        }
    }
}

#[test]
fn disconnected_universe_has_larger_fixed_set() {
    // Without union connectivity the graphs' common fixed set is larger than consensus.
    let u = GraphUniverse::new(vec![WeightedGraph::pairwise(3, 0, 1).unwrap()]).unwrap();
    assert_eq!(u.common_fixed_dim(&[0]), 2);
}
