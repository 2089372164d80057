mod common;

use common::brute::brute_projection;
use kmconsensus::instances::{random_instance, random_state, InstanceLimits};
use kmconsensus::linalg::affine_solution_set;
use kmconsensus::oracle::{build_constraints, project_affine, FEASIBILITY_TOL};
use kmconsensus::problem::{build_tilde, default_thetas};
use nalgebra::DVector;

fn small_limits() -> InstanceLimits {
    // keeps mq <= 10
    InstanceLimits {
        max_agents: 3,
        max_dim: 3,
        max_graphs: 3,
        max_rows_per_agent: 2,
    }
}

#[test]
fn projection_matches_explicit_basis() {
    let mut checked = 0;
    for seed in 0..40u64 {
        let inst = random_instance(seed, small_limits(), seed % 2 == 1).unwrap();
        let tilde = build_tilde(&inst.system, &default_thetas(&inst.system).unwrap()).unwrap();
        let (m, q) = (tilde.m(), tilde.q());
        if m * q > 10 {
            continue;
        }
        let stack = build_constraints(&inst.universe, &tilde);
        let x0 = random_state(m, q, 5.0, 1000 + seed);
        let got = project_affine(&stack, &x0, FEASIBILITY_TOL).unwrap();
        let (c, d) = stack.dense();
        let (want, dim) = brute_projection(&c, &d, &x0.data);
        assert_eq!(got.nullspace_dim, dim, "seed {seed}");
        let err = (DVector::from_column_slice(&got.x_star) - want).amax();
        assert!(err <= 1e-10, "seed {seed}: {err:e}");
        checked += 1;
    }
    assert!(checked >= 10);
}

#[test]
fn displacement_is_orthogonal_to_nullspace() {
    for seed in 0..20u64 {
        let inst = random_instance(seed, InstanceLimits::default(), false).unwrap();
        let tilde = build_tilde(&inst.system, &default_thetas(&inst.system).unwrap()).unwrap();
        let stack = build_constraints(&inst.universe, &tilde);
        let x0 = random_state(tilde.m(), tilde.q(), 10.0, seed);
        let r = project_affine(&stack, &x0, FEASIBILITY_TOL).unwrap();
        let (c, d) = stack.dense();
        let null = affine_solution_set(&c, &d, 1e-10).basis;
        let delta = &x0.data - DVector::from_column_slice(&r.x_star);
        for v in null.column_iter() {
            assert!(delta.dot(&v).abs() <= 1e-9, "seed {seed}");
        }
        assert!(r.constraint_residual <= 1e-9);
    }
}

#[test]
fn limit_ignores_weight_choice() {
    for seed in 0..20u64 {
        let inst = random_instance(seed, InstanceLimits::default(), false).unwrap();
        let tilde = build_tilde(&inst.system, &default_thetas(&inst.system).unwrap()).unwrap();
        let x0 = random_state(tilde.m(), tilde.q(), 10.0, seed);
        let lazy = inst.universe.map_weights(|g| Ok(g.lazy())).unwrap();
        let a = project_affine(&build_constraints(&inst.universe, &tilde), &x0, FEASIBILITY_TOL).unwrap();
        let b = project_affine(&build_constraints(&lazy, &tilde), &x0, FEASIBILITY_TOL).unwrap();
        let diff = (DVector::from_vec(a.x_star) - DVector::from_vec(b.x_star)).amax();
        assert!(diff <= 1e-8, "seed {seed}: {diff:e}");
    }
}
