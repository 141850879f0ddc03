//! End-to-end checks tying the low-rank pipeline to the dense references.

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use ttiga::assembly::{build_hierarchical, global_system, OperatorKind, WeightFields};
use ttiga::experiment::{Manufactured, SolutionId};
use ttiga::geometry::{
    interpolate_source, interpolate_weight_and_metric, GeometryMap, InterpolationSpace,
};
use ttiga::hierarchy::{global_dof_ids, HierarchicalSpace};
use ttiga::oracle::DenseTHBBasis;
use ttiga::solver::{build_precond_blockdiag, solve_gmres};
use ttiga::splines::KnotVector;
use ttiga::tt::DENSE_CAP;

#[test]
fn single_level_poisson_matches_dense_direct_solve() {
    // p = 2, m = 6 cube without refinement: the GMRES solution of the
    // low-rank system agrees with a dense LU solve of the same system.
    let space = HierarchicalSpace::build(&[2, 2, 2], &[6, 6, 6], &[]).unwrap();
    let geometry = GeometryMap::identity(3);
    let tol = 1e-9;
    let wspace = Arc::new(InterpolationSpace::for_weights(&geometry).unwrap());
    let (omega, q) = interpolate_weight_and_metric(&geometry, &wspace, tol, DENSE_CAP).unwrap();
    let weights = WeightFields { omega, q };
    let man = Manufactured::from_id(SolutionId::Sol1);
    let source_space =
        Arc::new(InterpolationSpace::new(vec![KnotVector::open_uniform(2, 20); 3]).unwrap());
    let m2 = man.clone();
    let source =
        interpolate_source(move |x| m2.f(x), &geometry, &source_space, tol, DENSE_CAP).unwrap();

    let hier = build_hierarchical(&space, OperatorKind::Stiffness, &weights, &source, tol).unwrap();
    let sys = global_system(&space, &hier, 1, tol).unwrap();
    let prec = build_precond_blockdiag(&sys, tol).unwrap();
    let result = solve_gmres(&sys, &sys.rhs_vector(), 1e-7, 30, 900, &prec).unwrap();
    assert!(result.converged);

    let coeffs = sys.solution_to_dense(&result.x.blocks).unwrap();
    let (a, b) = sys.to_dense_active().unwrap();
    let direct = a.lu().solve(&b).unwrap();
    let rel = (&coeffs - &direct).norm() / direct.norm();
    assert!(rel <= 1e-6, "GMRES vs dense direct solve: {rel}");
}

#[test]
fn source_interpolation_matches_closed_form_laplacian() {
    // f = -Δy for the first analytical solution, interpolated at tol 1e-8 on
    // the desk-scale source space, evaluated against the frozen closed form.
    let man = Manufactured::from_id(SolutionId::Sol1);
    let geometry = GeometryMap::identity(3);
    let space =
        Arc::new(InterpolationSpace::new(vec![KnotVector::open_uniform(3, 37); 3]).unwrap());
    let m2 = man.clone();
    let field =
        interpolate_source(move |x| m2.f(x), &geometry, &space, 1e-8, DENSE_CAP).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..100 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..=1.0)).collect();
        // identity geometry: the ω factor folded into the field is 1
        let err = (field.eval(&x).unwrap() - man.f(&x)).abs();
        assert!(err <= 1e-6, "source field error {err} at {x:?}");
    }
}

#[test]
fn active_spline_counts_match_thb_dimension() {
    // Σ_l |active splines| equals the dense basis' DoF count.
    let marks0 = ttiga::experiment::make_marks(
        ttiga::experiment::Scheme::TwoCorners,
        2,
        0,
        &[5, 5, 5],
    );
    let space = HierarchicalSpace::build(&[2, 2, 2], &[5, 5, 5], &[marks0]).unwrap();
    let basis = DenseTHBBasis::build(&space).unwrap();
    let dof_count = basis.functions.iter().filter(|f| !f.excluded).count();
    let (_, num_dofs) = global_dof_ids(&space);
    let sum_active: usize = (0..space.num_levels()).map(|l| space.active_splines[l].len()).sum();
    assert_eq!(dof_count, num_dofs);
    assert_eq!(sum_active, num_dofs);
}

#[test]
fn hierarchy_activity_dump_is_stable() {
    // golden fixture of the 2D three-level corner refinement
    let marks0 = ttiga::cuboids::MultiIndexSet::from_members(&[2, 2], vec![vec![0, 0]]);
    let marks1 = ttiga::cuboids::MultiIndexSet::from_members(&[4, 4], vec![vec![0, 0]]);
    let space = HierarchicalSpace::build(&[1, 1], &[2, 2], &[marks0, marks1]).unwrap();
    let dump = space.dump_activity();
    let expected = "\
level 0 active cells
2 1
1 2
2 2
level 0 active splines
2 2
level 0 deactivated splines
1 1
level 1 active cells
2 1
1 2
2 2
level 1 active splines
2 2
level 1 deactivated splines
1 1
level 2 active cells
1 1
2 1
1 2
2 2
level 2 active splines
2 2
level 2 deactivated splines
";
    assert_eq!(dump, expected);
}

#[test]
fn three_level_chain_matches_dense_oracle() {
    // nested-slab with three levels exercises the composed truncation chains
    // C^{(1,0)T} C^{(2,1)T} inside the coupled blocks
    let space =
        ttiga::experiment::build_scheme_space(ttiga::experiment::Scheme::NestedSlab, 2, 0, 3)
            .unwrap();
    let geometry = GeometryMap::identity(3);
    let tol = 1e-10;
    let wspace = Arc::new(InterpolationSpace::for_weights(&geometry).unwrap());
    let (omega, q) = interpolate_weight_and_metric(&geometry, &wspace, tol, DENSE_CAP).unwrap();
    let weights = WeightFields { omega, q };
    let source_space =
        Arc::new(InterpolationSpace::new(vec![KnotVector::open_uniform(2, 8); 3]).unwrap());
    let source =
        ttiga::geometry::interpolate_field(|x: &[f64]| 1.0 + x[2], &source_space, tol).unwrap();
    let hier = build_hierarchical(&space, OperatorKind::Stiffness, &weights, &source, tol).unwrap();
    let oracle = ttiga::oracle::dense_assemble(&space, &geometry, |_| 1.0, false).unwrap();
    for approach in [1u8, 2] {
        let sys = global_system(&space, &hier, approach, tol).unwrap();
        let (dense, _) = sys.to_dense_active().unwrap();
        let rel = (&dense - &oracle.stiffness).norm() / oracle.stiffness.norm();
        assert!(rel <= 1e-8, "approach {approach}: three-level oracle delta {rel}");
    }
}

#[test]
fn solution_expansion_is_consistent_between_block_layouts() {
    // expanding the block solution of approach 2 drops exactly the masked
    // entries, leaving the same flat vector as approach 1
    let space = {
        let marks = ttiga::experiment::make_marks(
            ttiga::experiment::Scheme::TwoCorners,
            2,
            0,
            &[5, 5, 5],
        );
        HierarchicalSpace::build(&[2, 2, 2], &[5, 5, 5], &[marks]).unwrap()
    };
    let geometry = GeometryMap::identity(3);
    let tol = 1e-10;
    let wspace = Arc::new(InterpolationSpace::for_weights(&geometry).unwrap());
    let (omega, q) = interpolate_weight_and_metric(&geometry, &wspace, tol, DENSE_CAP).unwrap();
    let weights = WeightFields { omega, q };
    let source_space =
        Arc::new(InterpolationSpace::new(vec![KnotVector::open_uniform(2, 10); 3]).unwrap());
    let source = ttiga::geometry::interpolate_field(
        |x: &[f64]| 1.0 + x[0] * x[1],
        &source_space,
        tol,
    )
    .unwrap();
    let hier = build_hierarchical(&space, OperatorKind::Stiffness, &weights, &source, tol).unwrap();

    let mut coeffs: Vec<DVector<f64>> = Vec::new();
    for approach in [1u8, 2] {
        let sys = global_system(&space, &hier, approach, tol).unwrap();
        let prec = build_precond_blockdiag(&sys, 1e-10).unwrap();
        let res = solve_gmres(&sys, &sys.rhs_vector(), 1e-9, 30, 900, &prec).unwrap();
        assert!(res.converged);
        coeffs.push(sys.solution_to_dense(&res.x.blocks).unwrap());
    }
    let rel = (&coeffs[0] - &coeffs[1]).norm() / coeffs[0].norm();
    assert!(rel <= 1e-7, "approaches disagree: {rel}");
}
