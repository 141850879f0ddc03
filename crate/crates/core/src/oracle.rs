//! Dense brute-force reference: THB basis evaluation through the truncation
//! cascade, Galerkin assembly by plain cell loops with exact weight functions,
//! a direct solve, and the L2 error against analytic solutions.
//!
//! Everything here is deliberately independent of the low-rank assembly path;
//! the only shared ingredients are the univariate spline evaluations and the
//! activity sets of the hierarchical space.

use crate::error::{Error, Result};
use crate::geometry::GeometryMap;
use crate::hierarchy::{global_dof_ids, HierarchicalSpace};
use crate::quadrature::gauss_legendre_on;
use crate::splines::two_scale_matrix;
use crate::tt::{decode_index, encode_index};
use nalgebra::{DMatrix, DVector};
use std::collections::{BTreeMap, HashMap};

/// Value and gradient carried through the truncation cascade.
#[derive(Clone, Copy, Debug)]
pub struct ThbValue {
    pub value: f64,
    pub grad: [f64; 3],
}

impl ThbValue {
    fn zero() -> Self {
        ThbValue { value: 0.0, grad: [0.0; 3] }
    }
}

/// Point evaluator for all THB functions of a space: one downward pass of the
/// truncated two-scale cascade yields the values (and gradients) of every
/// active function at a point.
pub struct ThbEvaluator<'a> {
    space: &'a HierarchicalSpace,
    /// `parents[m][d][i]` lists the coarse indices `j` with a nonzero
    /// two-scale coefficient `C^{(m+1,m),(d)}[i, j]`, for fine level `m+1`.
    parents: Vec<Vec<Vec<Vec<(usize, f64)>>>>,
    /// Level-(m+1) splines truncated away (support inside the refined region).
    zero_sets: Vec<crate::cuboids::MultiIndexSet>,
}

impl<'a> ThbEvaluator<'a> {
    pub fn new(space: &'a HierarchicalSpace) -> Result<Self> {
        let num_levels = space.num_levels();
        let d = space.ndims();
        let mut parents = Vec::new();
        let mut zero_sets = Vec::new();
        for m in 0..num_levels.saturating_sub(1) {
            let mut per_dim = Vec::with_capacity(d);
            for dd in 0..d {
                let c = two_scale_matrix(
                    &space.levels[m].kvs[dd],
                    &space.levels[m + 1].kvs[dd],
                )?;
                let lists: Vec<Vec<(usize, f64)>> = (0..c.nrows())
                    .map(|i| {
                        (0..c.ncols())
                            .filter(|&j| c[(i, j)] != 0.0)
                            .map(|j| (j, c[(i, j)]))
                            .collect()
                    })
                    .collect();
                per_dim.push(lists);
            }
            parents.push(per_dim);
            zero_sets.push(space.truncation_zero_set(m)?);
        }
        Ok(ThbEvaluator { space, parents, zero_sets })
    }

    /// Values (and gradients) of every THB function at `x`, returned as one
    /// sparse map per level keyed by the flat spline index.
    pub fn eval_all(&self, x: &[f64]) -> Result<Vec<BTreeMap<usize, ThbValue>>> {
        let space = self.space;
        let num_levels = space.num_levels();
        let d = space.ndims();
        let finest = num_levels - 1;
        let dims = space.levels[finest].basis_dims();

        // dense B-spline payloads at the finest level
        let mut u: Vec<BTreeMap<usize, ThbValue>> = vec![BTreeMap::new(); num_levels];
        let mut vals = Vec::with_capacity(d);
        let mut ders = Vec::with_capacity(d);
        for dd in 0..d {
            vals.push(space.levels[finest].kvs[dd].eval_local(x[dd], 0)?);
            ders.push(space.levels[finest].kvs[dd].eval_local(x[dd], 1)?);
        }
        let local_dims: Vec<usize> = vals.iter().map(|(_, v)| v.len()).collect();
        let combos: usize = local_dims.iter().product();
        for f in 0..combos {
            let local = decode_index(f, &local_dims);
            let mut entry = ThbValue { value: 1.0, grad: [1.0; 3] };
            let mut idx = Vec::with_capacity(d);
            for dd in 0..d {
                let (first, v) = &vals[dd];
                let (_, dv) = &ders[dd];
                idx.push(first + local[dd]);
                entry.value *= v[local[dd]];
                for k in 0..d {
                    entry.grad[k] *= if k == dd { dv[local[dd]] } else { v[local[dd]] };
                }
            }
            if entry.value != 0.0 || entry.grad.iter().take(d).any(|g| *g != 0.0) {
                u[finest].insert(encode_index(&idx, &dims), entry);
            }
        }

        // downward cascade: coarse payloads from surviving fine payloads
        for m in (0..finest).rev() {
            let fine_dims = space.levels[m + 1].basis_dims();
            let coarse_dims = space.levels[m].basis_dims();
            let zero = &self.zero_sets[m];
            let mut coarse: BTreeMap<usize, ThbValue> = BTreeMap::new();
            let fine_entries: Vec<(usize, ThbValue)> =
                u[m + 1].iter().map(|(k, v)| (*k, *v)).collect();
            for (fflat, payload) in fine_entries {
                if zero.contains_flat(fflat) {
                    continue;
                }
                let fidx = decode_index(fflat, &fine_dims);
                // iterate the per-dimension parent lists
                let lists: Vec<&Vec<(usize, f64)>> =
                    (0..d).map(|dd| &self.parents[m][dd][fidx[dd]]).collect();
                let counts: Vec<usize> = lists.iter().map(|l| l.len()).collect();
                let total: usize = counts.iter().product();
                for f in 0..total {
                    let local = decode_index(f, &counts);
                    let mut coeff = 1.0;
                    let mut jidx = Vec::with_capacity(d);
                    for dd in 0..d {
                        let (j, c) = lists[dd][local[dd]];
                        coeff *= c;
                        jidx.push(j);
                    }
                    if coeff == 0.0 {
                        continue;
                    }
                    let slot = coarse
                        .entry(encode_index(&jidx, &coarse_dims))
                        .or_insert_with(ThbValue::zero);
                    slot.value += coeff * payload.value;
                    for k in 0..d {
                        slot.grad[k] += coeff * payload.grad[k];
                    }
                }
            }
            u[m] = coarse;
        }
        Ok(u)
    }
}

/// One THB function with its finest-level coefficients after the truncation
/// cascade, stored sparsely.
#[derive(Clone, Debug)]
pub struct ThbFunction {
    pub level: usize,
    pub index: Vec<usize>,
    pub excluded: bool,
    pub fine_coeffs: BTreeMap<usize, f64>,
}

/// Explicit list of all active THB functions (boundary-excluded ones flagged),
/// each as a finest-level coefficient vector.
pub struct DenseTHBBasis {
    pub functions: Vec<ThbFunction>,
}

impl DenseTHBBasis {
    pub fn build(space: &HierarchicalSpace) -> Result<Self> {
        let num_levels = space.num_levels();
        let d = space.ndims();
        let mut two_scale: Vec<Vec<DMatrix<f64>>> = Vec::new();
        for m in 0..num_levels - 1 {
            two_scale.push(
                (0..d)
                    .map(|dd| {
                        two_scale_matrix(&space.levels[m].kvs[dd], &space.levels[m + 1].kvs[dd])
                    })
                    .collect::<Result<_>>()?,
            );
        }
        let mut zero_sets = Vec::new();
        for m in 0..num_levels - 1 {
            zero_sets.push(space.truncation_zero_set(m)?);
        }

        let mut functions = Vec::new();
        for l in 0..num_levels {
            let with_excluded = space.active_splines_with_excluded(l);
            for idx in with_excluded.iter() {
                let excluded = space.boundary_excluded[l].contains(&idx);
                let dims_l = space.levels[l].basis_dims();
                let mut coeffs: BTreeMap<usize, f64> = BTreeMap::new();
                coeffs.insert(encode_index(&idx, &dims_l), 1.0);
                for m in l..num_levels - 1 {
                    let fine_dims = space.levels[m + 1].basis_dims();
                    let coarse_dims = space.levels[m].basis_dims();
                    let mut next: BTreeMap<usize, f64> = BTreeMap::new();
                    for (jflat, w) in &coeffs {
                        let jidx = decode_index(*jflat, &coarse_dims);
                        // all fine splines receiving weight from j
                        let lists: Vec<Vec<(usize, f64)>> = (0..d)
                            .map(|dd| {
                                let c = &two_scale[m][dd];
                                (0..c.nrows())
                                    .filter(|&i| c[(i, jidx[dd])] != 0.0)
                                    .map(|i| (i, c[(i, jidx[dd])]))
                                    .collect()
                            })
                            .collect();
                        let counts: Vec<usize> = lists.iter().map(|v| v.len()).collect();
                        let total: usize = counts.iter().product();
                        for f in 0..total {
                            let local = decode_index(f, &counts);
                            let mut coeff = *w;
                            let mut iidx = Vec::with_capacity(d);
                            for dd in 0..d {
                                let (i, c) = lists[dd][local[dd]];
                                coeff *= c;
                                iidx.push(i);
                            }
                            if zero_sets[m].contains(&iidx) {
                                continue;
                            }
                            *next.entry(encode_index(&iidx, &fine_dims)).or_insert(0.0) += coeff;
                        }
                    }
                    coeffs = next;
                }
                functions.push(ThbFunction { level: l, index: idx, excluded, fine_coeffs: coeffs });
            }
        }
        Ok(DenseTHBBasis { functions })
    }

    /// Evaluates function `k` at `x` through its finest-level coefficients.
    pub fn eval(&self, space: &HierarchicalSpace, k: usize, x: &[f64]) -> Result<f64> {
        let finest = space.num_levels() - 1;
        let d = space.ndims();
        let dims = space.levels[finest].basis_dims();
        let mut locals = Vec::with_capacity(d);
        for dd in 0..d {
            locals.push(space.levels[finest].kvs[dd].eval_local(x[dd], 0)?);
        }
        let counts: Vec<usize> = locals.iter().map(|(_, v)| v.len()).collect();
        let total: usize = counts.iter().product();
        let mut out = 0.0;
        for f in 0..total {
            let local = decode_index(f, &counts);
            let mut idx = Vec::with_capacity(d);
            let mut b = 1.0;
            for dd in 0..d {
                let (first, v) = &locals[dd];
                idx.push(first + local[dd]);
                b *= v[local[dd]];
            }
            if let Some(c) = self.functions[k].fine_coeffs.get(&encode_index(&idx, &dims)) {
                out += c * b;
            }
        }
        Ok(out)
    }
}

/// Dense Galerkin system over the THB DoFs (stiffness, mass, load).
pub struct DenseSystem {
    pub stiffness: DMatrix<f64>,
    pub mass: DMatrix<f64>,
    pub load: DVector<f64>,
    pub num_dofs: usize,
}

/// Assembles the dense system by per-active-cell Gauss quadrature with the
/// weight functions evaluated exactly (not interpolated). With
/// `include_boundary` the boundary-excluded functions keep rows and columns,
/// which is what the partition-of-unity consistency checks need.
pub fn dense_assemble<F: Fn(&[f64]) -> f64>(
    space: &HierarchicalSpace,
    geometry: &GeometryMap,
    f: F,
    include_boundary: bool,
) -> Result<DenseSystem> {
    let evaluator = ThbEvaluator::new(space)?;
    let d = space.ndims();
    let num_levels = space.num_levels();

    // DoF ids: the shared numbering, optionally extended by the excluded
    // functions (appended after all regular DoFs, same level/index order).
    let (ids, mut num_dofs) = global_dof_ids(space);
    let mut ids_ext: Vec<HashMap<usize, usize>> = ids;
    if include_boundary {
        for l in 0..num_levels {
            let dims = space.levels[l].basis_dims();
            for idx in space.boundary_excluded[l].iter() {
                ids_ext[l].insert(encode_index(&idx, &dims), num_dofs);
                num_dofs += 1;
            }
        }
    }

    let mut stiffness = DMatrix::zeros(num_dofs, num_dofs);
    let mut mass = DMatrix::zeros(num_dofs, num_dofs);
    let mut load = DVector::zeros(num_dofs);

    for l in 0..num_levels {
        let kvs = &space.levels[l].kvs;
        let nq = kvs[0].degree + 2;
        for cell in space.active_cells[l].iter() {
            // tensor quadrature grid on the cell
            let mut rules = Vec::with_capacity(d);
            for dd in 0..d {
                let bp = kvs[dd].breakpoints();
                let (a, b) = bp.span(cell[dd]);
                rules.push(gauss_legendre_on(nq, a, b));
            }
            let counts: Vec<usize> = vec![nq; d];
            let total: usize = counts.iter().product();
            for q in 0..total {
                let local = decode_index(q, &counts);
                let mut x = Vec::with_capacity(d);
                let mut wq = 1.0;
                for dd in 0..d {
                    x.push(rules[dd].0[local[dd]]);
                    wq *= rules[dd].1[local[dd]];
                }
                let (omega, qmat) = geometry.weight_terms(&x)?;
                let phys = geometry.eval(&x)?;
                let fval = f(&phys);

                let u = evaluator.eval_all(&x)?;
                // collect (dof, value, grad) of all functions live here
                let mut live: Vec<(usize, f64, [f64; 3])> = Vec::new();
                for (lv, map) in u.iter().enumerate() {
                    for (flat, payload) in map {
                        if let Some(&dof) = ids_ext[lv].get(flat) {
                            live.push((dof, payload.value, payload.grad));
                        }
                    }
                }
                for (ai, &(da, va, ga)) in live.iter().enumerate() {
                    load[da] += wq * fval * omega * va;
                    for &(db, vb, gb) in live.iter().skip(ai) {
                        let mut s = 0.0;
                        for k in 0..d {
                            for m in 0..d {
                                s += ga[k] * qmat[(k, m)] * gb[m];
                            }
                        }
                        let kv = wq * s;
                        let mv = wq * omega * va * vb;
                        stiffness[(da, db)] += kv;
                        mass[(da, db)] += mv;
                        if da != db {
                            stiffness[(db, da)] += kv;
                            mass[(db, da)] += mv;
                        }
                    }
                }
            }
        }
    }
    Ok(DenseSystem { stiffness, mass, load, num_dofs })
}

/// Direct factorization; fails if the factorization breaks down or the
/// residual exceeds `1e-12` relative.
pub fn dense_solve(sys: &DenseSystem) -> Result<DVector<f64>> {
    let lu = sys.stiffness.clone().lu();
    let x = lu.solve(&sys.load).ok_or_else(|| Error::Singular("dense stiffness".into()))?;
    let residual = (&sys.stiffness * &x - &sys.load).norm();
    let scale = sys.load.norm().max(1e-300);
    if residual > 1e-12 * scale.max(sys.stiffness.norm() * x.norm()) {
        return Err(Error::Singular(format!("dense solve residual {residual}")));
    }
    Ok(x)
}

/// `√∫_Ω (y_h − y)² dx` by per-active-cell quadrature with `p+2` nodes per
/// direction; `coeffs` is the flat THB DoF vector.
pub fn l2_error<Y: Fn(&[f64]) -> f64>(
    coeffs: &DVector<f64>,
    space: &HierarchicalSpace,
    geometry: &GeometryMap,
    y_exact: Y,
) -> Result<f64> {
    let evaluator = ThbEvaluator::new(space)?;
    let (ids, _) = global_dof_ids(space);
    let d = space.ndims();
    let mut err2 = 0.0;
    for l in 0..space.num_levels() {
        let kvs = &space.levels[l].kvs;
        let nq = kvs[0].degree + 2;
        for cell in space.active_cells[l].iter() {
            let mut rules = Vec::with_capacity(d);
            for dd in 0..d {
                let bp = kvs[dd].breakpoints();
                let (a, b) = bp.span(cell[dd]);
                rules.push(gauss_legendre_on(nq, a, b));
            }
            let counts: Vec<usize> = vec![nq; d];
            let total: usize = counts.iter().product();
            for q in 0..total {
                let local = decode_index(q, &counts);
                let mut x = Vec::with_capacity(d);
                let mut wq = 1.0;
                for dd in 0..d {
                    x.push(rules[dd].0[local[dd]]);
                    wq *= rules[dd].1[local[dd]];
                }
                let (omega, _) = geometry.weight_terms(&x)?;
                let u = evaluator.eval_all(&x)?;
                let mut yh = 0.0;
                for (lv, map) in u.iter().enumerate() {
                    for (flat, payload) in map {
                        if let Some(&dof) = ids[lv].get(flat) {
                            yh += coeffs[dof] * payload.value;
                        }
                    }
                }
                let phys = geometry.eval(&x)?;
                let diff = yh - y_exact(&phys);
                err2 += wq * omega * diff * diff;
            }
        }
    }
    Ok(err2.sqrt())
}

/// `‖y‖_{L²(Ω)}` by direct quadrature, an independent check for the
/// zero-coefficient case.
pub fn l2_norm_of<Y: Fn(&[f64]) -> f64>(
    space: &HierarchicalSpace,
    geometry: &GeometryMap,
    y: Y,
) -> Result<f64> {
    let zero = DVector::zeros(global_dof_ids(space).1);
    l2_error(&zero, space, geometry, y)
}
