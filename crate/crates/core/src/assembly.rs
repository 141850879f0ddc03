//! Low-rank Galerkin assembly: univariate quadrature factors, per-level
//! mass/stiffness operators and load vectors over active-cell cuboids,
//! truncated two-scale operators, coupled level blocks, and the two global
//! block-assembly approaches.

use crate::cuboids::{
    discard_slices, greedy_partition, partition_pair, CuboidPartition, IndexBox, MultiIndexSet,
    SliceReduction,
};
use crate::error::{Error, Result};
use crate::geometry::SeparableField;
use crate::hierarchy::HierarchicalSpace;
use crate::quadrature::gauss_legendre_on;
use crate::splines::KnotVector;
use crate::tt::{decode_index, TTMatrix, TTVector};
use nalgebra::{DMatrix, DVector};

/// Which bilinear form a level operator discretizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    Mass,
    Stiffness,
}

/// Summation branch of the fewer-summands heuristic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    /// Accumulate directly over the cuboids of the target set.
    Direct,
    /// Full-grid term minus the cuboids of the complement.
    Complement,
}

/// Interpolated geometry weights: ω and the matrix field Q.
pub struct WeightFields {
    pub omega: SeparableField,
    pub q: Vec<Vec<SeparableField>>,
}

/// Reduced numberings of one level: splines meeting active cells and the
/// slice-compacted active mesh.
#[derive(Clone, Debug)]
pub struct LevelReduction {
    pub splines: SliceReduction,
    pub cells: SliceReduction,
    pub active_cells_reduced: MultiIndexSet,
}

/// Computes the reduced basis and mesh numbering of a level. Fails when a
/// level has no active cells at all (fully re-refined levels are outside the
/// supported refinement schemes).
pub fn level_reduction(space: &HierarchicalSpace, l: usize) -> Result<LevelReduction> {
    let active = &space.active_cells[l];
    if active.is_empty() {
        return Err(Error::InvalidConfig(format!("level {l} has no active cells")));
    }
    let (cells, active_cells_reduced) = discard_slices(active);
    let spline_set = space.splines_on_active_cells(l);
    let (splines, _) = discard_slices(&spline_set);
    Ok(LevelReduction { splines, cells, active_cells_reduced })
}

/// Univariate quadrature factor over a union of knot spans: entry `(i, j)` is
/// `∫ (wcore·B̂)(x) D^a β_kept[i](x) D^b β_kept[j](x) dx`, integrated span by
/// span with Gauss–Legendre rules exact for the spline-polynomial integrand.
pub struct UnivariateFactor {
    pub orders: (usize, usize),
    pub matrix: DMatrix<f64>,
}

/// Sub-spans of one test-basis span split at the weight-space breakpoints,
/// with the node count `⌈(2p + p̂ + 1)/2⌉` that integrates the product exactly.
fn subspans(test: &KnotVector, wspace: &KnotVector, span: usize) -> Vec<(f64, f64)> {
    let bp = test.breakpoints();
    let (a, b) = bp.span(span);
    let mut cuts = vec![a];
    for &w in &wspace.breakpoints().values {
        if w > a + 1e-14 && w < b - 1e-14 {
            cuts.push(w);
        }
    }
    cuts.push(b);
    cuts.windows(2).map(|w| (w[0], w[1])).collect()
}

pub fn univariate_factor(
    test: &KnotVector,
    kept: &[usize],
    wspace: &KnotVector,
    wcore: &DVector<f64>,
    spans: &[usize],
    orders: (usize, usize),
) -> Result<UnivariateFactor> {
    let n = kept.len();
    let mut m = DMatrix::zeros(n, n);
    let nq = (2 * test.degree + wspace.degree + 1).div_ceil(2);
    let num_cells = test.breakpoints().num_cells();
    for &s in spans {
        if s >= num_cells {
            return Err(Error::IndexOutOfRange { index: s + 1, max: num_cells });
        }
        for (a, b) in subspans(test, wspace, s) {
            let (xs, ws) = gauss_legendre_on(nq, a, b);
            for (&x, &wq) in xs.iter().zip(&ws) {
                let wval = wcore.dot(&wspace.eval_basis(x, 0)?);
                if wval == 0.0 {
                    continue;
                }
                let bu = test.eval_basis(x, orders.0)?;
                let u = DVector::from_fn(n, |i, _| bu[kept[i]]);
                if orders.0 == orders.1 {
                    m.ger(wq * wval, &u, &u, 1.0);
                } else {
                    let bv = test.eval_basis(x, orders.1)?;
                    let v = DVector::from_fn(n, |i, _| bv[kept[i]]);
                    m.ger(wq * wval, &u, &v, 1.0);
                }
            }
        }
    }
    Ok(UnivariateFactor { orders, matrix: m })
}

/// Load-vector analogue: entry `i` is `∫ (wcore·B̂)(x) β_kept[i](x) dx`.
pub fn univariate_rhs_factor(
    test: &KnotVector,
    kept: &[usize],
    wspace: &KnotVector,
    wcore: &DVector<f64>,
    spans: &[usize],
) -> Result<DVector<f64>> {
    let n = kept.len();
    let mut out = DVector::zeros(n);
    let nq = (2 * test.degree + wspace.degree + 1).div_ceil(2);
    for &s in spans {
        for (a, b) in subspans(test, wspace, s) {
            let (xs, ws) = gauss_legendre_on(nq, a, b);
            for (&x, &wq) in xs.iter().zip(&ws) {
                let wval = wcore.dot(&wspace.eval_basis(x, 0)?);
                if wval == 0.0 {
                    continue;
                }
                let bu = test.eval_basis(x, 0)?;
                for i in 0..n {
                    out[i] += wq * wval * bu[kept[i]];
                }
            }
        }
    }
    Ok(out)
}

/// Per-level operator over the reduced basis, plus the numbering that ties
/// reduced indices back to the level's full basis.
#[derive(Clone, Debug)]
pub struct LevelOperator {
    pub op: TTMatrix,
    pub reduction: SliceReduction,
}

/// Iterates all interior-rank tuples of a separable weight field.
fn rank_tuples(ranks: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = ranks.iter().product::<usize>().max(1);
    (0..total).map(|f| decode_index(f, ranks)).collect()
}

/// Integration terms of the fewer-summands heuristic: per-dimension lists of
/// original span indices plus the sign of the contribution.
fn integration_terms(
    red: &LevelReduction,
    branch: Branch,
) -> Vec<(Vec<Vec<usize>>, f64)> {
    let to_spans = |bx: &IndexBox| -> Vec<Vec<usize>> {
        (0..bx.start.len())
            .map(|d| bx.range(d).map(|c| red.cells.to_old(d, c)).collect())
            .collect()
    };
    match branch {
        Branch::Direct => greedy_partition(&red.active_cells_reduced)
            .boxes
            .iter()
            .map(|bx| (to_spans(bx), 1.0))
            .collect(),
        Branch::Complement => {
            let mut terms = vec![(
                red.cells.keep.to_vec(),
                1.0,
            )];
            for bx in greedy_partition(&red.active_cells_reduced.complement()).boxes.iter() {
                terms.push((to_spans(bx), -1.0));
            }
            terms
        }
    }
}

/// Picks the branch with fewer summands for the active-cell partition.
fn auto_branch(red: &LevelReduction) -> Branch {
    let (inside, complement) = partition_pair(&red.active_cells_reduced);
    if inside.num_boxes() <= complement.num_boxes() + 1 {
        Branch::Direct
    } else {
        Branch::Complement
    }
}

pub fn level_operator(
    space: &HierarchicalSpace,
    l: usize,
    kind: OperatorKind,
    weights: &WeightFields,
    tol: f64,
) -> Result<LevelOperator> {
    let red = level_reduction(space, l)?;
    let branch = auto_branch(&red);
    level_operator_with_branch(space, l, kind, weights, tol, branch, &red)
}

pub fn level_operator_with_branch(
    space: &HierarchicalSpace,
    l: usize,
    kind: OperatorKind,
    weights: &WeightFields,
    tol: f64,
    branch: Branch,
    red: &LevelReduction,
) -> Result<LevelOperator> {
    let d = space.ndims();
    let kvs = &space.levels[l].kvs;
    let terms = integration_terms(red, branch);

    // (field, per-dimension derivative orders) pairs making up the form
    let mut contributions: Vec<(&SeparableField, Vec<(usize, usize)>)> = Vec::new();
    match kind {
        OperatorKind::Mass => {
            contributions.push((&weights.omega, vec![(0, 0); d]));
        }
        OperatorKind::Stiffness => {
            for k in 0..d {
                for lq in 0..d {
                    let field = &weights.q[k][lq];
                    if field.is_zero() {
                        continue;
                    }
                    let orders: Vec<(usize, usize)> = (0..d)
                        .map(|dd| (usize::from(dd == k), usize::from(dd == lq)))
                        .collect();
                    contributions.push((field, orders));
                }
            }
        }
    }

    let mut total: Option<TTMatrix> = None;
    for (spans, sign) in &terms {
        let mut cuboid_sum: Option<TTMatrix> = None;
        for (field, orders) in &contributions {
            for tuple in rank_tuples(&field.interior_ranks()) {
                let w = field.cp_term(&tuple);
                let mut factors = Vec::with_capacity(d);
                for dd in 0..d {
                    let f = univariate_factor(
                        &kvs[dd],
                        &red.splines.keep[dd],
                        &field.space.kvs[dd],
                        &w[dd],
                        &spans[dd],
                        orders[dd],
                    )?;
                    factors.push(f.matrix);
                }
                let term = TTMatrix::from_kron(&factors);
                cuboid_sum = Some(match cuboid_sum {
                    None => term,
                    Some(acc) => acc.add(&term)?,
                });
            }
        }
        let contribution = cuboid_sum.expect("at least one weight term").round(tol).scaled(*sign);
        total = Some(match total {
            None => contribution,
            Some(acc) => acc.add(&contribution)?.round(tol),
        });
    }
    Ok(LevelOperator { op: total.expect("at least one cuboid"), reduction: red.splines.clone() })
}

/// Load vector over the reduced basis:
/// `∫_{active cells of l} β_i · g dx` with `g` the ω-weighted source field.
pub fn level_rhs(
    space: &HierarchicalSpace,
    l: usize,
    source: &SeparableField,
    tol: f64,
) -> Result<TTVector> {
    let red = level_reduction(space, l)?;
    level_rhs_with(space, l, source, tol, &red)
}

pub fn level_rhs_with(
    space: &HierarchicalSpace,
    l: usize,
    source: &SeparableField,
    tol: f64,
    red: &LevelReduction,
) -> Result<TTVector> {
    let d = space.ndims();
    let kvs = &space.levels[l].kvs;
    let branch = auto_branch(red);
    let terms = integration_terms(red, branch);

    let mut total: Option<TTVector> = None;
    for (spans, sign) in &terms {
        let mut cuboid_sum: Option<TTVector> = None;
        for tuple in rank_tuples(&source.interior_ranks()) {
            let w = source.cp_term(&tuple);
            let mut factors = Vec::with_capacity(d);
            for dd in 0..d {
                factors.push(univariate_rhs_factor(
                    &kvs[dd],
                    &red.splines.keep[dd],
                    &source.space.kvs[dd],
                    &w[dd],
                    &spans[dd],
                )?);
            }
            let term = TTVector::rank_one(&factors);
            cuboid_sum = Some(match cuboid_sum {
                None => term,
                Some(acc) => acc.add(&term)?,
            });
        }
        let contribution = cuboid_sum.expect("at least one term").round(tol).scaled(*sign);
        total = Some(match total {
            None => contribution,
            Some(acc) => acc.add(&contribution)?.round(tol),
        });
    }
    Ok(total.expect("at least one cuboid"))
}

/// Restriction of the full univariate two-scale matrix to kept indices.
fn restricted_two_scale(
    fine_kv: &KnotVector,
    coarse_kv: &KnotVector,
    keep_fine: &[usize],
    keep_coarse: &[usize],
) -> Result<DMatrix<f64>> {
    let full = crate::splines::two_scale_matrix(coarse_kv, fine_kv)?;
    Ok(DMatrix::from_fn(keep_fine.len(), keep_coarse.len(), |i, j| {
        full[(keep_fine[i], keep_coarse[j])]
    }))
}

/// Zeroes the rows of `c` outside the box range of dimension `d`.
fn row_masked(c: &DMatrix<f64>, range: std::ops::Range<usize>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(c.nrows(), c.ncols());
    for i in range {
        out.set_row(i, &c.row(i));
    }
    out
}

/// Truncated two-scale operator `C^{(l+1,l)}` between the reduced numberings:
/// entry `(i, j)` equals the two-scale coefficient when fine spline `i` is not
/// truncated at level `l+1`, and 0 otherwise. Built from spline-cuboid
/// partitions of the non-truncated (additive) or truncated (subtractive) set,
/// whichever has fewer summands.
pub fn truncation_tt(
    space: &HierarchicalSpace,
    l: usize,
    fine_red: &SliceReduction,
    coarse_red: &SliceReduction,
    tol: f64,
) -> Result<TTMatrix> {
    truncation_tt_with_branch(space, l, fine_red, coarse_red, tol, None)
}

pub fn truncation_tt_with_branch(
    space: &HierarchicalSpace,
    l: usize,
    fine_red: &SliceReduction,
    coarse_red: &SliceReduction,
    tol: f64,
    force: Option<Branch>,
) -> Result<TTMatrix> {
    let d = space.ndims();
    let mut restricted = Vec::with_capacity(d);
    for dd in 0..d {
        restricted.push(restricted_two_scale(
            &space.levels[l + 1].kvs[dd],
            &space.levels[l].kvs[dd],
            &fine_red.keep[dd],
            &coarse_red.keep[dd],
        )?);
    }

    let zero_full = space.truncation_zero_set(l)?;
    let zero_reduced = fine_red.reduce_set(&zero_full);
    let kept = zero_reduced.complement();

    let (kept_part, zero_part) = (greedy_partition(&kept), greedy_partition(&zero_reduced));
    let branch = force.unwrap_or({
        if kept_part.num_boxes() <= zero_part.num_boxes() + 1 {
            Branch::Direct
        } else {
            Branch::Complement
        }
    });

    let sum_boxes = |part: &CuboidPartition| -> Result<Option<TTMatrix>> {
        let mut acc: Option<TTMatrix> = None;
        for bx in &part.boxes {
            let factors: Vec<DMatrix<f64>> =
                (0..d).map(|dd| row_masked(&restricted[dd], bx.range(dd))).collect();
            let term = TTMatrix::from_kron(&factors);
            acc = Some(match acc {
                None => term,
                Some(a) => a.add(&term)?.round(tol),
            });
        }
        Ok(acc)
    };

    let rows: Vec<usize> = fine_red.new_dims.clone();
    let cols: Vec<usize> = coarse_red.new_dims.clone();
    match branch {
        Branch::Direct => {
            Ok(sum_boxes(&kept_part)?.unwrap_or_else(|| TTMatrix::zeros(&rows, &cols)))
        }
        Branch::Complement => {
            let full = TTMatrix::from_kron(&restricted);
            match sum_boxes(&zero_part)? {
                None => Ok(full),
                Some(z) => Ok(full.add(&z.scaled(-1.0))?.round(tol)),
            }
        }
    }
}

/// Coupled level block
/// `M̃_{l,l'} = Σ_{k ≥ max(l,l')} (Π Cᵀ) M_k (Π Cᵀ)ᵀ`,
/// rounded at `tol` after every product and sum.
pub fn coupled_block(
    l: usize,
    lp: usize,
    level_ops: &[LevelOperator],
    truncations: &[TTMatrix],
    tol: f64,
) -> Result<TTMatrix> {
    let num_levels = level_ops.len();
    // chain(t, k): product C^{(t+1,t)ᵀ} ··· C^{(k,k-1)ᵀ} mapping level k to t
    let chain = |t: usize, k: usize| -> Result<Option<TTMatrix>> {
        let mut acc: Option<TTMatrix> = None;
        for m in t..k {
            let ct = truncations[m].transpose();
            acc = Some(match acc {
                None => ct,
                Some(a) => a.matmul(&ct)?.round(tol),
            });
        }
        Ok(acc)
    };
    let mut total: Option<TTMatrix> = None;
    for k in l.max(lp)..num_levels {
        let mk = &level_ops[k].op;
        let left = chain(l, k)?;
        let right = chain(lp, k)?;
        let mut term = match left {
            None => mk.clone(),
            Some(c) => c.matmul(mk)?.round(tol),
        };
        if let Some(c) = right {
            term = term.matmul(&c.transpose())?.round(tol);
        }
        total = Some(match total {
            None => term,
            Some(acc) => acc.add(&term)?.round(tol),
        });
    }
    Ok(total.expect("k range nonempty"))
}

/// Codomain of a Boolean selector: the local cuboid numbering or the full
/// slice-reduced global basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Codomain {
    Local,
    Global,
}

/// Rank-one Boolean selector `J` with per-dimension 0/1 factors: column `j`
/// picks the reduced-basis row carrying the same original spline index.
/// The box lives in the numbering of `target` (the active-spline reduction);
/// rows live in the numbering of `source` (the assembly reduction).
pub fn selector_tt(
    bx: &IndexBox,
    source: &SliceReduction,
    target: &SliceReduction,
    codomain: Codomain,
) -> TTMatrix {
    let d = bx.start.len();
    let mut factors = Vec::with_capacity(d);
    for dd in 0..d {
        let rows = source.new_dims[dd];
        let cols = match codomain {
            Codomain::Local => bx.extent[dd],
            Codomain::Global => target.new_dims[dd],
        };
        let mut f = DMatrix::zeros(rows, cols);
        for (pos, jt) in bx.range(dd).enumerate() {
            let old = target.to_old(dd, jt);
            if let Some(i) = source.to_new(dd, old) {
                let col = match codomain {
                    Codomain::Local => pos,
                    Codomain::Global => jt,
                };
                f[(i, col)] = 1.0;
            }
        }
        factors.push(f);
    }
    TTMatrix::from_kron(&factors)
}

/// All level pieces of the hierarchical operator before global selection.
pub struct HierarchicalOperator {
    pub reductions: Vec<LevelReduction>,
    pub level_ops: Vec<LevelOperator>,
    pub truncations: Vec<TTMatrix>,
    /// `coupled[l][l']` for all level pairs; `coupled[l'][l]` is the mirror
    /// transpose of `coupled[l][l']`.
    pub coupled: Vec<Vec<TTMatrix>>,
    pub rhs_levels: Vec<TTVector>,
    /// `f̃_l = Σ_k (Π Cᵀ) f_k`, the one-sided analogue of the matrix chains.
    pub rhs_tilde: Vec<TTVector>,
}

pub fn build_hierarchical(
    space: &HierarchicalSpace,
    kind: OperatorKind,
    weights: &WeightFields,
    source: &SeparableField,
    tol: f64,
) -> Result<HierarchicalOperator> {
    let num_levels = space.num_levels();
    let mut reductions = Vec::with_capacity(num_levels);
    for l in 0..num_levels {
        reductions.push(level_reduction(space, l)?);
    }
    let mut level_ops = Vec::with_capacity(num_levels);
    let mut rhs_levels = Vec::with_capacity(num_levels);
    for l in 0..num_levels {
        let branch = auto_branch(&reductions[l]);
        level_ops.push(level_operator_with_branch(
            space,
            l,
            kind,
            weights,
            tol,
            branch,
            &reductions[l],
        )?);
        rhs_levels.push(level_rhs_with(space, l, source, tol, &reductions[l])?);
    }
    let mut truncations = Vec::with_capacity(num_levels.saturating_sub(1));
    for l in 0..num_levels.saturating_sub(1) {
        truncations.push(truncation_tt(
            space,
            l,
            &reductions[l + 1].splines,
            &reductions[l].splines,
            tol,
        )?);
    }
    let mut coupled: Vec<Vec<Option<TTMatrix>>> = vec![vec![None; num_levels]; num_levels];
    for l in 0..num_levels {
        for lp in l..num_levels {
            let block = coupled_block(l, lp, &level_ops, &truncations, tol)?;
            if lp > l {
                coupled[lp][l] = Some(block.transpose());
            }
            coupled[l][lp] = Some(block);
        }
    }
    let coupled =
        coupled.into_iter().map(|row| row.into_iter().map(|b| b.unwrap()).collect()).collect();

    let mut rhs_tilde = Vec::with_capacity(num_levels);
    for l in 0..num_levels {
        let mut acc = rhs_levels[l].clone();
        let mut chain: Option<TTMatrix> = None;
        for k in l + 1..num_levels {
            let ct = truncations[k - 1].transpose();
            chain = Some(match chain {
                None => ct,
                Some(c) => c.matmul(&ct)?.round(tol),
            });
            let term = chain.as_ref().unwrap().apply(&rhs_levels[k])?.round(tol);
            acc = acc.add(&term)?.round(tol);
        }
        rhs_tilde.push(acc);
    }

    Ok(HierarchicalOperator { reductions, level_ops, truncations, coupled, rhs_levels, rhs_tilde })
}

/// The global low-rank linear system: a block grid of TT operators with a
/// matching block right-hand side and index maps to the flat THB DoF vector.
pub struct BlockSystem {
    pub approach: u8,
    pub blocks: Vec<Vec<TTMatrix>>,
    pub rhs: Vec<TTVector>,
    /// Mode sizes of each block row.
    pub block_modes: Vec<Vec<usize>>,
    /// Level owning each block row.
    pub block_level: Vec<usize>,
    /// Flat little-endian position within a block row -> global THB DoF.
    pub dof_maps: Vec<Vec<Option<usize>>>,
    pub num_dofs: usize,
}

impl BlockSystem {
    pub fn num_block_rows(&self) -> usize {
        self.blocks.len()
    }

    /// Dense expansion restricted to true active DoFs.
    pub fn to_dense_active(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let n = self.num_dofs;
        let mut a = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        for (bi, row) in self.blocks.iter().enumerate() {
            let rhs_dense = self.rhs[bi].to_dense()?;
            for (local, dof) in self.dof_maps[bi].iter().enumerate() {
                if let Some(r) = dof {
                    b[*r] = rhs_dense.data[local];
                }
            }
            for (bj, block) in row.iter().enumerate() {
                let dense = block.to_dense()?;
                for (li, di) in self.dof_maps[bi].iter().enumerate() {
                    let Some(r) = di else { continue };
                    for (lj, dj) in self.dof_maps[bj].iter().enumerate() {
                        if let Some(c) = dj {
                            a[(*r, *c)] = dense[(li, lj)];
                        }
                    }
                }
            }
        }
        Ok((a, b))
    }

    /// Expands a block solution into the flat THB DoF vector.
    pub fn solution_to_dense(&self, blocks: &[TTVector]) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.num_dofs);
        for (bi, x) in blocks.iter().enumerate() {
            let dense = x.to_dense()?;
            for (local, dof) in self.dof_maps[bi].iter().enumerate() {
                if let Some(r) = dof {
                    out[*r] = dense.data[local];
                }
            }
        }
        Ok(out)
    }

    /// Text report of the block structure: sizes and TT ranks per block.
    pub fn structure_report(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "approach {} with {} block rows, {} DoFs\n",
            self.approach,
            self.num_block_rows(),
            self.num_dofs
        ));
        for (bi, row) in self.blocks.iter().enumerate() {
            for (bj, block) in row.iter().enumerate() {
                out.push_str(&format!(
                    "block ({bi},{bj}): rows {:?} cols {:?} ranks {:?}\n",
                    block.row_sizes(),
                    block.col_sizes(),
                    block.ranks()
                ));
            }
        }
        out
    }
}

/// Per-level selection data shared by both global approaches.
struct LevelSelection {
    level: usize,
    hat: SliceReduction,
    active_boxes: Vec<IndexBox>,
    inactive_boxes: Vec<IndexBox>,
}

fn level_selection(space: &HierarchicalSpace, l: usize) -> Option<LevelSelection> {
    let active = &space.active_splines[l];
    if active.is_empty() {
        return None;
    }
    let (hat, reduced_active) = discard_slices(active);
    let (part_active, part_inactive) = partition_pair(&reduced_active);
    Some(LevelSelection {
        level: l,
        hat,
        active_boxes: part_active.boxes,
        inactive_boxes: part_inactive.boxes,
    })
}

/// Assembles the global block system from the coupled level blocks, either as
/// one block per active-spline cuboid pair (approach 1) or as an L x L grid
/// with identity-masked diagonals (approach 2).
pub fn global_system(
    space: &HierarchicalSpace,
    hier: &HierarchicalOperator,
    approach: u8,
    tol: f64,
) -> Result<BlockSystem> {
    assert!(approach == 1 || approach == 2);
    let (ids, num_dofs) = crate::hierarchy::global_dof_ids(space);
    let selections: Vec<LevelSelection> =
        (0..space.num_levels()).filter_map(|l| level_selection(space, l)).collect();

    let mut blocks: Vec<Vec<TTMatrix>> = Vec::new();
    let mut rhs = Vec::new();
    let mut block_modes = Vec::new();
    let mut block_level = Vec::new();
    let mut dof_maps = Vec::new();

    if approach == 1 {
        // one block row per active-spline cuboid
        struct RowSel {
            level: usize,
            selector: TTMatrix,
            modes: Vec<usize>,
            map: Vec<Option<usize>>,
        }
        let mut rows: Vec<RowSel> = Vec::new();
        for sel in &selections {
            let l = sel.level;
            let src = &hier.reductions[l].splines;
            for bx in &sel.active_boxes {
                let selector = selector_tt(bx, src, &sel.hat, Codomain::Local);
                let dims = space.levels[l].basis_dims();
                let map = bx
                    .iter()
                    .map(|local| {
                        let old = sel.hat.map_index_to_old(&local);
                        let flat = crate::tt::encode_index(&old, &dims);
                        Some(ids[l][&flat])
                    })
                    .collect();
                rows.push(RowSel { level: l, selector, modes: bx.extent.clone(), map });
            }
        }
        for ri in &rows {
            let mut row_blocks = Vec::new();
            for rj in &rows {
                let coupled = &hier.coupled[ri.level][rj.level];
                let block = ri
                    .selector
                    .transpose()
                    .matmul(coupled)?
                    .round(tol)
                    .matmul(&rj.selector)?
                    .round(tol);
                row_blocks.push(block);
            }
            blocks.push(row_blocks);
            let f = ri.selector.transpose().apply(&hier.rhs_tilde[ri.level])?.round(tol);
            rhs.push(f);
            block_modes.push(ri.modes.clone());
            block_level.push(ri.level);
            dof_maps.push(ri.map.clone());
        }
    } else {
        // L x L grid over the slice-reduced active bases
        struct RowSel {
            level: usize,
            projector: TTMatrix,
            mask: Option<TTMatrix>,
            modes: Vec<usize>,
            map: Vec<Option<usize>>,
        }
        let mut rows: Vec<RowSel> = Vec::new();
        for sel in &selections {
            let l = sel.level;
            let src = &hier.reductions[l].splines;
            let mut projector: Option<TTMatrix> = None;
            for bx in &sel.active_boxes {
                let j = selector_tt(bx, src, &sel.hat, Codomain::Global);
                projector = Some(match projector {
                    None => j,
                    Some(p) => p.add(&j)?,
                });
            }
            let projector = projector.expect("active set nonempty").round(1e-14);
            let mut mask: Option<TTMatrix> = None;
            for bx in &sel.inactive_boxes {
                let factors: Vec<DMatrix<f64>> = (0..space.ndims())
                    .map(|d| {
                        let n = sel.hat.new_dims[d];
                        let mut f = DMatrix::zeros(n, n);
                        for i in bx.range(d) {
                            f[(i, i)] = 1.0;
                        }
                        f
                    })
                    .collect();
                let term = TTMatrix::from_kron(&factors);
                mask = Some(match mask {
                    None => term,
                    Some(m) => m.add(&term)?,
                });
            }
            let dims = space.levels[l].basis_dims();
            let total: usize = sel.hat.new_dims.iter().product();
            let map = (0..total)
                .map(|flat| {
                    let local = decode_index(flat, &sel.hat.new_dims);
                    let old = sel.hat.map_index_to_old(&local);
                    let f = crate::tt::encode_index(&old, &dims);
                    ids[l].get(&f).copied()
                })
                .collect();
            rows.push(RowSel {
                level: l,
                projector,
                mask,
                modes: sel.hat.new_dims.clone(),
                map,
            });
        }
        for ri in &rows {
            let mut row_blocks = Vec::new();
            for rj in &rows {
                let coupled = &hier.coupled[ri.level][rj.level];
                let mut block = ri
                    .projector
                    .transpose()
                    .matmul(coupled)?
                    .round(tol)
                    .matmul(&rj.projector)?
                    .round(tol);
                if ri.level == rj.level {
                    if let Some(mask) = &ri.mask {
                        block = block.add(mask)?.round(tol);
                    }
                }
                row_blocks.push(block);
            }
            blocks.push(row_blocks);
            let f = ri.projector.transpose().apply(&hier.rhs_tilde[ri.level])?.round(tol);
            rhs.push(f);
            block_modes.push(ri.modes.clone());
            block_level.push(ri.level);
            dof_maps.push(ri.map.clone());
        }
    }

    Ok(BlockSystem {
        approach,
        blocks,
        rhs,
        block_modes,
        block_level,
        dof_maps,
        num_dofs,
    })
}
