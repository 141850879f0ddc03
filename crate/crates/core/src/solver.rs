//! Block TT-GMRES with restarts and left preconditioning, plus the
//! block-diagonal and Jacobi preconditioners. Inner preconditioner solves use
//! a fixed-sweep alternating-least-squares cycle with a dense-factorization
//! fallback below a size cap.

use crate::assembly::BlockSystem;
use crate::error::{Error, Result};
use crate::tt::{TTMatrix, TTVector};
use nalgebra::{DMatrix, DVector};

/// Blocks over the dense fallback size are solved with ALS sweeps.
pub const DENSE_BLOCK_CAP: usize = 4000;

/// Tuple of TT tensors matching a block system's row structure.
#[derive(Clone, Debug)]
pub struct BlockVector {
    pub blocks: Vec<TTVector>,
}

impl BlockVector {
    pub fn zeros_like(system: &BlockSystem) -> Self {
        BlockVector {
            blocks: system.block_modes.iter().map(|m| TTVector::zeros(m)).collect(),
        }
    }

    pub fn dot(&self, other: &BlockVector) -> Result<f64> {
        let mut s = 0.0;
        for (a, b) in self.blocks.iter().zip(&other.blocks) {
            s += a.dot(b)?;
        }
        Ok(s)
    }

    pub fn norm(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm().powi(2)).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> BlockVector {
        BlockVector { blocks: self.blocks.iter().map(|b| b.scaled(alpha)).collect() }
    }

    /// `self + alpha * other`, rounded blockwise.
    pub fn add_scaled(&self, alpha: f64, other: &BlockVector, round_tol: f64) -> Result<BlockVector> {
        let blocks = self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| Ok(a.add(&b.scaled(alpha))?.round(round_tol)))
            .collect::<Result<_>>()?;
        Ok(BlockVector { blocks })
    }

    pub fn round(&self, tol: f64) -> BlockVector {
        BlockVector { blocks: self.blocks.iter().map(|b| b.round(tol)).collect() }
    }
}

impl BlockSystem {
    /// Block matvec `y_i = Σ_j A_ij x_j`, rounded at `round_tol` per row.
    pub fn apply(&self, x: &BlockVector, round_tol: f64) -> Result<BlockVector> {
        let mut out = Vec::with_capacity(self.blocks.len());
        for row in &self.blocks {
            let mut acc: Option<TTVector> = None;
            for (block, xj) in row.iter().zip(&x.blocks) {
                let term = block.apply(xj)?.round(round_tol);
                acc = Some(match acc {
                    None => term,
                    Some(a) => a.add(&term)?.round(round_tol),
                });
            }
            out.push(acc.expect("nonempty block row"));
        }
        Ok(BlockVector { blocks: out })
    }

    /// The block right-hand side as a block vector.
    pub fn rhs_vector(&self) -> BlockVector {
        BlockVector { blocks: self.rhs.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrecondKind {
    None,
    BlockDiag,
    Jacobi,
}

enum PrecPayload {
    Identity,
    /// Dense LU of a diagonal block (fallback under the size cap).
    DenseLu { lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>, modes: Vec<usize> },
    /// Diagonal block kept in TT for ALS sweeps.
    AlsOp { mat: TTMatrix },
    /// Dense reciprocal diagonal (Jacobi fallback).
    DenseDiag { inv: Vec<f64>, modes: Vec<usize> },
    /// Diagonal as TT operator for the elementwise inner solve.
    AlsDiag { mat: TTMatrix },
}

/// Left preconditioner acting blockwise on block vectors.
pub struct Preconditioner {
    pub kind: PrecondKind,
    pub inner_tol: f64,
    payload: Vec<PrecPayload>,
}

pub fn build_precond_none(system: &BlockSystem) -> Preconditioner {
    Preconditioner {
        kind: PrecondKind::None,
        inner_tol: 0.0,
        payload: system.block_modes.iter().map(|_| PrecPayload::Identity).collect(),
    }
}

/// Block-diagonal preconditioner: applies the inverse of every diagonal block
/// to the matching block of the residual.
pub fn build_precond_blockdiag(system: &BlockSystem, inner_tol: f64) -> Result<Preconditioner> {
    let mut payload = Vec::new();
    for (bi, row) in system.blocks.iter().enumerate() {
        let modes = system.block_modes[bi].clone();
        let size: usize = modes.iter().product();
        if size <= DENSE_BLOCK_CAP {
            let dense = row[bi].to_dense()?;
            let lu = dense.lu();
            if !lu.is_invertible() {
                return Err(Error::Singular(format!("diagonal block {bi}")));
            }
            payload.push(PrecPayload::DenseLu { lu, modes });
        } else {
            payload.push(PrecPayload::AlsOp { mat: row[bi].clone() });
        }
    }
    Ok(Preconditioner { kind: PrecondKind::BlockDiag, inner_tol, payload })
}

/// Jacobi preconditioner from the diagonal entries of the TT cores of each
/// diagonal block.
pub fn build_precond_jacobi(system: &BlockSystem, inner_tol: f64) -> Result<Preconditioner> {
    let mut payload = Vec::new();
    for (bi, row) in system.blocks.iter().enumerate() {
        let modes = system.block_modes[bi].clone();
        let size: usize = modes.iter().product();
        let diag = row[bi].diag()?;
        if size <= DENSE_BLOCK_CAP {
            let dense = diag.to_dense()?;
            let inv = dense
                .data
                .iter()
                .map(|&v| {
                    if v.abs() < 1e-300 {
                        Err(Error::Singular(format!("zero diagonal entry in block {bi}")))
                    } else {
                        Ok(1.0 / v)
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            payload.push(PrecPayload::DenseDiag { inv, modes });
        } else {
            payload.push(PrecPayload::AlsDiag { mat: TTMatrix::from_diag(&diag) });
        }
    }
    Ok(Preconditioner { kind: PrecondKind::Jacobi, inner_tol, payload })
}

impl Preconditioner {
    /// Applies the inverse to each block of `r`.
    pub fn apply(&self, r: &BlockVector) -> Result<BlockVector> {
        let mut out = Vec::with_capacity(r.blocks.len());
        for (payload, block) in self.payload.iter().zip(&r.blocks) {
            let z = match payload {
                PrecPayload::Identity => block.clone(),
                PrecPayload::DenseLu { lu, modes } => {
                    let dense = block.to_dense()?;
                    let rhs = DVector::from_vec(dense.data);
                    let sol = lu.solve(&rhs).ok_or_else(|| Error::Singular("precond".into()))?;
                    TTVector::from_dense(modes, sol.as_slice(), self.inner_tol * 0.1)?
                }
                PrecPayload::DenseDiag { inv, modes } => {
                    let dense = block.to_dense()?;
                    let scaled: Vec<f64> =
                        dense.data.iter().zip(inv).map(|(v, i)| v * i).collect();
                    TTVector::from_dense(modes, &scaled, self.inner_tol * 0.1)?
                }
                PrecPayload::AlsOp { mat } | PrecPayload::AlsDiag { mat } => {
                    als_solve(mat, block, self.inner_tol, 20)?
                }
            };
            out.push(z);
        }
        Ok(BlockVector { blocks: out })
    }
}

/// Outcome of a GMRES run; non-convergence at `maxit` is reported, not an
/// error.
pub struct GmresResult {
    pub x: BlockVector,
    pub iterations: usize,
    pub converged: bool,
    pub breakdown: bool,
    /// `(iteration, relative preconditioned residual)` rows.
    pub history: Vec<(usize, f64)>,
}

/// Restarted left-preconditioned block TT-GMRES with modified Gram-Schmidt and
/// one reorthogonalization pass; Krylov vectors are TT-rounded at `eps/10`.
pub fn solve_gmres(
    system: &BlockSystem,
    rhs: &BlockVector,
    eps: f64,
    restart: usize,
    maxit: usize,
    prec: &Preconditioner,
) -> Result<GmresResult> {
    assert!(eps > 0.0);
    let round_tol = eps / 10.0;
    let mut x = BlockVector::zeros_like(system);
    let mut history = Vec::new();
    let mut iterations = 0usize;

    let pb = prec.apply(rhs)?;
    let denom = pb.norm();
    if denom == 0.0 {
        return Ok(GmresResult { x, iterations: 0, converged: true, breakdown: false, history });
    }

    let mut converged = false;
    let mut breakdown = false;
    'outer: while iterations < maxit {
        // preconditioned residual
        let ax = system.apply(&x, round_tol)?;
        let r = rhs.add_scaled(-1.0, &ax, round_tol)?;
        let pr = prec.apply(&r)?.round(round_tol);
        let beta = pr.norm();
        if beta <= eps * denom {
            converged = true;
            break;
        }
        let mut basis = vec![pr.scaled(1.0 / beta)];
        // Hessenberg column storage and Givens machinery
        let m = restart;
        let mut h = DMatrix::zeros(m + 1, m);
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![0.0f64; m];
        let mut g = DVector::zeros(m + 1);
        g[0] = beta;

        let mut j_used = 0;
        for j in 0..m {
            if iterations >= maxit {
                break;
            }
            let av = system.apply(&basis[j], round_tol)?;
            let mut w = prec.apply(&av)?.round(round_tol);
            // modified Gram-Schmidt with one reorthogonalization pass
            for i in 0..=j {
                let hij = w.dot(&basis[i])?;
                h[(i, j)] = hij;
                w = w.add_scaled(-hij, &basis[i], round_tol)?;
            }
            for i in 0..=j {
                let c = w.dot(&basis[i])?;
                h[(i, j)] += c;
                w = w.add_scaled(-c, &basis[i], round_tol)?;
            }
            let hnext = w.norm();
            h[(j + 1, j)] = hnext;
            // apply previous Givens rotations to the new column
            for i in 0..j {
                let t = cs[i] * h[(i, j)] + sn[i] * h[(i + 1, j)];
                h[(i + 1, j)] = -sn[i] * h[(i, j)] + cs[i] * h[(i + 1, j)];
                h[(i, j)] = t;
            }
            let denom_g = (h[(j, j)] * h[(j, j)] + hnext * hnext).sqrt();
            if denom_g == 0.0 {
                breakdown = true;
                j_used = j;
                break;
            }
            cs[j] = h[(j, j)] / denom_g;
            sn[j] = hnext / denom_g;
            h[(j, j)] = denom_g;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            iterations += 1;
            let res_est = g[j + 1].abs() / denom;
            history.push((iterations, res_est));
            j_used = j + 1;

            if hnext <= 1e-14 * beta {
                breakdown = true;
                break;
            }
            basis.push(w.scaled(1.0 / hnext).round(round_tol));
            if res_est <= eps {
                break;
            }
        }
        if j_used > 0 {
            // back substitution on the rotated Hessenberg system
            let mut y = DVector::zeros(j_used);
            for i in (0..j_used).rev() {
                let mut s = g[i];
                for k in i + 1..j_used {
                    s -= h[(i, k)] * y[k];
                }
                y[i] = s / h[(i, i)];
            }
            for (k, yk) in y.iter().enumerate() {
                x = x.add_scaled(*yk, &basis[k], round_tol)?;
            }
        }
        // true preconditioned residual decides convergence across restarts;
        // a breakdown with small residual is the happy case
        let ax = system.apply(&x, round_tol)?;
        let r = rhs.add_scaled(-1.0, &ax, round_tol)?;
        let pr = prec.apply(&r)?;
        if pr.norm() <= eps * denom {
            converged = true;
            break;
        }
        if breakdown {
            break 'outer;
        }
    }
    if !converged {
        let ax = system.apply(&x, round_tol)?;
        let r = rhs.add_scaled(-1.0, &ax, round_tol)?;
        converged = prec.apply(&r)?.norm() <= eps * denom;
    }
    Ok(GmresResult { x, iterations, converged, breakdown, history })
}

/// Residual history as CSV rows `iteration,residual`.
pub fn history_csv(history: &[(usize, f64)]) -> String {
    let mut out = String::from("iteration,residual\n");
    for (it, res) in history {
        out.push_str(&format!("{it},{res:e}\n"));
    }
    out
}

// ---------------------------------------------------------------------------
// Fixed-sweep one-site ALS for TT linear systems (inner preconditioner solves)
// ---------------------------------------------------------------------------

/// 3-tensor frame (x-rank, operator-rank, x-rank) used in the ALS projections.
#[derive(Clone)]
struct Frame {
    a: usize,
    b: usize,
    c: usize,
    data: Vec<f64>,
}

impl Frame {
    fn ones() -> Self {
        Frame { a: 1, b: 1, c: 1, data: vec![1.0] }
    }

    #[inline]
    fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[i + self.a * (j + self.b * k)]
    }
}

/// 2-tensor frame (x-rank, rhs-rank) for the projected right-hand side.
#[derive(Clone)]
struct Frame2 {
    a: usize,
    b: usize,
    data: Vec<f64>,
}

impl Frame2 {
    fn ones() -> Self {
        Frame2 { a: 1, b: 1, data: vec![1.0] }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i + self.a * j]
    }
}

fn right_orthogonalize(x: &mut TTVector) {
    let d = x.cores.len();
    for k in (1..d).rev() {
        let m = x.cores[k].right_unfold();
        let qr = m.transpose().qr();
        let q = qr.q();
        let rfac = qr.r();
        let n = x.cores[k].n;
        let rr = x.cores[k].r_right;
        x.cores[k] = crate::tt::Core3::from_right_unfold(q.transpose(), n, rr);
        let left = x.cores[k - 1].left_unfold() * rfac.transpose();
        let (rl, nn) = (x.cores[k - 1].r_left, x.cores[k - 1].n);
        x.cores[k - 1] = crate::tt::Core3::from_left_unfold(left, rl, nn);
    }
}

/// Advances an operator frame across one core triple (left-to-right):
/// `L'[α2, a2, β2] = Σ X[α,i,α2] A[a,i,j,a2] Y[β,j,β2] L[α,a,β]`.
fn advance_frame_left(
    l: &Frame,
    xc: &crate::tt::Core3,
    ac: &crate::tt::Core4,
    yc: &crate::tt::Core3,
) -> Frame {
    let (a2, b2, c2) = (xc.r_right, ac.r_right, yc.r_right);
    let mut out = vec![0.0; a2 * b2 * c2];
    // t[α, a, β2, j] = Σ_β L[α,a,β] Y[β,j,β2]
    let mut t = vec![0.0; l.a * l.b * c2 * yc.n];
    for al in 0..l.a {
        for aa in 0..l.b {
            for be in 0..l.c {
                let lv = l.at(al, aa, be);
                if lv == 0.0 {
                    continue;
                }
                for j in 0..yc.n {
                    for b2i in 0..c2 {
                        t[al + l.a * (aa + l.b * (b2i + c2 * j))] += lv * yc.at(be, j, b2i);
                    }
                }
            }
        }
    }
    // s[α, i, a2, β2] = Σ_{a,j} A[a,i,j,a2] t[α,a,β2,j]
    let mut s = vec![0.0; l.a * xc.n * b2 * c2];
    for aa in 0..l.b {
        for i in 0..ac.m {
            for j in 0..ac.n {
                for a2i in 0..b2 {
                    let av = ac.at(aa, i, j, a2i);
                    if av == 0.0 {
                        continue;
                    }
                    for al in 0..l.a {
                        for b2i in 0..c2 {
                            s[al + l.a * (i + ac.m * (a2i + b2 * b2i))] +=
                                av * t[al + l.a * (aa + l.b * (b2i + c2 * j))];
                        }
                    }
                }
            }
        }
    }
    // out[α2, a2, β2] = Σ_{α,i} X[α,i,α2] s[α,i,a2,β2]
    for al in 0..l.a {
        for i in 0..xc.n {
            for a2x in 0..a2 {
                let xv = xc.at(al, i, a2x);
                if xv == 0.0 {
                    continue;
                }
                for a2i in 0..b2 {
                    for b2i in 0..c2 {
                        out[a2x + a2 * (a2i + b2 * b2i)] +=
                            xv * s[al + l.a * (i + ac.m * (a2i + b2 * b2i))];
                    }
                }
            }
        }
    }
    Frame { a: a2, b: b2, c: c2, data: out }
}

/// Mirror of `advance_frame_left` for right frames.
fn advance_frame_right(
    r: &Frame,
    xc: &crate::tt::Core3,
    ac: &crate::tt::Core4,
    yc: &crate::tt::Core3,
) -> Frame {
    let (a2, b2, c2) = (xc.r_left, ac.r_left, yc.r_left);
    let mut out = vec![0.0; a2 * b2 * c2];
    for al in 0..r.a {
        for aa in 0..r.b {
            for be in 0..r.c {
                let rv = r.at(al, aa, be);
                if rv == 0.0 {
                    continue;
                }
                for i in 0..ac.m {
                    for j in 0..ac.n {
                        for a2x in 0..a2 {
                            let xv = xc.at(a2x, i, al);
                            if xv == 0.0 {
                                continue;
                            }
                            for a2i in 0..b2 {
                                let av = ac.at(a2i, i, j, aa);
                                if av == 0.0 {
                                    continue;
                                }
                                for b2i in 0..c2 {
                                    out[a2x + a2 * (a2i + b2 * b2i)] +=
                                        rv * xv * av * yc.at(b2i, j, be);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Frame { a: a2, b: b2, c: c2, data: out }
}

fn advance_frame2_left(l: &Frame2, xc: &crate::tt::Core3, bc: &crate::tt::Core3) -> Frame2 {
    let (a2, b2) = (xc.r_right, bc.r_right);
    let mut out = vec![0.0; a2 * b2];
    for al in 0..l.a {
        for bb in 0..l.b {
            let lv = l.at(al, bb);
            if lv == 0.0 {
                continue;
            }
            for i in 0..xc.n {
                for a2x in 0..a2 {
                    let xv = xc.at(al, i, a2x);
                    if xv == 0.0 {
                        continue;
                    }
                    for b2x in 0..b2 {
                        out[a2x + a2 * b2x] += lv * xv * bc.at(bb, i, b2x);
                    }
                }
            }
        }
    }
    Frame2 { a: a2, b: b2, data: out }
}

fn advance_frame2_right(r: &Frame2, xc: &crate::tt::Core3, bc: &crate::tt::Core3) -> Frame2 {
    let (a2, b2) = (xc.r_left, bc.r_left);
    let mut out = vec![0.0; a2 * b2];
    for al in 0..r.a {
        for bb in 0..r.b {
            let rv = r.at(al, bb);
            if rv == 0.0 {
                continue;
            }
            for i in 0..xc.n {
                for a2x in 0..a2 {
                    let xv = xc.at(a2x, i, al);
                    if xv == 0.0 {
                        continue;
                    }
                    for b2x in 0..b2 {
                        out[a2x + a2 * b2x] += rv * xv * bc.at(b2x, i, bb);
                    }
                }
            }
        }
    }
    Frame2 { a: a2, b: b2, data: out }
}

/// Applies the projected local operator to a local core vector.
fn local_apply(
    l: &Frame,
    r: &Frame,
    ac: &crate::tt::Core4,
    z: &[f64],
    rl: usize,
    rr: usize,
) -> Vec<f64> {
    let n = ac.m;
    let mut out = vec![0.0; rl * n * rr];
    // t[α', j, β, ar] = Σ_β' z[α',j,β'] R[β, ar, β']
    let mut t = vec![0.0; rl * ac.n * r.a * ac.r_right];
    for bp in 0..r.c {
        for ar in 0..r.b {
            for be in 0..r.a {
                let rv = r.at(be, ar, bp);
                if rv == 0.0 {
                    continue;
                }
                for j in 0..ac.n {
                    for ap in 0..rl {
                        t[ap + rl * (j + ac.n * (be + r.a * ar))] +=
                            rv * z[ap + rl * (j + ac.n * bp)];
                    }
                }
            }
        }
    }
    // s[α', i, al, β] = Σ_{j, ar} A[al, i, j, ar] t[α', j, β, ar]
    let mut s = vec![0.0; rl * n * ac.r_left * r.a];
    for al in 0..ac.r_left {
        for i in 0..n {
            for j in 0..ac.n {
                for ar in 0..ac.r_right {
                    let av = ac.at(al, i, j, ar);
                    if av == 0.0 {
                        continue;
                    }
                    for ap in 0..rl {
                        for be in 0..r.a {
                            s[ap + rl * (i + n * (al + ac.r_left * be))] +=
                                av * t[ap + rl * (j + ac.n * (be + r.a * ar))];
                        }
                    }
                }
            }
        }
    }
    // out[α, i, β] = Σ_{α', al} L[α, al, α'] s[α', i, al, β]
    for al in 0..l.b {
        for ap in 0..l.c {
            for a in 0..l.a {
                let lv = l.at(a, al, ap);
                if lv == 0.0 {
                    continue;
                }
                for i in 0..n {
                    for be in 0..r.a {
                        out[a + rl * (i + n * be)] +=
                            lv * s[ap + rl * (i + n * (al + ac.r_left * be))];
                    }
                }
            }
        }
    }
    out
}

/// Conjugate gradients on the projected local system.
fn local_cg(
    l: &Frame,
    r: &Frame,
    ac: &crate::tt::Core4,
    rhs: &[f64],
    x0: &[f64],
    rl: usize,
    rr: usize,
    tol: f64,
) -> Vec<f64> {
    let n = rhs.len();
    let mut x = x0.to_vec();
    let ax = local_apply(l, r, ac, &x, rl, rr);
    let mut res: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = res.clone();
    let mut rs: f64 = res.iter().map(|v| v * v).sum();
    let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let maxit = (2 * n).max(50);
    for _ in 0..maxit {
        if rs.sqrt() <= tol * rhs_norm {
            break;
        }
        let ap = local_apply(l, r, ac, &p, rl, rr);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap.abs() < 1e-300 {
            break;
        }
        let alpha = rs / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            res[i] -= alpha * ap[i];
        }
        let rs_new: f64 = res.iter().map(|v| v * v).sum();
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..n {
            p[i] = res[i] + beta * p[i];
        }
    }
    x
}

/// Deterministic rank-2 enrichment tensor (xorshift-based), the crude stand-in
/// for the residual-driven basis expansion of adaptive TT solvers. One-site
/// updates alone cannot grow ranks, so stagnating sweeps add this kick.
fn kick_tensor(shape: &[usize], rank: usize, seed: &mut u64) -> TTVector {
    let mut next = || {
        *seed ^= *seed << 13;
        *seed ^= *seed >> 7;
        *seed ^= *seed << 17;
        (*seed >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    let d = shape.len();
    let cores = shape
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let rl = if k == 0 { 1 } else { rank };
            let rr = if k == d - 1 { 1 } else { rank };
            crate::tt::Core3 { r_left: rl, n, r_right: rr, data: (0..rl * n * rr).map(|_| next()).collect() }
        })
        .collect();
    TTVector { cores }
}

/// One-site ALS for `A x = b` with up to `nswp` sweeps; each sweep
/// re-orthogonalizes, rebuilds the right frames, and solves the local systems
/// left to right. Returns once the TT residual reaches `tol`.
pub fn als_solve(a: &TTMatrix, b: &TTVector, tol: f64, nswp: usize) -> Result<TTVector> {
    let d = b.ndims();
    if a.col_sizes() != b.mode_sizes() {
        return Err(Error::ShapeMismatch("als_solve".into()));
    }
    let bnorm = b.norm();
    if bnorm == 0.0 {
        return Ok(TTVector::zeros(&b.mode_sizes()));
    }
    let mut x = b.round(1e-2);
    let mut seed = 0x9e3779b97f4a7c15u64;
    for _ in 0..nswp {
        right_orthogonalize(&mut x);
        // right frames
        let mut r_frames = vec![Frame::ones(); d + 1];
        let mut rb_frames = vec![Frame2::ones(); d + 1];
        for k in (1..d).rev() {
            r_frames[k] = advance_frame_right(&r_frames[k + 1], &x.cores[k], &a.cores[k], &x.cores[k]);
            rb_frames[k] = advance_frame2_right(&rb_frames[k + 1], &x.cores[k], &b.cores[k]);
        }
        let mut l_frame = Frame::ones();
        let mut lb_frame = Frame2::ones();
        for k in 0..d {
            let (rl, n, rr) = (x.cores[k].r_left, x.cores[k].n, x.cores[k].r_right);
            // local rhs: Σ Lb[α, bl] B[bl, i, br] Rb[β, br]
            let bc = &b.cores[k];
            let mut rhs = vec![0.0; rl * n * rr];
            for al in 0..rl {
                for bl in 0..lb_frame.b {
                    let lv = lb_frame.at(al, bl);
                    if lv == 0.0 {
                        continue;
                    }
                    for i in 0..n {
                        for br in 0..bc.r_right {
                            let bv = bc.at(bl, i, br);
                            if bv == 0.0 {
                                continue;
                            }
                            for be in 0..rr {
                                rhs[al + rl * (i + n * be)] +=
                                    lv * bv * rb_frames[k + 1].at(be, br);
                            }
                        }
                    }
                }
            }
            let x0 = x.cores[k].data.clone();
            let sol =
                local_cg(&l_frame, &r_frames[k + 1], &a.cores[k], &rhs, &x0, rl, rr, tol * 0.1);
            x.cores[k].data = sol;
            if k + 1 < d {
                // left-orthogonalize and absorb, then advance the frames
                let m = x.cores[k].left_unfold();
                let qr = m.qr();
                let q = qr.q();
                let rfac = qr.r();
                x.cores[k] = crate::tt::Core3::from_left_unfold(q, rl, n);
                let next = rfac * x.cores[k + 1].right_unfold();
                let (nn, nr) = (x.cores[k + 1].n, x.cores[k + 1].r_right);
                x.cores[k + 1] = crate::tt::Core3::from_right_unfold(next, nn, nr);
                l_frame = advance_frame_left(&l_frame, &x.cores[k], &a.cores[k], &x.cores[k]);
                lb_frame = advance_frame2_left(&lb_frame, &x.cores[k], &b.cores[k]);
            }
        }
        let residual = a.apply(&x)?.round(tol * 0.01).add(&b.scaled(-1.0))?.norm();
        if residual <= tol * bnorm {
            break;
        }
        let kick = kick_tensor(&b.mode_sizes(), 2, &mut seed);
        let scale = 0.1 * residual / kick.norm().max(1e-300);
        x = x.add(&kick.scaled(scale))?;
        if x.ranks().iter().copied().max().unwrap_or(1) > 80 {
            x = x.round(tol * 0.01);
        }
    }
    Ok(x)
}
