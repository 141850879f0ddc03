//! Tensor-train arithmetic: construction via truncated SVD, rounding, addition,
//! inner products, operator application/composition and diagonal extraction.
//!
//! All dense layouts are little-endian: dimension 1 runs fastest, so the flat
//! position of a multi-index `(i1, .., iD)` (0-based) is `i1 + n1*(i2 + n2*(..))`.
//! A Kronecker product of per-dimension factors therefore has entry
//! `A1[i1,j1] * A2[i2,j2] * ...` at flat row `(i1,..,iD)` and flat column
//! `(j1,..,jD)` in that same ordering.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Safety cap for dense expansions (number of scalar entries).
pub const DENSE_CAP: usize = 10_000_000;

/// Order-3 TT core of shape `(r_left, n, r_right)`.
///
/// Entry `(a, i, b)` is stored at `a + r_left * (i + n * b)`, which makes both
/// the left unfolding `(r_left*n) x r_right` and the right unfolding
/// `r_left x (n*r_right)` plain column-major reinterpretations of `data`.
#[derive(Clone, Debug, PartialEq)]
pub struct Core3 {
    pub r_left: usize,
    pub n: usize,
    pub r_right: usize,
    pub data: Vec<f64>,
}

impl Core3 {
    pub fn zeros(r_left: usize, n: usize, r_right: usize) -> Self {
        Core3 { r_left, n, r_right, data: vec![0.0; r_left * n * r_right] }
    }

    #[inline]
    pub fn at(&self, a: usize, i: usize, b: usize) -> f64 {
        self.data[a + self.r_left * (i + self.n * b)]
    }

    #[inline]
    pub fn at_mut(&mut self, a: usize, i: usize, b: usize) -> &mut f64 {
        &mut self.data[a + self.r_left * (i + self.n * b)]
    }

    /// The `r_left x r_right` matrix slice at mode index `i`.
    pub fn slice(&self, i: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.r_left, self.r_right);
        for b in 0..self.r_right {
            for a in 0..self.r_left {
                m[(a, b)] = self.at(a, i, b);
            }
        }
        m
    }

    pub fn left_unfold(&self) -> DMatrix<f64> {
        DMatrix::from_vec(self.r_left * self.n, self.r_right, self.data.clone())
    }

    pub fn right_unfold(&self) -> DMatrix<f64> {
        DMatrix::from_vec(self.r_left, self.n * self.r_right, self.data.clone())
    }

    pub fn from_left_unfold(m: DMatrix<f64>, r_left: usize, n: usize) -> Self {
        let r_right = m.ncols();
        debug_assert_eq!(m.nrows(), r_left * n);
        Core3 { r_left, n, r_right, data: m.data.into() }
    }

    pub fn from_right_unfold(m: DMatrix<f64>, n: usize, r_right: usize) -> Self {
        let r_left = m.nrows();
        debug_assert_eq!(m.ncols(), n * r_right);
        Core3 { r_left, n, r_right, data: m.data.into() }
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Dense tensor in little-endian layout, the bridge between TT values and
/// brute-force oracles.
#[derive(Clone, Debug)]
pub struct DenseTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        DenseTensor { shape: shape.to_vec(), data: vec![0.0; len] }
    }

    /// Flat little-endian position of a 0-based multi-index.
    pub fn flat(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut f = 0;
        let mut stride = 1;
        for (i, n) in idx.iter().zip(&self.shape) {
            debug_assert!(i < n);
            f += i * stride;
            stride *= n;
        }
        f
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flat(idx)]
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &DenseTensor) -> DenseTensor {
        assert_eq!(self.shape, other.shape);
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        DenseTensor { shape: self.shape.clone(), data }
    }
}

/// Decodes a flat little-endian index into a 0-based multi-index.
pub fn decode_index(mut flat: usize, dims: &[usize]) -> Vec<usize> {
    let mut idx = Vec::with_capacity(dims.len());
    for &n in dims {
        idx.push(flat % n);
        flat /= n;
    }
    idx
}

/// Encodes a 0-based multi-index into its flat little-endian position.
pub fn encode_index(idx: &[usize], dims: &[usize]) -> usize {
    let mut f = 0;
    let mut stride = 1;
    for (i, n) in idx.iter().zip(dims) {
        debug_assert!(i < n, "index {i} out of bound {n}");
        f += i * stride;
        stride *= n;
    }
    f
}

/// Truncated SVD of `m`: returns `(u, rest)` with `m ≈ u * rest`,
/// `u` having orthonormal columns and `rest = uᵀ m = Σ Vᵀ`.
///
/// The retained rank is the smallest `r` whose discarded tail satisfies
/// `Σ_{i>r} σ_i² ≤ delta²` (at least 1, at most `rmax` when given).
fn svd_truncate(
    m: &DMatrix<f64>,
    delta: f64,
    rmax: Option<usize>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (nr, nc) = m.shape();
    // Reduce to a square SVD of size min(nr, nc) through a QR of the long side.
    let ((u_all, svals), q_opt) = if nr <= nc {
        let qr = m.transpose().qr();
        let r = qr.r();
        let svd = r
            .transpose()
            .try_svd(true, false, 1.0e-14, 2000)
            .ok_or(Error::SvdFailed)?;
        (sorted_u(&svd), None)
    } else {
        let qr = m.clone().qr();
        let q = qr.q();
        let r = qr.r();
        let svd = r.try_svd(true, false, 1.0e-14, 2000).ok_or(Error::SvdFailed)?;
        (sorted_u(&svd), Some(q))
    };

    let mut tail = 0.0;
    let mut rank = svals.len();
    // Walk the tail until adding one more squared value would exceed delta².
    while rank > 1 {
        let s = svals[rank - 1];
        if tail + s * s > delta * delta {
            break;
        }
        tail += s * s;
        rank -= 1;
    }
    if let Some(cap) = rmax {
        rank = rank.min(cap.max(1));
    }

    let u_trunc = u_all.columns(0, rank).into_owned();
    let u = match q_opt {
        Some(q) => &q * &u_trunc,
        None => u_trunc,
    };
    let rest = u.transpose() * m;
    Ok((u, rest))
}

/// Left factor and singular values of an SVD, sorted by descending value.
fn sorted_u(svd: &nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>) -> (DMatrix<f64>, Vec<f64>) {
    let u = svd.u.as_ref().expect("u requested").clone();
    let s: Vec<f64> = svd.singular_values.iter().copied().collect();
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap());
    let sorted: Vec<f64> = order.iter().map(|&i| s[i]).collect();
    let mut u_sorted = DMatrix::zeros(u.nrows(), u.ncols());
    for (dst, &src) in order.iter().enumerate() {
        u_sorted.set_column(dst, &u.column(src));
    }
    (u_sorted, sorted)
}

/// Tensor in TT format: a chain of order-3 cores with unit boundary ranks.
#[derive(Clone, Debug)]
pub struct TTVector {
    pub cores: Vec<Core3>,
}

impl TTVector {
    pub fn ndims(&self) -> usize {
        self.cores.len()
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.n).collect()
    }

    /// Ranks `R[0..=D]` with `R[0] = R[D] = 1`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![self.cores[0].r_left];
        r.extend(self.cores.iter().map(|c| c.r_right));
        r
    }

    pub fn validate(&self) -> Result<()> {
        if self.cores.is_empty() {
            return Err(Error::EmptyMode);
        }
        if self.cores[0].r_left != 1 || self.cores.last().unwrap().r_right != 1 {
            return Err(Error::ShapeMismatch("boundary ranks must be 1".into()));
        }
        for w in self.cores.windows(2) {
            if w[0].r_right != w[1].r_left {
                return Err(Error::ShapeMismatch("adjacent core ranks differ".into()));
            }
        }
        if self.cores.iter().any(|c| c.n == 0) {
            return Err(Error::EmptyMode);
        }
        Ok(())
    }

    /// Rank-one tensor from per-dimension factor vectors.
    pub fn rank_one(factors: &[DVector<f64>]) -> Self {
        let cores = factors
            .iter()
            .map(|f| Core3 { r_left: 1, n: f.len(), r_right: 1, data: f.iter().copied().collect() })
            .collect();
        TTVector { cores }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::rank_one(&shape.iter().map(|&n| DVector::from_element(n, 1.0)).collect::<Vec<_>>())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::rank_one(&shape.iter().map(|&n| DVector::zeros(n)).collect::<Vec<_>>())
    }

    /// TT-SVD construction: successive truncated SVDs of the little-endian
    /// unfoldings, distributing the tolerance as `tol/√(D-1)` per sweep so that
    /// `‖dense(result) − tensor‖_F ≤ tol·‖tensor‖_F`.
    pub fn from_dense(shape: &[usize], data: &[f64], tol: f64) -> Result<Self> {
        Self::from_dense_capped(shape, data, tol, None)
    }

    pub fn from_dense_capped(
        shape: &[usize],
        data: &[f64],
        tol: f64,
        rmax: Option<usize>,
    ) -> Result<Self> {
        let d = shape.len();
        if d == 0 || shape.contains(&0) {
            return Err(Error::EmptyMode);
        }
        let total: usize = shape.iter().product();
        if data.len() != total {
            return Err(Error::ShapeMismatch(format!(
                "data length {} does not match shape product {}",
                data.len(),
                total
            )));
        }
        let norm = data.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(Self::zeros(shape));
        }
        let delta = if d > 1 { tol / ((d - 1) as f64).sqrt() * norm } else { 0.0 };

        let mut rest: Vec<f64> = data.to_vec();
        let mut r_prev = 1usize;
        let mut cores = Vec::with_capacity(d);
        for (k, &n) in shape.iter().enumerate().take(d - 1) {
            let rows = r_prev * n;
            let cols = rest.len() / rows;
            let m = DMatrix::from_vec(rows, cols, rest);
            let (u, rem) = svd_truncate(&m, delta, rmax)?;
            let r_new = u.ncols();
            cores.push(Core3 { r_left: r_prev, n, r_right: r_new, data: u.data.into() });
            rest = rem.data.into();
            r_prev = r_new;
            let _ = k;
        }
        cores.push(Core3 { r_left: r_prev, n: shape[d - 1], r_right: 1, data: rest });
        Ok(TTVector { cores })
    }

    /// Contracts the chain into a dense tensor (little-endian).
    pub fn to_dense(&self) -> Result<DenseTensor> {
        self.to_dense_capped(DENSE_CAP)
    }

    pub fn to_dense_capped(&self, cap: usize) -> Result<DenseTensor> {
        let shape = self.mode_sizes();
        let total: usize = shape.iter().product();
        if total > cap {
            return Err(Error::DenseCap { size: total, cap });
        }
        // acc is a (P x r) column-major buffer; multiplying by the right
        // unfolding (r x n*r') and reinterpreting yields (P*n x r').
        let mut acc: Vec<f64> = vec![1.0];
        let mut p = 1usize;
        let mut r = 1usize;
        for core in &self.cores {
            let m = DMatrix::from_vec(p, r, acc);
            let prod = m * core.right_unfold();
            p *= core.n;
            r = core.r_right;
            acc = prod.data.into();
        }
        Ok(DenseTensor { shape, data: acc })
    }

    /// TT rounding: right-to-left orthogonalization followed by a left-to-right
    /// truncated-SVD sweep at `tol/√(D-1)` relative to the tensor norm.
    pub fn round(&self, tol: f64) -> Self {
        self.round_capped(tol, None)
    }

    pub fn round_capped(&self, tol: f64, rmax: Option<usize>) -> Self {
        let d = self.cores.len();
        if d == 1 {
            return self.clone();
        }
        let mut cores = self.cores.clone();
        // Right-to-left LQ orthogonalization (via QR of the transpose).
        for k in (1..d).rev() {
            let m = cores[k].right_unfold();
            let qr = m.transpose().qr();
            let q = qr.q();
            let rfac = qr.r();
            let r_new = q.ncols();
            cores[k] = Core3::from_right_unfold(q.transpose(), cores[k].n, cores[k].r_right);
            let left = cores[k - 1].left_unfold() * rfac.transpose();
            let (rl, n) = (cores[k - 1].r_left, cores[k - 1].n);
            cores[k - 1] = Core3::from_left_unfold(left, rl, n);
            debug_assert_eq!(cores[k].r_left, r_new);
        }
        let norm = cores[0].frob_norm();
        if norm == 0.0 {
            return Self::zeros(&self.mode_sizes());
        }
        let delta = tol / ((d - 1) as f64).sqrt() * norm;
        // Left-to-right truncation sweep.
        for k in 0..d - 1 {
            let m = cores[k].left_unfold();
            let (u, rest) = match svd_truncate(&m, delta, rmax) {
                Ok(t) => t,
                Err(_) => return self.clone(),
            };
            let (rl, n) = (cores[k].r_left, cores[k].n);
            cores[k] = Core3::from_left_unfold(u, rl, n);
            let next = rest * cores[k + 1].right_unfold();
            let (nn, rr) = (cores[k + 1].n, cores[k + 1].r_right);
            cores[k + 1] = Core3::from_right_unfold(next, nn, rr);
        }
        TTVector { cores }
    }

    /// Exact sum; interior ranks add.
    pub fn add(&self, other: &TTVector) -> Result<TTVector> {
        if self.mode_sizes() != other.mode_sizes() {
            return Err(Error::ShapeMismatch(format!(
                "tt_add: {:?} vs {:?}",
                self.mode_sizes(),
                other.mode_sizes()
            )));
        }
        let d = self.cores.len();
        if d == 1 {
            let mut c = self.cores[0].clone();
            for (a, b) in c.data.iter_mut().zip(&other.cores[0].data) {
                *a += b;
            }
            return Ok(TTVector { cores: vec![c] });
        }
        let mut cores = Vec::with_capacity(d);
        for k in 0..d {
            let x = &self.cores[k];
            let y = &other.cores[k];
            let rl = if k == 0 { 1 } else { x.r_left + y.r_left };
            let rr = if k == d - 1 { 1 } else { x.r_right + y.r_right };
            let mut c = Core3::zeros(rl, x.n, rr);
            let (ox, oy) = if k == 0 { (0, 0) } else { (0, x.r_left) };
            let (cx, cy) = if k == d - 1 { (0, 0) } else { (0, x.r_right) };
            for i in 0..x.n {
                for a in 0..x.r_left {
                    for b in 0..x.r_right {
                        *c.at_mut(ox + a, i, cx + b) += x.at(a, i, b);
                    }
                }
                for a in 0..y.r_left {
                    for b in 0..y.r_right {
                        *c.at_mut(oy + a, i, cy + b) += y.at(a, i, b);
                    }
                }
            }
            cores.push(c);
        }
        Ok(TTVector { cores })
    }

    /// Scaling is folded into the first core.
    pub fn scaled(&self, alpha: f64) -> TTVector {
        let mut cores = self.cores.clone();
        for v in cores[0].data.iter_mut() {
            *v *= alpha;
        }
        TTVector { cores }
    }

    /// Inner product `Σ_i x[i]·y[i]` by sweeping the rank transfer matrix.
    pub fn dot(&self, other: &TTVector) -> Result<f64> {
        if self.mode_sizes() != other.mode_sizes() {
            return Err(Error::ShapeMismatch(format!(
                "tt_dot: {:?} vs {:?}",
                self.mode_sizes(),
                other.mode_sizes()
            )));
        }
        let mut v = DMatrix::from_element(1, 1, 1.0);
        for (x, y) in self.cores.iter().zip(&other.cores) {
            let mut v_new = DMatrix::zeros(x.r_right, y.r_right);
            for i in 0..x.n {
                let xs = x.slice(i);
                let ys = y.slice(i);
                v_new += xs.transpose() * &v * ys;
            }
            v = v_new;
        }
        Ok(v[(0, 0)])
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).map(|v| v.max(0.0).sqrt()).unwrap_or(0.0)
    }

    /// Contracts each mode with a vector (e.g. basis values at a point).
    pub fn contract_with(&self, vectors: &[DVector<f64>]) -> f64 {
        debug_assert_eq!(vectors.len(), self.cores.len());
        let mut v = DMatrix::from_element(1, 1, 1.0);
        for (core, w) in self.cores.iter().zip(vectors) {
            let mut m = DMatrix::zeros(core.r_left, core.r_right);
            for i in 0..core.n {
                if w[i] != 0.0 {
                    for b in 0..core.r_right {
                        for a in 0..core.r_left {
                            m[(a, b)] += w[i] * core.at(a, i, b);
                        }
                    }
                }
            }
            v *= m;
        }
        v[(0, 0)]
    }

    /// Entry at a 0-based multi-index.
    pub fn element(&self, idx: &[usize]) -> f64 {
        let mut v = DMatrix::from_element(1, 1, 1.0);
        for (core, &i) in self.cores.iter().zip(idx) {
            v *= core.slice(i);
        }
        v[(0, 0)]
    }
}

/// Order-4 TT operator core of shape `(r_left, m, n, r_right)`.
///
/// Entry `(a, i, j, b)` is stored at `a + r_left*(i + m*(j + n*b))`; fusing the
/// `(i, j)` pair into one mode of size `m*n` therefore leaves the buffer
/// untouched, which is how matrix rounding and norms reuse the vector kernels.
#[derive(Clone, Debug)]
pub struct Core4 {
    pub r_left: usize,
    pub m: usize,
    pub n: usize,
    pub r_right: usize,
    pub data: Vec<f64>,
}

impl Core4 {
    pub fn zeros(r_left: usize, m: usize, n: usize, r_right: usize) -> Self {
        Core4 { r_left, m, n, r_right, data: vec![0.0; r_left * m * n * r_right] }
    }

    #[inline]
    pub fn at(&self, a: usize, i: usize, j: usize, b: usize) -> f64 {
        self.data[a + self.r_left * (i + self.m * (j + self.n * b))]
    }

    #[inline]
    pub fn at_mut(&mut self, a: usize, i: usize, j: usize, b: usize) -> &mut f64 {
        &mut self.data[a + self.r_left * (i + self.m * (j + self.n * b))]
    }

    pub fn slice(&self, i: usize, j: usize) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.r_left, self.r_right);
        for b in 0..self.r_right {
            for a in 0..self.r_left {
                s[(a, b)] = self.at(a, i, j, b);
            }
        }
        s
    }

    fn fuse(&self) -> Core3 {
        Core3 { r_left: self.r_left, n: self.m * self.n, r_right: self.r_right, data: self.data.clone() }
    }

    fn unfuse(c: Core3, m: usize, n: usize) -> Core4 {
        debug_assert_eq!(c.n, m * n);
        Core4 { r_left: c.r_left, m, n, r_right: c.r_right, data: c.data }
    }
}

/// Linear operator in TT form, acting on little-endian flattened tensors.
#[derive(Clone, Debug)]
pub struct TTMatrix {
    pub cores: Vec<Core4>,
}

impl TTMatrix {
    pub fn ndims(&self) -> usize {
        self.cores.len()
    }

    pub fn row_sizes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.m).collect()
    }

    pub fn col_sizes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.n).collect()
    }

    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![self.cores[0].r_left];
        r.extend(self.cores.iter().map(|c| c.r_right));
        r
    }

    /// Rank-one operator `⊗_d factors[d]` (little-endian index order).
    pub fn from_kron(factors: &[DMatrix<f64>]) -> Self {
        let cores = factors
            .iter()
            .map(|f| Core4 {
                r_left: 1,
                m: f.nrows(),
                n: f.ncols(),
                r_right: 1,
                data: f.data.as_vec().clone(),
            })
            .collect();
        TTMatrix { cores }
    }

    pub fn identity(sizes: &[usize]) -> Self {
        Self::from_kron(&sizes.iter().map(|&n| DMatrix::identity(n, n)).collect::<Vec<_>>())
    }

    pub fn zeros(row_sizes: &[usize], col_sizes: &[usize]) -> Self {
        Self::from_kron(
            &row_sizes
                .iter()
                .zip(col_sizes)
                .map(|(&m, &n)| DMatrix::zeros(m, n))
                .collect::<Vec<_>>(),
        )
    }

    /// Operator application; interior ranks multiply, the caller rounds.
    pub fn apply(&self, x: &TTVector) -> Result<TTVector> {
        if self.col_sizes() != x.mode_sizes() {
            return Err(Error::ShapeMismatch(format!(
                "ttm_apply: cols {:?} vs modes {:?}",
                self.col_sizes(),
                x.mode_sizes()
            )));
        }
        let mut cores = Vec::with_capacity(self.cores.len());
        for (a, v) in self.cores.iter().zip(&x.cores) {
            let rl = a.r_left * v.r_left;
            let rr = a.r_right * v.r_right;
            let mut c = Core3::zeros(rl, a.m, rr);
            for i in 0..a.m {
                let mut acc = DMatrix::zeros(rl, rr);
                for j in 0..a.n {
                    // Fused rank order: operator index fastest.
                    acc += v.slice(j).kronecker(&a.slice(i, j));
                }
                for b in 0..rr {
                    for al in 0..rl {
                        *c.at_mut(al, i, b) = acc[(al, b)];
                    }
                }
            }
            cores.push(c);
        }
        Ok(TTVector { cores })
    }

    /// Operator composition `self · other`; ranks multiply, the caller rounds.
    pub fn matmul(&self, other: &TTMatrix) -> Result<TTMatrix> {
        if self.col_sizes() != other.row_sizes() {
            return Err(Error::ShapeMismatch(format!(
                "ttm_matmul: cols {:?} vs rows {:?}",
                self.col_sizes(),
                other.row_sizes()
            )));
        }
        let mut cores = Vec::with_capacity(self.cores.len());
        for (a, b) in self.cores.iter().zip(&other.cores) {
            let rl = a.r_left * b.r_left;
            let rr = a.r_right * b.r_right;
            let mut c = Core4::zeros(rl, a.m, b.n, rr);
            for i in 0..a.m {
                for j in 0..b.n {
                    let mut acc = DMatrix::zeros(rl, rr);
                    for k in 0..a.n {
                        acc += b.slice(k, j).kronecker(&a.slice(i, k));
                    }
                    for bb in 0..rr {
                        for aa in 0..rl {
                            *c.at_mut(aa, i, j, bb) = acc[(aa, bb)];
                        }
                    }
                }
            }
            cores.push(c);
        }
        Ok(TTMatrix { cores })
    }

    pub fn transpose(&self) -> TTMatrix {
        let cores = self
            .cores
            .iter()
            .map(|c| {
                let mut t = Core4::zeros(c.r_left, c.n, c.m, c.r_right);
                for b in 0..c.r_right {
                    for j in 0..c.n {
                        for i in 0..c.m {
                            for a in 0..c.r_left {
                                *t.at_mut(a, j, i, b) = c.at(a, i, j, b);
                            }
                        }
                    }
                }
                t
            })
            .collect();
        TTMatrix { cores }
    }

    /// Diagonal as a TT vector, by slicing each core at matching row/column.
    pub fn diag(&self) -> Result<TTVector> {
        if self.row_sizes() != self.col_sizes() {
            return Err(Error::ShapeMismatch("ttm_diag requires square modes".into()));
        }
        let cores = self
            .cores
            .iter()
            .map(|c| {
                let mut d = Core3::zeros(c.r_left, c.m, c.r_right);
                for b in 0..c.r_right {
                    for i in 0..c.m {
                        for a in 0..c.r_left {
                            *d.at_mut(a, i, b) = c.at(a, i, i, b);
                        }
                    }
                }
                d
            })
            .collect();
        Ok(TTVector { cores })
    }

    /// Embeds a vector as a diagonal operator.
    pub fn from_diag(v: &TTVector) -> TTMatrix {
        let cores = v
            .cores
            .iter()
            .map(|c| {
                let mut d = Core4::zeros(c.r_left, c.n, c.n, c.r_right);
                for b in 0..c.r_right {
                    for i in 0..c.n {
                        for a in 0..c.r_left {
                            *d.at_mut(a, i, i, b) = c.at(a, i, b);
                        }
                    }
                }
                d
            })
            .collect();
        TTMatrix { cores }
    }

    fn as_fused_vector(&self) -> TTVector {
        TTVector { cores: self.cores.iter().map(|c| c.fuse()).collect() }
    }

    fn from_fused_vector(v: TTVector, rows: &[usize], cols: &[usize]) -> TTMatrix {
        let cores = v
            .cores
            .into_iter()
            .zip(rows.iter().zip(cols))
            .map(|(c, (&m, &n))| Core4::unfuse(c, m, n))
            .collect();
        TTMatrix { cores }
    }

    pub fn add(&self, other: &TTMatrix) -> Result<TTMatrix> {
        if self.row_sizes() != other.row_sizes() || self.col_sizes() != other.col_sizes() {
            return Err(Error::ShapeMismatch("ttm_add".into()));
        }
        let sum = self.as_fused_vector().add(&other.as_fused_vector())?;
        Ok(Self::from_fused_vector(sum, &self.row_sizes(), &self.col_sizes()))
    }

    pub fn scaled(&self, alpha: f64) -> TTMatrix {
        Self::from_fused_vector(
            self.as_fused_vector().scaled(alpha),
            &self.row_sizes(),
            &self.col_sizes(),
        )
    }

    /// Rounding through the fused-mode vector kernel.
    pub fn round(&self, tol: f64) -> TTMatrix {
        Self::from_fused_vector(
            self.as_fused_vector().round(tol),
            &self.row_sizes(),
            &self.col_sizes(),
        )
    }

    pub fn frob_norm(&self) -> f64 {
        self.as_fused_vector().norm()
    }

    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        self.to_dense_capped(DENSE_CAP)
    }

    pub fn to_dense_capped(&self, cap: usize) -> Result<DMatrix<f64>> {
        let rows: usize = self.row_sizes().iter().product();
        let cols: usize = self.col_sizes().iter().product();
        if rows.saturating_mul(cols) > cap {
            return Err(Error::DenseCap { size: rows * cols, cap });
        }
        let fused = self.as_fused_vector().to_dense_capped(cap)?;
        let ms = self.row_sizes();
        let ns = self.col_sizes();
        let mut out = DMatrix::zeros(rows, cols);
        let fused_dims: Vec<usize> = ms.iter().zip(&ns).map(|(&m, &n)| m * n).collect();
        for (flat, &v) in fused.data.iter().enumerate() {
            let fidx = decode_index(flat, &fused_dims);
            let mut row = 0;
            let mut col = 0;
            let mut rstride = 1;
            let mut cstride = 1;
            for (d, &f) in fidx.iter().enumerate() {
                row += (f % ms[d]) * rstride;
                col += (f / ms[d]) * cstride;
                rstride *= ms[d];
                cstride *= ns[d];
            }
            out[(row, col)] = v;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0x5eed)
    }

    fn random_dense(shape: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor {
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        DenseTensor { shape: shape.to_vec(), data }
    }

    fn random_tt(shape: &[usize], rank: usize, rng: &mut ChaCha8Rng) -> TTVector {
        let d = shape.len();
        let mut cores = Vec::new();
        for (k, &n) in shape.iter().enumerate() {
            let rl = if k == 0 { 1 } else { rank };
            let rr = if k == d - 1 { 1 } else { rank };
            let data = (0..rl * n * rr).map(|_| rng.random_range(-1.0..1.0)).collect();
            cores.push(Core3 { r_left: rl, n, r_right: rr, data });
        }
        TTVector { cores }
    }

    /// Independent little-endian Kronecker product oracle.
    fn kron_dense(factors: &[DMatrix<f64>]) -> DMatrix<f64> {
        let rows: usize = factors.iter().map(|f| f.nrows()).product();
        let cols: usize = factors.iter().map(|f| f.ncols()).product();
        let mut out = DMatrix::zeros(rows, cols);
        let ms: Vec<usize> = factors.iter().map(|f| f.nrows()).collect();
        let ns: Vec<usize> = factors.iter().map(|f| f.ncols()).collect();
        for r in 0..rows {
            let ri = decode_index(r, &ms);
            for c in 0..cols {
                let ci = decode_index(c, &ns);
                let mut v = 1.0;
                for (d, f) in factors.iter().enumerate() {
                    v *= f[(ri[d], ci[d])];
                }
                out[(r, c)] = v;
            }
        }
        out
    }

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol * (1.0 + a.abs().max(b.abs())), "{a} vs {b}");
    }

    #[test]
    fn from_dense_rank_one_ones() {
        let t = DenseTensor { shape: vec![4, 4, 4], data: vec![1.0; 64] };
        let tt = TTVector::from_dense(&t.shape, &t.data, 1e-12).unwrap();
        assert_eq!(tt.ranks(), vec![1, 1, 1, 1]);
        let back = tt.to_dense().unwrap();
        for v in &back.data {
            assert_close(*v, 1.0, 1e-13);
        }
    }

    #[test]
    fn from_dense_sum_of_indices_is_rank_two() {
        // Entries i1 + i2 + i3 (1-based): an analytically rank-2 tensor.
        let shape = [4usize, 4, 4];
        let mut data = vec![0.0; 64];
        for (flat, v) in data.iter_mut().enumerate() {
            let idx = decode_index(flat, &shape);
            *v = (idx[0] + idx[1] + idx[2] + 3) as f64;
        }
        let tt = TTVector::from_dense(&shape, &data, 1e-12).unwrap();
        assert_eq!(tt.ranks(), vec![1, 2, 2, 1]);
        let back = tt.to_dense().unwrap();
        for (a, b) in back.data.iter().zip(&data) {
            assert_close(*a, *b, 1e-12);
        }
    }

    #[test]
    fn from_dense_round_trip_exact() {
        let mut rng = rng();
        let t = random_dense(&[5, 6, 7], &mut rng);
        let tt = TTVector::from_dense(&t.shape, &t.data, 0.0).unwrap();
        let back = tt.to_dense().unwrap();
        let err = back.sub(&t).frob_norm() / t.frob_norm();
        assert!(err < 1e-13, "round trip error {err}");
    }

    #[test]
    fn round_collinear_sum_returns_rank_one() {
        let x = TTVector::ones(&[3, 3, 3]);
        let doubled = x.add(&x).unwrap();
        assert_eq!(doubled.ranks(), vec![1, 2, 2, 1]);
        let rounded = doubled.round(1e-12);
        assert_eq!(rounded.ranks(), vec![1, 1, 1, 1]);
        let back = rounded.to_dense().unwrap();
        for v in &back.data {
            assert_close(*v, 2.0, 1e-12);
        }
    }

    #[test]
    fn round_respects_tolerance() {
        let mut rng = rng();
        let t = random_dense(&[4, 4, 4], &mut rng);
        let x = TTVector::from_dense(&t.shape, &t.data, 0.0).unwrap();
        let dense_x = x.to_dense().unwrap();
        let y = x.round(1e-10);
        let err = y.to_dense().unwrap().sub(&dense_x).frob_norm();
        assert!(err <= 1e-10 * dense_x.frob_norm() * (1.0 + 1e-9), "err {err}");
    }

    #[test]
    fn round_rank_cap_matches_truncated_svd() {
        // T[i,j,k] = (a_i b_j + c_i d_j) e_k is rank 2 in the first unfolding
        // and rank 1 afterwards, so capping at rank 1 must reproduce the best
        // rank-1 SVD approximation of the first unfolding exactly.
        let mut r = rng();
        let mut vec4 = || DVector::from_fn(4, |_, _| r.random_range(-1.0..1.0f64));
        let (a, b, c, d, e) = (vec4(), vec4(), vec4(), vec4(), vec4());
        let shape = [4usize, 4, 4];
        let mut data = vec![0.0; 64];
        for (flat, v) in data.iter_mut().enumerate() {
            let idx = decode_index(flat, &shape);
            *v = (a[idx[0]] * b[idx[1]] + c[idx[0]] * d[idx[1]]) * e[idx[2]];
        }
        let x = TTVector::from_dense(&shape, &data, 0.0).unwrap();
        let capped = x.round_capped(1e-14, Some(1));
        assert!(capped.ranks().iter().all(|&r| r <= 1));

        let m = DMatrix::from_vec(4, 16, data.clone());
        let svd = m.clone().svd(true, true);
        let u = svd.u.as_ref().unwrap();
        let vt = svd.v_t.as_ref().unwrap();
        let s = &svd.singular_values;
        let best1 = u.column(0) * s[0] * vt.row(0);
        let capped_dense = capped.to_dense().unwrap();
        let m_capped = DMatrix::from_vec(4, 16, capped_dense.data);
        assert!((best1 - m_capped).norm() < 1e-10);
    }

    #[test]
    fn add_zero_is_identity() {
        let mut rng = rng();
        let x = random_tt(&[3, 4, 2], 2, &mut rng);
        let z = TTVector::zeros(&[3, 4, 2]);
        let s = x.add(&z).unwrap();
        let dx = x.to_dense().unwrap();
        let ds = s.to_dense().unwrap();
        assert!(ds.sub(&dx).frob_norm() < 1e-14);
    }

    #[test]
    fn add_rank_bookkeeping() {
        let x = TTVector::ones(&[3, 3, 3]);
        let y = TTVector::rank_one(&[
            DVector::from_fn(3, |i, _| i as f64),
            DVector::from_fn(3, |i, _| 1.0 + i as f64),
            DVector::from_fn(3, |i, _| 2.0 - i as f64),
        ]);
        let s = x.add(&y).unwrap();
        assert_eq!(s.ranks(), vec![1, 2, 2, 1]);
    }

    #[test]
    fn add_matches_dense_sum() {
        let mut rng = rng();
        let x = random_tt(&[3, 4, 5], 3, &mut rng);
        let y = random_tt(&[3, 4, 5], 2, &mut rng);
        let s = x.add(&y).unwrap();
        let ds = s.to_dense().unwrap();
        let dx = x.to_dense().unwrap();
        let dy = y.to_dense().unwrap();
        for i in 0..ds.data.len() {
            assert_close(ds.data[i], dx.data[i] + dy.data[i], 1e-13);
        }
    }

    #[test]
    fn linearity_with_scaling() {
        let mut rng = rng();
        let x = random_tt(&[3, 3, 4], 2, &mut rng);
        let y = random_tt(&[3, 3, 4], 3, &mut rng);
        let (a, b) = (2.5, -0.75);
        let s = x.scaled(a).add(&y.scaled(b)).unwrap().to_dense().unwrap();
        let dx = x.to_dense().unwrap();
        let dy = y.to_dense().unwrap();
        for i in 0..s.data.len() {
            assert_close(s.data[i], a * dx.data[i] + b * dy.data[i], 1e-12);
        }
    }

    #[test]
    fn dot_counts_ones() {
        let x = TTVector::ones(&[3, 3, 3]);
        assert_close(x.dot(&x).unwrap(), 27.0, 1e-13);
    }

    #[test]
    fn dot_matches_dense_and_is_psd() {
        let mut rng = rng();
        let x = random_tt(&[4, 3, 5], 3, &mut rng);
        let y = random_tt(&[4, 3, 5], 2, &mut rng);
        let dx = x.to_dense().unwrap();
        let dy = y.to_dense().unwrap();
        let dense_dot: f64 = dx.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum();
        assert_close(x.dot(&y).unwrap(), dense_dot, 1e-12);
        assert!(x.dot(&x).unwrap() >= 0.0);
    }

    #[test]
    fn kron_identity_expands_to_identity() {
        let a = TTMatrix::identity(&[2, 3, 4]);
        let dense = a.to_dense().unwrap();
        assert_eq!(dense.nrows(), 24);
        assert!((dense - DMatrix::<f64>::identity(24, 24)).norm() < 1e-14);
    }

    #[test]
    fn kron_scalars() {
        let f: Vec<DMatrix<f64>> =
            [2.0, 3.0, 4.0].iter().map(|&v| DMatrix::from_element(1, 1, v)).collect();
        let a = TTMatrix::from_kron(&f);
        let dense = a.to_dense().unwrap();
        assert_close(dense[(0, 0)], 24.0, 1e-14);
    }

    #[test]
    fn kron_matches_dense_oracle() {
        let mut r = rng();
        let f: Vec<DMatrix<f64>> = [(2, 3), (3, 2), (2, 2)]
            .iter()
            .map(|&(m, n)| DMatrix::from_fn(m, n, |_, _| r.random_range(-1.0..1.0)))
            .collect();
        let a = TTMatrix::from_kron(&f);
        let dense = a.to_dense().unwrap();
        let oracle = kron_dense(&f);
        assert!((dense - oracle).norm() < 1e-13);
    }

    #[test]
    fn apply_identity_keeps_vector() {
        let mut r = rng();
        let x = random_tt(&[3, 4, 2], 2, &mut r);
        let a = TTMatrix::identity(&[3, 4, 2]);
        let y = a.apply(&x).unwrap();
        let diff = y.to_dense().unwrap().sub(&x.to_dense().unwrap()).frob_norm();
        assert!(diff < 1e-13);
    }

    #[test]
    fn apply_rank_one_kron_identity() {
        // (A⊗B⊗C)(u⊗v⊗w) = (Au)⊗(Bv)⊗(Cw)
        let mut r = rng();
        let f: Vec<DMatrix<f64>> =
            (0..3).map(|_| DMatrix::from_fn(3, 3, |_, _| r.random_range(-1.0..1.0))).collect();
        let u: Vec<DVector<f64>> =
            (0..3).map(|_| DVector::from_fn(3, |_, _| r.random_range(-1.0..1.0))).collect();
        let a = TTMatrix::from_kron(&f);
        let x = TTVector::rank_one(&u);
        let y = a.apply(&x).unwrap();
        assert_eq!(y.ranks(), vec![1, 1, 1, 1]);
        let expect = TTVector::rank_one(&[&f[0] * &u[0], &f[1] * &u[1], &f[2] * &u[2]]);
        let diff = y.to_dense().unwrap().sub(&expect.to_dense().unwrap()).frob_norm();
        assert!(diff < 1e-12);
    }

    #[test]
    fn apply_matches_dense_matvec() {
        let mut r = rng();
        let f1: Vec<DMatrix<f64>> =
            (0..3).map(|_| DMatrix::from_fn(3, 3, |_, _| r.random_range(-1.0..1.0))).collect();
        let f2: Vec<DMatrix<f64>> =
            (0..3).map(|_| DMatrix::from_fn(3, 3, |_, _| r.random_range(-1.0..1.0))).collect();
        let a = TTMatrix::from_kron(&f1).add(&TTMatrix::from_kron(&f2)).unwrap();
        let x = random_tt(&[3, 3, 3], 2, &mut r);
        let y = a.apply(&x).unwrap();
        // Interior ranks multiply before rounding.
        assert_eq!(y.ranks(), vec![1, 4, 4, 1]);
        let dense_a = a.to_dense().unwrap();
        let dense_x = DVector::from_vec(x.to_dense().unwrap().data);
        let expect = dense_a * dense_x;
        let got = y.to_dense().unwrap();
        for i in 0..expect.len() {
            assert_close(got.data[i], expect[i], 1e-12);
        }
    }

    #[test]
    fn matmul_identity_and_mixed_product() {
        let mut r = rng();
        let f: Vec<DMatrix<f64>> =
            (0..3).map(|_| DMatrix::from_fn(3, 3, |_, _| r.random_range(-1.0..1.0))).collect();
        let g: Vec<DMatrix<f64>> =
            (0..3).map(|_| DMatrix::from_fn(3, 3, |_, _| r.random_range(-1.0..1.0))).collect();
        let a = TTMatrix::from_kron(&f);
        let id = TTMatrix::identity(&[3, 3, 3]);
        let ai = a.matmul(&id).unwrap();
        assert!((ai.to_dense().unwrap() - a.to_dense().unwrap()).norm() < 1e-13);

        let b = TTMatrix::from_kron(&g);
        let ab = a.matmul(&b).unwrap();
        assert_eq!(ab.ranks(), vec![1, 1, 1, 1]);
        let prod: Vec<DMatrix<f64>> = f.iter().zip(&g).map(|(x, y)| x * y).collect();
        let expect = TTMatrix::from_kron(&prod);
        assert!((ab.to_dense().unwrap() - expect.to_dense().unwrap()).norm() < 1e-12);
    }

    #[test]
    fn matmul_matches_dense_product() {
        let mut r = rng();
        let mk = |r: &mut ChaCha8Rng| {
            let f: Vec<DMatrix<f64>> = [(2usize, 3usize), (3, 2), (2, 2)]
                .iter()
                .map(|&(m, n)| DMatrix::from_fn(m, n, |_, _| r.random_range(-1.0..1.0)))
                .collect();
            TTMatrix::from_kron(&f)
        };
        let a = mk(&mut r);
        let bt: Vec<DMatrix<f64>> = [(3usize, 2usize), (2, 3), (2, 2)]
            .iter()
            .map(|&(m, n)| DMatrix::from_fn(m, n, |_, _| r.random_range(-1.0..1.0)))
            .collect();
        let b = TTMatrix::from_kron(&bt);
        let ab = a.matmul(&b).unwrap();
        let expect = a.to_dense().unwrap() * b.to_dense().unwrap();
        assert!((ab.to_dense().unwrap() - expect).norm() < 1e-12);
    }

    #[test]
    fn diag_identity_and_kron() {
        let id = TTMatrix::identity(&[3, 4, 2]);
        let d = id.diag().unwrap();
        let dense = d.to_dense().unwrap();
        for v in &dense.data {
            assert_close(*v, 1.0, 1e-14);
        }

        let mut r = rng();
        let f: Vec<DMatrix<f64>> =
            (0..3).map(|_| DMatrix::from_fn(3, 3, |_, _| r.random_range(-1.0..1.0))).collect();
        let a = TTMatrix::from_kron(&f);
        let d = a.diag().unwrap().to_dense().unwrap();
        let expect = TTVector::rank_one(&[
            f[0].diagonal().clone_owned(),
            f[1].diagonal().clone_owned(),
            f[2].diagonal().clone_owned(),
        ])
        .to_dense()
        .unwrap();
        assert!(d.sub(&expect).frob_norm() < 1e-13);
    }

    #[test]
    fn diag_matches_dense_diagonal() {
        let mut r = rng();
        let f1: Vec<DMatrix<f64>> =
            (0..3).map(|_| DMatrix::from_fn(3, 3, |_, _| r.random_range(-1.0..1.0))).collect();
        let f2: Vec<DMatrix<f64>> =
            (0..3).map(|_| DMatrix::from_fn(3, 3, |_, _| r.random_range(-1.0..1.0))).collect();
        let a = TTMatrix::from_kron(&f1).add(&TTMatrix::from_kron(&f2)).unwrap();
        let d = a.diag().unwrap().to_dense().unwrap();
        let dense = a.to_dense().unwrap();
        for i in 0..27 {
            assert_close(d.data[i], dense[(i, i)], 1e-13);
        }
    }

    #[test]
    fn dense_cap_rejected_with_report() {
        let x = TTVector::ones(&[100, 100, 100]);
        match x.to_dense_capped(1000) {
            Err(Error::DenseCap { size, cap }) => {
                assert_eq!(size, 1_000_000);
                assert_eq!(cap, 1000);
            }
            other => panic!("expected cap error, got {other:?}"),
        }
    }

    #[test]
    fn transpose_matches_dense() {
        let mut r = rng();
        let f: Vec<DMatrix<f64>> = [(2usize, 3usize), (3, 2), (2, 4)]
            .iter()
            .map(|&(m, n)| DMatrix::from_fn(m, n, |_, _| r.random_range(-1.0..1.0)))
            .collect();
        let a = TTMatrix::from_kron(&f);
        let at = a.transpose();
        assert!((at.to_dense().unwrap() - a.to_dense().unwrap().transpose()).norm() < 1e-13);
    }

    #[test]
    fn matrix_round_keeps_value() {
        let mut r = rng();
        let f1: Vec<DMatrix<f64>> =
            (0..3).map(|_| DMatrix::from_fn(3, 3, |_, _| r.random_range(-1.0..1.0))).collect();
        let a = TTMatrix::from_kron(&f1);
        let s = a.add(&a.scaled(2.0)).unwrap();
        let rounded = s.round(1e-12);
        assert!(rounded.ranks().iter().all(|&x| x <= 1));
        assert!((rounded.to_dense().unwrap() - s.to_dense().unwrap()).norm() < 1e-10);
    }
}
