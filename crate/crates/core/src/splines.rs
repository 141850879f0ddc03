//! Univariate B-spline machinery: open knot vectors, Cox–de Boor evaluation
//! (values and first derivatives), Greville abscissae, dyadic refinement and
//! knot-insertion two-scale matrices.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

const KNOT_EQ_TOL: f64 = 1e-12;

/// Degree plus open knot sequence on `[0, 1]`.
///
/// The first and last knots are repeated `p+1` times so the end basis
/// functions are interpolatory; the basis count is `n = len(knots) - p - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct KnotVector {
    pub degree: usize,
    pub knots: Vec<f64>,
}

/// Distinct knot values; `m` cells between `m+1` breakpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct Breakpoints {
    pub values: Vec<f64>,
}

impl Breakpoints {
    pub fn num_cells(&self) -> usize {
        self.values.len() - 1
    }

    /// Span `c` (0-based) as the interval `[values[c], values[c+1]]`.
    pub fn span(&self, c: usize) -> (f64, f64) {
        (self.values[c], self.values[c + 1])
    }
}

impl KnotVector {
    /// Open uniform knot vector with `m` cells; breakpoints are `j/m`.
    pub fn open_uniform(degree: usize, m: usize) -> Self {
        assert!(degree >= 1 && m >= 1);
        let mut knots = vec![0.0; degree + 1];
        for j in 1..m {
            knots.push(j as f64 / m as f64);
        }
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        KnotVector { degree, knots }
    }

    /// Basis count `n = len(knots) - p - 1`.
    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn breakpoints(&self) -> Breakpoints {
        let mut values: Vec<f64> = Vec::new();
        for &k in &self.knots {
            if values.last().is_none_or(|&v| k > v + KNOT_EQ_TOL) {
                values.push(k);
            }
        }
        Breakpoints { values }
    }

    /// Knot span index `k` with `knots[k] <= x < knots[k+1]`; at `x = 1` the
    /// left limit is used so the final basis function evaluates to 1.
    fn find_span(&self, x: f64) -> usize {
        let p = self.degree;
        let n = self.num_basis();
        if x >= 1.0 {
            // last non-empty span
            let mut k = n - 1;
            while self.knots[k + 1] <= self.knots[k] {
                k -= 1;
            }
            return k;
        }
        let mut lo = p;
        let mut hi = n;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Values of the `p+1` basis functions that are nonzero on the span of
    /// `x`; returns `(first_index, values)` (Cox–de Boor recursion).
    pub fn eval_local(&self, x: f64, deriv: usize) -> Result<(usize, Vec<f64>)> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::OutOfDomain(x));
        }
        assert!(deriv <= 1, "only values and first derivatives are provided");
        let p = self.degree;
        let k = self.find_span(x);
        if deriv == 0 {
            Ok((k - p, self.basis_funs(k, x, p)))
        } else {
            // N'_{i,p} = p ( N_{i,p-1}/(ξ_{i+p}-ξ_i) − N_{i+1,p-1}/(ξ_{i+p+1}-ξ_{i+1}) )
            let mut out = vec![0.0; p + 1];
            if p == 0 {
                return Ok((k, out));
            }
            let lower = self.basis_funs(k, x, p - 1); // functions k-p+1 .. k
            for (j, o) in out.iter_mut().enumerate() {
                let i = k - p + j;
                let mut v = 0.0;
                if j >= 1 {
                    let den = self.knots[i + p] - self.knots[i];
                    if den > 0.0 {
                        v += lower[j - 1] / den;
                    }
                }
                if j < p {
                    let den = self.knots[i + p + 1] - self.knots[i + 1];
                    if den > 0.0 {
                        v -= lower[j] / den;
                    }
                }
                *o = p as f64 * v;
            }
            Ok((k - p, out))
        }
    }

    /// Nonzero degree-`deg` basis values on span `k` (functions `k-deg..=k`).
    fn basis_funs(&self, k: usize, x: f64, deg: usize) -> Vec<f64> {
        let mut n = vec![0.0; deg + 1];
        let mut left = vec![0.0; deg + 1];
        let mut right = vec![0.0; deg + 1];
        n[0] = 1.0;
        for j in 1..=deg {
            left[j] = x - self.knots[k + 1 - j];
            right[j] = self.knots[k + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let den = right[r + 1] + left[j - r];
                let temp = if den > 0.0 { n[r] / den } else { 0.0 };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        n
    }

    /// All basis function values (or first derivatives) at `x` as a full
    /// vector of length `n`.
    pub fn eval_basis(&self, x: f64, deriv: usize) -> Result<DVector<f64>> {
        let (first, vals) = self.eval_local(x, deriv)?;
        let mut out = DVector::zeros(self.num_basis());
        for (j, v) in vals.iter().enumerate() {
            out[first + j] = *v;
        }
        Ok(out)
    }

    /// Greville abscissae `g_i = (ξ_{i+1} + … + ξ_{i+p}) / p`.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        (0..self.num_basis())
            .map(|i| self.knots[i + 1..=i + p].iter().sum::<f64>() / p as f64)
            .collect()
    }

    /// Inserts the midpoint of every span; cell count doubles, spaces nest.
    pub fn dyadic_refine(&self) -> KnotVector {
        let p = self.degree;
        let bp = self.breakpoints();
        let mut values = Vec::with_capacity(2 * bp.num_cells() + 1);
        for c in 0..bp.num_cells() {
            let (a, b) = bp.span(c);
            values.push(a);
            values.push(0.5 * (a + b));
        }
        values.push(1.0);
        let mut knots = vec![0.0; p + 1];
        knots.extend(values[1..values.len() - 1].iter().copied());
        knots.extend(std::iter::repeat_n(1.0, p + 1));
        KnotVector { degree: p, knots }
    }

    /// Contiguous 0-based cell range `(lo, hi)` on which basis `i` (0-based)
    /// is not identically zero.
    pub fn support_range(&self, i: usize) -> Result<(usize, usize)> {
        let n = self.num_basis();
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i + 1, max: n });
        }
        let a = self.knots[i];
        let b = self.knots[i + self.degree + 1];
        let bp = self.breakpoints();
        let mut lo = None;
        let mut hi = 0;
        for c in 0..bp.num_cells() {
            let (s, e) = bp.span(c);
            if s >= a - KNOT_EQ_TOL && e <= b + KNOT_EQ_TOL {
                if lo.is_none() {
                    lo = Some(c);
                }
                hi = c;
            }
        }
        Ok((lo.expect("support covers at least one span"), hi))
    }
}

/// Boehm single-knot insertion: returns the refined knot vector and the
/// `(n+1) x n` coefficient matrix mapping coarse control points to fine ones.
fn insert_knot(kv: &KnotVector, u: f64) -> (KnotVector, DMatrix<f64>) {
    let p = kv.degree;
    let n = kv.num_basis();
    let k = kv.find_span(u);
    let mut c = DMatrix::zeros(n + 1, n);
    for i in 0..=n {
        if i + p <= k {
            c[(i, i)] = 1.0;
        } else if i <= k {
            let den = kv.knots[i + p] - kv.knots[i];
            let alpha = if den > 0.0 { (u - kv.knots[i]) / den } else { 0.0 };
            c[(i, i)] = alpha;
            c[(i, i - 1)] = 1.0 - alpha;
        } else {
            c[(i, i - 1)] = 1.0;
        }
    }
    let mut knots = kv.knots.clone();
    knots.insert(k + 1, u);
    (KnotVector { degree: p, knots }, c)
}

/// Two-scale (refinement) matrix `C` with `β_coarse_j = Σ_i C[i,j] β_fine_i`,
/// computed by inserting the missing knots one at a time and composing.
///
/// All entries are non-negative and `C` maps the all-ones coarse coefficient
/// vector to the all-ones fine vector (constant reproduction).
pub fn two_scale_matrix(coarse: &KnotVector, fine: &KnotVector) -> Result<DMatrix<f64>> {
    if coarse.degree != fine.degree {
        return Err(Error::NotARefinement("degree differs".into()));
    }
    // Multiset difference fine \ coarse.
    let mut missing: Vec<f64> = Vec::new();
    let mut ci = 0;
    for &f in &fine.knots {
        if ci < coarse.knots.len() && (coarse.knots[ci] - f).abs() <= KNOT_EQ_TOL {
            ci += 1;
        } else {
            missing.push(f);
        }
    }
    if ci != coarse.knots.len() {
        return Err(Error::NotARefinement("fine knots do not contain the coarse knots".into()));
    }
    let mut kv = coarse.clone();
    let mut c = DMatrix::identity(coarse.num_basis(), coarse.num_basis());
    for &u in &missing {
        let (next, step) = insert_knot(&kv, u);
        c = step * c;
        kv = next;
    }
    if kv.knots.len() != fine.knots.len()
        || kv.knots.iter().zip(&fine.knots).any(|(a, b)| (a - b).abs() > KNOT_EQ_TOL)
    {
        return Err(Error::NotARefinement("knot multisets inconsistent".into()));
    }
    Ok(c)
}
