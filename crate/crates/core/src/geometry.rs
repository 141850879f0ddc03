//! Geometry map evaluation (F, ∇F), the induced weight functions ω and Q, and
//! separable low-rank interpolation of scalar fields on Greville grids.
//!
//! The interpolation system is an exact Kronecker product of univariate
//! collocation matrices; its inverse therefore acts core-wise on a TT tensor,
//! so fields are built by sampling the Greville grid, compressing with the
//! TT-SVD, and applying the univariate inverses to the matching core mode.

use crate::error::{Error, Result};
use crate::splines::KnotVector;
use crate::tt::{decode_index, TTVector, DENSE_CAP};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Polynomial B-spline geometry map `F: [0,1]^D -> R^D`.
#[derive(Clone, Debug)]
pub struct GeometryMap {
    pub kvs: Vec<KnotVector>,
    /// Control points, flat little-endian over the basis multi-index; each
    /// entry is one physical point.
    pub control_points: Vec<Vec<f64>>,
}

impl GeometryMap {
    pub fn ndims(&self) -> usize {
        self.kvs.len()
    }

    /// Identity map on the unit cube: degree 1, two basis functions per
    /// dimension, control points at the corners.
    pub fn identity(dims: usize) -> Self {
        let kvs: Vec<KnotVector> =
            (0..dims).map(|_| KnotVector::open_uniform(1, 1)).collect();
        let basis_dims: Vec<usize> = vec![2; dims];
        let total = 1usize << dims;
        let control_points = (0..total)
            .map(|flat| {
                decode_index(flat, &basis_dims).iter().map(|&c| c as f64).collect()
            })
            .collect();
        GeometryMap { kvs, control_points }
    }

    /// Diagonal scaling of the identity map.
    pub fn scaled(factors: &[f64]) -> Self {
        let mut map = Self::identity(factors.len());
        for p in map.control_points.iter_mut() {
            for (c, f) in p.iter_mut().zip(factors) {
                *c *= f;
            }
        }
        map
    }

    fn basis_dims(&self) -> Vec<usize> {
        self.kvs.iter().map(|kv| kv.num_basis()).collect()
    }

    /// `F(x̂) = Σ_i A_i β_i(x̂)`.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.ndims();
        let basis: Vec<DVector<f64>> = self
            .kvs
            .iter()
            .zip(x)
            .map(|(kv, &c)| kv.eval_basis(c, 0))
            .collect::<Result<_>>()?;
        let dims = self.basis_dims();
        let mut out = vec![0.0; d];
        for (flat, a) in self.control_points.iter().enumerate() {
            let idx = decode_index(flat, &dims);
            let w: f64 = idx.iter().enumerate().map(|(k, &i)| basis[k][i]).product();
            if w != 0.0 {
                for (o, &c) in out.iter_mut().zip(a) {
                    *o += w * c;
                }
            }
        }
        Ok(out)
    }

    /// Jacobian `∇F` with entries `J[c][d] = ∂F_c/∂x̂_d`.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.ndims();
        let vals: Vec<DVector<f64>> = self
            .kvs
            .iter()
            .zip(x)
            .map(|(kv, &c)| kv.eval_basis(c, 0))
            .collect::<Result<_>>()?;
        let ders: Vec<DVector<f64>> = self
            .kvs
            .iter()
            .zip(x)
            .map(|(kv, &c)| kv.eval_basis(c, 1))
            .collect::<Result<_>>()?;
        let dims = self.basis_dims();
        let mut jac = DMatrix::zeros(d, d);
        for (flat, a) in self.control_points.iter().enumerate() {
            let idx = decode_index(flat, &dims);
            for dd in 0..d {
                let mut w = 1.0;
                for (k, &i) in idx.iter().enumerate() {
                    w *= if k == dd { ders[k][i] } else { vals[k][i] };
                }
                if w != 0.0 {
                    for c in 0..d {
                        jac[(c, dd)] += w * a[c];
                    }
                }
            }
        }
        Ok(jac)
    }

    /// Weight functions of the pulled-back forms:
    /// `ω = |det ∇F|` and `Q = ω (∇Fᵀ∇F)⁻¹` (symmetric positive definite).
    pub fn weight_terms(&self, x: &[f64]) -> Result<(f64, DMatrix<f64>)> {
        let jac = self.jacobian(x)?;
        let det = jac.determinant();
        if det.abs() < 1e-14 {
            return Err(Error::Singular(format!("geometry Jacobian at {x:?}")));
        }
        let omega = det.abs();
        let gram = jac.transpose() * &jac;
        let inv = gram
            .try_inverse()
            .ok_or_else(|| Error::Singular(format!("metric at {x:?}")))?;
        Ok((omega, inv * omega))
    }
}

/// Tensor-product interpolation space with Greville collocation.
#[derive(Debug)]
pub struct InterpolationSpace {
    pub kvs: Vec<KnotVector>,
    pub greville: Vec<Vec<f64>>,
    colloc: Vec<DMatrix<f64>>,
    lu: Vec<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl InterpolationSpace {
    pub fn new(kvs: Vec<KnotVector>) -> Result<Self> {
        let greville: Vec<Vec<f64>> = kvs.iter().map(|kv| kv.greville()).collect();
        let mut colloc = Vec::new();
        let mut lu = Vec::new();
        for (kv, g) in kvs.iter().zip(&greville) {
            let n = kv.num_basis();
            let mut b = DMatrix::zeros(n, n);
            for (r, &x) in g.iter().enumerate() {
                let row = kv.eval_basis(x, 0)?;
                b.set_row(r, &row.transpose());
            }
            let f = b.clone().lu();
            if f.determinant().abs() < 1e-300 {
                return Err(Error::Singular("collocation matrix".into()));
            }
            colloc.push(b);
            lu.push(f);
        }
        Ok(InterpolationSpace { kvs, greville, colloc, lu })
    }

    /// Interpolation space for the geometry weights: one degree higher and one
    /// dyadic refinement of the geometry's knot vectors.
    pub fn for_weights(geometry: &GeometryMap) -> Result<Self> {
        let kvs = geometry
            .kvs
            .iter()
            .map(|kv| {
                let m = kv.breakpoints().num_cells();
                KnotVector::open_uniform(kv.degree + 1, 2 * m)
            })
            .collect();
        Self::new(kvs)
    }

    pub fn ndims(&self) -> usize {
        self.kvs.len()
    }

    pub fn basis_dims(&self) -> Vec<usize> {
        self.kvs.iter().map(|kv| kv.num_basis()).collect()
    }

    pub fn grid_size(&self) -> usize {
        self.basis_dims().iter().product()
    }

    pub fn collocation_matrix(&self, d: usize) -> &DMatrix<f64> {
        &self.colloc[d]
    }

    /// Greville node for a flat little-endian grid position.
    fn node(&self, flat: usize) -> Vec<f64> {
        let dims = self.basis_dims();
        decode_index(flat, &dims)
            .iter()
            .enumerate()
            .map(|(d, &i)| self.greville[d][i])
            .collect()
    }

    /// Applies the inverse collocation matrix of dimension `d` along the
    /// matching TT core mode (exact because the system is a Kronecker product
    /// of the univariate matrices).
    fn solve_mode(&self, coeff: &mut TTVector) -> Result<()> {
        for (d, core) in coeff.cores.iter_mut().enumerate() {
            let (rl, n, rr) = (core.r_left, core.n, core.r_right);
            let mut rhs = DMatrix::zeros(n, rl * rr);
            for b in 0..rr {
                for a in 0..rl {
                    for g in 0..n {
                        rhs[(g, a + rl * b)] = core.at(a, g, b);
                    }
                }
            }
            let sol = self.lu[d]
                .solve(&rhs)
                .ok_or_else(|| Error::Singular("collocation solve".into()))?;
            for b in 0..rr {
                for a in 0..rl {
                    for g in 0..n {
                        *core.at_mut(a, g, b) = sol[(g, a + rl * b)];
                    }
                }
            }
        }
        Ok(())
    }
}

/// Scalar field represented by a TT coefficient tensor over an interpolation
/// space: `field(x) = coeff : ⊗_d B̂(x_d)`.
#[derive(Clone, Debug)]
pub struct SeparableField {
    pub space: Arc<InterpolationSpace>,
    pub coeff: TTVector,
}

impl SeparableField {
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let basis: Vec<DVector<f64>> = self
            .space
            .kvs
            .iter()
            .zip(x)
            .map(|(kv, &c)| kv.eval_basis(c, 0))
            .collect::<Result<_>>()?;
        Ok(self.coeff.contract_with(&basis))
    }

    /// Univariate coefficient vectors of one CP term of the TT coefficient
    /// tensor, indexed by the interior rank tuple.
    pub fn cp_term(&self, rank_tuple: &[usize]) -> Vec<DVector<f64>> {
        let d = self.coeff.ndims();
        let mut out = Vec::with_capacity(d);
        for (k, core) in self.coeff.cores.iter().enumerate() {
            let a = if k == 0 { 0 } else { rank_tuple[k - 1] };
            let b = if k == d - 1 { 0 } else { rank_tuple[k] };
            out.push(DVector::from_fn(core.n, |i, _| core.at(a, i, b)));
        }
        out
    }

    /// Interior ranks, i.e. the CP term index bounds.
    pub fn interior_ranks(&self) -> Vec<usize> {
        let r = self.coeff.ranks();
        r[1..r.len() - 1].to_vec()
    }

    pub fn is_zero(&self) -> bool {
        self.coeff.norm() == 0.0
    }
}

/// Interpolates a sampler on the full Greville grid: sample, compress with the
/// TT-SVD at `tol`, then solve the collocation system core-wise.
pub fn interpolate_field<F: Fn(&[f64]) -> f64>(
    sampler: F,
    space: &Arc<InterpolationSpace>,
    tol: f64,
) -> Result<SeparableField> {
    interpolate_field_capped(sampler, space, tol, DENSE_CAP)
}

pub fn interpolate_field_capped<F: Fn(&[f64]) -> f64>(
    sampler: F,
    space: &Arc<InterpolationSpace>,
    tol: f64,
    cap: usize,
) -> Result<SeparableField> {
    let total = space.grid_size();
    if total > cap {
        return Err(Error::DenseCap { size: total, cap });
    }
    let samples: Vec<f64> = (0..total).map(|f| sampler(&space.node(f))).collect();
    let mut coeff = TTVector::from_dense(&space.basis_dims(), &samples, tol)?;
    space.solve_mode(&mut coeff)?;
    Ok(SeparableField { space: Arc::clone(space), coeff })
}

/// Interpolates ω and all entries of Q in one pass over the Greville grid.
/// Returns `(ω, Q)` with `Q[k][l] == Q[l][k]` sharing one construction.
pub fn interpolate_weight_and_metric(
    geometry: &GeometryMap,
    space: &Arc<InterpolationSpace>,
    tol: f64,
    cap: usize,
) -> Result<(SeparableField, Vec<Vec<SeparableField>>)> {
    let d = geometry.ndims();
    let total = space.grid_size();
    if total > cap {
        return Err(Error::DenseCap { size: total, cap });
    }
    let mut omega_samples = vec![0.0; total];
    let mut q_samples: Vec<Vec<f64>> = vec![vec![0.0; total]; d * (d + 1) / 2];
    for f in 0..total {
        let node = space.node(f);
        let (omega, q) = geometry.weight_terms(&node)?;
        omega_samples[f] = omega;
        let mut slot = 0;
        for k in 0..d {
            for l in k..d {
                q_samples[slot][f] = q[(k, l)];
                slot += 1;
            }
        }
    }
    let dims = space.basis_dims();
    let build = |samples: &[f64]| -> Result<SeparableField> {
        let mut coeff = TTVector::from_dense(&dims, samples, tol)?;
        space.solve_mode(&mut coeff)?;
        Ok(SeparableField { space: Arc::clone(space), coeff })
    };
    let omega = build(&omega_samples)?;
    let mut q: Vec<Vec<Option<SeparableField>>> = vec![vec![None; d]; d];
    let mut slot = 0;
    for k in 0..d {
        for l in k..d {
            let field = build(&q_samples[slot])?;
            q[l][k] = Some(field.clone());
            q[k][l] = Some(field);
            slot += 1;
        }
    }
    let q = q
        .into_iter()
        .map(|row| row.into_iter().map(|f| f.unwrap()).collect())
        .collect();
    Ok((omega, q))
}

/// Interpolates the pulled-back, ω-weighted source `x̂ ↦ f(F(x̂))·ω(x̂)` so the
/// load vector keeps the same univariate quadrature form as the mass terms.
pub fn interpolate_source<F: Fn(&[f64]) -> f64>(
    f: F,
    geometry: &GeometryMap,
    space: &Arc<InterpolationSpace>,
    tol: f64,
    cap: usize,
) -> Result<SeparableField> {
    interpolate_field_capped(
        |x| {
            let phys = geometry.eval(x).expect("domain point");
            let (omega, _) = geometry.weight_terms(x).expect("regular geometry");
            f(&phys) * omega
        },
        space,
        tol,
        cap,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_trilinear(rng: &mut ChaCha8Rng) -> GeometryMap {
        // identity plus a small random perturbation of the interior structure
        let mut map = GeometryMap::identity(3);
        for p in map.control_points.iter_mut() {
            for c in p.iter_mut() {
                *c += rng.random_range(-0.08..0.08);
            }
        }
        map
    }

    #[test]
    fn identity_map_is_identity() {
        let map = GeometryMap::identity(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..=1.0)).collect();
            let y = map.eval(&x).unwrap();
            for (a, b) in x.iter().zip(&y) {
                assert!((a - b).abs() < 1e-14);
            }
        }
        let (omega, q) = map.weight_terms(&[0.3, 0.4, 0.5]).unwrap();
        assert!((omega - 1.0).abs() < 1e-13);
        assert!((q - DMatrix::<f64>::identity(3, 3)).norm() < 1e-13);
    }

    #[test]
    fn affine_map_closed_form() {
        let map = GeometryMap::scaled(&[2.0, 1.0, 1.0]);
        let y = map.eval(&[0.5, 0.25, 0.75]).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-14);
        assert!((y[1] - 0.25).abs() < 1e-14);
        assert!((y[2] - 0.75).abs() < 1e-14);
        let (omega, q) = map.weight_terms(&[0.2, 0.6, 0.9]).unwrap();
        assert!((omega - 2.0).abs() < 1e-13);
        let expect = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0, 2.0]));
        assert!((q - expect).norm() < 1e-13);
    }

    #[test]
    fn trilinear_map_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let map = random_trilinear(&mut rng);
        for _ in 0..10 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..=1.0)).collect();
            let y = map.eval(&x).unwrap();
            // direct trilinear interpolation of the corner points
            let mut expect = vec![0.0; 3];
            for flat in 0..8 {
                let idx = decode_index(flat, &[2, 2, 2]);
                let w: f64 = (0..3)
                    .map(|d| if idx[d] == 1 { x[d] } else { 1.0 - x[d] })
                    .product();
                for c in 0..3 {
                    expect[c] += w * map.control_points[flat][c];
                }
            }
            for (a, b) in y.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let map = random_trilinear(&mut rng);
        let h = 1e-6;
        for _ in 0..10 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..0.95)).collect();
            let jac = map.jacobian(&x).unwrap();
            for d in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[d] += h;
                xm[d] -= h;
                let fp = map.eval(&xp).unwrap();
                let fm = map.eval(&xm).unwrap();
                for c in 0..3 {
                    let fd = (fp[c] - fm[c]) / (2.0 * h);
                    assert!((jac[(c, d)] - fd).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn constant_interpolates_to_ones() {
        let map = GeometryMap::identity(3);
        let space = Arc::new(InterpolationSpace::for_weights(&map).unwrap());
        assert_eq!(space.basis_dims(), vec![4, 4, 4]);
        let field = interpolate_field(|_| 1.0, &space, 1e-12).unwrap();
        assert_eq!(field.coeff.ranks(), vec![1, 1, 1, 1]);
        let dense = field.coeff.to_dense().unwrap();
        for v in &dense.data {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_weights_are_constant_fields() {
        let map = GeometryMap::identity(3);
        let space = Arc::new(InterpolationSpace::for_weights(&map).unwrap());
        let (omega, q) = interpolate_weight_and_metric(&map, &space, 1e-12, DENSE_CAP).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..=1.0)).collect();
            assert!((omega.eval(&x).unwrap() - 1.0).abs() < 1e-11);
            for k in 0..3 {
                for l in 0..3 {
                    let expect = if k == l { 1.0 } else { 0.0 };
                    assert!((q[k][l].eval(&x).unwrap() - expect).abs() < 1e-11);
                }
            }
        }
        // off-diagonal fields are zero tensors
        assert!(q[0][1].is_zero());
    }

    #[test]
    fn univariate_sampler_gives_unit_ranks() {
        let kvs = vec![
            KnotVector::open_uniform(3, 37),
            KnotVector::open_uniform(3, 37),
            KnotVector::open_uniform(3, 37),
        ];
        let space = Arc::new(InterpolationSpace::new(kvs).unwrap());
        let field = interpolate_field(|x| (-x[0] * x[0]).exp(), &space, 1e-8).unwrap();
        assert_eq!(field.interior_ranks(), vec![1, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..=1.0)).collect();
            let expect = (-x[0] * x[0]).exp();
            assert!((field.eval(&x).unwrap() - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn collocation_residual_within_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let map = random_trilinear(&mut rng);
        let space = Arc::new(InterpolationSpace::for_weights(&map).unwrap());
        let tol = 1e-10;
        let sampler = |x: &[f64]| map.weight_terms(x).unwrap().0;
        let field = interpolate_field(sampler, &space, tol).unwrap();
        let mut max_abs: f64 = 0.0;
        let mut max_err: f64 = 0.0;
        for f in 0..space.grid_size() {
            let node = space.node(f);
            let s = sampler(&node);
            max_abs = max_abs.max(s.abs());
            max_err = max_err.max((field.eval(&node).unwrap() - s).abs());
        }
        assert!(max_err <= tol * max_abs * 10.0, "residual {max_err}");
    }

    #[test]
    fn metric_fields_reproduce_weight_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let map = random_trilinear(&mut rng);
        let space = Arc::new(InterpolationSpace::for_weights(&map).unwrap());
        let tol = 1e-7;
        let (omega, q) = interpolate_weight_and_metric(&map, &space, tol, DENSE_CAP).unwrap();
        // Trilinear geometry makes ω and Q rational, not polynomial, so a
        // p̂ = 2 space carries genuine interpolation error; check a loose bound
        // at random points and exactness at the collocation nodes.
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..=1.0)).collect();
            let (w, qm) = map.weight_terms(&x).unwrap();
            assert!((omega.eval(&x).unwrap() - w).abs() < 5e-3);
            for k in 0..3 {
                for l in 0..3 {
                    assert!((q[k][l].eval(&x).unwrap() - qm[(k, l)]).abs() < 5e-3);
                }
            }
        }
        for f in (0..space.grid_size()).step_by(7) {
            let node = space.node(f);
            let (w, _) = map.weight_terms(&node).unwrap();
            assert!((omega.eval(&node).unwrap() - w).abs() < 1e-6);
        }
    }

    #[test]
    fn source_zero_and_ones() {
        let map = GeometryMap::identity(3);
        let kvs = vec![
            KnotVector::open_uniform(2, 4),
            KnotVector::open_uniform(2, 4),
            KnotVector::open_uniform(2, 4),
        ];
        let space = Arc::new(InterpolationSpace::new(kvs).unwrap());
        let zero = interpolate_source(|_| 0.0, &map, &space, 1e-12, DENSE_CAP).unwrap();
        assert!(zero.is_zero());
        let ones = interpolate_source(|_| 1.0, &map, &space, 1e-12, DENSE_CAP).unwrap();
        let dense = ones.coeff.to_dense().unwrap();
        for v in &dense.data {
            assert!((v - 1.0).abs() < 1e-11);
        }
    }

    #[test]
    fn grid_cap_rejected() {
        let kvs = vec![KnotVector::open_uniform(2, 30); 3];
        let space = Arc::new(InterpolationSpace::new(kvs).unwrap());
        assert!(matches!(
            interpolate_field_capped(|_| 1.0, &space, 1e-10, 1000),
            Err(Error::DenseCap { .. })
        ));
    }
}
