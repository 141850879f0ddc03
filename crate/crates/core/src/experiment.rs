//! Experiment harness: builds the configured refinement scheme, assembles the
//! stiffness system with both global approaches, solves with the chosen
//! preconditioner, and reports L2 error, iterations, timings and memory
//! estimates, optionally cross-checked against the dense oracle.

use crate::assembly::{build_hierarchical, global_system, BlockSystem, OperatorKind, WeightFields};
use crate::cuboids::MultiIndexSet;
use crate::error::{Error, Result};
use crate::geometry::{
    interpolate_source, interpolate_weight_and_metric, GeometryMap, InterpolationSpace,
};
use crate::hierarchy::HierarchicalSpace;
use crate::oracle;
use crate::solver::{
    build_precond_blockdiag, build_precond_jacobi, build_precond_none, solve_gmres, BlockVector,
    Preconditioner,
};
use crate::splines::KnotVector;
use crate::tt::decode_index;
use std::sync::Arc;
use std::time::Instant;

/// Analytic solutions of the model problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolutionId {
    Sol1,
    Sol2,
    Sol3,
}

/// Hierarchical refinement schemes of the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Slab,
    NestedSlab,
    TwoCorners,
    FourCorners,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrecChoice {
    Block,
    Jacobi,
    None,
}

impl std::fmt::Display for SolutionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolutionId::Sol1 => "sol1",
            SolutionId::Sol2 => "sol2",
            SolutionId::Sol3 => "sol3",
        };
        write!(f, "{s}")
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Scheme::Slab => "slab",
            Scheme::NestedSlab => "nested-slab",
            Scheme::TwoCorners => "two-corners",
            Scheme::FourCorners => "four-corners",
        };
        write!(f, "{s}")
    }
}

impl std::fmt::Display for PrecChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PrecChoice::Block => "block",
            PrecChoice::Jacobi => "jacobi",
            PrecChoice::None => "none",
        };
        write!(f, "{s}")
    }
}

/// Manufactured solution `y = y0 · exp(scale · Π_m F_m)` with the polynomial
/// Dirichlet factor `y0 = Π_d x_d (x_d - 1)` and quadratic bump factors
/// `F_m = Σ_d (x_d - c_d)²` over a per-dimension subset. The source `f = -Δy`
/// is the closed form assembled by the product rule, frozen here and checked
/// against a finite-difference Laplacian in the tests.
#[derive(Clone, Debug)]
pub struct Manufactured {
    scale: f64,
    factors: Vec<Vec<Option<f64>>>,
}

impl Manufactured {
    pub fn dirichlet_factor_only() -> Self {
        Manufactured { scale: 0.0, factors: Vec::new() }
    }

    pub fn from_id(id: SolutionId) -> Self {
        match id {
            // y0 · exp(-x1²)
            SolutionId::Sol1 => Manufactured {
                scale: -1.0,
                factors: vec![vec![Some(0.0), None, None]],
            },
            // y0 · exp(-10 (Σ x_d²)(Σ (x_d-1)²))
            SolutionId::Sol2 => Manufactured {
                scale: -10.0,
                factors: vec![
                    vec![Some(0.0), Some(0.0), Some(0.0)],
                    vec![Some(1.0), Some(1.0), Some(1.0)],
                ],
            },
            // y0 · exp(-(Σ x²)·Πxyz corner distance products)
            SolutionId::Sol3 => Manufactured {
                scale: -1.0,
                factors: vec![
                    vec![Some(0.0), Some(0.0), Some(0.0)],
                    vec![Some(1.0), Some(0.0), Some(0.0)],
                    vec![Some(0.0), Some(1.0), Some(0.0)],
                    vec![Some(0.0), Some(0.0), Some(1.0)],
                ],
            },
        }
    }

    fn factor_value(factor: &[Option<f64>], x: &[f64]) -> f64 {
        factor
            .iter()
            .zip(x)
            .map(|(c, &v)| c.map_or(0.0, |c| (v - c) * (v - c)))
            .sum()
    }

    fn factor_grad(factor: &[Option<f64>], x: &[f64], d: usize) -> f64 {
        factor[d].map_or(0.0, |c| 2.0 * (x[d] - c))
    }

    fn factor_hess(factor: &[Option<f64>], d: usize) -> f64 {
        factor[d].map_or(0.0, |_| 2.0)
    }

    /// `g = scale · Π_m F_m` with gradient and Laplacian by the product rule.
    fn exponent(&self, x: &[f64]) -> (f64, Vec<f64>, f64) {
        let d = x.len();
        if self.factors.is_empty() {
            return (0.0, vec![0.0; d], 0.0);
        }
        let values: Vec<f64> =
            self.factors.iter().map(|fm| Self::factor_value(fm, x)).collect();
        let product: f64 = values.iter().product();
        let mut grad = vec![0.0; d];
        let mut lap = 0.0;
        for (m, fm) in self.factors.iter().enumerate() {
            let others: f64 = values
                .iter()
                .enumerate()
                .filter(|(mm, _)| *mm != m)
                .map(|(_, v)| v)
                .product();
            for dd in 0..d {
                grad[dd] += Self::factor_grad(fm, x, dd) * others;
                lap += Self::factor_hess(fm, dd) * others;
                // cross terms of the second product-rule derivative
                for (m2, fm2) in self.factors.iter().enumerate() {
                    if m2 == m {
                        continue;
                    }
                    let rest: f64 = values
                        .iter()
                        .enumerate()
                        .filter(|(mm, _)| *mm != m && *mm != m2)
                        .map(|(_, v)| v)
                        .product();
                    lap += Self::factor_grad(fm, x, dd) * Self::factor_grad(fm2, x, dd) * rest;
                }
            }
        }
        (
            self.scale * product,
            grad.iter().map(|g| self.scale * g).collect(),
            self.scale * lap,
        )
    }

    pub fn y(&self, x: &[f64]) -> f64 {
        let y0: f64 = x.iter().map(|&v| v * (v - 1.0)).product();
        let (g, _, _) = self.exponent(x);
        y0 * g.exp()
    }

    /// `f = -Δy` in closed form.
    pub fn f(&self, x: &[f64]) -> f64 {
        let d = x.len();
        let u: Vec<f64> = x.iter().map(|&v| v * (v - 1.0)).collect();
        let du: Vec<f64> = x.iter().map(|&v| 2.0 * v - 1.0).collect();
        let y0: f64 = u.iter().product();
        let grad_y0: Vec<f64> = (0..d)
            .map(|dd| {
                du[dd]
                    * u.iter()
                        .enumerate()
                        .filter(|(e, _)| *e != dd)
                        .map(|(_, v)| v)
                        .product::<f64>()
            })
            .collect();
        let lap_y0: f64 = (0..d)
            .map(|dd| {
                2.0 * u
                    .iter()
                    .enumerate()
                    .filter(|(e, _)| *e != dd)
                    .map(|(_, v)| v)
                    .product::<f64>()
            })
            .sum();
        let (g, grad_g, lap_g) = self.exponent(x);
        let cross: f64 = (0..d).map(|dd| grad_y0[dd] * grad_g[dd]).sum();
        let grad_g_sq: f64 = grad_g.iter().map(|v| v * v).sum();
        -(lap_y0 + 2.0 * cross + y0 * (lap_g + grad_g_sq)) * g.exp()
    }
}

/// Cell marks of the refinement schemes (0-based index sets on the level
/// grid). `cell_dims` is the level-`l` grid.
pub fn make_marks(scheme: Scheme, p: usize, level: usize, cell_dims: &[usize]) -> MultiIndexSet {
    let d = cell_dims.len();
    let mut set = MultiIndexSet::empty(cell_dims);
    let add_box = |lo: &[usize], hi: &[usize], set: &mut MultiIndexSet| {
        let extents: Vec<usize> = lo.iter().zip(hi).map(|(a, b)| b - a).collect();
        let total: usize = extents.iter().product();
        for f in 0..total {
            let local = decode_index(f, &extents);
            let idx: Vec<usize> = local.iter().zip(lo).map(|(i, s)| i + s).collect();
            set.insert(&idx);
        }
    };
    match scheme {
        Scheme::Slab => {
            // left half of the index planes in dimension 1, level 0 only
            assert_eq!(level, 0, "the slab scheme refines once");
            let half = cell_dims[0] / 2;
            let mut lo = vec![0; d];
            let mut hi = cell_dims.to_vec();
            lo[0] = 0;
            hi[0] = half;
            add_box(&lo, &hi, &mut set);
        }
        Scheme::NestedSlab => {
            // slices Ω_{l+1} = [0, 2^{-(l+1)}] x [0,1]²; on the level-l grid
            // that is the first m_l / 2^{l+1} index planes
            let count = cell_dims[0] >> (level + 1);
            let mut lo = vec![0; d];
            let mut hi = cell_dims.to_vec();
            hi[0] = count.max(1);
            lo[0] = 0;
            add_box(&lo, &hi, &mut set);
        }
        Scheme::TwoCorners => {
            let s = (p + level).saturating_sub(1).max(1);
            add_box(&vec![0; d], &vec![s; d], &mut set);
            let lo: Vec<usize> = cell_dims.iter().map(|&m| m - s).collect();
            add_box(&lo, cell_dims, &mut set);
        }
        Scheme::FourCorners => {
            let s = (p + level).saturating_sub(1).max(1);
            // origin corner
            add_box(&vec![0; d], &vec![s; d], &mut set);
            // one far corner per axis
            for axis in 0..d {
                let mut lo = vec![0; d];
                let mut hi = vec![s; d];
                lo[axis] = cell_dims[axis] - s;
                hi[axis] = cell_dims[axis];
                add_box(&lo, &hi, &mut set);
            }
        }
    }
    set
}

/// Initial cells per dimension of a scheme.
pub fn initial_cells(scheme: Scheme, p: usize, k: usize) -> usize {
    match scheme {
        Scheme::Slab => 6 + 2 * k,
        Scheme::NestedSlab => p + 1,
        Scheme::TwoCorners | Scheme::FourCorners => 2 * p + 1,
    }
}

/// Builds the hierarchical space of a scheme with `levels` levels.
pub fn build_scheme_space(
    scheme: Scheme,
    p: usize,
    k: usize,
    levels: usize,
) -> Result<HierarchicalSpace> {
    let m0 = initial_cells(scheme, p, k);
    if scheme == Scheme::Slab && !m0.is_multiple_of(2) {
        return Err(Error::InvalidConfig("slab scheme needs an even cell count".into()));
    }
    let dims = vec![m0; 3];
    let mut marks = Vec::new();
    let mut cell_dims = dims.clone();
    for l in 0..levels.saturating_sub(1) {
        marks.push(make_marks(scheme, p, l, &cell_dims));
        cell_dims = cell_dims.iter().map(|&m| 2 * m).collect();
    }
    HierarchicalSpace::build(&[p, p, p], &dims, &marks)
}

// ---------------------------------------------------------------------------
// Memory estimator
// ---------------------------------------------------------------------------

/// Byte breakdown of the recursive size estimator: 8 bytes per stored floating
/// value plus 8 per stored integer index; owned substructures counted once.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MemBytes {
    pub float_bytes: usize,
    pub int_bytes: usize,
}

impl MemBytes {
    pub fn total(&self) -> usize {
        self.float_bytes + self.int_bytes
    }

    fn add(self, other: MemBytes) -> MemBytes {
        MemBytes {
            float_bytes: self.float_bytes + other.float_bytes,
            int_bytes: self.int_bytes + other.int_bytes,
        }
    }
}

pub trait MemFootprint {
    fn mem_bytes(&self) -> MemBytes;
}

impl MemFootprint for crate::tt::TTVector {
    fn mem_bytes(&self) -> MemBytes {
        let floats: usize = self.cores.iter().map(|c| c.data.len()).sum();
        // stored structure: mode sizes and the rank vector
        let ints = self.ndims() + self.ranks().len();
        MemBytes { float_bytes: 8 * floats, int_bytes: 8 * ints }
    }
}

impl MemFootprint for crate::tt::TTMatrix {
    fn mem_bytes(&self) -> MemBytes {
        let floats: usize = self.cores.iter().map(|c| c.data.len()).sum();
        let ints = 2 * self.ndims() + self.ranks().len();
        MemBytes { float_bytes: 8 * floats, int_bytes: 8 * ints }
    }
}

impl MemFootprint for nalgebra::DMatrix<f64> {
    fn mem_bytes(&self) -> MemBytes {
        MemBytes { float_bytes: 8 * self.nrows() * self.ncols(), int_bytes: 0 }
    }
}

impl MemFootprint for crate::cuboids::CuboidPartition {
    fn mem_bytes(&self) -> MemBytes {
        let ints: usize = self.boxes.iter().map(|b| b.start.len() + b.extent.len()).sum();
        MemBytes { float_bytes: 0, int_bytes: 8 * ints }
    }
}

impl MemFootprint for BlockSystem {
    fn mem_bytes(&self) -> MemBytes {
        let mut total = MemBytes::default();
        for row in &self.blocks {
            for block in row {
                total = total.add(block.mem_bytes());
            }
        }
        for r in &self.rhs {
            total = total.add(r.mem_bytes());
        }
        let ints: usize = self.dof_maps.iter().map(|m| m.len()).sum::<usize>()
            + self.block_modes.iter().map(|m| m.len()).sum::<usize>()
            + self.block_level.len();
        total.add(MemBytes { float_bytes: 0, int_bytes: 8 * ints })
    }
}

impl MemFootprint for BlockVector {
    fn mem_bytes(&self) -> MemBytes {
        self.blocks.iter().fold(MemBytes::default(), |acc, b| acc.add(b.mem_bytes()))
    }
}

pub fn estimate_bytes<T: MemFootprint>(value: &T) -> usize {
    value.mem_bytes().total()
}

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub solution: SolutionId,
    pub scheme: Scheme,
    pub degree: usize,
    pub levels: usize,
    pub k: usize,
    pub eps: f64,
    pub approach: u8,
    pub prec: PrecChoice,
    pub source_n: usize,
    pub oracle: bool,
    pub grid_cap: usize,
    pub restart: usize,
    pub maxit: usize,
    /// Lifts the desk-scale caps (degree, levels, initial cells, source size).
    pub allow_large: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            solution: SolutionId::Sol1,
            scheme: Scheme::Slab,
            degree: 3,
            levels: 2,
            k: 0,
            eps: 1e-7,
            approach: 1,
            prec: PrecChoice::Block,
            source_n: 40,
            oracle: false,
            grid_cap: crate::tt::DENSE_CAP,
            restart: 30,
            maxit: 900,
            allow_large: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.approach != 1 && self.approach != 2 {
            return Err(Error::InvalidConfig("approach must be 1 or 2".into()));
        }
        if self.eps <= 0.0 {
            return Err(Error::InvalidConfig("eps must be positive".into()));
        }
        if self.scheme == Scheme::Slab && self.levels != 2 {
            return Err(Error::InvalidConfig("the slab scheme uses exactly two levels".into()));
        }
        if !self.allow_large {
            if !(2..=3).contains(&self.degree) {
                return Err(Error::InvalidConfig(
                    "desk scale uses degree 2 or 3 (allow_large overrides)".into(),
                ));
            }
            if self.levels > 3 {
                return Err(Error::InvalidConfig("desk scale caps levels at 3".into()));
            }
            if initial_cells(self.scheme, self.degree, self.k) > 10 {
                return Err(Error::InvalidConfig("desk scale caps the initial mesh at 10".into()));
            }
            if self.source_n > 40 {
                return Err(Error::InvalidConfig(
                    "desk scale caps the source basis at 40 per dimension".into(),
                ));
            }
        }
        if self.source_n <= self.degree + 1 {
            return Err(Error::InvalidConfig("source basis too small for the degree".into()));
        }
        let grid = self.source_n.pow(3);
        if grid > self.grid_cap {
            return Err(Error::DenseCap { size: grid, cap: self.grid_cap });
        }
        Ok(())
    }

    /// Parses a `key=value` configuration file mirroring the CLI flags.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: no '='", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |k: &str, v: &str| Error::InvalidConfig(format!("bad value {v:?} for {k}"));
        match key {
            "solution" => {
                self.solution = match value {
                    "sol1" => SolutionId::Sol1,
                    "sol2" => SolutionId::Sol2,
                    "sol3" => SolutionId::Sol3,
                    _ => return Err(bad(key, value)),
                }
            }
            "scheme" => {
                self.scheme = match value {
                    "slab" => Scheme::Slab,
                    "nested-slab" => Scheme::NestedSlab,
                    "two-corners" => Scheme::TwoCorners,
                    "four-corners" => Scheme::FourCorners,
                    _ => return Err(bad(key, value)),
                }
            }
            "degree" => self.degree = value.parse().map_err(|_| bad(key, value))?,
            "levels" => self.levels = value.parse().map_err(|_| bad(key, value))?,
            "k" => self.k = value.parse().map_err(|_| bad(key, value))?,
            "eps" => self.eps = value.parse().map_err(|_| bad(key, value))?,
            "approach" => self.approach = value.parse().map_err(|_| bad(key, value))?,
            "prec" => {
                self.prec = match value {
                    "block" => PrecChoice::Block,
                    "jacobi" => PrecChoice::Jacobi,
                    "none" => PrecChoice::None,
                    _ => return Err(bad(key, value)),
                }
            }
            "source-n" => self.source_n = value.parse().map_err(|_| bad(key, value))?,
            "oracle" => self.oracle = value.parse().map_err(|_| bad(key, value))?,
            "grid-cap" => self.grid_cap = value.parse().map_err(|_| bad(key, value))?,
            "restart" => self.restart = value.parse().map_err(|_| bad(key, value))?,
            "maxit" => self.maxit = value.parse().map_err(|_| bad(key, value))?,
            "allow-large" => self.allow_large = value.parse().map_err(|_| bad(key, value))?,
            _ => return Err(Error::InvalidConfig(format!("unknown key {key}"))),
        }
        Ok(())
    }
}

/// One result row of the experiment harness.
#[derive(Clone, Debug)]
pub struct MetricsRow {
    pub scheme: Scheme,
    pub solution: SolutionId,
    pub degree: usize,
    pub levels: usize,
    pub k: usize,
    pub eps: f64,
    pub approach: u8,
    pub prec: PrecChoice,
    pub assembly_s: f64,
    pub solve_s: f64,
    pub iters: usize,
    pub converged: bool,
    pub l2_error: f64,
    pub bytes_k: usize,
    pub bytes_y: usize,
    pub oracle_l2: Option<f64>,
    pub oracle_op_delta: Option<f64>,
}

pub const CSV_HEADER: &str = "scheme,solution,p,L,k,eps,approach,prec,assembly_s,solve_s,iters,converged,l2_error,bytes_K,bytes_y,oracle_l2,oracle_op_delta";

impl MetricsRow {
    pub fn to_csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{:e},{},{},{:.3},{:.3},{},{},{:e},{},{},{},{}",
            self.scheme,
            self.solution,
            self.degree,
            self.levels,
            self.k,
            self.eps,
            self.approach,
            self.prec,
            self.assembly_s,
            self.solve_s,
            self.iters,
            self.converged,
            self.l2_error,
            self.bytes_k,
            self.bytes_y,
            opt(self.oracle_l2),
            opt(self.oracle_op_delta),
        )
    }
}

/// Full experiment outcome, including the pieces the acceptance checks poke
/// at (system, solution blocks, dense expansion).
pub struct ExperimentOutcome {
    pub row: MetricsRow,
    pub system: BlockSystem,
    pub solution_blocks: BlockVector,
    pub coefficients: nalgebra::DVector<f64>,
    pub space: HierarchicalSpace,
    pub residual_history: Vec<(usize, f64)>,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let manufactured = Manufactured::from_id(config.solution);
    let space = build_scheme_space(config.scheme, config.degree, config.k, config.levels)?;
    let geometry = GeometryMap::identity(3);
    let interp_tol = config.eps * 1e-2;

    let t0 = Instant::now();
    let wspace = Arc::new(InterpolationSpace::for_weights(&geometry)?);
    let (omega, q) =
        interpolate_weight_and_metric(&geometry, &wspace, interp_tol, config.grid_cap)?;
    let weights = WeightFields { omega, q };
    let p = config.degree;
    let source_kvs = vec![KnotVector::open_uniform(p, config.source_n - p); 3];
    let source_space = Arc::new(InterpolationSpace::new(source_kvs)?);
    let mf = manufactured.clone();
    let source = interpolate_source(
        move |x| mf.f(x),
        &geometry,
        &source_space,
        interp_tol,
        config.grid_cap,
    )?;

    let hier =
        build_hierarchical(&space, OperatorKind::Stiffness, &weights, &source, interp_tol)?;
    let system = global_system(&space, &hier, config.approach, interp_tol)?;
    let assembly_s = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let prec: Preconditioner = match config.prec {
        PrecChoice::Block => build_precond_blockdiag(&system, interp_tol)?,
        PrecChoice::Jacobi => build_precond_jacobi(&system, interp_tol)?,
        PrecChoice::None => build_precond_none(&system),
    };
    let rhs = system.rhs_vector();
    let result = solve_gmres(&system, &rhs, config.eps, config.restart, config.maxit, &prec)?;
    let solve_s = t1.elapsed().as_secs_f64();

    let coefficients = system.solution_to_dense(&result.x.blocks)?;
    let m2 = manufactured.clone();
    let l2 = oracle::l2_error(&coefficients, &space, &geometry, move |x| m2.y(x))?;

    let bytes_k = estimate_bytes(&system);
    let bytes_y = estimate_bytes(&result.x);

    let (oracle_l2, oracle_op_delta) = if config.oracle {
        let mo = manufactured.clone();
        let sys = oracle::dense_assemble(&space, &geometry, move |x| mo.f(x), false)?;
        let coeffs = oracle::dense_solve(&sys)?;
        let my = manufactured.clone();
        let ol2 = oracle::l2_error(&coeffs, &space, &geometry, move |x| my.y(x))?;
        let (dense_k, _) = system.to_dense_active()?;
        let delta = (&dense_k - &sys.stiffness).norm() / sys.stiffness.norm();
        (Some(ol2), Some(delta))
    } else {
        (None, None)
    };

    let row = MetricsRow {
        scheme: config.scheme,
        solution: config.solution,
        degree: config.degree,
        levels: config.levels,
        k: config.k,
        eps: config.eps,
        approach: config.approach,
        prec: config.prec,
        assembly_s,
        solve_s,
        iters: result.iterations,
        converged: result.converged,
        l2_error: l2,
        bytes_k,
        bytes_y,
        oracle_l2,
        oracle_op_delta,
    };
    Ok(ExperimentOutcome {
        row,
        system,
        solution_blocks: result.x,
        coefficients,
        space,
        residual_history: result.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_laplacian(man: &Manufactured, x: &[f64], h: f64) -> f64 {
        let mut lap = 0.0;
        for d in 0..3 {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[d] += h;
            xm[d] -= h;
            lap += (man.y(&xp) - 2.0 * man.y(x) + man.y(&xm)) / (h * h);
        }
        lap
    }

    #[test]
    fn dirichlet_factor_matches_fd_at_center() {
        let man = Manufactured::dirichlet_factor_only();
        let x = [0.5, 0.5, 0.5];
        let fd = -fd_laplacian(&man, &x, 1e-4);
        assert!((man.f(&x) - fd).abs() < 1e-6, "{} vs {fd}", man.f(&x));
    }

    #[test]
    fn closed_form_laplacians_match_fd() {
        let pts = [[0.3, 0.7, 0.2], [0.5, 0.5, 0.5], [0.85, 0.15, 0.6], [0.1, 0.9, 0.4]];
        for id in [SolutionId::Sol1, SolutionId::Sol2, SolutionId::Sol3] {
            let man = Manufactured::from_id(id);
            for x in &pts {
                let fd = -fd_laplacian(&man, x, 1e-4);
                let f = man.f(x);
                let scale = 1.0 + f.abs().max(fd.abs());
                assert!((f - fd).abs() / scale < 1e-5, "{id:?} at {x:?}: {f} vs {fd}");
            }
        }
    }

    #[test]
    fn solutions_vanish_on_the_boundary() {
        let man = Manufactured::from_id(SolutionId::Sol1);
        for i in 0..10 {
            let t = i as f64 / 9.0;
            for face in 0..6 {
                let mut x = [t, 1.0 - t, t * t];
                x[face / 2] = if face % 2 == 0 { 0.0 } else { 1.0 };
                assert!(man.y(&x).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sol2_is_symmetric_under_coordinate_reversal() {
        let man = Manufactured::from_id(SolutionId::Sol2);
        let pts = [[0.2, 0.4, 0.7], [0.1, 0.5, 0.9], [0.33, 0.66, 0.25]];
        for x in &pts {
            let rev: Vec<f64> = x.iter().map(|v| 1.0 - v).collect();
            assert!((man.f(x) - man.f(&rev)).abs() < 1e-10 * (1.0 + man.f(x).abs()));
        }
    }

    #[test]
    fn slab_marks_left_half() {
        let marks = make_marks(Scheme::Slab, 3, 0, &[6, 6, 6]);
        assert_eq!(marks.len(), 3 * 36);
        for m in marks.iter() {
            assert!(m[0] < 3);
        }
    }

    #[test]
    fn two_corner_marks_at_degree_three() {
        let marks = make_marks(Scheme::TwoCorners, 3, 0, &[7, 7, 7]);
        // corner boxes of side p - 1 = 2 at both corners
        assert_eq!(marks.len(), 2 * 8);
        assert!(marks.contains(&[0, 0, 0]));
        assert!(marks.contains(&[1, 1, 1]));
        assert!(marks.contains(&[6, 6, 6]));
        assert!(marks.contains(&[5, 5, 5]));
        assert!(!marks.contains(&[2, 2, 2]));
    }

    #[test]
    fn four_corner_marks() {
        let marks = make_marks(Scheme::FourCorners, 3, 0, &[7, 7, 7]);
        // four blocks of 2^3 cells each
        assert_eq!(marks.len(), 4 * 8);
        assert!(marks.contains(&[0, 0, 0]));
        assert!(marks.contains(&[6, 0, 0]));
        assert!(marks.contains(&[0, 6, 0]));
        assert!(marks.contains(&[0, 0, 6]));
        assert!(!marks.contains(&[6, 6, 6]));
    }

    #[test]
    fn nested_slab_marks_follow_the_halving_slices() {
        // p = 3: m0 = 4; level 0 marks cover [0, 1/2], level 1 marks [0, 1/4]
        let l0 = make_marks(Scheme::NestedSlab, 3, 0, &[4, 4, 4]);
        assert_eq!(l0.len(), 2 * 16);
        let l1 = make_marks(Scheme::NestedSlab, 3, 1, &[8, 8, 8]);
        assert_eq!(l1.len(), 2 * 64);
        for m in l1.iter() {
            assert!(m[0] < 2);
        }
    }

    #[test]
    fn marks_golden_fixtures() {
        // frozen index sets (1-based dump) for a few (scheme, p, level) triples
        let two = make_marks(Scheme::TwoCorners, 2, 0, &[5, 5, 5]);
        assert_eq!(two.dump(), "1 1 1\n5 5 5\n");

        let four = make_marks(Scheme::FourCorners, 2, 0, &[5, 5, 5]);
        assert_eq!(four.dump(), "1 1 1\n5 1 1\n1 5 1\n1 1 5\n");

        let slab = make_marks(Scheme::Slab, 3, 0, &[6, 2, 2]);
        assert_eq!(
            slab.dump(),
            "1 1 1\n2 1 1\n3 1 1\n1 2 1\n2 2 1\n3 2 1\n1 1 2\n2 1 2\n3 1 2\n1 2 2\n2 2 2\n3 2 2\n"
        );

        let nested = make_marks(Scheme::NestedSlab, 3, 1, &[8, 2, 2]);
        assert_eq!(nested.dump(), "1 1 1\n2 1 1\n1 2 1\n2 2 1\n1 1 2\n2 1 2\n1 2 2\n2 2 2\n");
    }

    #[test]
    fn estimator_counts_tt_floats() {
        let v = crate::tt::TTVector::ones(&[4, 4, 4]);
        let mem = v.mem_bytes();
        assert_eq!(mem.float_bytes, 96);
    }

    #[test]
    fn estimator_dense_matrix_and_empty_partition() {
        let m = nalgebra::DMatrix::<f64>::zeros(7, 7);
        assert_eq!(estimate_bytes(&m), 8 * 49);
        let empty = crate::cuboids::CuboidPartition { dims: vec![3, 3], boxes: Vec::new() };
        assert_eq!(estimate_bytes(&empty), 0);
    }

    #[test]
    fn config_validation_rejects_bad_input() {
        let mut cfg = ExperimentConfig::default();
        cfg.approach = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.degree = 5;
        assert!(cfg.validate().is_err());
        cfg.allow_large = true;
        cfg.source_n = 20;
        assert!(cfg.validate().is_ok());
        let mut cfg = ExperimentConfig::default();
        cfg.scheme = Scheme::Slab;
        cfg.levels = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_file_round_trip() {
        let text = "\
# experiment
solution=sol2
scheme=two-corners
degree=2
levels=2
k=0
eps=1e-5
approach=2
prec=jacobi
source-n=24
oracle=true
";
        let cfg = ExperimentConfig::from_kv(text).unwrap();
        assert_eq!(cfg.solution, SolutionId::Sol2);
        assert_eq!(cfg.scheme, Scheme::TwoCorners);
        assert_eq!(cfg.degree, 2);
        assert_eq!(cfg.approach, 2);
        assert_eq!(cfg.prec, PrecChoice::Jacobi);
        assert!(cfg.oracle);
        assert!(ExperimentConfig::from_kv("nonsense").is_err());
        assert!(ExperimentConfig::from_kv("unknown=1").is_err());
    }

    #[test]
    fn csv_header_is_stable() {
        assert_eq!(
            CSV_HEADER,
            "scheme,solution,p,L,k,eps,approach,prec,assembly_s,solve_s,iters,converged,l2_error,bytes_K,bytes_y,oracle_l2,oracle_op_delta"
        );
        let row = MetricsRow {
            scheme: Scheme::Slab,
            solution: SolutionId::Sol1,
            degree: 3,
            levels: 2,
            k: 0,
            eps: 1e-7,
            approach: 1,
            prec: PrecChoice::Block,
            assembly_s: 1.25,
            solve_s: 0.5,
            iters: 7,
            converged: true,
            l2_error: 2.3e-7,
            bytes_k: 1000,
            bytes_y: 100,
            oracle_l2: None,
            oracle_op_delta: None,
        };
        let s = row.to_csv_row();
        assert_eq!(s.split(',').count(), CSV_HEADER.split(',').count());
        assert!(s.starts_with("slab,sol1,3,2,0,1e-7,1,block,"));
    }

    #[test]
    fn small_experiment_runs_and_is_reproducible() {
        let mut cfg = ExperimentConfig::default();
        cfg.degree = 2;
        cfg.scheme = Scheme::NestedSlab;
        cfg.levels = 2;
        cfg.eps = 1e-6;
        cfg.source_n = 16;
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert!(a.row.converged);
        assert_eq!(a.row.iters, b.row.iters);
        assert_eq!(a.row.l2_error, b.row.l2_error);
        assert!(a.row.l2_error < 1e-3);
    }
}
