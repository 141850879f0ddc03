//! Multilevel structure: nested dyadic meshes and spline spaces, refinement
//! domains, active/deactivated/non-active classification of cells and splines,
//! truncation bookkeeping and per-level homogeneous-Dirichlet exclusion.
//!
//! Classification follows the recursive basis construction: a level-l spline
//! is active iff its support lies in the level-l refinement domain but not in
//! the next one; it is deactivated iff its support lies in the next domain.

use crate::cuboids::{IndexBox, MultiIndexSet};
use crate::error::{Error, Result};
use crate::splines::{Breakpoints, KnotVector};

/// Per-dimension knot vectors of one level; level `l+1` is the dyadic
/// refinement of level `l` in every dimension.
#[derive(Clone, Debug)]
pub struct LevelGrid {
    pub kvs: Vec<KnotVector>,
}

impl LevelGrid {
    pub fn ndims(&self) -> usize {
        self.kvs.len()
    }

    pub fn cell_dims(&self) -> Vec<usize> {
        self.kvs.iter().map(|kv| kv.breakpoints().num_cells()).collect()
    }

    pub fn basis_dims(&self) -> Vec<usize> {
        self.kvs.iter().map(|kv| kv.num_basis()).collect()
    }

    pub fn breakpoints(&self) -> Vec<Breakpoints> {
        self.kvs.iter().map(|kv| kv.breakpoints()).collect()
    }
}

/// Hierarchical (THB) space over `[0,1]^D`: level grids plus all activity
/// bookkeeping. Immutable after construction.
#[derive(Clone, Debug)]
pub struct HierarchicalSpace {
    pub levels: Vec<LevelGrid>,
    /// Marked level-`l` cells whose union is the refinement domain of level
    /// `l+1`; the last entry is empty.
    pub refined_cells: Vec<MultiIndexSet>,
    /// Level-`l` cells covered by the level-`l` refinement domain.
    pub omega_cells: Vec<MultiIndexSet>,
    pub active_cells: Vec<MultiIndexSet>,
    pub nonactive_cells: Vec<MultiIndexSet>,
    /// Active splines after Dirichlet exclusion; these carry the DoFs.
    pub active_splines: Vec<MultiIndexSet>,
    pub deactivated_splines: Vec<MultiIndexSet>,
    pub nonactive_splines: Vec<MultiIndexSet>,
    /// Would-be-active splines removed by the boundary exclusion.
    pub boundary_excluded: Vec<MultiIndexSet>,
}

impl HierarchicalSpace {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn ndims(&self) -> usize {
        self.levels[0].ndims()
    }

    /// Builds the space from per-level cell marks. `marks[l]` lives on the
    /// level-`l` grid; marked regions must be nested after dyadic expansion.
    pub fn build(degrees: &[usize], m0: &[usize], marks: &[MultiIndexSet]) -> Result<Self> {
        let dims = degrees.len();
        assert_eq!(m0.len(), dims);
        let num_levels = marks.len() + 1;

        let mut levels = Vec::with_capacity(num_levels);
        let mut kvs: Vec<KnotVector> = degrees
            .iter()
            .zip(m0)
            .map(|(&p, &m)| KnotVector::open_uniform(p, m))
            .collect();
        levels.push(LevelGrid { kvs: kvs.clone() });
        for _ in 1..num_levels {
            kvs = kvs.iter().map(|kv| kv.dyadic_refine()).collect();
            levels.push(LevelGrid { kvs: kvs.clone() });
        }

        // Refinement domains as cell sets; omega_cells[0] is the whole grid.
        let mut omega_cells = Vec::with_capacity(num_levels);
        omega_cells.push(MultiIndexSet::full(&levels[0].cell_dims()));
        let mut refined_cells = Vec::with_capacity(num_levels);
        for (l, mark) in marks.iter().enumerate() {
            if mark.dims != levels[l].cell_dims() {
                return Err(Error::ShapeMismatch(format!(
                    "marks at level {l} sized {:?}, grid has {:?}",
                    mark.dims,
                    levels[l].cell_dims()
                )));
            }
            if !mark.is_subset(&omega_cells[l]) {
                return Err(Error::NonNestedMarks { level: l });
            }
            omega_cells.push(dyadic_children(mark, &levels[l + 1].cell_dims()));
            refined_cells.push(mark.clone());
        }
        refined_cells.push(MultiIndexSet::empty(&levels[num_levels - 1].cell_dims()));

        let mut active_cells = Vec::with_capacity(num_levels);
        let mut nonactive_cells = Vec::with_capacity(num_levels);
        for l in 0..num_levels {
            let active = omega_cells[l].difference(&refined_cells[l]);
            nonactive_cells.push(active.complement());
            active_cells.push(active);
        }

        let mut space = HierarchicalSpace {
            levels,
            refined_cells,
            omega_cells,
            active_cells,
            nonactive_cells,
            active_splines: Vec::new(),
            deactivated_splines: Vec::new(),
            nonactive_splines: Vec::new(),
            boundary_excluded: Vec::new(),
        };
        space.classify_all_splines()?;
        Ok(space)
    }

    fn classify_all_splines(&mut self) -> Result<()> {
        let num_levels = self.num_levels();
        for l in 0..num_levels {
            let basis_dims = self.levels[l].basis_dims();
            let mut active = MultiIndexSet::empty(&basis_dims);
            let mut deactivated = MultiIndexSet::empty(&basis_dims);
            let mut nonactive = MultiIndexSet::empty(&basis_dims);
            let mut excluded = MultiIndexSet::empty(&basis_dims);
            let total: usize = basis_dims.iter().product();
            for flat in 0..total {
                let idx = crate::tt::decode_index(flat, &basis_dims);
                let supp = self.spline_support(l, &idx)?;
                let in_omega = box_in_set(&supp, &self.omega_cells[l]);
                let in_next = box_in_set(&supp, &self.refined_cells[l]);
                if in_next {
                    deactivated.insert(&idx);
                } else if in_omega {
                    if idx.iter().zip(&basis_dims).any(|(&i, &n)| i == 0 || i + 1 == n) {
                        excluded.insert(&idx);
                        nonactive.insert(&idx);
                    } else {
                        active.insert(&idx);
                    }
                } else {
                    nonactive.insert(&idx);
                }
            }
            self.active_splines.push(active);
            self.deactivated_splines.push(deactivated);
            self.nonactive_splines.push(nonactive);
            self.boundary_excluded.push(excluded);
        }
        Ok(())
    }

    /// Active and non-active cells of one level.
    pub fn classify_cells(&self, l: usize) -> (&MultiIndexSet, &MultiIndexSet) {
        (&self.active_cells[l], &self.nonactive_cells[l])
    }

    /// Active (post-exclusion), deactivated, and non-active splines of a level.
    pub fn classify_splines(
        &self,
        l: usize,
    ) -> (&MultiIndexSet, &MultiIndexSet, &MultiIndexSet) {
        (&self.active_splines[l], &self.deactivated_splines[l], &self.nonactive_splines[l])
    }

    /// Active splines including the boundary-excluded ones (the set that
    /// carries the partition of unity).
    pub fn active_splines_with_excluded(&self, l: usize) -> MultiIndexSet {
        self.active_splines[l].union(&self.boundary_excluded[l])
    }

    /// Level-(l+1) splines whose rows are zeroed in the truncated two-scale
    /// matrix: exactly those with support inside the refinement domain,
    /// independent of the Dirichlet exclusion.
    pub fn truncation_zero_set(&self, l: usize) -> Result<MultiIndexSet> {
        assert!(l + 1 < self.num_levels());
        let basis_dims = self.levels[l + 1].basis_dims();
        let mut zero = MultiIndexSet::empty(&basis_dims);
        let total: usize = basis_dims.iter().product();
        for flat in 0..total {
            let idx = crate::tt::decode_index(flat, &basis_dims);
            let supp = self.spline_support(l + 1, &idx)?;
            if box_in_set(&supp, &self.omega_cells[l + 1]) {
                zero.insert(&idx);
            }
        }
        Ok(zero)
    }

    /// Support of a spline as a box of level-`l` cells (tensor product of the
    /// univariate support ranges).
    pub fn spline_support(&self, l: usize, idx: &[usize]) -> Result<IndexBox> {
        let mut start = Vec::with_capacity(idx.len());
        let mut extent = Vec::with_capacity(idx.len());
        for (d, &i) in idx.iter().enumerate() {
            let (lo, hi) = self.levels[l].kvs[d].support_range(i)?;
            start.push(lo);
            extent.push(hi - lo + 1);
        }
        Ok(IndexBox { start, extent })
    }

    /// Splines of one level whose support intersects its active cells (the
    /// reduced-basis membership test of the assembly stage).
    pub fn splines_on_active_cells(&self, l: usize) -> MultiIndexSet {
        let basis_dims = self.levels[l].basis_dims();
        let mut out = MultiIndexSet::empty(&basis_dims);
        let total: usize = basis_dims.iter().product();
        for flat in 0..total {
            let idx = crate::tt::decode_index(flat, &basis_dims);
            let supp = self.spline_support(l, &idx).expect("index in range");
            if box_intersects_set(&supp, &self.active_cells[l]) {
                out.insert(&idx);
            }
        }
        out
    }

    /// Text dump of all activity sets, one multi-index per line, for fixture
    /// diffing.
    pub fn dump_activity(&self) -> String {
        let mut out = String::new();
        for l in 0..self.num_levels() {
            out.push_str(&format!("level {l} active cells\n"));
            out.push_str(&self.active_cells[l].dump());
            out.push_str(&format!("level {l} active splines\n"));
            out.push_str(&self.active_splines[l].dump());
            out.push_str(&format!("level {l} deactivated splines\n"));
            out.push_str(&self.deactivated_splines[l].dump());
        }
        out
    }
}

/// Global THB DoF numbering shared by the block systems and the dense oracle:
/// levels ascending, little-endian within each level, over the post-exclusion
/// active splines. Returns per-level maps from flat spline index to DoF id.
pub fn global_dof_ids(
    space: &HierarchicalSpace,
) -> (Vec<std::collections::HashMap<usize, usize>>, usize) {
    let mut maps = Vec::new();
    let mut next = 0usize;
    for l in 0..space.num_levels() {
        let mut map = std::collections::HashMap::new();
        for idx in space.active_splines[l].iter() {
            let flat = crate::tt::encode_index(&idx, &space.levels[l].basis_dims());
            map.insert(flat, next);
            next += 1;
        }
        maps.push(map);
    }
    (maps, next)
}

/// Dyadic children of a cell set on the twice-finer grid.
fn dyadic_children(cells: &MultiIndexSet, fine_dims: &[usize]) -> MultiIndexSet {
    let d = cells.ndims();
    let mut out = MultiIndexSet::empty(fine_dims);
    for m in cells.iter() {
        let total = 1usize << d;
        for bits in 0..total {
            let child: Vec<usize> =
                (0..d).map(|k| 2 * m[k] + ((bits >> k) & 1)).collect();
            out.insert(&child);
        }
    }
    out
}

/// Whether every cell of the box belongs to the set.
pub fn box_in_set(b: &IndexBox, set: &MultiIndexSet) -> bool {
    b.iter().all(|m| set.contains(&m))
}

/// Whether the box shares at least one cell with the set.
pub fn box_intersects_set(b: &IndexBox, set: &MultiIndexSet) -> bool {
    b.iter().any(|m| set.contains(&m))
}
