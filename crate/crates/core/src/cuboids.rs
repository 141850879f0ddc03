//! Combinatorial machinery for recovering separability on adaptive meshes:
//! slice discarding (compacting an index set while keeping a tensor-product
//! numbering) and greedy detection of axis-aligned index cuboids.

use crate::tt::{decode_index, encode_index};
use std::collections::BTreeSet;

/// Set of multi-indices inside a tensor-product grid, stored as flat
/// little-endian positions so iteration order is the little-endian order.
/// All indices are 0-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiIndexSet {
    pub dims: Vec<usize>,
    set: BTreeSet<usize>,
}

impl MultiIndexSet {
    pub fn empty(dims: &[usize]) -> Self {
        MultiIndexSet { dims: dims.to_vec(), set: BTreeSet::new() }
    }

    pub fn full(dims: &[usize]) -> Self {
        let total: usize = dims.iter().product();
        MultiIndexSet { dims: dims.to_vec(), set: (0..total).collect() }
    }

    pub fn from_members<I: IntoIterator<Item = Vec<usize>>>(dims: &[usize], members: I) -> Self {
        let set = members.into_iter().map(|m| encode_index(&m, dims)).collect();
        MultiIndexSet { dims: dims.to_vec(), set }
    }

    pub fn insert(&mut self, idx: &[usize]) {
        self.set.insert(encode_index(idx, &self.dims));
    }

    pub fn contains(&self, idx: &[usize]) -> bool {
        self.set.contains(&encode_index(idx, &self.dims))
    }

    pub fn contains_flat(&self, flat: usize) -> bool {
        self.set.contains(&flat)
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    pub fn ndims(&self) -> usize {
        self.dims.len()
    }

    /// Members in little-endian order (dimension 1 fastest).
    pub fn iter(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        self.set.iter().map(|&f| decode_index(f, &self.dims))
    }

    pub fn iter_flat(&self) -> impl Iterator<Item = usize> + '_ {
        self.set.iter().copied()
    }

    pub fn is_subset(&self, other: &MultiIndexSet) -> bool {
        debug_assert_eq!(self.dims, other.dims);
        self.set.is_subset(&other.set)
    }

    pub fn union(&self, other: &MultiIndexSet) -> MultiIndexSet {
        debug_assert_eq!(self.dims, other.dims);
        MultiIndexSet { dims: self.dims.clone(), set: self.set.union(&other.set).copied().collect() }
    }

    pub fn difference(&self, other: &MultiIndexSet) -> MultiIndexSet {
        debug_assert_eq!(self.dims, other.dims);
        MultiIndexSet {
            dims: self.dims.clone(),
            set: self.set.difference(&other.set).copied().collect(),
        }
    }

    /// Complement within the bounding grid.
    pub fn complement(&self) -> MultiIndexSet {
        let total: usize = self.dims.iter().product();
        let set = (0..total).filter(|f| !self.set.contains(f)).collect();
        MultiIndexSet { dims: self.dims.clone(), set }
    }

    /// One multi-index per line (1-based components), little-endian sorted.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for m in self.iter() {
            let line: Vec<String> = m.iter().map(|c| (c + 1).to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Bijective renumbering that drops index hyperplanes containing no members.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SliceReduction {
    pub old_dims: Vec<usize>,
    pub new_dims: Vec<usize>,
    /// Retained old indices per dimension, strictly increasing.
    pub keep: Vec<Vec<usize>>,
    /// Inverse maps: `old_to_new[d][old] = Some(new)` for kept slices.
    old_to_new: Vec<Vec<Option<usize>>>,
}

impl SliceReduction {
    /// The identity reduction on a grid.
    pub fn identity(dims: &[usize]) -> Self {
        let keep: Vec<Vec<usize>> = dims.iter().map(|&n| (0..n).collect()).collect();
        let old_to_new = dims.iter().map(|&n| (0..n).map(Some).collect()).collect();
        SliceReduction {
            old_dims: dims.to_vec(),
            new_dims: dims.to_vec(),
            keep,
            old_to_new,
        }
    }

    pub fn to_old(&self, d: usize, new: usize) -> usize {
        self.keep[d][new]
    }

    pub fn to_new(&self, d: usize, old: usize) -> Option<usize> {
        self.old_to_new[d][old]
    }

    pub fn map_index_to_new(&self, old: &[usize]) -> Option<Vec<usize>> {
        old.iter()
            .enumerate()
            .map(|(d, &o)| self.to_new(d, o))
            .collect()
    }

    pub fn map_index_to_old(&self, new: &[usize]) -> Vec<usize> {
        new.iter().enumerate().map(|(d, &i)| self.to_old(d, i)).collect()
    }

    /// Maps a set in old numbering into the reduced grid, skipping members on
    /// discarded slices.
    pub fn reduce_set(&self, set: &MultiIndexSet) -> MultiIndexSet {
        let members = set.iter().filter_map(|m| self.map_index_to_new(&m));
        MultiIndexSet::from_members(&self.new_dims, members)
    }
}

/// Axis-aligned box of multi-indices (inclusive Cartesian range, 0-based).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexBox {
    pub start: Vec<usize>,
    pub extent: Vec<usize>,
}

impl IndexBox {
    pub fn volume(&self) -> usize {
        self.extent.iter().product()
    }

    pub fn contains(&self, idx: &[usize]) -> bool {
        idx.iter()
            .zip(self.start.iter().zip(&self.extent))
            .all(|(&i, (&s, &e))| i >= s && i < s + e)
    }

    /// Iterates member multi-indices in little-endian order.
    pub fn iter(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        let total = self.volume();
        (0..total).map(move |f| {
            let local = decode_index(f, &self.extent);
            local.iter().zip(&self.start).map(|(l, s)| l + s).collect()
        })
    }

    /// Per-dimension index ranges `start..start+extent`.
    pub fn range(&self, d: usize) -> std::ops::Range<usize> {
        self.start[d]..self.start[d] + self.extent[d]
    }
}

/// Disjoint cover of an index set by axis-aligned boxes.
#[derive(Clone, Debug)]
pub struct CuboidPartition {
    pub dims: Vec<usize>,
    pub boxes: Vec<IndexBox>,
}

impl CuboidPartition {
    pub fn num_boxes(&self) -> usize {
        self.boxes.len()
    }

    pub fn total_volume(&self) -> usize {
        self.boxes.iter().map(|b| b.volume()).sum()
    }

    /// One box per line as `start..end` per dimension (1-based, inclusive).
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for b in &self.boxes {
            let parts: Vec<String> = b
                .start
                .iter()
                .zip(&b.extent)
                .map(|(&s, &e)| format!("{}..{}", s + 1, s + e))
                .collect();
            out.push_str(&parts.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Discards all index hyperplanes that contain no member of `set`, exactly the
/// criterion that keeps a tensor-product numbering. The reduced set may still
/// contain holes.
pub fn discard_slices(set: &MultiIndexSet) -> (SliceReduction, MultiIndexSet) {
    let d = set.ndims();
    if set.is_empty() {
        let reduction = SliceReduction {
            old_dims: set.dims.clone(),
            new_dims: vec![0; d],
            keep: vec![Vec::new(); d],
            old_to_new: set.dims.iter().map(|&n| vec![None; n]).collect(),
        };
        return (reduction, MultiIndexSet::empty(&vec![0; d]));
    }
    let mut present: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); d];
    for m in set.iter() {
        for (dd, &c) in m.iter().enumerate() {
            present[dd].insert(c);
        }
    }
    let keep: Vec<Vec<usize>> = present.into_iter().map(|s| s.into_iter().collect()).collect();
    let new_dims: Vec<usize> = keep.iter().map(|k| k.len()).collect();
    let old_to_new = set
        .dims
        .iter()
        .enumerate()
        .map(|(dd, &n)| {
            let mut map = vec![None; n];
            for (new, &old) in keep[dd].iter().enumerate() {
                map[old] = Some(new);
            }
            map
        })
        .collect();
    let reduction =
        SliceReduction { old_dims: set.dims.clone(), new_dims, keep, old_to_new };
    let reduced = reduction.reduce_set(set);
    (reduction, reduced)
}

/// Greedy cuboid detection: repeatedly take the little-endian-first remaining
/// index and extend it dimension by dimension (d = 1..D in order) while the
/// whole candidate face stays inside the set, then remove the box.
pub fn greedy_partition(set: &MultiIndexSet) -> CuboidPartition {
    let d = set.ndims();
    let dims = set.dims.clone();
    let mut remaining: BTreeSet<usize> = set.iter_flat().collect();
    let mut boxes = Vec::new();
    while let Some(&first) = remaining.iter().next() {
        let start = decode_index(first, &dims);
        let mut end = start.clone();
        for dd in 0..d {
            'extend: while end[dd] + 1 < dims[dd] {
                let cand = end[dd] + 1;
                // The face consists of the established ranges for dims < dd,
                // the candidate index at dd, and the start for dims > dd.
                let face_dims: Vec<usize> =
                    (0..dd).map(|k| end[k] - start[k] + 1).collect();
                let face_total: usize = face_dims.iter().product();
                for f in 0..face_total {
                    let local = decode_index(f, &face_dims);
                    let mut probe = start.clone();
                    for k in 0..dd {
                        probe[k] = start[k] + local[k];
                    }
                    probe[dd] = cand;
                    if !remaining.contains(&encode_index(&probe, &dims)) {
                        break 'extend;
                    }
                }
                end[dd] = cand;
            }
        }
        let extent: Vec<usize> = end.iter().zip(&start).map(|(e, s)| e - s + 1).collect();
        let bx = IndexBox { start, extent };
        for m in bx.iter() {
            remaining.remove(&encode_index(&m, &dims));
        }
        boxes.push(bx);
    }
    CuboidPartition { dims, boxes }
}

/// Greedy partitions of a set and of its complement within the bounding grid,
/// so callers can pick the formulation with fewer summands.
pub fn partition_pair(set: &MultiIndexSet) -> (CuboidPartition, CuboidPartition) {
    (greedy_partition(set), greedy_partition(&set.complement()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// A 12x12 active-cell grid whose 2x2 blocks leave empty slices, the
    /// reference instance for slice discarding and greedy detection.
    pub(crate) fn reference_active_set() -> MultiIndexSet {
        let blocks: [(usize, usize); 13] = [
            (2, 0),
            (4, 0),
            (8, 0),
            (10, 0),
            (2, 2),
            (10, 2),
            (2, 6),
            (8, 6),
            (10, 6),
            (2, 8),
            (4, 8),
            (8, 8),
            (10, 8),
        ];
        let mut set = MultiIndexSet::empty(&[12, 12]);
        for &(bx, by) in &blocks {
            for dx in 0..2 {
                for dy in 0..2 {
                    set.insert(&[bx + dx, by + dy]);
                }
            }
        }
        set
    }

    #[test]
    fn discard_identity_on_full_grid() {
        let set = MultiIndexSet::full(&[3, 4]);
        let (red, reduced) = discard_slices(&set);
        assert_eq!(red.new_dims, vec![3, 4]);
        assert_eq!(reduced.len(), 12);
        for d in 0..2 {
            for i in 0..red.old_dims[d] {
                assert_eq!(red.to_new(d, i), Some(i));
            }
        }
    }

    #[test]
    fn discard_drops_middle_column() {
        let set = MultiIndexSet::from_members(&[3, 3], vec![vec![0, 0], vec![2, 0]]);
        let (red, reduced) = discard_slices(&set);
        assert_eq!(red.new_dims, vec![2, 1]);
        assert!(reduced.contains(&[0, 0]));
        assert!(reduced.contains(&[1, 0]));
        assert_eq!(reduced.len(), 2);
    }

    #[test]
    fn discard_empty_set() {
        let set = MultiIndexSet::empty(&[4, 5]);
        let (red, reduced) = discard_slices(&set);
        assert_eq!(red.new_dims, vec![0, 0]);
        assert!(reduced.is_empty());
    }

    #[test]
    fn reference_grid_reduces_to_eight_by_eight() {
        let set = reference_active_set();
        let (red, reduced) = discard_slices(&set);
        assert_eq!(red.new_dims, vec![8, 8]);
        assert_eq!(reduced.len(), 52);
    }

    #[test]
    fn greedy_full_grid_single_box() {
        let set = MultiIndexSet::full(&[4, 3, 2]);
        let part = greedy_partition(&set);
        assert_eq!(part.num_boxes(), 1);
        assert_eq!(part.boxes[0].start, vec![0, 0, 0]);
        assert_eq!(part.boxes[0].extent, vec![4, 3, 2]);
    }

    #[test]
    fn reference_partition_counts() {
        // The reduced active set yields 5 boxes, its complement 2.
        let set = reference_active_set();
        let (_, reduced) = discard_slices(&set);
        let (active, complement) = partition_pair(&reduced);
        assert_eq!(active.num_boxes(), 5);
        assert_eq!(complement.num_boxes(), 2);
        verify_partition(&reduced, &active);
        verify_partition(&reduced.complement(), &complement);
    }

    #[test]
    fn reference_partition_dump_fixture() {
        let set = reference_active_set();
        let (_, reduced) = discard_slices(&set);
        let part = greedy_partition(&reduced);
        let expected = "\
1..8 1..2
1..2 3..8
7..8 3..8
5..6 5..8
3..4 7..8
";
        assert_eq!(part.dump(), expected);
    }

    #[test]
    fn partition_pair_full_grid_empty_complement() {
        let set = MultiIndexSet::full(&[3, 3]);
        let (inside, complement) = partition_pair(&set);
        assert_eq!(inside.num_boxes(), 1);
        assert_eq!(complement.num_boxes(), 0);
    }

    pub(crate) fn verify_partition(set: &MultiIndexSet, part: &CuboidPartition) {
        // disjoint cover: volumes add up and every box member is in the set
        assert_eq!(part.total_volume(), set.len());
        let mut seen = std::collections::BTreeSet::new();
        for b in &part.boxes {
            for m in b.iter() {
                assert!(set.contains(&m), "box member {m:?} outside set");
                assert!(seen.insert(m.clone()), "overlap at {m:?}");
            }
        }
        assert!(part.num_boxes() <= set.len().max(1));
    }

    #[test]
    fn random_partitions_cover_disjointly() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..50 {
            let dims = if trial % 2 == 0 { vec![6, 6, 6] } else { vec![9, 7] };
            let total: usize = dims.iter().product();
            let density = rng.random_range(0.2..0.9);
            let members = (0..total)
                .filter(|_| rng.random_bool(density))
                .map(|f| decode_index(f, &dims));
            let set = MultiIndexSet::from_members(&dims, members);
            let (inside, complement) = partition_pair(&set);
            verify_partition(&set, &inside);
            verify_partition(&set.complement(), &complement);
        }
    }

    #[test]
    fn determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dims = vec![5, 5, 5];
        let members: Vec<Vec<usize>> = (0..125)
            .filter(|_| rng.random_bool(0.5))
            .map(|f| decode_index(f, &dims))
            .collect();
        let a = greedy_partition(&MultiIndexSet::from_members(&dims, members.clone()));
        let b = greedy_partition(&MultiIndexSet::from_members(&dims, members));
        assert_eq!(a.boxes, b.boxes);
    }
}
