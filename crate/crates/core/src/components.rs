//! 3D connected-component labeling and the small/large lesion split.
//!
//! Labeling is a two-pass union-find over the raster order. Final ids are
//! dense `1..=C` and follow the raster position of each component's first
//! voxel, so the output is a pure function of the mask.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{check_dims, linear_coords, BinaryMask, Dims, ProbMap, Volume3};

/// Components strictly larger than this many voxels are large lesions.
pub const DEFAULT_SIZE_THRESHOLD: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Connectivity {
    /// Face neighbours.
    #[serde(rename = "6")]
    Six,
    /// Face and edge neighbours.
    #[serde(rename = "18")]
    Eighteen,
    /// Face, edge and corner neighbours.
    #[default]
    #[serde(rename = "26")]
    TwentySix,
}

impl Connectivity {
    fn max_nonzero(self) -> usize {
        match self {
            Connectivity::Six => 1,
            Connectivity::Eighteen => 2,
            Connectivity::TwentySix => 3,
        }
    }

    /// All neighbour offsets for this connectivity.
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let nz = (dx != 0) as usize + (dy != 0) as usize + (dz != 0) as usize;
                    if nz > 0 && nz <= self.max_nonzero() {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }

    /// Offsets that precede the centre voxel in raster order.
    fn backward_offsets(self) -> Vec<[isize; 3]> {
        self.offsets()
            .into_iter()
            .filter(|&[dx, dy, dz]| dz < 0 || (dz == 0 && (dy < 0 || (dy == 0 && dx < 0))))
            .collect()
    }

    pub fn as_number(self) -> u8 {
        match self {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_number())
    }
}

impl FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "6" => Ok(Connectivity::Six),
            "18" => Ok(Connectivity::Eighteen),
            "26" => Ok(Connectivity::TwentySix),
            other => Err(Error::InvalidConfig(format!(
                "connectivity must be 6, 18 or 26, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    Small,
    Large,
}

impl Category {
    pub fn by_size(voxel_count: usize, size_threshold: usize) -> Self {
        if voxel_count > size_threshold {
            Category::Large
        } else {
            Category::Small
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub id: u32,
    pub voxel_count: usize,
    /// Inclusive lower corner.
    pub bbox_min: [usize; 3],
    /// Inclusive upper corner.
    pub bbox_max: [usize; 3],
    pub category: Category,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentLabeling {
    pub dims: Dims,
    /// 0 is background, `1..=C` are components.
    pub labels: Vec<u32>,
    /// Record `k` describes label `k + 1`.
    pub table: Vec<ComponentRecord>,
}

impl ComponentLabeling {
    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn record(&self, id: u32) -> &ComponentRecord {
        &self.table[id as usize - 1]
    }

    /// One JSON object per component, one per line.
    pub fn write_table(&self, mut out: impl Write) -> std::io::Result<()> {
        for rec in &self.table {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        DisjointSet { parent: Vec::new() }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Labels with 26-connectivity and the default size threshold.
pub fn label_components(m: &BinaryMask) -> ComponentLabeling {
    label_components_with(m, Connectivity::default(), DEFAULT_SIZE_THRESHOLD)
}

pub fn label_components_with(
    m: &BinaryMask,
    connectivity: Connectivity,
    size_threshold: usize,
) -> ComponentLabeling {
    let dims = m.dims();
    let [nx, ny, nz] = dims;
    let backward = connectivity.backward_offsets();
    let mut provisional = vec![u32::MAX; m.len()];
    let mut sets = DisjointSet::new();

    let mut idx = 0usize;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if m.is_set(idx) {
                    let mut current = u32::MAX;
                    for &[dx, dy, dz] in &backward {
                        let (qx, qy, qz) = (x as isize + dx, y as isize + dy, z as isize + dz);
                        if qx < 0 || qy < 0 || qz < 0 || qx >= nx as isize || qy >= ny as isize {
                            continue;
                        }
                        let q = qx as usize + nx * (qy as usize + ny * qz as usize);
                        let lq = provisional[q];
                        if lq == u32::MAX {
                            continue;
                        }
                        if current == u32::MAX {
                            current = lq;
                        } else {
                            sets.union(current, lq);
                        }
                    }
                    if current == u32::MAX {
                        current = sets.make();
                    }
                    provisional[idx] = current;
                }
                idx += 1;
            }
        }
    }

    let mut final_id = vec![0u32; sets.parent.len()];
    let mut labels = vec![0u32; m.len()];
    let mut table: Vec<ComponentRecord> = Vec::new();
    for (i, &p) in provisional.iter().enumerate() {
        if p == u32::MAX {
            continue;
        }
        let root = sets.find(p) as usize;
        if final_id[root] == 0 {
            table.push(ComponentRecord {
                id: table.len() as u32 + 1,
                voxel_count: 0,
                bbox_min: [usize::MAX; 3],
                bbox_max: [0; 3],
                category: Category::Small,
            });
            final_id[root] = table.len() as u32;
        }
        let id = final_id[root];
        labels[i] = id;
        let rec = &mut table[id as usize - 1];
        rec.voxel_count += 1;
        let c = linear_coords(dims, i);
        for a in 0..3 {
            rec.bbox_min[a] = rec.bbox_min[a].min(c[a]);
            rec.bbox_max[a] = rec.bbox_max[a].max(c[a]);
        }
    }
    for rec in &mut table {
        rec.category = Category::by_size(rec.voxel_count, size_threshold);
    }
    ComponentLabeling {
        dims,
        labels,
        table,
    }
}

/// Builds the (small, large) pair of maps from a labeling and a per-label
/// category decision.
fn route(p: &ProbMap, labeling: &ComponentLabeling, categories: &[Category]) -> (ProbMap, ProbMap) {
    let mut small = vec![0.0; p.len()];
    let mut large = vec![0.0; p.len()];
    for (i, &l) in labeling.labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        match categories[l as usize - 1] {
            Category::Small => small[i] = p.data()[i],
            Category::Large => large[i] = p.data()[i],
        }
    }
    let wrap = |data| {
        ProbMap::new(Volume3::new(p.dims(), p.spacing(), data).expect("same grid"))
            .expect("values copied from a probability map")
    };
    (wrap(small), wrap(large))
}

/// Inference-time split: each component of the binarized prediction is
/// routed by its own size.
pub fn split_pred(p: &ProbMap, size_threshold: usize) -> (ProbMap, ProbMap) {
    split_pred_with(p, size_threshold, Connectivity::default())
}

pub fn split_pred_with(
    p: &ProbMap,
    size_threshold: usize,
    connectivity: Connectivity,
) -> (ProbMap, ProbMap) {
    let labeling = label_components_with(&p.binarize(), connectivity, size_threshold);
    let categories: Vec<Category> = labeling.table.iter().map(|r| r.category).collect();
    route(p, &labeling, &categories)
}

/// Training-time split: a predicted component inherits the category of the
/// ground-truth component it overlaps most (ties go to the smaller gt id).
/// Components touching no ground truth fall back to their own size.
pub fn split_train(
    p: &ProbMap,
    gt: &BinaryMask,
    size_threshold: usize,
) -> Result<(ProbMap, ProbMap)> {
    split_train_with(p, gt, size_threshold, Connectivity::default())
}

pub fn split_train_with(
    p: &ProbMap,
    gt: &BinaryMask,
    size_threshold: usize,
    connectivity: Connectivity,
) -> Result<(ProbMap, ProbMap)> {
    check_dims(p.dims(), gt.dims())?;
    let pred_lab = label_components_with(&p.binarize(), connectivity, size_threshold);
    let gt_lab = label_components_with(gt, connectivity, size_threshold);

    let mut overlaps: Vec<BTreeMap<u32, usize>> = vec![BTreeMap::new(); pred_lab.len()];
    for (&a, &b) in pred_lab.labels.iter().zip(&gt_lab.labels) {
        if a != 0 && b != 0 {
            *overlaps[a as usize - 1].entry(b).or_insert(0) += 1;
        }
    }
    let categories: Vec<Category> = pred_lab
        .table
        .iter()
        .zip(&overlaps)
        .map(|(rec, ov)| {
            // BTreeMap iterates ids ascending, so strict > keeps the smaller id on ties
            let mut best: Option<(u32, usize)> = None;
            for (&gid, &n) in ov {
                if best.is_none_or(|(_, bn)| n > bn) {
                    best = Some((gid, n));
                }
            }
            match best {
                Some((gid, _)) => gt_lab.record(gid).category,
                None => rec.category,
            }
        })
        .collect();
    Ok(route(p, &pred_lab, &categories))
}

/// Splits a reference mask into its small and large lesions.
pub fn split_mask(m: &BinaryMask, size_threshold: usize) -> (BinaryMask, BinaryMask) {
    split_mask_with(m, size_threshold, Connectivity::default())
}

pub fn split_mask_with(
    m: &BinaryMask,
    size_threshold: usize,
    connectivity: Connectivity,
) -> (BinaryMask, BinaryMask) {
    let (small, large) = split_pred_with(&m.to_prob(), size_threshold, connectivity);
    let to_mask = |p: ProbMap| BinaryMask::new(p.into_volume()).expect("binary input stays binary");
    (to_mask(small), to_mask(large))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Spacing;

    fn mask_with(dims: Dims, on: &[[usize; 3]]) -> BinaryMask {
        BinaryMask::from_fn(dims, Spacing::ISOTROPIC, |x, y, z| on.contains(&[x, y, z])).unwrap()
    }

    fn block(dims: Dims, lo: [usize; 3], size: [usize; 3]) -> BinaryMask {
        BinaryMask::from_fn(dims, Spacing::ISOTROPIC, |x, y, z| {
            (lo[0]..lo[0] + size[0]).contains(&x)
                && (lo[1]..lo[1] + size[1]).contains(&y)
                && (lo[2]..lo[2] + size[2]).contains(&z)
        })
        .unwrap()
    }

    #[test]
    fn offsets_counts() {
        assert_eq!(Connectivity::Six.offsets().len(), 6);
        assert_eq!(Connectivity::Eighteen.offsets().len(), 18);
        assert_eq!(Connectivity::TwentySix.offsets().len(), 26);
        assert_eq!(Connectivity::TwentySix.backward_offsets().len(), 13);
    }

    #[test]
    fn empty_mask() {
        let m = BinaryMask::empty([4, 4, 4], Spacing::ISOTROPIC).unwrap();
        assert!(label_components(&m).is_empty());
    }

    #[test]
    fn corner_contact_joins_under_26() {
        let m = mask_with([3, 3, 3], &[[0, 0, 0], [1, 1, 1]]);
        assert_eq!(label_components(&m).len(), 1);
        assert_eq!(
            label_components_with(&m, Connectivity::Eighteen, 1000).len(),
            2
        );
        assert_eq!(label_components_with(&m, Connectivity::Six, 1000).len(), 2);
    }

    #[test]
    fn edge_contact_joins_under_18() {
        let m = mask_with([3, 3, 3], &[[0, 0, 0], [1, 1, 0]]);
        assert_eq!(
            label_components_with(&m, Connectivity::Eighteen, 1000).len(),
            1
        );
        assert_eq!(label_components_with(&m, Connectivity::Six, 1000).len(), 2);
    }

    #[test]
    fn gap_separates() {
        let m = mask_with([6, 1, 1], &[[0, 0, 0], [3, 0, 0]]);
        let lab = label_components(&m);
        assert_eq!(lab.len(), 2);
        assert_eq!(lab.labels[0], 1);
        assert_eq!(lab.labels[3], 2);
    }

    #[test]
    fn ids_follow_first_voxel_raster_order() {
        // the V shape gets merged late; its id is still decided by its first voxel
        let m = mask_with(
            [5, 4, 1],
            &[
                [0, 0, 0],
                [4, 0, 0],
                [1, 1, 0],
                [3, 1, 0],
                [2, 2, 0],
                [0, 3, 0],
            ],
        );
        let lab = label_components(&m);
        assert_eq!(lab.len(), 2);
        assert_eq!(lab.labels[0], 1);
        assert_eq!(lab.labels[4], 1);
        assert_eq!(lab.labels[15], 2);
        assert_eq!(lab.record(1).voxel_count, 5);
        assert_eq!(lab.record(1).bbox_min, [0, 0, 0]);
        assert_eq!(lab.record(1).bbox_max, [4, 2, 0]);
    }

    #[test]
    fn split_pred_strict_threshold() {
        let dims = [30, 30, 30];
        // 10x10x10 = 1000 voxels: small
        let p = block(dims, [1, 1, 1], [10, 10, 10]).to_prob();
        let (small, large) = split_pred(&p, 1000);
        assert_eq!(small.binarize().count(), 1000);
        assert_eq!(large.binarize().count(), 0);
        // 10x10x12 = 1200 voxels: large
        let p = block(dims, [1, 1, 1], [10, 10, 12]).to_prob();
        let (small, large) = split_pred(&p, 1000);
        assert_eq!(small.binarize().count(), 0);
        assert_eq!(large.data(), p.data());
    }

    #[test]
    fn split_pred_empty() {
        let p = ProbMap::zeros([5, 5, 5], Spacing::ISOTROPIC).unwrap();
        let (s, l) = split_pred(&p, 1000);
        assert_eq!(s.binarize().count() + l.binarize().count(), 0);
    }

    #[test]
    fn split_pred_keeps_probabilities_and_drops_subthreshold() {
        let mut data = vec![0.0; 27];
        data[0] = 0.7;
        data[26] = 0.3;
        let p = ProbMap::from_data([3, 3, 3], Spacing::ISOTROPIC, data).unwrap();
        let (s, l) = split_pred(&p, 1000);
        assert_eq!(s.data()[0], 0.7);
        assert_eq!(s.data()[26], 0.0);
        assert_eq!(l.binarize().count(), 0);
    }

    #[test]
    fn split_train_inherits_gt_category() {
        let dims = [30, 30, 30];
        let gt = block(dims, [0, 0, 0], [20, 20, 20]);
        let pred = block(dims, [5, 5, 5], [5, 5, 2]).to_prob();
        let (s, l) = split_train(&pred, &gt, 1000).unwrap();
        assert_eq!(s.binarize().count(), 0);
        assert_eq!(l.binarize().count(), 50);
    }

    #[test]
    fn split_train_falls_back_to_own_size() {
        let dims = [30, 30, 30];
        let gt = block(dims, [0, 0, 0], [20, 20, 20]);
        let pred = block(dims, [22, 22, 22], [5, 5, 2]).to_prob();
        let (s, l) = split_train(&pred, &gt, 1000).unwrap();
        assert_eq!(s.binarize().count(), 50);
        assert_eq!(l.binarize().count(), 0);
    }

    #[test]
    fn split_train_identity() {
        let dims = [20, 20, 20];
        let gt = block(dims, [0, 0, 0], [10, 10, 20]);
        let (s, l) = split_train(&gt.to_prob(), &gt, 1000).unwrap();
        assert_eq!(l.data(), gt.data());
        assert_eq!(s.binarize().count(), 0);
    }

    #[test]
    fn split_train_tie_prefers_smaller_gt_id() {
        // prediction straddles a small gt lesion (id 1) and a large one (id 2)
        // with equal overlap on each
        let dims = [40, 12, 12];
        let gt = BinaryMask::from_fn(dims, Spacing::ISOTROPIC, |x, y, z| {
            (x < 2 && y < 2 && z < 2) || (x >= 4 && x < 16 && y < 12 && z < 12)
        })
        .unwrap();
        let gl = label_components(&gt);
        assert_eq!(gl.record(1).category, Category::Small);
        assert_eq!(gl.record(2).category, Category::Large);
        let pred = BinaryMask::from_fn(dims, Spacing::ISOTROPIC, |x, y, z| {
            y < 2 && z < 2 && (x < 2 || (2..6).contains(&x))
        })
        .unwrap();
        // overlap with id 1: 8 voxels, with id 2: 2x2x2 = 8 voxels
        let (s, l) = split_train(&pred.to_prob(), &gt, 1000).unwrap();
        assert_eq!(s.binarize().count(), pred.count());
        assert_eq!(l.binarize().count(), 0);
    }

    #[test]
    fn table_lines() {
        let m = mask_with([4, 1, 1], &[[0, 0, 0], [2, 0, 0]]);
        let mut buf = Vec::new();
        label_components(&m).write_table(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        let rec: ComponentRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(rec.voxel_count, 1);
    }
}
