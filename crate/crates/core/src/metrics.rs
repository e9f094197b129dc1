//! Segmentation evaluation: Dice, HD95, AVD, lesion detection and lesion F1.
//!
//! Conventions, stated once here and echoed in every report header:
//!
//! * boundary voxels are foreground voxels with a background face neighbour
//!   or lying on the volume border;
//! * HD95 is the larger of the two directed 95th percentiles of
//!   boundary-to-boundary distances between voxel centres, in millimetres,
//!   with linear interpolation between order statistics;
//! * a lesion is a connected component (26-connectivity by default) and
//!   counts as detected when it shares at least one voxel with the other
//!   mask.

use serde::{Deserialize, Serialize};

use crate::components::{label_components_with, Connectivity, DEFAULT_SIZE_THRESHOLD};
use crate::dice::dsc;
use crate::error::{Error, Result};
use crate::volume::{check_dims, linear_index, BinaryMask, Dims};

pub const HD95_CONVENTION: &str = "max of directed P95 over boundary-voxel-centre distances \
(6-neighbour boundary, linear-interpolation percentile, mm)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Flag {
    /// Prediction or reference empty; HD95 undefined.
    EmptyMask,
    /// Reference empty; AVD, detection and F1 undefined.
    EmptyReference,
    /// No predicted components; F1 set to 0.
    NoPredictedComponents,
    /// Group outputs overlapped while merging.
    GroupOverlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dice: f64,
    pub hd95_mm: Option<f64>,
    pub avd_pct: Option<f64>,
    pub detection_pct: Option<f64>,
    pub f1: Option<f64>,
    pub flags: Vec<Flag>,
}

/// Foreground voxels with a background face neighbour or on the border.
pub fn boundary_voxels(m: &BinaryMask) -> Vec<usize> {
    let [nx, ny, nz] = m.dims();
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = linear_index(m.dims(), x, y, z);
                if !m.is_set(i) {
                    continue;
                }
                let on_border =
                    x == 0 || y == 0 || z == 0 || x + 1 == nx || y + 1 == ny || z + 1 == nz;
                if on_border
                    || !m.is_set(i - 1)
                    || !m.is_set(i + 1)
                    || !m.is_set(i - nx)
                    || !m.is_set(i + nx)
                    || !m.is_set(i - nx * ny)
                    || !m.is_set(i + nx * ny)
                {
                    out.push(i);
                }
            }
        }
    }
    out
}

/// Exact squared distance along one line with sample spacing `step`
/// (lower envelope of parabolas).
fn edt_line(f: &[f64], step: f64, out: &mut [f64], sites: &mut Vec<usize>, bounds: &mut Vec<f64>) {
    sites.clear();
    bounds.clear();
    for q in 0..f.len() {
        if f[q].is_infinite() {
            continue;
        }
        let xq = q as f64 * step;
        let mut start = f64::NEG_INFINITY;
        while let Some(&v) = sites.last() {
            let xv = v as f64 * step;
            start = ((f[q] + xq * xq) - (f[v] + xv * xv)) / (2.0 * (xq - xv));
            if start <= *bounds.last().unwrap() {
                sites.pop();
                bounds.pop();
            } else {
                break;
            }
        }
        if sites.is_empty() {
            start = f64::NEG_INFINITY;
        }
        sites.push(q);
        bounds.push(start);
    }
    if sites.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let xq = q as f64 * step;
        while k + 1 < sites.len() && bounds[k + 1] < xq {
            k += 1;
        }
        let d = xq - sites[k] as f64 * step;
        *o = d * d + f[sites[k]];
    }
}

/// Squared Euclidean distance (mm²) from every voxel to the nearest seed.
pub fn squared_distance_map(dims: Dims, spacing: [f64; 3], seeds: &[usize]) -> Vec<f64> {
    let n = dims[0] * dims[1] * dims[2];
    let mut d = vec![f64::INFINITY; n];
    for &s in seeds {
        d[s] = 0.0;
    }
    let mut sites = Vec::new();
    let mut bounds = Vec::new();
    for axis in 0..3 {
        let len = dims[axis];
        let stride = match axis {
            0 => 1,
            1 => dims[0],
            _ => dims[0] * dims[1],
        };
        let mut line = vec![0.0; len];
        let mut out = vec![0.0; len];
        for start in 0..n {
            // visit each line once, from its first voxel
            let coord = (start / stride) % len;
            if coord != 0 {
                continue;
            }
            for (k, l) in line.iter_mut().enumerate() {
                *l = d[start + k * stride];
            }
            edt_line(&line, spacing[axis], &mut out, &mut sites, &mut bounds);
            for (k, &o) in out.iter().enumerate() {
                d[start + k * stride] = o;
            }
        }
    }
    d
}

/// Percentile with linear interpolation between order statistics; `q` in
/// `[0, 1]`. `values` must be non-empty.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let h = (values.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(values.len() - 1);
    values[lo] + (h - lo as f64) * (values[hi] - values[lo])
}

fn directed_p95(from: &[usize], to_sq: &[f64]) -> f64 {
    let mut d: Vec<f64> = from.iter().map(|&i| to_sq[i].sqrt()).collect();
    percentile(&mut d, 0.95)
}

/// Symmetric 95th-percentile Hausdorff distance in millimetres, using the
/// spacing of `r`.
pub fn hd95(s: &BinaryMask, r: &BinaryMask) -> Result<f64> {
    check_dims(s.dims(), r.dims())?;
    let bs = boundary_voxels(s);
    let br = boundary_voxels(r);
    if bs.is_empty() || br.is_empty() {
        return Err(Error::EmptyMask(format!(
            "HD95 needs non-empty masks (prediction {} / reference {} boundary voxels)",
            bs.len(),
            br.len()
        )));
    }
    let spacing = r.spacing().mm();
    let to_r = squared_distance_map(r.dims(), spacing, &br);
    let to_s = squared_distance_map(s.dims(), spacing, &bs);
    Ok(directed_p95(&bs, &to_r).max(directed_p95(&br, &to_s)))
}

/// `100·||S| − |R|| / |R|`.
pub fn avd(s: &BinaryMask, r: &BinaryMask) -> Result<f64> {
    check_dims(s.dims(), r.dims())?;
    let (ns, nr) = (s.count() as f64, r.count() as f64);
    if nr == 0.0 {
        return Err(Error::EmptyReference);
    }
    Ok(100.0 * (ns - nr).abs() / nr)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LesionCounts {
    pub gt_total: usize,
    pub gt_detected: usize,
    pub pred_total: usize,
    pub pred_hit: usize,
}

pub fn lesion_counts(
    s: &BinaryMask,
    r: &BinaryMask,
    connectivity: Connectivity,
) -> Result<LesionCounts> {
    check_dims(s.dims(), r.dims())?;
    let ls = label_components_with(s, connectivity, DEFAULT_SIZE_THRESHOLD);
    let lr = label_components_with(r, connectivity, DEFAULT_SIZE_THRESHOLD);
    let mut gt_hit = vec![false; lr.len()];
    let mut pred_hit = vec![false; ls.len()];
    for (&a, &b) in ls.labels.iter().zip(&lr.labels) {
        if a != 0 && b != 0 {
            pred_hit[a as usize - 1] = true;
            gt_hit[b as usize - 1] = true;
        }
    }
    Ok(LesionCounts {
        gt_total: lr.len(),
        gt_detected: gt_hit.iter().filter(|&&h| h).count(),
        pred_total: ls.len(),
        pred_hit: pred_hit.iter().filter(|&&h| h).count(),
    })
}

impl LesionCounts {
    pub fn detection_pct(&self) -> Result<f64> {
        if self.gt_total == 0 {
            return Err(Error::EmptyReference);
        }
        Ok(100.0 * self.gt_detected as f64 / self.gt_total as f64)
    }

    /// Lesion-level F1, and whether it was forced to zero because the
    /// prediction has no components.
    pub fn f1(&self) -> Result<(f64, bool)> {
        if self.gt_total == 0 {
            return Err(Error::EmptyReference);
        }
        if self.pred_total == 0 {
            return Ok((0.0, true));
        }
        let recall = self.gt_detected as f64 / self.gt_total as f64;
        let precision = self.pred_hit as f64 / self.pred_total as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Ok((f1, false))
    }
}

/// Percentage of reference lesions touched by the prediction.
pub fn lesion_detection(s: &BinaryMask, r: &BinaryMask) -> Result<f64> {
    lesion_counts(s, r, Connectivity::default())?.detection_pct()
}

/// Harmonic mean of lesion-level precision and recall.
pub fn lesion_f1(s: &BinaryMask, r: &BinaryMask) -> Result<f64> {
    lesion_counts(s, r, Connectivity::default())?
        .f1()
        .map(|(f, _)| f)
}

pub fn evaluate(s: &BinaryMask, r: &BinaryMask) -> Result<MetricsReport> {
    evaluate_with(s, r, Connectivity::default())
}

/// All five metrics; degenerate cases become flags and `None`s.
pub fn evaluate_with(
    s: &BinaryMask,
    r: &BinaryMask,
    connectivity: Connectivity,
) -> Result<MetricsReport> {
    check_dims(s.dims(), r.dims())?;
    let mut flags = Vec::new();
    let dice = dsc(s, r)?;
    let hd95_mm = match hd95(s, r) {
        Ok(v) => Some(v),
        Err(Error::EmptyMask(_)) => {
            flags.push(Flag::EmptyMask);
            None
        }
        Err(e) => return Err(e),
    };
    let avd_pct = avd(s, r).ok();
    let counts = lesion_counts(s, r, connectivity)?;
    let (detection_pct, f1) = match counts.f1() {
        Ok((f1, no_pred)) => {
            if no_pred {
                flags.push(Flag::NoPredictedComponents);
            }
            (Some(counts.detection_pct()?), Some(f1))
        }
        Err(_) => {
            flags.push(Flag::EmptyReference);
            (None, None)
        }
    };
    Ok(MetricsReport {
        dice,
        hd95_mm,
        avd_pct,
        detection_pct,
        f1,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Spacing;

    fn voxels(dims: Dims, spacing: Spacing, on: &[[usize; 3]]) -> BinaryMask {
        BinaryMask::from_fn(dims, spacing, |x, y, z| on.contains(&[x, y, z])).unwrap()
    }

    fn ball(dims: Dims, c: [f64; 3], r: f64) -> BinaryMask {
        BinaryMask::from_fn(dims, Spacing::ISOTROPIC, |x, y, z| {
            let d = [x as f64 - c[0], y as f64 - c[1], z as f64 - c[2]];
            d.iter().map(|v| v * v).sum::<f64>() <= r * r
        })
        .unwrap()
    }

    #[test]
    fn hd95_identity_and_unit_offset() {
        let s = ball([12, 12, 12], [5.0, 5.0, 5.0], 3.0);
        assert_eq!(hd95(&s, &s).unwrap(), 0.0);
        let a = voxels([4, 4, 4], Spacing::ISOTROPIC, &[[1, 1, 1]]);
        let b = voxels([4, 4, 4], Spacing::ISOTROPIC, &[[2, 1, 1]]);
        assert_eq!(hd95(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn hd95_uses_spacing() {
        let sp = Spacing([1.0, 1.0, 3.0]);
        let a = voxels([4, 4, 4], sp, &[[1, 1, 1]]);
        let b = voxels([4, 4, 4], sp, &[[1, 1, 2]]);
        assert_eq!(hd95(&a, &b).unwrap(), 3.0);
    }

    #[test]
    fn hd95_empty() {
        let a = voxels([4, 4, 4], Spacing::ISOTROPIC, &[[1, 1, 1]]);
        let e = BinaryMask::empty([4, 4, 4], Spacing::ISOTROPIC).unwrap();
        assert!(matches!(hd95(&a, &e), Err(Error::EmptyMask(_))));
        assert!(matches!(hd95(&e, &a), Err(Error::EmptyMask(_))));
    }

    #[test]
    fn percentile_interpolates() {
        let mut v = vec![4.0, 1.0, 3.0, 2.0];
        // h = 3 * 0.5 = 1.5 -> between 2 and 3
        assert_eq!(percentile(&mut v, 0.5), 2.5);
        let mut v: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        assert_eq!(percentile(&mut v, 0.95), 95.0);
        assert_eq!(percentile(&mut [7.0], 0.95), 7.0);
    }

    #[test]
    fn boundary_of_solid_block() {
        let m = BinaryMask::from_fn([5, 5, 5], Spacing::ISOTROPIC, |x, y, z| {
            (1..4).contains(&x) && (1..4).contains(&y) && (1..4).contains(&z)
        })
        .unwrap();
        // 27 voxels, only the centre is interior
        assert_eq!(boundary_voxels(&m).len(), 26);
    }

    #[test]
    fn avd_cases() {
        let dims = [20, 10, 1];
        let r = BinaryMask::from_fn(dims, Spacing::ISOTROPIC, |x, y, _| x < 10 && y < 10).unwrap();
        let s = BinaryMask::from_fn(dims, Spacing::ISOTROPIC, |x, y, _| x < 11 && y < 10).unwrap();
        assert!((avd(&s, &r).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(avd(&r, &r).unwrap(), 0.0);
        let e = BinaryMask::empty(dims, Spacing::ISOTROPIC).unwrap();
        assert_eq!(avd(&e, &r).unwrap(), 100.0);
        assert!(matches!(avd(&r, &e), Err(Error::EmptyReference)));
    }

    #[test]
    fn detection_and_f1_counts() {
        let dims = [20, 3, 3];
        // gt lesions at x = 0, 4, 8; predictions at x = 0, 4, 12, 16
        let gt = voxels(dims, Spacing::ISOTROPIC, &[[0, 1, 1], [4, 1, 1], [8, 1, 1]]);
        let pred = voxels(
            dims,
            Spacing::ISOTROPIC,
            &[[0, 1, 1], [4, 1, 1], [12, 1, 1], [16, 1, 1]],
        );
        assert!((lesion_detection(&pred, &gt).unwrap() - 66.666_666).abs() < 0.01);
        assert!((lesion_f1(&pred, &gt).unwrap() - 4.0 / 7.0).abs() < 1e-12);
        assert_eq!(lesion_detection(&gt, &gt).unwrap(), 100.0);
        assert_eq!(lesion_f1(&gt, &gt).unwrap(), 1.0);
        let e = BinaryMask::empty(dims, Spacing::ISOTROPIC).unwrap();
        assert_eq!(lesion_detection(&e, &gt).unwrap(), 0.0);
        let far = voxels(dims, Spacing::ISOTROPIC, &[[18, 1, 1]]);
        assert_eq!(lesion_f1(&far, &gt).unwrap(), 0.0);
    }

    #[test]
    fn evaluate_perfect() {
        let s = ball([12, 12, 12], [5.0, 6.0, 5.0], 3.5);
        let r = evaluate(&s, &s).unwrap();
        assert_eq!(
            (r.dice, r.hd95_mm, r.avd_pct, r.detection_pct, r.f1),
            (1.0, Some(0.0), Some(0.0), Some(100.0), Some(1.0))
        );
        assert!(r.flags.is_empty());
    }

    #[test]
    fn evaluate_empty_prediction() {
        let r = ball([12, 12, 12], [5.0, 6.0, 5.0], 3.5);
        let e = BinaryMask::empty([12, 12, 12], Spacing::ISOTROPIC).unwrap();
        let m = evaluate(&e, &r).unwrap();
        assert_eq!(m.dice, 0.0);
        assert_eq!(m.avd_pct, Some(100.0));
        assert_eq!(m.detection_pct, Some(0.0));
        assert_eq!(m.f1, Some(0.0));
        assert_eq!(m.hd95_mm, None);
        assert!(m.flags.contains(&Flag::EmptyMask));
        assert!(m.flags.contains(&Flag::NoPredictedComponents));
    }

    #[test]
    fn evaluate_both_empty() {
        let e = BinaryMask::empty([4, 4, 4], Spacing::ISOTROPIC).unwrap();
        let m = evaluate(&e, &e).unwrap();
        assert_eq!(m.dice, 1.0);
        assert!(m.flags.contains(&Flag::EmptyReference));
        assert!(m.flags.contains(&Flag::EmptyMask));
    }
}
