//! Discrete and soft Dice overlap, plus the gradient of the soft form.
//!
//! The soft Dice of a prediction `s` against a binary reference `r` is
//! `2·Σ sᵢrᵢ / (Σ sᵢ + Σ rᵢ)`. The training loss is its negation; callers
//! apply the sign, this module only ever returns the positive overlap.
//!
//! All reductions here run sequentially in voxel order so repeated training
//! runs are bit-identical.

use crate::error::{Error, Result};
use crate::volume::{check_dims, BinaryMask, ProbMap};

/// Per-voxel gradient aligned with the prediction it was computed for.
#[derive(Debug, Clone, PartialEq)]
pub struct GradField(pub Vec<f64>);

impl GradField {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// The three sums the soft Dice and its gradient are built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiceSums {
    pub intersection: f64,
    pub pred: f64,
    pub truth: f64,
}

impl DiceSums {
    pub fn of(s: &[f64], r: &[f64]) -> Self {
        let mut sums = DiceSums {
            intersection: 0.0,
            pred: 0.0,
            truth: 0.0,
        };
        for (&si, &ri) in s.iter().zip(r) {
            sums.intersection += si * ri;
            sums.pred += si;
            sums.truth += ri;
        }
        sums
    }

    pub fn denominator(&self) -> f64 {
        self.pred + self.truth
    }

    /// Soft Dice, with the vacuous `0 / 0` case defined as 1.
    pub fn dice(&self) -> f64 {
        let d = self.denominator();
        if d == 0.0 {
            1.0
        } else {
            2.0 * self.intersection / d
        }
    }
}

/// `2|S∩R| / (|S|+|R|)`; two empty masks agree perfectly.
pub fn dsc(s: &BinaryMask, r: &BinaryMask) -> Result<f64> {
    check_dims(s.dims(), r.dims())?;
    let (mut both, mut ns, mut nr) = (0usize, 0usize, 0usize);
    for (&a, &b) in s.data().iter().zip(r.data()) {
        let (a, b) = (a != 0.0, b != 0.0);
        both += (a && b) as usize;
        ns += a as usize;
        nr += b as usize;
    }
    if ns + nr == 0 {
        Ok(1.0)
    } else {
        Ok(2.0 * both as f64 / (ns + nr) as f64)
    }
}

pub fn soft_dice(s: &ProbMap, r: &BinaryMask) -> Result<f64> {
    check_dims(s.dims(), r.dims())?;
    Ok(DiceSums::of(s.data(), r.data()).dice())
}

/// `∂ soft_dice / ∂ sⱼ = [2rⱼ(Σs + Σr) − 2Σsr] / (Σs + Σr)²`.
pub fn soft_dice_grad(s: &ProbMap, r: &BinaryMask) -> Result<GradField> {
    check_dims(s.dims(), r.dims())?;
    soft_dice_grad_raw(s.data(), r.data()).map(GradField)
}

/// Slice form of [`soft_dice_grad`]; `s` need not be a validated map.
pub(crate) fn soft_dice_grad_raw(s: &[f64], r: &[f64]) -> Result<Vec<f64>> {
    let sums = DiceSums::of(s, r);
    let d = sums.denominator();
    if d <= 0.0 {
        return Err(Error::DegenerateInput(
            "soft Dice gradient is undefined when prediction and reference are both empty".into(),
        ));
    }
    let d2 = d * d;
    let cross = 2.0 * sums.intersection;
    Ok(r.iter().map(|&rj| (2.0 * rj * d - cross) / d2).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Spacing, Volume3};

    fn mask(bits: &[u8]) -> BinaryMask {
        let data = bits.iter().map(|&b| b as f64).collect();
        BinaryMask::new(Volume3::new([bits.len(), 1, 1], Spacing::ISOTROPIC, data).unwrap())
            .unwrap()
    }

    fn prob(values: &[f64]) -> ProbMap {
        ProbMap::from_data([values.len(), 1, 1], Spacing::ISOTROPIC, values.to_vec()).unwrap()
    }

    #[test]
    fn dsc_cases() {
        let a = mask(&[1, 1, 0, 0]);
        assert_eq!(dsc(&a, &a).unwrap(), 1.0);
        assert_eq!(dsc(&a, &mask(&[0, 0, 1, 1])).unwrap(), 0.0);
        assert_eq!(dsc(&a, &mask(&[0, 1, 1, 0])).unwrap(), 0.5);
        assert_eq!(dsc(&mask(&[0, 0]), &mask(&[0, 0])).unwrap(), 1.0);
        assert!(matches!(
            dsc(&a, &mask(&[1])),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn soft_dice_on_binary_equals_dsc() {
        let a = mask(&[1, 0, 1, 1, 0]);
        let b = mask(&[1, 1, 0, 1, 0]);
        assert_eq!(soft_dice(&a.to_prob(), &b).unwrap(), dsc(&a, &b).unwrap());
        assert_eq!(soft_dice(&b.to_prob(), &b).unwrap(), 1.0);
    }

    #[test]
    fn soft_dice_vacuous() {
        assert_eq!(soft_dice(&prob(&[0.0, 0.0]), &mask(&[0, 0])).unwrap(), 1.0);
    }

    #[test]
    fn gradient_at_perfect_prediction() {
        // s = r with n foreground voxels: 1/(2n) on foreground
        let r = mask(&[1, 1, 1, 0, 0]);
        let g = soft_dice_grad(&r.to_prob(), &r).unwrap();
        let n = 3.0;
        assert!((g.values()[0] - 1.0 / (2.0 * n)).abs() < 1e-15);
        // background: -2n / (2n)^2 = -1/(2n)
        assert!((g.values()[4] + 1.0 / (2.0 * n)).abs() < 1e-15);
    }

    #[test]
    fn gradient_with_empty_reference_is_zero() {
        let g = soft_dice_grad(&prob(&[0.5; 6]), &mask(&[0; 6])).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_degenerate() {
        assert!(matches!(
            soft_dice_grad(&prob(&[0.0; 3]), &mask(&[0; 3])),
            Err(Error::DegenerateInput(_))
        ));
    }
}
