//! Dense 3D grids and their value-domain refinements.
//!
//! [`Volume3`] is the general carrier: any finite real per voxel, stored
//! x-fastest. [`ProbMap`] restricts values to `[0, 1]` and [`BinaryMask`] to
//! `{0, 1}`. The refinements are checked once at construction and then
//! trusted everywhere downstream.

use std::ops::Deref;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel counts along x, y and z.
pub type Dims = [usize; 3];

/// Default probability cut used to binarize maps.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Physical voxel size in millimetres.
///
/// Stored at single precision because that is what the on-disk format
/// carries; keeping the in-memory value identical makes file round-trips
/// exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing(pub [f32; 3]);

impl Spacing {
    pub const ISOTROPIC: Spacing = Spacing([1.0, 1.0, 1.0]);

    pub fn new(sx: f32, sy: f32, sz: f32) -> Result<Self> {
        let s = Spacing([sx, sy, sz]);
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidVolume(format!(
                "spacing must be positive and finite, got {:?}",
                self.0
            )))
        }
    }

    /// Spacing promoted to double precision.
    pub fn mm(&self) -> [f64; 3] {
        [self.0[0] as f64, self.0[1] as f64, self.0[2] as f64]
    }
}

impl Default for Spacing {
    fn default() -> Self {
        Spacing::ISOTROPIC
    }
}

/// Dense scalar grid with physical spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3 {
    dims: Dims,
    spacing: Spacing,
    data: Vec<f64>,
}

impl Volume3 {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidVolume(format!(
                "dimensions must be positive, got {dims:?}"
            )));
        }
        spacing.validate()?;
        let n = voxel_count(dims);
        if data.len() != n {
            return Err(Error::InvalidVolume(format!(
                "data length {} does not match {dims:?} ({n} voxels)",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume(format!(
                "non-finite value {} at voxel {i}",
                data[i]
            )));
        }
        Ok(Volume3 {
            dims,
            spacing,
            data,
        })
    }

    pub fn filled(dims: Dims, spacing: Spacing, value: f64) -> Result<Self> {
        Volume3::new(dims, spacing, vec![value; voxel_count(dims)])
    }

    pub fn zeros(dims: Dims, spacing: Spacing) -> Result<Self> {
        Volume3::filled(dims, spacing, 0.0)
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(
        dims: Dims,
        spacing: Spacing,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(voxel_count(dims));
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Volume3::new(dims, spacing, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        linear_index(self.dims, x, y, z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        linear_coords(self.dims, idx)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Errors with `ShapeMismatch` unless `other` lives on the same voxel grid.
    pub fn check_same_dims(&self, other: &Volume3) -> Result<()> {
        check_dims(self.dims, other.dims)
    }

    /// Returns a copy with a different spacing.
    pub fn with_spacing(mut self, spacing: Spacing) -> Result<Self> {
        spacing.validate()?;
        self.spacing = spacing;
        Ok(self)
    }
}

pub(crate) fn check_dims(left: Dims, right: Dims) -> Result<()> {
    if left == right {
        Ok(())
    } else {
        Err(Error::ShapeMismatch { left, right })
    }
}

#[inline]
pub fn voxel_count(dims: Dims) -> usize {
    dims[0] * dims[1] * dims[2]
}

#[inline]
pub fn linear_index(dims: Dims, x: usize, y: usize, z: usize) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

#[inline]
pub fn linear_coords(dims: Dims, idx: usize) -> [usize; 3] {
    let x = idx % dims[0];
    let rest = idx / dims[0];
    [x, rest % dims[1], rest / dims[1]]
}

/// A volume whose values all lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap(Volume3);

impl ProbMap {
    pub fn new(volume: Volume3) -> Result<Self> {
        if let Some(i) = volume.data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidVolume(format!(
                "probability {} at voxel {i} is outside [0, 1]",
                volume.data[i]
            )));
        }
        Ok(ProbMap(volume))
    }

    pub fn from_data(dims: Dims, spacing: Spacing, data: Vec<f64>) -> Result<Self> {
        ProbMap::new(Volume3::new(dims, spacing, data)?)
    }

    pub fn zeros(dims: Dims, spacing: Spacing) -> Result<Self> {
        Ok(ProbMap(Volume3::zeros(dims, spacing)?))
    }

    pub fn filled(dims: Dims, spacing: Spacing, value: f64) -> Result<Self> {
        ProbMap::new(Volume3::filled(dims, spacing, value)?)
    }

    /// Clamps every value into `[0, 1]`.
    pub fn clamped(volume: Volume3) -> Self {
        let Volume3 {
            dims,
            spacing,
            mut data,
        } = volume;
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        ProbMap(Volume3 {
            dims,
            spacing,
            data,
        })
    }

    pub fn as_volume(&self) -> &Volume3 {
        &self.0
    }

    pub fn into_volume(self) -> Volume3 {
        self.0
    }

    /// Binarizes at [`DEFAULT_THRESHOLD`].
    pub fn binarize(&self) -> BinaryMask {
        threshold(self, DEFAULT_THRESHOLD).expect("default threshold is valid")
    }
}

impl Deref for ProbMap {
    type Target = Volume3;

    fn deref(&self) -> &Volume3 {
        &self.0
    }
}

/// A volume whose values are exactly `0.0` or `1.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask(Volume3);

impl BinaryMask {
    pub fn new(volume: Volume3) -> Result<Self> {
        if let Some(i) = volume.data.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidVolume(format!(
                "mask value {} at voxel {i} is not 0 or 1",
                volume.data[i]
            )));
        }
        Ok(BinaryMask(volume))
    }

    pub fn empty(dims: Dims, spacing: Spacing) -> Result<Self> {
        Ok(BinaryMask(Volume3::zeros(dims, spacing)?))
    }

    pub fn from_bools(dims: Dims, spacing: Spacing, bits: &[bool]) -> Result<Self> {
        let data = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Ok(BinaryMask(Volume3::new(dims, spacing, data)?))
    }

    pub fn from_fn(
        dims: Dims,
        spacing: Spacing,
        mut f: impl FnMut(usize, usize, usize) -> bool,
    ) -> Result<Self> {
        Ok(BinaryMask(Volume3::from_fn(dims, spacing, |x, y, z| {
            if f(x, y, z) {
                1.0
            } else {
                0.0
            }
        })?))
    }

    #[inline]
    pub fn is_set(&self, idx: usize) -> bool {
        self.0.data[idx] != 0.0
    }

    pub fn bits(&self) -> Vec<bool> {
        self.0.data.iter().map(|&v| v != 0.0).collect()
    }

    /// Number of foreground voxels.
    pub fn count(&self) -> usize {
        self.0.data.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn is_all_background(&self) -> bool {
        self.0.data.iter().all(|&v| v == 0.0)
    }

    pub fn to_prob(&self) -> ProbMap {
        ProbMap(self.0.clone())
    }

    pub fn as_volume(&self) -> &Volume3 {
        &self.0
    }

    pub fn into_volume(self) -> Volume3 {
        self.0
    }

    /// Voxelwise union of two aligned masks.
    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_same_dims(other)?;
        let data = self
            .0
            .data
            .iter()
            .zip(&other.0.data)
            .map(|(&a, &b)| if a != 0.0 || b != 0.0 { 1.0 } else { 0.0 })
            .collect();
        Ok(BinaryMask(Volume3 {
            dims: self.dims,
            spacing: self.spacing,
            data,
        }))
    }
}

impl Deref for BinaryMask {
    type Target = Volume3;

    fn deref(&self) -> &Volume3 {
        &self.0
    }
}

/// Min-max rescaling to `[0, 1]`. A constant volume maps to all zeros.
pub fn normalize_intensity(v: &Volume3) -> ProbMap {
    let (lo, hi) = v.min_max();
    let range = hi - lo;
    let data: Vec<f64> = if range > 0.0 {
        v.data
            .par_iter()
            .map(|&x| ((x - lo) / range).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.0; v.len()]
    };
    ProbMap(Volume3 {
        dims: v.dims,
        spacing: v.spacing,
        data,
    })
}

/// Voxel becomes foreground iff its value is `>= t`.
pub fn threshold(p: &ProbMap, t: f64) -> Result<BinaryMask> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InvalidThreshold(t));
    }
    let data = p
        .data
        .par_iter()
        .map(|&v| if v >= t { 1.0 } else { 0.0 })
        .collect();
    Ok(BinaryMask(Volume3 {
        dims: p.dims,
        spacing: p.spacing,
        data,
    }))
}
