//! Where first-stage opinions come from.
//!
//! A provider predicts one patch at a time at its own scale; the full-volume
//! opinion is the overlap average of those patch predictions. Trained
//! networks would implement [`OpinionProvider`]; this crate ships the
//! [`OracleProvider`], which answers from a precomputed synthetic opinion.

use rayon::prelude::*;

use crate::error::Result;
use crate::patching::{extract_patches, stitch, Patch, SamplingSpec};
use crate::phantom::{simulate_opinion, OracleSpec};
use crate::volume::{BinaryMask, ProbMap, Volume3};

pub trait OpinionProvider: Sync {
    fn sampling(&self) -> SamplingSpec;

    /// Lesion probabilities for one image window, same size as the window.
    fn predict_patch(&self, image_patch: &Patch) -> Result<Volume3>;
}

/// Runs `provider` over every sliding window of `image` and stitches the
/// results.
pub fn provide_opinion<P: OpinionProvider + ?Sized>(
    provider: &P,
    image: &Volume3,
) -> Result<ProbMap> {
    let patches = extract_patches(image, &provider.sampling())?;
    let preds: Vec<Patch> = patches
        .par_iter()
        .map(|p| {
            Ok(Patch {
                origin: p.origin,
                data: provider.predict_patch(p)?,
            })
        })
        .collect::<Result<_>>()?;
    stitch(&preds, image.dims(), image.spacing())
}

/// Answers every window by cropping a synthetic opinion computed once from
/// the ground truth.
pub struct OracleProvider {
    sampling: SamplingSpec,
    opinion: ProbMap,
}

impl OracleProvider {
    pub fn new(
        gt: &BinaryMask,
        spec: &OracleSpec,
        sampling: SamplingSpec,
        size_threshold: usize,
    ) -> Result<Self> {
        Ok(OracleProvider {
            sampling,
            opinion: simulate_opinion(gt, spec, size_threshold)?,
        })
    }

    pub fn opinion(&self) -> &ProbMap {
        &self.opinion
    }
}

impl OpinionProvider for OracleProvider {
    fn sampling(&self) -> SamplingSpec {
        self.sampling
    }

    fn predict_patch(&self, image_patch: &Patch) -> Result<Volume3> {
        let size = image_patch.size();
        let o = image_patch.origin;
        Volume3::from_fn(size, self.opinion.spacing(), |x, y, z| {
            self.opinion.get(o[0] + x, o[1] + y, o[2] + z)
        })
    }
}
