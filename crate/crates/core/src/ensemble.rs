//! Opinion fusion.
//!
//! An ensemble net has exactly three parameters. For opinions `x₁, x₂, x₃`
//! the fused map is `f(w₁x₁ + w₂x₂ + w₃x₃)` voxelwise, with `f` one of the
//! activations in [`crate::activation`]. The weights are learned by plain
//! full-batch gradient descent on the negated soft Dice, averaged over
//! subjects.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::{activate, activate_deriv, ActivationKind};
use crate::dice::{soft_dice_grad_raw, DiceSums};
use crate::error::{Error, Result};
use crate::volume::{check_dims, BinaryMask, ProbMap, Volume3};

pub const INITIAL_WEIGHT: f64 = 1.0 / 3.0;
pub const DEFAULT_EPOCHS: usize = 10;
/// The Dice gradient with respect to the weights is O(1), so 10 full-batch
/// steps at 0.01 barely leave the 1/3 starting point.
pub const DEFAULT_LEARNING_RATE: f64 = 0.3;

/// Three aligned opinions (fine, mid, coarse) and their ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct OpinionSet {
    pub opinions: [ProbMap; 3],
    pub gt: BinaryMask,
}

impl OpinionSet {
    pub fn new(opinions: [ProbMap; 3], gt: BinaryMask) -> Result<Self> {
        for x in &opinions {
            check_dims(x.dims(), gt.dims())?;
            if x.spacing() != gt.spacing() {
                return Err(Error::InvalidVolume(format!(
                    "opinion spacing {:?} differs from ground truth {:?}",
                    x.spacing().0,
                    gt.spacing().0
                )));
            }
        }
        Ok(OpinionSet { opinions, gt })
    }

    /// The same set with opinions reordered; `order[k]` names the source slot.
    pub fn permuted(&self, order: [usize; 3]) -> OpinionSet {
        OpinionSet {
            opinions: order.map(|k| self.opinions[k].clone()),
            gt: self.gt.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub weights: [f64; 3],
    pub activation: ActivationKind,
}

impl EnsembleModel {
    /// Equal weights of one third.
    pub fn initial(activation: ActivationKind) -> Self {
        EnsembleModel {
            weights: [INITIAL_WEIGHT; 3],
            activation,
        }
    }

    #[inline]
    fn pre_activation(&self, x: [f64; 3]) -> f64 {
        self.weights[0] * x[0] + self.weights[1] * x[1] + self.weights[2] * x[2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Echoed into model files; full-batch descent itself draws no randomness.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: DEFAULT_EPOCHS,
            learning_rate: DEFAULT_LEARNING_RATE,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

fn check_opinions(opinions: &[ProbMap; 3]) -> Result<()> {
    check_dims(opinions[0].dims(), opinions[1].dims())?;
    check_dims(opinions[0].dims(), opinions[2].dims())
}

/// Fuses three aligned opinions; no ground truth needed.
pub fn fuse_opinions(opinions: &[ProbMap; 3], m: &EnsembleModel) -> Result<ProbMap> {
    check_opinions(opinions)?;
    let [a, b, c] = opinions.each_ref().map(|x| x.data());
    let data: Vec<f64> = (0..a.len())
        .into_par_iter()
        .map(|i| activate(m.activation, m.pre_activation([a[i], b[i], c[i]])).clamp(0.0, 1.0))
        .collect();
    let v = Volume3::new(opinions[0].dims(), opinions[0].spacing(), data)?;
    ProbMap::new(v)
}

pub fn fuse(o: &OpinionSet, m: &EnsembleModel) -> Result<ProbMap> {
    fuse_opinions(&o.opinions, m)
}

/// Loss (`−soft_dice`) and its gradient with respect to the three weights
/// for one subject.
///
/// A subject whose fused map and ground truth are both empty sits at the
/// vacuous optimum: loss −1, zero gradient.
pub fn loss_and_grad(o: &OpinionSet, m: &EnsembleModel) -> Result<(f64, [f64; 3])> {
    if !m.activation.is_differentiable() {
        return Err(Error::NonDifferentiable);
    }
    let [a, b, c] = o.opinions.each_ref().map(|x| x.data());
    let r = o.gt.data();
    let n = r.len();
    let mut z = Vec::with_capacity(n);
    let mut p = Vec::with_capacity(n);
    for i in 0..n {
        let zi = m.pre_activation([a[i], b[i], c[i]]);
        z.push(zi);
        p.push(activate(m.activation, zi).clamp(0.0, 1.0));
    }
    let sums = DiceSums::of(&p, r);
    let loss = -sums.dice();
    if sums.denominator() == 0.0 {
        return Ok((loss, [0.0; 3]));
    }
    let dsd = soft_dice_grad_raw(&p, r)?;
    let mut g = [0.0; 3];
    for i in 0..n {
        let local = -dsd[i] * activate_deriv(m.activation, z[i])?;
        if local != 0.0 {
            g[0] += local * a[i];
            g[1] += local * b[i];
            g[2] += local * c[i];
        }
    }
    Ok((loss, g))
}

/// Gradient of `−soft_dice(gt, fuse(o, m))` with respect to the weights.
pub fn grad_weights(o: &OpinionSet, m: &EnsembleModel) -> Result<[f64; 3]> {
    loss_and_grad(o, m).map(|(_, g)| g)
}

/// Mean loss over subjects at the given weights.
pub fn mean_loss(data: &[OpinionSet], m: &EnsembleModel) -> Result<f64> {
    let losses: Vec<f64> = data
        .par_iter()
        .map(|o| loss_and_grad(o, m).map(|(l, _)| l))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: EnsembleModel,
    /// Mean loss at the start of each epoch, before that epoch's update.
    pub loss_history: Vec<f64>,
    /// Mean loss at the returned weights.
    pub final_loss: f64,
}

/// Full-batch gradient descent from equal weights.
pub fn train_ensemble(
    data: &[OpinionSet],
    cfg: &TrainConfig,
    activation: ActivationKind,
) -> Result<TrainOutcome> {
    train_from(data, cfg, EnsembleModel::initial(activation))
}

/// Full-batch gradient descent from an explicit starting point.
pub fn train_from(
    data: &[OpinionSet],
    cfg: &TrainConfig,
    start: EnsembleModel,
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::NoTrainingData);
    }
    cfg.validate()?;
    if !start.activation.is_differentiable() {
        return Err(Error::NonDifferentiable);
    }
    let mut model = start;
    let mut history = Vec::with_capacity(cfg.epochs);
    let scale = 1.0 / data.len() as f64;
    for _ in 0..cfg.epochs {
        // parallel per subject, then a fixed-order reduction
        let parts: Vec<(f64, [f64; 3])> = data
            .par_iter()
            .map(|o| loss_and_grad(o, &model))
            .collect::<Result<_>>()?;
        let mut loss = 0.0;
        let mut g = [0.0; 3];
        for (l, gi) in &parts {
            loss += l;
            for k in 0..3 {
                g[k] += gi[k];
            }
        }
        history.push(loss * scale);
        for k in 0..3 {
            model.weights[k] -= cfg.learning_rate * g[k] * scale;
        }
    }
    let final_loss = mean_loss(data, &model)?;
    Ok(TrainOutcome {
        model,
        loss_history: history,
        final_loss,
    })
}

/// Foreground iff at least two of the three binarized opinions agree.
pub fn majority_vote(opinions: &[ProbMap; 3]) -> Result<BinaryMask> {
    check_opinions(opinions)?;
    let [a, b, c] = opinions.each_ref().map(|x| x.data());
    let data = (0..a.len())
        .map(|i| {
            let votes = (a[i] >= 0.5) as u8 + (b[i] >= 0.5) as u8 + (c[i] >= 0.5) as u8;
            if votes >= 2 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    BinaryMask::new(Volume3::new(
        opinions[0].dims(),
        opinions[0].spacing(),
        data,
    )?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    pub mask: BinaryMask,
    /// Voxels that were foreground in both groups; zero unless the inputs
    /// violate the disjoint-support expectation.
    pub overlap_voxels: usize,
}

/// Thresholds both group predictions and takes their union.
pub fn merge_groups(small: &ProbMap, large: &ProbMap) -> Result<MergeOutcome> {
    check_dims(small.dims(), large.dims())?;
    let (s, l) = (small.binarize(), large.binarize());
    let overlap_voxels = s
        .data()
        .iter()
        .zip(l.data())
        .filter(|(&a, &b)| a != 0.0 && b != 0.0)
        .count();
    Ok(MergeOutcome {
        mask: s.union(&l)?,
        overlap_voxels,
    })
}
