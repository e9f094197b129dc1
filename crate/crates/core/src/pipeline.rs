//! End-to-end workflow: synthetic suites, small/large group ensembles, and
//! Monte Carlo cross-validation.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::components::{split_mask_with, split_pred_with, split_train_with, Connectivity};
use crate::config::RunConfig;
use crate::ensemble::{
    fuse_opinions, majority_vote, merge_groups, train_ensemble, EnsembleModel, OpinionSet,
    TrainConfig,
};
use crate::error::{Error, Result};
use crate::io::{read_volume, write_mask, write_volume, Dtype};
use crate::metrics::{evaluate_with, Flag, MetricsReport};
use crate::patching::Scale;
use crate::phantom::{derive_seed, generate_phantom, mc_split, OracleSpec, PhantomSpec};
use crate::provider::{provide_opinion, OracleProvider};
use crate::volume::{normalize_intensity, BinaryMask, ProbMap, Volume3};

/// One synthetic subject with its three opinions (fine, mid, coarse).
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: usize,
    pub image: Volume3,
    pub gt: BinaryMask,
    pub opinions: [ProbMap; 3],
}

/// Seeds actually used for one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSeeds {
    pub id: usize,
    pub phantom: u64,
    pub oracles: [u64; 3],
}

pub fn subject_seeds(cfg: &RunConfig, id: usize) -> SubjectSeeds {
    SubjectSeeds {
        id,
        phantom: derive_seed(cfg.seed, 10, id as u64),
        oracles: [0u64, 1, 2].map(|k| derive_seed(cfg.seed, 20 + k, id as u64)),
    }
}

pub fn generate_subject(cfg: &RunConfig, id: usize) -> Result<Subject> {
    let seeds = subject_seeds(cfg, id);
    let phantom = generate_phantom(&PhantomSpec {
        seed: seeds.phantom,
        ..cfg.phantom.clone()
    })?;
    let normalized = normalize_intensity(&phantom.image);
    let mut opinions = Vec::with_capacity(3);
    for k in 0..3 {
        let spec = OracleSpec {
            seed: seeds.oracles[k],
            ..cfg.oracles[k].clone()
        };
        let provider = OracleProvider::new(&phantom.gt, &spec, cfg.scales[k], cfg.size_threshold)?;
        opinions.push(provide_opinion(&provider, normalized.as_volume())?);
    }
    Ok(Subject {
        id,
        image: phantom.image,
        gt: phantom.gt,
        opinions: opinions.try_into().expect("three opinions"),
    })
}

/// Subjects `0..cfg.subjects`, generated in parallel, returned in id order.
pub fn generate_suite(cfg: &RunConfig) -> Result<Vec<Subject>> {
    (0..cfg.subjects)
        .into_par_iter()
        .map(|id| generate_subject(cfg, id))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub config: RunConfig,
    pub subjects: Vec<SubjectSeeds>,
}

pub const SUITE_MANIFEST: &str = "manifest.json";

pub fn subject_dir(root: &Path, id: usize) -> std::path::PathBuf {
    root.join(format!("subject_{id:03}"))
}

/// Writes `subject_NNN/{image,gt,opinion_fine,opinion_mid,opinion_coarse}.v3d`
/// and a manifest with the configuration and per-subject seeds.
pub fn write_suite(root: &Path, cfg: &RunConfig, subjects: &[Subject]) -> Result<()> {
    for s in subjects {
        let dir = subject_dir(root, s.id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_volume(dir.join("image.v3d"), &s.image, Dtype::F32)?;
        write_mask(dir.join("gt.v3d"), &s.gt)?;
        for (k, scale) in Scale::ALL.iter().enumerate() {
            write_volume(
                dir.join(format!("opinion_{scale}.v3d")),
                s.opinions[k].as_volume(),
                Dtype::F32,
            )?;
        }
    }
    let manifest = SuiteManifest {
        config: cfg.clone(),
        subjects: subjects.iter().map(|s| subject_seeds(cfg, s.id)).collect(),
    };
    let path = root.join(SUITE_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_suite(root: &Path) -> Result<(SuiteManifest, Vec<Subject>)> {
    let path = root.join(SUITE_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: SuiteManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let subjects = manifest
        .subjects
        .iter()
        .map(|seeds| {
            let dir = subject_dir(root, seeds.id);
            let image = read_volume(dir.join("image.v3d"))?;
            let gt = BinaryMask::new(read_volume(dir.join("gt.v3d"))?)?;
            let opinions = Scale::ALL.map(|scale| {
                read_volume(dir.join(format!("opinion_{scale}.v3d"))).and_then(ProbMap::new)
            });
            let [a, b, c] = opinions;
            Ok(Subject {
                id: seeds.id,
                image,
                gt,
                opinions: [a?, b?, c?],
            })
        })
        .collect::<Result<_>>()?;
    Ok((manifest, subjects))
}

/// Training-time opinion sets for the two lesion groups of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSets {
    pub small: OpinionSet,
    pub large: OpinionSet,
}

pub fn training_groups(
    opinions: &[ProbMap; 3],
    gt: &BinaryMask,
    size_threshold: usize,
    connectivity: Connectivity,
) -> Result<GroupSets> {
    let mut small = Vec::with_capacity(3);
    let mut large = Vec::with_capacity(3);
    for x in opinions {
        let (s, l) = split_train_with(x, gt, size_threshold, connectivity)?;
        small.push(s);
        large.push(l);
    }
    let (gt_small, gt_large) = split_mask_with(gt, size_threshold, connectivity);
    Ok(GroupSets {
        small: OpinionSet::new(small.try_into().unwrap(), gt_small)?,
        large: OpinionSet::new(large.try_into().unwrap(), gt_large)?,
    })
}

/// The pair of independently trained ensemble nets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupModels {
    pub size_threshold: usize,
    pub connectivity: Connectivity,
    pub small: EnsembleModel,
    pub large: EnsembleModel,
    pub config: TrainConfig,
    pub small_loss_history: Vec<f64>,
    pub large_loss_history: Vec<f64>,
    pub small_final_loss: f64,
    pub large_final_loss: f64,
}

impl GroupModels {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

pub fn train_groups(
    sets: &[GroupSets],
    cfg: &TrainConfig,
    activation: ActivationKind,
    size_threshold: usize,
    connectivity: Connectivity,
) -> Result<GroupModels> {
    let small: Vec<OpinionSet> = sets.iter().map(|g| g.small.clone()).collect();
    let large: Vec<OpinionSet> = sets.iter().map(|g| g.large.clone()).collect();
    let s = train_ensemble(&small, cfg, activation)?;
    let l = train_ensemble(&large, cfg, activation)?;
    Ok(GroupModels {
        size_threshold,
        connectivity,
        small: s.model,
        large: l.model,
        config: *cfg,
        small_loss_history: s.loss_history,
        large_loss_history: l.loss_history,
        small_final_loss: s.final_loss,
        large_final_loss: l.final_loss,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupPrediction {
    pub small: ProbMap,
    pub large: ProbMap,
    pub merged: BinaryMask,
    pub overlap_voxels: usize,
}

/// Inference: split each opinion by its own component sizes, fuse each group
/// with its own net, then merge.
pub fn apply_groups(opinions: &[ProbMap; 3], models: &GroupModels) -> Result<GroupPrediction> {
    let mut small = Vec::with_capacity(3);
    let mut large = Vec::with_capacity(3);
    for x in opinions {
        let (s, l) = split_pred_with(x, models.size_threshold, models.connectivity);
        small.push(s);
        large.push(l);
    }
    let small: [ProbMap; 3] = small.try_into().unwrap();
    let large: [ProbMap; 3] = large.try_into().unwrap();
    let small = fuse_opinions(&small, &models.small)?;
    let large = fuse_opinions(&large, &models.large)?;
    let merge = merge_groups(&small, &large)?;
    Ok(GroupPrediction {
        small,
        large,
        merged: merge.mask,
        overlap_voxels: merge.overlap_voxels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LesionGroup {
    All,
    Small,
    Large,
}

impl LesionGroup {
    pub const ALL: [LesionGroup; 3] = [LesionGroup::All, LesionGroup::Small, LesionGroup::Large];

    pub fn title(self) -> &'static str {
        match self {
            LesionGroup::All => "All lesions",
            LesionGroup::Small => "Small lesions",
            LesionGroup::Large => "Large lesions",
        }
    }
}

/// A row of the result tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fine,
    Mid,
    Coarse,
    Vote,
    Sigmoid,
    SinAct,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Fine,
        Method::Mid,
        Method::Coarse,
        Method::Vote,
        Method::Sigmoid,
        Method::SinAct,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Fine => "fine",
            Method::Mid => "mid",
            Method::Coarse => "coarse",
            Method::Vote => "Vote",
            Method::Sigmoid => "Sigmoid",
            Method::SinAct => "SinAct",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub repeat: usize,
    pub subject: usize,
    pub group: LesionGroup,
    pub method: Method,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub repeat: usize,
    pub activation: ActivationKind,
    pub models: GroupModels,
}

/// One line of `records.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Record {
    Train(TrainRecord),
    Eval(EvalRecord),
}

fn evaluate_masks(
    pred: &BinaryMask,
    pred_groups: (BinaryMask, BinaryMask),
    gt_groups: &(BinaryMask, BinaryMask),
    gt: &BinaryMask,
    connectivity: Connectivity,
) -> Result<[MetricsReport; 3]> {
    Ok([
        evaluate_with(pred, gt, connectivity)?,
        evaluate_with(&pred_groups.0, &gt_groups.0, connectivity)?,
        evaluate_with(&pred_groups.1, &gt_groups.1, connectivity)?,
    ])
}

/// Evaluates every method on one test subject.
pub fn evaluate_subject(
    subject: &Subject,
    sigmoid: &GroupModels,
    sinact: &GroupModels,
    size_threshold: usize,
    connectivity: Connectivity,
) -> Result<Vec<(Method, [MetricsReport; 3])>> {
    let gt_groups = split_mask_with(&subject.gt, size_threshold, connectivity);
    let by_size = |m: &BinaryMask| split_mask_with(m, size_threshold, connectivity);
    let mut out = Vec::with_capacity(Method::ALL.len());
    for (k, method) in [Method::Fine, Method::Mid, Method::Coarse]
        .into_iter()
        .enumerate()
    {
        let mask = subject.opinions[k].binarize();
        let groups = by_size(&mask);
        out.push((
            method,
            evaluate_masks(&mask, groups, &gt_groups, &subject.gt, connectivity)?,
        ));
    }
    let vote = majority_vote(&subject.opinions)?;
    let groups = by_size(&vote);
    out.push((
        Method::Vote,
        evaluate_masks(&vote, groups, &gt_groups, &subject.gt, connectivity)?,
    ));
    for (method, models) in [(Method::Sigmoid, sigmoid), (Method::SinAct, sinact)] {
        let pred = apply_groups(&subject.opinions, models)?;
        let groups = (pred.small.binarize(), pred.large.binarize());
        let mut reports =
            evaluate_masks(&pred.merged, groups, &gt_groups, &subject.gt, connectivity)?;
        if pred.overlap_voxels > 0 {
            reports[0].flags.push(Flag::GroupOverlap);
        }
        out.push((method, reports));
    }
    Ok(out)
}

/// Runs the full Monte Carlo cross-validation and returns every record in a
/// fixed order: per repeat, the two training records then evaluations by
/// test subject, method and group.
pub fn cross_validate(cfg: &RunConfig, subjects: &[Subject]) -> Result<Vec<Record>> {
    cfg.validate()?;
    let splits = mc_split(subjects.len(), cfg.train_fraction, cfg.repeats, cfg.seed)?;
    let groups: Vec<GroupSets> = subjects
        .par_iter()
        .map(|s| training_groups(&s.opinions, &s.gt, cfg.size_threshold, cfg.connectivity))
        .collect::<Result<_>>()?;
    let train_cfg = cfg.train_config();
    let mut records = Vec::new();
    for (repeat, split) in splits.iter().enumerate() {
        let train_sets: Vec<GroupSets> = split.train.iter().map(|&i| groups[i].clone()).collect();
        let sigmoid = train_groups(
            &train_sets,
            &train_cfg,
            ActivationKind::Sigmoid,
            cfg.size_threshold,
            cfg.connectivity,
        )?;
        let sinact = train_groups(
            &train_sets,
            &train_cfg,
            ActivationKind::SinAct,
            cfg.size_threshold,
            cfg.connectivity,
        )?;
        records.push(Record::Train(TrainRecord {
            repeat,
            activation: ActivationKind::Sigmoid,
            models: sigmoid.clone(),
        }));
        records.push(Record::Train(TrainRecord {
            repeat,
            activation: ActivationKind::SinAct,
            models: sinact.clone(),
        }));
        let evaluated: Vec<Vec<(Method, [MetricsReport; 3])>> = split
            .test
            .par_iter()
            .map(|&i| {
                evaluate_subject(
                    &subjects[i],
                    &sigmoid,
                    &sinact,
                    cfg.size_threshold,
                    cfg.connectivity,
                )
            })
            .collect::<Result<_>>()?;
        for (&subject, rows) in split.test.iter().zip(evaluated) {
            for (method, reports) in rows {
                for (group, metrics) in LesionGroup::ALL.into_iter().zip(reports) {
                    records.push(Record::Eval(EvalRecord {
                        repeat,
                        subject,
                        group,
                        method,
                        metrics,
                    }));
                }
            }
        }
    }
    Ok(records)
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}
