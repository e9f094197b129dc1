//! The `sinfuse` command line.
//!
//! Every subcommand reads and writes V3D volumes and line-delimited JSON,
//! so each pipeline stage can be replayed from disk. Exit codes: 0 on
//! success, 1 on a module error (the error name is printed), 2 on a usage
//! error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::activation::ActivationKind;
use crate::components::{label_components_with, split_pred_with, split_train_with, Connectivity};
use crate::config::RunConfig;
use crate::ensemble::{majority_vote, TrainConfig};
use crate::error::{Error, Result};
use crate::io::{read_volume, write_mask, write_volume, Dtype};
use crate::metrics::{evaluate_with, HD95_CONVENTION};
use crate::patching::{
    balance_patches, extract_patches, read_patch_set, stitch, write_patch_set, ManifestHeader,
    SamplingSpec, Scale,
};
use crate::pipeline::{
    apply_groups, cross_validate, generate_suite, read_records, read_suite, train_groups,
    training_groups, write_records, write_suite, GroupSets,
};
use crate::report::{render_jsonl, render_text, summarize};
use crate::volume::{normalize_intensity, BinaryMask, ProbMap};

#[derive(Debug, Parser)]
#[command(
    name = "sinfuse",
    version,
    about = "Multi-scale lesion segmentation fusion with SinAct ensembles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic subject suite with three simulated opinions each.
    Phantom(PhantomArgs),
    /// Extract sliding-window patches, optionally balanced against a mask.
    Patches(PatchesArgs),
    /// Average a patch directory back into a full probability map.
    Stitch(StitchArgs),
    /// Separate a prediction into small and large lesion maps.
    Split(SplitArgs),
    /// Train the small- and large-lesion ensemble nets on a suite.
    FuseTrain(FuseTrainArgs),
    /// Apply trained ensemble nets to three opinions.
    FuseApply(FuseApplyArgs),
    /// Majority vote over three opinions.
    Vote(VoteArgs),
    /// Compute Dice, HD95, AVD, lesion detection and lesion F1.
    Eval(EvalArgs),
    /// Monte Carlo cross-validation over a synthetic suite.
    Xval(XvalArgs),
    /// Re-render result tables from a records file.
    Report(ReportArgs),
}

/// Options that feed a [`RunConfig`]. Keys present in `--config` win over
/// flags.
#[derive(Debug, Args, Default)]
struct RunFlags {
    /// TOML run configuration; its keys override command-line flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of subjects [artifact default: 20].
    #[arg(long)]
    subjects: Option<usize>,
    /// Master seed [artifact default: 7].
    #[arg(long)]
    seed: Option<u64>,
    /// Components above this many voxels are large [method default: 1000].
    #[arg(long)]
    size_threshold: Option<usize>,
    /// Component connectivity: 6, 18 or 26 [artifact default: 26].
    #[arg(long)]
    connectivity: Option<Connectivity>,
    /// Ensemble epochs [method default: 10].
    #[arg(long)]
    epochs: Option<usize>,
    /// Ensemble learning rate [artifact default: 0.3].
    #[arg(long)]
    lr: Option<f64>,
}

impl RunFlags {
    fn resolve(&self, extra: impl FnOnce(&mut RunConfig)) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(v) = self.subjects {
            cfg.subjects = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.size_threshold {
            cfg.size_threshold = v;
            cfg.phantom.size_threshold = v;
        }
        if let Some(v) = self.connectivity {
            cfg.connectivity = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        extra(&mut cfg);
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let overrides: toml::Table = text
                .parse()
                .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
            let mut base: toml::Table =
                toml::from_str(&cfg.to_toml_string()).map_err(|e| Error::Parse(e.to_string()))?;
            merge_tables(&mut base, overrides);
            cfg = RunConfig::from_toml_str(
                &toml::to_string(&base).map_err(|e| Error::Parse(e.to_string()))?,
            )?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[derive(Debug, Args)]
struct PhantomArgs {
    #[command(flatten)]
    run: RunFlags,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn parse_triple(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split([',', 'x']).collect();
    if parts.len() != 3 {
        return Err(format!("expected three values like 6,10,6, got {s:?}"));
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|e| format!("{p:?}: {e}"))?;
    }
    Ok(out)
}

#[derive(Debug, Args)]
struct PatchesArgs {
    /// Input image (V3D).
    #[arg(long)]
    image: PathBuf,
    /// Ground-truth mask; required with --balance.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Named scale: fine, mid or coarse.
    #[arg(long, conflicts_with = "patch")]
    scale: Option<Scale>,
    /// Explicit patch size, e.g. 6,10,6.
    #[arg(long, value_parser = parse_triple)]
    patch: Option<[usize; 3]>,
    /// Explicit stride; defaults to half the patch size.
    #[arg(long, value_parser = parse_triple)]
    stride: Option<[usize; 3]>,
    /// Keep lesion patches plus an equal number of random empty ones.
    #[arg(long, requires = "gt")]
    balance: bool,
    /// Skip intensity normalization.
    #[arg(long)]
    raw: bool,
    /// Seed for empty-patch sampling [artifact default].
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct StitchArgs {
    /// Patch directory with a manifest.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SplitArgs {
    /// Probability map to split.
    #[arg(long)]
    pred: PathBuf,
    /// Ground truth; switches to training-mode routing.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Components above this many voxels are large [method default].
    #[arg(long, default_value_t = 1000)]
    threshold: usize,
    /// 6, 18 or 26 [artifact default].
    #[arg(long, default_value = "26")]
    connectivity: Connectivity,
    #[arg(long)]
    small: PathBuf,
    #[arg(long)]
    large: PathBuf,
    /// Optional component table of the binarized prediction (JSON lines).
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FuseTrainArgs {
    #[command(flatten)]
    run: RunFlags,
    /// Suite directory written by `phantom`.
    #[arg(long)]
    suite: PathBuf,
    /// Activation: sinact or sigmoid [method default: sinact].
    #[arg(long)]
    activation: Option<ActivationKind>,
    /// Comma-separated subject ids to train on; default all.
    #[arg(long, value_delimiter = ',')]
    train_ids: Vec<usize>,
    /// Output model file (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FuseApplyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    x1: PathBuf,
    #[arg(long)]
    x2: PathBuf,
    #[arg(long)]
    x3: PathBuf,
    /// Output binary mask.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct VoteArgs {
    #[arg(long)]
    x1: PathBuf,
    #[arg(long)]
    x2: PathBuf,
    #[arg(long)]
    x3: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Predicted mask or probability map (binarized at 0.5).
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth mask.
    #[arg(long)]
    gt: PathBuf,
    /// Lesion connectivity: 6, 18 or 26 [artifact default].
    #[arg(long, default_value = "26")]
    connectivity: Connectivity,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct XvalArgs {
    #[command(flatten)]
    run: RunFlags,
    /// Number of Monte Carlo repeats [method default: 5].
    #[arg(long)]
    repeats: Option<usize>,
    /// Output directory for report.txt, report.jsonl and records.jsonl.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// records.jsonl written by `xval`.
    #[arg(long)]
    records: PathBuf,
    /// Configuration to echo in the header.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_prob(path: &Path) -> Result<ProbMap> {
    ProbMap::new(read_volume(path)?)
}

fn load_mask(path: &Path) -> Result<BinaryMask> {
    let v = read_volume(path)?;
    match BinaryMask::new(v.clone()) {
        Ok(m) => Ok(m),
        Err(_) => Ok(ProbMap::new(v)?.binarize()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn provenance(command: &str, lines: &[String]) {
    println!("# sinfuse {command} {}", env!("CARGO_PKG_VERSION"));
    for l in lines {
        println!("# {l}");
    }
}

fn cmd_phantom(a: &PhantomArgs) -> Result<()> {
    let cfg = a.run.resolve(|_| {})?;
    provenance("phantom", &cfg.describe());
    let subjects = generate_suite(&cfg)?;
    write_suite(&a.out, &cfg, &subjects)?;
    println!("wrote {} subjects to {}", subjects.len(), a.out.display());
    Ok(())
}

fn cmd_patches(a: &PatchesArgs) -> Result<()> {
    let image = read_volume(&a.image)?;
    let sampling = match (a.scale, a.patch) {
        (Some(s), _) => match a.stride {
            Some(stride) => SamplingSpec::new(s.patch_size(), stride)?,
            None => s.sampling(),
        },
        (None, Some(p)) => match a.stride {
            Some(stride) => SamplingSpec::new(p, stride)?,
            None => SamplingSpec::with_half_stride(p)?,
        },
        (None, None) => return Err(Error::InvalidConfig("pass --scale or --patch".into())),
    };
    let source = if a.raw {
        image.clone()
    } else {
        normalize_intensity(&image).into_volume()
    };
    let mut patches = extract_patches(&source, &sampling)?;
    if a.balance {
        let gt = load_mask(a.gt.as_deref().expect("clap enforces --gt"))?;
        image.check_same_dims(&gt)?;
        let keep = balance_patches(&patches, &gt, a.seed);
        patches = keep.into_iter().map(|i| patches[i].clone()).collect();
    }
    provenance(
        "patches",
        &[
            format!(
                "patch = {:?} stride = {:?}",
                sampling.patch, sampling.stride
            ),
            format!(
                "normalized = {} balanced = {} seed = {}",
                !a.raw, a.balance, a.seed
            ),
        ],
    );
    let header = ManifestHeader {
        dims: image.dims(),
        spacing: image.spacing(),
        scale: a.scale,
        sampling,
    };
    write_patch_set(&a.out, &header, &patches)?;
    println!("wrote {} patches to {}", patches.len(), a.out.display());
    Ok(())
}

fn cmd_stitch(a: &StitchArgs) -> Result<()> {
    let (header, patches) = read_patch_set(&a.dir)?;
    provenance(
        "stitch",
        &[format!(
            "patches = {} grid = {:?}",
            patches.len(),
            header.dims
        )],
    );
    let map = stitch(&patches, header.dims, header.spacing)?;
    write_volume(&a.out, map.as_volume(), Dtype::F32)
}

fn cmd_split(a: &SplitArgs) -> Result<()> {
    let pred = load_prob(&a.pred)?;
    let (small, large) = match &a.gt {
        Some(gt) => split_train_with(&pred, &load_mask(gt)?, a.threshold, a.connectivity)?,
        None => split_pred_with(&pred, a.threshold, a.connectivity),
    };
    provenance(
        "split",
        &[format!(
            "mode = {} threshold = {} connectivity = {}",
            if a.gt.is_some() { "train" } else { "test" },
            a.threshold,
            a.connectivity
        )],
    );
    write_volume(&a.small, small.as_volume(), Dtype::F32)?;
    write_volume(&a.large, large.as_volume(), Dtype::F32)?;
    if let Some(path) = &a.table {
        let lab = label_components_with(&pred.binarize(), a.connectivity, a.threshold);
        let mut buf = Vec::new();
        lab.write_table(&mut buf).map_err(|e| Error::io(path, e))?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn cmd_fuse_train(a: &FuseTrainArgs) -> Result<()> {
    let cfg = a.run.resolve(|c| {
        if let Some(act) = a.activation {
            c.activation = act;
        }
    })?;
    let (_, subjects) = read_suite(&a.suite)?;
    let chosen: Vec<_> = if a.train_ids.is_empty() {
        subjects.iter().collect()
    } else {
        subjects
            .iter()
            .filter(|s| a.train_ids.contains(&s.id))
            .collect()
    };
    let sets: Vec<GroupSets> = chosen
        .iter()
        .map(|s| training_groups(&s.opinions, &s.gt, cfg.size_threshold, cfg.connectivity))
        .collect::<Result<_>>()?;
    let train_cfg: TrainConfig = cfg.train_config();
    let models = train_groups(
        &sets,
        &train_cfg,
        cfg.activation,
        cfg.size_threshold,
        cfg.connectivity,
    )?;
    provenance("fuse-train", &cfg.describe());
    println!("small weights = {:?}", models.small.weights);
    println!("large weights = {:?}", models.large.weights);
    models.save(&a.out)
}

fn cmd_fuse_apply(a: &FuseApplyArgs) -> Result<()> {
    let models = crate::pipeline::GroupModels::load(&a.model)?;
    let opinions = [load_prob(&a.x1)?, load_prob(&a.x2)?, load_prob(&a.x3)?];
    let pred = apply_groups(&opinions, &models)?;
    provenance(
        "fuse-apply",
        &[
            format!("activation = {}", models.small.activation),
            format!("small weights = {:?}", models.small.weights),
            format!("large weights = {:?}", models.large.weights),
            format!(
                "size_threshold = {} connectivity = {}",
                models.size_threshold, models.connectivity
            ),
        ],
    );
    if pred.overlap_voxels > 0 {
        eprintln!(
            "warning: small and large group outputs overlap on {} voxel(s); union taken",
            pred.overlap_voxels
        );
    }
    write_mask(&a.out, &pred.merged)
}

fn cmd_vote(a: &VoteArgs) -> Result<()> {
    let opinions = [load_prob(&a.x1)?, load_prob(&a.x2)?, load_prob(&a.x3)?];
    provenance(
        "vote",
        &["rule = at least 2 of 3 opinions >= 0.5".to_string()],
    );
    write_mask(&a.out, &majority_vote(&opinions)?)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let pred = load_mask(&a.pred)?;
    let gt = load_mask(&a.gt)?;
    let r = evaluate_with(&pred, &gt, a.connectivity)?;
    if a.json {
        println!(
            "{}",
            serde_json::to_string(&r).map_err(|e| Error::Parse(e.to_string()))?
        );
        return Ok(());
    }
    provenance(
        "eval",
        &[
            format!("connectivity = {}", a.connectivity),
            format!("hd95 = {HD95_CONVENTION}"),
        ],
    );
    println!("Dice      {:.4}", r.dice);
    println!("HD        {} mm", fmt_opt(r.hd95_mm));
    println!("AVD       {} %", fmt_opt(r.avd_pct));
    println!("Detection {} %", fmt_opt(r.detection_pct));
    println!("F1        {}", fmt_opt(r.f1));
    if !r.flags.is_empty() {
        println!("Flags     {:?}", r.flags);
    }
    Ok(())
}

fn cmd_xval(a: &XvalArgs) -> Result<()> {
    let cfg = a.run.resolve(|c| {
        if let Some(r) = a.repeats {
            c.repeats = r;
        }
    })?;
    create_dir(&a.out)?;
    let subjects = generate_suite(&cfg)?;
    let records = cross_validate(&cfg, &subjects)?;
    let rows = summarize(&records);
    let text = render_text(&rows, Some(&cfg));
    write_records(&a.out.join("records.jsonl"), &records)?;
    write_text(&a.out.join("report.txt"), &text)?;
    write_text(&a.out.join("report.jsonl"), &render_jsonl(&rows))?;
    write_text(&a.out.join("config.toml"), &cfg.to_toml_string())?;
    println!(
        "wrote report.txt, report.jsonl, records.jsonl and config.toml to {}",
        a.out.display()
    );
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let records = read_records(&a.records)?;
    let cfg = a.config.as_deref().map(RunConfig::load).transpose()?;
    let text = render_text(&summarize(&records), cfg.as_ref());
    match &a.out {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Phantom(a) => cmd_phantom(a),
        Command::Patches(a) => cmd_patches(a),
        Command::Stitch(a) => cmd_stitch(a),
        Command::Split(a) => cmd_split(a),
        Command::FuseTrain(a) => cmd_fuse_train(a),
        Command::FuseApply(a) => cmd_fuse_apply(a),
        Command::Vote(a) => cmd_vote(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Xval(a) => cmd_xval(a),
        Command::Report(a) => cmd_report(a),
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
