//! Sliding-window patch extraction and overlap-averaged stitching.
//!
//! Windows along each axis start at `0, s, 2s, …`; when the stride does not
//! land exactly on `length − patch`, one extra window flush with the far
//! edge is appended, so every voxel is covered without padding.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_volume, write_volume, Dtype};
use crate::volume::{linear_index, voxel_count, BinaryMask, Dims, ProbMap, Spacing, Volume3};

/// The three patch scales, ascending in size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Fine,
    Mid,
    Coarse,
}

impl Scale {
    pub const ALL: [Scale; 3] = [Scale::Fine, Scale::Mid, Scale::Coarse];

    pub fn patch_size(self) -> Dims {
        match self {
            Scale::Fine => [6, 10, 6],
            Scale::Mid => [12, 20, 12],
            Scale::Coarse => [24, 40, 24],
        }
    }

    /// Patch size with half-size strides.
    pub fn sampling(self) -> SamplingSpec {
        SamplingSpec::with_half_stride(self.patch_size()).expect("built-in scales are valid")
    }

    pub fn name(self) -> &'static str {
        match self {
            Scale::Fine => "fine",
            Scale::Mid => "mid",
            Scale::Coarse => "coarse",
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fine" => Ok(Scale::Fine),
            "mid" => Ok(Scale::Mid),
            "coarse" => Ok(Scale::Coarse),
            other => Err(Error::InvalidConfig(format!(
                "scale must be fine, mid or coarse, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub patch: Dims,
    pub stride: Dims,
}

impl SamplingSpec {
    pub fn new(patch: Dims, stride: Dims) -> Result<Self> {
        for a in 0..3 {
            if patch[a] == 0 || stride[a] == 0 || stride[a] > patch[a] {
                return Err(Error::InvalidSampling(format!(
                    "need 1 <= stride <= patch on every axis, got patch {patch:?} stride {stride:?}"
                )));
            }
        }
        Ok(SamplingSpec { patch, stride })
    }

    pub fn with_half_stride(patch: Dims) -> Result<Self> {
        SamplingSpec::new(patch, patch.map(|p| (p / 2).max(1)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub origin: [usize; 3],
    pub data: Volume3,
}

impl Patch {
    pub fn size(&self) -> Dims {
        self.data.dims()
    }
}

/// Window start offsets along one axis.
pub fn window_origins(length: usize, patch: usize, stride: usize) -> Result<Vec<usize>> {
    if patch > length {
        return Err(Error::PatchTooLarge { length, patch });
    }
    if stride == 0 || stride > patch {
        return Err(Error::InvalidSampling(format!(
            "stride {stride} must lie in 1..={patch}"
        )));
    }
    let last = length - patch;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if !last.is_multiple_of(stride) {
        out.push(last);
    }
    Ok(out)
}

fn crop(v: &Volume3, origin: [usize; 3], size: Dims) -> Volume3 {
    let dims = v.dims();
    let mut data = Vec::with_capacity(voxel_count(size));
    for z in 0..size[2] {
        for y in 0..size[1] {
            let start = linear_index(dims, origin[0], origin[1] + y, origin[2] + z);
            data.extend_from_slice(&v.data()[start..start + size[0]]);
        }
    }
    Volume3::new(size, v.spacing(), data).expect("crop of a valid volume")
}

/// Cartesian product of per-axis windows, x varying fastest.
pub fn extract_patches(v: &Volume3, spec: &SamplingSpec) -> Result<Vec<Patch>> {
    let dims = v.dims();
    let axes: Vec<Vec<usize>> = (0..3)
        .map(|a| window_origins(dims[a], spec.patch[a], spec.stride[a]))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(axes.iter().map(Vec::len).product());
    for &oz in &axes[2] {
        for &oy in &axes[1] {
            for &ox in &axes[0] {
                let origin = [ox, oy, oz];
                out.push(Patch {
                    origin,
                    data: crop(v, origin, spec.patch),
                });
            }
        }
    }
    Ok(out)
}

/// Does the window of `p` contain at least one foreground voxel of `gt`?
pub fn is_lesion_patch(p: &Patch, gt: &BinaryMask) -> bool {
    let dims = gt.dims();
    let size = p.size();
    for z in 0..size[2] {
        for y in 0..size[1] {
            let start = linear_index(dims, p.origin[0], p.origin[1] + y, p.origin[2] + z);
            if gt.data()[start..start + size[0]].iter().any(|&v| v != 0.0) {
                return true;
            }
        }
    }
    false
}

/// Keeps every lesion patch plus an equal number of randomly chosen empty
/// patches (all of them if there are not enough). Returned indices are
/// ascending.
pub fn balance_patches(patches: &[Patch], gt: &BinaryMask, seed: u64) -> Vec<usize> {
    let (lesion, empty): (Vec<usize>, Vec<usize>) =
        (0..patches.len()).partition(|&i| is_lesion_patch(&patches[i], gt));
    let take = lesion.len().min(empty.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = lesion;
    chosen.extend(
        index::sample(&mut rng, empty.len(), take)
            .into_iter()
            .map(|k| empty[k]),
    );
    chosen.sort_unstable();
    chosen
}

/// Averages overlapping patch predictions back onto the full grid.
///
/// Uses a running mean in patch-list order, which is exact whenever all
/// contributions to a voxel are equal.
pub fn stitch(preds: &[Patch], dims: Dims, spacing: Spacing) -> Result<ProbMap> {
    let n = voxel_count(dims);
    let mut mean = vec![0.0f64; n];
    let mut count = vec![0u32; n];
    for p in preds {
        let size = p.size();
        if (0..3).any(|a| p.origin[a] + size[a] > dims[a]) {
            return Err(Error::InvalidSampling(format!(
                "patch at {:?} with size {size:?} exceeds grid {dims:?}",
                p.origin
            )));
        }
        let mut k = 0;
        for z in 0..size[2] {
            for y in 0..size[1] {
                let start = linear_index(dims, p.origin[0], p.origin[1] + y, p.origin[2] + z);
                for x in 0..size[0] {
                    let i = start + x;
                    count[i] += 1;
                    mean[i] += (p.data.data()[k] - mean[i]) / count[i] as f64;
                    k += 1;
                }
            }
        }
    }
    let uncovered = count.iter().filter(|&&c| c == 0).count();
    if uncovered > 0 {
        let first = count.iter().position(|&c| c == 0).unwrap();
        return Err(Error::IncompleteCoverage {
            uncovered,
            first: crate::volume::linear_coords(dims, first),
        });
    }
    ProbMap::from_data(dims, spacing, mean)
}

/// First line of a patch manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub dims: Dims,
    pub spacing: Spacing,
    pub scale: Option<Scale>,
    pub sampling: SamplingSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub origin: [usize; 3],
    pub scale: Option<Scale>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ManifestLine {
    Header(ManifestHeader),
    Patch(PatchRecord),
}

pub const MANIFEST_NAME: &str = "manifest.jsonl";

/// Writes each patch as a V3D file and a line-delimited JSON manifest.
pub fn write_patch_set(dir: &Path, header: &ManifestHeader, patches: &[Patch]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(MANIFEST_NAME);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = BufWriter::new(file);
    let mut line = |l: &ManifestLine| -> Result<()> {
        let s = serde_json::to_string(l).map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(out, "{s}").map_err(|e| Error::io(&path, e))
    };
    line(&ManifestLine::Header(header.clone()))?;
    for (i, p) in patches.iter().enumerate() {
        let name = format!("patch_{i:05}.v3d");
        write_volume(dir.join(&name), &p.data, Dtype::F32)?;
        line(&ManifestLine::Patch(PatchRecord {
            origin: p.origin,
            scale: header.scale,
            file: name,
        }))?;
    }
    out.flush()
        .map_err(|e| Error::io(dir.join(MANIFEST_NAME), e))
}

pub fn read_patch_set(dir: &Path) -> Result<(ManifestHeader, Vec<Patch>)> {
    let path = dir.join(MANIFEST_NAME);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut header = None;
    let mut patches = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), n + 1)))?;
        match parsed {
            ManifestLine::Header(h) => header = Some(h),
            ManifestLine::Patch(rec) => patches.push(Patch {
                origin: rec.origin,
                data: read_volume(dir.join(&rec.file))?,
            }),
        }
    }
    let header =
        header.ok_or_else(|| Error::Parse(format!("{}: missing header line", path.display())))?;
    Ok((header, patches))
}
