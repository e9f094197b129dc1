//! Seeded synthetic subjects and scale-biased opinion oracles.
//!
//! A phantom is a set of non-touching ellipsoidal lesions in a box, with the
//! lesion sizes chosen to sit clearly on either side of the small/large
//! threshold. Oracles corrupt the ground truth the way differently sized
//! networks tend to: the fine one hallucinates small false positives, the
//! coarse one misses small lesions and blurs boundaries.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::components::{label_components_with, Category, Connectivity};
use crate::error::{Error, Result};
use crate::patching::Scale;
use crate::volume::{linear_index, voxel_count, BinaryMask, Dims, ProbMap, Spacing, Volume3};

const PLACEMENT_ATTEMPTS: usize = 500;
/// Minimum Chebyshev gap, in voxels, kept between any two lesions.
const LESION_GAP: usize = 3;

/// SplitMix64 finalizer; turns `(seed, a, b)` into an independent stream seed.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn rng_for(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, a, b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub spacing: Spacing,
    /// Inclusive range for the number of small lesions.
    pub small_count: [usize; 2],
    pub large_count: [usize; 2],
    /// Semi-axis range in voxels; every small lesion stays at or below the
    /// size threshold.
    pub small_radius: [f64; 2],
    /// Semi-axis range in voxels; every large lesion exceeds the threshold.
    pub large_radius: [f64; 2],
    pub size_threshold: usize,
    pub noise_amplitude: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: [40, 48, 40],
            spacing: Spacing([1.0, 1.0, 1.0]),
            small_count: [3, 6],
            large_count: [1, 2],
            small_radius: [1.5, 3.5],
            large_radius: [7.0, 9.0],
            size_threshold: crate::components::DEFAULT_SIZE_THRESHOLD,
            noise_amplitude: 0.3,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        self.spacing.validate()?;
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        for (name, r) in [
            ("small_count", self.small_count),
            ("large_count", self.large_count),
        ] {
            if r[0] > r[1] {
                return bad(format!("{name} range {r:?} is empty"));
            }
        }
        for (name, r) in [
            ("small_radius", self.small_radius),
            ("large_radius", self.large_radius),
        ] {
            if !(r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite()) {
                return bad(format!("{name} range {r:?} is empty or non-positive"));
            }
        }
        let needed = 2.0 * self.large_radius[1].max(self.small_radius[1]) + 3.0;
        if self.dims.iter().any(|&d| (d as f64) < needed) {
            return bad(format!(
                "dims {:?} cannot hold a lesion of diameter {}",
                self.dims,
                2.0 * self.large_radius[1]
            ));
        }
        if !(self.noise_amplitude >= 0.0 && self.noise_amplitude.is_finite()) {
            return bad(format!(
                "noise amplitude {} must be >= 0",
                self.noise_amplitude
            ));
        }
        Ok(())
    }
}

/// Voxel indices of an axis-aligned ellipsoid centred at `c`.
fn rasterize_ellipsoid(dims: Dims, c: [f64; 3], axes: [f64; 3]) -> Vec<usize> {
    let lo = |a: usize| (c[a] - axes[a]).floor().max(0.0) as usize;
    let hi = |a: usize| ((c[a] + axes[a]).ceil() as usize).min(dims[a] - 1);
    let mut out = Vec::new();
    for z in lo(2)..=hi(2) {
        for y in lo(1)..=hi(1) {
            for x in lo(0)..=hi(0) {
                let q = (x as f64 - c[0]) / axes[0];
                let r = (y as f64 - c[1]) / axes[1];
                let s = (z as f64 - c[2]) / axes[2];
                if q * q + r * r + s * s <= 1.0 {
                    out.push(linear_index(dims, x, y, z));
                }
            }
        }
    }
    out
}

/// Marks every voxel within `gap` (Chebyshev) of the given voxels.
fn mark_exclusion(dims: Dims, voxels: &[usize], gap: usize, blocked: &mut [bool]) {
    for &i in voxels {
        let [x, y, z] = crate::volume::linear_coords(dims, i);
        for zz in z.saturating_sub(gap)..=(z + gap).min(dims[2] - 1) {
            for yy in y.saturating_sub(gap)..=(y + gap).min(dims[1] - 1) {
                let row = linear_index(dims, 0, yy, zz);
                let x0 = x.saturating_sub(gap);
                let x1 = (x + gap).min(dims[0] - 1);
                blocked[row + x0..=row + x1]
                    .iter_mut()
                    .for_each(|b| *b = true);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: Volume3,
    pub gt: BinaryMask,
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let dims = spec.dims;
    let mut rng = rng_for(spec.seed, 0, 0);
    let n_large = rng.gen_range(spec.large_count[0]..=spec.large_count[1]);
    let n_small = rng.gen_range(spec.small_count[0]..=spec.small_count[1]);
    let mut gt = vec![false; voxel_count(dims)];
    let mut blocked = vec![false; voxel_count(dims)];

    let plan = std::iter::repeat_n(Category::Large, n_large)
        .chain(std::iter::repeat_n(Category::Small, n_small));
    for (lesion, category) in plan.enumerate() {
        let range = match category {
            Category::Large => spec.large_radius,
            Category::Small => spec.small_radius,
        };
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let axes = [0; 3].map(|_| {
                if range[0] == range[1] {
                    range[0]
                } else {
                    rng.gen_range(range[0]..=range[1])
                }
            });
            let c = [0, 1, 2].map(|a| {
                let lo = axes[a] + 1.0;
                let hi = dims[a] as f64 - 2.0 - axes[a];
                if hi <= lo {
                    lo
                } else {
                    rng.gen_range(lo..hi)
                }
            });
            let voxels = rasterize_ellipsoid(dims, c, axes);
            if voxels.is_empty()
                || Category::by_size(voxels.len(), spec.size_threshold) != category
                || voxels.iter().any(|&i| blocked[i])
            {
                continue;
            }
            for &i in &voxels {
                gt[i] = true;
            }
            mark_exclusion(dims, &voxels, LESION_GAP, &mut blocked);
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::PlacementFailed {
                lesion,
                attempts: PLACEMENT_ATTEMPTS,
            });
        }
    }

    let gt = BinaryMask::from_bools(dims, spec.spacing, &gt)?;
    let image_data = gt
        .data()
        .iter()
        .map(|&g| g + spec.noise_amplitude * rng.gen::<f64>())
        .collect();
    let image = Volume3::new(dims, spec.spacing, image_data)?;
    Ok(Phantom { image, gt })
}

/// How a simulated network at one scale corrupts the ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub scale: Scale,
    /// Box-blur radius in voxels.
    pub blur_radius: usize,
    /// Per-voxel probability of seeding a false-positive blob.
    pub fp_rate: f64,
    /// Probability of erasing each small ground-truth lesion.
    pub small_dropout: f64,
    /// Amplitude of the uniform noise added on the lesion boundary band.
    pub jitter: f64,
    pub seed: u64,
}

impl OracleSpec {
    /// No corruption at all.
    pub fn perfect(scale: Scale) -> Self {
        OracleSpec {
            scale,
            blur_radius: 0,
            fp_rate: 0.0,
            small_dropout: 0.0,
            jitter: 0.0,
            seed: 0,
        }
    }

    /// The scale-biased defaults: false positives at the fine scale, missed
    /// small lesions at the coarse scale, boundary noise everywhere.
    pub fn biased(scale: Scale) -> Self {
        match scale {
            Scale::Fine => OracleSpec {
                scale,
                blur_radius: 0,
                fp_rate: 2.5e-4,
                small_dropout: 0.0,
                jitter: 0.8,
                seed: 0,
            },
            Scale::Mid => OracleSpec {
                scale,
                blur_radius: 1,
                fp_rate: 4e-5,
                small_dropout: 0.25,
                jitter: 0.8,
                seed: 0,
            },
            Scale::Coarse => OracleSpec {
                scale,
                blur_radius: 1,
                fp_rate: 0.0,
                small_dropout: 0.75,
                jitter: 0.8,
                seed: 0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("fp_rate", self.fp_rate),
            ("small_dropout", self.small_dropout),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!(
                    "{name} {p} must lie in [0, 1]"
                )));
            }
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "jitter {} must be >= 0",
                self.jitter
            )));
        }
        Ok(())
    }
}

/// Separable box mean with edge renormalization.
pub fn box_blur(v: &[f64], dims: Dims, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return v.to_vec();
    }
    let mut cur = v.to_vec();
    let mut line = Vec::new();
    for axis in 0..3 {
        let len = dims[axis];
        let stride = match axis {
            0 => 1,
            1 => dims[0],
            _ => dims[0] * dims[1],
        };
        let mut next = vec![0.0; cur.len()];
        for start in 0..cur.len() {
            if (start / stride) % len != 0 {
                continue;
            }
            line.clear();
            line.extend((0..len).map(|k| cur[start + k * stride]));
            for k in 0..len {
                let lo = k.saturating_sub(radius);
                let hi = (k + radius).min(len - 1);
                let sum: f64 = line[lo..=hi].iter().sum();
                next[start + k * stride] = sum / (hi - lo + 1) as f64;
            }
        }
        cur = next;
    }
    cur
}

/// Voxels whose face neighbourhood contains both foreground and background.
fn boundary_band(mask: &[bool], dims: Dims) -> Vec<usize> {
    let [nx, ny, nz] = dims;
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = linear_index(dims, x, y, z);
                let here = mask[i];
                let differs = |q: usize| mask[q] != here;
                if (x > 0 && differs(i - 1))
                    || (x + 1 < nx && differs(i + 1))
                    || (y > 0 && differs(i - nx))
                    || (y + 1 < ny && differs(i + nx))
                    || (z > 0 && differs(i - nx * ny))
                    || (z + 1 < nz && differs(i + nx * ny))
                {
                    out.push(i);
                }
            }
        }
    }
    out
}

/// A simulated opinion map for `gt`.
pub fn simulate_opinion(gt: &BinaryMask, o: &OracleSpec, size_threshold: usize) -> Result<ProbMap> {
    o.validate()?;
    let dims = gt.dims();
    let mut rng = rng_for(o.seed, 1, o.scale as u64);
    let mut values: Vec<f64> = gt.data().to_vec();

    if o.small_dropout > 0.0 {
        let lab = label_components_with(gt, Connectivity::default(), size_threshold);
        let dropped: Vec<bool> = lab
            .table
            .iter()
            .map(|r| r.category == Category::Small && rng.gen_bool(o.small_dropout))
            .collect();
        for (v, &l) in values.iter_mut().zip(&lab.labels) {
            if l != 0 && dropped[l as usize - 1] {
                *v = 0.0;
            }
        }
    }

    if o.jitter > 0.0 {
        let mask: Vec<bool> = values.iter().map(|&v| v >= 0.5).collect();
        for i in boundary_band(&mask, dims) {
            values[i] = (values[i] + o.jitter * rng.gen_range(-1.0..1.0)).clamp(0.0, 1.0);
        }
    }

    values = box_blur(&values, dims, o.blur_radius);

    if o.fp_rate > 0.0 {
        let n = values.len();
        let mut centres = Vec::new();
        for i in 0..n {
            if rng.gen_bool(o.fp_rate) {
                centres.push(i);
            }
        }
        for c in centres {
            let radius = *[1.0, 1.5, 2.0].choose(&mut rng).unwrap();
            let level: f64 = rng.gen_range(0.55..0.95);
            let [x, y, z] = crate::volume::linear_coords(dims, c);
            let centre = [x as f64, y as f64, z as f64];
            for i in rasterize_ellipsoid(dims, centre, [radius; 3]) {
                values[i] = values[i].max(level);
            }
        }
    }

    let v = Volume3::new(dims, gt.spacing(), values)?;
    Ok(ProbMap::clamped(v))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// `repeats` independent random train/test partitions of `0..n_subjects`.
pub fn mc_split(
    n_subjects: usize,
    train_fraction: f64,
    repeats: usize,
    seed: u64,
) -> Result<Vec<Split>> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidSplit(format!(
            "train fraction {train_fraction} must lie in (0, 1)"
        )));
    }
    if n_subjects < 2 {
        return Err(Error::InvalidSplit(format!(
            "need at least 2 subjects, got {n_subjects}"
        )));
    }
    let n_train = (n_subjects as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train == n_subjects {
        return Err(Error::InvalidSplit(format!(
            "{n_subjects} subjects at fraction {train_fraction} leave an empty side"
        )));
    }
    Ok((0..repeats)
        .map(|r| {
            let mut ids: Vec<usize> = (0..n_subjects).collect();
            ids.shuffle(&mut rng_for(seed, 2, r as u64));
            let mut train = ids[..n_train].to_vec();
            let mut test = ids[n_train..].to_vec();
            train.sort_unstable();
            test.sort_unstable();
            Split { train, test }
        })
        .collect())
}
