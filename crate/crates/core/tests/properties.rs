//! Cross-module invariants checked on random inputs.

mod common;

use proptest::prelude::*;

use sinfuse::activation::{sinact, ActivationKind};
use sinfuse::components::{label_components, split_pred};
use sinfuse::dice::{dsc, soft_dice};
use sinfuse::ensemble::{
    fuse, train_ensemble, EnsembleModel, OpinionSet, TrainConfig, INITIAL_WEIGHT,
};
use sinfuse::metrics::{evaluate, hd95};
use sinfuse::patching::{
    balance_patches, extract_patches, is_lesion_patch, stitch, window_origins, SamplingSpec,
};
use sinfuse::volume::{BinaryMask, ProbMap, Spacing};

fn mask_strategy(max: usize) -> impl Strategy<Value = BinaryMask> {
    (1..=max, 1..=max, 1..=max)
        .prop_flat_map(|(x, y, z)| {
            (
                Just([x, y, z]),
                prop::collection::vec(prop::bool::weighted(0.35), x * y * z),
            )
        })
        .prop_map(|(dims, bits)| BinaryMask::from_bools(dims, Spacing::ISOTROPIC, &bits).unwrap())
}

fn nonempty_pair(max: usize) -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (2..=max, 2..=max, 2..=max)
        .prop_flat_map(|(x, y, z)| {
            let n = x * y * z;
            (
                Just([x, y, z]),
                prop::collection::vec(any::<bool>(), n),
                prop::collection::vec(any::<bool>(), n),
                0..n,
            )
        })
        .prop_map(|(dims, mut a, mut b, k)| {
            a[k] = true;
            b[(k * 7) % a.len()] = true;
            (
                BinaryMask::from_bools(dims, Spacing::ISOTROPIC, &a).unwrap(),
                BinaryMask::from_bools(dims, Spacing::ISOTROPIC, &b).unwrap(),
            )
        })
}

fn flip_x(m: &BinaryMask) -> BinaryMask {
    let [nx, _, _] = m.dims();
    BinaryMask::from_fn(m.dims(), m.spacing(), |x, y, z| {
        m.is_set(m.index(nx - 1 - x, y, z))
    })
    .unwrap()
}

fn random_opinions(dims: [usize; 3], seed: u64) -> OpinionSet {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = dims.iter().product::<usize>();
    let mut prob = || {
        ProbMap::from_data(
            dims,
            Spacing::ISOTROPIC,
            (0..n).map(|_| rng.gen::<f64>()).collect(),
        )
        .unwrap()
    };
    let opinions = [prob(), prob(), prob()];
    let gt = opinions[1].binarize();
    OpinionSet::new(opinions, gt).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn windows_cover_the_axis(patch in 1usize..30, extra in 0usize..60, stride in 1usize..30) {
        prop_assume!(stride <= patch);
        let length = patch + extra;
        let origins = window_origins(length, patch, stride).unwrap();
        let mut covered = vec![false; length];
        for o in &origins {
            prop_assert!(o + patch <= length);
            covered[*o..o + patch].iter_mut().for_each(|c| *c = true);
        }
        prop_assert!(covered.iter().all(|&c| c));
    }

    #[test]
    fn stitch_inverts_extract(
        dims in (4usize..14, 4usize..14, 4usize..14),
        patch in (1usize..5, 1usize..5, 1usize..5),
        seed in any::<u64>(),
    ) {
        let dims = [dims.0, dims.1, dims.2];
        let patch = [patch.0, patch.1, patch.2];
        let stride = patch.map(|p| p.div_ceil(2));
        let spec = SamplingSpec::new(patch, stride).unwrap();
        let o = random_opinions(dims, seed);
        let p = &o.opinions[0];
        let back = stitch(&extract_patches(p, &spec).unwrap(), dims, p.spacing()).unwrap();
        prop_assert_eq!(back.data(), p.data());
    }

    #[test]
    fn balancing_keeps_every_lesion_patch(gt in mask_strategy(12), seed in any::<u64>()) {
        let spec = SamplingSpec::with_half_stride(gt.dims().map(|d| d.min(4))).unwrap();
        let patches = extract_patches(gt.as_volume(), &spec).unwrap();
        let kept = balance_patches(&patches, &gt, seed);
        for (i, p) in patches.iter().enumerate() {
            if is_lesion_patch(p, &gt) {
                prop_assert!(kept.contains(&i));
            }
        }
    }

    #[test]
    fn dice_is_bounded_symmetric_and_soft_on_binary((s, r) in nonempty_pair(8)) {
        let d = dsc(&s, &r).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, dsc(&r, &s).unwrap());
        prop_assert_eq!(soft_dice(&s.to_prob(), &r).unwrap(), d);
    }

    #[test]
    fn component_counts_partition_the_mask(m in mask_strategy(12)) {
        let lab = label_components(&m);
        let total: usize = lab.table.iter().map(|c| c.voxel_count).sum();
        prop_assert_eq!(total, m.count());
    }

    #[test]
    fn split_pred_partitions_the_support(seed in any::<u64>(), threshold in 1usize..40) {
        let o = random_opinions([9, 8, 7], seed);
        let p = &o.opinions[0];
        let (small, large) = split_pred(p, threshold);
        for i in 0..p.len() {
            let v = p.data()[i];
            let (a, b) = (small.data()[i], large.data()[i]);
            if v >= 0.5 {
                prop_assert!((a == v && b == 0.0) || (a == 0.0 && b == v));
            } else {
                prop_assert!(a == 0.0 && b == 0.0);
            }
        }
    }

    #[test]
    fn hd95_is_symmetric_and_axis_consistent((s, r) in nonempty_pair(9)) {
        let d = hd95(&s, &r).unwrap();
        prop_assert_eq!(d, hd95(&r, &s).unwrap());
        prop_assert!((d - common::brute_hd95(&s, &r)).abs() <= 1e-9);
        let (fs, fr) = (flip_x(&s), flip_x(&r));
        prop_assert!((hd95(&fs, &fr).unwrap() - d).abs() <= 1e-9);
        let (a, b) = (evaluate(&s, &r).unwrap(), evaluate(&fs, &fr).unwrap());
        prop_assert_eq!(a.dice, b.dice);
        prop_assert_eq!(a.avd_pct, b.avd_pct);
        prop_assert_eq!(a.detection_pct, b.detection_pct);
        prop_assert_eq!(a.f1, b.f1);
    }

    #[test]
    fn perfect_self_evaluation(s in mask_strategy(10)) {
        prop_assume!(s.count() > 0);
        let r = evaluate(&s, &s).unwrap();
        prop_assert_eq!(
            (r.dice, r.hd95_mm, r.avd_pct, r.detection_pct, r.f1),
            (1.0, Some(0.0), Some(0.0), Some(100.0), Some(1.0))
        );
    }

    #[test]
    fn sinact_fusion_stays_in_range_and_sharpens(v in 0.0f64..=1.0, w in prop::array::uniform3(-2.0f64..2.0)) {
        let dims = [2, 2, 2];
        let flat = ProbMap::filled(dims, Spacing::ISOTROPIC, v).unwrap();
        let gt = flat.binarize();
        let set = OpinionSet::new([flat.clone(), flat.clone(), flat], gt).unwrap();
        let any = fuse(&set, &EnsembleModel { weights: w, activation: ActivationKind::SinAct }).unwrap();
        prop_assert!(any.data().iter().all(|x| (0.0..=1.0).contains(x)));
        let equal = fuse(&set, &EnsembleModel::initial(ActivationKind::SinAct)).unwrap();
        let z = INITIAL_WEIGHT * v + INITIAL_WEIGHT * v + INITIAL_WEIGHT * v;
        prop_assert_eq!(equal.data()[0], sinact(z));
        prop_assert!((sinact(v) - 0.5).abs() >= (v - 0.5).abs() - 1e-15);
    }
}

#[test]
fn training_is_deterministic_and_permutation_equivariant() {
    let data: Vec<OpinionSet> = (0..6).map(|s| random_opinions([7, 6, 5], s)).collect();
    let cfg = TrainConfig::default();
    for kind in [ActivationKind::Sigmoid, ActivationKind::SinAct] {
        let a = train_ensemble(&data, &cfg, kind).unwrap();
        let b = train_ensemble(&data, &cfg, kind).unwrap();
        assert_eq!(a, b);
        let swapped: Vec<OpinionSet> = data.iter().map(|o| o.permuted([1, 0, 2])).collect();
        let c = train_ensemble(&swapped, &cfg, kind).unwrap();
        let [w1, w2, w3] = a.model.weights;
        assert_eq!(c.model.weights, [w2, w1, w3], "{kind}");
    }
}
