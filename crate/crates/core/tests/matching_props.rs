mod support;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rescore::error_analysis::confidence_shares;
use rescore::matching::{
    image_targets, match_image, rescore_with_targets, target_ap_report, MatchingMode, TargetConfig, TargetMode,
};
use rescore::synth::{brute_force_best_ap, generate_dataset, SynthParams};
use rescore::{evaluate, iou, EvalParams};
use support::random_instance;

const MODES: [MatchingMode; 2] = [MatchingMode::Localization, MatchingMode::Confidence];

proptest! {
    #[test]
    fn matchings_are_valid(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for img in random_instance(&mut rng, 3, 8, 4) {
            for mode in MODES {
                let m = match_image(&img, mode);
                prop_assert!(m.is_valid(&img.dets, &img.gts));
                for &(d, g) in &m.pairs {
                    prop_assert_eq!(img.dets[d].class_idx, img.gts[g].class_idx);
                    prop_assert!(iou(&img.dets[d].bbox, &img.gts[g].bbox) >= 0.5);
                }
            }
        }
    }

    #[test]
    fn targets_are_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for img in random_instance(&mut rng, 3, 8, 4) {
            for matching in MODES {
                let iou_t = image_targets(&img, TargetConfig { matching, target: TargetMode::Iou });
                let bin_t = image_targets(&img, TargetConfig { matching, target: TargetMode::Binary });
                for (a, b) in iou_t.iter().zip(&bin_t) {
                    prop_assert!((0.0..=1.0).contains(a));
                    prop_assert!(*b == 0.0 || *b == 1.0);
                    // both modes share the matching
                    prop_assert_eq!(*a > 0.0, *b == 1.0);
                }
            }
        }
    }

    #[test]
    fn matchings_are_maximal(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for img in random_instance(&mut rng, 2, 8, 4) {
            for mode in MODES {
                let m = match_image(&img, mode);
                let dets: Vec<usize> = m.matched_dets().collect();
                let gts: Vec<usize> = m.matched_gts().collect();
                for (d, det) in img.dets.iter().enumerate().filter(|(d, _)| !dets.contains(d)) {
                    for (g, gt) in img.gts.iter().enumerate().filter(|(g, _)| !gts.contains(g)) {
                        prop_assert!(
                            det.class_idx != gt.class_idx || iou(&det.bbox, &gt.bbox) < 0.5,
                            "{mode}: det {d} and gt {g} left unpaired"
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn target_orderings_hold_in_the_mean() {
    let p = EvalParams::default();
    let cfg = |matching, target| TargetConfig { matching, target };
    let mut sums = [0.0; 4];
    for seed in 0..40 {
        let (_, imgs) = generate_dataset(&SynthParams { n_images: 10, seed, ..SynthParams::default() }).unwrap();
        let base = evaluate(&imgs, &p).ap.unwrap();
        let cb = target_ap_report(&imgs, cfg(MatchingMode::Confidence, TargetMode::Binary), &p).ap.unwrap();
        let ci = target_ap_report(&imgs, cfg(MatchingMode::Confidence, TargetMode::Iou), &p).ap.unwrap();
        let li = target_ap_report(&imgs, cfg(MatchingMode::Localization, TargetMode::Iou), &p).ap.unwrap();
        for (s, v) in sums.iter_mut().zip([base, cb, ci, li]) {
            *s += v;
        }
    }
    let [base, cb, ci, li] = sums;
    assert!(base < cb && cb <= ci && ci <= li, "{sums:?}");
}

#[test]
fn best_ordering_dominates_targets_and_baseline() {
    let small = SynthParams {
        n_images: 2,
        num_classes: 3,
        gts_per_image: (1, 2),
        duplicates_per_gt: (0, 2),
        background_fps: (0, 2),
        jitter: 0.2,
        ..SynthParams::default()
    };
    let p = EvalParams::default();
    let mut checked = 0;
    for seed in 0..150 {
        let (_, imgs) = generate_dataset(&SynthParams { seed, ..small.clone() }).unwrap();
        let Ok(best) = brute_force_best_ap(&imgs, &p) else { continue };
        let best = best.ap.unwrap();
        for matching in MODES {
            for target in [TargetMode::Iou, TargetMode::Binary] {
                let t = target_ap_report(&imgs, TargetConfig { matching, target }, &p).ap.unwrap();
                assert!(t <= best + 1e-12, "seed {seed}: {matching}/{target} {t} > {best}");
            }
        }
        assert!(evaluate(&imgs, &p).ap.unwrap() <= best + 1e-12);
        checked += 1;
    }
    assert!(checked > 100);
}

#[test]
fn targets_shrink_the_non_correct_share() {
    for seed in 0..50 {
        let (table, imgs) = generate_dataset(&SynthParams { n_images: 5, seed, ..SynthParams::default() }).unwrap();
        let before = confidence_shares(&imgs, &table);
        let after = confidence_shares(&rescore_with_targets(&imgs, TargetConfig::default()), &table);
        let has_scored_fp = before.confidence[1..].iter().any(|&c| c > 0.0);
        if has_scored_fp {
            assert!(after.non_correct_share().unwrap() < before.non_correct_share().unwrap(), "seed {seed}");
        }
    }
}
