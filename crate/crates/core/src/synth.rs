//! Synthetic detection scenes and an exhaustive best-ordering oracle.
//!
//! A scene places ground truths uniformly inside the image and emits, for
//! each of them, one or more jittered detections (possibly with a confused
//! class) plus background false positives placed away from every ground
//! truth. Scores mix the detection's IoU with its source box and uniform
//! noise, so the correlation between confidence and localization quality is
//! a parameter.

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ap::{evaluate, evaluate_class, EvalParams};
use crate::bbox::{iou, BBox};
use crate::dataset::{Category, CategoryTable, Detection, GroundTruth, ImageRecord, MAX_DETS};
use crate::error::{Error, Result};

/// Largest number of detections of one class the exhaustive search accepts.
pub const BRUTE_FORCE_LIMIT: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_images: usize,
    pub num_classes: usize,
    /// Consecutive classes sharing a supercategory.
    pub classes_per_super: usize,
    /// Inclusive range of ground truths per image.
    pub gts_per_image: (usize, usize),
    /// Inclusive range of extra detections per ground truth.
    pub duplicates_per_gt: (usize, usize),
    /// Localization noise as a fraction of box size.
    pub jitter: f64,
    pub confusion_prob: f64,
    /// Inclusive range of background false positives per image.
    pub background_fps: (usize, usize),
    /// Weight of IoU in the score; the rest is uniform noise.
    pub score_iou_weight: f64,
    /// Standard deviation of additive Gaussian score noise.
    pub score_noise: f64,
    pub image_size: (f64, f64),
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_images: 20,
            num_classes: 6,
            classes_per_super: 2,
            gts_per_image: (1, 4),
            duplicates_per_gt: (0, 2),
            jitter: 0.1,
            confusion_prob: 0.1,
            background_fps: (0, 2),
            score_iou_weight: 0.3,
            score_noise: 0.1,
            image_size: (640.0, 480.0),
            seed: 0,
        }
    }
}

impl SynthParams {
    /// Noise-free scenes: every ground truth gets exactly one exact detection.
    pub fn clean() -> Self {
        Self {
            duplicates_per_gt: (0, 0),
            jitter: 0.0,
            confusion_prob: 0.0,
            background_fps: (0, 0),
            score_noise: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        for (name, p) in [
            ("confusion probability", self.confusion_prob),
            ("score IoU weight", self.score_iou_weight),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) || !(self.score_noise >= 0.0 && self.score_noise.is_finite()) {
            return bad("jitter and score noise must be finite and non-negative");
        }
        if self.num_classes == 0 || self.classes_per_super == 0 {
            return bad("class counts must be positive");
        }
        for (name, (lo, hi)) in [
            ("ground truths per image", self.gts_per_image),
            ("duplicates per ground truth", self.duplicates_per_gt),
            ("background false positives", self.background_fps),
        ] {
            if lo > hi {
                return bad(&format!("{name}: empty range {lo}..={hi}"));
            }
        }
        let (w, h) = self.image_size;
        if !(w >= 32.0 && h >= 32.0 && w.is_finite() && h.is_finite()) {
            return bad("image size must be at least 32x32");
        }
        Ok(())
    }

    pub fn supercategory_of(&self, class_idx: usize) -> usize {
        class_idx / self.classes_per_super
    }

    pub fn category_table(&self) -> CategoryTable {
        let cats = (0..self.num_classes)
            .map(|c| Category {
                id: c as u64 + 1,
                name: format!("class{c}"),
                supercategory: format!("group{}", self.supercategory_of(c)),
            })
            .collect();
        CategoryTable::new(cats).expect("generated ids are distinct")
    }
}

fn random_box<R: Rng + ?Sized>(rng: &mut R, (iw, ih): (f64, f64)) -> BBox {
    // side lengths spread over all three area ranges
    let side = |rng: &mut R, full: f64| {
        let lo = 8.0f64.min(full / 4.0);
        let hi = (full / 2.0).max(lo + 1.0);
        (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
    };
    let w = side(rng, iw);
    let h = side(rng, ih);
    let x = rng.random::<f64>() * (iw - w);
    let y = rng.random::<f64>() * (ih - h);
    BBox::new(x, y, w, h)
}

fn jitter_box<R: Rng + ?Sized>(rng: &mut R, b: &BBox, sigma: f64) -> BBox {
    if sigma == 0.0 {
        return *b;
    }
    let n = Normal::new(0.0, sigma).expect("sigma is finite");
    let w = (b.w * (1.0 + n.sample(rng))).max(1.0);
    let h = (b.h * (1.0 + n.sample(rng))).max(1.0);
    let cx = b.x + b.w / 2.0 + b.w * n.sample(rng);
    let cy = b.y + b.h / 2.0 + b.h * n.sample(rng);
    BBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
}

fn confused_class<R: Rng + ?Sized>(rng: &mut R, params: &SynthParams, c: usize) -> usize {
    let k = params.num_classes;
    if k < 2 {
        return c;
    }
    let group = params.supercategory_of(c);
    let siblings: Vec<usize> = (0..k)
        .filter(|&o| o != c && params.supercategory_of(o) == group)
        .collect();
    if !siblings.is_empty() && rng.random::<bool>() {
        return siblings[rng.random_range(0..siblings.len())];
    }
    let o = rng.random_range(0..k - 1);
    if o >= c {
        o + 1
    } else {
        o
    }
}

fn draw_score<R: Rng + ?Sized>(rng: &mut R, params: &SynthParams, quality: f64) -> f64 {
    let w = params.score_iou_weight;
    let mut s = w * quality + (1.0 - w) * rng.random::<f64>();
    if params.score_noise > 0.0 {
        s += Normal::new(0.0, params.score_noise).expect("finite").sample(rng);
    }
    s.clamp(0.0, 1.0)
}

/// One image with ground truths and noisy detections, capped and numbered
/// the same way loaded detections are.
pub fn generate_scene<R: Rng + ?Sized>(params: &SynthParams, image_id: u64, rng: &mut R) -> ImageRecord {
    let (iw, ih) = params.image_size;
    let mut img = ImageRecord::new(image_id, iw, ih);
    let n_gts = rng.random_range(params.gts_per_image.0..=params.gts_per_image.1);
    for gt_id in 0..n_gts {
        img.gts.push(GroundTruth {
            bbox: random_box(rng, params.image_size),
            class_idx: rng.random_range(0..params.num_classes),
            gt_id,
        });
    }
    let mut dets = Vec::new();
    for g in &img.gts {
        let copies = 1 + rng.random_range(params.duplicates_per_gt.0..=params.duplicates_per_gt.1);
        for _ in 0..copies {
            let bbox = jitter_box(rng, &g.bbox, params.jitter);
            let confused = rng.random::<f64>() < params.confusion_prob;
            let class_idx = if confused {
                confused_class(rng, params, g.class_idx)
            } else {
                g.class_idx
            };
            let score = draw_score(rng, params, iou(&bbox, &g.bbox));
            dets.push((bbox, class_idx, score));
        }
    }
    let n_fp = rng.random_range(params.background_fps.0..=params.background_fps.1);
    for _ in 0..n_fp {
        let mut bbox = random_box(rng, params.image_size);
        for _ in 0..20 {
            if img.gts.iter().all(|g| iou(&bbox, &g.bbox) < 0.1) {
                break;
            }
            bbox = random_box(rng, params.image_size);
        }
        let class_idx = rng.random_range(0..params.num_classes);
        let score = draw_score(rng, params, 0.0);
        dets.push((bbox, class_idx, score));
    }
    img.dets = dets
        .into_iter()
        .enumerate()
        .map(|(det_id, (bbox, class_idx, score))| Detection {
            bbox,
            class_idx,
            score,
            det_id,
        })
        .collect();
    img.cap_detections(MAX_DETS);
    img
}

/// A full dataset seeded from `params.seed`; image ids start at 1.
pub fn generate_dataset(params: &SynthParams) -> Result<(CategoryTable, Vec<ImageRecord>)> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let images = (0..params.n_images)
        .map(|i| generate_scene(params, i as u64 + 1, &mut rng))
        .collect();
    Ok((params.category_table(), images))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestAp {
    /// None when the instance has no ground truth.
    pub ap: Option<f64>,
    /// The instance rescored with an optimal ordering.
    pub images: Vec<ImageRecord>,
    /// Mean over thresholds of each class's best AP.
    pub per_class: Vec<Option<f64>>,
}

fn class_only(images: &[ImageRecord], c: usize) -> Vec<ImageRecord> {
    images
        .iter()
        .map(|img| ImageRecord {
            gts: img.gts.iter().filter(|g| g.class_idx == c).cloned().collect(),
            dets: img.dets.iter().filter(|d| d.class_idx == c).cloned().collect(),
            ..ImageRecord::new(img.image_id, img.width, img.height)
        })
        .collect()
}

fn mean_over_thresholds(values: &[Option<f64>]) -> Option<f64> {
    let mut sum = 0.0;
    for v in values {
        sum += (*v)?;
    }
    Some(sum / values.len() as f64)
}

/// Best AP over all strict score orderings, searched per class.
///
/// Each candidate ordering assigns distinct rank-descending scores
/// `(n - rank) / n` to the class's detections. The chosen orderings are
/// combined and evaluated once more as a whole.
pub fn brute_force_best_ap(images: &[ImageRecord], params: &EvalParams) -> Result<BestAp> {
    params.validate()?;
    let n_cls = images
        .iter()
        .flat_map(|img| img.gts.iter().map(|g| g.class_idx).chain(img.dets.iter().map(|d| d.class_idx)))
        .max()
        .map_or(0, |m| m + 1);
    let mut locations: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_cls];
    for (i, img) in images.iter().enumerate() {
        for (j, d) in img.dets.iter().enumerate() {
            locations[d.class_idx].push((i, j));
        }
    }
    for (c, locs) in locations.iter().enumerate() {
        if locs.len() > BRUTE_FORCE_LIMIT {
            return Err(Error::InstanceTooLarge {
                class_idx: c,
                count: locs.len(),
                limit: BRUTE_FORCE_LIMIT,
            });
        }
    }

    let best: Vec<(Option<f64>, Vec<usize>)> = (0..n_cls)
        .into_par_iter()
        .map(|c| {
            let locs = &locations[c];
            let mut sub = class_only(images, c);
            let n = locs.len();
            // position of each location inside its class-only image
            let sub_idx: Vec<(usize, usize)> = locs
                .iter()
                .map(|&(i, j)| {
                    let k = images[i].dets[..j].iter().filter(|d| d.class_idx == c).count();
                    (i, k)
                })
                .collect();
            let mut best: (Option<f64>, Vec<usize>) = (None, (0..n).collect());
            for perm in (0..n).permutations(n) {
                for (rank, &loc) in perm.iter().enumerate() {
                    let (i, k) = sub_idx[loc];
                    sub[i].dets[k].score = (n - rank) as f64 / n as f64;
                }
                let ap = mean_over_thresholds(&evaluate_class(&sub, c, params, 0));
                if best.0.is_none() || ap > best.0 {
                    best = (ap, perm);
                }
            }
            if n == 0 {
                best.0 = mean_over_thresholds(&evaluate_class(&sub, c, params, 0));
            }
            best
        })
        .collect();

    let mut out = images.to_vec();
    for (c, (_, perm)) in best.iter().enumerate() {
        let n = perm.len();
        for (rank, &loc) in perm.iter().enumerate() {
            let (i, j) = locations[c][loc];
            out[i].dets[j].score = (n - rank) as f64 / n as f64;
        }
    }
    let ap = evaluate(&out, params).ap;
    Ok(BestAp {
        ap,
        images: out,
        per_class: best.into_iter().map(|(v, _)| v).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error_analysis::{confidence_shares, ErrorCategory};
    use crate::matching::{target_ap_report, TargetConfig};

    fn single(dets: &[(BBox, f64)], gt: BBox) -> Vec<ImageRecord> {
        let mut img = ImageRecord::new(1, 200.0, 200.0);
        img.gts.push(GroundTruth { bbox: gt, class_idx: 0, gt_id: 0 });
        for (i, &(bbox, score)) in dets.iter().enumerate() {
            img.dets.push(Detection { bbox, class_idx: 0, score, det_id: i });
        }
        vec![img]
    }

    #[test]
    fn clean_scenes_score_perfectly() {
        let p = SynthParams { n_images: 10, ..SynthParams::clean() };
        let (_, imgs) = generate_dataset(&p).unwrap();
        for img in &imgs {
            assert_eq!(img.dets.len(), img.gts.len());
        }
        let params = EvalParams::default();
        assert_eq!(evaluate(&imgs, &params).ap, Some(1.0));
        assert_eq!(target_ap_report(&imgs, TargetConfig::default(), &params).ap, Some(1.0));
    }

    #[test]
    fn same_seed_same_scene() {
        let p = SynthParams::default();
        assert_eq!(generate_dataset(&p).unwrap().1, generate_dataset(&p).unwrap().1);
        let q = SynthParams { seed: 1, ..p.clone() };
        assert_ne!(generate_dataset(&p).unwrap().1, generate_dataset(&q).unwrap().1);
    }

    #[test]
    fn duplicates_produce_localization_errors() {
        let p = SynthParams {
            n_images: 20,
            duplicates_per_gt: (1, 1),
            jitter: 0.15,
            confusion_prob: 0.0,
            background_fps: (0, 0),
            ..SynthParams::default()
        };
        let (table, imgs) = generate_dataset(&p).unwrap();
        let shares = confidence_shares(&imgs, &table);
        assert!(shares.share(ErrorCategory::Localization).unwrap() > 0.0);
    }

    #[test]
    fn scene_invariants() {
        let p = SynthParams { n_images: 30, ..SynthParams::default() };
        let (table, imgs) = generate_dataset(&p).unwrap();
        assert_eq!(table.len(), p.num_classes);
        assert_eq!(table.supercategory(0), table.supercategory(1));
        assert_ne!(table.supercategory(1), table.supercategory(2));
        for img in &imgs {
            assert!((1..=4).contains(&img.gts.len()));
            for (i, d) in img.dets.iter().enumerate() {
                assert_eq!(d.det_id, i);
                assert!((0.0..=1.0).contains(&d.score));
                assert!(d.class_idx < p.num_classes && d.bbox.w > 0.0 && d.bbox.h > 0.0);
            }
            assert!(img.dets.windows(2).all(|w| w[0].score >= w[1].score));
        }
    }

    #[test]
    fn invalid_params() {
        let p = SynthParams { confusion_prob: 1.2, ..SynthParams::default() };
        assert!(generate_dataset(&p).is_err());
        let p = SynthParams { jitter: -0.1, ..SynthParams::default() };
        assert!(p.validate().is_err());
        let p = SynthParams { gts_per_image: (3, 1), ..SynthParams::default() };
        assert!(p.validate().is_err());
    }

    #[test]
    fn single_detection_best_is_fixed() {
        let gt = BBox::new(0.0, 0.0, 100.0, 100.0);
        let det = BBox::new(0.0, 0.0, 100.0, 80.0);
        let best = brute_force_best_ap(&single(&[(det, 0.3)], gt), &EvalParams::default()).unwrap();
        assert!((best.ap.unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(best.per_class.len(), 1);
    }

    #[test]
    fn best_ranks_better_localized_first() {
        let gt = BBox::new(0.0, 0.0, 100.0, 100.0);
        let d1 = BBox::new(0.0, 0.0, 100.0, 92.0);
        let d2 = BBox::new(0.0, 0.0, 100.0, 60.0);
        let imgs = single(&[(d1, 0.2), (d2, 0.9)], gt);
        let params = EvalParams::default();
        let best = brute_force_best_ap(&imgs, &params).unwrap();
        let dets = &best.images[0].dets;
        assert!(dets[0].score > dets[1].score);
        let target = target_ap_report(&imgs, TargetConfig::default(), &params).ap.unwrap();
        assert!((best.ap.unwrap() - target).abs() < 1e-12);
        assert!(best.ap.unwrap() > evaluate(&imgs, &params).ap.unwrap());
    }

    #[test]
    fn zero_detections() {
        let gt = BBox::new(0.0, 0.0, 10.0, 10.0);
        let best = brute_force_best_ap(&single(&[], gt), &EvalParams::default()).unwrap();
        assert_eq!(best.ap, Some(0.0));
        let empty = brute_force_best_ap(&[], &EvalParams::default()).unwrap();
        assert_eq!(empty.ap, None);
    }

    #[test]
    fn refuses_large_instances() {
        let gt = BBox::new(0.0, 0.0, 10.0, 10.0);
        let dets: Vec<(BBox, f64)> = (0..9).map(|i| (gt.translate(i as f64, 0.0), 0.5)).collect();
        let err = brute_force_best_ap(&single(&dets, gt), &EvalParams::default()).unwrap_err();
        assert!(matches!(err, Error::InstanceTooLarge { count: 9, limit: 8, .. }));
    }

    #[test]
    fn best_dominates_baseline_and_targets() {
        let p = SynthParams {
            n_images: 2,
            num_classes: 2,
            gts_per_image: (1, 2),
            duplicates_per_gt: (0, 1),
            background_fps: (0, 1),
            ..SynthParams::default()
        };
        let params = EvalParams::default();
        for seed in 0..20 {
            let (_, imgs) = generate_dataset(&SynthParams { seed, ..p.clone() }).unwrap();
            let Ok(best) = brute_force_best_ap(&imgs, &params) else { continue };
            let Some(best_ap) = best.ap else { continue };
            let base = evaluate(&imgs, &params).ap.unwrap();
            let target = target_ap_report(&imgs, TargetConfig::default(), &params).ap.unwrap();
            assert!(base <= best_ap + 1e-12, "seed {seed}");
            assert!(target <= best_ap + 1e-12, "seed {seed}");
        }
    }
}
