//! Rescoring targets built from ground truth.
//!
//! A single detection-to-ground-truth matching is built per image, then each
//! detection gets a target confidence: its IoU with the matched ground truth
//! (or 1 in binary mode) when matched, 0 otherwise. Two matchers are
//! provided. [`greedy_match_by_overlap`] sweeps IoU thresholds from 0.95 down
//! to 0.5 and lets each ground truth claim its best-overlapping unmatched
//! detection, so better-localized detections win over more confident ones.
//! [`greedy_match_by_confidence`] walks detections by descending score the
//! way AP matching does, with a fixed 0.5 IoU floor.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ap::{evaluate, ApReport, EvalParams};
use crate::bbox::iou;
use crate::dataset::{Detection, GroundTruth, ImageRecord};

/// IoU floor for confidence-prioritized matching.
pub const CONFIDENCE_MATCH_FLOOR: f64 = 0.5;

/// Thresholds swept by the overlap matcher, highest first.
pub fn overlap_sweep() -> Vec<f64> {
    (0..10).map(|i| (95 - 5 * i) as f64 / 100.0).collect()
}

/// Pairs of (detection index, ground-truth index) within one image.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
}

impl Matching {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn gt_for(&self, det: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == det).map(|p| p.1)
    }

    pub fn matched_dets(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs.iter().map(|p| p.0)
    }

    pub fn matched_gts(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs.iter().map(|p| p.1)
    }

    /// Each detection and ground truth at most once, every pair same-class.
    pub fn is_valid(&self, dets: &[Detection], gts: &[GroundTruth]) -> bool {
        let mut seen_d = vec![false; dets.len()];
        let mut seen_g = vec![false; gts.len()];
        for &(d, g) in &self.pairs {
            if d >= dets.len() || g >= gts.len() || seen_d[d] || seen_g[g] {
                return false;
            }
            if dets[d].class_idx != gts[g].class_idx {
                return false;
            }
            seen_d[d] = true;
            seen_g[g] = true;
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchingMode {
    Localization,
    Confidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    Iou,
    Binary,
}

impl FromStr for MatchingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "localization" => Ok(Self::Localization),
            "confidence" => Ok(Self::Confidence),
            other => Err(format!("unknown matching mode `{other}`")),
        }
    }
}

impl FromStr for TargetMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "iou" => Ok(Self::Iou),
            "binary" => Ok(Self::Binary),
            other => Err(format!("unknown target mode `{other}`")),
        }
    }
}

impl fmt::Display for MatchingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Localization => "localization",
            Self::Confidence => "confidence",
        })
    }
}

impl fmt::Display for TargetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Iou => "iou",
            Self::Binary => "binary",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetConfig {
    pub matching: MatchingMode,
    pub target: TargetMode,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            matching: MatchingMode::Localization,
            target: TargetMode::Iou,
        }
    }
}

fn iou_matrix(dets: &[Detection], gts: &[GroundTruth]) -> Vec<Vec<f64>> {
    dets.iter()
        .map(|d| gts.iter().map(|g| iou(&d.bbox, &g.bbox)).collect())
        .collect()
}

/// IoU-prioritized greedy matching.
///
/// Ground truth is visited in input order at each threshold; IoU ties go to
/// the lower `det_id`.
pub fn greedy_match_by_overlap(dets: &[Detection], gts: &[GroundTruth]) -> Matching {
    let ious = iou_matrix(dets, gts);
    let mut det_taken = vec![false; dets.len()];
    let mut gt_taken = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for t in overlap_sweep() {
        for (g, gt) in gts.iter().enumerate() {
            if gt_taken[g] {
                continue;
            }
            let mut best: Option<usize> = None;
            for (d, det) in dets.iter().enumerate() {
                if det_taken[d] || det.class_idx != gt.class_idx || ious[d][g] < t {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some(b) => {
                        ious[d][g] > ious[b][g]
                            || (ious[d][g] == ious[b][g] && det.det_id < dets[b].det_id)
                    }
                };
                if better {
                    best = Some(d);
                }
            }
            if let Some(d) = best {
                det_taken[d] = true;
                gt_taken[g] = true;
                pairs.push((d, g));
            }
        }
    }
    Matching { pairs }
}

/// Confidence-prioritized greedy matching with a 0.5 IoU floor.
pub fn greedy_match_by_confidence(dets: &[Detection], gts: &[GroundTruth]) -> Matching {
    let ious = iou_matrix(dets, gts);
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .total_cmp(&dets[a].score)
            .then(dets[a].det_id.cmp(&dets[b].det_id))
    });
    let mut gt_taken = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for d in order {
        let mut best: Option<usize> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_taken[g] || gt.class_idx != dets[d].class_idx || ious[d][g] < CONFIDENCE_MATCH_FLOOR {
                continue;
            }
            if best.is_none_or(|b| ious[d][g] > ious[d][b]) {
                best = Some(g);
            }
        }
        if let Some(g) = best {
            gt_taken[g] = true;
            pairs.push((d, g));
        }
    }
    Matching { pairs }
}

pub fn match_image(image: &ImageRecord, mode: MatchingMode) -> Matching {
    match mode {
        MatchingMode::Localization => greedy_match_by_overlap(&image.dets, &image.gts),
        MatchingMode::Confidence => greedy_match_by_confidence(&image.dets, &image.gts),
    }
}

/// Target confidence per detection, aligned with `dets`.
pub fn assign_targets(
    dets: &[Detection],
    gts: &[GroundTruth],
    matching: &Matching,
    mode: TargetMode,
) -> Vec<f64> {
    let mut targets = vec![0.0; dets.len()];
    for &(d, g) in &matching.pairs {
        targets[d] = match mode {
            TargetMode::Iou => iou(&dets[d].bbox, &gts[g].bbox),
            TargetMode::Binary => 1.0,
        };
    }
    targets
}

pub fn image_targets(image: &ImageRecord, config: TargetConfig) -> Vec<f64> {
    let m = match_image(image, config.matching);
    assign_targets(&image.dets, &image.gts, &m, config.target)
}

/// Copies of `images` whose detection scores are replaced by their targets.
pub fn rescore_with_targets(images: &[ImageRecord], config: TargetConfig) -> Vec<ImageRecord> {
    images
        .iter()
        .map(|img| {
            let targets = image_targets(img, config);
            let mut out = img.clone();
            for (d, t) in out.dets.iter_mut().zip(targets) {
                d.score = t;
            }
            out
        })
        .collect()
}

/// AP reached when every detection is rescored with its target.
pub fn target_ap_report(images: &[ImageRecord], config: TargetConfig, params: &EvalParams) -> ApReport {
    evaluate(&rescore_with_targets(images, config), params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bbox::BBox;

    fn det(b: BBox, class_idx: usize, score: f64, det_id: usize) -> Detection {
        Detection { bbox: b, class_idx, score, det_id }
    }

    fn gt(b: BBox, class_idx: usize, gt_id: usize) -> GroundTruth {
        GroundTruth { bbox: b, class_idx, gt_id }
    }

    /// d1 well localized (IoU 0.92) but unconfident, d2 confident (IoU 0.60).
    fn localization_vs_confidence() -> (Vec<Detection>, Vec<GroundTruth>) {
        let g = BBox::new(0.0, 0.0, 100.0, 100.0);
        let dets = vec![
            det(BBox::new(0.0, 0.0, 100.0, 92.0), 0, 0.3, 0),
            det(BBox::new(0.0, 0.0, 100.0, 60.0), 0, 0.95, 1),
        ];
        (dets, vec![gt(g, 0, 0)])
    }

    #[test]
    fn overlap_prefers_localization() {
        let (dets, gts) = localization_vs_confidence();
        assert!((iou(&dets[0].bbox, &gts[0].bbox) - 0.92).abs() < 1e-12);
        let m = greedy_match_by_overlap(&dets, &gts);
        assert_eq!(m.pairs, vec![(0, 0)]);
    }

    #[test]
    fn confidence_prefers_score() {
        let (dets, gts) = localization_vs_confidence();
        let m = greedy_match_by_confidence(&dets, &gts);
        assert_eq!(m.pairs, vec![(1, 0)]);
    }

    #[test]
    fn no_detections() {
        let (_, gts) = localization_vs_confidence();
        assert!(greedy_match_by_overlap(&[], &gts).is_empty());
        assert!(greedy_match_by_confidence(&[], &gts).is_empty());
    }

    #[test]
    fn first_gt_claims_at_higher_threshold() {
        // det overlaps g1 with IoU 0.80 and g2 with IoU 0.75
        let d = det(BBox::new(0.0, 0.0, 100.0, 100.0), 0, 0.5, 0);
        let g1 = gt(BBox::new(0.0, 0.0, 100.0, 80.0), 0, 0);
        let g2 = gt(BBox::new(0.0, 0.0, 100.0, 75.0), 0, 1);
        let gts = vec![g2, g1];
        let m = greedy_match_by_overlap(&[d], &gts);
        assert_eq!(m.pairs, vec![(0, 1)]);
    }

    #[test]
    fn confidence_floor() {
        let g = gt(BBox::new(0.0, 0.0, 100.0, 100.0), 0, 0);
        let d = det(BBox::new(0.0, 0.0, 100.0, 40.0), 0, 0.9, 0);
        assert!(greedy_match_by_confidence(std::slice::from_ref(&d), std::slice::from_ref(&g)).is_empty());
        // the overlap matcher never goes below 0.5 either
        assert!(greedy_match_by_overlap(&[d], &[g]).is_empty());
    }

    #[test]
    fn clear_match_under_both() {
        let g = gt(BBox::new(0.0, 0.0, 100.0, 100.0), 0, 0);
        let d = det(BBox::new(0.0, 0.0, 100.0, 90.0), 0, 0.7, 0);
        assert_eq!(greedy_match_by_overlap(std::slice::from_ref(&d), std::slice::from_ref(&g)).pairs, vec![(0, 0)]);
        assert_eq!(greedy_match_by_confidence(&[d], &[g]).pairs, vec![(0, 0)]);
    }

    #[test]
    fn class_must_agree() {
        let g = gt(BBox::new(0.0, 0.0, 100.0, 100.0), 1, 0);
        let d = det(BBox::new(0.0, 0.0, 100.0, 100.0), 0, 0.7, 0);
        assert!(greedy_match_by_overlap(std::slice::from_ref(&d), std::slice::from_ref(&g)).is_empty());
        assert!(greedy_match_by_confidence(&[d], &[g]).is_empty());
    }

    #[test]
    fn targets_per_mode() {
        let (dets, gts) = localization_vs_confidence();
        let m = greedy_match_by_overlap(&dets, &gts);
        let t = assign_targets(&dets, &gts, &m, TargetMode::Iou);
        assert!((t[0] - 0.92).abs() < 1e-12);
        assert_eq!(t[1], 0.0);
        let t = assign_targets(&dets, &gts, &m, TargetMode::Binary);
        assert_eq!(t, vec![1.0, 0.0]);
    }

    #[test]
    fn target_ap_beats_misordered_baseline() {
        let (dets, gts) = localization_vs_confidence();
        let mut img = ImageRecord::new(1, 640.0, 480.0);
        img.dets = dets;
        img.gts = gts;
        let params = EvalParams::default();
        let base = evaluate(std::slice::from_ref(&img), &params).ap.unwrap();
        let target = target_ap_report(&[img], TargetConfig::default(), &params).ap.unwrap();
        assert!(target > base, "{target} vs {base}");
        assert!((target - 0.9).abs() < 1e-12);
    }

    #[test]
    fn parse_modes() {
        assert_eq!("localization".parse::<MatchingMode>().unwrap(), MatchingMode::Localization);
        assert_eq!("binary".parse::<TargetMode>().unwrap(), TargetMode::Binary);
        assert!("x".parse::<TargetMode>().is_err());
    }
}
