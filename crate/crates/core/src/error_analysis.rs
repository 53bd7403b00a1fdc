//! Breakdown of detections into error categories, weighted by confidence.
//!
//! Detections are visited by descending confidence and paired with the
//! ground truth of highest IoU regardless of class. A same-class pair at
//! IoU >= 0.5 is correct the first time a ground truth is claimed; later
//! ones are duplicates and count as localization errors.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bbox::iou;
use crate::dataset::{CategoryTable, ImageRecord};

pub const CORRECT_IOU: f64 = 0.5;
pub const CONFUSION_IOU: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    Correct,
    Localization,
    SimilarClass,
    DissimilarClass,
    Background,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 5] = [
        Self::Correct,
        Self::Localization,
        Self::SimilarClass,
        Self::DissimilarClass,
        Self::Background,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Correct => "correct",
            Self::Localization => "localization",
            Self::SimilarClass => "similar_class",
            Self::DissimilarClass => "dissimilar_class",
            Self::Background => "background",
        }
    }
}

/// Category per detection, aligned with `image.dets`.
pub fn classify_detections(image: &ImageRecord, table: &CategoryTable) -> Vec<ErrorCategory> {
    let mut claimed = vec![false; image.gts.len()];
    let mut out = vec![ErrorCategory::Background; image.dets.len()];
    for d in image.ranked_detections() {
        let det = &image.dets[d];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in image.gts.iter().enumerate() {
            let v = iou(&det.bbox, &gt.bbox);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        out[d] = match best {
            Some((_, v)) if v < CONFUSION_IOU => ErrorCategory::Background,
            None => ErrorCategory::Background,
            Some((g, v)) => {
                let gt_class = image.gts[g].class_idx;
                if gt_class == det.class_idx {
                    if v >= CORRECT_IOU && !claimed[g] {
                        claimed[g] = true;
                        ErrorCategory::Correct
                    } else {
                        ErrorCategory::Localization
                    }
                } else if table.supercategory(gt_class) == table.supercategory(det.class_idx) {
                    ErrorCategory::SimilarClass
                } else {
                    ErrorCategory::DissimilarClass
                }
            }
        };
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    /// Summed confidence per category, indexed by [`ErrorCategory::index`].
    pub confidence: [f64; 5],
    pub counts: [usize; 5],
    /// `None` when the total confidence is zero.
    pub shares: Option<[f64; 5]>,
}

impl ErrorBreakdown {
    pub fn share(&self, cat: ErrorCategory) -> Option<f64> {
        self.shares.map(|s| s[cat.index()])
    }

    /// Combined share of every category except `Correct`.
    pub fn non_correct_share(&self) -> Option<f64> {
        self.shares.map(|s| s[1..].iter().sum())
    }

    pub fn total_count(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("category,count,confidence,share\n");
        for cat in ErrorCategory::ALL {
            let i = cat.index();
            let share = self.shares.map(|v| v[i].to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{}", cat.name(), self.counts[i], self.confidence[i], share);
        }
        s
    }
}

pub fn confidence_shares(images: &[ImageRecord], table: &CategoryTable) -> ErrorBreakdown {
    let mut confidence = [0.0; 5];
    let mut counts = [0usize; 5];
    for img in images {
        for (det, cat) in img.dets.iter().zip(classify_detections(img, table)) {
            confidence[cat.index()] += det.score;
            counts[cat.index()] += 1;
        }
    }
    let total: f64 = confidence.iter().sum();
    let shares = (total > 0.0).then(|| confidence.map(|c| c / total));
    ErrorBreakdown {
        confidence,
        counts,
        shares,
    }
}
