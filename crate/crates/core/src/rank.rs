//! Images ranked by how much rescoring changed their confidences.
//!
//! For each image the confidences before and after rescoring form two
//! vectors over the same detections; the change is their cosine distance
//! `1 - v.w / (|v| |w|)`. Detections are paired by (box, class) rather than
//! by id, since rewriting a result file reorders them.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::dataset::{Detection, ImageRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankEntry {
    pub image_id: u64,
    pub distance: f64,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankOptions {
    pub top: usize,
    /// Only rank images with at most this many detections.
    pub max_dets: Option<usize>,
    /// Only list detections scoring above this before or after rescoring.
    /// The distance is still computed over all detections.
    pub min_score: Option<f64>,
}

impl Default for RankOptions {
    fn default() -> Self {
        Self {
            top: 16,
            max_dets: None,
            min_score: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankReport {
    pub entries: Vec<RankEntry>,
    /// Images left out because a confidence vector had zero norm.
    pub skipped: Vec<u64>,
}

impl RankReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,image_id,distance,before,after\n");
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        for (i, e) in self.entries.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                i + 1,
                e.image_id,
                e.distance,
                join(&e.before),
                join(&e.after)
            );
        }
        s
    }
}

/// Cosine distance, or None if either vector has zero norm.
pub fn cosine_distance(v: &[f64], w: &[f64]) -> Option<f64> {
    assert_eq!(v.len(), w.len(), "confidence vectors differ in length");
    let dot: f64 = v.iter().zip(w).map(|(a, b)| a * b).sum();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nw = w.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nv == 0.0 || nw == 0.0 {
        return None;
    }
    Some((1.0 - dot / (nv * nw)).clamp(0.0, 2.0))
}

fn key(d: &Detection) -> ([u64; 4], usize) {
    (d.bbox.to_xywh().map(f64::to_bits), d.class_idx)
}

/// After-scores reordered to follow `before`'s detection order.
fn align(before: &ImageRecord, after: &ImageRecord) -> Result<Vec<f64>> {
    let misaligned = |reason: String| Error::Misaligned {
        image_id: before.image_id,
        reason,
    };
    if before.dets.len() != after.dets.len() {
        return Err(misaligned(format!(
            "{} detections before rescoring, {} after",
            before.dets.len(),
            after.dets.len()
        )));
    }
    let mut pool: HashMap<_, Vec<f64>> = HashMap::new();
    for d in after.dets.iter().rev() {
        pool.entry(key(d)).or_default().push(d.score);
    }
    before
        .dets
        .iter()
        .map(|d| {
            pool.get_mut(&key(d))
                .and_then(Vec::pop)
                .ok_or_else(|| misaligned(format!("no rescored detection for det {} (class {})", d.det_id, d.class_idx)))
        })
        .collect()
}

pub fn rank_images(before: &[ImageRecord], after: &[ImageRecord], options: &RankOptions) -> Result<RankReport> {
    let by_id: HashMap<u64, &ImageRecord> = after.iter().map(|img| (img.image_id, img)).collect();
    let mut report = RankReport::default();
    for img in before {
        let other = by_id.get(&img.image_id).ok_or(Error::Misaligned {
            image_id: img.image_id,
            reason: "image missing from rescored detections".into(),
        })?;
        let after_scores = align(img, other)?;
        if options.max_dets.is_some_and(|m| img.dets.len() > m) {
            continue;
        }
        let before_scores: Vec<f64> = img.dets.iter().map(|d| d.score).collect();
        let Some(distance) = cosine_distance(&before_scores, &after_scores) else {
            report.skipped.push(img.image_id);
            continue;
        };
        let (before, after) = match options.min_score {
            Some(m) => before_scores
                .iter()
                .zip(&after_scores)
                .filter(|(b, a)| **b > m || **a > m)
                .map(|(b, a)| (*b, *a))
                .unzip(),
            None => (before_scores, after_scores),
        };
        report.entries.push(RankEntry {
            image_id: img.image_id,
            distance,
            before,
            after,
        });
    }
    report
        .entries
        .sort_by(|a, b| b.distance.total_cmp(&a.distance).then(a.image_id.cmp(&b.image_id)));
    report.entries.truncate(options.top);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bbox::BBox;

    fn image(id: u64, scores: &[f64]) -> ImageRecord {
        let mut img = ImageRecord::new(id, 100.0, 100.0);
        for (i, &score) in scores.iter().enumerate() {
            img.dets.push(Detection {
                bbox: BBox::new(i as f64 * 10.0, 0.0, 5.0, 5.0),
                class_idx: i % 2,
                score,
                det_id: i,
            });
        }
        img
    }

    #[test]
    fn distances() {
        assert_eq!(cosine_distance(&[0.3, 0.4], &[0.3, 0.4]), Some(0.0));
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 1.0]), Some(1.0));
        let d = cosine_distance(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((d - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-12);
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]), None);
    }

    #[test]
    fn sorted_descending() {
        let before = vec![image(1, &[0.9, 0.1]), image(2, &[0.9, 0.1]), image(3, &[0.5, 0.5])];
        let after = vec![image(1, &[0.9, 0.1]), image(2, &[0.1, 0.9]), image(3, &[0.5, 0.4])];
        let r = rank_images(&before, &after, &RankOptions::default()).unwrap();
        let ids: Vec<u64> = r.entries.iter().map(|e| e.image_id).collect();
        assert_eq!(ids, vec![2, 3, 1]);
        assert!(r.entries.windows(2).all(|w| w[0].distance >= w[1].distance));
    }

    #[test]
    fn alignment_ignores_order() {
        let before = vec![image(1, &[0.9, 0.5, 0.1])];
        let mut after = before.clone();
        after[0].dets.reverse();
        for (i, d) in after[0].dets.iter_mut().enumerate() {
            d.det_id = i;
        }
        let r = rank_images(&before, &after, &RankOptions::default()).unwrap();
        assert_eq!(r.entries[0].distance, 0.0);
        assert_eq!(r.entries[0].after, vec![0.9, 0.5, 0.1]);
    }

    #[test]
    fn filters() {
        let before = vec![image(1, &[0.9, 0.1, 0.1]), image(2, &[0.9, 0.3])];
        let after = vec![image(1, &[0.1, 0.1, 0.9]), image(2, &[0.1, 0.1])];
        let opts = RankOptions { max_dets: Some(2), ..RankOptions::default() };
        let r = rank_images(&before, &after, &opts).unwrap();
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.entries[0].image_id, 2);
        let opts = RankOptions { min_score: Some(0.2), ..RankOptions::default() };
        let r = rank_images(&before, &after, &opts).unwrap();
        let e1 = r.entries.iter().find(|e| e.image_id == 1).unwrap();
        assert_eq!(e1.before, vec![0.9, 0.1]);
        assert_eq!(e1.after, vec![0.1, 0.9]);
        let opts = RankOptions { top: 1, ..RankOptions::default() };
        assert_eq!(rank_images(&before, &after, &opts).unwrap().entries.len(), 1);
    }

    #[test]
    fn zero_norm_skipped() {
        let before = vec![image(1, &[0.0]), image(2, &[0.5])];
        let after = vec![image(1, &[0.5]), image(2, &[0.5])];
        let r = rank_images(&before, &after, &RankOptions::default()).unwrap();
        assert_eq!(r.skipped, vec![1]);
        assert_eq!(r.entries.len(), 1);
    }

    #[test]
    fn misaligned() {
        let before = vec![image(1, &[0.9, 0.1])];
        let after = vec![image(1, &[0.9])];
        assert!(matches!(
            rank_images(&before, &after, &RankOptions::default()),
            Err(Error::Misaligned { image_id: 1, .. })
        ));
        let mut moved = before.clone();
        moved[0].dets[1].bbox = BBox::new(50.0, 50.0, 5.0, 5.0);
        assert!(rank_images(&before, &moved, &RankOptions::default()).is_err());
        assert!(rank_images(&before, &[], &RankOptions::default()).is_err());
    }
}
