//! COCO-style Average Precision.
//!
//! For every class and IoU threshold, detections are matched greedily in
//! descending confidence order, pooled across images into a precision-recall
//! curve, interpolated (`p_interp(r) = max_{r' >= r} p(r')`) and sampled on a
//! fixed recall grid. The headline AP is the mean over thresholds of the mean
//! over classes; classes without ground truth are left out of both.
//!
//! Size-stratified AP ignores ground truth whose area falls outside the range
//! (it does not count towards recall), ignores detections matched to such
//! ground truth, and ignores unmatched detections whose own area is outside
//! the range.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bbox::iou;
use crate::dataset::{CategoryTable, Detection, GroundTruth, ImageRecord, MAX_DETS};
use crate::error::{Error, Result};

/// Half-open area interval `[min, max)` in square pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl AreaRange {
    pub fn new(name: &str, min: f64, max: f64) -> Self {
        Self {
            name: name.to_owned(),
            min,
            max,
        }
    }

    pub fn contains(&self, area: f64) -> bool {
        area >= self.min && area < self.max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    pub iou_thresholds: Vec<f64>,
    pub recall_points: usize,
    /// The first range is the unrestricted one used for the headline AP.
    pub area_ranges: Vec<AreaRange>,
    pub max_dets: usize,
}

/// The ten standard thresholds 0.50, 0.55, ..., 0.95, each the double
/// nearest to its decimal value.
pub fn standard_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            iou_thresholds: standard_thresholds(),
            recall_points: 101,
            area_ranges: vec![
                AreaRange::new("all", 0.0, f64::INFINITY),
                AreaRange::new("small", 0.0, 32.0 * 32.0),
                AreaRange::new("medium", 32.0 * 32.0, 96.0 * 96.0),
                AreaRange::new("large", 96.0 * 96.0, f64::INFINITY),
            ],
            max_dets: MAX_DETS,
        }
    }
}

impl EvalParams {
    pub fn validate(&self) -> Result<()> {
        let ts = &self.iou_thresholds;
        if ts.is_empty() || ts.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
            return Err(Error::InvalidConfig(
                "IoU thresholds must lie in (0, 1]".into(),
            ));
        }
        if ts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "IoU thresholds must be strictly increasing".into(),
            ));
        }
        if self.recall_points < 2 {
            return Err(Error::InvalidConfig("need at least 2 recall points".into()));
        }
        if self.area_ranges.is_empty() {
            return Err(Error::InvalidConfig("need at least one area range".into()));
        }
        Ok(())
    }

    /// Recall levels `k / (n - 1)` for `k = 0..n`.
    pub fn recall_grid(&self) -> Vec<f64> {
        recall_grid(self.recall_points)
    }

    pub fn threshold_index(&self, t: f64) -> Option<usize> {
        self.iou_thresholds
            .iter()
            .position(|&x| (x - t).abs() < 1e-9)
    }
}

pub fn recall_grid(points: usize) -> Vec<f64> {
    let last = (points - 1) as f64;
    (0..points).map(|k| k as f64 / last).collect()
}

/// Greedy AP matching of one class in one image.
///
/// Returns, aligned with `dets`, the index into `gts` each detection matched,
/// or `None` for a false positive.
pub fn match_for_ap(dets: &[Detection], gts: &[GroundTruth], t: f64) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .total_cmp(&dets[a].score)
            .then(dets[a].det_id.cmp(&dets[b].det_id))
    });
    let ious: Vec<f64> = order
        .iter()
        .flat_map(|&d| gts.iter().map(move |g| iou(&dets[d].bbox, &g.bbox)))
        .collect();
    let ignore = vec![false; gts.len()];
    let ranked = greedy_match(order.len(), gts.len(), &ious, &ignore, t);
    let mut out = vec![None; dets.len()];
    for (rank, &d) in order.iter().enumerate() {
        out[d] = ranked[rank];
    }
    out
}

/// Core matcher over an `nd x ng` IoU matrix whose rows are already in rank
/// order. Non-ignored ground truth is preferred; a detection falls back to
/// ignored ground truth only when no regular match exists. IoU ties go to
/// the lower ground-truth index.
fn greedy_match(nd: usize, ng: usize, ious: &[f64], gt_ignore: &[bool], t: f64) -> Vec<Option<usize>> {
    let mut taken = vec![false; ng];
    let mut out = Vec::with_capacity(nd);
    for k in 0..nd {
        let row = &ious[k * ng..(k + 1) * ng];
        let mut best: Option<usize> = None;
        for pass_ignored in [false, true] {
            for j in 0..ng {
                if taken[j] || gt_ignore[j] != pass_ignored || row[j] < t {
                    continue;
                }
                if best.is_none_or(|b| row[j] > row[b]) {
                    best = Some(j);
                }
            }
            if best.is_some() {
                break;
            }
        }
        if let Some(j) = best {
            taken[j] = true;
        }
        out.push(best);
    }
    out
}

/// Interpolated precision sampled on the recall grid, plus the raw curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub recall_grid: Vec<f64>,
    pub precision: Vec<f64>,
    /// `(recall, precision)` after each ranked detection.
    pub raw: Vec<(f64, f64)>,
}

impl PrCurve {
    pub fn mean_precision(&self) -> f64 {
        self.precision.iter().sum::<f64>() / self.precision.len() as f64
    }
}

/// `raw` must have non-decreasing recall, as produced by walking a ranking.
pub fn interpolate_precision(raw: &[(f64, f64)], recall_points: usize) -> PrCurve {
    let grid = recall_grid(recall_points);
    let mut suffix_max = vec![0.0; raw.len()];
    let mut running = 0.0f64;
    for i in (0..raw.len()).rev() {
        running = running.max(raw[i].1);
        suffix_max[i] = running;
    }
    let precision = grid
        .iter()
        .map(|&r| {
            let idx = raw.partition_point(|&(rec, _)| rec < r);
            if idx < raw.len() {
                suffix_max[idx]
            } else {
                0.0
            }
        })
        .collect();
    PrCurve {
        recall_grid: grid,
        precision,
        raw: raw.to_vec(),
    }
}

/// One non-ignored detection of a class at a fixed threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredOutcome {
    pub score: f64,
    pub image_order: usize,
    pub det_id: usize,
    pub true_positive: bool,
}

/// Ranks pooled outcomes (descending score, then image order, then
/// `det_id`) and returns the raw `(recall, precision)` points.
pub fn precision_recall_points(outcomes: &[ScoredOutcome], gts_total: usize) -> Vec<(f64, f64)> {
    let mut ranked: Vec<&ScoredOutcome> = outcomes.iter().collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.image_order.cmp(&b.image_order))
            .then(a.det_id.cmp(&b.det_id))
    });
    let (mut tp, mut fp) = (0usize, 0usize);
    ranked
        .iter()
        .map(|o| {
            if o.true_positive {
                tp += 1;
            } else {
                fp += 1;
            }
            (tp as f64 / gts_total as f64, tp as f64 / (tp + fp) as f64)
        })
        .collect()
}

/// AP of one class at one threshold; `None` when the class has no ground truth.
pub fn ap_class_threshold(
    outcomes: &[ScoredOutcome],
    gts_total: usize,
    recall_points: usize,
) -> Option<f64> {
    pr_curve(outcomes, gts_total, recall_points).map(|c| c.mean_precision())
}

pub fn pr_curve(outcomes: &[ScoredOutcome], gts_total: usize, recall_points: usize) -> Option<PrCurve> {
    if gts_total == 0 {
        return None;
    }
    Some(interpolate_precision(
        &precision_recall_points(outcomes, gts_total),
        recall_points,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaAp {
    pub name: String,
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_small: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
    pub iou_thresholds: Vec<f64>,
    /// `[class][threshold]` over the unrestricted area range.
    pub per_class_threshold: Vec<Vec<Option<f64>>>,
    pub per_area: Vec<AreaAp>,
}

impl ApReport {
    pub fn is_defined(&self) -> bool {
        self.ap.is_some()
    }

    /// Mean over thresholds of AP for one class.
    pub fn class_ap(&self, class_idx: usize) -> Option<f64> {
        let row = self.per_class_threshold.get(class_idx)?;
        let vals: Option<Vec<f64>> = row.iter().copied().collect();
        vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn summary_text(&self) -> String {
        let fmt = |v: Option<f64>| match v {
            Some(x) => format!("{:.3}", x),
            None => "undefined".to_owned(),
        };
        let mut s = String::new();
        let _ = writeln!(s, "AP   @[IoU=0.50:0.95 | area=all    ] = {}", fmt(self.ap));
        let _ = writeln!(s, "AP50 @[IoU=0.50      | area=all    ] = {}", fmt(self.ap50));
        let _ = writeln!(s, "AP75 @[IoU=0.75      | area=all    ] = {}", fmt(self.ap75));
        let _ = writeln!(s, "APs  @[IoU=0.50:0.95 | area=small  ] = {}", fmt(self.ap_small));
        let _ = writeln!(s, "APm  @[IoU=0.50:0.95 | area=medium ] = {}", fmt(self.ap_medium));
        let _ = writeln!(s, "APl  @[IoU=0.50:0.95 | area=large  ] = {}", fmt(self.ap_large));
        s
    }

    /// One row per class, one column per threshold; empty cells for classes
    /// without ground truth.
    pub fn to_csv(&self, table: &CategoryTable) -> String {
        let mut s = String::from("class_idx,category_id,name");
        for t in &self.iou_thresholds {
            let _ = write!(s, ",ap@{:.2}", t);
        }
        s.push('\n');
        for idx in 0..table.len() {
            let cat = table.category(idx);
            let _ = write!(s, "{},{},{}", idx, cat.id, csv_field(&cat.name));
            for ti in 0..self.iou_thresholds.len() {
                let v = self
                    .per_class_threshold
                    .get(idx)
                    .and_then(|row| row[ti]);
                match v {
                    Some(x) => {
                        let _ = write!(s, ",{}", x);
                    }
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Outcomes of every (area range, class, threshold), pooled across images.
struct Accumulator {
    n_thr: usize,
    n_cls: usize,
    outcomes: Vec<Vec<ScoredOutcome>>,
    npos: Vec<usize>,
}

impl Accumulator {
    fn new(n_area: usize, n_cls: usize, n_thr: usize) -> Self {
        Self {
            n_thr,
            n_cls,
            outcomes: vec![Vec::new(); n_area * n_cls * n_thr],
            npos: vec![0; n_area * n_cls],
        }
    }

    fn slot(&self, a: usize, c: usize, t: usize) -> usize {
        (a * self.n_cls + c) * self.n_thr + t
    }
}

pub(crate) fn num_classes(images: &[ImageRecord]) -> usize {
    images
        .iter()
        .flat_map(|img| {
            img.gts
                .iter()
                .map(|g| g.class_idx)
                .chain(img.dets.iter().map(|d| d.class_idx))
        })
        .max()
        .map_or(0, |m| m + 1)
}

fn accumulate(images: &[ImageRecord], classes: &[usize], n_cls: usize, params: &EvalParams) -> Accumulator {
    let n_thr = params.iou_thresholds.len();
    let mut acc = Accumulator::new(params.area_ranges.len(), n_cls, n_thr);
    let mut wanted = vec![false; n_cls];
    for &c in classes {
        wanted[c] = true;
    }
    for (image_order, img) in images.iter().enumerate() {
        let mut ranked = img.ranked_detections();
        ranked.truncate(params.max_dets);
        for (c, _) in wanted.iter().enumerate().filter(|(_, w)| **w) {
            let dets: Vec<&Detection> = ranked
                .iter()
                .map(|&i| &img.dets[i])
                .filter(|d| d.class_idx == c)
                .collect();
            let gts: Vec<&GroundTruth> = img.gts.iter().filter(|g| g.class_idx == c).collect();
            if dets.is_empty() && gts.is_empty() {
                continue;
            }
            let ng = gts.len();
            let ious: Vec<f64> = dets
                .iter()
                .flat_map(|d| gts.iter().map(move |g| iou(&d.bbox, &g.bbox)))
                .collect();
            for (a, range) in params.area_ranges.iter().enumerate() {
                let gt_ignore: Vec<bool> = gts.iter().map(|g| !range.contains(g.bbox.area())).collect();
                acc.npos[a * n_cls + c] += gt_ignore.iter().filter(|&&ig| !ig).count();
                for (ti, &t) in params.iou_thresholds.iter().enumerate() {
                    let matches = greedy_match(dets.len(), ng, &ious, &gt_ignore, t);
                    let slot = acc.slot(a, c, ti);
                    for (d, m) in dets.iter().zip(matches) {
                        let ignored = match m {
                            Some(j) => gt_ignore[j],
                            None => !range.contains(d.bbox.area()),
                        };
                        if !ignored {
                            acc.outcomes[slot].push(ScoredOutcome {
                                score: d.score,
                                image_order,
                                det_id: d.det_id,
                                true_positive: m.is_some(),
                            });
                        }
                    }
                }
            }
        }
    }
    acc
}

/// Mean over the selected thresholds of the mean over defined classes.
fn mean_ap(per_class: &[Vec<Option<f64>>], thresholds: &[usize]) -> Option<f64> {
    let mut total = 0.0;
    for &ti in thresholds {
        let mut sum = 0.0;
        let mut n = 0usize;
        for row in per_class {
            if let Some(v) = row[ti] {
                sum += v;
                n += 1;
            }
        }
        if n == 0 {
            return None;
        }
        total += sum / n as f64;
    }
    Some(total / thresholds.len() as f64)
}

/// Per-threshold AP of a single class over the area range at `area_idx`.
pub fn evaluate_class(
    images: &[ImageRecord],
    class_idx: usize,
    params: &EvalParams,
    area_idx: usize,
) -> Vec<Option<f64>> {
    let mut p = params.clone();
    p.area_ranges = vec![params.area_ranges[area_idx].clone()];
    let acc = accumulate(images, &[class_idx], class_idx + 1, &p);
    (0..p.iou_thresholds.len())
        .map(|ti| {
            ap_class_threshold(
                &acc.outcomes[acc.slot(0, class_idx, ti)],
                acc.npos[class_idx],
                p.recall_points,
            )
        })
        .collect()
}

/// Precision-recall curve of one class at one threshold (unrestricted area).
pub fn class_pr_curve(
    images: &[ImageRecord],
    class_idx: usize,
    threshold: f64,
    params: &EvalParams,
) -> Option<PrCurve> {
    let mut p = params.clone();
    p.area_ranges = vec![params.area_ranges[0].clone()];
    p.iou_thresholds = vec![threshold];
    let acc = accumulate(images, &[class_idx], class_idx + 1, &p);
    pr_curve(
        &acc.outcomes[acc.slot(0, class_idx, 0)],
        acc.npos[class_idx],
        p.recall_points,
    )
}

pub fn evaluate(images: &[ImageRecord], params: &EvalParams) -> ApReport {
    let n_cls = num_classes(images);
    let n_thr = params.iou_thresholds.len();
    let classes: Vec<usize> = (0..n_cls).collect();
    let acc = accumulate(images, &classes, n_cls, params);

    let table_for = |a: usize| -> Vec<Vec<Option<f64>>> {
        (0..n_cls)
            .map(|c| {
                (0..n_thr)
                    .map(|ti| {
                        ap_class_threshold(
                            &acc.outcomes[acc.slot(a, c, ti)],
                            acc.npos[a * n_cls + c],
                            params.recall_points,
                        )
                    })
                    .collect()
            })
            .collect()
    };

    let all_thr: Vec<usize> = (0..n_thr).collect();
    let per_class_threshold = table_for(0);
    let per_area: Vec<AreaAp> = params
        .area_ranges
        .iter()
        .enumerate()
        .map(|(a, range)| AreaAp {
            name: range.name.clone(),
            ap: if a == 0 {
                mean_ap(&per_class_threshold, &all_thr)
            } else {
                mean_ap(&table_for(a), &all_thr)
            },
        })
        .collect();
    let area = |name: &str| per_area.iter().find(|x| x.name == name).and_then(|x| x.ap);
    let at = |t: f64| {
        params
            .threshold_index(t)
            .and_then(|ti| mean_ap(&per_class_threshold, &[ti]))
    };

    ApReport {
        ap: per_area[0].ap,
        ap50: at(0.5),
        ap75: at(0.75),
        ap_small: area("small"),
        ap_medium: area("medium"),
        ap_large: area("large"),
        iou_thresholds: params.iou_thresholds.clone(),
        per_class_threshold,
        per_area,
    }
}
