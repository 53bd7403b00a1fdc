//! Browser demo: synthetic scenes, their rescoring targets and the AP they
//! reach. Every entry point takes a JSON parameter object and returns JSON,
//! so the same functions are tested natively and called from the page.

use rescore::ap::class_pr_curve;
use rescore::error_analysis::{classify_detections, confidence_shares, ErrorCategory};
use rescore::matching::{image_targets, match_image, rescore_with_targets, MatchingMode, TargetConfig, TargetMode};
use rescore::synth::{generate_dataset, SynthParams};
use rescore::{evaluate, EvalParams, ImageRecord};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct DemoParams {
    pub seed: u64,
    pub images: usize,
    pub jitter: f64,
    pub duplicates: usize,
    pub background_fps: usize,
    pub confusion: f64,
    pub score_iou_weight: f64,
    pub matching: String,
    pub target: String,
    /// IoU threshold of the precision-recall view.
    pub threshold: f64,
}

impl Default for DemoParams {
    fn default() -> Self {
        Self {
            seed: 0,
            images: 30,
            jitter: 0.1,
            duplicates: 2,
            background_fps: 2,
            confusion: 0.1,
            score_iou_weight: 0.3,
            matching: "localization".into(),
            target: "iou".into(),
            threshold: 0.5,
        }
    }
}

impl DemoParams {
    fn synth(&self, n_images: usize) -> SynthParams {
        SynthParams {
            n_images,
            num_classes: 4,
            classes_per_super: 2,
            gts_per_image: (2, 5),
            duplicates_per_gt: (0, self.duplicates),
            jitter: self.jitter,
            confusion_prob: self.confusion,
            background_fps: (0, self.background_fps),
            score_iou_weight: self.score_iou_weight,
            score_noise: 0.1,
            image_size: (640.0, 480.0),
            seed: self.seed,
        }
    }

    fn targets(&self) -> Result<TargetConfig, String> {
        Ok(TargetConfig {
            matching: self.matching.parse::<MatchingMode>()?,
            target: self.target.parse::<TargetMode>()?,
        })
    }

    fn dataset(&self) -> Result<Vec<ImageRecord>, String> {
        generate_dataset(&self.synth(self.images.max(1)))
            .map(|(_, images)| images)
            .map_err(|e| e.to_string())
    }
}

fn parse(params: &str) -> Result<DemoParams, String> {
    if params.trim().is_empty() {
        return Ok(DemoParams::default());
    }
    serde_json::from_str(params).map_err(|e| e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct SceneBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    class_idx: usize,
}

#[derive(Serialize)]
struct SceneDetection {
    #[serde(flatten)]
    bbox: SceneBox,
    score: f64,
    target: f64,
    /// Index into `gts` of the matched ground truth.
    matched: Option<usize>,
    category: &'static str,
}

#[derive(Serialize)]
struct Scene {
    width: f64,
    height: f64,
    gts: Vec<SceneBox>,
    dets: Vec<SceneDetection>,
    baseline_ap: Option<f64>,
    target_ap: Option<f64>,
    dataset_baseline_ap: Option<f64>,
    dataset_target_ap: Option<f64>,
}

/// The first image of the dataset with its matching and targets, plus AP
/// before and after rescoring for that image and for the whole dataset.
pub fn scene_json(params: &str) -> Result<String, String> {
    let p = parse(params)?;
    let config = p.targets()?;
    let images = p.dataset()?;
    let img = &images[0];
    let (table, _) = generate_dataset(&p.synth(0)).map_err(|e| e.to_string())?;
    let matching = match_image(img, config.matching);
    let targets = image_targets(img, config);
    let categories = classify_detections(img, &table);
    let eval = EvalParams::default();
    let single = std::slice::from_ref(img);
    let scene = Scene {
        width: img.width,
        height: img.height,
        gts: img
            .gts
            .iter()
            .map(|g| SceneBox { x: g.bbox.x, y: g.bbox.y, w: g.bbox.w, h: g.bbox.h, class_idx: g.class_idx })
            .collect(),
        dets: img
            .dets
            .iter()
            .enumerate()
            .map(|(i, d)| SceneDetection {
                bbox: SceneBox { x: d.bbox.x, y: d.bbox.y, w: d.bbox.w, h: d.bbox.h, class_idx: d.class_idx },
                score: d.score,
                target: targets[i],
                matched: matching.gt_for(i),
                category: categories[i].name(),
            })
            .collect(),
        baseline_ap: evaluate(single, &eval).ap,
        target_ap: evaluate(&rescore_with_targets(single, config), &eval).ap,
        dataset_baseline_ap: evaluate(&images, &eval).ap,
        dataset_target_ap: evaluate(&rescore_with_targets(&images, config), &eval).ap,
    };
    to_json(&scene)
}

#[derive(Serialize)]
struct Curve {
    class_idx: usize,
    /// `(recall, precision)` after each ranked detection.
    baseline_raw: Vec<(f64, f64)>,
    baseline_interpolated: Vec<f64>,
    target_raw: Vec<(f64, f64)>,
    target_interpolated: Vec<f64>,
    baseline_ap: f64,
    target_ap: f64,
}

#[derive(Serialize)]
struct Curves {
    threshold: f64,
    recall_grid: Vec<f64>,
    classes: Vec<Curve>,
}

/// Per-class precision-recall curves at one IoU threshold, before and after
/// replacing scores with targets.
pub fn pr_curves_json(params: &str) -> Result<String, String> {
    let p = parse(params)?;
    if !(0.0..=1.0).contains(&p.threshold) {
        return Err(format!("threshold {} is outside [0, 1]", p.threshold));
    }
    let config = p.targets()?;
    let images = p.dataset()?;
    let rescored = rescore_with_targets(&images, config);
    let eval = EvalParams::default();
    let classes = (0..4)
        .filter_map(|c| {
            let before = class_pr_curve(&images, c, p.threshold, &eval)?;
            let after = class_pr_curve(&rescored, c, p.threshold, &eval)?;
            Some(Curve {
                class_idx: c,
                baseline_ap: before.mean_precision(),
                target_ap: after.mean_precision(),
                baseline_raw: before.raw,
                baseline_interpolated: before.precision,
                target_raw: after.raw,
                target_interpolated: after.precision,
            })
        })
        .collect();
    to_json(&Curves { threshold: p.threshold, recall_grid: eval.recall_grid(), classes })
}

#[derive(Serialize)]
struct Breakdown {
    categories: Vec<&'static str>,
    baseline: Option<[f64; 5]>,
    targets: Option<[f64; 5]>,
    counts: [usize; 5],
}

/// Confidence share per error category before and after rescoring.
pub fn error_breakdown_json(params: &str) -> Result<String, String> {
    let p = parse(params)?;
    let config = p.targets()?;
    let (table, images) = generate_dataset(&p.synth(p.images.max(1))).map_err(|e| e.to_string())?;
    let before = confidence_shares(&images, &table);
    let after = confidence_shares(&rescore_with_targets(&images, config), &table);
    to_json(&Breakdown {
        categories: ErrorCategory::ALL.iter().map(|c| c.name()).collect(),
        baseline: before.shares,
        targets: after.shares,
        counts: before.counts,
    })
}

#[wasm_bindgen]
pub fn scene(params: &str) -> Result<String, JsValue> {
    scene_json(params).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn pr_curves(params: &str) -> Result<String, JsValue> {
    pr_curves_json(params).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn error_breakdown(params: &str) -> Result<String, JsValue> {
    error_breakdown_json(params).map_err(|e| JsValue::from_str(&e))
}
