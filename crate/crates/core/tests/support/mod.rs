//! Helpers shared by the integration tests: a deliberately plain AP
//! reference and random small instances.
#![allow(dead_code)]

use rand::Rng;
use rescore::{iou, BBox, Detection, GroundTruth, ImageRecord};

/// Direct AP transcription: no pooling tricks, no suffix maxima. Every
/// threshold and class is matched and scored from scratch.
pub fn naive_ap(images: &[ImageRecord], thresholds: &[f64]) -> Option<f64> {
    let n_cls = images
        .iter()
        .flat_map(|i| i.gts.iter().map(|g| g.class_idx).chain(i.dets.iter().map(|d| d.class_idx)))
        .max()
        .map_or(0, |m| m + 1);
    let mut total = 0.0;
    for &t in thresholds {
        let mut sum = 0.0;
        let mut defined = 0usize;
        for c in 0..n_cls {
            if let Some(ap) = naive_class_ap(images, c, t) {
                sum += ap;
                defined += 1;
            }
        }
        if defined == 0 {
            return None;
        }
        total += sum / defined as f64;
    }
    Some(total / thresholds.len() as f64)
}

pub fn naive_class_ap(images: &[ImageRecord], c: usize, t: f64) -> Option<f64> {
    let n_gt = images
        .iter()
        .map(|i| i.gts.iter().filter(|g| g.class_idx == c).count())
        .sum::<usize>();
    if n_gt == 0 {
        return None;
    }
    // (score, image, det_id, det index)
    let mut ranked = Vec::new();
    for (m, img) in images.iter().enumerate() {
        for (k, d) in img.dets.iter().enumerate() {
            if d.class_idx == c {
                ranked.push((d.score, m, d.det_id, k));
            }
        }
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut taken: Vec<Vec<bool>> = images.iter().map(|i| vec![false; i.gts.len()]).collect();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut recall = Vec::new();
    let mut precision = Vec::new();
    for &(_, m, _, k) in &ranked {
        let det = &images[m].dets[k];
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in images[m].gts.iter().enumerate() {
            if g.class_idx != c || taken[m][j] {
                continue;
            }
            let o = iou(&det.bbox, &g.bbox);
            if o >= t && best.is_none_or(|(_, b)| o > b) {
                best = Some((j, o));
            }
        }
        match best {
            Some((j, _)) => {
                taken[m][j] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    let mut sum = 0.0;
    for k in 0..101 {
        let r = k as f64 / 100.0;
        let mut p = 0.0f64;
        for i in 0..recall.len() {
            if recall[i] >= r && precision[i] > p {
                p = precision[i];
            }
        }
        sum += p;
    }
    Some(sum / 101.0)
}

/// 1-3 images, at most `max_classes` classes, `max_dets` detections and
/// `max_gts` ground truths in total. Boxes sit on a coarse integer grid and
/// scores on quarter steps, so IoU and score ties are common.
pub fn random_instance<R: Rng>(rng: &mut R, max_classes: usize, max_dets: usize, max_gts: usize) -> Vec<ImageRecord> {
    let n_images = rng.random_range(1..=3);
    let n_cls = rng.random_range(1..=max_classes);
    let mut images: Vec<ImageRecord> = (0..n_images).map(|i| ImageRecord::new(i as u64 + 1, 200.0, 200.0)).collect();
    let grid_box = |rng: &mut R| {
        let x = rng.random_range(0..8) as f64 * 10.0;
        let y = rng.random_range(0..8) as f64 * 10.0;
        let w = rng.random_range(1..8) as f64 * 10.0;
        let h = rng.random_range(1..8) as f64 * 10.0;
        BBox::new(x, y, w, h)
    };
    for _ in 0..rng.random_range(0..=max_gts) {
        let m = rng.random_range(0..n_images);
        let gt_id = images[m].gts.len();
        let bbox = grid_box(rng);
        images[m].gts.push(GroundTruth { bbox, class_idx: rng.random_range(0..n_cls), gt_id });
    }
    for _ in 0..rng.random_range(0..=max_dets) {
        let m = rng.random_range(0..n_images);
        let det_id = images[m].dets.len();
        // half the detections start from a ground truth of the same image
        let (bbox, class_idx) = match images[m].gts.len() {
            n if n > 0 && rng.random::<bool>() => {
                let g = &images[m].gts[rng.random_range(0..n)];
                let dx = rng.random_range(-1..=1) as f64 * 5.0;
                (g.bbox.translate(dx, 0.0), g.class_idx)
            }
            _ => (grid_box(rng), rng.random_range(0..n_cls)),
        };
        let score = rng.random_range(0..=4) as f64 / 4.0;
        images[m].dets.push(Detection { bbox, class_idx, score, det_id });
    }
    images
}

pub mod gradcheck {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rescore::model::{feature_dim, EncoderKind, FeatureSequence, ModelConfig, RescoringModel, Tensor, MAX_SEQ_LEN};

    pub const STEP: f64 = 1e-5;
    /// Below this magnitude both gradients count as zero and the error is
    /// taken as absolute.
    pub const FLOOR: f64 = 1e-7;

    pub fn random_sequence<R: Rng>(rng: &mut R, num_classes: usize, len: usize) -> (FeatureSequence, Vec<f64>) {
        let dim = feature_dim(num_classes);
        let mut features = Tensor::zeros(&[MAX_SEQ_LEN, dim]);
        for r in 0..len {
            for v in features.row_mut(r) {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let targets = (0..len).map(|_| rng.random::<f64>()).collect();
        let seq = FeatureSequence { features, valid_len: len, permutation: (0..len).collect() };
        (seq, targets)
    }

    /// Largest relative disagreement between analytic and central-difference
    /// gradients over every parameter, with the name of the worst tensor.
    pub fn max_relative_error(encoder: EncoderKind, seed: u64) -> (f64, String) {
        let config = ModelConfig {
            num_classes: 3,
            hidden: 4,
            layers: 2,
            encoder,
            regressor_hidden: 6,
            seed,
        };
        let mut model = RescoringModel::new(config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        // non-zero biases so every path carries signal
        for (_, t) in model.params.named_mut() {
            for v in t.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        let (seq, targets) = random_sequence(&mut rng, 3, 5);
        let (_, analytic) = model.loss_and_gradients(&seq, &targets);
        let loss_at = |m: &RescoringModel| m.loss_and_gradients(&seq, &targets).0;

        let names: Vec<String> = model.params.named().into_iter().map(|(n, _)| n).collect();
        let mut worst = (0.0, String::new());
        for (ti, name) in names.iter().enumerate() {
            let n = model.params.named()[ti].1.len();
            for k in 0..n {
                let orig = model.params.named()[ti].1.data()[k];
                model.params.named_mut()[ti].1.data_mut()[k] = orig + STEP;
                let up = loss_at(&model);
                model.params.named_mut()[ti].1.data_mut()[k] = orig - STEP;
                let down = loss_at(&model);
                model.params.named_mut()[ti].1.data_mut()[k] = orig;
                let numeric = (up - down) / (2.0 * STEP);
                let exact = analytic.named()[ti].1.data()[k];
                let err = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(FLOOR);
                if err > worst.0 {
                    worst = (err, format!("{name}[{k}] analytic {exact:e} numeric {numeric:e}"));
                }
            }
        }
        worst
    }
}
