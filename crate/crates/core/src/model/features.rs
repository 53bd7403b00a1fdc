//! Per-image feature sequences.
//!
//! Each detection becomes `[score] ⊕ one_hot(class) ⊕ [x/W, y/H, w/W, h/H]`.
//! Rows are sorted by descending score and zero-padded to
//! [`MAX_SEQ_LEN`]. Box coordinates are not clamped, so boxes reaching past
//! the image edge give values above 1.

use super::tensor::Tensor;
use crate::dataset::ImageRecord;
use crate::error::{Error, Result};

pub const MAX_SEQ_LEN: usize = 100;

pub fn feature_dim(num_classes: usize) -> usize {
    num_classes + 5
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    /// `MAX_SEQ_LEN x feature_dim`; rows at or past `valid_len` are zero.
    pub features: Tensor,
    pub valid_len: usize,
    /// `permutation[row]` is the index into `ImageRecord::dets` of that row.
    pub permutation: Vec<usize>,
}

impl FeatureSequence {
    pub fn num_classes(&self) -> usize {
        self.features.cols() - 5
    }

    /// Reorders per-detection values (aligned with `dets`) into row order.
    pub fn align(&self, per_detection: &[f64]) -> Vec<f64> {
        self.permutation.iter().map(|&d| per_detection[d]).collect()
    }

    /// Scatters row-ordered values back to detection order.
    pub fn scatter(&self, per_row: &[f64], num_dets: usize) -> Vec<f64> {
        let mut out = vec![0.0; num_dets];
        for (&d, &v) in self.permutation.iter().zip(per_row) {
            out[d] = v;
        }
        out
    }

    /// Swaps two valid rows, keeping the permutation in sync.
    pub fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let c = self.features.cols();
        let data = self.features.data_mut();
        for k in 0..c {
            data.swap(a * c + k, b * c + k);
        }
        self.permutation.swap(a, b);
    }
}

pub fn extract_features(image: &ImageRecord, num_classes: usize) -> Result<FeatureSequence> {
    let dim = feature_dim(num_classes);
    let mut order = image.ranked_detections();
    order.truncate(MAX_SEQ_LEN);
    let mut features = Tensor::zeros(&[MAX_SEQ_LEN, dim]);
    for (row, &d) in order.iter().enumerate() {
        let det = &image.dets[d];
        if det.class_idx >= num_classes {
            return Err(Error::ClassCountMismatch {
                class_idx: det.class_idx,
                num_classes,
            });
        }
        let r = features.row_mut(row);
        r[0] = det.score;
        r[1 + det.class_idx] = 1.0;
        r[dim - 4] = det.bbox.x / image.width;
        r[dim - 3] = det.bbox.y / image.height;
        r[dim - 2] = det.bbox.w / image.width;
        r[dim - 1] = det.bbox.h / image.height;
    }
    Ok(FeatureSequence {
        features,
        valid_len: order.len(),
        permutation: order,
    })
}
