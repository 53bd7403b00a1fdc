//! Contextual rescoring network.
//!
//! A per-image sequence of detection features goes through a bidirectional
//! stacked GRU (or a per-row linear layer), masked self-attention and a
//! two-layer regressor that emits one confidence in `(0, 1)` per detection.
//! Training minimizes the summed squared error against the rescoring targets.
//! Gradients are computed by hand in [`RescoringModel::backward`]; everything
//! is `f64`.

pub mod attention;
pub mod checkpoint;
pub mod features;
pub mod gru;
pub mod params;
pub mod regressor;
pub mod tensor;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use attention::{attention_backward, attention_forward, AttentionOutput};
pub use features::{extract_features, feature_dim, FeatureSequence, MAX_SEQ_LEN};
pub use gru::{encoder_backward, encoder_forward, EncoderTrace};
pub use params::{EncoderParams, GruDirection, GruLayer, ModelParams, RegressorParams};
pub use regressor::{regressor_backward, regressor_forward, RegressorTrace};
pub use tensor::{pad_rows, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Gru,
    Linear,
}

impl FromStr for EncoderKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gru" => Ok(Self::Gru),
            "linear" => Ok(Self::Linear),
            other => Err(format!("unknown encoder `{other}`")),
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gru => "gru",
            Self::Linear => "linear",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub hidden: usize,
    pub layers: usize,
    pub encoder: EncoderKind,
    pub regressor_hidden: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_classes: 80,
            hidden: 256,
            layers: 3,
            encoder: EncoderKind::Gru,
            regressor_hidden: 80,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 || self.regressor_hidden == 0 || self.num_classes == 0 {
            return Err(Error::InvalidConfig(
                "hidden size, layer count, regressor width and class count must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub valid_len: usize,
    pub encoder: EncoderTrace,
    /// `L x 2*hidden`
    pub hidden: Tensor,
    pub attention: AttentionOutput,
    pub regressor: RegressorTrace,
}

impl ForwardTrace {
    /// Predictions for the valid rows.
    pub fn outputs(&self) -> &[f64] {
        &self.regressor.output
    }

    /// Predictions padded with zeros to [`MAX_SEQ_LEN`].
    pub fn padded_outputs(&self) -> Vec<f64> {
        let mut out = self.regressor.output.clone();
        out.resize(MAX_SEQ_LEN.max(out.len()), 0.0);
        out
    }
}

/// Summed squared error over the first `len` entries.
pub fn squared_error(pred: &[f64], targets: &[f64], len: usize) -> f64 {
    pred[..len]
        .iter()
        .zip(&targets[..len])
        .map(|(y, t)| (y - t) * (y - t))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RescoringModel {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl RescoringModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config);
        Ok(Self { config, params })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::zeros(&config);
        Ok(Self { config, params })
    }

    pub fn forward(&self, seq: &FeatureSequence) -> ForwardTrace {
        let len = seq.valid_len;
        let (hidden, encoder) = encoder_forward(&self.params.encoder, &seq.features, len);
        let attention = attention_forward(&hidden, len);
        let regressor = regressor_forward(&self.params.regressor, &hidden, &attention.context, len);
        ForwardTrace {
            valid_len: len,
            encoder,
            hidden,
            attention,
            regressor,
        }
    }

    pub fn predict(&self, seq: &FeatureSequence) -> Vec<f64> {
        self.forward(seq).regressor.output
    }

    /// Loss and exact parameter gradients; `targets` is in row order.
    pub fn backward(&self, trace: &ForwardTrace, targets: &[f64]) -> (f64, ModelParams) {
        let len = trace.valid_len;
        let mut grads = self.params.zeros_like();
        let y = trace.outputs();
        let loss = squared_error(y, targets, len);
        if len == 0 {
            return (loss, grads);
        }
        let d_out: Vec<f64> = y.iter().zip(targets).map(|(y, t)| 2.0 * (y - t)).collect();
        let d = trace.hidden.cols();
        let mut d_hidden = Tensor::zeros(&[len, d]);
        let mut d_context = Tensor::zeros(&[len, d]);
        regressor_backward(
            &self.params.regressor,
            &mut grads.regressor,
            &trace.hidden,
            &trace.attention.context,
            &trace.regressor,
            &d_out,
            &mut d_hidden,
            &mut d_context,
        );
        attention_backward(&trace.hidden, &trace.attention, &d_context, &mut d_hidden);
        encoder_backward(&self.params.encoder, &mut grads.encoder, &trace.encoder, &d_hidden);
        (loss, grads)
    }

    pub fn loss_and_gradients(&self, seq: &FeatureSequence, targets: &[f64]) -> (f64, ModelParams) {
        let trace = self.forward(seq);
        self.backward(&trace, targets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bbox::BBox;
    use crate::dataset::{Detection, ImageRecord};

    fn tiny(encoder: EncoderKind) -> ModelConfig {
        ModelConfig {
            num_classes: 3,
            hidden: 4,
            layers: 2,
            encoder,
            regressor_hidden: 5,
            seed: 11,
        }
    }

    fn scene(n: usize) -> ImageRecord {
        let mut img = ImageRecord::new(1, 200.0, 100.0);
        for i in 0..n {
            img.dets.push(Detection {
                bbox: BBox::new(10.0 * i as f64, 5.0, 30.0, 20.0 + i as f64),
                class_idx: i % 3,
                score: 0.9 - 0.1 * i as f64,
                det_id: i,
            });
        }
        img
    }

    #[test]
    fn zero_model_outputs_half() {
        let model = RescoringModel::zeros(tiny(EncoderKind::Gru)).unwrap();
        let seq = extract_features(&scene(4), 3).unwrap();
        let trace = model.forward(&seq);
        assert!(trace.hidden.data().iter().all(|&v| v == 0.0));
        assert_eq!(trace.outputs(), &[0.5; 4]);
        let padded = trace.padded_outputs();
        assert_eq!(padded.len(), MAX_SEQ_LEN);
        assert!(padded[4..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_sequence() {
        let model = RescoringModel::new(tiny(EncoderKind::Gru)).unwrap();
        let seq = extract_features(&scene(0), 3).unwrap();
        let trace = model.forward(&seq);
        assert_eq!(trace.hidden.rows(), 0);
        let (loss, grads) = model.backward(&trace, &[]);
        assert_eq!(loss, 0.0);
        assert!(grads.named().iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn loss_values() {
        assert_eq!(squared_error(&[0.5], &[1.0], 1), 0.25);
        assert_eq!(squared_error(&[0.3, 0.2], &[0.3, 0.2], 2), 0.0);
        assert_eq!(squared_error(&[0.3], &[0.9], 0), 0.0);
    }

    #[test]
    fn perfect_prediction_has_zero_gradient() {
        for kind in [EncoderKind::Gru, EncoderKind::Linear] {
            let model = RescoringModel::new(tiny(kind)).unwrap();
            let seq = extract_features(&scene(5), 3).unwrap();
            let trace = model.forward(&seq);
            let targets = trace.outputs().to_vec();
            let (loss, grads) = model.backward(&trace, &targets);
            assert_eq!(loss, 0.0);
            assert!(grads.named().iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn outputs_strictly_inside_unit_interval() {
        let model = RescoringModel::new(tiny(EncoderKind::Gru)).unwrap();
        let seq = extract_features(&scene(7), 3).unwrap();
        assert!(model.predict(&seq).iter().all(|&y| y > 0.0 && y < 1.0));
    }

    #[test]
    fn deterministic() {
        let a = RescoringModel::new(tiny(EncoderKind::Gru)).unwrap();
        let b = RescoringModel::new(tiny(EncoderKind::Gru)).unwrap();
        let seq = extract_features(&scene(6), 3).unwrap();
        assert_eq!(a.predict(&seq), b.predict(&seq));
    }
}
