use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::features::feature_dim;
use super::tensor::Tensor;
use super::{EncoderKind, ModelConfig};

/// Gate weights of one GRU direction. Rows are stacked as
/// `[update; reset; candidate]`, each block `hidden` rows tall.
#[derive(Debug, Clone, PartialEq)]
pub struct GruDirection {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer {
    pub forward: GruDirection,
    pub backward: GruDirection,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderParams {
    Gru(Vec<GruLayer>),
    /// Per-row affine map to `2 * hidden` followed by ReLU.
    Linear { weight: Tensor, bias: Tensor },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorParams {
    /// `4 * hidden x regressor_hidden`
    pub w1: Tensor,
    pub b1: Tensor,
    /// `regressor_hidden x 1`
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub regressor: RegressorParams,
}

fn glorot(shape: &[usize]) -> f64 {
    (6.0 / (shape[0] + shape[1]) as f64).sqrt()
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let nh = config.hidden;
        let rh = config.regressor_hidden;
        let encoder = match config.encoder {
            EncoderKind::Gru => EncoderParams::Gru(
                (0..config.layers)
                    .map(|l| {
                        let din = if l == 0 { feature_dim(config.num_classes) } else { 2 * nh };
                        let dir = || GruDirection {
                            w_ih: Tensor::zeros(&[3 * nh, din]),
                            w_hh: Tensor::zeros(&[3 * nh, nh]),
                            bias: Tensor::zeros(&[3 * nh]),
                        };
                        GruLayer {
                            forward: dir(),
                            backward: dir(),
                        }
                    })
                    .collect(),
            ),
            EncoderKind::Linear => EncoderParams::Linear {
                weight: Tensor::zeros(&[2 * nh, feature_dim(config.num_classes)]),
                bias: Tensor::zeros(&[2 * nh]),
            },
        };
        Self {
            encoder,
            regressor: RegressorParams {
                w1: Tensor::zeros(&[4 * nh, rh]),
                b1: Tensor::zeros(&[rh]),
                w2: Tensor::zeros(&[rh, 1]),
                b2: Tensor::zeros(&[1]),
            },
        }
    }

    /// Glorot-uniform weights, zero biases, drawn in canonical tensor order
    /// from a ChaCha8 stream seeded with `config.seed`.
    pub fn init(config: &ModelConfig) -> Self {
        let mut params = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for (_, t) in params.named_mut() {
            if t.shape().len() == 2 {
                let shape = t.shape().to_vec();
                *t = Tensor::uniform(&shape, glorot(&shape), &mut rng);
            }
        }
        params
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, t) in out.named_mut() {
            t.fill(0.0);
        }
        out
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        match &self.encoder {
            EncoderParams::Gru(layers) => {
                for (l, layer) in layers.iter().enumerate() {
                    for (dir, p) in [("fwd", &layer.forward), ("bwd", &layer.backward)] {
                        out.push((format!("gru.l{l}.{dir}.w_ih"), &p.w_ih));
                        out.push((format!("gru.l{l}.{dir}.w_hh"), &p.w_hh));
                        out.push((format!("gru.l{l}.{dir}.bias"), &p.bias));
                    }
                }
            }
            EncoderParams::Linear { weight, bias } => {
                out.push(("linear.weight".into(), weight));
                out.push(("linear.bias".into(), bias));
            }
        }
        let r = &self.regressor;
        out.push(("regressor.w1".into(), &r.w1));
        out.push(("regressor.b1".into(), &r.b1));
        out.push(("regressor.w2".into(), &r.w2));
        out.push(("regressor.b2".into(), &r.b2));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        match &mut self.encoder {
            EncoderParams::Gru(layers) => {
                for (l, layer) in layers.iter_mut().enumerate() {
                    for (dir, p) in [("fwd", &mut layer.forward), ("bwd", &mut layer.backward)] {
                        out.push((format!("gru.l{l}.{dir}.w_ih"), &mut p.w_ih));
                        out.push((format!("gru.l{l}.{dir}.w_hh"), &mut p.w_hh));
                        out.push((format!("gru.l{l}.{dir}.bias"), &mut p.bias));
                    }
                }
            }
            EncoderParams::Linear { weight, bias } => {
                out.push(("linear.weight".into(), weight));
                out.push(("linear.bias".into(), bias));
            }
        }
        let r = &mut self.regressor;
        out.push(("regressor.w1".into(), &mut r.w1));
        out.push(("regressor.b1".into(), &mut r.b1));
        out.push(("regressor.w2".into(), &mut r.w2));
        out.push(("regressor.b2".into(), &mut r.b2));
        out
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            a.add_assign(b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_size_matches_published_count() {
        // roughly 3.0 M parameters at hidden 256, three layers, 80 classes
        let p = ModelParams::zeros(&ModelConfig::default());
        let n = p.num_params();
        assert!((2_950_000..3_050_000).contains(&n), "{n}");
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = ModelConfig { hidden: 4, layers: 2, num_classes: 3, ..ModelConfig::default() };
        let a = ModelParams::init(&cfg);
        assert_eq!(a, ModelParams::init(&cfg));
        let other = ModelParams::init(&ModelConfig { seed: cfg.seed + 1, ..cfg.clone() });
        assert_ne!(a, other);
        for (name, t) in a.named() {
            if t.shape().len() == 1 {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            } else {
                let b = glorot(t.shape());
                assert!(t.data().iter().all(|v| v.abs() <= b), "{name}");
            }
        }
    }
}
