//! Training loop and inference-time rescoring.
//!
//! One epoch is a pass over the training images in a seeded random order,
//! grouped into batches of whole images (the last partial batch is kept).
//! The batch loss is the sum of per-sequence squared errors. With
//! probability `shuffle_prob` the valid rows of a sequence are permuted
//! before the forward pass, so the model cannot simply copy the input order.
//!
//! After each epoch the validation set is rescored and evaluated. When AP has
//! not improved for more than `patience` epochs, the learning rate is
//! multiplied by `lr_decay` and the parameters revert to the best epoch (the
//! Adam moments are kept). Training stops after `early_stop` epochs without
//! improvement or at `max_epochs`.
//!
//! Randomness comes from one seed split into ChaCha8 streams: stream 1 orders
//! the images of each epoch, stream 2 drives the shuffle augmentation.
//! Batch members are differentiated in parallel but their gradients are
//! summed in batch order, so results do not depend on the thread count.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ap::{evaluate, EvalParams};
use crate::dataset::ImageRecord;
use crate::error::{Error, Result};
use crate::matching::{image_targets, TargetConfig};
use crate::model::{extract_features, FeatureSequence, ModelConfig, ModelParams, RescoringModel, Tensor};

pub const ORDER_STREAM: u64 = 1;
pub const AUGMENT_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub shuffle_prob: f64,
    pub lr_decay: f64,
    pub patience: usize,
    pub early_stop: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub targets: TargetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            lr: 0.003,
            shuffle_prob: 0.75,
            lr_decay: 0.2,
            patience: 4,
            early_stop: 20,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_epochs: 100,
            seed: 0,
            targets: TargetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(0.0..=1.0).contains(&self.shuffle_prob) {
            return bad("shuffle probability must lie in [0, 1]");
        }
        if self.patience >= self.early_stop {
            return bad("patience must be smaller than the early-stop window");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch size and epoch budget must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("learning rate must be finite and non-negative, decay in (0, 1]");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        TrainConfig::default().adam()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: ModelParams,
    pub second_moment: ModelParams,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Non-finite gradients leave parameters
/// and state untouched and report the offending tensor.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
    lr: f64,
    hyper: AdamHyper,
) -> Result<()> {
    if let Some((name, _)) = grads.named().into_iter().find(|(_, g)| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(name));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    let p = params.named_mut();
    let g = grads.named();
    let m = state.first_moment.named_mut();
    let v = state.second_moment.named_mut();
    for (((( _, p), (_, g)), (_, m)), (_, v)) in p.into_iter().zip(g).zip(m).zip(v) {
        let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
        for (i, &gi) in g.data().iter().enumerate() {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * gi;
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

/// With probability `prob`, permutes the valid rows of `seq` and the
/// matching `targets` by one uniform permutation. Returns whether it did.
pub fn shuffle_augment<R: Rng + ?Sized>(
    seq: &mut FeatureSequence,
    targets: &mut [f64],
    prob: f64,
    rng: &mut R,
) -> bool {
    let coin: f64 = rng.random();
    if coin >= prob || seq.valid_len < 2 {
        return false;
    }
    let len = seq.valid_len;
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(rng);
    let cols = seq.features.cols();
    let mut features = Tensor::zeros(seq.features.shape());
    for (new, &old) in perm.iter().enumerate() {
        features.row_mut(new).copy_from_slice(seq.features.row(old));
    }
    let old_targets = targets[..len].to_vec();
    for (new, &old) in perm.iter().enumerate() {
        targets[new] = old_targets[old];
    }
    seq.permutation = perm.iter().map(|&old| seq.permutation[old]).collect();
    debug_assert_eq!(features.cols(), cols);
    seq.features = features;
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpochEvent {
    Improved,
    Stagnant,
    /// Learning rate decayed and parameters reverted to the best epoch.
    Decay,
    Stop,
}

impl EpochEvent {
    pub fn name(self) -> &'static str {
        match self {
            Self::Improved => "improved",
            Self::Stagnant => "stagnant",
            Self::Decay => "decay",
            Self::Stop => "stop",
        }
    }
}

/// Validation-AP plateau tracking.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    patience: usize,
    early_stop: usize,
    best: f64,
    best_epoch: usize,
    bad_epochs: usize,
    since_best: usize,
}

impl PlateauScheduler {
    pub fn new(patience: usize, early_stop: usize) -> Self {
        Self {
            patience,
            early_stop,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
            since_best: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn observe(&mut self, epoch: usize, ap: f64) -> EpochEvent {
        if ap > self.best {
            self.best = ap;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            self.since_best = 0;
            return EpochEvent::Improved;
        }
        self.since_best += 1;
        self.bad_epochs += 1;
        if self.since_best >= self.early_stop {
            EpochEvent::Stop
        } else if self.bad_epochs > self.patience {
            self.bad_epochs = 0;
            EpochEvent::Decay
        } else {
            EpochEvent::Stagnant
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sum of per-sequence losses over the epoch.
    pub loss: f64,
    pub val_ap: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub best_epoch: usize,
    pub event: EpochEvent,
}

pub fn history_to_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,loss,val_ap,lr,best_epoch,event\n");
    for r in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.epoch,
            r.loss,
            r.val_ap,
            r.lr,
            r.best_epoch,
            r.event.name()
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: RescoringModel,
    pub best_val_ap: f64,
    pub history: Vec<EpochRecord>,
}

/// Feature sequences with row-aligned targets for every image that has
/// detections.
pub fn prepare_samples(
    images: &[ImageRecord],
    num_classes: usize,
    targets: TargetConfig,
) -> Result<Vec<(FeatureSequence, Vec<f64>)>> {
    images
        .iter()
        .filter(|img| !img.dets.is_empty())
        .map(|img| {
            let seq = extract_features(img, num_classes)?;
            let t = seq.align(&image_targets(img, targets));
            Ok((seq, t))
        })
        .collect()
}

/// Summed loss and gradients over `batch`, reduced in batch order.
pub fn batch_gradients(model: &RescoringModel, batch: &[(FeatureSequence, Vec<f64>)]) -> (f64, ModelParams) {
    let mut total = model.params.zeros_like();
    let mut loss = 0.0;
    let chunk = rayon::current_num_threads().max(1);
    for part in batch.chunks(chunk) {
        let results: Vec<(f64, ModelParams)> = part
            .par_iter()
            .map(|(seq, t)| model.loss_and_gradients(seq, t))
            .collect();
        for (l, g) in results {
            loss += l;
            total.add_assign(&g);
        }
    }
    (loss, total)
}

fn validation_ap(model: &RescoringModel, val: &[ImageRecord], params: &EvalParams) -> Result<f64> {
    let rescored = rescore_dataset(val, model)?;
    Ok(evaluate(&rescored, params).ap.unwrap_or(0.0))
}

pub fn train_loop(
    train: &[ImageRecord],
    val: &[ImageRecord],
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let samples = prepare_samples(train, model_config.num_classes, config.targets)?;
    if samples.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let eval_params = EvalParams::default();
    let mut model = RescoringModel::new(model_config.clone())?;
    let mut best = model.clone();
    let mut opt = OptimizerState::new(&model.params);
    let hyper = config.adam();

    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    order_rng.set_stream(ORDER_STREAM);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(config.seed);
    aug_rng.set_stream(AUGMENT_STREAM);

    let mut scheduler = PlateauScheduler::new(config.patience, config.early_stop);
    let mut lr = config.lr;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        for idxs in order.chunks(config.batch_size) {
            let batch: Vec<(FeatureSequence, Vec<f64>)> = idxs
                .iter()
                .map(|&i| {
                    let (mut seq, mut t) = samples[i].clone();
                    shuffle_augment(&mut seq, &mut t, config.shuffle_prob, &mut aug_rng);
                    (seq, t)
                })
                .collect();
            let (loss, grads) = batch_gradients(&model, &batch);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("loss is {loss}"),
                    last_good: Box::new(best),
                });
            }
            if let Err(e) = adam_step(&mut model.params, &grads, &mut opt, lr, hyper) {
                return Err(Error::Diverged {
                    epoch,
                    reason: e.to_string(),
                    last_good: Box::new(best),
                });
            }
            epoch_loss += loss;
        }

        let val_ap = validation_ap(&model, val, &eval_params)?;
        let event = scheduler.observe(epoch, val_ap);
        if event == EpochEvent::Improved {
            best = model.clone();
        }
        history.push(EpochRecord {
            epoch,
            loss: epoch_loss,
            val_ap,
            lr,
            best_epoch: scheduler.best_epoch(),
            event,
        });
        match event {
            EpochEvent::Decay => {
                lr *= config.lr_decay;
                model.params = best.params.clone();
            }
            EpochEvent::Stop => break,
            EpochEvent::Improved | EpochEvent::Stagnant => {}
        }
    }

    Ok(TrainOutcome {
        best,
        best_val_ap: scheduler.best(),
        history,
    })
}

/// Replaces every detection score with the model's prediction. Boxes,
/// classes and detection order are untouched.
pub fn rescore_dataset(images: &[ImageRecord], model: &RescoringModel) -> Result<Vec<ImageRecord>> {
    images
        .par_iter()
        .map(|img| {
            let seq = extract_features(img, model.config.num_classes)?;
            let scores = seq.scatter(&model.predict(&seq), img.dets.len());
            let mut out = img.clone();
            for (d, s) in out.dets.iter_mut().zip(scores) {
                d.score = s;
            }
            Ok(out)
        })
        .collect()
}
