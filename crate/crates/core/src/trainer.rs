//! Mini-batch SGD with momentum, weight decay and step learning-rate
//! decay; early stopping on validation; k-fold cross-validation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{batch_tensor, mean_pixel, resize_bilinear, train_val_split, GrayImage, Label};
use crate::metrics::ScoredItem;
use crate::nets::{Checkpoint, NetSpec, Network, TrainMeta};
use crate::nn::{loss::softmax_rows, softmax_cross_entropy, Element, LayerParams, NnError, Phase, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Net(#[from] crate::nets::NetError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: u32,
    /// lr multiplier applied every `lr_decay_every_epochs`.
    pub lr_decay_factor: f64,
    pub lr_decay_every_epochs: u32,
    /// Epochs without validation-accuracy improvement (or with rising
    /// validation loss) tolerated before stopping.
    pub patience: u32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 32,
            max_epochs: 40,
            lr_decay_factor: 0.1,
            lr_decay_every_epochs: 10,
            patience: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(TrainError::Config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.patience == 0 {
            return Err(TrainError::Config("patience must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(TrainError::Config("max epochs must be >= 1".into()));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(TrainError::Config(format!(
                "lr decay factor must be in (0, 1], got {}",
                self.lr_decay_factor
            )));
        }
        if self.lr_decay_every_epochs == 0 {
            return Err(TrainError::Config("lr decay step must be >= 1".into()));
        }
        Ok(())
    }

    /// Step decay: `lr * factor^floor((epoch - 1) / step)` for 1-based epochs.
    pub fn learning_rate_at(&self, epoch: u32) -> f64 {
        let steps = (epoch - 1) / self.lr_decay_every_epochs;
        self.learning_rate * self.lr_decay_factor.powi(steps as i32)
    }
}

/// One momentum-SGD update:
/// `v <- momentum * v - lr * (g + weight_decay * w); w <- w + v`,
/// gradients zeroed afterward.
pub fn sgd_step<E: Element>(params: &mut LayerParams<E>, lr: f64, momentum: f64, weight_decay: f64) {
    fn update<E: Element>(weights: &mut [E], grads: &[E], velocity: &mut [E], lr: E, momentum: E, wd: E) {
        for i in 0..weights.len() {
            let v = momentum * velocity[i] - lr * (grads[i] + wd * weights[i]);
            velocity[i] = v;
            weights[i] += v;
        }
    }
    let lr = E::from_f64(lr);
    let momentum = E::from_f64(momentum);
    let wd = E::from_f64(weight_decay);
    let LayerParams {
        weights,
        bias,
        weight_grad,
        bias_grad,
        weight_velocity,
        bias_velocity,
    } = params;
    update(weights.data_mut(), weight_grad.data(), weight_velocity.data_mut(), lr, momentum, wd);
    update(bias.data_mut(), bias_grad.data(), bias_velocity.data_mut(), lr, momentum, wd);
    params.zero_grads();
}

/// Per-epoch training curve entry (epochs are 1-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// Early-stopping state: stop when validation accuracy has not improved
/// for `patience` epochs, or validation loss has risen for `patience`
/// consecutive epochs. Best epoch = highest accuracy, earliest on ties.
#[derive(Debug)]
pub struct EarlyStop {
    patience: u32,
    pub best_accuracy: f64,
    pub best_epoch: u32,
    epochs_since_improvement: u32,
    prev_loss: f64,
    consecutive_loss_rises: u32,
}

impl EarlyStop {
    pub fn new(patience: u32) -> Self {
        Self {
            patience,
            best_accuracy: f64::NEG_INFINITY,
            best_epoch: 0,
            epochs_since_improvement: 0,
            prev_loss: f64::INFINITY,
            consecutive_loss_rises: 0,
        }
    }

    /// Record one epoch; returns (improved, stop).
    pub fn observe(&mut self, epoch: u32, val_accuracy: f64, val_loss: f64) -> (bool, bool) {
        let improved = val_accuracy > self.best_accuracy;
        if improved {
            self.best_accuracy = val_accuracy;
            self.best_epoch = epoch;
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
        }
        if val_loss > self.prev_loss {
            self.consecutive_loss_rises += 1;
        } else {
            self.consecutive_loss_rises = 0;
        }
        self.prev_loss = val_loss;
        let stop = self.epochs_since_improvement >= self.patience
            || self.consecutive_loss_rises >= self.patience;
        (improved, stop)
    }
}

#[derive(Debug)]
pub struct FoldResult {
    pub fold: usize,
    /// Weights from the best-validation-accuracy epoch.
    pub best: Checkpoint,
    pub best_epoch: u32,
    pub stopped_epoch: u32,
    pub curves: Vec<EpochStats>,
}

/// Train one network on the given train/validation index sets.
pub fn train_fold(
    spec: &NetSpec,
    images: &[GrayImage],
    labels: &[Label],
    train_idx: &[usize],
    val_idx: &[usize],
    config: &TrainConfig,
    fold: usize,
) -> Result<FoldResult, TrainError> {
    config.validate()?;
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(TrainError::Config(format!(
            "fold {fold}: empty train ({}) or validation ({}) set",
            train_idx.len(),
            val_idx.len()
        )));
    }
    check_image_extents(spec, images)?;

    let mean = mean_pixel(images, train_idx);
    let mut net = Network::<f32>::build(spec, config.seed)?;
    net.set_mean_pixel(mean);
    // Dropout draws from a per-fold stream distinct from the init stream.
    net.reseed_dropout(config.seed.wrapping_add(0x5eed_0000).wrapping_add(fold as u64));

    let mut stopper = EarlyStop::new(config.patience);
    let mut curves = Vec::new();
    let mut best_blobs: Option<Vec<Vec<f32>>> = None;
    let mut stopped_epoch = config.max_epochs;

    let mut order: Vec<usize> = train_idx.to_vec();
    for epoch in 1..=config.max_epochs {
        let lr = config.learning_rate_at(epoch);
        // Per-epoch Fisher-Yates shuffle with a derived seed.
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            let x = batch_tensor(images, batch, mean);
            let targets = one_hot_targets(labels, batch, spec.classes);
            let logits = net.forward(&x, Phase::Train)?;
            let loss = softmax_cross_entropy(&logits, &targets)?;
            loss_sum += loss.value * batch.len() as f64;
            net.backward(&loss.gradient)?;
            net.visit_params_mut(&mut |p| {
                sgd_step(p, lr, config.momentum, config.weight_decay)
            });
        }
        let train_loss = loss_sum / train_idx.len() as f64;
        let (val_loss, val_accuracy) = evaluate(&mut net, images, labels, val_idx, config.batch_size)?;
        curves.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });

        let (improved, stop) = stopper.observe(epoch, val_accuracy, val_loss);
        if improved {
            best_blobs = Some(net.weight_blobs());
        }
        if stop {
            stopped_epoch = epoch;
            break;
        }
    }

    let meta = TrainMeta {
        epoch: stopper.best_epoch,
        seed: config.seed,
        val_accuracy_history: curves.iter().map(|c| c.val_accuracy).collect(),
        mean_pixel: Some(mean),
    };
    let best = Checkpoint {
        spec: spec.clone(),
        meta,
        blobs: best_blobs.expect("at least one epoch ran"),
    };
    Ok(FoldResult {
        fold,
        best,
        best_epoch: stopper.best_epoch,
        stopped_epoch,
        curves,
    })
}

/// Mean loss and accuracy over an index set, in inference mode.
fn evaluate(
    net: &mut Network<f32>,
    images: &[GrayImage],
    labels: &[Label],
    indices: &[usize],
    batch_size: usize,
) -> Result<(f64, f64), TrainError> {
    let mean = net
        .mean_pixel()
        .ok_or_else(|| TrainError::Config("network has no stored mean pixel".into()))?;
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    for batch in indices.chunks(batch_size) {
        let x = batch_tensor(images, batch, mean);
        let targets = one_hot_targets(labels, batch, net.class_count());
        let logits = net.forward(&x, Phase::Infer)?;
        let loss = softmax_cross_entropy(&logits, &targets)?;
        loss_sum += loss.value * batch.len() as f64;
        let probs = softmax_rows(&logits)?;
        for (row, &idx) in batch.iter().enumerate() {
            let p_diag = probs[row * net.class_count() + Label::Diagnostic.class_index()];
            let predicted = if p_diag >= 0.5 {
                Label::Diagnostic
            } else {
                Label::Nondiagnostic
            };
            if predicted == labels[idx] {
                correct += 1;
            }
        }
    }
    Ok((
        loss_sum / indices.len() as f64,
        correct as f64 / indices.len() as f64,
    ))
}

fn one_hot_targets(labels: &[Label], indices: &[usize], classes: usize) -> Tensor<f32> {
    let mut t = Tensor::zeros(vec![indices.len(), classes]);
    for (row, &idx) in indices.iter().enumerate() {
        t.data_mut()[row * classes + labels[idx].class_index()] = 1.0;
    }
    t
}

fn check_image_extents(spec: &NetSpec, images: &[GrayImage]) -> Result<(), TrainError> {
    let [_, h, w] = spec.input;
    for (i, img) in images.iter().enumerate() {
        if (img.height(), img.width()) != (h, w) {
            return Err(TrainError::Config(format!(
                "image {i} is {}x{} but the {} architecture expects {h}x{w} input",
                img.height(),
                img.width(),
                spec.name
            )));
        }
    }
    Ok(())
}

/// Probability of the diagnostic class for each selected image, batched.
/// Images whose extent differs from the network input are resized first.
pub fn score_images(
    net: &mut Network<f32>,
    images: &[GrayImage],
    indices: &[usize],
    batch_size: usize,
) -> Result<Vec<f64>, TrainError> {
    let mean = net
        .mean_pixel()
        .ok_or_else(|| TrainError::Config("checkpoint carries no mean pixel".into()))?;
    let [_, h, w] = net.input_shape();
    let mut scores = Vec::with_capacity(indices.len());
    for batch in indices.chunks(batch_size.max(1)) {
        let fitted: Vec<GrayImage> = batch
            .iter()
            .map(|&i| {
                if (images[i].height(), images[i].width()) == (h, w) {
                    Ok(images[i].clone())
                } else {
                    resize_bilinear(&images[i], w, h)
                }
            })
            .collect::<Result<_, _>>()?;
        let local: Vec<usize> = (0..fitted.len()).collect();
        let x = batch_tensor(&fitted, &local, mean);
        let logits = net.forward(&x, Phase::Infer)?;
        let probs = softmax_rows(&logits)?;
        let c = net.class_count();
        for row in 0..batch.len() {
            scores.push(probs[row * c + Label::Diagnostic.class_index()]);
        }
    }
    Ok(scores)
}

#[derive(Debug)]
pub struct CrossValOutcome {
    pub folds: Vec<FoldResult>,
    /// Held-out test scores per fold, in manifest index order within a fold.
    pub test_scores: Vec<Vec<ScoredItem>>,
    /// Manifest indices of each fold's test items.
    pub test_indices: Vec<Vec<usize>>,
    /// Wall-clock training time per fold.
    pub fold_seconds: Vec<f64>,
    /// Wall-clock spent scoring the held-out test folds.
    pub scoring_seconds: f64,
}

/// Full cross-validation: for each fold, the fold's items are the test
/// set, a quarter of the rest validates, and the remainder trains.
pub fn cross_validate(
    spec: &NetSpec,
    images: &[GrayImage],
    labels: &[Label],
    folds: &[usize],
    config: &TrainConfig,
) -> Result<CrossValOutcome, TrainError> {
    if folds.len() != labels.len() || folds.len() != images.len() {
        return Err(TrainError::Config(format!(
            "got {} images, {} labels, {} fold assignments",
            images.len(),
            labels.len(),
            folds.len()
        )));
    }
    let k = folds.iter().copied().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(TrainError::Config(format!("need at least 2 folds, got {k}")));
    }

    let mut outcome = CrossValOutcome {
        folds: Vec::with_capacity(k),
        test_scores: Vec::with_capacity(k),
        test_indices: Vec::with_capacity(k),
        fold_seconds: Vec::with_capacity(k),
        scoring_seconds: 0.0,
    };
    for fold in 0..k {
        let test: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] == fold).collect();
        let non_test: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] != fold).collect();
        if test.is_empty() {
            return Err(TrainError::Config(format!("fold {fold} has no test items")));
        }
        let (train, val) = train_val_split(&non_test, labels, config.seed)?;
        let fold_started = std::time::Instant::now();
        let result = train_fold(spec, images, labels, &train, &val, config, fold)?;
        outcome.fold_seconds.push(fold_started.elapsed().as_secs_f64());

        let mut net = result
            .best
            .to_network()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        let scoring_started = std::time::Instant::now();
        let scores = score_images(&mut net, images, &test, config.batch_size)?;
        outcome.scoring_seconds += scoring_started.elapsed().as_secs_f64();
        let items: Vec<ScoredItem> = scores
            .iter()
            .zip(&test)
            .map(|(&score, &idx)| ScoredItem {
                score,
                truth: labels[idx],
            })
            .collect();

        outcome.folds.push(result);
        outcome.test_scores.push(items);
        outcome.test_indices.push(test);
    }
    Ok(outcome)
}
