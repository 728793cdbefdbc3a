//! Mini-batch training with Adam, learning-rate reduction on plateau and
//! early stopping on validation loss.

use super::{cross_entropy, Adam, AdamState, Mode, Model, NnError, Real, Tensor3};
use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub init_lr: f64,
    pub lr_factor: f64,
    /// Epochs without improvement before the learning rate is reduced.
    pub lr_patience: usize,
    /// Epochs without improvement before training stops.
    pub early_stop_patience: usize,
    /// Validation loss must drop by more than this to count as improvement.
    pub min_delta: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            init_lr: 1e-3,
            lr_factor: 0.5,
            lr_patience: 40,
            early_stop_patience: 80,
            min_delta: 1e-4,
            max_epochs: 1500,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::BadConfig(m.into()));
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad("lr_factor must be in (0, 1)");
        }
        if self.lr_patience == 0 || self.early_stop_patience == 0 {
            return bad("patiences must be >= 1");
        }
        if self.early_stop_patience <= self.lr_patience {
            return bad("early_stop_patience must exceed lr_patience");
        }
        if !(self.init_lr > 0.0) || self.batch_size == 0 || self.max_epochs == 0 {
            return bad("init_lr, batch_size and max_epochs must be positive");
        }
        Ok(())
    }
}

/// Decision after one epoch's validation loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PlateauAction {
    pub improved: bool,
    pub reduce_lr: bool,
    pub stop: bool,
}

/// Reduce-on-plateau and early-stopping counters over one metric.
#[derive(Debug, Clone)]
pub struct PlateauTracker {
    best: f64,
    since_reduce: usize,
    since_best: usize,
    lr_patience: usize,
    stop_patience: usize,
    min_delta: f64,
}

impl PlateauTracker {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            best: f64::INFINITY,
            since_reduce: 0,
            since_best: 0,
            lr_patience: cfg.lr_patience,
            stop_patience: cfg.early_stop_patience,
            min_delta: cfg.min_delta,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, loss: f64) -> PlateauAction {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.since_reduce = 0;
            self.since_best = 0;
            return PlateauAction {
                improved: true,
                ..Default::default()
            };
        }
        self.since_reduce += 1;
        self.since_best += 1;
        let reduce_lr = self.since_reduce >= self.lr_patience;
        if reduce_lr {
            self.since_reduce = 0;
        }
        PlateauAction {
            improved: false,
            reduce_lr,
            stop: self.since_best >= self.stop_patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// Zero-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epochs after which the learning rate was reduced.
    pub lr_reductions: Vec<usize>,
    pub best_epoch: usize,
    /// Epoch at which early stopping fired, if it did.
    pub stopped_at: Option<usize>,
}

impl TrainHistory {
    pub fn train_loss(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn val_loss(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_loss).collect()
    }

    pub fn val_accuracy(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_accuracy).collect()
    }

    pub fn lr(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.lr).collect()
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best_epoch)
    }
}

pub struct TrainOutcome<R> {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Model<R>,
    pub history: TrainHistory,
}

/// Preprocessed inputs and their class indices.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    pub xs: &'a [Vec<f64>],
    pub ys: &'a [usize],
}

impl<'a> Samples<'a> {
    pub fn new(xs: &'a [Vec<f64>], ys: &'a [usize]) -> Self {
        assert_eq!(xs.len(), ys.len());
        Self { xs, ys }
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    fn batch<R: Real>(&self, idx: &[usize]) -> Result<(Tensor3<R>, Vec<usize>), NnError> {
        let refs: Vec<&[f64]> = idx.iter().map(|&i| self.xs[i].as_slice()).collect();
        Ok((Tensor3::from_series(&refs)?, idx.iter().map(|&i| self.ys[i]).collect()))
    }
}

/// Infer-mode mean cross-entropy and accuracy.
pub fn evaluate_loss<R: Real>(model: &Model<R>, data: Samples<'_>, batch_size: usize) -> Result<(f64, f64), NnError> {
    if data.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let c = model.n_classes();
    let idx: Vec<usize> = (0..data.len()).collect();
    let (mut loss, mut correct) = (0.0, 0usize);
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = data.batch::<R>(chunk)?;
        let probs = model.forward(&x, Mode::Infer)?;
        loss += cross_entropy(&probs, &y, c)?.to_f64().unwrap() * chunk.len() as f64;
        for (row, &t) in probs.chunks(c).zip(&y) {
            if super::argmax(row) == t {
                correct += 1;
            }
        }
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Trains `model` and returns the snapshot with the best validation loss.
///
/// Each epoch shuffles the training set with a generator seeded from
/// `cfg.seed`, takes one Adam step per mini-batch, then scores the
/// validation set in inference mode. Runs are deterministic for a fixed seed.
pub fn train<R: Real>(
    mut model: Model<R>,
    train_set: Samples<'_>,
    val_set: Samples<'_>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<R>, NnError> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let c = model.n_classes();
    if let Some(&y) = train_set.ys.iter().chain(val_set.ys).find(|&&y| y >= c) {
        return Err(NnError::ShapeMismatch(format!("label {y} for {c} classes")));
    }

    let adam = Adam::default();
    let mut state = AdamState::new(&model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tracker = PlateauTracker::new(cfg);
    let mut history = TrainHistory::default();
    let mut best = model.clone();
    let mut lr = cfg.init_lr;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let eval_batch = cfg.batch_size.max(64);

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = train_set.batch::<R>(chunk)?;
            let cache = model.forward_train(&x)?;
            let loss = cross_entropy(&cache.probs, &y, c)?.to_f64().unwrap();
            loss_sum += loss * chunk.len() as f64;
            let grad = model.backward(&cache, &y)?;
            model.apply_running_stats(&cache);
            adam.step(model.params_mut(), &grad.params(), &mut state, lr);
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let (val_loss, val_accuracy) = evaluate_loss(&model, val_set, eval_batch)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
            lr,
        });
        debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} acc {val_accuracy:.4} lr {lr:e}");
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(NnError::DivergedLoss { epoch, history });
        }

        let action = tracker.observe(val_loss);
        if action.improved {
            best = model.clone();
            history.best_epoch = epoch;
        }
        if action.reduce_lr {
            lr *= cfg.lr_factor;
            history.lr_reductions.push(epoch);
        }
        if action.stop {
            history.stopped_at = Some(epoch);
            break;
        }
    }
    Ok(TrainOutcome { model: best, history })
}
