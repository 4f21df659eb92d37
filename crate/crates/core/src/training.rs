//! Mini-batch Adam with early stopping on validation loss.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    init_params, loss, loss_and_grad_subset, validate_segments, ModelConfig, ModelParams,
};
use crate::segment::Segment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            batch_size: 64,
            max_epochs: 100,
            patience: 5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Parameter(format!("lr = {} must be positive", self.lr)));
        }
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::Parameter(
                "batch_size, patience and max_epochs must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Parameter("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Parameter("adam_eps must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch with the lowest validation loss.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best_epoch.checked_sub(1)?)
    }

    /// JSON-lines rendering, one record per epoch.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.epochs {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Same history with wall-clock times zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        let mut h = self.clone();
        h.epochs.iter_mut().for_each(|r| r.seconds = 0.0);
        h
    }
}

/// Adam with bias correction. Moment buffers mirror the parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ModelParams, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            lr: cfg.lr,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Tracks the best validation loss and decides when to stop.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best_loss: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records `val_loss` for `epoch`; returns true if it is a new best.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> bool {
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }
}

fn check_finite(epoch: usize, batch: usize, loss: f64, grads: &ModelParams) -> Result<()> {
    if loss.is_finite() && grads.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { epoch, batch, loss })
    }
}

pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &[Segment],
    val_set: &[Segment],
) -> Result<(ModelParams, TrainHistory)> {
    train_with(model_cfg, train_cfg, train_set, val_set, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &[Segment],
    val_set: &[Segment],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelParams, TrainHistory)> {
    train_cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Parameter(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let mut params = init_params(model_cfg)?;
    validate_segments(&params, train_set)?;
    validate_segments(&params, val_set)?;
    let mut adam = Adam::new(&params, train_cfg);
    let mut stopper = EarlyStopping::new(train_cfg.patience);
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best = params.clone();
    let mut epochs = Vec::new();

    for epoch in 1..=train_cfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, idx) in order.chunks(train_cfg.batch_size).enumerate() {
            let (l, grads) = match loss_and_grad_subset(&params, train_set, idx) {
                Ok(v) => v,
                Err(Error::EmptyBatch) => continue,
                Err(e) => return Err(e),
            };
            check_finite(epoch, b + 1, l, &grads)?;
            adam.update(&mut params, &grads);
            loss_sum += l;
            batches += 1;
        }
        if batches == 0 {
            return Err(Error::EmptyBatch);
        }
        let val_loss = loss(&params, val_set)?;
        if !val_loss.is_finite() || !params.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: batches,
                loss: val_loss,
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {:.4} val {:.4} ({:.1} s)",
            record.train_loss,
            record.val_loss,
            record.seconds
        );
        on_epoch(&record);
        epochs.push(record);
        if stopper.observe(epoch, val_loss) {
            best = params.clone();
        }
        if stopper.should_stop() {
            break;
        }
    }
    Ok((
        best,
        TrainHistory {
            epochs,
            best_epoch: stopper.best_epoch(),
        },
    ))
}
