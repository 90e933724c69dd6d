//! Mini-batch classification training with a cross-entropy readout loss.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};
use crate::params::Network;
use crate::real::Real;
use crate::sim::{simulate, simulate_with_tape, Engine, SimConfig};
use crate::spikes::{Input, SpikeTensor};
use crate::train::adam::{adam_step, AdamConfig, AdamState};
use crate::train::backward::{backward, DetachPolicy, GradConfig, OutputGrad};
use crate::train::loss::{cross_entropy_readout, predict};
use crate::train::surrogate::SurrogateKind;

/// Labelled spike trains, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: SpikeTensor,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(inputs: SpikeTensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.batch() != labels.len() {
            return invalid_arg(format!("{} samples but {} labels", inputs.batch(), labels.len()));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub engine: Engine,
    pub surrogate: SurrogateKind,
    pub detach: DetachPolicy,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    /// Stop once an epoch reaches this training accuracy.
    pub stop_at_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            engine: Engine::Block,
            surrogate: SurrogateKind::default(),
            detach: DetachPolicy::default(),
            adam: AdamConfig::default(),
            epochs: 200,
            batch_size: 64,
            seed: 0,
            stop_at_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.adam.lr > 0.0) {
            return invalid_arg(format!("learning rate must be positive, got {}", self.adam.lr));
        }
        if self.batch_size == 0 {
            return invalid_arg("batch size must be positive");
        }
        Ok(())
    }

    fn grad(&self) -> GradConfig {
        GradConfig {
            surrogate: self.surrogate,
            detach: self.detach,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
    pub wall_secs: f64,
    /// Whether this epoch lowered the training error and was saved.
    pub checkpoint: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub log: Vec<EpochLog>,
    /// Parameters after the epoch with the lowest training error.
    pub best: Network<F>,
    pub best_accuracy: f64,
}

/// One optimizer step on a mini-batch. Returns the loss and the number of
/// correct predictions, both measured before the update.
pub fn train_step<F: Real>(
    net: &mut Network<F>,
    batch: &Dataset,
    cfg: &TrainConfig,
    state: &mut AdamState,
    lr: f64,
) -> Result<(f64, usize)> {
    let sim = SimConfig::new(cfg.engine);
    let (rollout, tape) = simulate_with_tape(net, Input::Spikes(&batch.inputs), &sim)?;
    let Some(o) = rollout.readout.as_ref() else {
        return invalid_arg("classification needs a readout layer");
    };
    let (loss, grad) = cross_entropy_readout(o.view(), &batch.labels)?;
    let correct = predict(o.view()).iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
    let out = OutputGrad {
        readout: Some(grad),
        spikes: None,
    };
    let grads = backward(net, &tape, &out, &cfg.grad())?;
    adam_step(net, &grads, state, &cfg.adam, lr)?;
    Ok((loss, correct))
}

/// Trains `net` in place and returns the per-epoch log with the best
/// parameters seen.
pub fn train_classifier<F: Real>(
    net: &mut Network<F>,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    if data.is_empty() {
        return invalid_arg("training set is empty");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut state = AdamState::default();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best = net.clone();
    let mut best_accuracy = f64::NEG_INFINITY;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = cfg.adam.lr_at(epoch);
        order.shuffle(&mut rng);
        let (mut loss, mut correct) = (0.0, 0);
        for rows in order.chunks(cfg.batch_size) {
            let batch = data.select(rows);
            let (l, c) = train_step(net, &batch, cfg, &mut state, lr)?;
            loss += l * rows.len() as f64;
            correct += c;
        }
        let accuracy = correct as f64 / data.len() as f64;
        let checkpoint = accuracy > best_accuracy;
        if checkpoint {
            best_accuracy = accuracy;
            best = net.clone();
        }
        let entry = EpochLog {
            epoch,
            loss: loss / data.len() as f64,
            accuracy,
            lr,
            wall_secs: start.elapsed().as_secs_f64(),
            checkpoint,
        };
        on_epoch(&entry);
        log.push(entry);
        if cfg.stop_at_accuracy.is_some_and(|t| accuracy >= t) {
            break;
        }
    }
    Ok(TrainOutcome {
        log,
        best,
        best_accuracy,
    })
}

/// Mean loss and accuracy of `net` on `data`.
pub fn evaluate<F: Real>(net: &Network<F>, data: &Dataset, engine: Engine, batch_size: usize) -> Result<(f64, f64)> {
    if data.is_empty() {
        return invalid_arg("evaluation set is empty");
    }
    let rows: Vec<usize> = (0..data.len()).collect();
    let (mut loss, mut correct) = (0.0, 0);
    for chunk in rows.chunks(batch_size.max(1)) {
        let batch = data.select(chunk);
        let r = simulate(net, Input::Spikes(&batch.inputs), &SimConfig::new(engine))?;
        let Some(o) = r.readout.as_ref() else {
            return invalid_arg("classification needs a readout layer");
        };
        loss += cross_entropy_readout(o.view(), &batch.labels)?.0 * chunk.len() as f64;
        correct += predict(o.view()).iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
    }
    Ok((loss / data.len() as f64, correct as f64 / data.len() as f64))
}
