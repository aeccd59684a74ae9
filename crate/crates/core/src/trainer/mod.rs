//! Optimisation loop: seeded shuffling, minibatches, Adam with cosine-annealed
//! learning rate, per-epoch logging and resumable checkpoints.

mod adam;
mod checkpoint;
mod schedule;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use schedule::CosineSchedule;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::alignment::{AlignmentConfig, DEFAULT_TAU};
use crate::embedding_store::{rng, Bundle, ImageEmbeddings, TextBank};
use crate::error::{Error, Result};
use crate::hierarchy::ModelParams;
use crate::objective::{batch_loss_and_grads, Ablations, ObjectiveConfig};
use crate::scalar::Scalar;

/// Stream offsets that keep the shuffle and random-selection streams apart.
const SHUFFLE_STREAM: u64 = 1 << 32;
const SELECTION_STREAM: u64 = 2 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub n: usize,
    #[serde(alias = "K")]
    pub k: usize,
    pub tau: f64,
    pub lambda_ood: f64,
    pub renormalize_aggregates: bool,
    pub ablations: Ablations,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            lr: 0.002,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            n: 2,
            k: 4,
            tau: DEFAULT_TAU,
            lambda_ood: 1.0,
            renormalize_aggregates: false,
            ablations: Ablations::default(),
        }
    }
}

impl TrainConfig {
    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            alignment: AlignmentConfig {
                tau: self.tau,
                renormalize_aggregates: self.renormalize_aggregates,
            },
            k: self.k,
            lambda_ood: self.lambda_ood,
            ablations: self.ablations,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.n < 1 {
            return Err(Error::Config("n must be >= 1".into()));
        }
        self.objective().validate(self.n)
    }
}

/// `W = 0`, `b⁰ = b² = 0`: training starts at the frozen zero-shot model.
/// The seed is accepted for interface symmetry and does not affect the result.
pub fn init_params<T: Scalar>(d: usize, num_classes: usize, _seed: u64) -> ModelParams<T> {
    ModelParams::zeros(d, num_classes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Learning rate at the first step of the epoch.
    pub lr: f64,
    pub l_id: f64,
    pub l_ood: f64,
    pub total: f64,
}

/// Drives training over the labeled items of a bundle.
pub struct Trainer<'a, T> {
    cfg: TrainConfig,
    items: Vec<&'a ImageEmbeddings<T>>,
    text: &'a TextBank<T>,
    params: ModelParams<T>,
    optimizer: AdamState<T>,
    schedule: CosineSchedule,
    epoch: usize,
    step: usize,
    log: Vec<EpochLog>,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    pub fn new(bundle: &'a Bundle<T>, cfg: TrainConfig) -> Result<Self> {
        let params = init_params(bundle.d, bundle.num_classes(), cfg.seed);
        let optimizer = AdamState::new(bundle.d, bundle.num_classes());
        Self::assemble(bundle, cfg, params, optimizer, 0, 0)
    }

    /// Continues from a checkpoint; its config snapshot governs the run.
    pub fn resume(bundle: &'a Bundle<T>, ckpt: Checkpoint<T>) -> Result<Self> {
        if ckpt.params.dim() != bundle.d || ckpt.params.num_classes() != bundle.num_classes() {
            return Err(Error::Contract("checkpoint shape does not match bundle".into()));
        }
        Self::assemble(bundle, ckpt.config, ckpt.params, ckpt.optimizer, ckpt.epoch, ckpt.step)
    }

    fn assemble(
        bundle: &'a Bundle<T>,
        cfg: TrainConfig,
        params: ModelParams<T>,
        optimizer: AdamState<T>,
        epoch: usize,
        step: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        if bundle.n != cfg.n {
            return Err(Error::Config(format!(
                "bundle has n = {}, config has n = {}",
                bundle.n, cfg.n
            )));
        }
        let items: Vec<&ImageEmbeddings<T>> = bundle.labeled().collect();
        let mut per_class = vec![0usize; bundle.num_classes()];
        for it in &items {
            per_class[it.class().unwrap()] += 1;
        }
        if let Some(c) = per_class.iter().position(|&k| k == 0) {
            return Err(Error::Data(format!(
                "class {c} (`{}`) has no labeled training items",
                bundle.class_names[c]
            )));
        }
        let steps_per_epoch = items.len().div_ceil(cfg.batch_size);
        let schedule = CosineSchedule::new(cfg.lr, steps_per_epoch * cfg.epochs);
        Ok(Self {
            cfg,
            items,
            text: &bundle.text,
            params,
            optimizer,
            schedule,
            epoch,
            step,
            log: Vec::new(),
        })
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn log(&self) -> &[EpochLog] {
        &self.log
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
            config: self.cfg.clone(),
            epoch: self.epoch,
            step: self.step,
        }
    }

    fn epoch_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.items.len()).collect();
        let mut r = rng::stream(self.cfg.seed, SHUFFLE_STREAM + self.epoch as u64);
        order.shuffle(&mut r);
        order
    }

    /// One pass over the shuffled training items; the last partial batch is kept.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let obj = self.cfg.objective();
        let adam = self.cfg.adam();
        let order = self.epoch_order();
        let first_lr = self.schedule.lr(self.step);
        let (mut l_id, mut l_ood, mut total) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<&ImageEmbeddings<T>> = chunk.iter().map(|&i| self.items[i]).collect();
            let selection_seed = rng::stream(self.cfg.seed, SELECTION_STREAM + self.step as u64).next_u64();
            let (loss, grads) = batch_loss_and_grads(&batch, &self.params, self.text, &obj, selection_seed)?;
            if !loss.total.is_finite() || !grads.is_finite() {
                return Err(Error::NonFinite {
                    epoch: self.epoch,
                    step: self.step,
                    batch_ids: batch.iter().map(|it| it.id.clone()).collect(),
                });
            }
            let lr = self.schedule.lr(self.step);
            self.optimizer.step(&adam, lr, &mut self.params, &grads);
            self.step += 1;
            let w = batch.len() as f64;
            l_id += loss.l_id.to_f64_lossy() * w;
            l_ood += loss.l_ood.to_f64_lossy() * w;
            total += loss.total.to_f64_lossy() * w;
            debug!("epoch {} step {} lr {lr:.3e} loss {}", self.epoch, self.step, loss.total);
        }
        let n = self.items.len() as f64;
        let entry = EpochLog {
            epoch: self.epoch,
            lr: first_lr,
            l_id: l_id / n,
            l_ood: l_ood / n,
            total: total / n,
        };
        info!(
            "epoch {:>3}  lr {:.2e}  l_id {:.4}  l_ood {:.4}  total {:.4}",
            entry.epoch, entry.lr, entry.l_id, entry.l_ood, entry.total
        );
        self.epoch += 1;
        self.log.push(entry.clone());
        Ok(entry)
    }

    /// Runs until `stop_after` epochs have completed (or the configured total).
    pub fn run(&mut self, stop_after: Option<usize>) -> Result<()> {
        let end = stop_after.unwrap_or(self.cfg.epochs).min(self.cfg.epochs);
        while self.epoch < end {
            self.run_epoch()?;
        }
        Ok(())
    }
}

/// Result of a complete training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub checkpoint: Checkpoint<T>,
    pub log: Vec<EpochLog>,
}

/// Trains from zero initialization for `cfg.epochs` epochs.
pub fn train<T: Scalar>(bundle: &Bundle<T>, cfg: TrainConfig) -> Result<TrainOutcome<T>> {
    let mut trainer = Trainer::new(bundle, cfg)?;
    trainer.run(None)?;
    Ok(TrainOutcome {
        checkpoint: trainer.checkpoint(),
        log: trainer.log,
    })
}
