//! Masked next-token training of the connector and LM with the encoder frozen.

mod log;
mod optim;

pub use log::{StepRecord, TrainLog};
pub use optim::{lr_at, AdamW};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{CorpusManifest, ExampleRecord};
use crate::exec::Exec;
use crate::model::{Checkpoint, CheckpointMeta, Lsm, ModelError, Prefix};
use crate::numerics::{Graph, NumericsError, Tensor};
use crate::vocab::TokenId;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite loss or gradient at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint does not match this model: {0}")]
    Resume(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub epochs: u64,
    pub seed: u64,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 0.05,
            warmup_steps: 20,
            epochs: 8,
            seed: 0,
            clip_norm: 1.0,
        }
    }
}

impl TrainConfig {
    /// The large-scale reference recipe (batch 512, lr 2e-5, weight decay 0.05, 100 warmup steps, 2 epochs).
    pub fn reference() -> Self {
        Self {
            batch_size: 512,
            learning_rate: 2e-5,
            weight_decay: 0.05,
            warmup_steps: 100,
            epochs: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }
}

/// Model input for one example, with the frozen encoder already applied.
#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    /// Encoder output `H`.
    Encoded(Tensor),
    Text(Vec<TokenId>),
}

impl Source {
    pub fn prefix(&self) -> Prefix<'_> {
        match self {
            Source::Encoded(h) => Prefix::Encoded(h),
            Source::Text(t) => Prefix::Text(t),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    pub source: Source,
    pub instruction: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

/// Featurizes and encodes every record; the encoder is frozen, so this is done once.
pub fn prepare_speech(
    model: &Lsm,
    records: &[ExampleRecord],
    sigma: f64,
    exec: Exec,
) -> Result<Vec<TrainExample>, ModelError> {
    exec.map(records, |_, r| {
        let s = r.speech(model.config(), sigma)?;
        Ok(TrainExample {
            source: Source::Encoded(model.encode_speech(&s)?),
            instruction: r.instruction.clone(),
            target: r.target.clone(),
        })
    })
    .into_iter()
    .collect()
}

/// Transcript-prefixed examples for training a text-only LM.
pub fn prepare_text(records: &[ExampleRecord]) -> Vec<TrainExample> {
    records
        .iter()
        .map(|r| TrainExample {
            source: Source::Text(r.source.clone()),
            instruction: r.instruction.clone(),
            target: r.target.clone(),
        })
        .collect()
}

/// Mean cross-entropy over the target positions (and EOS) of one example.
pub fn compute_loss(model: &Lsm, example: &TrainExample) -> Result<f64, ModelError> {
    let mut g = Graph::new();
    let l = model.loss_graph(
        &mut g,
        example.source.prefix(),
        &example.instruction,
        &example.target,
        None,
        false,
    )?;
    Ok(g.value(l).item())
}

type ExampleGrad = (f64, Vec<(usize, Vec<f64>)>);

fn example_grad(model: &Lsm, ex: &TrainExample) -> Result<ExampleGrad, ModelError> {
    let mut g = Graph::new().with_finite_checks(false);
    let l = model.loss_graph(&mut g, ex.source.prefix(), &ex.instruction, &ex.target, None, true)?;
    let loss = g.value(l).item();
    let grads = g.backward(l)?;
    Ok((loss, grads.params().map(|(k, v)| (k, v.to_vec())).collect()))
}

/// Mean loss and summed-then-averaged gradients over `batch`, accumulated in batch order.
pub fn batch_gradient(
    model: &Lsm,
    batch: &[&TrainExample],
    exec: Exec,
) -> Result<(f64, Vec<Vec<f64>>), ModelError> {
    let per = exec.map(batch, |_, ex| example_grad(model, ex));
    let mut total = model
        .params()
        .iter()
        .map(|(_, p)| if p.frozen { Vec::new() } else { vec![0.0; p.tensor.len()] })
        .collect::<Vec<_>>();
    let mut loss = 0.0;
    for r in per {
        let (l, grads) = r?;
        loss += l;
        for (k, g) in grads {
            for (t, v) in total[k].iter_mut().zip(&g) {
                *t += v;
            }
        }
    }
    let n = batch.len() as f64;
    for g in &mut total {
        g.iter_mut().for_each(|v| *v /= n);
    }
    Ok((loss / n, total))
}

/// Optimizer state plus the position in the schedule; persisted in checkpoints.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub optim: AdamW,
    pub step: u64,
    pub epochs_done: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, model: &Lsm) -> Result<Self, TrainError> {
        cfg.validate()?;
        Ok(Self {
            optim: AdamW::new(model.params()),
            cfg,
            step: 0,
            epochs_done: 0,
        })
    }

    /// Restores optimizer moments and schedule position saved by [`Trainer::checkpoint`].
    pub fn resume(cfg: TrainConfig, model: &Lsm, ckpt: &Checkpoint) -> Result<Self, TrainError> {
        let mut t = Self::new(cfg, model)?;
        t.step = ckpt.meta.step;
        t.epochs_done = ckpt.meta.epochs;
        if t.step > 0 {
            t.optim.load(model.params(), ckpt).map_err(TrainError::Resume)?;
        }
        Ok(t)
    }

    /// Weights plus optimizer moments (moments only once a step has been taken).
    pub fn checkpoint(&self, model: &Lsm, mut meta: CheckpointMeta) -> Checkpoint {
        meta.step = self.step;
        meta.epochs = self.epochs_done;
        meta.seed = self.cfg.seed;
        let mut ckpt = model.to_checkpoint(meta);
        if self.step > 0 {
            self.optim.store(model.params(), &mut ckpt);
        }
        ckpt
    }

    /// Example order for `epoch`, a function of `(seed, epoch)` only.
    pub fn epoch_order(&self, n: usize, epoch: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Runs epochs until `cfg.epochs` have been completed in total.
    pub fn run(
        &mut self,
        model: &mut Lsm,
        data: &[TrainExample],
        exec: Exec,
        log: &mut TrainLog,
    ) -> Result<(), TrainError> {
        if data.is_empty() {
            return Err(TrainError::EmptyCorpus);
        }
        while self.epochs_done < self.cfg.epochs {
            let order = self.epoch_order(data.len(), self.epochs_done);
            let mut epoch_loss = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(self.cfg.batch_size) {
                let batch: Vec<&TrainExample> = chunk.iter().map(|&i| &data[i]).collect();
                let rec = self.step(model, &batch, exec)?;
                epoch_loss += rec.loss;
                batches += 1;
                log.steps.push(rec);
            }
            self.epochs_done += 1;
            log.epoch_loss.push(epoch_loss / batches as f64);
        }
        Ok(())
    }

    /// One optimizer step on `batch`.
    pub fn step(&mut self, model: &mut Lsm, batch: &[&TrainExample], exec: Exec) -> Result<StepRecord, TrainError> {
        let step = self.step + 1;
        let (loss, mut grads) = batch_gradient(model, batch, exec).map_err(|e| match e {
            ModelError::Numerics(NumericsError::NonFinite { .. }) => TrainError::NonFiniteLoss { step },
            e => e.into(),
        })?;
        let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        if !loss.is_finite() || !norm.is_finite() {
            return Err(TrainError::NonFiniteLoss { step });
        }
        if norm > self.cfg.clip_norm {
            let s = self.cfg.clip_norm / norm;
            grads.iter_mut().flatten().for_each(|g| *g *= s);
        }
        let lr = lr_at(self.cfg.learning_rate, self.cfg.warmup_steps, step);
        self.optim
            .update(model.params_mut(), &grads, lr, self.cfg.weight_decay, step);
        self.step = step;
        Ok(StepRecord {
            step,
            epoch: self.epochs_done,
            loss,
            lr,
            grad_norm: norm,
        })
    }
}

/// Encodes the corpus and trains `model` from scratch; returns the final checkpoint and the log.
pub fn train(
    corpus: &CorpusManifest,
    model: &mut Lsm,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<(Checkpoint, TrainLog), TrainError> {
    let data = prepare_speech(model, &corpus.records, corpus.header.sigma, exec)?;
    let mut trainer = Trainer::new(cfg.clone(), model)?;
    let mut log = TrainLog::new(cfg.seed);
    trainer.run(model, &data, exec, &mut log)?;
    let meta = CheckpointMeta {
        train_ids: Some(corpus.id_range()),
        ..CheckpointMeta::default()
    };
    Ok((trainer.checkpoint(model, meta), log))
}
