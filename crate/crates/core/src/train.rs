//! P x K identity-balanced sampling and the training loop.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{GaitError, Result};
use crate::losses::{total_loss, ClassifierHead, LossBreakdown, LossConfig};
use crate::model::{ModelConfig, SmplGait};
use crate::nn::{Grads, ParamStore};
use crate::optim::{lr_at, Adam};
use crate::preprocess::sample_frames;
use crate::types::GaitSample;

/// RNG streams; each consumer derives its generator from `(seed, stream)`.
const STREAM_INIT: u64 = 1;
const STREAM_BATCH: u64 = 2;

pub const LOG_HEADER: &str = "epoch,iter,l_tri,l_ce,total,lr";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Identities per batch (P).
    pub ids_per_batch: usize,
    /// Sequences per identity (K).
    pub samples_per_id: usize,
    /// Frames cut from every sequence (L).
    pub frames: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub lr_milestones: Vec<usize>,
    pub lr_gamma: f64,
    pub seed: u64,
    /// Save a checkpoint every this many epochs (0 = final only).
    pub checkpoint_every: usize,
    /// Iterations per epoch; by default `ceil(#train sequences / (P * K))`.
    pub iters_per_epoch: Option<usize>,
    /// Clip the global gradient norm to this value when set.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ids_per_batch: 32,
            samples_per_id: 4,
            frames: 30,
            epochs: 1200,
            lr: 1e-3,
            weight_decay: 5e-4,
            lr_milestones: vec![200, 600],
            lr_gamma: 0.1,
            seed: 0,
            checkpoint_every: 0,
            iters_per_epoch: None,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(GaitError::Config(m));
        if self.ids_per_batch < 2 || self.samples_per_id < 2 {
            return err(format!(
                "need P >= 2 and K >= 2, got P={} K={}",
                self.ids_per_batch, self.samples_per_id
            ));
        }
        if self.frames == 0 || self.epochs == 0 {
            return err("frames and epochs must be positive".into());
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) || !(self.lr_gamma > 0.0) {
            return err("lr and lr_gamma must be > 0, weight_decay >= 0".into());
        }
        if self.lr_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return err(format!("lr_milestones must be strictly increasing: {:?}", self.lr_milestones));
        }
        if self.lr_milestones.last().is_some_and(|&m| m >= self.epochs) {
            return err(format!(
                "lr milestone {:?} not below epochs {}",
                self.lr_milestones.last(),
                self.epochs
            ));
        }
        if self.iters_per_epoch == Some(0) || self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return err("iters_per_epoch and grad_clip must be positive when set".into());
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_at(self.lr, epoch, &self.lr_milestones, self.lr_gamma)
    }

    pub fn batch_size(&self) -> usize {
        self.ids_per_batch * self.samples_per_id
    }

    pub fn iterations_per_epoch(&self, train_sequences: usize) -> usize {
        self.iters_per_epoch
            .unwrap_or_else(|| train_sequences.div_ceil(self.batch_size()).max(1))
    }
}

/// Training sequences grouped by identity; labels index `classes`.
#[derive(Debug, Clone)]
pub struct TrainSet {
    pub samples: Vec<GaitSample>,
    /// Subject id of every class label, ascending.
    pub classes: Vec<u32>,
    pub labels: Vec<usize>,
    by_class: Vec<Vec<usize>>,
}

impl TrainSet {
    pub fn new(samples: Vec<GaitSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(GaitError::Empty("no training sequences".into()));
        }
        let mut classes: Vec<u32> = samples.iter().map(|s| s.subject_id).collect();
        classes.sort_unstable();
        classes.dedup();
        let labels: Vec<usize> = samples
            .iter()
            .map(|s| classes.binary_search(&s.subject_id).unwrap())
            .collect();
        let mut by_class = vec![Vec::new(); classes.len()];
        for (i, &l) in labels.iter().enumerate() {
            by_class[l].push(i);
        }
        Ok(Self {
            samples,
            classes,
            labels,
            by_class,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// P distinct identities, K sequences each (drawn with replacement only
    /// when an identity has fewer than K), every sequence cut to L frames.
    pub fn sample_batch<R: Rng>(&self, cfg: &TrainConfig, rng: &mut R) -> Result<Batch> {
        let (p, k) = (cfg.ids_per_batch, cfg.samples_per_id);
        if self.num_classes() < p {
            return Err(GaitError::Data(format!(
                "batch needs {p} identities, training split has {}",
                self.num_classes()
            )));
        }
        let mut ids: Vec<usize> = sample(rng, self.num_classes(), p).into_vec();
        ids.sort_unstable();
        let mut batch = Batch::default();
        for c in ids {
            let pool = &self.by_class[c];
            let picks: Vec<usize> = if pool.len() >= k {
                sample(rng, pool.len(), k).into_vec()
            } else {
                (0..k).map(|_| rng.random_range(0..pool.len())).collect()
            };
            for i in picks {
                let s = &self.samples[pool[i]];
                batch.samples.push(sample_frames(s, cfg.frames, rng.random())?);
                batch.labels.push(c);
                batch.sequence_ids.push(s.sequence_id.clone());
            }
        }
        Ok(batch)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub samples: Vec<GaitSample>,
    pub labels: Vec<usize>,
    pub sequence_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub epoch: usize,
    pub iteration: u64,
    pub loss: LossBreakdown,
    pub lr: f64,
}

impl StepReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.iteration, self.loss.triplet, self.loss.ce, self.loss.total, self.lr
        )
    }
}

/// Model, classifier head, optimizer state and iteration counter.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model_cfg: ModelConfig,
    pub loss_cfg: LossConfig,
    pub train_cfg: TrainConfig,
    pub model: SmplGait,
    pub head: ClassifierHead,
    pub store: ParamStore,
    pub adam: Adam,
    pub classes: Vec<u32>,
    /// Iterations completed so far.
    pub iteration: u64,
}

fn stream_rng(seed: u64, stream: u64, word: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ word.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream);
    rng
}

impl Trainer {
    pub fn new(model_cfg: ModelConfig, loss_cfg: LossConfig, train_cfg: TrainConfig, classes: Vec<u32>) -> Result<Self> {
        model_cfg.validate()?;
        loss_cfg.validate()?;
        train_cfg.validate()?;
        if classes.len() < 2 {
            return Err(GaitError::Data(format!("need at least 2 identities, got {}", classes.len())));
        }
        let mut rng = stream_rng(train_cfg.seed, STREAM_INIT, 0);
        let mut store = ParamStore::new();
        let model = SmplGait::new(&model_cfg, &mut store, rng.random())?;
        let head = ClassifierHead::new(
            &mut store,
            model_cfg.parts(),
            model_cfg.part_dim,
            classes.len(),
            model_cfg.bn_eps,
            model_cfg.bn_momentum,
            &mut rng,
        );
        let adam = Adam::new(&store, train_cfg.weight_decay);
        Ok(Self {
            model_cfg,
            loss_cfg,
            train_cfg,
            model,
            head,
            store,
            adam,
            classes,
            iteration: 0,
        })
    }

    /// Rebuilds a trainer from a checkpoint, optimizer state included.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut t = Self::new(
            ckpt.model.clone(),
            ckpt.loss.clone(),
            ckpt.train.clone(),
            ckpt.classes.clone(),
        )?;
        t.store.copy_from(&ckpt.store)?;
        if let Some(adam) = &ckpt.optimizer {
            adam.check_matches(&t.store)?;
            t.adam = adam.clone();
        }
        t.iteration = ckpt.iteration;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model_cfg.clone(),
            loss: self.loss_cfg.clone(),
            train: self.train_cfg.clone(),
            classes: self.classes.clone(),
            iteration: self.iteration,
            store: self.store.clone(),
            optimizer: Some(self.adam.clone()),
        }
    }

    /// The batch and dropout generator used for a given iteration.
    pub fn iteration_rng(&self, iteration: u64) -> ChaCha8Rng {
        stream_rng(self.train_cfg.seed, STREAM_BATCH, iteration)
    }

    /// Runs one optimization step on `batch`.
    pub fn step<R: Rng>(&mut self, batch: &Batch, epoch: usize, rng: &mut R) -> Result<StepReport> {
        let (loss, grads, stats) = self.compute_gradients(batch, rng)?;
        let mut grads = grads;
        if let Some(clip) = self.train_cfg.grad_clip {
            let norm = grads.slots().iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
            if norm > clip {
                grads.scale(clip / norm);
            }
        }
        let lr = self.train_cfg.lr_at(epoch);
        self.adam.update(&mut self.store, &grads, lr);
        for s in &stats {
            s.apply(&mut self.store);
        }
        let report = StepReport {
            epoch,
            iteration: self.iteration,
            loss,
            lr,
        };
        self.iteration += 1;
        Ok(report)
    }

    /// Loss and gradients of every trainable tensor, without updating
    /// anything. Also returns the batch-norm statistics of the pass.
    pub fn compute_gradients<R: Rng>(
        &self,
        batch: &Batch,
        rng: &mut R,
    ) -> Result<(LossBreakdown, Grads, Vec<crate::nn::BnStats>)> {
        let non_finite = || GaitError::NonFinite {
            iteration: self.iteration as usize,
            batch: batch.sequence_ids.join(","),
        };
        let mut grads = Grads::zeros_like(&self.store);
        let (emb, cache) = self.model.forward_train(&self.store, &batch.samples, rng)?;
        let out = total_loss(&self.loss_cfg, &self.head, &self.store, &emb, &batch.labels, &mut grads)?;
        if !out.breakdown.total.is_finite() {
            return Err(non_finite());
        }
        self.model.backward_train(&self.store, &cache, &out.d_emb, &mut grads);
        if !grads.is_finite() {
            return Err(non_finite());
        }
        let mut stats = cache.bn_stats;
        stats.extend(out.bn_stats);
        Ok((out.breakdown, grads, stats))
    }

    /// Samples and runs the next iteration.
    pub fn train_iteration(&mut self, data: &TrainSet) -> Result<StepReport> {
        let ipe = self.train_cfg.iterations_per_epoch(data.len());
        let epoch = (self.iteration / ipe as u64) as usize;
        let mut rng = self.iteration_rng(self.iteration);
        let batch = data.sample_batch(&self.train_cfg, &mut rng)?;
        self.step(&batch, epoch, &mut rng)
    }

    pub fn total_iterations(&self, data: &TrainSet) -> u64 {
        (self.train_cfg.epochs * self.train_cfg.iterations_per_epoch(data.len())) as u64
    }

    /// Trains until `epochs` are complete, appending log rows and saving
    /// checkpoints under `out` when given. Returns every step report.
    pub fn run(&mut self, data: &TrainSet, out: Option<&Path>) -> Result<Vec<StepReport>> {
        if data.classes != self.classes {
            return Err(GaitError::Data("training identities differ from the trainer's classes".into()));
        }
        let ipe = self.train_cfg.iterations_per_epoch(data.len()) as u64;
        let total = self.total_iterations(data);
        let mut log = match out {
            Some(dir) => Some(open_log(dir, self.iteration == 0)?),
            None => None,
        };
        let mut reports = Vec::new();
        while self.iteration < total {
            let r = self.train_iteration(data)?;
            if let Some((path, w)) = log.as_mut() {
                writeln!(w, "{}", r.csv_row()).map_err(|e| GaitError::io(path.clone(), e))?;
            }
            log::debug!("{}", r.csv_row());
            reports.push(r);
            if let Some(dir) = out {
                let epoch_done = self.iteration.is_multiple_of(ipe);
                let every = self.train_cfg.checkpoint_every;
                let epoch = (self.iteration / ipe) as usize;
                if epoch_done && every > 0 && epoch.is_multiple_of(every) && self.iteration < total {
                    self.checkpoint().save(dir.join(format!("epoch_{epoch:05}.ckpt")))?;
                }
            }
        }
        if let Some((path, mut w)) = log {
            w.flush().map_err(|e| GaitError::io(path, e))?;
        }
        if let Some(dir) = out {
            self.checkpoint().save(dir.join(FINAL_CHECKPOINT))?;
        }
        Ok(reports)
    }
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LOG_FILE: &str = "train_log.csv";

fn open_log(dir: &Path, fresh: bool) -> Result<(PathBuf, BufWriter<File>)> {
    std::fs::create_dir_all(dir).map_err(|e| GaitError::io(dir, e))?;
    let path = dir.join(LOG_FILE);
    let fresh = fresh || std::fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&path)
        .map_err(|e| GaitError::io(&path, e))?;
    let mut w = BufWriter::new(file);
    if fresh {
        writeln!(w, "{LOG_HEADER}").map_err(|e| GaitError::io(&path, e))?;
    }
    Ok((path, w))
}
