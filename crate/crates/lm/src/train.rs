//! Training loop.
//!
//! The batch at step `s` is a pure function of `(seed, s)`: each epoch walks
//! a seeded permutation of the corpus. Resuming from a checkpoint therefore
//! replays exactly the batches an uninterrupted run would have seen.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use karel::codec::PAD_ID;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{checkpoint_path, list_checkpoints, Checkpoint, CheckpointHeader};
use crate::config::LMConfig;
use crate::error::LmError;
use crate::model::{Batch, TrainState};
use crate::optim::{clip_grad_norm, AdamW};
use crate::params::LMParams;

/// Corpus indices making up the batch at `step`.
pub fn batch_indices(seed: u64, step: usize, batch_size: usize, n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch_size);
    let mut cached: Option<(usize, Vec<usize>)> = None;
    for k in 0..batch_size {
        let global = step * batch_size + k;
        let (epoch, pos) = (global / n, global % n);
        if cached.as_ref().map(|c| c.0) != Some(epoch) {
            let mut perm: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(epoch as u64);
            perm.shuffle(&mut rng);
            cached = Some((epoch, perm));
        }
        out.push(cached.as_ref().expect("epoch permutation").1[pos]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Index of the update just applied (0-based).
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

pub struct Trainer {
    pub params: LMParams<f32>,
    pub opt: AdamW,
    /// Updates applied so far.
    pub step: usize,
    state: TrainState<f32>,
}

impl Trainer {
    pub fn new(cfg: &LMConfig) -> Result<Trainer, LmError> {
        cfg.validate()?;
        let params = LMParams::init(cfg);
        let opt = AdamW::new(cfg, params.num_params());
        let state = TrainState::new(&params);
        Ok(Trainer {
            params,
            opt,
            step: 0,
            state,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Trainer, LmError> {
        let opt = ckpt.header.optimizer.clone().ok_or_else(|| LmError::Checkpoint {
            path: PathBuf::new(),
            msg: "checkpoint has no optimizer state".into(),
        })?;
        let state = TrainState::new(&ckpt.params);
        Ok(Trainer {
            params: ckpt.params,
            opt,
            step: ckpt.header.step,
            state,
        })
    }

    pub fn checkpoint(&self, tag: &str) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                step: self.step,
                config: self.params.config.clone(),
                layout: self.params.layout.clone(),
                optimizer: Some(self.opt.clone()),
                data_seed: self.params.config.seed,
                tag: tag.to_string(),
            },
            params: self.params.clone(),
        }
    }

    /// Mean loss of `batch` under the current parameters, without updating.
    pub fn loss(&mut self, batch: &Batch) -> f64 {
        self.state.forward(&self.params, batch)
    }

    /// One optimizer update on `batch`.
    pub fn step_on(&mut self, batch: &Batch) -> Result<StepStats, LmError> {
        let cfg = &self.params.config;
        let loss = self.state.forward(&self.params, batch);
        if !loss.is_finite() {
            return Err(LmError::Diverged {
                step: self.step,
                value: loss,
            });
        }
        self.state.backward(&self.params, batch);
        let grad_norm = clip_grad_norm(&mut self.state.grads, cfg.grad_clip);
        if !grad_norm.is_finite() {
            return Err(LmError::Diverged {
                step: self.step,
                value: grad_norm,
            });
        }
        let lr = cfg.lr_at(self.step);
        self.opt.update(&mut self.params.data, &self.state.grads, lr);
        let stats = StepStats {
            step: self.step,
            loss,
            lr,
            grad_norm,
        };
        self.step += 1;
        Ok(stats)
    }

    /// One update on the scheduled batch for the current step.
    pub fn step_corpus(&mut self, corpus: &[Vec<u32>]) -> Result<StepStats, LmError> {
        let batch = make_batch(&self.params.config, corpus, self.step)?;
        self.step_on(&batch)
    }
}

pub fn make_batch(cfg: &LMConfig, corpus: &[Vec<u32>], step: usize) -> Result<Batch, LmError> {
    if corpus.is_empty() {
        return Err(LmError::EmptyCorpus);
    }
    let idx = batch_indices(cfg.seed, step, cfg.batch_size, corpus.len());
    let seqs: Vec<&[u32]> = idx.iter().map(|&i| corpus[i].as_slice()).collect();
    if let Some(s) = seqs.iter().find(|s| s.len() > cfg.context) {
        return Err(LmError::ContextOverflow {
            len: s.len(),
            context: cfg.context,
        });
    }
    Ok(Batch::from_sequences(&seqs, PAD_ID))
}

/// Runs (or resumes) training in `dir`, writing `ckpt_XXXXXX.bin` at step 0,
/// every `checkpoint_interval` updates and at the end, plus `train_log.csv`.
/// `progress` sees every step.
pub fn train_to_dir(
    cfg: &LMConfig,
    corpus: &[Vec<u32>],
    dir: &Path,
    tag: &str,
    mut progress: impl FnMut(&StepStats),
) -> Result<Trainer, LmError> {
    fs::create_dir_all(dir)?;
    let log_path = dir.join("train_log.csv");
    let existing = list_checkpoints(dir)?;
    let mut trainer = match existing.last() {
        Some(&s) => {
            let ckpt = Checkpoint::load(&checkpoint_path(dir, s))?;
            if ckpt.header.config != *cfg {
                return Err(LmError::Config(format!(
                    "{} holds checkpoints for a different model config",
                    dir.display()
                )));
            }
            Trainer::from_checkpoint(ckpt)?
        }
        None => Trainer::new(cfg)?,
    };
    truncate_log(&log_path, trainer.step)?;
    let mut log = fs::OpenOptions::new().create(true).append(true).open(&log_path)?;
    if log.metadata()?.len() == 0 {
        writeln!(log, "step,loss,lr,grad_norm")?;
    }
    if trainer.step == 0 && existing.is_empty() {
        trainer.checkpoint(tag).save(&checkpoint_path(dir, 0))?;
    }
    while trainer.step < cfg.total_steps {
        let stats = trainer.step_corpus(corpus)?;
        writeln!(log, "{},{},{},{}", stats.step, stats.loss, stats.lr, stats.grad_norm)?;
        progress(&stats);
        if trainer.step % cfg.checkpoint_interval == 0 || trainer.step == cfg.total_steps {
            log.flush()?;
            trainer.checkpoint(tag).save(&checkpoint_path(dir, trainer.step))?;
        }
    }
    Ok(trainer)
}

/// Keeps the header and rows with `step < keep`.
fn truncate_log(path: &Path, keep: usize) -> Result<(), LmError> {
    if !path.exists() {
        return Ok(());
    }
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        let step = line.split(',').next().and_then(|s| s.parse::<usize>().ok());
        if i == 0 || step.is_some_and(|s| s < keep) {
            lines.push(line);
        }
    }
    let mut body = lines.join("\n");
    if !body.is_empty() {
        body.push('\n');
    }
    fs::write(path, body)?;
    Ok(())
}

/// Reads `(step, loss)` pairs from a training log.
pub fn read_loss_log(path: &Path) -> Result<Vec<(usize, f64)>, LmError> {
    let mut out = Vec::new();
    for line in BufReader::new(fs::File::open(path)?).lines().skip(1) {
        let line = line?;
        let mut f = line.split(',');
        if let (Some(s), Some(l)) = (f.next(), f.next()) {
            if let (Ok(s), Ok(l)) = (s.parse(), l.parse()) {
                out.push((s, l));
            }
        }
    }
    Ok(out)
}
