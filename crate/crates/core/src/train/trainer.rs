//! The training loop.
//!
//! A step is a pure function of the parameters, the optimizer state and the
//! step counter: the batch order of epoch `e` comes from the seed stream
//! `shuffle/e`, and the dropout masks of step `s` from `dropout/s`. Resuming
//! from a checkpoint therefore replays exactly what an uninterrupted run
//! would have done.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde_json::json;

use super::config::RunConfig;
use super::optim::{adamw_step, AdamWState};
use super::predict::predict_labels;
use crate::data::{load_split, synth_dataset, tile, Sample, SegmentationBatch};
use crate::error::{Error, Result};
use crate::metrics::{total_loss, LossComponents, MetricAccumulator};
use crate::model::{Module, UNetMamba};
use crate::rng::SeedStream;
use crate::scalar::Scalar;
use crate::tensor::{read_rten, write_rten, Tensor};

/// Subdirectory of `output_dir` holding the latest checkpoint.
pub const CHECKPOINT_DIR: &str = "checkpoint";
/// Run configuration saved next to the weights.
pub const CONFIG_FILE: &str = "config.txt";
const OPTIM_DIR: &str = "optim";
const STATE_FILE: &str = "state.json";

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub epoch: usize,
    pub step: u64,
    pub components: LossComponents,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps: u64,
    pub final_loss: f64,
    pub metrics: MetricAccumulator,
}

type Split<T> = (Vec<Sample<T>>, Vec<Sample<T>>);

/// Full images for evaluation and the tiles cut from them for training.
pub fn load_training_data<T: Scalar>(cfg: &RunConfig) -> Result<Split<T>> {
    let k = cfg.model.num_classes;
    let images = match &cfg.data.dir {
        Some(dir) => load_split(dir, &cfg.data.split, k)?,
        None => synth_dataset(&cfg.data.synthetic_spec(k))?,
    };
    let mut tiles = Vec::new();
    for s in &images {
        let size =
            super::predict::predict_tile_size(s.labels.height, s.labels.width, cfg.data.tile_size)?;
        for t in tile(&s.image, &s.labels, size, cfg.data.tile_stride.min(size))? {
            tiles.push(t.sample);
        }
    }
    Ok((images, tiles))
}

pub struct Trainer<T: Scalar> {
    pub cfg: RunConfig,
    pub model: UNetMamba<T>,
    pub state: AdamWState<T>,
    pub images: Vec<Sample<T>>,
    pub tiles: Vec<Sample<T>>,
    seeds: SeedStream,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let model = UNetMamba::new(cfg.model.clone())?;
        let (images, tiles) = load_training_data(&cfg)?;
        let state = AdamWState::new(&model.params());
        Ok(Self {
            seeds: SeedStream::new(cfg.seed).child("train"),
            cfg,
            model,
            state,
            images,
            tiles,
        })
    }

    /// Rebuilds a trainer from a checkpoint written by [`Trainer::save`].
    pub fn resume(dir: &Path) -> Result<Self> {
        let cfg = RunConfig::load(&dir.join(CONFIG_FILE))?;
        let mut t = Self::new(cfg)?;
        t.model.load_checkpoint(dir)?;
        let state_path = dir.join(STATE_FILE);
        let text = fs::read_to_string(&state_path).map_err(|e| Error::io(&state_path, e))?;
        let state: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", state_path.display())))?;
        t.state.step = state["step"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint(format!("{}: missing step", state_path.display())))?;
        let optim = dir.join(OPTIM_DIR);
        for (i, p) in t.model.params().iter().enumerate() {
            let m: Tensor<T> = read_rten(&optim.join(format!("{}.m.rten", p.name)))?;
            let v: Tensor<T> = read_rten(&optim.join(format!("{}.v.rten", p.name)))?;
            if m.numel() != p.numel() || v.numel() != p.numel() {
                return Err(Error::Checkpoint(format!(
                    "{}: optimizer moments have the wrong size",
                    p.name
                )));
            }
            t.state.m[i] = m.to_vec();
            t.state.v[i] = v.to_vec();
        }
        Ok(t)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.model.save_checkpoint(dir)?;
        let write =
            |path: &Path, text: String| fs::write(path, text).map_err(|e| Error::io(path, e));
        write(&dir.join(CONFIG_FILE), self.cfg.to_text())?;
        write(
            &dir.join(STATE_FILE),
            json!({ "step": self.state.step }).to_string(),
        )?;
        let optim = dir.join(OPTIM_DIR);
        fs::create_dir_all(&optim).map_err(|e| Error::io(&optim, e))?;
        for (i, p) in self.model.params().iter().enumerate() {
            let shape = p.shape();
            write_rten(
                &optim.join(format!("{}.m.rten", p.name)),
                &Tensor::new(shape, self.state.m[i].clone())?,
            )?;
            write_rten(
                &optim.join(format!("{}.v.rten", p.name)),
                &Tensor::new(shape, self.state.v[i].clone())?,
            )?;
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        (self.tiles.len() / self.cfg.optim.batch_size).max(1)
    }

    pub fn total_steps(&self) -> u64 {
        let by_epochs = (self.cfg.optim.epochs * self.steps_per_epoch()) as u64;
        match self.cfg.optim.max_steps {
            Some(n) => by_epochs.min(n as u64),
            None => by_epochs,
        }
    }

    fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.tiles.len()).collect();
        order.shuffle(&mut self.seeds.child("shuffle").index(epoch as u64).rng());
        order
    }

    /// Tile indices used by step `step` (0-based).
    pub fn batch_indices(&self, step: u64) -> Vec<usize> {
        let spe = self.steps_per_epoch();
        let (epoch, offset) = (step as usize / spe, step as usize % spe);
        let bs = self.cfg.optim.batch_size.min(self.tiles.len());
        self.epoch_order(epoch)[offset * bs..(offset + 1) * bs].to_vec()
    }

    /// One optimizer step on the next batch.
    pub fn step(&mut self) -> Result<StepLog> {
        let step = self.state.step;
        let epoch = step as usize / self.steps_per_epoch();
        let picked: Vec<&Sample<T>> = self
            .batch_indices(step)
            .iter()
            .map(|&i| &self.tiles[i])
            .collect();
        let batch = SegmentationBatch::stack(&picked)?;
        let mut rng = self.seeds.child("dropout").index(step).rng();
        let at = |e: Error| match e {
            Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, step {step}: {msg}")),
            other => other,
        };
        let out = self
            .model
            .forward_train(&batch.images, &mut rng)
            .map_err(at)?;
        let loss = total_loss(
            &out.logits,
            out.aux_logits.as_ref(),
            &batch.labels,
            &self.cfg.loss,
        )
        .map_err(at)?;
        let grads = loss.loss.backward()?;
        let mut params = self.model.params_mut();
        adamw_step(&mut params, &grads, &mut self.state, &self.cfg.optim).map_err(at)?;
        Ok(StepLog {
            epoch,
            step,
            components: loss.components,
            loss: loss.loss.item().as_f64(),
        })
    }

    /// Confusion matrix of whole-image predictions over the training images.
    pub fn evaluate(&self) -> Result<MetricAccumulator> {
        let mut acc = MetricAccumulator::new(self.cfg.model.num_classes);
        for s in &self.images {
            let pred = predict_labels(
                &self.model,
                &s.image,
                self.cfg.data.tile_size,
                self.cfg.data.tile_stride,
            )?;
            let pred: Vec<usize> = pred.data.iter().map(|&v| v as usize).collect();
            acc.update(&pred, &s.labels.data, self.cfg.loss.ignore_index)?;
        }
        Ok(acc)
    }

    /// Trains to the configured length, logging JSON lines to `log`. When
    /// `save` is set a checkpoint is written after every epoch and at the end.
    pub fn run(&mut self, log: &mut dyn Write, save: bool) -> Result<TrainSummary> {
        let total = self.total_steps();
        let spe = self.steps_per_epoch() as u64;
        let ckpt = self.cfg.output_dir.join(CHECKPOINT_DIR);
        emit(
            log,
            json!({
                "event": "start",
                "tiles": self.tiles.len(),
                "images": self.images.len(),
                "steps_per_epoch": spe,
                "total_steps": total,
                "resume_step": self.state.step,
                "params": self.model.count_params().total,
                "lsm": self.model.lsm.is_some(),
            }),
        )?;
        let mut final_loss = f64::NAN;
        while self.state.step < total {
            let s = self.step()?;
            final_loss = s.loss;
            let c = &s.components;
            emit(
                log,
                json!({
                    "event": "step",
                    "epoch": s.epoch,
                    "step": s.step,
                    "loss": s.loss,
                    "dice": c.dice,
                    "ce": c.ce,
                    "aux_ce": c.aux_ce,
                }),
            )?;
            let finished_epoch = self.state.step.is_multiple_of(spe);
            if finished_epoch || self.state.step == total {
                let epoch = (self.state.step - 1) / spe;
                let every = self.cfg.eval_every as u64;
                if self.state.step == total
                    || (every > 0 && finished_epoch && (epoch + 1).is_multiple_of(every))
                {
                    let acc = self.evaluate()?;
                    let mut rec = acc.report()?;
                    rec["event"] = json!("eval");
                    rec["epoch"] = json!(epoch);
                    rec["step"] = json!(self.state.step);
                    emit(log, rec)?;
                }
                if save {
                    self.save(&ckpt)?;
                    emit(
                        log,
                        json!({ "event": "checkpoint", "step": self.state.step, "dir": ckpt.display().to_string() }),
                    )?;
                }
            }
        }
        let metrics = self.evaluate()?;
        Ok(TrainSummary {
            steps: self.state.step,
            final_loss,
            metrics,
        })
    }
}

fn emit(log: &mut dyn Write, value: serde_json::Value) -> Result<()> {
    writeln!(log, "{value}").map_err(|e| Error::io("<log>", e))
}
