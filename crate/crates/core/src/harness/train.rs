//! Deterministic single-threaded training loop.

use std::fmt::Write as _;
use std::path::Path;

use cvcp_numerics::{OneCycleAdam, OneCycleSchedule, ParamStore, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{check_architecture, Checkpoint};
use super::config::Config;
use super::scene::SceneRecord;
use super::synth::scene_seed;
use crate::error::{Error, Result};
use crate::pipeline::{camera_bev_value, forward, init_params, is_camera_param, sample_loss, SceneInputs, SceneTargets};

pub const LOG_FILE: &str = "train_log.tsv";

/// One scene prepared for training: network inputs, rendered targets and,
/// when the camera branch is frozen, its cached BEV map.
pub struct Sample {
    pub inputs: SceneInputs<f32>,
    pub targets: SceneTargets<f32>,
    pub camera_bev: Option<Tensor<f32>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub loss: f64,
    pub focal: f64,
    pub regression: f64,
    pub refine: f64,
}

pub fn format_log(log: &[StepLog]) -> String {
    let mut out = String::from("step\tepoch\tlr\tmomentum\tloss\tfocal\tregression\trefine\n");
    for s in log {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}",
            s.step, s.epoch, s.lr, s.momentum, s.loss, s.focal, s.regression, s.refine
        );
    }
    out
}

pub fn steps_per_epoch(samples: usize, batch_size: usize) -> usize {
    samples.div_ceil(batch_size)
}

pub struct Trainer {
    pub config: Config,
    pub params: ParamStore,
    pub optimizer: OneCycleAdam,
    pub samples: Vec<Sample>,
    pub log: Vec<StepLog>,
}

impl Trainer {
    pub fn new(config: Config, scenes: &[SceneRecord]) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config.model, config.train.seed)?;
        Self::with_params(config, params, scenes)
    }

    /// Continues the run stored in `ckpt` under `config`, which must describe the same architecture.
    pub fn resume(config: Config, ckpt: Checkpoint, scenes: &[SceneRecord]) -> Result<Self> {
        config.validate()?;
        check_architecture(&config, &ckpt.params)?;
        let mut t = Self::with_params(config, ckpt.params, scenes)?;
        if let Some(state) = ckpt.optimizer {
            if state.moments.len() != t.params.len() {
                return Err(Error::Mismatch(format!("{} optimizer slots for {} parameters", state.moments.len(), t.params.len())));
            }
            if state.step > t.optimizer.schedule.total_steps {
                return Err(Error::Mismatch(format!(
                    "checkpoint is at step {} but the configured run has only {} steps",
                    state.step, t.optimizer.schedule.total_steps
                )));
            }
            t.optimizer.step = state.step;
            t.optimizer.moments = state.moments;
        }
        Ok(t)
    }

    fn with_params(config: Config, params: ParamStore, scenes: &[SceneRecord]) -> Result<Self> {
        if scenes.is_empty() {
            return Err(Error::Usage("training dataset is empty".into()));
        }
        let tr = &config.train;
        let cache = tr.freeze_cvt;
        let mut samples = Vec::with_capacity(scenes.len());
        for s in scenes {
            let inputs = SceneInputs::new(s, &config.model)?;
            let camera_bev = if cache { Some(camera_bev_value(&params, &inputs, &config.model)?) } else { None };
            samples.push(Sample { inputs, targets: SceneTargets::new(&s.boxes, &config.model), camera_bev });
        }
        let total = tr.epochs * steps_per_epoch(samples.len(), tr.batch_size);
        let schedule = OneCycleSchedule {
            total_steps: total,
            lr_max: tr.lr_max,
            div_factor: tr.div_factor,
            final_div_factor: tr.final_div_factor,
            pct_start: tr.pct_start,
            momentum_base: tr.momentum_base,
            momentum_max: tr.momentum_max,
        };
        schedule.validate()?;
        let mut optimizer = OneCycleAdam::new(schedule, params.len());
        optimizer.beta2 = tr.beta2;
        optimizer.epsilon = tr.epsilon;
        Ok(Trainer { config, params, optimizer, samples, log: Vec::new() })
    }

    pub fn total_steps(&self) -> usize {
        self.optimizer.schedule.total_steps
    }

    pub fn is_done(&self) -> bool {
        self.optimizer.step >= self.total_steps()
    }

    /// Sample indices of global step `step`; each epoch has its own seeded shuffle.
    pub fn batch_indices(&self, step: usize) -> Vec<usize> {
        let spe = steps_per_epoch(self.samples.len(), self.config.train.batch_size);
        let (epoch, k) = (step / spe, step % spe);
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(scene_seed(self.config.train.seed, epoch as u64)));
        let b = self.config.train.batch_size;
        order[k * b..((k + 1) * b).min(order.len())].to_vec()
    }

    /// Mean loss and averaged gradients over `batch`, without updating.
    pub fn batch_gradients(&self, batch: &[usize]) -> Result<(StepLog, Vec<Option<Tensor<f32>>>)> {
        let cfg = &self.config;
        let freeze = cfg.train.freeze_cvt;
        let mut acc: Vec<Option<Tensor<f32>>> = vec![None; self.params.len()];
        let mut log = StepLog { step: self.optimizer.step, epoch: 0, lr: 0.0, momentum: 0.0, loss: 0.0, focal: 0.0, regression: 0.0, refine: 0.0 };
        for &i in batch {
            let s = &self.samples[i];
            let tape = Tape::<f32>::new();
            let p = self.params.bind(&tape, |name| !(freeze && is_camera_param(name)))?;
            let cached = if freeze { s.camera_bev.as_ref() } else { None };
            let fwd = forward(&tape, &p, &s.inputs, &cfg.model, cached)?;
            let loss = sample_loss(&tape, &p, &fwd, &s.targets, &cfg.model, &cfg.train, None)?;
            let value = tape.value(loss.total).item() as f64;
            if !value.is_finite() {
                return Err(Error::Numerics(cvcp_numerics::NumericsError::NonFinite { op: "training_loss" }));
            }
            log.loss += value;
            log.focal += loss.focal;
            log.regression += loss.regression;
            log.refine += loss.refine;
            let mut grads = tape.backward(loss.total)?;
            for (slot, g) in acc.iter_mut().zip(p.collect(&mut grads)) {
                let Some(g) = g else { continue };
                match slot {
                    Some(a) => a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y),
                    None => *slot = Some(g),
                }
            }
        }
        let n = batch.len() as f64;
        for a in acc.iter_mut().flatten() {
            a.data_mut().iter_mut().for_each(|x| *x /= n as f32);
        }
        log.loss /= n;
        log.focal /= n;
        log.regression /= n;
        log.refine /= n;
        Ok((log, acc))
    }

    pub fn step(&mut self) -> Result<StepLog> {
        let step = self.optimizer.step;
        let batch = self.batch_indices(step);
        let (mut log, grads) = self.batch_gradients(&batch)?;
        let info = self.optimizer.step(self.params.tensors_mut(), &grads)?;
        log.epoch = step / steps_per_epoch(self.samples.len(), self.config.train.batch_size);
        log.lr = info.lr;
        log.momentum = info.momentum;
        self.log.push(log.clone());
        Ok(log)
    }

    /// Runs until the schedule is exhausted.
    pub fn run(&mut self) -> Result<()> {
        while !self.is_done() {
            let s = self.step()?;
            if s.step % 50 == 0 || self.is_done() {
                log::info!("step {} epoch {} loss {:.5} (focal {:.5} reg {:.5} refine {:.5})", s.step, s.epoch, s.loss, s.focal, s.regression, s.refine);
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.config.clone(), self.params.clone(), Some(&self.optimizer))
    }

    /// Writes the checkpoint and appends this session's steps to the log.
    pub fn save(&self, out: &Path) -> Result<()> {
        self.checkpoint().save(out)?;
        let path = out.join(LOG_FILE);
        let mut text = if self.log.first().is_some_and(|s| s.step > 0) && path.is_file() {
            std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?
        } else {
            String::new()
        };
        let fresh = format_log(&self.log);
        if text.is_empty() {
            text = fresh;
        } else {
            text.push_str(fresh.split_once('\n').map_or("", |(_, rest)| rest));
        }
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}
