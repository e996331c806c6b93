//! Joint DepthNet/PoseNet training: per-step updates, epochs, logging and
//! checkpoints.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PoseVars};
use crate::losses::total_loss;
use crate::networks::{depthnet_forward, init_params, posenet_forward, Bound, ModelConfig, ParamSet};
use crate::rng::Xoshiro256;
use crate::synthrig::{generate_dataset, read_dataset, SceneSample};

use super::adam::{adam_update, lr_schedule, AdamState};
use super::augment::{apply, Augmentation};
use super::checkpoint::{load_checkpoint, save_checkpoint, TrainState};
use super::config::{DataSource, TrainConfig};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.sqld";
const AUG_STREAM: u64 = 0x6175_6720;
const SHUFFLE_STREAM: u64 = 0x7368_7566;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    /// batch mean of `L`
    pub loss: f64,
    pub photometric: f64,
    pub smoothness: f64,
    /// fraction of pixels with `μ = 0`
    pub masked_fraction: f64,
    pub grad_norm: f64,
    pub wall_time_s: f64,
}

/// Fresh state: parameters from `model.seed`, zero moments, augmentation
/// stream from the training seed.
pub fn initial_state(cfg: &TrainConfig) -> Result<TrainState<f32>> {
    let params = init_params(&cfg.model, cfg.model.seed)?;
    let adam = AdamState::new(&params);
    Ok(TrainState { model: cfg.model.clone(), params, adam, rng: Xoshiro256::derived(cfg.seed, AUG_STREAM) })
}

fn add_into(acc: &mut Tensor<f32>, g: &Tensor<f32>, w: f32) {
    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += w * b;
    }
}

/// One optimizer update on `batch`. Each triple gets its own graph and
/// augmentation draw; gradients are averaged before the Adam step.
/// `[T_{t→t−1}, T_{t→t+1}]` from `[I_{t−1}, I_t, I_{t+1}]`. Both pairs are
/// fed in temporal order, so PoseNet always sees forward motion; the
/// backward transform is the inverse of `T_{t−1→t}`.
pub fn reference_poses<T: Real>(g: &Graph<T>, bound: &Bound, frames: &[Var], model: &ModelConfig) -> Result<[PoseVars; 2]> {
    let back = posenet_forward(g, bound, frames[0], frames[1], model)?.inverse(g)?;
    let fwd = posenet_forward(g, bound, frames[1], frames[2], model)?;
    Ok([back, fwd])
}

pub fn train_step(
    batch: &[&SceneSample],
    state: &mut TrainState<f32>,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<TrainLogRecord> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let step = state.adam.step + 1;
    let numerical = |detail: String| Error::Numerical { step: Some(step), detail };
    let lr = lr_schedule(epoch, cfg.lr_initial, cfg.lr_after_decay, cfg.decay_epoch);
    let w = 1.0 / batch.len() as f32;
    let mut grads = ParamSet::new();
    for (n, t) in state.params.iter() {
        grads.insert(n.clone(), Tensor::zeros(t.shape()))?;
    }
    let (mut loss, mut lp, mut ls, mut masked) = (0.0, 0.0, 0.0, 0.0);
    for sample in batch {
        let aug = Augmentation::draw(&mut state.rng, cfg.color_jitter, cfg.flip);
        let (loss_frames, net_frames, k) = apply(&sample.frames, &sample.k, &aug);
        let g = Graph::<f32>::new();
        let bound = state.params.bind(&g, true);
        let net: Vec<_> = net_frames.into_iter().map(|f| g.constant(f)).collect();
        let lf: Vec<_> = loss_frames.into_iter().map(|f| g.constant(f)).collect();
        let depth = depthnet_forward(&g, &bound, net[1], &cfg.model)?.depth;
        let poses = reference_poses(&g, &bound, &net, &cfg.model)?;
        let out = total_loss(&g, lf[1], &[lf[0], lf[2]], depth, &poses, &k, &cfg.loss).map_err(|e| match e {
            Error::Numerical { detail, .. } => numerical(detail),
            other => other,
        })?;
        let (l, p, s) = out.values(&g);
        loss += l;
        lp += p;
        ls += s;
        masked += 1.0 - out.mask.mean() as f64;
        let mut gr = g.backward(out.total)?;
        for (name, var) in bound.iter() {
            let gv = gr.take(*var).ok_or_else(|| Error::Contract(format!("no gradient for {name}")))?;
            add_into(grads.get_mut(name)?, &gv, w);
        }
    }
    let grad_norm = grads.iter().flat_map(|(_, t)| t.data()).map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    if !grad_norm.is_finite() {
        return Err(numerical(format!("gradient norm is {grad_norm}")));
    }
    adam_update(&mut state.params, &grads, &mut state.adam, &cfg.adam(lr))?;
    if !state.params.iter().all(|(_, t)| t.is_finite()) {
        return Err(numerical("parameters became non-finite".into()));
    }
    let k = batch.len() as f64;
    Ok(TrainLogRecord {
        step,
        epoch,
        lr,
        loss: loss / k,
        photometric: lp / k,
        smoothness: ls / k,
        masked_fraction: masked / k,
        grad_norm,
        wall_time_s: 0.0,
    })
}

/// Loads or generates the configured triples and checks their size.
pub fn load_data(cfg: &TrainConfig) -> Result<Vec<SceneSample>> {
    let data = match &cfg.data {
        DataSource::Dir(p) => read_dataset(p)?,
        DataSource::Synth { seed, count, fx, fy } => {
            let k = CameraIntrinsics::centered(*fx, *fy, cfg.model.width, cfg.model.height)?;
            generate_dataset(*seed, *count, &k)?
        }
    };
    check_data(&data, cfg)?;
    Ok(data)
}

fn check_data(data: &[SceneSample], cfg: &TrainConfig) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Validation("dataset is empty".into()));
    }
    let want = [3, cfg.model.height, cfg.model.width];
    if let Some(s) = data.iter().find(|s| s.frames.iter().any(|f| f.shape() != want)) {
        return Err(Error::Validation(format!("frame shape {:?} does not match model {want:?}", s.frames[0].shape())));
    }
    Ok(())
}

pub fn steps_per_epoch(n: usize, batch: usize) -> u64 {
    n.div_ceil(batch) as u64
}

/// Result of a training run.
pub struct TrainOutcome {
    pub state: TrainState<f32>,
    pub records: Vec<TrainLogRecord>,
    pub checkpoints: Vec<PathBuf>,
}

/// Trains on `data`, writing `epoch_NNNN.sqld` after every epoch, the log
/// and `final.sqld` into `cfg.out_dir`. `resume` continues from a saved
/// state bit-exactly.
pub fn train_on(cfg: &TrainConfig, data: &[SceneSample], resume: Option<TrainState<f32>>) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_data(data, cfg)?;
    let out = &cfg.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut state = match resume {
        Some(s) => {
            if s.model != cfg.model {
                return Err(Error::config("checkpoint model config differs from the training config"));
            }
            s
        }
        None => initial_state(cfg)?,
    };
    let log_path = out.join(LOG_FILE);
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(state.adam.step > 0)
        .truncate(state.adam.step == 0)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let per_epoch = steps_per_epoch(data.len(), cfg.batch_size);
    let limit = if cfg.max_steps == 0 { u64::MAX } else { cfg.max_steps };
    let start = Instant::now();
    let mut records = Vec::new();
    let mut checkpoints = Vec::new();
    let first_epoch = (state.adam.step / per_epoch) as usize;
    'epochs: for epoch in first_epoch..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut Xoshiro256::derived(cfg.seed.wrapping_add(epoch as u64), SHUFFLE_STREAM));
        let skip = (state.adam.step - epoch as u64 * per_epoch) as usize;
        for chunk in order.chunks(cfg.batch_size).skip(skip) {
            if state.adam.step >= limit {
                break 'epochs;
            }
            let batch: Vec<&SceneSample> = chunk.iter().map(|&i| &data[i]).collect();
            let mut rec = train_step(&batch, &mut state, cfg, epoch)?;
            rec.wall_time_s = start.elapsed().as_secs_f64();
            let line = serde_json::to_string(&rec).expect("record serializes");
            writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
            records.push(rec);
        }
        let path = out.join(format!("epoch_{:04}.sqld", epoch + 1));
        save_checkpoint(&path, &state.to_checkpoint())?;
        checkpoints.push(path);
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let path = out.join(FINAL_CHECKPOINT);
    save_checkpoint(&path, &state.to_checkpoint())?;
    checkpoints.push(path);
    Ok(TrainOutcome { state, records, checkpoints })
}

/// Loads the configured data and optional resume checkpoint, then trains.
pub fn train(cfg: &TrainConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let state = resume.map(|p| TrainState::from_checkpoint(&load_checkpoint(p)?)).transpose()?;
    train_on(cfg, &data, state)
}
