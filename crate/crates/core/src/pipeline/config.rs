//! Training configuration and its `key = value` file format.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::evalkit::EvalConfig;
use crate::losses::LossConfig;
use crate::networks::ModelConfig;

use super::adam::AdamHyper;

/// Where training triples come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// a directory written by `write_dataset`
    Dir(PathBuf),
    /// generated in memory with `generate_dataset`
    Synth { seed: u64, count: usize, fx: f64, fy: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_after_decay: f64,
    pub decay_epoch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    /// stop after this many updates; 0 runs all epochs
    pub max_steps: u64,
    pub seed: u64,
    pub color_jitter: bool,
    pub flip: bool,
    pub out_dir: PathBuf,
    pub data: DataSource,
    pub loss: LossConfig,
    pub model: ModelConfig,
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            lr_initial: 1e-4,
            lr_after_decay: 1e-5,
            decay_epoch: 15,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 20,
            max_steps: 0,
            seed: 0,
            color_jitter: true,
            flip: true,
            out_dir: PathBuf::from("runs/default"),
            data: DataSource::Synth { seed: 0, count: 200, fx: 100.0, fy: 100.0 },
            loss: LossConfig::default(),
            model: ModelConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        for (name, v) in [("lr_initial", self.lr_initial), ("lr_after_decay", self.lr_after_decay), ("eps", self.eps)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if self.decay_epoch > self.epochs {
            return Err(Error::config(format!("decay_epoch {} exceeds epochs {}", self.decay_epoch, self.epochs)));
        }
        if let DataSource::Synth { count, fx, fy, .. } = self.data {
            if count == 0 || !(fx > 0.0 && fy > 0.0) {
                return Err(Error::config("synthetic data needs count > 0 and positive focal lengths"));
            }
        }
        self.loss.validate()?;
        self.model.validate()?;
        self.eval.validate()
    }

    pub fn adam(&self, lr: f64) -> AdamHyper {
        AdamHyper { lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }

    /// Every key with its current value, in the file format.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let mut e = vec![
            ("train.batch_size", self.batch_size.to_string()),
            ("train.lr_initial", self.lr_initial.to_string()),
            ("train.lr_after_decay", self.lr_after_decay.to_string()),
            ("train.decay_epoch", self.decay_epoch.to_string()),
            ("train.beta1", self.beta1.to_string()),
            ("train.beta2", self.beta2.to_string()),
            ("train.eps", self.eps.to_string()),
            ("train.epochs", self.epochs.to_string()),
            ("train.max_steps", self.max_steps.to_string()),
            ("train.seed", self.seed.to_string()),
            ("train.color_jitter", self.color_jitter.to_string()),
            ("train.flip", self.flip.to_string()),
            ("train.out_dir", self.out_dir.display().to_string()),
        ];
        match &self.data {
            DataSource::Dir(p) => e.push(("data.path", p.display().to_string())),
            DataSource::Synth { seed, count, fx, fy } => {
                e.push(("data.synth_seed", seed.to_string()));
                e.push(("data.synth_count", count.to_string()));
                e.push(("data.fx", fx.to_string()));
                e.push(("data.fy", fy.to_string()));
            }
        }
        e.extend([
            ("loss.alpha", self.loss.alpha.to_string()),
            ("loss.lambda", self.loss.lambda.to_string()),
            ("loss.c1", self.loss.c1.to_string()),
            ("loss.c2", self.loss.c2.to_string()),
            ("loss.exclude_invalid", self.loss.exclude_invalid.to_string()),
            ("model.height", m.height.to_string()),
            ("model.width", m.width.to_string()),
            ("model.channels", m.channels.to_string()),
            ("model.patch", m.patch.to_string()),
            ("model.fine_patch", m.fine_patch.to_string()),
            ("model.queries", m.queries.to_string()),
            ("model.bins", m.bins.to_string()),
            ("model.d_min", m.d_min.to_string()),
            ("model.d_max", m.d_max.to_string()),
            ("model.query_mode", m.query_mode.to_string()),
            ("model.bin_mode", m.bin_mode.to_string()),
            ("model.combine_mode", m.combine_mode.to_string()),
            ("model.transformer_layers", m.transformer_layers.to_string()),
            ("model.heads", m.heads.to_string()),
            ("model.mlp_ratio", m.mlp_ratio.to_string()),
            ("model.bins_hidden", m.bins_hidden.to_string()),
            ("model.pose_width", m.pose_width.to_string()),
            ("model.seed", m.seed.to_string()),
            ("eval.cap_min", self.eval.cap_min.to_string()),
            ("eval.cap_max", self.eval.cap_max.to_string()),
            ("eval.median_scaling", self.eval.use_median_scaling.to_string()),
        ]);
        e
    }

    fn set(&mut self, key: &str, value: &str, synth: &mut SynthKeys) -> Result<()> {
        let m = &mut self.model;
        match key {
            "train.batch_size" => self.batch_size = parse(key, value)?,
            "train.lr_initial" => self.lr_initial = parse(key, value)?,
            "train.lr_after_decay" => self.lr_after_decay = parse(key, value)?,
            "train.decay_epoch" => self.decay_epoch = parse(key, value)?,
            "train.beta1" => self.beta1 = parse(key, value)?,
            "train.beta2" => self.beta2 = parse(key, value)?,
            "train.eps" => self.eps = parse(key, value)?,
            "train.epochs" => self.epochs = parse(key, value)?,
            "train.max_steps" => self.max_steps = parse(key, value)?,
            "train.seed" => self.seed = parse(key, value)?,
            "train.color_jitter" => self.color_jitter = parse(key, value)?,
            "train.flip" => self.flip = parse(key, value)?,
            "train.out_dir" => self.out_dir = PathBuf::from(value),
            "data.path" => synth.path = Some(PathBuf::from(value)),
            "data.synth_seed" => synth.seed = Some(parse(key, value)?),
            "data.synth_count" => synth.count = Some(parse(key, value)?),
            "data.fx" => synth.fx = Some(parse(key, value)?),
            "data.fy" => synth.fy = Some(parse(key, value)?),
            "loss.alpha" => self.loss.alpha = parse(key, value)?,
            "loss.lambda" => self.loss.lambda = parse(key, value)?,
            "loss.c1" => self.loss.c1 = parse(key, value)?,
            "loss.c2" => self.loss.c2 = parse(key, value)?,
            "loss.exclude_invalid" => self.loss.exclude_invalid = parse(key, value)?,
            "model.height" => m.height = parse(key, value)?,
            "model.width" => m.width = parse(key, value)?,
            "model.channels" => m.channels = parse(key, value)?,
            "model.patch" => m.patch = parse(key, value)?,
            "model.fine_patch" => m.fine_patch = parse(key, value)?,
            "model.queries" => m.queries = parse(key, value)?,
            "model.bins" => m.bins = parse(key, value)?,
            "model.d_min" => m.d_min = parse(key, value)?,
            "model.d_max" => m.d_max = parse(key, value)?,
            "model.query_mode" => m.query_mode = value.parse()?,
            "model.bin_mode" => m.bin_mode = value.parse()?,
            "model.combine_mode" => m.combine_mode = value.parse()?,
            "model.transformer_layers" => m.transformer_layers = parse(key, value)?,
            "model.heads" => m.heads = parse(key, value)?,
            "model.mlp_ratio" => m.mlp_ratio = parse(key, value)?,
            "model.bins_hidden" => m.bins_hidden = parse(key, value)?,
            "model.pose_width" => m.pose_width = parse(key, value)?,
            "model.seed" => m.seed = parse(key, value)?,
            "eval.cap_min" => self.eval.cap_min = parse(key, value)?,
            "eval.cap_max" => self.eval.cap_max = parse(key, value)?,
            "eval.median_scaling" => self.eval.use_median_scaling = parse(key, value)?,
            _ => return Err(Error::config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }
}

#[derive(Default)]
struct SynthKeys {
    path: Option<PathBuf>,
    seed: Option<u64>,
    count: Option<usize>,
    fx: Option<f64>,
    fy: Option<f64>,
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value.parse().map_err(|_| Error::config(format!("bad value `{value}` for `{key}`")))
}

impl FromStr for TrainConfig {
    type Err = Error;

    /// Starts from the defaults; later lines override earlier ones except
    /// that a key may not repeat.
    fn from_str(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut synth = SynthKeys::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::config(format!("line {}: duplicate key `{k}`", lineno + 1)));
            }
            cfg.set(k, v, &mut synth).map_err(|e| match e {
                Error::Config(msg) => Error::config(format!("line {}: {msg}", lineno + 1)),
                other => other,
            })?;
        }
        let synth_given = synth.seed.is_some() || synth.count.is_some() || synth.fx.is_some() || synth.fy.is_some();
        cfg.data = match (synth.path, synth_given) {
            (Some(_), true) => return Err(Error::config("data.path conflicts with data.synth_* keys")),
            (Some(p), false) => DataSource::Dir(p),
            (None, _) => {
                let DataSource::Synth { seed, count, fx, fy } = TrainConfig::default().data else { unreachable!() };
                DataSource::Synth {
                    seed: synth.seed.unwrap_or(seed),
                    count: synth.count.unwrap_or(count),
                    fx: synth.fx.unwrap_or(fx),
                    fy: synth.fy.unwrap_or(fy),
                }
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
