//! Depth metrics (AbsRel, SqRel, RMSE, RMSE log, log10, δ accuracies),
//! median scaling and analytic multiply-add counts.

use serde::{Deserialize, Serialize};

use crate::diffcore::{conv_out_size, Graph, Real, Tensor};
use crate::error::{Error, Result};
use crate::networks::{depthnet_forward, ModelConfig, ParamSet};
use crate::sql::{BinMode, CombineMode, QueryMode};
use crate::synthrig::SceneSample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub cap_min: f64,
    pub cap_max: f64,
    pub use_median_scaling: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { cap_min: 0.1, cap_max: 80.0, use_median_scaling: false }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cap_min > 0.0 && self.cap_min < self.cap_max) {
            return Err(Error::config(format!("depth caps ({}, {}) are invalid", self.cap_min, self.cap_max)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub log10: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub n: usize,
    pub scale: f64,
}

pub const CSV_HEADER: &str = "abs_rel,sq_rel,rmse,rmse_log,log10,a1,a2,a3,n,scale";

impl MetricsReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.log10, self.a1, self.a2, self.a3, self.n, self.scale
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }

    /// Per-image average of the metrics; `n` is summed and `scale` averaged.
    pub fn mean(reports: &[MetricsReport]) -> Result<MetricsReport> {
        if reports.is_empty() {
            return Err(Error::Validation("no reports to average".into()));
        }
        let k = reports.len() as f64;
        let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
        Ok(MetricsReport {
            abs_rel: avg(|r| r.abs_rel),
            sq_rel: avg(|r| r.sq_rel),
            rmse: avg(|r| r.rmse),
            rmse_log: avg(|r| r.rmse_log),
            log10: avg(|r| r.log10),
            a1: avg(|r| r.a1),
            a2: avg(|r| r.a2),
            a3: avg(|r| r.a3),
            n: reports.iter().map(|r| r.n).sum(),
            scale: avg(|r| r.scale),
        })
    }
}

fn valid(gt: f64) -> bool {
    gt.is_finite() && gt > 0.0
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `scale = median(gt) / median(pred)` over pixels with valid ground truth;
/// returns the rescaled prediction and the scale.
pub fn median_scale(pred: &[f64], gt: &[f64]) -> Result<(Vec<f64>, f64)> {
    if pred.len() != gt.len() {
        return Err(Error::dim(format!("prediction has {} pixels, ground truth {}", pred.len(), gt.len())));
    }
    let (mut p, mut g): (Vec<f64>, Vec<f64>) =
        pred.iter().zip(gt).filter(|(_, &g)| valid(g)).map(|(&p, &g)| (p, g)).unzip();
    if g.is_empty() {
        return Err(Error::Validation("ground truth has no valid pixels".into()));
    }
    let mp = median(&mut p);
    if !(mp > 0.0) {
        return Err(Error::Validation(format!("prediction median {mp} is not positive")));
    }
    let scale = median(&mut g) / mp;
    Ok((pred.iter().map(|v| v * scale).collect(), scale))
}

/// Metrics over pixels with positive ground truth, after optional median
/// scaling and clamping both maps to the caps. δ thresholds are strict.
pub fn compute_metrics(pred: &[f64], gt: &[f64], cfg: &EvalConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    if pred.len() != gt.len() {
        return Err(Error::dim(format!("prediction has {} pixels, ground truth {}", pred.len(), gt.len())));
    }
    let (pred, scale) = if cfg.use_median_scaling { median_scale(pred, gt)? } else { (pred.to_vec(), 1.0) };
    let clamp = |v: f64| v.clamp(cfg.cap_min, cfg.cap_max);
    let pairs: Vec<(f64, f64)> = pred.iter().zip(gt).filter(|(_, &g)| valid(g)).map(|(&p, &g)| (clamp(p), clamp(g))).collect();
    if pairs.is_empty() {
        return Err(Error::Validation("ground truth has no valid pixels".into()));
    }
    let n = pairs.len() as f64;
    let (mut abs_rel, mut sq_rel, mut se, mut se_log, mut l10) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut hits = [0usize; 3];
    for &(p, y) in &pairs {
        let d = y - p;
        abs_rel += d.abs() / y;
        sq_rel += d * d / y;
        se += d * d;
        let dl = y.ln() - p.ln();
        se_log += dl * dl;
        l10 += (y.log10() - p.log10()).abs();
        let ratio = (y / p).max(p / y);
        for (i, thr) in [1.25f64, 1.25f64.powi(2), 1.25f64.powi(3)].iter().enumerate() {
            if ratio < *thr {
                hits[i] += 1;
            }
        }
    }
    Ok(MetricsReport {
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse: (se / n).sqrt(),
        rmse_log: (se_log / n).sqrt(),
        log10: l10 / n,
        a1: hits[0] as f64 / n,
        a2: hits[1] as f64 / n,
        a3: hits[2] as f64 / n,
        n: pairs.len(),
        scale,
    })
}

/// Runs DepthNet on each target frame and averages per-image metrics
/// against the ground-truth depth.
pub fn evaluate_model<T: Real>(
    params: &ParamSet<T>,
    model: &ModelConfig,
    samples: &[SceneSample],
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    let mut reports = Vec::with_capacity(samples.len());
    for s in samples {
        let pred: Vec<f64> = predict(params, model, s.target())?.depth.data().iter().map(|v| v.f64()).collect();
        let gt: Vec<f64> = s.depth.data().iter().map(|&v| v as f64).collect();
        reports.push(compute_metrics(&pred, &gt, cfg)?);
    }
    MetricsReport::mean(&reports)
}

/// Network outputs for one image.
pub struct Prediction<T: Real> {
    /// `[H, W]`
    pub depth: Tensor<T>,
    /// self-cost volume `[Q, h, w]`, absent when queries are bypassed
    pub volume: Option<Tensor<T>>,
}

/// Runs DepthNet on one image `[3, H, W]`.
pub fn predict<T: Real>(params: &ParamSet<T>, model: &ModelConfig, image: &Tensor<f32>) -> Result<Prediction<T>> {
    let g = Graph::<T>::new();
    let bound = params.bind(&g, false);
    let img = g.constant(image.cast());
    let out = depthnet_forward(&g, &bound, img, model)?;
    Ok(Prediction {
        depth: g.value(out.depth).as_ref().clone(),
        volume: out.sql.volume.map(|v| g.value(v.var).as_ref().clone()),
    })
}

/// Analytic multiply-add counts, one entry per counted layer.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MacReport {
    pub layers: Vec<(String, u64)>,
    pub total: u64,
}

impl MacReport {
    pub fn table(&self) -> String {
        let width = self.layers.iter().map(|(n, _)| n.len()).max().unwrap_or(5).max(5);
        let mut out = format!("{:<width$}  {:>14}\n", "layer", "MACs");
        for (name, m) in &self.layers {
            out.push_str(&format!("{name:<width$}  {m:>14}\n"));
        }
        out.push_str(&format!("{:<width$}  {:>14}\n", "total", self.total));
        out.push_str(&format!("{:<width$}  {:>14.4}\n", "GMACs", self.total as f64 / 1e9));
        out
    }
}

/// `H'·W'·k²·C_in·C_out` for a square kernel.
pub fn conv_macs(h_in: usize, w_in: usize, k: usize, stride: usize, pad: usize, cin: usize, cout: usize) -> u64 {
    let (ho, wo) = (conv_out_size(h_in, k, stride, pad), conv_out_size(w_in, k, stride, pad));
    (ho * wo * k * k * cin * cout) as u64
}

/// Multiply-adds of one DepthNet forward and one PoseNet forward (one
/// frame pair). Only convolutions and matrix products are counted.
pub fn count_macs(cfg: &ModelConfig) -> Result<MacReport> {
    cfg.validate()?;
    let mut layers: Vec<(String, u64)> = Vec::new();
    let (hh, ww) = (cfg.height, cfg.width);
    let [e0, e1, e2, e3] = cfg.encoder_widths();
    let c = cfg.channels;
    let enc = [(3, e0), (e0, e1), (e1, e2), (e2, e3)];
    for (i, (cin, cout)) in enc.into_iter().enumerate() {
        let s = 1 << i;
        layers.push((format!("depth.enc{i}"), conv_macs(hh / s, ww / s, 3, 2, 1, cin, cout)));
    }
    let dec = [(e3 + e2, 2 * c, 8), (2 * c + e1, c, 4), (c + e0, c, 2)];
    for (i, (cin, cout, s)) in dec.into_iter().enumerate() {
        layers.push((format!("depth.dec{i}"), conv_macs(hh / s, ww / s, 3, 1, 1, cin, cout)));
    }
    let (h, w) = cfg.feature_size();
    let hw = (h * w) as u64;
    let (q, d, cc) = (cfg.queries as u64, cfg.bins as u64, c as u64);
    match cfg.query_mode {
        QueryMode::Bypass => layers.push(("sql.head".into(), conv_macs(h, w, 3, 1, 1, c, 1))),
        QueryMode::Coarse | QueryMode::Fine => {
            let p = cfg.effective_patch();
            layers.push(("sql.patch".into(), conv_macs(h, w, p, p, 0, c, c)));
            let n = cfg.tokens() as u64;
            let r = cfg.mlp_ratio as u64;
            for l in 0..cfg.transformer_layers {
                layers.push((format!("sql.tf{l}.attn.qkv"), 3 * n * cc * cc));
                layers.push((format!("sql.tf{l}.attn.scores"), n * n * cc));
                layers.push((format!("sql.tf{l}.attn.values"), n * n * cc));
                layers.push((format!("sql.tf{l}.attn.out"), n * cc * cc));
                layers.push((format!("sql.tf{l}.mlp"), 2 * n * cc * cc * r));
            }
        }
        QueryMode::LearnedStatic => {}
    }
    if cfg.query_mode != QueryMode::Bypass {
        layers.push(("sql.volume".into(), q * hw * cc));
        match cfg.combine_mode {
            CombineMode::Probabilistic => {
                let hid = cfg.bins_hidden as u64;
                match cfg.bin_mode {
                    BinMode::Counting => {
                        layers.push(("sql.bins.count".into(), q * hw * cc));
                        layers.push(("sql.bins.fc1".into(), q * cc * hid));
                        layers.push(("sql.bins.fc2".into(), hid * d));
                    }
                    BinMode::Regression => {
                        layers.push(("sql.bins.fc1".into(), cc * hid));
                        layers.push(("sql.bins.fc2".into(), hid * d));
                    }
                    BinMode::FixedUniform => {}
                }
                layers.push(("sql.planes".into(), hw * q * d));
                layers.push(("sql.combine".into(), d * hw));
            }
            CombineMode::Conv1x1 => layers.push(("sql.combine".into(), hw * q)),
            CombineMode::Gap => {}
        }
    }
    let [p0, p1, p2, p3] = cfg.pose_widths();
    for (i, (cin, cout)) in [(6, p0), (p0, p1), (p1, p2), (p2, p3)].into_iter().enumerate() {
        let s = 1 << i;
        layers.push((format!("pose.conv{i}"), conv_macs(hh / s, ww / s, 3, 2, 1, cin, cout)));
    }
    layers.push(("pose.out".into(), conv_macs(hh / 16, ww / 16, 1, 1, 0, p3, 6)));
    let total = layers.iter().map(|(_, m)| m).sum();
    Ok(MacReport { layers, total })
}
