//! Runs the self query layer on random features: self-cost volume, counted
//! depth bins and the probabilistic depth map, with their conservation
//! properties.
//!
//! `cargo run --release --example self_query_layer`

use sqldepth::diffcore::{Graph, Tensor};
use sqldepth::networks::init_params;
use sqldepth::rng::Xoshiro256;
use sqldepth::sql::{sql_forward, toy_config, FeatureMap};

fn main() -> sqldepth::Result<()> {
    let cfg = toy_config();
    let params = init_params::<f64>(&cfg, 1)?;
    let (h, w) = cfg.feature_size();
    let mut rng = Xoshiro256::seed_from(2);
    let features = Tensor::from_fn(&[cfg.channels, h, w], |_| rng.uniform(-1.0, 1.0));

    let g = Graph::<f64>::new();
    let bound = params.bind(&g, false);
    let s = FeatureMap::new(&g, g.constant(features))?;
    let out = sql_forward(&g, &bound, &s, &cfg)?;

    let volume = g.value(out.volume.expect("coarse queries build a volume").var);
    println!("self-cost volume {:?}, {} MACs for the volume product", volume.shape(), cfg.queries * h * w * cfg.channels);
    let bins = out.bins.expect("counting bins");
    let widths = g.value(bins.widths);
    let centers = g.value(bins.centers);
    println!("bin widths sum to {:.9}", widths.sum());
    println!("bin centers {:?}", centers.data().iter().map(|c| format!("{c:.3}")).collect::<Vec<_>>());
    let probs = g.value(out.probabilities.expect("probabilistic combination").var);
    let n = h * w;
    let worst = (0..n)
        .map(|p| ((0..cfg.bins).map(|d| probs.data()[d * n + p]).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    println!("plane probabilities: worst |Σ p − 1| = {worst:.2e}");
    let depth = g.value(out.depth);
    let (lo, hi) = depth.data().iter().fold((f64::MAX, f64::MIN), |(a, b), &d| (a.min(d), b.max(d)));
    println!("depth {:?} in [{lo:.3}, {hi:.3}] within ({}, {})", depth.shape(), cfg.d_min, cfg.d_max);
    Ok(())
}
