//! Per-layer multiply-add table for a model configuration, checked against
//! the counters recorded during a real forward pass.
//!
//! `cargo run --release --example count_macs [CONFIG_FILE]`

use sqldepth::diffcore::{Graph, Tensor};
use sqldepth::evalkit::count_macs;
use sqldepth::networks::{depthnet_forward, init_params, posenet_forward};
use sqldepth::pipeline::TrainConfig;

fn main() -> sqldepth::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => TrainConfig::from_file(path.as_ref())?,
        None => TrainConfig::default(),
    };
    let model = cfg.model;
    let report = count_macs(&model)?;
    print!("{}", report.table());

    let params = init_params::<f32>(&model, 0)?;
    let g = Graph::<f32>::new();
    let b = params.bind(&g, false);
    let img = g.constant(Tensor::full(&[3, model.height, model.width], 0.5));
    depthnet_forward(&g, &b, img, &model)?;
    posenet_forward(&g, &b, img, img, &model)?;
    println!("instrumented forward: {} MACs ({})", g.macs(), if g.macs() == report.total { "match" } else { "MISMATCH" });
    Ok(())
}
