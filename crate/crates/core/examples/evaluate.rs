//! Depth metrics on a prediction with known error, with and without median
//! scaling, and on a checkpoint when one is given.
//!
//! `cargo run --release --example evaluate [CHECKPOINT DATA_DIR]`

use sqldepth::evalkit::{compute_metrics, evaluate_model, EvalConfig, CSV_HEADER};
use sqldepth::pipeline::load_model;
use sqldepth::synthrig::read_dataset;

fn main() -> sqldepth::Result<()> {
    let gt: Vec<f64> = (0..100).map(|i| 1.0 + i as f64 * 0.5).collect();
    // right shape, wrong scale, 5% multiplicative wobble
    let pred: Vec<f64> = gt.iter().enumerate().map(|(i, g)| 3.0 * g * (1.0 + 0.05 * ((i % 3) as f64 - 1.0))).collect();
    println!("{CSV_HEADER}");
    for median in [false, true] {
        let cfg = EvalConfig { use_median_scaling: median, ..Default::default() };
        println!("{}", compute_metrics(&pred, &gt, &cfg)?.csv_row());
    }

    let args: Vec<String> = std::env::args().skip(1).collect();
    if let [ckpt, data] = args.as_slice() {
        let (model, params) = load_model::<f32>(ckpt.as_ref())?;
        let samples = read_dataset(data.as_ref())?;
        let cfg = EvalConfig { use_median_scaling: true, ..Default::default() };
        println!("{}", evaluate_model(&params, &model, &samples, &cfg)?.csv_row());
    }
    Ok(())
}
