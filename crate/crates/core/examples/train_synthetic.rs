//! Trains the desk-scale model on synthetic triples, then evaluates it on
//! held-out scenes with median scaling.
//!
//! `cargo run --release --example train_synthetic [STEPS] [OUT_DIR]`

use std::path::PathBuf;

use sqldepth::evalkit::{evaluate_model, EvalConfig, CSV_HEADER};
use sqldepth::geometry::CameraIntrinsics;
use sqldepth::networks::ModelConfig;
use sqldepth::pipeline::{train, DataSource, TrainConfig};
use sqldepth::synthrig::generate_dataset;

fn main() -> sqldepth::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().map(|s| s.parse().expect("STEPS must be an integer")).unwrap_or(200);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out/train_synthetic".into()));
    let cfg = TrainConfig {
        batch_size: 4,
        epochs: 40,
        decay_epoch: 30,
        max_steps: steps,
        out_dir: out.clone(),
        data: DataSource::Synth { seed: 0, count: 200, fx: 100.0, fy: 100.0 },
        model: ModelConfig { bins: 16, ..Default::default() },
        ..Default::default()
    };
    let outcome = train(&cfg, None)?;
    for r in outcome.records.iter().filter(|r| r.step % 25 == 0 || r.step == 1) {
        println!(
            "step {:>5} epoch {:>2} lr {:.0e} L {:.5} L_p {:.5} L_s {:.4} masked {:.2} ({:.0} s)",
            r.step, r.epoch, r.lr, r.loss, r.photometric, r.smoothness, r.masked_fraction, r.wall_time_s
        );
    }
    let k = CameraIntrinsics::centered(100.0, 100.0, cfg.model.width, cfg.model.height)?;
    let held_out = generate_dataset(1000, 20, &k)?;
    let eval = EvalConfig { use_median_scaling: true, ..Default::default() };
    let report = evaluate_model(&outcome.state.params, &cfg.model, &held_out, &eval)?;
    println!("{CSV_HEADER}\n{}", report.csv_row());
    println!("checkpoints and log in {}", out.display());
    Ok(())
}
