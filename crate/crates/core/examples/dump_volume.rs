//! Saves a checkpoint of a freshly initialized model, reloads it, and
//! writes every self-cost-volume plane and the depth prediction for one
//! synthetic frame.
//!
//! `cargo run --release --example dump_volume [OUT_DIR]`

use std::path::PathBuf;

use sqldepth::evalkit::predict;
use sqldepth::geometry::CameraIntrinsics;
use sqldepth::io::{colorize_inverse_depth, write_pfm, write_ppm};
use sqldepth::networks::ModelConfig;
use sqldepth::pipeline::{initial_state, load_model, save_checkpoint, TrainConfig};
use sqldepth::sql::export_volume_pgm;
use sqldepth::synthrig::generate_dataset;

fn main() -> sqldepth::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/dump_volume".into()));
    let cfg = TrainConfig { model: ModelConfig { bins: 16, ..Default::default() }, ..Default::default() };
    let ckpt = out.join("init.sqld");
    save_checkpoint(&ckpt, &initial_state(&cfg)?.to_checkpoint())?;
    let (model, params) = load_model::<f32>(&ckpt)?;

    let k = CameraIntrinsics::centered(100.0, 100.0, model.width, model.height)?;
    let sample = generate_dataset(3, 1, &k)?.remove(0);
    let pred = predict(&params, &model, sample.target())?;
    let volume = pred.volume.expect("default model builds a volume");
    let planes = export_volume_pgm(&volume, &out.join("volume"))?;
    write_ppm(&out.join("image.ppm"), sample.target())?;
    write_pfm(&out.join("depth.pfm"), &pred.depth)?;
    write_ppm(&out.join("depth_color.ppm"), &colorize_inverse_depth(&pred.depth)?)?;
    println!("volume {:?}: {} planes in {}", volume.shape(), planes.len(), out.join("volume").display());
    Ok(())
}
