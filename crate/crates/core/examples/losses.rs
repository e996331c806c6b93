//! Photometric error, minimum reprojection, auto-masking and smoothness on
//! hand-made inputs with known answers.
//!
//! `cargo run --release --example losses`

use sqldepth::diffcore::{Graph, Tensor};
use sqldepth::losses::{auto_mask, photometric_error, smoothness, LossConfig};

fn main() -> sqldepth::Result<()> {
    let cfg = LossConfig::default();
    let g = Graph::<f64>::new();

    let a = Tensor::from_fn(&[3, 8, 8], |i| (i % 7) as f64 / 7.0);
    let pe_same = photometric_error(&g, g.constant(a.clone()), g.constant(a.clone()), &cfg)?;
    println!("pe(I, I) max = {}", g.value(pe_same).data().iter().cloned().fold(0.0, f64::max));

    let zeros = g.constant(Tensor::zeros(&[3, 8, 8]));
    let ones = g.constant(Tensor::ones(&[3, 8, 8]));
    let pe_const = photometric_error(&g, zeros, ones, &cfg)?;
    println!("pe(0, 1) = {:.4}  (α/2·(1 − SSIM) + (1 − α)·1)", g.value(pe_const).data()[0]);

    let mask = auto_mask(&a, &[a.clone(), a.clone()], &[a.map(|v| v * 0.9), a.map(|v| v * 1.1)], &cfg)?;
    println!("static scene: {} of {} pixels kept by the auto-mask", mask.sum(), mask.numel());

    let img = g.constant(Tensor::from_fn(&[3, 8, 8], |i| ((i * 13) % 17) as f64 / 17.0));
    let depth = Tensor::from_fn(&[8, 8], |i| 2.0 + (i % 8) as f64 * 0.3);
    let s1 = smoothness(&g, g.constant(depth.clone()), img)?;
    let s2 = smoothness(&g, g.constant(depth.map(|d| d * 5.0)), img)?;
    println!("L_s(d) = {:.6}, L_s(5d) = {:.6}", g.value(s1).item(), g.value(s2).item());
    Ok(())
}
