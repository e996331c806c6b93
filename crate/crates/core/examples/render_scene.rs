//! Generates a small synthetic dataset and writes it to disk with its
//! manifest, plus a colorized ground-truth depth for the first triple.
//!
//! `cargo run --release --example render_scene [OUT_DIR] [COUNT]`

use std::path::PathBuf;

use sqldepth::geometry::CameraIntrinsics;
use sqldepth::io::{colorize_inverse_depth, write_ppm};
use sqldepth::synthrig::{generate_dataset, photometric_residual, read_dataset, write_dataset};

fn main() -> sqldepth::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out/synthetic".into()));
    let count: usize = args.next().map(|c| c.parse().expect("COUNT must be an integer")).unwrap_or(16);
    let k = CameraIntrinsics::centered(100.0, 100.0, 128, 96)?;
    let samples = generate_dataset(0, count, &k)?;
    let manifest = write_dataset(&samples, &out)?;
    let back = read_dataset(&out)?;
    assert_eq!(back.len(), samples.len());

    for (i, s) in samples.iter().enumerate().take(4) {
        let (lo, hi) = s.depth.data().iter().fold((f32::MAX, f32::MIN), |(a, b), &d| (a.min(d), b.max(d)));
        let (r, n) = photometric_residual(s, &s.depth, 0);
        println!(
            "triple {i}: depth {lo:.2}..{hi:.2} m, translation {:.3} m, covisible residual {r:.4} over {n} px",
            s.poses[0].translation.norm()
        );
    }
    write_ppm(&out.join("depth_color_0000.ppm"), &colorize_inverse_depth(&samples[0].depth)?)?;
    println!("{} triples, manifest {}", samples.len(), manifest.display());
    Ok(())
}
