//! Warps the neighbouring frames of a synthetic triple into the target view
//! using ground-truth depth and pose, and reports the photometric residual.
//!
//! `cargo run --release --example view_synthesis [OUT_DIR]`

use std::path::PathBuf;

use sqldepth::diffcore::Graph;
use sqldepth::geometry::{warp_frame, CameraIntrinsics, PoseVars};
use sqldepth::io::write_ppm;
use sqldepth::synthrig::generate_dataset;

fn main() -> sqldepth::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/view_synthesis".into()));
    let k = CameraIntrinsics::centered(100.0, 100.0, 128, 96)?;
    let sample = generate_dataset(7, 1, &k)?.remove(0);

    let g = Graph::<f64>::new();
    let depth = g.constant(sample.depth.cast());
    let target = sample.target().cast::<f64>();
    for (which, name) in [(0, "prev"), (1, "next")] {
        let reference = g.constant(sample.frames[if which == 0 { 0 } else { 2 }].cast());
        let pose = PoseVars::constant(&g, &sample.poses[which]);
        let warped = warp_frame(&g, reference, depth, &pose, &k)?;
        let img = g.value(warped.image);
        let n = k.width * k.height;
        let (mut err, mut cnt) = (0.0, 0);
        for i in 0..n {
            if warped.mask.data()[i] > 0.0 {
                cnt += 1;
                err += (0..3).map(|c| (img.data()[c * n + i] - target.data()[c * n + i]).abs()).sum::<f64>() / 3.0;
            }
        }
        println!("{name}: {cnt} of {n} pixels in view, mean |I_t - warped| = {:.4}", err / cnt as f64);
        write_ppm(&out.join(format!("warped_{name}.ppm")), img.as_ref())?;
    }
    write_ppm(&out.join("target.ppm"), &target)?;
    println!("images written to {}", out.display());
    Ok(())
}
