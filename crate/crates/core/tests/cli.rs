use std::path::Path;
use std::process::{Command, Output};

use sqldepth::evalkit::CSV_HEADER;
use sqldepth::io::{read_pfm, read_pgm, read_ppm};
use sqldepth::pipeline::{initial_state, save_checkpoint, TrainConfig};

fn sqldepth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqldepth")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &str = "\
model.height = 32
model.width = 48
model.channels = 8
model.patch = 4
model.fine_patch = 2
model.queries = 4
model.bins = 8
model.transformer_layers = 1
model.heads = 2
model.bins_hidden = 16
model.pose_width = 4
";

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.cfg");
    std::fs::write(&path, format!("{TINY}{extra}")).unwrap();
    path.to_str().unwrap().to_string()
}

fn init_checkpoint(dir: &Path) -> String {
    let cfg: TrainConfig = TINY.parse().unwrap();
    let path = dir.join("init.sqld");
    save_checkpoint(&path, &initial_state(&cfg).unwrap().to_checkpoint()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn gen_data_then_eval_infer_dump() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let d = data.to_str().unwrap();
    let o = sqldepth(&["gen-data", "--seed", "3", "--count", "3", "--out", d, "--width", "48", "--height", "32", "--fx", "40", "--fy", "40"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data.join("manifest.jsonl").exists());

    let ckpt = init_checkpoint(dir.path());
    let o = sqldepth(&["eval", "--ckpt", &ckpt, "--data", d, "--median-scaling"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    assert_eq!(lines.next().unwrap().split(',').count(), 10);

    let image = data.join("00000_target.ppm");
    let img = image.to_str().unwrap();
    let pfm = dir.path().join("d.pfm");
    let ppm = dir.path().join("d.ppm");
    let o = sqldepth(&["infer", "--ckpt", &ckpt, "--image", img, "--out", pfm.to_str().unwrap(), "--color", ppm.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_pfm(&pfm).unwrap().shape(), &[32, 48]);
    assert_eq!(read_ppm(&ppm).unwrap().shape(), &[3, 32, 48]);

    let vol = dir.path().join("vol");
    let o = sqldepth(&["dump-volume", "--ckpt", &ckpt, "--image", img, "--out", vol.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let planes = std::fs::read_dir(&vol).unwrap().count();
    assert_eq!(planes, 4);
    assert_eq!(read_pgm(&vol.join("plane_0.pgm")).unwrap().shape(), &[16, 24]);
}

#[test]
fn train_writes_log_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(
        dir.path(),
        &format!(
            "train.batch_size = 2\ntrain.epochs = 1\ntrain.decay_epoch = 1\ndata.synth_count = 4\ndata.fx = 40\ndata.fy = 40\ntrain.out_dir = {}\n",
            out.display()
        ),
    );
    let o = sqldepth(&["train", "--config", &cfg]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("epoch_0001.sqld").exists());
    assert!(out.join("final.sqld").exists());
    let log = std::fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["step", "epoch", "lr", "loss", "photometric", "smoothness", "masked_fraction", "wall_time_s"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    // resume from the epoch checkpoint for a second epoch
    let cfg2 = write_config(
        dir.path(),
        &format!(
            "train.batch_size = 2\ntrain.epochs = 2\ntrain.decay_epoch = 1\ndata.synth_count = 4\ndata.fx = 40\ndata.fy = 40\ntrain.out_dir = {}\n",
            out.display()
        ),
    );
    let ck = out.join("epoch_0001.sqld");
    let o = sqldepth(&["train", "--config", &cfg2, "--resume", ck.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(out.join("train_log.jsonl")).unwrap().lines().count(), 4);
}

#[test]
fn bench_prints_mac_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let o = sqldepth(&["bench", "--config", &cfg]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("sql.volume"));
    assert!(text.lines().any(|l| l.starts_with("total")));
}

#[test]
fn gradcheck_single_op() {
    let o = sqldepth(&["gradcheck", "--op", "matmul"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).starts_with("PASS matmul"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // usage error
    assert_eq!(code(&sqldepth(&["train"])), 1);
    assert_eq!(code(&sqldepth(&["no-such-command"])), 1);
    // unknown config key
    let bad = write_config(dir.path(), "model.colour = red\n");
    assert_eq!(code(&sqldepth(&["bench", "--config", &bad])), 1);
    // unknown gradcheck op
    assert_eq!(code(&sqldepth(&["gradcheck", "--op", "frobnicate"])), 1);
    // missing data directory
    let ckpt = init_checkpoint(dir.path());
    assert_eq!(code(&sqldepth(&["eval", "--ckpt", &ckpt, "--data", "/nonexistent/dir"])), 2);
    // truncated checkpoint
    let bytes = std::fs::read(&ckpt).unwrap();
    let cut = dir.path().join("cut.sqld");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    let o = sqldepth(&["eval", "--ckpt", cut.to_str().unwrap(), "--data", "/nonexistent/dir"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("format error"));
    // help is success
    assert_eq!(code(&sqldepth(&["--help"])), 0);
}
