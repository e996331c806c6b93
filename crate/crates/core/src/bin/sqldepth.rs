use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sqldepth::diffcore::gradcheck::{gradcheck, registered_names};
use sqldepth::evalkit::{count_macs, evaluate_model, predict, EvalConfig, CSV_HEADER};
use sqldepth::geometry::CameraIntrinsics;
use sqldepth::io::{colorize_inverse_depth, read_ppm, write_pfm, write_ppm};
use sqldepth::pipeline::{load_model, train, TrainConfig};
use sqldepth::sql::export_volume_pgm;
use sqldepth::synthrig::{generate_dataset, read_dataset, write_dataset};
use sqldepth::{Error, Result};

const GRADCHECK_TOL: f64 = 1e-4;
const GRADCHECK_SEEDS: u64 = 3;

#[derive(Parser)]
#[command(name = "sqldepth", version, about = "Self-supervised monocular depth with a self query layer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset of frame triples with depth and poses
    GenData {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 96)]
        height: usize,
        #[arg(long, default_value_t = 100.0)]
        fx: f64,
        #[arg(long, default_value_t = 100.0)]
        fy: f64,
    },
    /// Train DepthNet and PoseNet jointly
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint against ground-truth depth
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        median_scaling: bool,
        #[arg(long, default_value_t = 0.1)]
        cap_min: f64,
        #[arg(long, default_value_t = 80.0)]
        cap_max: f64,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Predict depth for one PPM image
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        color: Option<PathBuf>,
    },
    /// Write each self-cost-volume plane as a PGM
    DumpVolume {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks of registered ops
    Gradcheck {
        #[arg(long)]
        op: Option<String>,
    },
    /// Print the multiply-add table of the configured model
    Bench {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { seed, count, out, width, height, fx, fy } => {
            let k = CameraIntrinsics::centered(fx, fy, width, height)?;
            let samples = generate_dataset(seed, count, &k)?;
            let manifest = write_dataset(&samples, &out)?;
            println!("wrote {} triples to {}", samples.len(), manifest.display());
        }
        Command::Train { config, resume } => {
            let cfg = TrainConfig::from_file(&config)?;
            let outcome = train(&cfg, resume.as_deref())?;
            if let Some(last) = outcome.records.last() {
                println!("step {} epoch {} loss {:.6}", last.step, last.epoch, last.loss);
            }
            for p in &outcome.checkpoints {
                println!("checkpoint {}", p.display());
            }
        }
        Command::Eval { ckpt, data, median_scaling, cap_min, cap_max, format } => {
            let (model, params) = load_model::<f32>(&ckpt)?;
            let samples = read_dataset(&data)?;
            let cfg = EvalConfig { cap_min, cap_max, use_median_scaling: median_scaling };
            let report = evaluate_model(&params, &model, &samples, &cfg)?;
            match format {
                Format::Csv => println!("{CSV_HEADER}\n{}", report.csv_row()),
                Format::Json => println!("{}", report.to_json()),
            }
        }
        Command::Infer { ckpt, image, out, color } => {
            let (model, params) = load_model::<f32>(&ckpt)?;
            let depth = predict(&params, &model, &read_ppm(&image)?)?.depth;
            write_pfm(&out, &depth)?;
            if let Some(c) = color {
                write_ppm(&c, &colorize_inverse_depth(&depth)?)?;
            }
        }
        Command::DumpVolume { ckpt, image, out } => {
            let (model, params) = load_model::<f32>(&ckpt)?;
            let volume = predict(&params, &model, &read_ppm(&image)?)?
                .volume
                .ok_or_else(|| Error::config("this model bypasses the query layer and has no cost volume"))?;
            let paths = export_volume_pgm(&volume, &out)?;
            println!("wrote {} planes to {}", paths.len(), out.display());
        }
        Command::Gradcheck { op } => {
            let names = match op {
                Some(name) => vec![name],
                None => registered_names().into_iter().map(String::from).collect(),
            };
            let mut failed = 0;
            for name in &names {
                let mut worst = 0.0f64;
                for seed in 0..GRADCHECK_SEEDS {
                    worst = worst.max(gradcheck(name, None, seed)?.max_rel_err);
                }
                let ok = worst < GRADCHECK_TOL;
                failed += usize::from(!ok);
                println!("{} {name} max_rel_err={worst:.3e}", if ok { "PASS" } else { "FAIL" });
            }
            if failed > 0 {
                return Err(Error::Numerical { step: None, detail: format!("{failed} of {} gradient checks failed", names.len()) });
            }
        }
        Command::Bench { config } => {
            let cfg = TrainConfig::from_file(&config)?;
            print!("{}", count_macs(&cfg.model)?.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
