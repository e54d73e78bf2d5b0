use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cvcp::eval::{evaluate_files, MatchConfig, MatchMode};
use cvcp::harness::checkpoint::Checkpoint;
use cvcp::harness::config::Config;
use cvcp::harness::gradcheck::run_gradcheck;
use cvcp::harness::infer::infer_path;
use cvcp::harness::scene::load_scenes;
use cvcp::harness::synth::{generate_dataset, write_dataset};
use cvcp::harness::train::Trainer;
use cvcp::harness::predictions;
use cvcp::{Error, Result};

#[derive(Parser)]
#[command(name = "cvcp", version, about = "Camera/LiDAR BEV fusion 3D detector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    #[value(name = "center_distance", alias = "center-distance")]
    CenterDistance,
    Iou,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scenes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Generator and model settings (defaults when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model and write a checkpoint plus a per-step loss log.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        freeze_cvt: bool,
        #[arg(long)]
        camera_only: bool,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run both stages and NMS on a scene (or every scene in a directory).
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::CenterDistance)]
        mode: Mode,
        #[arg(long)]
        report: PathBuf,
    },
    /// Finite-difference check of every op and a tiny end-to-end pipeline.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { out, scenes, seed, config } => {
            let cfg = load_config(&config)?;
            let data = generate_dataset(&cfg, scenes, seed)?;
            write_dataset(&data, &out)?;
            println!("wrote {} scenes to {}", data.len(), out.display());
        }
        Command::Train { config, data, out, freeze_cvt, camera_only, resume } => {
            let mut cfg = load_config(&config)?;
            cfg.train.freeze_cvt |= freeze_cvt;
            cfg.model.camera_only |= camera_only;
            cfg.validate()?;
            let scenes = load_scenes(&data)?;
            let mut trainer = match resume {
                Some(p) => Trainer::resume(cfg, Checkpoint::load(&p)?, &scenes)?,
                None => Trainer::new(cfg, &scenes)?,
            };
            trainer.run()?;
            trainer.save(&out)?;
            match trainer.log.last() {
                Some(s) => println!("trained {} steps, final loss {:.6}", s.step + 1, s.loss),
                None => println!("checkpoint already at its final step"),
            }
        }
        Command::Infer { ckpt, scene, threshold, out } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let mut infer = ckpt.config.infer.clone();
            if let Some(t) = threshold {
                infer.threshold = t;
            }
            let records = infer_path(&ckpt, &scene, &infer)?;
            predictions::save(&out, &records)?;
            println!("wrote {} detections to {}", records.len(), out.display());
        }
        Command::Eval { pred, gt, mode, report } => {
            let mode = match mode {
                Mode::CenterDistance => MatchMode::CenterDistance,
                Mode::Iou => MatchMode::Iou,
            };
            let r = evaluate_files(&pred, &gt, &MatchConfig::with_mode(mode))?;
            r.save(&report)?;
            println!("mAP {:.4}  translation error x {:.3} y {:.3} z {:.3}", r.map, r.translation_error[0], r.translation_error[1], r.translation_error[2]);
        }
        Command::Gradcheck { seed } => {
            let report = run_gradcheck(seed)?;
            print!("{}", report.format());
            if !report.passed() {
                let failed: Vec<&str> = report.ops.iter().chain([&report.end_to_end]).filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
                return Err(Error::Check(format!("gradients disagree with finite differences for {}", failed.join(", "))));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
