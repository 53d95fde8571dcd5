use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pcl::cli::{cmd_eval, cmd_generate, cmd_heatmap, cmd_train, RunConfig};
use pcl::data::Preset;

#[derive(Parser)]
#[command(name = "pcl", version, about = "Face-splice detection by patch-wise consistency")]
struct Args {
    /// TOML run configuration; PCL_* environment variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Blend self-inconsistent fakes from the real faces of the manifest.
    Generate {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model, writing per-epoch checkpoints and a loss log.
    Train {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        preset: Option<PresetArg>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Score a manifest; writes scores.csv and metrics.json.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export consistency heatmaps for one image.
    Heatmap {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        landmarks: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum PresetArg {
    InDataset,
    CrossDataset,
}

fn load_config(args: &Args) -> pcl::Result<RunConfig> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.train.jobs = args.jobs;
    Ok(cfg)
}

fn run(args: Args) -> pcl::Result<i32> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build_global()
        .map_err(|e| pcl::Error::Config(format!("thread pool: {e}")))?;
    match &args.cmd {
        Cmd::Generate { count, out } => {
            let s = cmd_generate(&load_config(&args)?, *count, out)?;
            println!("written {} reused {} skipped {}", s.written, s.reused, s.skipped);
            Ok(s.exit_code())
        }
        Cmd::Train { out, preset, lambda } => {
            let mut cfg = load_config(&args)?;
            if let Some(p) = preset {
                cfg.preset = match p {
                    PresetArg::InDataset => Preset::InDataset,
                    PresetArg::CrossDataset => Preset::CrossDataset,
                };
            }
            if let Some(l) = lambda {
                cfg.train.lambda = *l;
            }
            let s = cmd_train(&cfg, out)?;
            println!("trained {} epochs ({} steps)", s.epochs, s.steps);
            Ok(0)
        }
        Cmd::Eval { checkpoint, manifest, out } => {
            let r = cmd_eval(checkpoint, manifest, out)?;
            match r.metrics {
                Some(m) => println!("auc {:.4} ap {:.4} eer {:.4}", m.auc, m.ap, m.eer),
                None => println!("scored {} frames (no metrics)", r.scores.len()),
            }
            Ok(0)
        }
        Cmd::Heatmap {
            checkpoint,
            image,
            landmarks,
            out,
        } => {
            let r = cmd_heatmap(checkpoint, image, landmarks.as_deref(), out)?;
            println!("fake probability {:.4}", r.fake_prob);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Args::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
