use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fiberseg_core::config::PipelineConfig;
use fiberseg_core::pipeline::{self, Layout, Method};

/// Fiber bundle boundary estimation on diffusion tensor volumes.
#[derive(Parser, Debug)]
#[command(name = "fiberseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON pipeline configuration (defaults are used when omitted)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// output directory, overrides the config
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// segmentation method; stages that accept it run both when omitted
    #[arg(long, global = true, value_enum)]
    method: Option<MethodArg>,

    /// phantom noise seed, overrides the config
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// generate the tensor phantom and its ground-truth mask
    Phantom,
    /// track fibers and build the centerline, frames and evaluation grid
    Track,
    /// estimate the bundle boundary
    Segment,
    /// triangulate boundaries into closed meshes
    Mesh,
    /// voxelize boundaries and score them against the ground truth
    Evaluate,
    /// run every stage for both methods
    Pipeline,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum MethodArg {
    Ray,
    Graph,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Ray => Method::Ray,
            MethodArg::Graph => Method::Graph,
        }
    }
}

const EXIT_PIPELINE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn threads_from_env() -> Result<Option<usize>, String> {
    match std::env::var("FIBERSEG_THREADS") {
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("FIBERSEG_THREADS must be a positive integer, got {v:?}")),
        },
        Err(_) => Ok(None),
    }
}

fn run(cli: &Cli, cfg: &PipelineConfig) -> fiberseg_core::Result<()> {
    let out = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let layout = Layout::new(&out);
    let method = cli.method.map(Method::from);
    match cli.command {
        Command::Phantom => pipeline::stage_phantom(cfg, &layout, cli.seed)?,
        Command::Track => pipeline::stage_track(cfg, &layout)?,
        Command::Segment => {
            let methods = method.map_or(Method::ALL.to_vec(), |m| vec![m]);
            for m in methods {
                pipeline::stage_segment(cfg, &layout, m)?;
                println!("wrote {}", layout.boundary(m).display());
            }
        }
        Command::Mesh => pipeline::stage_mesh(&layout, method)?,
        Command::Evaluate => {
            let id = format!("seed_{}", cli.seed.unwrap_or_else(|| cfg.base_seed()));
            let report = pipeline::stage_evaluate(cfg, &layout, method, &id)?;
            print!("{}", report.to_table());
        }
        Command::Pipeline => {
            let report = pipeline::run_pipeline(cfg, &out, cli.seed)?;
            print!("{}", report.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    let cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path),
        None => Ok(PipelineConfig::default()),
    };
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let pool = match threads_from_env().and_then(|t| pipeline::thread_pool(t).map_err(|e| e.to_string())) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match pool.install(|| run(&cli, &cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_PIPELINE)
        }
    }
}
