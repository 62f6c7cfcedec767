use std::path::PathBuf;
use std::process::ExitCode;

use ballspin_cli::eval::{evaluate, load_checkpoint, EvalRequest};
use ballspin_cli::inspect::inspect;
use ballspin_cli::train::{train, Control};
use ballspin_cli::{CliError, RunConfig};
use ballspin_core::curriculum::Axis;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "ballspin", version, about = "Train and evaluate supine quadruped ball-rotation policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Roll,
    Pitch,
    Yaw,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Roll => Axis::Roll,
            AxisArg::Pitch => Axis::Pitch,
            AxisArg::Yaw => Axis::Yaw,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Full curriculum.
    Full,
    /// Zero speed, factor 0.2, 500 iterations.
    Stage0,
}

#[derive(Subcommand)]
enum Command {
    /// Run the collect/update loop and write metrics and checkpoints.
    Train {
        /// TOML run configuration; omitted keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run mean-action episodes from a checkpoint and write traces.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Command axis in the base frame.
        #[arg(long, value_enum, default_value = "roll")]
        axis: AxisArg,
        /// Commanded ball speed, deg/s.
        #[arg(long, default_value_t = 10.0)]
        speed_deg: f64,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
        /// Seed of the evaluation episode streams.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for per-episode traces and summary.json.
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// Print the header, shapes and norms of a checkpoint.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Print a complete configuration with every default filled in.
    Defaults {
        #[arg(long, value_enum, default_value = "full")]
        preset: Preset,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let mut cfg = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let workers = cfg.effective_workers()?;
            log::info!("config digest {}, {workers} worker(s)", cfg.digest());
            let outcome = train(&cfg, &cfg.output_dir.clone(), workers, |row, _| {
                log::info!(
                    "iteration {}: reward {:.4}, episode length {:.1}, kl {:.5}",
                    row.iteration,
                    row.mean_reward,
                    row.mean_episode_length,
                    row.approx_kl
                );
                Control::Continue
            })?;
            println!("trained {} iterations; final checkpoint {}", outcome.iterations, outcome.final_checkpoint.display());
        }
        Command::Eval { checkpoint, axis, speed_deg, episodes, seed, out } => {
            let (ckpt, cfg) = load_checkpoint(&checkpoint)?;
            let req = EvalRequest { axis: axis.into(), speed_deg, episodes, seed };
            let summary = evaluate(&ckpt.params, &cfg, ckpt.iteration, &req, &out)?;
            println!(
                "{} episode(s): mean dq {:.4} rad, max dq {:.4} rad, mean angular speed {:.2} deg/s, mean survival {:.2} s",
                summary.episodes.len(),
                summary.mean_delta_q,
                summary.max_delta_q,
                summary.mean_angular_speed_deg,
                summary.mean_survival_time_s
            );
        }
        Command::Inspect { checkpoint } => print!("{}", inspect(&checkpoint)?),
        Command::Defaults { preset } => {
            let cfg = match preset {
                Preset::Full => RunConfig::default(),
                Preset::Stage0 => RunConfig::stage0(),
            };
            print!("{}", cfg.canonical_toml());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
