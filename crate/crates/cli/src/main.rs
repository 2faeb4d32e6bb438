mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stitchkit_core::error::{Error, Result};

#[derive(Parser)]
#[command(
    name = "stitchkit",
    version,
    about = "Train, stitch, and analyze modular policies for planar arms"
)]
struct Cli {
    /// Run configuration file (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Name of a built-in configuration
    #[arg(long, global = true, conflicts_with = "config")]
    preset: Option<String>,

    /// Override the run seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Where artifacts go: a directory for train and finetune, a file for
    /// everything else
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a policy from a config file or preset
    Train,

    /// Roll out trained policies and cluster the visited task states into
    /// a shared anchor set
    CollectAnchors {
        /// Checkpoints whose policies gather the states
        #[arg(long = "ckpt", required = true, num_args = 1..)]
        ckpts: Vec<PathBuf>,
        /// Environment per checkpoint; defaults to each checkpoint's own
        #[arg(long = "env", num_args = 1..)]
        envs: Vec<String>,
        /// Rollout episodes per checkpoint
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        /// Anchors to keep
        #[arg(short, long, default_value_t = 16)]
        k: usize,
    },

    /// Combine the task half of one checkpoint with the robot half of
    /// another
    Stitch {
        /// Donor of the task module
        #[arg(long)]
        task: PathBuf,
        /// Donor of the robot module
        #[arg(long)]
        robot: PathBuf,
        /// Target environment the combination is meant for
        #[arg(long)]
        env: String,
    },

    /// Roll out a checkpoint greedily and report success rates
    Eval {
        ckpt: PathBuf,
        /// Evaluate somewhere other than the checkpoint's own environment
        #[arg(long)]
        env: Option<String>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        /// One table row per seed
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
    },

    /// Stitch two checkpoints and fine-tune the result on the target
    /// environment
    Finetune {
        /// Donor of the task module
        #[arg(long)]
        task: PathBuf,
        /// Donor of the robot module
        #[arg(long)]
        robot: PathBuf,
        /// Environment to fine-tune on
        #[arg(long)]
        env: String,
        /// Training epochs (defaults to 30; a config's epoch count is
        /// ignored here)
        #[arg(long)]
        epochs: Option<usize>,
        /// Epochs of stitched-policy rollouts that fill the buffer before
        /// the first gradient step
        #[arg(long, default_value_t = 10)]
        warm_epochs: usize,
    },

    /// Dump interface latents (and a PCA projection) to CSV
    AnalyzeLatent {
        ckpt: PathBuf,
        #[arg(long)]
        env: Option<String>,
        /// States to visit
        #[arg(long, default_value_t = 512)]
        states: usize,
        /// Dimensions of the PCA companion file; 0 skips the projection
        #[arg(long, default_value_t = 2)]
        pca: usize,
    },

    /// Distances between policies' latents on shared probe states
    AnalyzePairwise {
        #[arg(required = true, num_args = 2..)]
        ckpts: Vec<PathBuf>,
        /// Environment the probe states come from; defaults to the first
        /// checkpoint's own
        #[arg(long)]
        env: Option<String>,
        #[arg(long, default_value_t = 512)]
        states: usize,
    },

    /// Probe how well positions read out of a policy's robot module
    AnalyzeRegression {
        ckpt: PathBuf,
        #[arg(long)]
        env: Option<String>,
        #[arg(long, default_value_t = 1000)]
        points: usize,
    },
}

fn run(cli: Cli) -> Result<()> {
    let config = cli.config.as_deref();
    let preset = cli.preset.as_deref();
    let seed = cli.seed;
    let out = cli.out;
    match cli.cmd {
        Cmd::Train => {
            let out = out.unwrap_or_else(|| PathBuf::from("runs"));
            commands::cmd_train(config, preset, seed, &out)
        }
        Cmd::CollectAnchors {
            ckpts,
            envs,
            episodes,
            k,
        } => {
            let out = out.unwrap_or_else(|| PathBuf::from("anchors.bin"));
            commands::cmd_collect_anchors(&ckpts, &envs, episodes, k, seed.unwrap_or(0), &out)
        }
        Cmd::Stitch { task, robot, env } => {
            let out = out.unwrap_or_else(|| PathBuf::from("stitched.ckpt"));
            commands::cmd_stitch(&task, &robot, &env, seed.unwrap_or(0), &out)
        }
        Cmd::Eval {
            ckpt,
            env,
            episodes,
            seeds,
        } => commands::cmd_eval(&ckpt, env.as_deref(), episodes, &seeds, out.as_deref()),
        Cmd::Finetune {
            task,
            robot,
            env,
            epochs,
            warm_epochs,
        } => {
            let out_dir = out.unwrap_or_else(|| PathBuf::from("runs"));
            commands::cmd_finetune(
                &task,
                &robot,
                &env,
                epochs,
                warm_epochs,
                config,
                preset,
                seed,
                &out_dir,
            )
        }
        Cmd::AnalyzeLatent {
            ckpt,
            env,
            states,
            pca,
        } => {
            let out = out.unwrap_or_else(|| PathBuf::from("latents.csv"));
            commands::cmd_analyze_latent(&ckpt, env.as_deref(), states, pca, seed.unwrap_or(0), &out)
        }
        Cmd::AnalyzePairwise { ckpts, env, states } => commands::cmd_analyze_pairwise(
            &ckpts,
            env.as_deref(),
            states,
            seed.unwrap_or(0),
            out.as_deref(),
        ),
        Cmd::AnalyzeRegression { ckpt, env, points } => commands::cmd_analyze_regression(
            &ckpt,
            env.as_deref(),
            points,
            seed.unwrap_or(0),
            out.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Incompatible(_) => 3,
                Error::Numerical(_) => 4,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}
