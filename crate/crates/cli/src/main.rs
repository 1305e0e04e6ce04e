use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use lunacat::config::RunConfig;
use lunacat::eval::evaluate;
use lunacat::export::{export_run, ExportFormat, EVAL_DIR};
use lunacat::train::{run_training, CONFIG_FILE};
use lunacat::{exit_code, UsageError};
use lunacat_core::checkpoint::Checkpoint;
use lunacat_core::gradcheck::{run_gradcheck, GradientFault};
use lunacat_core::tinycmdp::{run_tinycmdp, TinyCmdpConfig};

#[derive(Parser)]
#[command(name = "lunacat", version, about = "Constrained locomotion training harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy from a run configuration.
    Train {
        config: PathBuf,
        /// Overrides `output.directory`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `learner.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `learner.total_iterations`.
        #[arg(long)]
        iterations: Option<u64>,
    },
    /// Evaluate a checkpoint with the deterministic policy.
    Eval {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 128)]
        episodes: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Run configuration; defaults to the one saved next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; defaults to `eval/` in the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the first episode's trajectory to this CSV file.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Compare analytic policy gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        networks: usize,
        #[arg(long, hide = true)]
        inject_sign_flip: bool,
    },
    /// Train on the five-state chain and compare with value iteration.
    Tinycmdp {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        disable_cat: bool,
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Print the default run configuration.
    DefaultConfig,
    /// Summarize a run directory into tables and histograms.
    Export {
        run_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = ExportFormat::Csv)]
        format: ExportFormat,
    },
}

/// Resolves the run directory holding a checkpoint, which is either its
/// parent or, for numbered checkpoints, its grandparent.
fn run_dir_of(checkpoint: &std::path::Path) -> PathBuf {
    let parent = checkpoint.parent().map(PathBuf::from).unwrap_or_default();
    if parent.file_name().is_some_and(|n| n == "checkpoints") {
        parent.parent().map(PathBuf::from).unwrap_or_default()
    } else {
        parent
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Train {
            config,
            out,
            seed,
            iterations,
        } => {
            let mut config = RunConfig::load(&config)?;
            if let Some(out) = out {
                config.output.directory = out;
            }
            if let Some(seed) = seed {
                config.learner.seed = seed;
            }
            if let Some(n) = iterations {
                config.learner.total_iterations = n;
            }
            config.validate()?;
            let dir = run_training(&config)?;
            println!("run written to {}", dir.display());
            Ok(true)
        }
        Command::Eval {
            checkpoint,
            episodes,
            seed,
            config,
            out,
            trajectory,
        } => {
            let run_dir = run_dir_of(&checkpoint);
            let config = RunConfig::load(&config.unwrap_or_else(|| run_dir.join(CONFIG_FILE)))?;
            let ck = Checkpoint::load(&checkpoint)
                .map_err(|e| UsageError(format!("cannot load {}: {e}", checkpoint.display())))?;
            let mut traj = match &trajectory {
                Some(path) => Some(BufWriter::new({
                    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                        std::fs::create_dir_all(parent)?;
                    }
                    File::create(path).with_context(|| format!("creating {}", path.display()))?
                })),
                None => None,
            };
            let report = evaluate(
                &config,
                &ck,
                episodes,
                seed,
                traj.as_mut().map(|w| w as &mut dyn std::io::Write),
            )?;
            let out = out.unwrap_or_else(|| run_dir.join(EVAL_DIR));
            report.write_files(&out)?;
            print!("{}", report.render());
            Ok(true)
        }
        Command::Gradcheck {
            seed,
            networks,
            inject_sign_flip,
        } => {
            let fault = if inject_sign_flip {
                GradientFault::FlipSign
            } else {
                GradientFault::None
            };
            let report = run_gradcheck(seed, networks, fault)?;
            print!("{}", report.render());
            Ok(report.passed())
        }
        Command::Tinycmdp {
            seed,
            disable_cat,
            gamma,
        } => {
            let mut config = TinyCmdpConfig::new(seed, !disable_cat);
            if let Some(g) = gamma {
                if !(0.0..1.0).contains(&g) {
                    anyhow::bail!(UsageError(format!("--gamma must lie in [0, 1), got {g}")));
                }
                config.gamma = g;
            }
            let report = run_tinycmdp(&config)?;
            print!("{}", report.render());
            Ok(true)
        }
        Command::DefaultConfig => {
            print!("{}", RunConfig::default().to_toml()?);
            Ok(true)
        }
        Command::Export { run_dir, format } => {
            let out = export_run(&run_dir, format)?;
            println!("export written to {}", out.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
