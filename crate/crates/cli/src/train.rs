//! The `train` command.

use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::Context;
use log::{info, warn};

use lunacat_core::train::Trainer;
use lunacat_sim::LunaEnv;

use crate::config::RunConfig;
use crate::eval::evaluate;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const LATEST_CHECKPOINT: &str = "checkpoint.bin";
pub const PERIODIC_EVAL_FILE: &str = "periodic_eval.csv";

pub fn build_trainer(config: &RunConfig) -> anyhow::Result<Trainer<LunaEnv>> {
    let envs = (0..config.learner.num_envs)
        .map(|i| LunaEnv::new(config.environment.clone(), config.rewards.clone(), config.learner.seed, i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Trainer::new(config.learner.clone(), envs, config.constraint_set()?)?)
}

fn numbered_checkpoint(dir: &Path, iteration: u64) -> PathBuf {
    dir.join("checkpoints").join(format!("iter_{iteration:06}.bin"))
}

/// Trains into `config.output.directory`, writing the resolved config,
/// metrics, checkpoints and optional periodic evaluations.
pub fn run_training(config: &RunConfig) -> anyhow::Result<PathBuf> {
    let dir = config.output.directory.clone();
    std::fs::create_dir_all(dir.join("checkpoints")).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join(CONFIG_FILE), config.to_toml()?)?;
    let mut trainer = build_trainer(config)?;
    let mut metrics = csv::Writer::from_writer(File::create(dir.join(METRICS_FILE))?);
    metrics.write_record(trainer.metrics_header())?;
    let mut periodic = None;
    if config.output.eval_every > 0 {
        let mut w = csv::Writer::from_path(dir.join(PERIODIC_EVAL_FILE))?;
        w.write_record([
            "iteration",
            "position_median_m",
            "orientation_median_rad",
            "max_soft_violation_pct",
            "hard_violations_zero",
        ])?;
        periodic = Some(w);
    }

    let latest = dir.join(LATEST_CHECKPOINT);
    while !trainer.is_finished() {
        let row = match trainer.step() {
            Ok(row) => row,
            Err(e) => {
                warn!("training stopped: {e}");
                metrics.flush()?;
                trainer.checkpoint().save(&latest)?;
                return Err(e).context(format!("last checkpoint kept at {}", latest.display()));
            }
        };
        metrics.write_record(row.record())?;
        let done = trainer.iteration();
        if row.iteration % 10 == 0 {
            info!(
                "iter {} reward {:.4} pos {:.3} rot {:.3} delta {:.4}",
                row.iteration, row.mean_reward, row.pos_error, row.rot_error, row.delta_mean
            );
        }
        let every = config.output.checkpoint_every;
        if every > 0 && done % every == 0 {
            metrics.flush()?;
            let ck = trainer.checkpoint();
            ck.save(&numbered_checkpoint(&dir, done))?;
            ck.save(&latest)?;
        }
        if let Some(w) = periodic.as_mut() {
            if done % config.output.eval_every == 0 {
                let report = evaluate(
                    config,
                    &trainer.checkpoint(),
                    config.output.eval_episodes,
                    config.learner.seed.wrapping_add(1),
                    None,
                )?;
                w.write_record([
                    done.to_string(),
                    report.position.median.to_string(),
                    report.orientation.median.to_string(),
                    report.max_soft_violation().to_string(),
                    report.hard_violations_zero().to_string(),
                ])?;
                w.flush()?;
            }
        }
    }
    metrics.flush()?;
    trainer.checkpoint().save(&latest)?;
    Ok(dir)
}
