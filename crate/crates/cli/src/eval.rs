//! Deterministic evaluation of a trained policy.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context};
use serde::Serialize;

use lunacat_core::checkpoint::Checkpoint;
use lunacat_core::constraints::{ConstraintKind, ViolationCounter};
use lunacat_core::env::Environment;
use lunacat_core::policy::NetworkShape;
use lunacat_sim::observation::OBS_DIM;
use lunacat_sim::LunaEnv;

use crate::config::RunConfig;
use crate::UsageError;

/// Steps at the end of an episode over which the final error is averaged.
pub const FINAL_WINDOW_STEPS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub episode: usize,
    /// Mean position error over the final window, m.
    pub position_error: f64,
    /// Mean orientation error over the final window, rad.
    pub orientation_error: f64,
    pub steps: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            mean: sorted.iter().sum::<f64>() / sorted.len().max(1) as f64,
            median: quantile(&sorted, 0.5),
            p95: quantile(&sorted, 0.95),
        }
    }
}

/// Linear-interpolated quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViolationRow {
    pub constraint: String,
    pub kind: ConstraintKind,
    /// Episode violation time, percent of steps, averaged over episodes.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub seed: u64,
    pub episodes: Vec<EpisodeResult>,
    pub position: Summary,
    pub orientation: Summary,
    pub violations: Vec<ViolationRow>,
}

impl EvalReport {
    pub fn hard_violations_zero(&self) -> bool {
        self.violations
            .iter()
            .filter(|v| v.kind == ConstraintKind::Hard)
            .all(|v| v.percent == 0.0)
    }

    pub fn max_soft_violation(&self) -> f64 {
        self.violations
            .iter()
            .filter(|v| v.kind == ConstraintKind::Soft)
            .map(|v| v.percent)
            .fold(0.0, f64::max)
    }

    pub fn render(&self) -> String {
        let mut out = format!("episodes={} seed={}\n", self.episodes.len(), self.seed);
        out.push_str(&format!(
            "position_error_m     mean={:.4} median={:.4} p95={:.4}\n",
            self.position.mean, self.position.median, self.position.p95
        ));
        out.push_str(&format!(
            "orientation_error_deg mean={:.3} median={:.3} p95={:.3}\n",
            self.orientation.mean.to_degrees(),
            self.orientation.median.to_degrees(),
            self.orientation.p95.to_degrees()
        ));
        out.push_str("\nconstraint            kind  violation_time_pct\n");
        for v in &self.violations {
            let kind = match v.kind {
                ConstraintKind::Soft => "soft",
                ConstraintKind::Hard => "hard",
            };
            out.push_str(&format!("{:<21} {:<5} {:.4}\n", v.constraint, kind, v.percent));
        }
        out
    }

    pub fn write_files(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut w = csv::Writer::from_path(dir.join("eval_episodes.csv"))?;
        w.write_record(["episode", "position_error_m", "orientation_error_rad", "steps"])?;
        for e in &self.episodes {
            w.write_record([
                e.episode.to_string(),
                e.position_error.to_string(),
                e.orientation_error.to_string(),
                e.steps.to_string(),
            ])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("eval_violations.csv"))?;
        w.write_record(["constraint", "kind", "violation_time_pct"])?;
        for v in &self.violations {
            let kind = if v.kind == ConstraintKind::Hard { "hard" } else { "soft" };
            w.write_record([v.constraint.clone(), kind.to_string(), v.percent.to_string()])?;
        }
        w.flush()?;
        std::fs::write(dir.join("eval_summary.txt"), self.render())?;
        Ok(())
    }
}

/// Runs `episodes` full-length episodes with the policy mean action.
///
/// Episodes are not cut short by hard constraints; every step of every
/// episode counts towards the violation table. When `trajectory` is given,
/// the first episode is logged to it step by step.
pub fn evaluate(
    config: &RunConfig,
    checkpoint: &Checkpoint,
    episodes: usize,
    seed: u64,
    mut trajectory: Option<&mut dyn Write>,
) -> anyhow::Result<EvalReport> {
    if episodes == 0 {
        bail!(UsageError("--episodes must be positive".into()));
    }
    let expected = NetworkShape::new(OBS_DIM, &config.learner.hidden, 6);
    if checkpoint.params.shape != expected {
        bail!(UsageError(format!(
            "checkpoint network {:?} does not match the configuration {:?}",
            checkpoint.params.shape, expected
        )));
    }
    let names: Vec<&str> = checkpoint.constraints.iter().map(|(n, _)| n.as_str()).collect();
    let configured: Vec<&str> = config.constraints.iter().map(|c| c.name.as_str()).collect();
    if names != configured {
        bail!(UsageError(format!("checkpoint constraints {names:?} do not match the configuration")));
    }
    let constraints = config.constraint_set()?;
    let mut envs = (0..episodes)
        .map(|i| LunaEnv::new(config.environment.clone(), config.rewards.clone(), seed, i))
        .collect::<Result<Vec<_>, _>>()?;
    let mut obs: Vec<f64> = envs.iter_mut().flat_map(|e| e.reset()).collect();
    let mut counters = vec![ViolationCounter::new(constraints.len()); episodes];
    let mut windows: Vec<Vec<(f64, f64)>> = vec![Vec::new(); episodes];
    let mut done = vec![false; episodes];
    if let Some(w) = trajectory.as_deref_mut() {
        writeln!(
            w,
            "step,base_x,base_z,pitch,ee_x,ee_z,ee_angle,command_x,command_z,command_angle,position_error_m,orientation_error_rad"
        )?;
    }
    let params = &checkpoint.params;
    let mut input = vec![0.0; obs.len()];
    while done.iter().any(|d| !d) {
        match &checkpoint.normalizer {
            Some(n) => {
                for (raw, out) in obs.chunks(OBS_DIM).zip(input.chunks_mut(OBS_DIM)) {
                    n.normalize_into(raw, out);
                }
            }
            None => input.copy_from_slice(&obs),
        }
        let fwd = params.forward_batch(&input, episodes)?;
        for (i, env) in envs.iter_mut().enumerate() {
            if done[i] {
                continue;
            }
            let result = env.step(fwd.mean(i)).map_err(|e| anyhow::anyhow!("episode {i}: {e}"))?;
            let violations = constraints.violations(&result.signals)?;
            counters[i].record(&violations);
            let info = env.last_info();
            let window = &mut windows[i];
            window.push((info.position_error, info.orientation_error));
            if window.len() > FINAL_WINDOW_STEPS {
                window.remove(0);
            }
            if i == 0 {
                if let Some(w) = trajectory.as_deref_mut() {
                    let b = env.state().base;
                    let c = env.command();
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{},{},{},{},{},{}",
                        env.steps(),
                        b.x,
                        b.z,
                        b.pitch,
                        info.ee_position[0],
                        info.ee_position[1],
                        info.ee_angle,
                        c.x,
                        c.z,
                        c.angle,
                        info.position_error,
                        info.orientation_error
                    )?;
                }
            }
            obs[i * OBS_DIM..(i + 1) * OBS_DIM].copy_from_slice(&result.observation);
            done[i] = result.time_limit;
        }
    }

    let results: Vec<EpisodeResult> = windows
        .iter()
        .zip(&envs)
        .enumerate()
        .map(|(i, (w, env))| EpisodeResult {
            episode: i,
            position_error: w.iter().map(|p| p.0).sum::<f64>() / w.len() as f64,
            orientation_error: w.iter().map(|p| p.1).sum::<f64>() / w.len() as f64,
            steps: env.steps(),
        })
        .collect();
    let mut totals = vec![0.0; constraints.len()];
    for c in &counters {
        for (t, p) in totals.iter_mut().zip(c.percentages()?) {
            *t += p;
        }
    }
    let violations = constraints
        .specs()
        .iter()
        .zip(totals)
        .map(|(spec, total)| ViolationRow {
            constraint: spec.name.clone(),
            kind: spec.kind,
            percent: total / episodes as f64,
        })
        .collect();
    let pos: Vec<f64> = results.iter().map(|r| r.position_error).collect();
    let rot: Vec<f64> = results.iter().map(|r| r.orientation_error).collect();
    Ok(EvalReport {
        seed,
        position: Summary::of(&pos),
        orientation: Summary::of(&rot),
        episodes: results,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 5.0);
        assert!((quantile(&v, 0.95) - 4.8).abs() < 1e-12);
        let s = Summary::of(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.mean, 2.5);
    }
}
