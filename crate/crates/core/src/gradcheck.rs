//! Finite-difference verification of the policy gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::policy::{accumulate_log_prob_grad, gaussian_log_prob, NetworkShape, PolicyError, PolicyParameters};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Deliberate corruption of the analytic gradient, for negative controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientFault {
    #[default]
    None,
    /// Negates the gradient of the first actor weight matrix.
    FlipSign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub seed: u64,
    pub networks: usize,
    pub tolerance: f64,
    /// `(block name, max relative error over networks)`.
    pub blocks: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.blocks.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_relative_error() < self.tolerance
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "gradcheck seed={} networks={} tolerance={:e}\n",
            self.seed, self.networks, self.tolerance
        );
        for (name, err) in &self.blocks {
            out.push_str(&format!("{name:<18} max_rel_error={err:.3e}\n"));
        }
        out.push_str(&format!(
            "overall max_rel_error={:.3e} {}\n",
            self.max_relative_error(),
            if self.passed() { "PASS" } else { "FAIL" }
        ));
        out
    }
}

/// Scalar test loss: weighted log-likelihood of fixed actions plus a squared
/// value regression term.
struct Probe {
    obs: Vec<f64>,
    actions: Vec<f64>,
    targets: Vec<f64>,
    batch: usize,
}

impl Probe {
    fn loss(&self, params: &PolicyParameters) -> Result<f64, PolicyError> {
        let fwd = params.forward_batch(&self.obs, self.batch)?;
        let a = params.shape.action_dim;
        let mut loss = 0.0;
        for b in 0..self.batch {
            let act = &self.actions[b * a..(b + 1) * a];
            loss += 0.7 * gaussian_log_prob(act, fwd.mean(b), &params.log_std);
            let dv = fwd.values[b] - self.targets[b];
            loss += 0.5 * dv * dv;
        }
        Ok(loss)
    }

    fn analytic(&self, params: &PolicyParameters) -> Result<Vec<Vec<f64>>, PolicyError> {
        let fwd = params.forward_batch(&self.obs, self.batch)?;
        let a = params.shape.action_dim;
        let mut d_means = vec![0.0; self.batch * a];
        let mut d_log_std = vec![0.0; a];
        let mut d_values = vec![0.0; self.batch];
        for b in 0..self.batch {
            let act = &self.actions[b * a..(b + 1) * a];
            accumulate_log_prob_grad(
                act,
                fwd.mean(b),
                &params.log_std,
                0.7,
                &mut d_means[b * a..(b + 1) * a],
                &mut d_log_std,
            );
            d_values[b] = fwd.values[b] - self.targets[b];
        }
        let grads = params.backward(&fwd, &d_means, &d_values, &d_log_std)?;
        Ok(grads.blocks().into_iter().map(<[f64]>::to_vec).collect())
    }
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-8)
}

/// Compares analytic and central-difference gradients block by block on one
/// network. Returns per-block relative errors `|a - n| / max(|a|, |n|)`.
pub fn check_network(
    params: &PolicyParameters,
    rng: &mut impl Rng,
    step: f64,
    fault: GradientFault,
) -> Result<Vec<f64>, PolicyError> {
    let batch = 3;
    let shape = &params.shape;
    let probe = Probe {
        obs: (0..batch * shape.input_dim).map(|_| rng.random_range(-1.5..1.5)).collect(),
        actions: (0..batch * shape.action_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        targets: (0..batch).map(|_| rng.random_range(-1.0..1.0)).collect(),
        batch,
    };
    let mut analytic = probe.analytic(params)?;
    if fault == GradientFault::FlipSign {
        analytic[0].iter_mut().for_each(|g| *g = -*g);
    }
    let mut work = params.clone();
    let mut errors = Vec::with_capacity(analytic.len());
    for (b, block) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; block.len()];
        for (i, n) in numeric.iter_mut().enumerate() {
            let original = work.blocks()[b][i];
            work.blocks_mut()[b][i] = original + step;
            let plus = probe.loss(&work)?;
            work.blocks_mut()[b][i] = original - step;
            let minus = probe.loss(&work)?;
            work.blocks_mut()[b][i] = original;
            *n = (plus - minus) / (2.0 * step);
        }
        errors.push(relative_error(block, &numeric));
    }
    Ok(errors)
}

/// Runs the check on `networks` randomly shaped two-hidden-layer networks
/// with 16 to 32 units per layer.
pub fn run_gradcheck(seed: u64, networks: usize, fault: GradientFault) -> Result<GradCheckReport, PolicyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks: Vec<(String, f64)> = Vec::new();
    for _ in 0..networks {
        let shape = NetworkShape::new(
            rng.random_range(3..=8),
            &[rng.random_range(16..=32), rng.random_range(16..=32)],
            rng.random_range(1..=3),
        );
        let mut params = PolicyParameters::new(shape, &mut rng)?;
        // Larger output gains and a random log-std exercise every term.
        for layer in [params.actor.layers.last_mut(), params.critic.layers.last_mut()]
            .into_iter()
            .flatten()
        {
            layer.weight.iter_mut().for_each(|w| *w *= 50.0);
            layer.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
        for s in &mut params.log_std {
            *s = rng.random_range(-1.0..0.5);
        }
        params.touch();
        let errors = check_network(&params, &mut rng, DEFAULT_STEP, fault)?;
        if blocks.is_empty() {
            blocks = params.block_names().into_iter().map(|n| (n, 0.0)).collect();
        }
        for (slot, err) in blocks.iter_mut().zip(errors) {
            slot.1 = slot.1.max(err);
        }
    }
    Ok(GradCheckReport {
        seed,
        networks,
        tolerance: DEFAULT_TOLERANCE,
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_matches_finite_differences() {
        let report = run_gradcheck(7, 3, GradientFault::None).unwrap();
        assert!(report.passed(), "{}", report.render());
        assert_eq!(report.blocks.len(), 13);
    }

    #[test]
    fn sign_flip_is_detected() {
        let report = run_gradcheck(7, 1, GradientFault::FlipSign).unwrap();
        assert!(!report.passed());
        assert!(report.blocks[0].1 > 1.0);
    }

    #[test]
    fn report_is_reproducible() {
        let a = run_gradcheck(3, 2, GradientFault::None).unwrap();
        let b = run_gradcheck(3, 2, GradientFault::None).unwrap();
        assert_eq!(a.render(), b.render());
    }
}
