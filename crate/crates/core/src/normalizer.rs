//! Running mean/variance observation normalisation.

use serde::{Deserialize, Serialize};

const EPS: f64 = 1e-8;
pub const CLIP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNormalizer {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
}

impl RunningNormalizer {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            count: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Merges the statistics of `rows` (row-major `[n, dim]`).
    pub fn update(&mut self, rows: &[f64]) {
        let dim = self.dim();
        let n = (rows.len() / dim) as f64;
        if n == 0.0 {
            return;
        }
        let mut batch_mean = vec![0.0; dim];
        for row in rows.chunks_exact(dim) {
            batch_mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
        }
        batch_mean.iter_mut().for_each(|m| *m /= n);
        let mut batch_var = vec![0.0; dim];
        for row in rows.chunks_exact(dim) {
            for ((v, x), m) in batch_var.iter_mut().zip(row).zip(&batch_mean) {
                *v += (x - m) * (x - m);
            }
        }
        batch_var.iter_mut().for_each(|v| *v /= n);

        let total = self.count + n;
        for i in 0..dim {
            let delta = batch_mean[i] - self.mean[i];
            let m2 = self.var[i] * self.count + batch_var[i] * n + delta * delta * self.count * n / total;
            self.mean[i] += delta * n / total;
            self.var[i] = m2 / total;
        }
        self.count = total;
    }

    pub fn normalize_into(&self, obs: &[f64], out: &mut [f64]) {
        for (i, (o, x)) in out.iter_mut().zip(obs).enumerate() {
            let dim_i = i % self.dim();
            *o = ((x - self.mean[dim_i]) / (self.var[dim_i] + EPS).sqrt()).clamp(-CLIP, CLIP);
        }
    }

    pub fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; obs.len()];
        self.normalize_into(obs, &mut out);
        out
    }
}
