//! Procedural 1-D heightfields.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TerrainError {
    #[error("wavelength {0} must be positive and finite")]
    Wavelength(f64),
    #[error("{0} amplitudes but {1} wavelengths")]
    Mismatch(usize, usize),
    #[error("invalid terrain parameter: {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TerrainParams {
    /// Half-extent of the grid, m.
    pub half_length: f64,
    pub spacing: f64,
    pub amplitudes: Vec<f64>,
    pub wavelengths: Vec<f64>,
    /// Half-width of the uniform per-sample noise, m.
    pub noise_scale: f64,
    /// Heights are clamped to this magnitude after smoothing, m.
    pub max_amplitude: f64,
    /// Draw a fresh field on every reset instead of once per environment.
    pub regenerate_on_reset: bool,
}

impl Default for TerrainParams {
    fn default() -> Self {
        Self {
            half_length: 5.0,
            spacing: 0.05,
            amplitudes: vec![0.04, 0.02, 0.008],
            wavelengths: vec![2.3, 0.9, 0.35],
            noise_scale: 0.005,
            max_amplitude: 0.15,
            regenerate_on_reset: true,
        }
    }
}

impl TerrainParams {
    pub fn flat() -> Self {
        Self {
            amplitudes: vec![],
            wavelengths: vec![],
            noise_scale: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TerrainError> {
        if self.amplitudes.len() != self.wavelengths.len() {
            return Err(TerrainError::Mismatch(self.amplitudes.len(), self.wavelengths.len()));
        }
        if let Some(&w) = self.wavelengths.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(TerrainError::Wavelength(w));
        }
        if !(self.spacing > 0.0 && self.half_length >= self.spacing) {
            return Err(TerrainError::Invalid("spacing must be positive and below half_length"));
        }
        if !(self.noise_scale >= 0.0 && self.max_amplitude >= 0.0) {
            return Err(TerrainError::Invalid("noise_scale and max_amplitude must be non-negative"));
        }
        if self.amplitudes.iter().any(|a| !a.is_finite()) {
            return Err(TerrainError::Invalid("amplitudes must be finite"));
        }
        Ok(())
    }
}

/// Heights on a uniform grid over `[-half_length, half_length]` with linear
/// interpolation between samples and constant extension past the ends.
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainField {
    pub heights: Vec<f64>,
    pub spacing: f64,
    pub x0: f64,
    pub seed: u64,
}

impl TerrainField {
    pub fn flat(params: &TerrainParams) -> Self {
        let n = (2.0 * params.half_length / params.spacing).round() as usize + 1;
        Self {
            heights: vec![0.0; n],
            spacing: params.spacing,
            x0: -params.half_length,
            seed: 0,
        }
    }

    pub fn generate(seed: u64, params: &TerrainParams) -> Result<Self, TerrainError> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut field = Self::flat(params);
        field.seed = seed;
        let phases: Vec<f64> = params.wavelengths.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        let raw: Vec<f64> = (0..field.heights.len())
            .map(|i| {
                let x = field.x0 + i as f64 * field.spacing;
                let waves: f64 = params
                    .amplitudes
                    .iter()
                    .zip(&params.wavelengths)
                    .zip(&phases)
                    .map(|((a, l), p)| a * (2.0 * PI * x / l + p).sin())
                    .sum();
                let noise = if params.noise_scale > 0.0 {
                    rng.random_range(-params.noise_scale..params.noise_scale)
                } else {
                    0.0
                };
                waves + noise
            })
            .collect();
        let last = raw.len() - 1;
        for (i, h) in field.heights.iter_mut().enumerate() {
            let smoothed = 0.25 * raw[i.saturating_sub(1)] + 0.5 * raw[i] + 0.25 * raw[(i + 1).min(last)];
            *h = smoothed.clamp(-params.max_amplitude, params.max_amplitude);
        }
        Ok(field)
    }

    fn locate(&self, x: f64) -> (usize, f64) {
        let last = self.heights.len() - 1;
        let u = ((x - self.x0) / self.spacing).clamp(0.0, last as f64);
        let i = (u.floor() as usize).min(last.saturating_sub(1));
        (i, u - i as f64)
    }

    pub fn height(&self, x: f64) -> f64 {
        if self.heights.len() == 1 {
            return self.heights[0];
        }
        let (i, t) = self.locate(x);
        self.heights[i] * (1.0 - t) + self.heights[i + 1] * t
    }

    /// Slope of the interpolant; zero beyond the grid.
    pub fn slope(&self, x: f64) -> f64 {
        let end = self.x0 + (self.heights.len() - 1) as f64 * self.spacing;
        if self.heights.len() == 1 || x <= self.x0 || x >= end {
            return 0.0;
        }
        let (i, _) = self.locate(x);
        (self.heights[i + 1] - self.heights[i]) / self.spacing
    }

    /// Largest slope between adjacent samples.
    pub fn max_slope(&self) -> f64 {
        self.heights
            .windows(2)
            .map(|w| (w[1] - w[0]).abs() / self.spacing)
            .fold(0.0, f64::max)
    }

    pub fn max_abs_height(&self) -> f64 {
        self.heights.iter().map(|h| h.abs()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_amplitudes_give_flat_ground() {
        let f = TerrainField::generate(3, &TerrainParams::flat()).unwrap();
        assert!(f.heights.iter().all(|&h| h == 0.0));
        assert_eq!(f.heights.len(), 201);
    }

    #[test]
    fn same_seed_same_field() {
        let p = TerrainParams::default();
        assert_eq!(TerrainField::generate(9, &p).unwrap(), TerrainField::generate(9, &p).unwrap());
        assert_ne!(TerrainField::generate(9, &p).unwrap(), TerrainField::generate(10, &p).unwrap());
    }

    #[test]
    fn amplitude_cap_holds_on_every_sample() {
        let p = TerrainParams {
            amplitudes: vec![0.3, 0.2],
            wavelengths: vec![1.0, 0.4],
            noise_scale: 0.05,
            max_amplitude: 0.1,
            ..TerrainParams::default()
        };
        for seed in 0..20 {
            let f = TerrainField::generate(seed, &p).unwrap();
            assert!(f.max_abs_height() <= 0.1);
            let mut x = -6.0;
            while x < 6.0 {
                assert!(f.height(x).abs() <= 0.1);
                x += 0.0123;
            }
        }
    }

    #[test]
    fn bad_wavelength_rejected() {
        let p = TerrainParams {
            wavelengths: vec![1.0, 0.0, 2.0],
            ..TerrainParams::default()
        };
        assert_eq!(TerrainField::generate(0, &p), Err(TerrainError::Wavelength(0.0)));
    }

    #[test]
    fn interpolation_hits_samples_and_clamps_edges() {
        let f = TerrainField::generate(1, &TerrainParams::default()).unwrap();
        for i in [0, 17, 100, 200] {
            let x = f.x0 + i as f64 * f.spacing;
            assert!((f.height(x) - f.heights[i]).abs() < 1e-12);
        }
        assert_eq!(f.height(-100.0), f.heights[0]);
        assert_eq!(f.height(100.0), *f.heights.last().unwrap());
    }

    #[test]
    fn lipschitz_bound() {
        let f = TerrainField::generate(5, &TerrainParams::default()).unwrap();
        let bound = f.max_slope();
        let eps = 1e-3;
        let mut x = -5.5;
        while x < 5.5 {
            assert!((f.height(x + eps) - f.height(x)).abs() <= bound * eps + 1e-12);
            x += 0.0071;
        }
    }
}
