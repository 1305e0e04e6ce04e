//! Dense multilayer perceptron with ELU hidden activations, exact reverse-mode
//! gradients, and an Adam optimizer.
//!
//! Activations are stored row-major as `[batch, features]`; weights as
//! `[out, in]`. Matrix products go through `matrixmultiply`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("input has {got} values, expected {expected} ({batch} x {features})")]
    InputShape {
        got: usize,
        expected: usize,
        batch: usize,
        features: usize,
    },
    #[error("non-finite input value at index {0}")]
    NonFiniteInput(usize),
    #[error("cache does not match this network: {0}")]
    StaleCache(&'static str),
    #[error("non-finite gradient in block {block} at index {index}")]
    NonFiniteGradient { block: usize, index: usize },
    #[error("gradient layout mismatch: {0}")]
    GradientShape(String),
}

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
pub fn elu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// `c = beta * c + a * op(b)` for row-major `a: [m, k]`, with `b` given by
/// explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the strides address only elements inside `a` ([m, k]), `b`
    // ([k, n]) and `c` ([m, n] row-major); callers pass slices of those sizes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `[out_dim, in_dim]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Orthogonal initialisation scaled by `gain`; zero bias.
    pub fn orthogonal<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, gain: f64, rng: &mut R) -> Self {
        let mut layer = Self::zeros(in_dim, out_dim);
        // Orthonormalise whichever of rows/columns are fewer.
        let (count, len) = if out_dim <= in_dim {
            (out_dim, in_dim)
        } else {
            (in_dim, out_dim)
        };
        let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(count);
        while vecs.len() < count {
            let mut v: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
            for u in &vecs {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-8 {
                v.iter_mut().for_each(|a| *a /= norm);
                vecs.push(v);
            }
        }
        for (i, v) in vecs.iter().enumerate() {
            for (j, &x) in v.iter().enumerate() {
                let (row, col) = if out_dim <= in_dim { (i, j) } else { (j, i) };
                layer.weight[row * in_dim + col] = gain * x;
            }
        }
        layer
    }
}

/// Activations retained by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub batch: usize,
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
    dims: Vec<usize>,
}

impl MlpCache {
    /// Network output, `[batch, out_dim]`.
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// ELU hidden layers followed by a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// Orthogonal init with `hidden_gain` on hidden layers, `output_gain` on
    /// the last layer.
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_gain: f64,
        output_gain: f64,
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let gain = if i == last { output_gain } else { hidden_gain };
                Linear::orthogonal(w[0], w[1], gain, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty network").out_dim
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.out_dim));
        d
    }

    pub fn forward(&self, input: &[f64], batch: usize) -> Result<MlpCache, NnError> {
        let features = self.input_dim();
        if input.len() != batch * features {
            return Err(NnError::InputShape {
                got: input.len(),
                expected: batch * features,
                batch,
                features,
            });
        }
        if let Some(i) = input.iter().position(|x| !x.is_finite()) {
            return Err(NnError::NonFiniteInput(i));
        }
        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers);
        let mut current = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; batch * layer.out_dim];
            for row in z.chunks_exact_mut(layer.out_dim) {
                row.copy_from_slice(&layer.bias);
            }
            // z += x * W^T
            gemm(
                batch,
                layer.in_dim,
                layer.out_dim,
                &current,
                (layer.in_dim as isize, 1),
                &layer.weight,
                (1, layer.in_dim as isize),
                1.0,
                &mut z,
            );
            let next = if i + 1 < n_layers {
                z.iter().map(|&v| elu(v)).collect()
            } else {
                z.clone()
            };
            inputs.push(std::mem::replace(&mut current, next));
            pre.push(z);
        }
        Ok(MlpCache {
            batch,
            inputs,
            pre,
            output: current,
            dims: self.dims(),
        })
    }

    /// Gradients of a scalar loss with respect to every weight and bias, and
    /// to the input, given `grad_output = dL/d(output)`.
    pub fn backward(&self, cache: &MlpCache, grad_output: &[f64]) -> Result<(Vec<Linear>, Vec<f64>), NnError> {
        if cache.dims != self.dims() || cache.inputs.len() != self.layers.len() {
            return Err(NnError::StaleCache("layer dimensions differ"));
        }
        let batch = cache.batch;
        if grad_output.len() != batch * self.output_dim() {
            return Err(NnError::StaleCache("output gradient has the wrong size"));
        }
        let n_layers = self.layers.len();
        let mut grads: Vec<Linear> = Vec::with_capacity(n_layers);
        let mut delta = grad_output.to_vec();
        for i in (0..n_layers).rev() {
            let layer = &self.layers[i];
            if i + 1 < n_layers {
                for (d, &z) in delta.iter_mut().zip(&cache.pre[i]) {
                    *d *= elu_derivative(z);
                }
            }
            let mut g = Linear::zeros(layer.in_dim, layer.out_dim);
            // dW = delta^T * x
            gemm(
                layer.out_dim,
                batch,
                layer.in_dim,
                &delta,
                (1, layer.out_dim as isize),
                &cache.inputs[i],
                (layer.in_dim as isize, 1),
                0.0,
                &mut g.weight,
            );
            for row in delta.chunks_exact(layer.out_dim) {
                g.bias.iter_mut().zip(row).for_each(|(b, d)| *b += d);
            }
            // dx = delta * W
            let mut dx = vec![0.0; batch * layer.in_dim];
            gemm(
                batch,
                layer.out_dim,
                layer.in_dim,
                &delta,
                (layer.out_dim as isize, 1),
                &layer.weight,
                (layer.in_dim as isize, 1),
                0.0,
                &mut dx,
            );
            grads.push(g);
            delta = dx;
        }
        grads.reverse();
        Ok((grads, delta))
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }
}

/// Adam with bias-corrected moments over a list of parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(block_sizes: &[usize]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn apply(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>], lr: f64) -> Result<(), NnError> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(NnError::GradientShape(format!(
                "{} parameter blocks, {} gradient blocks, {} moment blocks",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (b, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || g.len() != self.m[b].len() {
                return Err(NnError::GradientShape(format!(
                    "block {b}: {} parameters, {} gradients",
                    p.len(),
                    g.len()
                )));
            }
            if let Some(index) = g.iter().position(|x| !x.is_finite()) {
                return Err(NnError::NonFiniteGradient { block: b, index });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (b, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[b], &mut self.v[b]);
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
