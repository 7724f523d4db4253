//! Fully-connected Q-network with hand-written backprop and Adam.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::seeding::Rng;

/// Dense ReLU network; identity on the output layer.
///
/// Parameters are stored flat, layer after layer, each layer as its weight
/// matrix (row-major, `outputs x inputs`) followed by its bias vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    dims: Vec<usize>,
    params: Vec<f64>,
}

fn param_len(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Four-way unrolled dot product; independent partial sums let the
/// compiler vectorize.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl QNetwork {
    /// Weights and biases drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new(dims: &[usize], rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2 && dims.iter().all(|d| *d > 0), "bad layer dims {dims:?}");
        let mut params = Vec::with_capacity(param_len(dims));
        for w in dims.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] + w[1] {
                params.push(rng.gen_range(-bound..bound));
            }
        }
        Self { dims: dims.to_vec(), params }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            params: vec![0.0; param_len(dims)],
        }
    }

    pub fn from_params(dims: &[usize], params: Vec<f64>) -> Result<Self, AgentError> {
        if params.len() != param_len(dims) {
            return Err(AgentError::DimensionMismatch {
                expected: param_len(dims),
                found: params.len(),
            });
        }
        Ok(Self { dims: dims.to_vec(), params })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("at least two layers")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.dims.windows(2).map(move |w| {
            let start = offset;
            offset += w[0] * w[1] + w[1];
            (start, w[0], w[1])
        })
    }

    fn check_input(&self, obs: &[f64]) -> Result<(), AgentError> {
        if obs.len() != self.input_dim() {
            return Err(AgentError::DimensionMismatch {
                expected: self.input_dim(),
                found: obs.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, obs: &[f64]) -> Result<Vec<f64>, AgentError> {
        self.check_input(obs)?;
        let mut acts = Vec::new();
        self.forward_into(obs, &mut acts);
        Ok(acts.pop().expect("output layer"))
    }

    /// Activations of every layer after the input, last one is the output.
    fn forward_into(&self, obs: &[f64], acts: &mut Vec<Vec<f64>>) {
        acts.clear();
        let n_layers = self.dims.len() - 1;
        for (l, (start, n_in, n_out)) in self.layers().enumerate() {
            let w = &self.params[start..start + n_in * n_out];
            let b = &self.params[start + n_in * n_out..start + n_in * n_out + n_out];
            let input: &[f64] = if l == 0 { obs } else { &acts[l - 1] };
            let mut out = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let z = b[o] + dot(&w[o * n_in..(o + 1) * n_in], input);
                out.push(if l + 1 < n_layers { z.max(0.0) } else { z });
            }
            acts.push(out);
        }
    }

    /// Mean squared error between `Q(obs_i, action_i)` and `target_i`, and
    /// its gradient with respect to every parameter.
    pub fn loss_gradient(
        &self,
        obs: &[&[f64]],
        actions: &[usize],
        targets: &[f64],
    ) -> Result<(f64, Vec<f64>), AgentError> {
        assert_eq!(obs.len(), actions.len());
        assert_eq!(obs.len(), targets.len());
        let n = obs.len();
        if n == 0 {
            return Err(AgentError::EmptyBatch);
        }
        let layers: Vec<_> = self.layers().collect();
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let mut acts = Vec::new();
        for i in 0..n {
            self.check_input(obs[i])?;
            if actions[i] >= self.output_dim() {
                return Err(AgentError::ActionOutOfRange {
                    action: actions[i],
                    actions: self.output_dim(),
                });
            }
            self.forward_into(obs[i], &mut acts);
            let q = acts.last().expect("output")[actions[i]];
            let err = q - targets[i];
            loss += err * err;

            let mut delta = vec![0.0; self.output_dim()];
            delta[actions[i]] = 2.0 * err / n as f64;
            for l in (0..layers.len()).rev() {
                let (start, n_in, n_out) = layers[l];
                let input: &[f64] = if l == 0 { obs[i] } else { &acts[l - 1] };
                let (gw, gb) = grad[start..start + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for o in 0..n_out {
                    if delta[o] != 0.0 {
                        axpy(delta[o], input, &mut gw[o * n_in..(o + 1) * n_in]);
                        gb[o] += delta[o];
                    }
                }
                if l == 0 {
                    break;
                }
                let w = &self.params[start..start + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for o in 0..n_out {
                    if delta[o] != 0.0 {
                        axpy(delta[o], &w[o * n_in..(o + 1) * n_in], &mut prev);
                    }
                }
                // ReLU derivative on the hidden layer feeding this one
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok((loss / n as f64, grad))
    }

    pub fn same_shape(&self, other: &QNetwork) -> bool {
        self.dims == other.dims
    }

    /// Make `self` an exact copy of `source`.
    pub fn copy_from(&mut self, source: &QNetwork) -> Result<(), AgentError> {
        if !self.same_shape(source) {
            return Err(AgentError::ArchitectureMismatch {
                left: self.dims.clone(),
                right: source.dims.clone(),
            });
        }
        self.params.copy_from_slice(&source.params);
        Ok(())
    }
}

/// Adaptive-moment gradient descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
