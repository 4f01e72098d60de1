//! Dense multilayer perceptron over a flat parameter vector, a squashed
//! diagonal-Gaussian policy head, Adam, and running observation
//! normalization.

use rand::prelude::*;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

const LN_2PI: f64 = 1.8378770664093453;

/// Fully connected network with tanh hidden activations and a linear output
/// layer. Parameters live in one flat vector (weights row-major, then bias,
/// per layer) so optimizers, checkpoints and gradient checks can treat the
/// model as a plain array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Forward-pass activations kept for the backward pass. `acts[0]` is the
/// input; hidden entries store post-tanh values; the last entry is the raw
/// linear output.
#[derive(Debug, Default, Clone)]
pub struct MlpCache {
    acts: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }

    /// Xavier-uniform initialization; `out_scale` shrinks the final layer
    /// (small policy heads keep early actions centered).
    pub fn new(sizes: Vec<usize>, rng: &mut impl Rng, out_scale: f64) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        let mut params = Vec::with_capacity(Self::param_count(&sizes));
        let last = sizes.len() - 2;
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt()
                * if l == last { out_scale } else { 1.0 };
            for _ in 0..fan_out * fan_in {
                params.push(rng.gen_range(-bound..bound));
            }
            for _ in 0..fan_out {
                params.push(0.0);
            }
        }
        Mlp { sizes, params }
    }

    pub fn in_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn layer_offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        // (offset, rows, cols) per layer
        let mut offset = 0;
        self.sizes.windows(2).map(move |w| {
            let (cols, rows) = (w[0], w[1]);
            let here = offset;
            offset += rows * cols + rows;
            (here, rows, cols)
        })
    }

    pub fn forward(&self, input: &[f64], cache: &mut MlpCache) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.in_dim());
        cache.acts.clear();
        cache.acts.push(input.to_vec());
        let n_layers = self.sizes.len() - 1;
        for (l, (offset, rows, cols)) in self.layer_offsets().enumerate() {
            let prev = cache.acts.last().unwrap().clone();
            let mut out = vec![0.0; rows];
            for r in 0..rows {
                let w = &self.params[offset + r * cols..offset + (r + 1) * cols];
                let mut acc = self.params[offset + rows * cols + r];
                for c in 0..cols {
                    acc += w[c] * prev[c];
                }
                out[r] = if l + 1 < n_layers { acc.tanh() } else { acc };
            }
            cache.acts.push(out);
        }
        cache.acts.last().unwrap().clone()
    }

    /// Accumulate parameter gradients for one sample into `grads` given the
    /// loss gradient at the network output.
    pub fn backward(&self, cache: &MlpCache, grad_out: &[f64], grads: &mut [f64]) {
        debug_assert_eq!(grads.len(), self.params.len());
        let layers: Vec<(usize, usize, usize)> = self.layer_offsets().collect();
        let n_layers = layers.len();
        let mut delta = grad_out.to_vec();
        for l in (0..n_layers).rev() {
            let (offset, rows, cols) = layers[l];
            // The stored activation of hidden layers is post-tanh; the final
            // layer is linear so its delta passes through unchanged.
            if l + 1 < n_layers {
                let act = &cache.acts[l + 1];
                for r in 0..rows {
                    delta[r] *= 1.0 - act[r] * act[r];
                }
            }
            let prev = &cache.acts[l];
            for r in 0..rows {
                let gw = &mut grads[offset + r * cols..offset + (r + 1) * cols];
                let d = delta[r];
                for c in 0..cols {
                    gw[c] += d * prev[c];
                }
            }
            for r in 0..rows {
                grads[offset + rows * cols + r] += delta[r];
            }
            if l > 0 {
                let mut next_delta = vec![0.0; cols];
                for r in 0..rows {
                    let w = &self.params[offset + r * cols..offset + (r + 1) * cols];
                    let d = delta[r];
                    for c in 0..cols {
                        next_delta[c] += w[c] * d;
                    }
                }
                delta = next_delta;
            }
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 20.0 {
        x
    } else if x < -20.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Exact log of `1 - tanh(u)^2`, stable for large |u|.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

/// Diagonal-Gaussian policy squashed through tanh into [-1, 1] per action
/// dimension. The log-standard-deviation is state independent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub mlp: Mlp,
    pub log_std: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new(obs_dim: usize, act_dim: usize, hidden: &[usize], init_log_std: f64, rng: &mut impl Rng) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(act_dim);
        GaussianPolicy {
            mlp: Mlp::new(sizes, rng, 0.01),
            log_std: vec![init_log_std; act_dim],
        }
    }

    pub fn act_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn n_params(&self) -> usize {
        self.mlp.params.len() + self.log_std.len()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.mlp.params.clone();
        p.extend_from_slice(&self.log_std);
        p
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let n = self.mlp.params.len();
        self.mlp.params.copy_from_slice(&flat[..n]);
        self.log_std.copy_from_slice(&flat[n..]);
    }

    pub fn mean(&self, obs: &[f64], cache: &mut MlpCache) -> Vec<f64> {
        self.mlp.forward(obs, cache)
    }

    /// Deterministic evaluation action: the squashed mean.
    pub fn deterministic_action(&self, obs: &[f64]) -> Vec<f64> {
        let mut cache = MlpCache::default();
        self.mean(obs, &mut cache).iter().map(|m| m.tanh()).collect()
    }

    /// Sample a pre-squash action `u` and its squashed version, returning
    /// the log-probability of the squashed action.
    pub fn sample(&self, obs: &[f64], rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>, f64) {
        let mut cache = MlpCache::default();
        let mean = self.mean(obs, &mut cache);
        let u: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let logp = self.log_prob_given_mean(&mean, &u);
        let a = u.iter().map(|x| x.tanh()).collect();
        (u, a, logp)
    }

    /// Log-density of the squashed action `tanh(u)` given the Gaussian mean,
    /// including the tanh change-of-variable correction.
    pub fn log_prob_given_mean(&self, mean: &[f64], u: &[f64]) -> f64 {
        let mut lp = 0.0;
        for i in 0..u.len() {
            let sigma = self.log_std[i].exp();
            let z = (u[i] - mean[i]) / sigma;
            lp += -0.5 * z * z - self.log_std[i] - 0.5 * LN_2PI;
            lp -= log_one_minus_tanh_sq(u[i]);
        }
        lp
    }
}

/// Adam over one flat parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Clip a gradient vector to a maximum global L2 norm.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

/// Welford running mean/variance used to normalize observations. Frozen at
/// evaluation time so deployed policies see the training-time scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
    pub count: f64,
    pub frozen: bool,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        RunningNorm {
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            count: 0.0,
            frozen: false,
        }
    }

    pub fn update(&mut self, x: &[f64]) {
        if self.frozen {
            return;
        }
        self.count += 1.0;
        for i in 0..x.len() {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / self.count;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        if self.count < 2.0 {
            return x.to_vec();
        }
        x.iter()
            .enumerate()
            .map(|(i, &v)| {
                let var = self.m2[i] / self.count;
                ((v - self.mean[i]) / (var + 1e-8).sqrt()).clamp(-10.0, 10.0)
            })
            .collect()
    }
}

pub fn assert_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::numeric(format!("non-finite values in {what}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn forward_matches_manual_small_net() {
        // 2 -> 2 -> 1 with hand-set weights.
        let mut mlp = Mlp {
            sizes: vec![2, 2, 1],
            params: vec![0.0; Mlp::param_count(&[2, 2, 1])],
        };
        // Layer 0: w = [[1, 2], [3, 4]], b = [0.1, -0.2]
        mlp.params[..6].copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 0.1, -0.2]);
        // Layer 1: w = [[0.5, -1.0]], b = [0.25]
        mlp.params[6..].copy_from_slice(&[0.5, -1.0, 0.25]);
        let mut cache = MlpCache::default();
        let out = mlp.forward(&[0.3, -0.1], &mut cache);
        let h1 = (0.3 - 0.2 + 0.1f64).tanh();
        let h2 = (0.9 - 0.4 - 0.2f64).tanh();
        assert_relative_eq!(out[0], 0.5 * h1 - 1.0 * h2 + 0.25, epsilon = 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut mlp = Mlp::new(vec![3, 8, 2], &mut rng, 1.0);
        let input = [0.4, -0.7, 0.2];
        let target = [0.3, -0.5];

        let loss = |m: &Mlp| {
            let mut cache = MlpCache::default();
            let out = m.forward(&input, &mut cache);
            out.iter()
                .zip(target)
                .map(|(o, t)| (o - t) * (o - t))
                .sum::<f64>()
        };

        let mut cache = MlpCache::default();
        let out = mlp.forward(&input, &mut cache);
        let grad_out: Vec<f64> = out.iter().zip(target).map(|(o, t)| 2.0 * (o - t)).collect();
        let mut grads = vec![0.0; mlp.params.len()];
        mlp.backward(&cache, &grad_out, &mut grads);

        let h = 1e-6;
        for i in (0..mlp.params.len()).step_by(3) {
            let orig = mlp.params[i];
            mlp.params[i] = orig + h;
            let up = loss(&mlp);
            mlp.params[i] = orig - h;
            let down = loss(&mlp);
            mlp.params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            assert_relative_eq!(grads[i], fd, epsilon = 1e-6, max_relative = 1e-6);
        }
    }

    #[test]
    fn squash_correction_is_stable_and_exact() {
        for &u in &[-30.0, -5.0, -0.3, 0.0, 0.7, 8.0, 25.0] {
            let exact = log_one_minus_tanh_sq(u);
            assert!(exact.is_finite());
            if u.abs() < 5.0 {
                let naive = (1.0 - u.tanh() * u.tanh()).ln();
                assert_relative_eq!(exact, naive, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn deterministic_action_in_zero_variance_limit() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut policy = GaussianPolicy::new(4, 2, &[8], -0.5, &mut rng);
        policy.log_std = vec![-30.0; 2];
        let obs = [0.1, 0.2, -0.3, 0.4];
        let det = policy.deterministic_action(&obs);
        let (_, sampled, _) = policy.sample(&obs, &mut rng);
        for (d, s) in det.iter().zip(&sampled) {
            assert_relative_eq!(d, s, epsilon = 1e-9);
        }
    }

    #[test]
    fn squash_is_odd_at_zero_mean() {
        // With a zero pre-squash sample the squashed action is exactly zero.
        assert_eq!(0.0f64.tanh(), 0.0);
    }

    #[test]
    fn squashed_density_integrates_to_one() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let policy = GaussianPolicy::new(1, 1, &[6], -0.4, &mut rng);
        let obs = [0.35];
        let mut cache = MlpCache::default();
        let mean = policy.mean(&obs, &mut cache);

        // Simpson's rule over the squashed action support.
        let n = 20_000usize;
        let a0 = -1.0 + 1e-9;
        let a1 = 1.0 - 1e-9;
        let h = (a1 - a0) / n as f64;
        let density = |a: f64| {
            let u = a.atanh();
            policy.log_prob_given_mean(&mean, &[u]).exp()
        };
        let mut integral = density(a0) + density(a1);
        for i in 1..n {
            let a = a0 + i as f64 * h;
            integral += density(a) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        integral *= h / 3.0;
        assert!(
            (integral - 1.0).abs() < 1e-3,
            "density integrates to {integral}"
        );
    }

    #[test]
    fn running_norm_statistics() {
        let mut norm = RunningNorm::new(2);
        let data = [[1.0, 10.0], [2.0, 20.0], [3.0, 30.0], [4.0, 40.0]];
        for row in &data {
            norm.update(row);
        }
        assert_relative_eq!(norm.mean[0], 2.5, epsilon = 1e-12);
        let z = norm.normalize(&[2.5, 25.0]);
        assert_relative_eq!(z[0], 0.0, epsilon = 1e-9);

        norm.frozen = true;
        norm.update(&[100.0, 100.0]);
        assert_relative_eq!(norm.mean[0], 2.5, epsilon = 1e-12);
    }
}
