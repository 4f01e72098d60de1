//! Clipped-surrogate PPO loss with hand-derived gradients, plus a central
//! finite-difference gradient checker.

use rand::prelude::*;

use crate::error::{CoreError, Result};
use crate::ppo::nn::{assert_finite, GaussianPolicy, Mlp, MlpCache};
use crate::ppo::train::{PpoConfig, Rollout};

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, Copy, Default)]
pub struct LossDiagnostics {
    pub total: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Evaluate the combined PPO loss over the indexed minibatch.
///
/// The loss is the mean over samples of
/// `-min(rho * A, clip(rho, 1 - eps, 1 + eps) * A)` plus
/// `value_coef * (V - return)^2`, minus `entropy_coef` times the Gaussian
/// entropy of the (state-independent) action distribution.
pub fn ppo_loss(
    policy: &GaussianPolicy,
    value: &Mlp,
    rollout: &Rollout,
    idx: &[usize],
    cfg: &PpoConfig,
) -> Result<LossDiagnostics> {
    loss_impl(policy, value, rollout, idx, cfg, None)
}

/// Loss plus accumulated gradients. `pi_grads` spans the policy network
/// parameters followed by the log-std entries; `vf_grads` spans the value
/// network. Both are zeroed here.
pub fn ppo_loss_grad(
    policy: &GaussianPolicy,
    value: &Mlp,
    rollout: &Rollout,
    idx: &[usize],
    cfg: &PpoConfig,
    pi_grads: &mut [f64],
    vf_grads: &mut [f64],
) -> Result<LossDiagnostics> {
    pi_grads.iter_mut().for_each(|g| *g = 0.0);
    vf_grads.iter_mut().for_each(|g| *g = 0.0);
    loss_impl(policy, value, rollout, idx, cfg, Some((pi_grads, vf_grads)))
}

fn loss_impl(
    policy: &GaussianPolicy,
    value: &Mlp,
    rollout: &Rollout,
    idx: &[usize],
    cfg: &PpoConfig,
    mut grads: Option<(&mut [f64], &mut [f64])>,
) -> Result<LossDiagnostics> {
    if idx.is_empty() {
        return Err(CoreError::contract("empty minibatch"));
    }
    let n = idx.len() as f64;
    let act_dim = policy.act_dim();
    let eps = cfg.clip_ratio;
    let mlp_params = policy.mlp.params.len();

    let mut diag = LossDiagnostics::default();
    let mut pi_cache = MlpCache::default();
    let mut vf_cache = MlpCache::default();

    for &i in idx {
        let obs = &rollout.obs[i];
        let u = &rollout.act_u[i];
        let adv = rollout.adv[i];
        let ret = rollout.ret[i];
        let old_logp = rollout.logp[i];

        // Policy term.
        let mean = policy.mean(obs, &mut pi_cache);
        let mut logp = 0.0;
        let mut z = vec![0.0; act_dim];
        for k in 0..act_dim {
            let sigma = policy.log_std[k].exp();
            z[k] = (u[k] - mean[k]) / sigma;
            logp += -0.5 * z[k] * z[k] - policy.log_std[k] - 0.5 * LN_2PI;
            logp -= crate::ppo::nn::log_one_minus_tanh_sq(u[k]);
        }
        let log_ratio = logp - old_logp;
        if !log_ratio.is_finite() {
            return Err(CoreError::numeric(format!(
                "non-finite log ratio at sample {i}"
            )));
        }
        let ratio = log_ratio.exp();
        let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
        let raw_term = ratio * adv;
        let clip_term = clipped * adv;
        let use_raw = raw_term <= clip_term;
        diag.policy_loss += -raw_term.min(clip_term) / n;
        if (ratio - 1.0).abs() > eps {
            diag.clip_fraction += 1.0 / n;
        }
        diag.approx_kl += (old_logp - logp) / n;

        // Value term.
        let v = value.forward(obs, &mut vf_cache)[0];
        let verr = v - ret;
        diag.value_loss += cfg.value_coef * verr * verr / n;

        if let Some((pi_g, vf_g)) = grads.as_mut() {
            // d(policy term)/d(logp): only the unclipped branch carries a
            // gradient through the ratio.
            let dlogp = if use_raw { -ratio * adv / n } else { 0.0 };
            if dlogp != 0.0 {
                // dlogp/dmean_k = z_k / sigma_k, dlogp/dlog_std_k = z_k^2 - 1
                let mut grad_mean = vec![0.0; act_dim];
                for k in 0..act_dim {
                    let sigma = policy.log_std[k].exp();
                    grad_mean[k] = dlogp * z[k] / sigma;
                    pi_g[mlp_params + k] += dlogp * (z[k] * z[k] - 1.0);
                }
                policy.mlp.backward(&pi_cache, &grad_mean, &mut pi_g[..mlp_params]);
            }
            let dv = 2.0 * cfg.value_coef * verr / n;
            value.backward(&vf_cache, &[dv], vf_g);
        }
    }

    // State-independent Gaussian entropy; identical for every sample so the
    // batch mean equals the single evaluation.
    let entropy: f64 = policy
        .log_std
        .iter()
        .map(|ls| ls + 0.5 * (1.0 + LN_2PI))
        .sum();
    diag.entropy = entropy;
    if let Some((pi_g, _)) = grads.as_mut() {
        for k in 0..act_dim {
            pi_g[mlp_params + k] -= cfg.entropy_coef;
        }
        assert_finite(pi_g, "policy gradients")?;
    }

    diag.total = diag.policy_loss + diag.value_loss - cfg.entropy_coef * entropy;
    if !diag.total.is_finite() {
        return Err(CoreError::numeric(format!(
            "non-finite loss: policy {} value {} entropy {}",
            diag.policy_loss, diag.value_loss, diag.entropy
        )));
    }
    Ok(diag)
}

/// Central finite differences over a random subset of coordinates, compared
/// against an analytic gradient. Returns the maximum relative error.
pub fn grad_check(
    mut loss_fn: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    perturbation: f64,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    if !(perturbation > 0.0) || !perturbation.is_finite() {
        return Err(CoreError::invalid(format!(
            "perturbation must be positive and finite, got {perturbation}"
        )));
    }
    if params.len() != analytic.len() {
        return Err(CoreError::contract(
            "parameter and gradient lengths differ",
        ));
    }
    let mut work = params.to_vec();
    let mut max_rel = 0.0f64;
    for _ in 0..samples {
        let i = rng.gen_range(0..params.len());
        let orig = work[i];
        work[i] = orig + perturbation;
        let up = loss_fn(&work);
        work[i] = orig - perturbation;
        let down = loss_fn(&work);
        work[i] = orig;
        let fd = (up - down) / (2.0 * perturbation);
        let denom = fd.abs().max(analytic[i].abs()).max(1e-8);
        max_rel = max_rel.max((fd - analytic[i]).abs() / denom);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ppo::nn::MlpCache;
    use approx::assert_relative_eq;
    use rand_chacha::ChaCha20Rng;

    fn toy_rollout(
        policy: &GaussianPolicy,
        rng: &mut ChaCha20Rng,
        n: usize,
        obs_dim: usize,
        ratio_factors: &[f64],
    ) -> Rollout {
        let mut roll = Rollout::default();
        for s in 0..n {
            let obs: Vec<f64> = (0..obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (u, _a, logp) = policy.sample(&obs, rng);
            let factor = ratio_factors[s % ratio_factors.len()];
            roll.obs.push(obs);
            roll.act_u.push(u);
            // Old log-prob offset so the new/old ratio is exactly `factor`.
            roll.logp.push(logp - factor.ln());
            roll.rew.push(0.0);
            roll.val.push(0.0);
            roll.done.push(false);
            roll.adv.push(rng.gen_range(-2.0..2.0));
            roll.ret.push(rng.gen_range(-1.0..1.0));
        }
        roll
    }

    fn toy_cfg() -> PpoConfig {
        PpoConfig {
            clip_ratio: 0.2,
            value_coef: 0.5,
            entropy_coef: 1e-3,
            ..PpoConfig::default()
        }
    }

    #[test]
    fn identity_ratio_gives_mean_advantage() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let policy = GaussianPolicy::new(3, 2, &[8], -0.5, &mut rng);
        let value = Mlp::new(vec![3, 8, 1], &mut rng, 1.0);
        let mut cfg = toy_cfg();
        cfg.value_coef = 0.0;
        cfg.entropy_coef = 0.0;
        let roll = toy_rollout(&policy, &mut rng, 32, 3, &[1.0]);
        let idx: Vec<usize> = (0..32).collect();
        let diag = ppo_loss(&policy, &value, &roll, &idx, &cfg).unwrap();
        let mean_adv: f64 = roll.adv.iter().sum::<f64>() / 32.0;
        assert_relative_eq!(diag.policy_loss, -mean_adv, epsilon = 1e-9);
        assert_eq!(diag.clip_fraction, 0.0);
        assert!(diag.approx_kl.abs() < 1e-9);
    }

    #[test]
    fn clip_bound_applies_to_inflated_ratio() {
        // One sample with ratio 1.5 and advantage 2: the clipped branch
        // fixes the surrogate at -1.2 * 2.
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let policy = GaussianPolicy::new(2, 1, &[4], -0.5, &mut rng);
        let value = Mlp::new(vec![2, 4, 1], &mut rng, 1.0);
        let mut cfg = toy_cfg();
        cfg.value_coef = 0.0;
        cfg.entropy_coef = 0.0;
        let mut roll = toy_rollout(&policy, &mut rng, 1, 2, &[1.5]);
        roll.adv[0] = 2.0;
        let diag = ppo_loss(&policy, &value, &roll, &[0], &cfg).unwrap();
        assert_relative_eq!(diag.policy_loss, -2.4, epsilon = 1e-9);
        assert_relative_eq!(diag.clip_fraction, 1.0, epsilon = 1e-12);
    }

    fn flat_loss(
        policy: &GaussianPolicy,
        value: &Mlp,
        roll: &Rollout,
        idx: &[usize],
        cfg: &PpoConfig,
        flat: &[f64],
    ) -> f64 {
        let mut p = policy.clone();
        let mut v = value.clone();
        let np = p.n_params();
        p.set_flat_params(&flat[..np]);
        v.params.copy_from_slice(&flat[np..]);
        ppo_loss(&p, &v, roll, idx, cfg).unwrap().total
    }

    #[test]
    fn gradients_match_finite_differences() {
        // Ratio factors keep every sample safely away from the clip
        // boundaries at 0.8 and 1.2 so the loss is smooth at the test point.
        let factors = [0.9, 0.95, 1.0, 1.05, 1.3, 0.7];
        for seed in 0..10u64 {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let policy = GaussianPolicy::new(3, 2, &[6, 6], -0.4, &mut rng);
            let value = Mlp::new(vec![3, 6, 1], &mut rng, 1.0);
            let cfg = toy_cfg();
            let roll = toy_rollout(&policy, &mut rng, 24, 3, &factors);
            let idx: Vec<usize> = (0..24).collect();

            let mut pi_g = vec![0.0; policy.n_params()];
            let mut vf_g = vec![0.0; value.params.len()];
            ppo_loss_grad(&policy, &value, &roll, &idx, &cfg, &mut pi_g, &mut vf_g).unwrap();

            let mut flat = policy.flat_params();
            flat.extend_from_slice(&value.params);
            let mut analytic = pi_g.clone();
            analytic.extend_from_slice(&vf_g);

            let err = grad_check(
                |p| flat_loss(&policy, &value, &roll, &idx, &cfg, p),
                &flat,
                &analytic,
                1e-5,
                64,
                &mut rng,
            )
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: max relative error {err}");
        }
    }

    #[test]
    fn unclipped_log_std_gradient_matches_formula() {
        // With an effectively infinite clip range the surrogate gradient is
        // the plain importance-weighted policy gradient; the log-std part
        // has a closed form we can verify directly.
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let policy = GaussianPolicy::new(2, 1, &[4], -0.3, &mut rng);
        let value = Mlp::new(vec![2, 4, 1], &mut rng, 1.0);
        let mut cfg = toy_cfg();
        cfg.clip_ratio = 1e9;
        cfg.entropy_coef = 0.0;
        cfg.value_coef = 0.0;
        let roll = toy_rollout(&policy, &mut rng, 16, 2, &[0.9, 1.1, 1.4]);
        let idx: Vec<usize> = (0..16).collect();

        let mut pi_g = vec![0.0; policy.n_params()];
        let mut vf_g = vec![0.0; value.params.len()];
        let diag =
            ppo_loss_grad(&policy, &value, &roll, &idx, &cfg, &mut pi_g, &mut vf_g).unwrap();
        assert_eq!(diag.clip_fraction, 0.0);

        let mut expected = 0.0;
        let mut cache = MlpCache::default();
        for &i in &idx {
            let mean = policy.mean(&roll.obs[i], &mut cache);
            let logp = policy.log_prob_given_mean(&mean, &roll.act_u[i]);
            let ratio = (logp - roll.logp[i]).exp();
            let sigma = policy.log_std[0].exp();
            let z = (roll.act_u[i][0] - mean[0]) / sigma;
            expected += -ratio * roll.adv[i] * (z * z - 1.0) / 16.0;
        }
        let got = pi_g[policy.mlp.params.len()];
        assert_relative_eq!(got, expected, epsilon = 1e-10);
    }

    #[test]
    fn grad_check_simple_quadratic() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let params: Vec<f64> = (0..20).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let analytic: Vec<f64> = params.iter().map(|p| 2.0 * p).collect();
        let err = grad_check(
            |p| p.iter().map(|x| x * x).sum(),
            &params,
            &analytic,
            1e-6,
            20,
            &mut rng,
        )
        .unwrap();
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn grad_check_rejects_zero_perturbation() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        assert!(grad_check(|_| 0.0, &[1.0], &[0.0], 0.0, 1, &mut rng).is_err());
    }
}
