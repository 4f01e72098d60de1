//! Generalized advantage estimation.

use crate::error::{CoreError, Result};

/// Backward-recursive GAE.
///
/// `dones[t]` marks a terminal transition: the value of the successor state
/// is masked and the advantage chain restarts. `bootstrap` is the value
/// estimate of the state following the final transition and is only used
/// when the last transition is not terminal. Returns `(advantages,
/// returns)` with `returns = advantages + values`.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(CoreError::contract(format!(
            "length mismatch: rewards {n}, values {}, dones {}",
            values.len(),
            dones.len()
        )));
    }
    if !(0.0..=1.0).contains(&gamma) || !(0.0..=1.0).contains(&lambda) {
        return Err(CoreError::invalid(
            "gamma and lambda must lie in [0, 1]",
        ));
    }

    let mut advantages = vec![0.0; n];
    let mut tail = 0.0;
    for t in (0..n).rev() {
        let not_done = if dones[t] { 0.0 } else { 1.0 };
        let next_value = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next_value * not_done - values[t];
        tail = delta + gamma * lambda * not_done * tail;
        advantages[t] = tail;
    }
    let returns = advantages
        .iter()
        .zip(values)
        .map(|(a, v)| a + v)
        .collect();
    Ok((advantages, returns))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;

    /// Direct O(T^2) evaluation of the defining double sum, truncated at
    /// terminals, used as the independent reference.
    fn gae_double_sum(
        rewards: &[f64],
        values: &[f64],
        dones: &[bool],
        bootstrap: f64,
        gamma: f64,
        lambda: f64,
    ) -> Vec<f64> {
        let n = rewards.len();
        let mut adv = vec![0.0; n];
        for t in 0..n {
            let mut weight = 1.0;
            for l in t..n {
                let not_done = if dones[l] { 0.0 } else { 1.0 };
                let next_value = if l + 1 < n { values[l + 1] } else { bootstrap };
                let delta = rewards[l] + gamma * next_value * not_done - values[l];
                adv[t] += weight * delta;
                if dones[l] {
                    break;
                }
                weight *= gamma * lambda;
            }
        }
        adv
    }

    #[test]
    fn lambda_zero_is_one_step_td() {
        let (adv, ret) =
            gae_advantages(&[1.0, 1.0], &[2.0, 2.0], &[false, false], 2.0, 0.99, 0.0).unwrap();
        // A_t = r + gamma * V(s') - V(s) = 1 + 0.99 * 2 - 2 = 0.98
        assert_relative_eq!(adv[0], 0.98, epsilon = 1e-12);
        assert_relative_eq!(adv[1], 0.98, epsilon = 1e-12);
        assert_relative_eq!(ret[0], 2.98, epsilon = 1e-12);
    }

    #[test]
    fn lambda_one_gamma_one_is_suffix_sum() {
        let rewards = [1.0, 2.0, 3.0, 4.0];
        let values = [0.0; 4];
        let dones = [false, false, false, true];
        let (adv, _) = gae_advantages(&rewards, &values, &dones, 0.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(adv[0], 10.0, epsilon = 1e-12);
        assert_relative_eq!(adv[1], 9.0, epsilon = 1e-12);
        assert_relative_eq!(adv[2], 7.0, epsilon = 1e-12);
        assert_relative_eq!(adv[3], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn recursive_matches_double_sum_on_random_sequences() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = 12;
            let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let dones: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.15)).collect();
            let bootstrap = rng.gen_range(-5.0..5.0);
            let gamma = rng.gen_range(0.9..1.0);
            let lambda = rng.gen_range(0.8..1.0);
            let (adv, ret) =
                gae_advantages(&rewards, &values, &dones, bootstrap, gamma, lambda).unwrap();
            let reference = gae_double_sum(&rewards, &values, &dones, bootstrap, gamma, lambda);
            for t in 0..n {
                assert!(
                    (adv[t] - reference[t]).abs() <= 1e-12,
                    "t={t}: {} vs {}",
                    adv[t],
                    reference[t]
                );
                assert_relative_eq!(ret[t], adv[t] + values[t], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rejects_length_mismatch() {
        assert!(gae_advantages(&[1.0], &[1.0, 2.0], &[false], 0.0, 0.99, 0.95).is_err());
    }
}
