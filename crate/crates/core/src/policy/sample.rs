//! Tanh-squashed diagonal Gaussians: the action distribution behind every
//! actor head. Heads emit a mean and a log standard deviation per action
//! dimension; sampling squashes a reparameterized draw through tanh and the
//! density picks up the change-of-variables term.
//!
//! The squash correction log(1 - tanh(z)^2) is evaluated as
//! 2 (ln 2 - z - softplus(-2 z)), which stays finite for large |z| where the
//! naive form underflows to log(0).

use rand::Rng;
use rand_distr::StandardNormal;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

pub fn clamp_log_std(x: f64) -> f64 {
    x.clamp(LOG_STD_MIN, LOG_STD_MAX)
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// log(1 - tanh(z)^2), computed stably.
pub fn log_one_minus_tanh_sq(z: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - z - softplus(-2.0 * z))
}

/// One reparameterized draw together with everything the actor update needs.
#[derive(Debug, Clone)]
pub struct SampledAction {
    pub action: Vec<f64>,
    pub log_prob: f64,
    /// Standard normal noise used for the draw; fixed during backprop.
    pub xi: Vec<f64>,
}

/// Draw a ~ tanh(mean + sigma * xi) with xi ~ N(0, I) and return its
/// log density under the squashed distribution. `log_std` is used as given;
/// clamp it first if it comes straight from a network head.
pub fn sample_action<R: Rng>(mean: &[f64], log_std: &[f64], rng: &mut R) -> SampledAction {
    assert_eq!(mean.len(), log_std.len());
    let n = mean.len();
    let mut action = Vec::with_capacity(n);
    let mut xi = Vec::with_capacity(n);
    let mut log_prob = 0.0;
    for t in 0..n {
        let noise: f64 = rng.sample(StandardNormal);
        let sigma = log_std[t].exp();
        let z = mean[t] + sigma * noise;
        let a = z.tanh();
        log_prob += -0.5 * noise * noise - HALF_LN_2PI - log_std[t] - log_one_minus_tanh_sq(z);
        action.push(a);
        xi.push(noise);
    }
    SampledAction {
        action,
        log_prob,
        xi,
    }
}

/// Deterministic head: tanh of the mean, no noise.
pub fn deterministic_action(mean: &[f64]) -> Vec<f64> {
    mean.iter().map(|m| m.tanh()).collect()
}

/// Log density of a given squashed action under (mean, log_std).
/// Actions must lie strictly inside (-1, 1).
pub fn action_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    assert_eq!(mean.len(), log_std.len());
    assert_eq!(mean.len(), action.len());
    let mut lp = 0.0;
    for t in 0..mean.len() {
        let a = action[t];
        debug_assert!(a.abs() < 1.0, "action outside the open interval");
        let z = a.atanh();
        let sigma = log_std[t].exp();
        let xi = (z - mean[t]) / sigma;
        lp += -0.5 * xi * xi - HALF_LN_2PI - log_std[t] - log_one_minus_tanh_sq(z);
    }
    lp
}

/// Gradients of (log_prob, action) with respect to the head outputs, holding
/// the noise fixed. Inputs are the coefficient on log_prob and the upstream
/// gradient on each action component; outputs are d/d_mean and d/d_log_std.
pub fn sample_backward(
    sample: &SampledAction,
    log_std: &[f64],
    d_log_prob: f64,
    d_action: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let n = sample.action.len();
    assert_eq!(d_action.len(), n);
    let mut d_mean = vec![0.0; n];
    let mut d_log_std = vec![0.0; n];
    for t in 0..n {
        let a = sample.action[t];
        let sigma = log_std[t].exp();
        let sx = sigma * sample.xi[t];
        let da_dz = 1.0 - a * a;
        // d log_prob / d z = 2 tanh(z); the Gaussian part is constant in z
        // under reparameterization because xi is held fixed
        d_mean[t] = d_log_prob * 2.0 * a + d_action[t] * da_dz;
        d_log_std[t] = d_log_prob * (2.0 * a * sx - 1.0) + d_action[t] * da_dz * sx;
    }
    (d_mean, d_log_std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn squash_correction_is_stable_at_extremes() {
        for z in [-50.0, -5.0, 0.0, 5.0, 50.0] {
            let stable = log_one_minus_tanh_sq(z);
            assert!(stable.is_finite(), "z={z} gave {stable}");
            if z.abs() < 15.0 {
                let naive = (1.0 - z.tanh() * z.tanh()).ln();
                assert!((stable - naive).abs() < 1e-9, "z={z}: {stable} vs {naive}");
            }
        }
    }

    #[test]
    fn density_integrates_to_one() {
        // trapezoid rule over the open interval for a 1-d head
        for (mean, log_std) in [(0.0, 0.0), (0.7, -1.2), (-1.5, 0.4)] {
            let n = 200_000;
            let mut total = 0.0;
            let lo = -1.0 + 1e-9;
            let hi = 1.0 - 1e-9;
            let step = (hi - lo) / n as f64;
            let mut prev = action_log_prob(&[mean], &[log_std], &[lo]).exp();
            for i in 1..=n {
                let a = lo + step * i as f64;
                let cur = action_log_prob(&[mean], &[log_std], &[a]).exp();
                total += 0.5 * (prev + cur) * step;
                prev = cur;
            }
            assert!(
                (total - 1.0).abs() < 0.02,
                "mean {mean}, log_std {log_std}: mass {total}"
            );
        }
    }

    #[test]
    fn sampled_log_prob_matches_density_at_the_sample() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..50 {
            let mean = [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)];
            let log_std = [rng.gen_range(-2.0..0.5), rng.gen_range(-2.0..0.5)];
            let s = sample_action(&mean, &log_std, &mut rng);
            let lp = action_log_prob(&mean, &log_std, &s.action);
            assert!(
                (lp - s.log_prob).abs() < 1e-7,
                "{} vs {}",
                lp,
                s.log_prob
            );
        }
    }

    #[test]
    fn actions_stay_inside_the_box() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..500 {
            let s = sample_action(&[4.0, -4.0], &[1.0, 1.0], &mut rng);
            assert!(s.action.iter().all(|a| a.abs() < 1.0));
            assert!(s.log_prob.is_finite());
        }
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for case in 0..30 {
            let n = 1 + case % 3;
            let mean: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let log_std: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..0.5)).collect();
            let s = sample_action(&mean, &log_std, &mut rng);
            let w_lp = rng.gen_range(-1.0..1.0);
            let w_a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();

            let loss = |mean: &[f64], log_std: &[f64]| -> f64 {
                let mut total = 0.0;
                for t in 0..n {
                    let sigma = log_std[t].exp();
                    let z = mean[t] + sigma * s.xi[t];
                    let a = z.tanh();
                    let lp =
                        -0.5 * s.xi[t] * s.xi[t] - HALF_LN_2PI - log_std[t] - log_one_minus_tanh_sq(z);
                    total += w_lp * lp + w_a[t] * a;
                }
                total
            };

            let (d_mean, d_log_std) = sample_backward(&s, &log_std, w_lp, &w_a);
            let h = 1e-6;
            for t in 0..n {
                let mut mp = mean.clone();
                let mut mm = mean.clone();
                mp[t] += h;
                mm[t] -= h;
                let fd = (loss(&mp, &log_std) - loss(&mm, &log_std)) / (2.0 * h);
                let denom = d_mean[t].abs().max(fd.abs()).max(1e-5);
                assert!((d_mean[t] - fd).abs() / denom < 1e-5, "mean[{t}]");

                let mut lp = log_std.to_vec();
                let mut lm = log_std.to_vec();
                lp[t] += h;
                lm[t] -= h;
                let fd = (loss(&mean, &lp) - loss(&mean, &lm)) / (2.0 * h);
                let denom = d_log_std[t].abs().max(fd.abs()).max(1e-5);
                assert!((d_log_std[t] - fd).abs() / denom < 1e-5, "log_std[{t}]");
            }
        }
    }
}
