//! Deterministic policy evaluation over seeded episodes.
//!
//! Episodes are independent given their seed, so they can be spread across
//! threads (capped by `STITCHKIT_THREADS`) without changing any number: each
//! episode's seed depends only on its index, and the report aggregates by
//! counting.

use serde::{Deserialize, Serialize};

use crate::env::{EnvState, PlanarEnv};
use crate::error::{Error, Result};
use crate::policy::Actor;
use crate::util::{eval_threads, mix_seed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Fraction of episodes that reached the goal within the episode limit.
    pub success_rate: f64,
    /// Fraction of episodes where the end effector ever came within touch
    /// range of the object (push) or the goal (reach).
    pub touching_rate: f64,
}

/// Roll out `n_episodes` greedy episodes of any controller. The controller
/// sees the environment (pre-step) and the current state, and returns the
/// action to apply.
pub fn evaluate_policy<F>(
    act: F,
    env: &PlanarEnv,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalReport>
where
    F: Fn(&PlanarEnv, &EnvState) -> Result<Vec<f64>> + Sync,
{
    if n_episodes == 0 {
        return Err(Error::usage("evaluation needs at least one episode"));
    }
    let threads = eval_threads().min(n_episodes).max(1);
    let act = &act;
    let counts: Result<Vec<(usize, usize)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                scope.spawn(move || -> Result<(usize, usize)> {
                    let mut env = env.clone();
                    let mut successes = 0;
                    let mut touches = 0;
                    for ep in (t..n_episodes).step_by(threads) {
                        let mut state = env.reset(mix_seed(seed, ep as u64));
                        let mut touched = false;
                        loop {
                            let action = act(&env, &state)?;
                            let out = env.step(&action)?;
                            touched |= out.info.touched;
                            if out.done {
                                if out.success() {
                                    successes += 1;
                                }
                                break;
                            }
                            state = out.state;
                        }
                        if touched {
                            touches += 1;
                        }
                    }
                    Ok((successes, touches))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation thread panicked"))
            .collect()
    });
    let counts = counts?;
    let successes: usize = counts.iter().map(|c| c.0).sum();
    let touches: usize = counts.iter().map(|c| c.1).sum();
    Ok(EvalReport {
        success_rate: successes as f64 / n_episodes as f64,
        touching_rate: touches as f64 / n_episodes as f64,
    })
}

/// Evaluate an actor with its deterministic head (tanh of the mean).
pub fn evaluate(actor: &Actor, env: &PlanarEnv, n_episodes: usize, seed: u64) -> Result<EvalReport> {
    if actor.task_dim() != env.task_dim() || actor.robot_dim() != env.robot_dim() {
        return Err(Error::shape(format!(
            "actor expects state ({}, {}), environment provides ({}, {})",
            actor.task_dim(),
            actor.robot_dim(),
            env.task_dim(),
            env.robot_dim()
        )));
    }
    let cache = actor.anchor_cache()?;
    evaluate_policy(
        |_env, state: &EnvState| actor.act_mean1(cache.as_ref(), &state.task, &state.robot),
        env,
        n_episodes,
        seed,
    )
}
