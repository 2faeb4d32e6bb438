//! Soft actor-critic update step: twin critics with min-backup, squashed
//! Gaussian actor, and an auto-tuned entropy temperature.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamHyper, AdamState};
use crate::policy::{sample_action, sample_backward, Actor, Critic, SampledAction};

use super::buffer::Minibatch;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub init_log_alpha: f64,
    /// Entropy target for the temperature controller; the default is minus
    /// the action dimension.
    pub target_entropy: Option<f64>,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            gamma: 0.98,
            tau: 0.005,
            batch_size: 256,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            init_log_alpha: 0.0,
            target_entropy: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SacLosses {
    pub critic1: f64,
    pub critic2: f64,
    pub actor: f64,
    pub alpha: f64,
    /// Temperature after this update.
    pub alpha_value: f64,
}

#[derive(Debug, Clone)]
pub struct SacState {
    pub actor: Actor,
    pub critic1: Critic,
    pub critic2: Critic,
    pub target1: Critic,
    pub target2: Critic,
    pub log_alpha: f64,
    pub target_entropy: f64,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub updates: u64,
    actor_opt: AdamState,
    critic1_opt: AdamState,
    critic2_opt: AdamState,
    alpha_opt: AdamState,
    alpha_lr: f64,
}

impl SacState {
    pub fn new(actor: Actor, critic1: Critic, critic2: Critic, cfg: SacConfig) -> Result<Self> {
        let n_action = actor.n_action();
        if critic1.n_action() != n_action || critic2.n_action() != n_action {
            return Err(Error::incompatible(
                "critic action width does not match the actor",
            ));
        }
        if !(cfg.gamma >= 0.0 && cfg.gamma < 1.0) {
            return Err(Error::config("discount must lie in [0, 1)"));
        }
        if !(cfg.tau > 0.0 && cfg.tau <= 1.0) {
            return Err(Error::config("polyak rate must lie in (0, 1]"));
        }
        if cfg.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        let target1 = critic1.clone();
        let target2 = critic2.clone();
        let actor_opt = AdamState::new(actor.n_params(), AdamHyper::with_lr(cfg.actor_lr));
        let critic1_opt = AdamState::new(critic1.n_params(), AdamHyper::with_lr(cfg.critic_lr));
        let critic2_opt = AdamState::new(critic2.n_params(), AdamHyper::with_lr(cfg.critic_lr));
        let alpha_opt = AdamState::new(1, AdamHyper::with_lr(cfg.alpha_lr));
        Ok(SacState {
            target_entropy: cfg
                .target_entropy
                .unwrap_or_else(|| -(n_action as f64)),
            log_alpha: cfg.init_log_alpha,
            gamma: cfg.gamma,
            tau: cfg.tau,
            batch_size: cfg.batch_size,
            updates: 0,
            actor,
            critic1,
            critic2,
            target1,
            target2,
            actor_opt,
            critic1_opt,
            critic2_opt,
            alpha_opt,
            alpha_lr: cfg.alpha_lr,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// Restart the temperature controller, used when fine-tuning resumes
    /// training in a new environment.
    pub fn reset_alpha(&mut self, init_log_alpha: f64) {
        self.log_alpha = init_log_alpha;
        self.alpha_opt = AdamState::new(1, AdamHyper::with_lr(self.alpha_lr));
    }

    /// Discard optimizer moments, keeping all network parameters.
    pub fn reset_optimizers(&mut self, actor_lr: f64, critic_lr: f64) {
        self.actor_opt = AdamState::new(self.actor.n_params(), AdamHyper::with_lr(actor_lr));
        self.critic1_opt = AdamState::new(self.critic1.n_params(), AdamHyper::with_lr(critic_lr));
        self.critic2_opt = AdamState::new(self.critic2.n_params(), AdamHyper::with_lr(critic_lr));
    }

    /// TD targets for a batch: r + gamma * (1 - done) * (min target Q at a
    /// fresh next action - alpha * log pi).
    pub fn td_targets<R: Rng>(&self, batch: &Minibatch, rng: &mut R) -> Result<Array1<f64>> {
        let b = batch.len();
        let alpha = self.alpha();
        let (mean, log_std) = self
            .actor
            .heads(batch.next_s_task.view(), batch.next_s_robot.view())?;
        let n_action = self.actor.n_action();
        let mut next_action = Array2::zeros((b, n_action));
        let mut next_logp = Array1::zeros(b);
        for i in 0..b {
            let s = sample_action(
                mean.row(i).as_slice().expect("row-major"),
                log_std.row(i).as_slice().expect("row-major"),
                rng,
            );
            next_action
                .row_mut(i)
                .assign(&Array1::from_vec(s.action.clone()));
            next_logp[i] = s.log_prob;
        }
        let q1 = self.target1.q_values(
            batch.next_s_task.view(),
            batch.next_s_robot.view(),
            next_action.view(),
        )?;
        let q2 = self.target2.q_values(
            batch.next_s_task.view(),
            batch.next_s_robot.view(),
            next_action.view(),
        )?;
        let mut y = Array1::zeros(b);
        for i in 0..b {
            let soft_q = q1[i].min(q2[i]) - alpha * next_logp[i];
            y[i] = batch.reward[i] + self.gamma * (1.0 - batch.done[i]) * soft_q;
        }
        Ok(y)
    }
}

fn check_finite(name: &str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::numerical(format!("{name} loss is {value}")))
    }
}

/// One gradient step: both critics regress to the twin-min soft target, the
/// actor ascends the min critic plus entropy bonus, the temperature tracks
/// the entropy target, and target networks take a polyak step. Aborts on a
/// non-finite loss rather than continuing with poisoned parameters.
pub fn sac_update<R: Rng>(
    state: &mut SacState,
    batch: &Minibatch,
    rng: &mut R,
) -> Result<SacLosses> {
    if batch.is_empty() {
        return Err(Error::usage("cannot update on an empty batch"));
    }
    let b = batch.len();
    let inv_b = 1.0 / b as f64;
    let y = state.td_targets(batch, rng)?;

    let mut critic_losses = [0.0; 2];
    for (slot, (critic, opt)) in [
        (&mut state.critic1, &mut state.critic1_opt),
        (&mut state.critic2, &mut state.critic2_opt),
    ]
    .into_iter()
    .enumerate()
    {
        let pass = critic.forward_train(
            batch.s_task.view(),
            batch.s_robot.view(),
            batch.action.view(),
            rng,
        )?;
        let err = pass.q() - &y;
        let loss = check_finite(
            if slot == 0 { "critic1" } else { "critic2" },
            err.mapv(|e| e * e).mean().unwrap_or(f64::NAN),
        )?;
        let d_q = &err * (2.0 * inv_b);
        let (grads, _) = critic.backward(pass, &d_q)?;
        let mut params = critic.params_flat();
        opt.update(&mut params, &grads)?;
        critic.set_params_flat(&params)?;
        critic_losses[slot] = loss;
    }

    // actor step: fresh actions through the updated critics
    let pass = state
        .actor
        .forward_train(batch.s_task.view(), batch.s_robot.view(), rng)?;
    let n_action = state.actor.n_action();
    let (mean_head, log_std_head) = {
        let (m, l) = pass.heads();
        (m.clone(), l.clone())
    };
    let mut samples: Vec<SampledAction> = Vec::with_capacity(b);
    let mut actions = Array2::zeros((b, n_action));
    for i in 0..b {
        let s = sample_action(
            mean_head.row(i).as_slice().expect("row-major"),
            log_std_head.row(i).as_slice().expect("row-major"),
            rng,
        );
        actions.row_mut(i).assign(&Array1::from_vec(s.action.clone()));
        samples.push(s);
    }
    let p1 = state.critic1.forward_train(
        batch.s_task.view(),
        batch.s_robot.view(),
        actions.view(),
        rng,
    )?;
    let p2 = state.critic2.forward_train(
        batch.s_task.view(),
        batch.s_robot.view(),
        actions.view(),
        rng,
    )?;
    let q1 = p1.q().clone();
    let q2 = p2.q().clone();
    let alpha = state.alpha();
    let mut actor_loss = 0.0;
    let mut d_q1 = Array1::zeros(b);
    let mut d_q2 = Array1::zeros(b);
    for i in 0..b {
        actor_loss += alpha * samples[i].log_prob - q1[i].min(q2[i]);
        if q1[i] <= q2[i] {
            d_q1[i] = -inv_b;
        } else {
            d_q2[i] = -inv_b;
        }
    }
    actor_loss *= inv_b;
    check_finite("actor", actor_loss)?;
    let (_, d_a1) = state.critic1.backward(p1, &d_q1)?;
    let (_, d_a2) = state.critic2.backward(p2, &d_q2)?;
    let d_action = d_a1 + d_a2;
    let mut d_mean = Array2::zeros((b, n_action));
    let mut d_log_std = Array2::zeros((b, n_action));
    for i in 0..b {
        let (dm, dl) = sample_backward(
            &samples[i],
            log_std_head.row(i).as_slice().expect("row-major"),
            alpha * inv_b,
            d_action.row(i).as_slice().expect("row-major"),
        );
        d_mean.row_mut(i).assign(&Array1::from_vec(dm));
        d_log_std.row_mut(i).assign(&Array1::from_vec(dl));
    }
    let actor_grads = state.actor.backward(pass, d_mean.view(), d_log_std.view())?;
    let mut actor_params = state.actor.params_flat();
    state.actor_opt.update(&mut actor_params, &actor_grads)?;
    state.actor.set_params_flat(&actor_params)?;

    // temperature step on the same (detached) log-probs
    let mean_logp = samples.iter().map(|s| s.log_prob).sum::<f64>() * inv_b;
    let alpha_loss = check_finite(
        "alpha",
        -state.log_alpha * (mean_logp + state.target_entropy),
    )?;
    let d_log_alpha = -(mean_logp + state.target_entropy);
    let mut log_alpha = [state.log_alpha];
    state.alpha_opt.update(&mut log_alpha, &[d_log_alpha])?;
    state.log_alpha = log_alpha[0];

    state.target1.polyak_from(&state.critic1, state.tau)?;
    state.target2.polyak_from(&state.critic2, state.tau)?;
    state.updates += 1;

    Ok(SacLosses {
        critic1: critic_losses[0],
        critic2: critic_losses[1],
        actor: actor_loss,
        alpha: alpha_loss,
        alpha_value: state.alpha(),
    })
}
