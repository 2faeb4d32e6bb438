//! Episode replay buffer with hindsight goal relabeling.
//!
//! Episodes are relabeled once, when they are inserted: each stored
//! transition is followed by `k_relabel` copies whose goal is replaced by an
//! achieved goal from a later step of the same episode ('future' strategy)
//! and whose reward is recomputed against the new goal. Eviction drops whole
//! episodes, oldest first.

use std::collections::VecDeque;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{sparse_reward, PlanarEnv};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s_task: Vec<f64>,
    pub s_robot: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_s_task: Vec<f64>,
    pub next_s_robot: Vec<f64>,
    /// What the step attained (end-effector or object position), i.e. the
    /// goal that would have made this step a success.
    pub achieved_goal: [f64; 2],
    pub goal: [f64; 2],
    /// True only for goal-reaching termination. Episode timeouts are stored
    /// as false so the critic target still bootstraps through them.
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HerStrategy {
    /// Replacement goals are achieved goals of uniformly sampled later steps
    /// of the same episode.
    Future,
}

/// Expand one complete episode into its stored form: each original
/// transition followed by `k_relabel` goal-relabeled copies. Rewards (and
/// the done flag) are recomputed against the new goal with the environment's
/// success radius.
pub fn her_relabel<R: Rng>(
    episode: &[Transition],
    strategy: HerStrategy,
    k_relabel: usize,
    eps_goal: f64,
    rng: &mut R,
) -> Vec<Transition> {
    let HerStrategy::Future = strategy;
    let n = episode.len();
    let mut out = Vec::with_capacity(n * (1 + k_relabel));
    for (t, tr) in episode.iter().enumerate() {
        out.push(tr.clone());
        for _ in 0..k_relabel {
            // Sampling the transition's own index uses the goal achieved by
            // its successor state, so a relabel at j == t succeeds by
            // construction.
            let j = rng.gen_range(t..n);
            let goal = episode[j].achieved_goal;
            let mut relabeled = tr.clone();
            PlanarEnv::replace_goal_in_task_state(&mut relabeled.s_task, goal);
            PlanarEnv::replace_goal_in_task_state(&mut relabeled.next_s_task, goal);
            relabeled.goal = goal;
            relabeled.reward = sparse_reward(relabeled.achieved_goal, goal, eps_goal);
            relabeled.done = relabeled.reward == 0.0;
            out.push(relabeled);
        }
    }
    out
}

/// Column-major training batch assembled from sampled transitions.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub s_task: Array2<f64>,
    pub s_robot: Array2<f64>,
    pub action: Array2<f64>,
    pub reward: Array1<f64>,
    pub next_s_task: Array2<f64>,
    pub next_s_robot: Array2<f64>,
    /// 1.0 where the transition terminated by success, else 0.0.
    pub done: Array1<f64>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }

    fn from_rows(rows: &[&Transition]) -> Result<Minibatch> {
        let b = rows.len();
        let first = rows.first().ok_or_else(|| Error::usage("empty batch"))?;
        let (dt, dr, da) = (first.s_task.len(), first.s_robot.len(), first.action.len());
        let mut s_task = Array2::zeros((b, dt));
        let mut s_robot = Array2::zeros((b, dr));
        let mut action = Array2::zeros((b, da));
        let mut reward = Array1::zeros(b);
        let mut next_s_task = Array2::zeros((b, dt));
        let mut next_s_robot = Array2::zeros((b, dr));
        let mut done = Array1::zeros(b);
        for (i, tr) in rows.iter().enumerate() {
            if tr.s_task.len() != dt || tr.s_robot.len() != dr || tr.action.len() != da {
                return Err(Error::shape("mixed transition dimensions in one batch"));
            }
            s_task.row_mut(i).assign(&Array1::from_vec(tr.s_task.clone()));
            s_robot.row_mut(i).assign(&Array1::from_vec(tr.s_robot.clone()));
            action.row_mut(i).assign(&Array1::from_vec(tr.action.clone()));
            reward[i] = tr.reward;
            next_s_task
                .row_mut(i)
                .assign(&Array1::from_vec(tr.next_s_task.clone()));
            next_s_robot
                .row_mut(i)
                .assign(&Array1::from_vec(tr.next_s_robot.clone()));
            done[i] = if tr.done { 1.0 } else { 0.0 };
        }
        Ok(Minibatch {
            s_task,
            s_robot,
            action,
            reward,
            next_s_task,
            next_s_robot,
            done,
        })
    }
}

/// FIFO ring of complete episodes, relabeled at insertion. Capacity counts
/// stored (already expanded) transitions; exceeding it drops the oldest
/// episodes whole. The newest episode is always kept, even if it alone
/// overflows the capacity.
#[derive(Debug, Clone)]
pub struct EpisodeBuffer {
    episode_lens: VecDeque<usize>,
    data: VecDeque<Transition>,
    capacity: usize,
    eps_goal: f64,
    strategy: HerStrategy,
    k_relabel: usize,
}

impl EpisodeBuffer {
    pub fn new(
        capacity: usize,
        eps_goal: f64,
        strategy: HerStrategy,
        k_relabel: usize,
    ) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("replay capacity must be positive"));
        }
        if !(eps_goal > 0.0) {
            return Err(Error::config("success radius must be positive"));
        }
        Ok(EpisodeBuffer {
            episode_lens: VecDeque::new(),
            data: VecDeque::new(),
            capacity,
            eps_goal,
            strategy,
            k_relabel,
        })
    }

    /// Stored transitions, relabeled copies included.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn n_episodes(&self) -> usize {
        self.episode_lens.len()
    }

    pub fn push_episode<R: Rng>(&mut self, episode: &[Transition], rng: &mut R) -> Result<()> {
        if episode.is_empty() {
            return Err(Error::usage("cannot store an empty episode"));
        }
        let expanded = her_relabel(episode, self.strategy, self.k_relabel, self.eps_goal, rng);
        self.episode_lens.push_back(expanded.len());
        self.data.extend(expanded);
        while self.data.len() > self.capacity && self.episode_lens.len() > 1 {
            let drop = self.episode_lens.pop_front().expect("nonempty deque");
            self.data.drain(..drop);
        }
        Ok(())
    }

    /// Uniform sample with replacement over all stored transitions.
    pub fn sample<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Result<Minibatch> {
        if batch_size == 0 {
            return Err(Error::usage("batch size must be positive"));
        }
        if self.data.is_empty() {
            return Err(Error::usage("cannot sample from an empty buffer"));
        }
        let rows: Vec<&Transition> = (0..batch_size)
            .map(|_| &self.data[rng.gen_range(0..self.data.len())])
            .collect();
        Minibatch::from_rows(&rows)
    }
}
