//! Planar n-joint arm environments with reach and push tasks.
//!
//! States are split in two from the start: the task state `s_T` (goal, and
//! for push the object pose) and the robot state `s_R` (joint angles only).
//! The end-effector position is never part of either; policies that want it
//! must infer it. Rewards are sparse: 0 on success, -1 otherwise.
//!
//! Pushing is quasi-static. When the end effector ends a step inside the
//! object disk, the object yields along the contact normal by the
//! penetration depth scaled by `1 - mu_slip`; whatever penetration the slip
//! keeps is then removed by stalling the arm against the moved object
//! (this step's joint motion is scaled back until the end effector sits on
//! the disk boundary). High `mu_slip` therefore reads as a stubborn object
//! on a grippy surface: it moves less per contact and stops the arm. The
//! object carries no momentum; its reported velocity is this step's
//! displacement.

pub mod robot;
pub mod scripted;
pub mod task;

mod presets;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

pub use presets::{make_env, parse_env_id};
pub use robot::{forward_kinematics, RobotConfig};
pub use scripted::ScriptedReachPolicy;
pub use task::{Annulus, TaskConfig, TaskKind};

/// Sparse goal-distance reward shared by every task.
pub fn sparse_reward(achieved: [f64; 2], goal: [f64; 2], eps_goal: f64) -> f64 {
    let dx = achieved[0] - goal[0];
    let dy = achieved[1] - goal[1];
    if (dx * dx + dy * dy).sqrt() < eps_goal {
        0.0
    } else {
        -1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    /// Task state: `[goal]` for reach, `[object, object_velocity, goal]`
    /// for push.
    pub task: Vec<f64>,
    /// Joint angles, locked joints included.
    pub robot: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// End effector within `r_touch` of the object surface (push) or of the
    /// goal (reach) at the end of the step.
    pub touched: bool,
    /// What the task actually attained this step: end-effector position for
    /// reach, object position for push.
    pub achieved_goal: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

impl StepOutcome {
    pub fn success(&self) -> bool {
        self.reward == 0.0
    }
}

#[derive(Debug, Clone)]
pub struct PlanarEnv {
    robot: RobotConfig,
    task: TaskConfig,
    label: String,
    angles: Vec<f64>,
    object: [f64; 2],
    object_vel: [f64; 2],
    goal: [f64; 2],
    steps: usize,
    active: bool,
}

impl PlanarEnv {
    pub fn new(robot: RobotConfig, task: TaskConfig) -> Result<Self> {
        robot.validate()?;
        task.validate(robot.reach())?;
        let n = robot.n_joints();
        let mut angles = vec![0.0; n];
        for (&idx, &a) in &robot.locked {
            angles[idx] = a;
        }
        let label = format!(
            "{}-{}j",
            match task.kind {
                TaskKind::Reach => "reach",
                TaskKind::Push => "push",
            },
            n
        );
        Ok(PlanarEnv {
            robot,
            task,
            label,
            angles,
            object: [0.0, 0.0],
            object_vel: [0.0, 0.0],
            goal: [1.0, 0.0],
            steps: 0,
            active: false,
        })
    }

    /// Stamp a descriptive identifier (preset builders pass their id).
    pub fn with_label(mut self, label: &str) -> Self {
        self.label = label.to_string();
        self
    }

    pub fn id(&self) -> &str {
        &self.label
    }

    pub fn robot(&self) -> &RobotConfig {
        &self.robot
    }
    pub fn task(&self) -> &TaskConfig {
        &self.task
    }
    pub fn kind(&self) -> TaskKind {
        self.task.kind
    }
    pub fn task_dim(&self) -> usize {
        self.task.task_dim()
    }
    pub fn robot_dim(&self) -> usize {
        self.robot.n_joints()
    }
    pub fn action_dim(&self) -> usize {
        self.robot.n_joints()
    }
    pub fn episode_length(&self) -> usize {
        self.task.episode_length
    }
    pub fn eps_goal(&self) -> f64 {
        self.task.eps_goal
    }
    pub fn goal(&self) -> [f64; 2] {
        self.goal
    }
    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn ee_position(&self) -> [f64; 2] {
        let (x, y) = forward_kinematics(&self.robot.link_lengths, &self.angles);
        [x, y]
    }

    pub fn compute_reward(&self, achieved: [f64; 2], goal: [f64; 2]) -> f64 {
        sparse_reward(achieved, goal, self.task.eps_goal)
    }

    /// The goal occupies the last two slots of the task state for every
    /// task kind. Used by goal relabeling.
    pub fn replace_goal_in_task_state(task_state: &mut [f64], goal: [f64; 2]) {
        let n = task_state.len();
        assert!(n >= 2, "task state too short to carry a goal");
        task_state[n - 2] = goal[0];
        task_state[n - 1] = goal[1];
    }

    fn achieved_goal(&self) -> [f64; 2] {
        match self.task.kind {
            TaskKind::Reach => self.ee_position(),
            TaskKind::Push => self.object,
        }
    }

    fn current_state(&self) -> EnvState {
        let task = match self.task.kind {
            TaskKind::Reach => vec![self.goal[0], self.goal[1]],
            TaskKind::Push => vec![
                self.object[0],
                self.object[1],
                self.object_vel[0],
                self.object_vel[1],
                self.goal[0],
                self.goal[1],
            ],
        };
        EnvState {
            task,
            robot: self.angles.clone(),
        }
    }

    /// Start a fresh episode. Unlocked joints are drawn uniformly from
    /// `[-pi, pi]`, then the goal, then (push) the object with rejection so
    /// the pair starts at least `2 * eps_goal` apart and the arm does not
    /// spawn inside the object. Fully determined by `seed`.
    pub fn reset(&mut self, seed: u64) -> EnvState {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        self.sample_free_angles(&mut rng);
        self.goal = self.task.goal_region.sample(&mut rng);
        self.object_vel = [0.0, 0.0];
        if self.task.kind == TaskKind::Push {
            let region = self.task.object_region.expect("validated push config");
            let mut tries = 0;
            loop {
                let obj = region.sample(&mut rng);
                let dx = obj[0] - self.goal[0];
                let dy = obj[1] - self.goal[1];
                if (dx * dx + dy * dy).sqrt() >= 2.0 * self.task.eps_goal {
                    self.object = obj;
                    break;
                }
                tries += 1;
                assert!(tries < 10_000, "object and goal regions leave no room apart");
            }
            // keep the arm from spawning in contact with the object
            let clearance = self.task.object_radius + self.task.r_touch;
            let mut tries = 0;
            while dist(self.ee_position(), self.object) <= clearance {
                self.sample_free_angles(&mut rng);
                tries += 1;
                assert!(tries < 10_000, "no collision-free start pose found");
            }
        }
        self.steps = 0;
        self.active = true;
        self.current_state()
    }

    fn sample_free_angles(&mut self, rng: &mut ChaCha12Rng) {
        for j in 0..self.robot.n_joints() {
            if let Some(&a) = self.robot.locked.get(&j) {
                self.angles[j] = a;
            } else {
                self.angles[j] = rng.gen_range(-std::f64::consts::PI..=std::f64::consts::PI);
            }
        }
    }

    /// Advance one step. Action components are clamped to `[-1, 1]` and
    /// scaled by the joint velocity limit; locked joints ignore theirs.
    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if !self.active {
            return Err(Error::usage("episode is over; reset the environment"));
        }
        if action.len() != self.robot.n_joints() {
            return Err(Error::shape(format!(
                "action has {} components, robot has {} joints",
                action.len(),
                self.robot.n_joints()
            )));
        }
        let old_angles = self.angles.clone();
        for (j, a) in action.iter().enumerate() {
            if self.robot.is_locked(j) {
                continue;
            }
            let a = a.clamp(-1.0, 1.0);
            let next = self.angles[j] + a * self.robot.max_joint_velocity;
            self.angles[j] = next.clamp(-std::f64::consts::PI, std::f64::consts::PI);
        }
        if self.task.kind == TaskKind::Push {
            self.resolve_contact(&old_angles);
        }
        self.steps += 1;

        let achieved = self.achieved_goal();
        let reward = self.compute_reward(achieved, self.goal);
        let touched = match self.task.kind {
            TaskKind::Reach => dist(self.ee_position(), self.goal) <= self.task.r_touch,
            TaskKind::Push => {
                dist(self.ee_position(), self.object)
                    <= self.task.object_radius + self.task.r_touch
            }
        };
        let done = reward == 0.0 || self.steps >= self.task.episode_length;
        self.active = !done;
        Ok(StepOutcome {
            state: self.current_state(),
            reward,
            done,
            info: StepInfo {
                touched,
                achieved_goal: achieved,
            },
        })
    }

    /// Quasi-static contact resolution; see the module docs for the model.
    fn resolve_contact(&mut self, old_angles: &[f64]) {
        let r = self.task.object_radius;
        let obj0 = self.object;
        let ee = self.ee_position();
        let d = dist(ee, obj0);
        if d >= r {
            self.object_vel = [0.0, 0.0];
            return;
        }
        let pen = r - d;
        let normal = if d > 1e-12 {
            [(obj0[0] - ee[0]) / d, (obj0[1] - ee[1]) / d]
        } else {
            // degenerate: end effector exactly at the object center; push
            // along the arm's approach direction, or +x as a last resort
            let ee_old = {
                let (x, y) = forward_kinematics(&self.robot.link_lengths, old_angles);
                [x, y]
            };
            let d_old = dist(ee, ee_old);
            if d_old > 1e-12 {
                [(ee[0] - ee_old[0]) / d_old, (ee[1] - ee_old[1]) / d_old]
            } else {
                [1.0, 0.0]
            }
        };
        let give = pen * (1.0 - self.task.mu_slip);
        let moved = [obj0[0] + normal[0] * give, obj0[1] + normal[1] * give];
        self.object = moved;

        if dist(self.ee_position(), moved) < r - 1e-12 {
            // slip kept part of the penetration: stall the arm against the
            // moved object by shrinking this step's joint motion
            let delta: Vec<f64> = self
                .angles
                .iter()
                .zip(old_angles)
                .map(|(new, old)| new - old)
                .collect();
            let ee_at = |lam: f64, scratch: &mut Vec<f64>| {
                scratch.clear();
                scratch.extend(
                    old_angles
                        .iter()
                        .zip(&delta)
                        .map(|(o, d)| o + lam * d),
                );
                let (x, y) = forward_kinematics(&self.robot.link_lengths, scratch);
                [x, y]
            };
            let mut scratch = Vec::with_capacity(old_angles.len());
            if dist(ee_at(0.0, &mut scratch), moved) >= r {
                let (mut lo, mut hi) = (0.0f64, 1.0f64);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if dist(ee_at(mid, &mut scratch), moved) >= r {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                for (j, (o, dlt)) in old_angles.iter().zip(&delta).enumerate() {
                    self.angles[j] = o + lo * dlt;
                }
            } else {
                // the step swept the arm clean through the disk; drop the
                // arm motion and clear the object off the stationary ee
                self.angles.copy_from_slice(old_angles);
                let ee0 = ee_at(0.0, &mut scratch);
                let d0 = dist(ee0, moved);
                let dir = if d0 > 1e-12 {
                    [(moved[0] - ee0[0]) / d0, (moved[1] - ee0[1]) / d0]
                } else {
                    [1.0, 0.0]
                };
                self.object = [ee0[0] + dir[0] * r, ee0[1] + dir[1] * r];
            }
        }
        self.object_vel = [self.object[0] - obj0[0], self.object[1] - obj0[1]];
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reach_env() -> PlanarEnv {
        make_env("reach-r2").unwrap()
    }

    fn push_env(id: &str) -> PlanarEnv {
        make_env(id).unwrap()
    }

    #[test]
    fn reset_is_seed_deterministic() {
        let mut a = reach_env();
        let mut b = reach_env();
        assert_eq!(a.reset(99), b.reset(99));
        assert_ne!(a.reset(1), b.reset(2));
    }

    #[test]
    fn zero_action_leaves_state_unchanged() {
        let mut env = reach_env();
        let s0 = env.reset(4);
        let out = env.step(&[0.0, 0.0]).unwrap();
        assert_eq!(out.state.robot, s0.robot);
        assert_eq!(out.state.task, s0.task);
        assert_eq!(out.reward, -1.0);
    }

    #[test]
    fn velocity_limit_and_angle_bounds_hold() {
        let mut env = reach_env();
        let mut prev = env.reset(7).robot;
        for i in 0..120 {
            let a = [(i as f64 * 0.77).sin() * 5.0, -3.0];
            let out = env.step(&a).unwrap();
            for (p, q) in prev.iter().zip(&out.state.robot) {
                assert!((q - p).abs() <= 0.15 + 1e-12, "joint moved too fast");
                assert!(q.abs() <= std::f64::consts::PI + 1e-12);
            }
            prev = out.state.robot;
            if out.done {
                env.reset(i as u64 + 100);
                prev = env.angles().to_vec();
            }
        }
    }

    #[test]
    fn locked_joint_never_moves_but_keeps_its_slot() {
        let mut env = push_env("push1-r3-lock1");
        let s = env.reset(3);
        assert_eq!(s.robot.len(), 3);
        assert_eq!(s.robot[1], 0.5);
        for _ in 0..30 {
            let out = env.step(&[1.0, 1.0, -1.0]).unwrap();
            assert_eq!(out.state.robot[1], 0.5);
            if out.done {
                break;
            }
        }
    }

    #[test]
    fn stepping_after_done_is_a_usage_error() {
        let mut env = reach_env();
        env.reset(1);
        let mut done = false;
        for _ in 0..60 {
            let out = env.step(&[0.0, 0.0]).unwrap();
            if out.done {
                done = true;
                break;
            }
        }
        assert!(done, "episode should time out");
        assert!(matches!(env.step(&[0.0, 0.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn trajectories_are_reproducible() {
        let mut a = push_env("push2-r3");
        let mut b = push_env("push2-r3");
        a.reset(21);
        b.reset(21);
        for i in 0..50 {
            let act = [(i as f64).sin(), (i as f64 * 0.3).cos(), 0.4];
            let oa = a.step(&act).unwrap();
            let ob = b.step(&act).unwrap();
            assert_eq!(oa, ob);
            if oa.done {
                break;
            }
        }
    }

    /// Force a contact deterministically: compute where the ee will land
    /// after the step and park the object so that pose penetrates the disk
    /// by `pen` along the approach direction. Returns (env, action,
    /// object_before, planned_penetration, unstalled_ee_after).
    fn rigged_contact(id: &str, pen_frac: f64) -> (PlanarEnv, Vec<f64>, [f64; 2], f64, [f64; 2]) {
        let mut env = push_env(id);
        env.reset(5);
        env.angles = vec![0.3, -0.2, 0.4];
        env.steps = 0;
        env.active = true;
        env.goal = [1.9, 0.0];
        let action = vec![0.3, 0.3, 0.3];
        let ee0 = env.ee_position();
        let q_after: Vec<f64> = env
            .angles
            .iter()
            .map(|q| q + 0.3 * env.robot.max_joint_velocity)
            .collect();
        let (ex, ey) = forward_kinematics(&env.robot.link_lengths, &q_after);
        let ee1 = [ex, ey];
        let step_len = dist(ee0, ee1);
        assert!(step_len > 1e-3, "arm barely moved; bad rig");
        let dir = [(ee1[0] - ee0[0]) / step_len, (ee1[1] - ee0[1]) / step_len];
        let r = env.task.object_radius;
        let pen = pen_frac * r;
        assert!(pen < step_len, "arm step too short to reach the planned depth");
        // center sits R - pen beyond the future ee along the motion line
        env.object = [ee1[0] + dir[0] * (r - pen), ee1[1] + dir[1] * (r - pen)];
        assert!(dist(ee0, env.object) > r, "object already touching at start");
        let obj0 = env.object;
        (env, action, obj0, pen, ee1)
    }

    #[test]
    fn frictionless_contact_gives_way_by_the_full_penetration() {
        let (mut env, action, obj0, pen, ee1) = rigged_contact("push1-r3", 0.5);
        env.task.mu_slip = 0.0;
        env.step(&action).unwrap();
        let displacement = dist(env.object, obj0);
        assert!(
            (displacement - pen).abs() < 1e-9,
            "displacement {displacement} vs penetration {pen}"
        );
        // no slip, so nothing is left to stall the arm on
        assert!(dist(env.ee_position(), ee1) < 1e-12);
        let gap = dist(env.ee_position(), env.object);
        assert!((gap - env.task.object_radius).abs() < 1e-9);
    }

    #[test]
    fn object_never_ends_a_step_penetrated() {
        for seed in 0..8u64 {
            for id in ["push1-r3", "push2-r3", "push2-r3-lock1"] {
                let mut env = push_env(id);
                env.reset(seed);
                let r = env.task.object_radius;
                let mut rng_state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
                for _ in 0..env.episode_length() {
                    let mut act = vec![0.0; env.action_dim()];
                    for a in act.iter_mut() {
                        rng_state = rng_state
                            .wrapping_mul(6364136223846793005)
                            .wrapping_add(1442695040888963407);
                        *a = ((rng_state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0;
                    }
                    let out = env.step(&act).unwrap();
                    let gap = dist(env.ee_position(), env.object);
                    assert!(
                        gap >= r - 1e-9,
                        "penetration: gap {gap} < radius {r} (env {id}, seed {seed})"
                    );
                    if out.done {
                        break;
                    }
                }
            }
        }
    }

    #[test]
    fn high_slip_objects_move_less_per_contact() {
        // identical rigged geometry, different slip
        let mut moved = Vec::new();
        for id in ["push1-r3", "push2-r3"] {
            let (mut env, action, obj0, pen, _) = rigged_contact(id, 0.5);
            env.step(&action).unwrap();
            let displacement = dist(env.object, obj0);
            let want = pen * (1.0 - env.task.mu_slip);
            assert!(
                (displacement - want).abs() < 1e-9,
                "{id}: displacement {displacement}, expected {want}"
            );
            // slip keeps part of the penetration, so the arm must have
            // stalled: final gap is exactly the disk radius
            let gap = dist(env.ee_position(), env.object);
            assert!(gap >= env.task.object_radius - 1e-9);
            moved.push(displacement);
        }
        assert!(
            moved[0] > moved[1] * 1.5,
            "low slip should move the object farther: {moved:?}"
        );
    }

    #[test]
    fn success_and_done_are_consistent() {
        // drive the ee onto the goal with the scripted controller and check
        // the final step reports reward 0 and done
        let mut env = reach_env();
        let oracle = ScriptedReachPolicy::new(&env).unwrap();
        let mut succeeded = 0;
        for seed in 0..20u64 {
            env.reset(seed);
            for _ in 0..env.episode_length() {
                let act = oracle.act(&env);
                let out = env.step(&act).unwrap();
                if out.done {
                    if out.reward == 0.0 {
                        succeeded += 1;
                        let d = dist(out.info.achieved_goal, env.goal());
                        assert!(d < env.eps_goal());
                    }
                    break;
                }
            }
        }
        assert!(succeeded >= 19, "oracle solved only {succeeded}/20");
    }

    #[test]
    fn task_state_layout_matches_kind() {
        let mut env = reach_env();
        let s = env.reset(1);
        assert_eq!(s.task.len(), 2);
        assert_eq!(s.task, vec![env.goal()[0], env.goal()[1]]);

        let mut env = push_env("push1-r3");
        let s = env.reset(1);
        assert_eq!(s.task.len(), 6);
        assert_eq!(&s.task[4..], &[env.goal()[0], env.goal()[1]]);
        assert_eq!(&s.task[2..4], &[0.0, 0.0], "object starts at rest");

        let mut t = s.task.clone();
        PlanarEnv::replace_goal_in_task_state(&mut t, [9.0, -9.0]);
        assert_eq!(&t[4..], &[9.0, -9.0]);
        assert_eq!(&t[..4], &s.task[..4]);
    }

    #[test]
    fn object_and_goal_start_apart() {
        for seed in 0..50u64 {
            let mut env = push_env("push1-r3");
            let s = env.reset(seed);
            let d = dist([s.task[0], s.task[1]], [s.task[4], s.task[5]]);
            assert!(d >= 2.0 * env.eps_goal());
        }
    }
}
