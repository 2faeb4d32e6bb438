//! Task descriptions: what counts as the goal, where goals and objects
//! spawn, and the tolerances that define success and touching.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Reach,
    Push,
}

/// Annular sector around the arm base. Sampling is uniform over area.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Annulus {
    pub r_min: f64,
    pub r_max: f64,
    pub theta_min: f64,
    pub theta_max: f64,
}

impl Annulus {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.r_min && self.r_min < self.r_max) {
            return Err(Error::config(format!(
                "annulus radii out of order: [{}, {}]",
                self.r_min, self.r_max
            )));
        }
        if !(self.theta_min < self.theta_max) {
            return Err(Error::config("annulus angular span is empty"));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut ChaCha12Rng) -> [f64; 2] {
        let u: f64 = rng.gen();
        let r = (u * (self.r_max * self.r_max - self.r_min * self.r_min)
            + self.r_min * self.r_min)
            .sqrt();
        let theta = rng.gen_range(self.theta_min..self.theta_max);
        [r * theta.cos(), r * theta.sin()]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
        let theta = p[1].atan2(p[0]);
        r >= self.r_min - 1e-12
            && r <= self.r_max + 1e-12
            && theta >= self.theta_min - 1e-12
            && theta <= self.theta_max + 1e-12
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub goal_region: Annulus,
    /// Where the pushable object spawns. Required for push tasks.
    pub object_region: Option<Annulus>,
    /// Radius of the pushable disk. Unused for reach.
    pub object_radius: f64,
    /// Fraction of the penetration the object yields less than fully;
    /// 0 means the object gives way completely, values toward 1 mean it
    /// barely moves per contact. Must lie in [0, 1).
    pub mu_slip: f64,
    /// Success threshold: reward is 0 exactly when the achieved goal is
    /// strictly closer than this to the target.
    pub eps_goal: f64,
    /// Touch proxy radius used by the touched flag.
    pub r_touch: f64,
    pub episode_length: usize,
}

impl TaskConfig {
    pub fn reach(goal_region: Annulus) -> Self {
        TaskConfig {
            kind: TaskKind::Reach,
            goal_region,
            object_region: None,
            object_radius: 0.0,
            mu_slip: 0.0,
            eps_goal: 0.05,
            r_touch: 0.02,
            episode_length: 50,
        }
    }

    pub fn push(goal_region: Annulus, object_region: Annulus, object_radius: f64, mu_slip: f64) -> Self {
        TaskConfig {
            kind: TaskKind::Push,
            goal_region,
            object_region: Some(object_region),
            object_radius,
            mu_slip,
            eps_goal: 0.05,
            r_touch: 0.02,
            episode_length: 50,
        }
    }

    pub fn validate(&self, arm_reach: f64) -> Result<()> {
        self.goal_region.validate()?;
        if self.goal_region.r_max >= arm_reach {
            return Err(Error::config(format!(
                "goal region extends to {} but the arm reaches only {}",
                self.goal_region.r_max, arm_reach
            )));
        }
        if !(self.eps_goal > 0.0) || !(self.r_touch > 0.0) {
            return Err(Error::config("eps_goal and r_touch must be positive"));
        }
        if self.episode_length == 0 {
            return Err(Error::config("episode length must be positive"));
        }
        match self.kind {
            TaskKind::Reach => Ok(()),
            TaskKind::Push => {
                let region = self
                    .object_region
                    .ok_or_else(|| Error::config("push task needs an object region"))?;
                region.validate()?;
                if region.r_max >= arm_reach {
                    return Err(Error::config("object region outside arm reach"));
                }
                if !(self.object_radius > 0.0) {
                    return Err(Error::config("object radius must be positive"));
                }
                if !(0.0..1.0).contains(&self.mu_slip) {
                    return Err(Error::config("mu_slip must lie in [0, 1)"));
                }
                Ok(())
            }
        }
    }

    /// Width of the task state vector: reach exposes the goal, push exposes
    /// object position, object velocity and goal.
    pub fn task_dim(&self) -> usize {
        match self.kind {
            TaskKind::Reach => 2,
            TaskKind::Push => 6,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn samples_stay_inside_region() {
        let a = Annulus {
            r_min: 0.5,
            r_max: 1.5,
            theta_min: -0.7,
            theta_max: 0.7,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..500 {
            let p = a.sample(&mut rng);
            assert!(a.contains(p), "{p:?} escaped the annulus");
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let a = Annulus {
            r_min: 0.2,
            r_max: 2.0,
            theta_min: -3.0,
            theta_max: 3.0,
        };
        let mut r1 = ChaCha12Rng::seed_from_u64(11);
        let mut r2 = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..10 {
            assert_eq!(a.sample(&mut r1), a.sample(&mut r2));
        }
    }

    #[test]
    fn unreachable_goal_region_is_rejected() {
        let far = Annulus {
            r_min: 1.0,
            r_max: 2.5,
            theta_min: -1.0,
            theta_max: 1.0,
        };
        let cfg = TaskConfig::reach(far);
        assert!(cfg.validate(2.0).is_err());
        assert!(cfg.validate(3.0).is_ok());
    }

    #[test]
    fn push_needs_object_region_and_valid_slip() {
        let region = Annulus {
            r_min: 0.8,
            r_max: 1.5,
            theta_min: -0.5,
            theta_max: 0.5,
        };
        let mut cfg = TaskConfig::push(region, region, 0.08, 0.2);
        assert!(cfg.validate(3.0).is_ok());
        cfg.mu_slip = 1.0;
        assert!(cfg.validate(3.0).is_err());
        cfg.mu_slip = 0.2;
        cfg.object_region = None;
        assert!(cfg.validate(3.0).is_err());
    }
}
