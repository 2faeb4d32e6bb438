//! Planar revolute-chain robot description and forward kinematics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobotConfig {
    /// One entry per joint; the link extends from that joint.
    pub link_lengths: Vec<f64>,
    /// Joints frozen at a fixed angle. They keep their slot in the robot
    /// state and in the action vector; the action component is ignored.
    pub locked: BTreeMap<usize, f64>,
    /// Maximum joint angle change per step, radians.
    pub max_joint_velocity: f64,
}

impl RobotConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.link_lengths.len();
        if n < 2 {
            return Err(Error::config("robot needs at least 2 joints"));
        }
        if self.link_lengths.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::config("link lengths must be positive and finite"));
        }
        if !(self.max_joint_velocity > 0.0) {
            return Err(Error::config("max joint velocity must be positive"));
        }
        if self.locked.len() >= n {
            return Err(Error::config("at least one joint must stay unlocked"));
        }
        for (&idx, &angle) in &self.locked {
            if idx >= n {
                return Err(Error::config(format!("locked joint {idx} out of range")));
            }
            if !(-std::f64::consts::PI..=std::f64::consts::PI).contains(&angle) {
                return Err(Error::config(format!(
                    "locked angle {angle} outside [-pi, pi]"
                )));
            }
        }
        Ok(())
    }

    pub fn n_joints(&self) -> usize {
        self.link_lengths.len()
    }

    /// Outer reach of the fully stretched arm.
    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    pub fn is_locked(&self, joint: usize) -> bool {
        self.locked.contains_key(&joint)
    }
}

/// End-effector position of a planar chain rooted at the origin. Joint
/// angles are relative: the absolute heading of link `i` is the prefix sum
/// of the first `i + 1` angles.
pub fn forward_kinematics(link_lengths: &[f64], angles: &[f64]) -> (f64, f64) {
    assert_eq!(
        link_lengths.len(),
        angles.len(),
        "one angle per link expected"
    );
    let (mut x, mut y) = (0.0, 0.0);
    let mut heading = 0.0;
    for (l, q) in link_lengths.iter().zip(angles) {
        heading += q;
        x += l * heading.cos();
        y += l * heading.sin();
    }
    (x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn straight_arm_points_along_x() {
        let (x, y) = forward_kinematics(&[1.0, 1.0], &[0.0, 0.0]);
        assert!((x - 2.0).abs() < 1e-12 && y.abs() < 1e-12);
    }

    #[test]
    fn quarter_turn_points_up() {
        let (x, y) = forward_kinematics(&[1.0, 1.0], &[FRAC_PI_2, 0.0]);
        assert!(x.abs() < 1e-12 && (y - 2.0).abs() < 1e-12);
    }

    #[test]
    fn elbow_bend_reaches_corner() {
        let (x, y) = forward_kinematics(&[1.0, 1.0], &[FRAC_PI_2, -FRAC_PI_2]);
        assert!((x - 1.0).abs() < 1e-12 && (y - 1.0).abs() < 1e-12);
    }

    #[test]
    fn validate_rejects_bad_configs() {
        let ok = RobotConfig {
            link_lengths: vec![1.0, 1.0],
            locked: BTreeMap::new(),
            max_joint_velocity: 0.15,
        };
        assert!(ok.validate().is_ok());

        let mut one_joint = ok.clone();
        one_joint.link_lengths = vec![1.0];
        assert!(one_joint.validate().is_err());

        let mut all_locked = ok.clone();
        all_locked.locked.insert(0, 0.0);
        all_locked.locked.insert(1, 0.0);
        assert!(all_locked.validate().is_err());

        let mut out_of_range = ok.clone();
        out_of_range.locked.insert(0, 4.0);
        assert!(out_of_range.validate().is_err());

        let mut bad_lock_index = ok;
        bad_lock_index.locked.insert(7, 0.0);
        assert!(bad_lock_index.validate().is_err());
    }

    #[test]
    fn reach_sums_links() {
        let r = RobotConfig {
            link_lengths: vec![1.0, 0.5, 0.25],
            locked: BTreeMap::new(),
            max_joint_velocity: 0.15,
        };
        assert!((r.reach() - 1.75).abs() < 1e-12);
        let _ = PI;
    }
}
