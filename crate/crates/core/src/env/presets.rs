//! Environment presets addressable by string id.
//!
//! Grammar: `<task>-r<n>[-lock<i>]...`
//!
//! Tasks: `reach`, and four push variants crossing slip with object size:
//! `push1` (mu 0.2, radius 0.08), `push2` (mu 0.7, radius 0.08),
//! `push3` (mu 0.2, radius 0.15), `push4` (mu 0.7, radius 0.15).
//!
//! Robots: `r<n>` is an n-joint arm with unit links and a 0.15 rad/step
//! velocity limit. Each `lock<i>` suffix freezes joint `i` at 0.5 rad.
//! Locking a middle or wrist joint keeps the preset goal regions fully
//! reachable; locking joint 0 does not, and such configs may cap success
//! below 1.
//!
//! Examples: `reach-r2`, `push1-r3-lock1`, `push2-r4-lock1-lock3`.

use std::collections::BTreeMap;

use super::robot::RobotConfig;
use super::task::{Annulus, TaskConfig};
use super::PlanarEnv;
use crate::error::{Error, Result};

pub const LOCKED_ANGLE: f64 = 0.5;
pub const MAX_JOINT_VELOCITY: f64 = 0.15;

/// Parse an environment id into its robot and task configuration.
pub fn parse_env_id(id: &str) -> Result<(RobotConfig, TaskConfig)> {
    let mut parts = id.split('-');
    let task_name = parts
        .next()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::config(format!("empty env id '{id}'")))?;
    let robot_part = parts
        .next()
        .ok_or_else(|| Error::config(format!("env id '{id}' is missing a robot segment")))?;

    let n: usize = robot_part
        .strip_prefix('r')
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::config(format!("bad robot segment '{robot_part}' in '{id}'")))?;
    if !(2..=8).contains(&n) {
        return Err(Error::config(format!(
            "robot needs 2..=8 joints, got {n} in '{id}'"
        )));
    }

    let mut locked = BTreeMap::new();
    for seg in parts {
        let j: usize = seg
            .strip_prefix("lock")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::config(format!("bad segment '{seg}' in '{id}'")))?;
        if j >= n {
            return Err(Error::config(format!(
                "cannot lock joint {j} of a {n}-joint robot in '{id}'"
            )));
        }
        if locked.insert(j, LOCKED_ANGLE).is_some() {
            return Err(Error::config(format!("joint {j} locked twice in '{id}'")));
        }
    }

    let robot = RobotConfig {
        link_lengths: vec![1.0; n],
        locked,
        max_joint_velocity: MAX_JOINT_VELOCITY,
    };
    let reach = robot.reach();
    let has_locks = !robot.locked.is_empty();

    let task = match task_name {
        "reach" => {
            // locked arms lose the region near the base; shift the band out
            let r_min = if has_locks { 0.35 * reach } else { 0.25 * reach };
            TaskConfig::reach(Annulus {
                r_min,
                r_max: 0.9 * reach,
                theta_min: -std::f64::consts::PI,
                theta_max: std::f64::consts::PI,
            })
        }
        "push1" | "push2" | "push3" | "push4" => {
            let (mu_slip, object_radius) = match task_name {
                "push1" => (0.2, 0.08),
                "push2" => (0.7, 0.08),
                "push3" => (0.2, 0.15),
                _ => (0.7, 0.15),
            };
            let object_region = Annulus {
                r_min: 0.33 * reach,
                r_max: 0.55 * reach,
                theta_min: -0.55,
                theta_max: 0.55,
            };
            let goal_region = Annulus {
                r_min: 0.33 * reach,
                r_max: 0.60 * reach,
                theta_min: -0.8,
                theta_max: 0.8,
            };
            TaskConfig::push(goal_region, object_region, object_radius, mu_slip)
        }
        other => {
            return Err(Error::config(format!(
                "unknown task '{other}' in env id '{id}'"
            )))
        }
    };

    Ok((robot, task))
}

/// Build a ready environment from a preset id.
pub fn make_env(id: &str) -> Result<PlanarEnv> {
    let (robot, task) = parse_env_id(id)?;
    Ok(PlanarEnv::new(robot, task)?.with_label(id))
}
