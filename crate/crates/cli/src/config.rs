//! Run configuration files: TOML, schema versioned, strictly parsed.
//! Unknown keys are errors so typos fail loudly instead of silently
//! training with defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use stitchkit_core::env::PlanarEnv;
use stitchkit_core::error::{Error, Result};
use stitchkit_core::policy::{Alignment, ArchDesc, BOTTLENECK_DROPOUT, BOTTLENECK_WIDTH};
use stitchkit_core::rl::{HerStrategy, SacConfig, TrainParams};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Environment id, e.g. "push1-r3" or "reach-r2-lock1".
    pub env: String,
    #[serde(default)]
    pub seed: u64,
    pub arch: ArchSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sac: SacSection,
    #[serde(default)]
    pub paths: PathsSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArchSection {
    Plain {
        hidden: Vec<usize>,
        /// Layer index where stitching splits the net; defaults to the
        /// middle hidden layer.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        split: Option<usize>,
    },
    Modular {
        latent: usize,
        task_hidden: Vec<usize>,
        robot_hidden: Vec<usize>,
        #[serde(default = "default_alignment")]
        alignment: Alignment,
        #[serde(default)]
        dropout: f64,
        #[serde(default)]
        stop_anchor_grad: bool,
    },
    /// Narrow-bottleneck modular baseline: no alignment, interface
    /// dropout instead.
    Devin {
        #[serde(default = "default_bottleneck")]
        bottleneck: usize,
        task_hidden: Vec<usize>,
        robot_hidden: Vec<usize>,
        #[serde(default = "default_bottleneck_dropout")]
        dropout: f64,
    },
}

fn default_alignment() -> Alignment {
    Alignment::Relative
}

fn default_bottleneck() -> usize {
    BOTTLENECK_WIDTH
}

fn default_bottleneck_dropout() -> f64 {
    BOTTLENECK_DROPOUT
}

impl ArchSection {
    pub fn to_desc(&self, env: &PlanarEnv) -> ArchDesc {
        let task_dim = env.task_dim();
        let robot_dim = env.robot_dim();
        let n_action = env.robot().n_joints();
        match self {
            ArchSection::Plain { hidden, split } => {
                let mut desc = ArchDesc::plain(task_dim, robot_dim, n_action, hidden.clone());
                if let (ArchDesc::Plain { split: s, .. }, Some(want)) = (&mut desc, split) {
                    *s = *want;
                }
                desc
            }
            ArchSection::Modular {
                latent,
                task_hidden,
                robot_hidden,
                alignment,
                dropout,
                stop_anchor_grad,
            } => ArchDesc::Modular {
                task_dim,
                robot_dim,
                n_action,
                latent: *latent,
                task_hidden: task_hidden.clone(),
                robot_hidden: robot_hidden.clone(),
                alignment: *alignment,
                dropout: *dropout,
                stop_anchor_grad: *stop_anchor_grad,
            },
            ArchSection::Devin {
                bottleneck,
                task_hidden,
                robot_hidden,
                dropout,
            } => ArchDesc::Modular {
                task_dim,
                robot_dim,
                n_action,
                latent: *bottleneck,
                task_hidden: task_hidden.clone(),
                robot_hidden: robot_hidden.clone(),
                alignment: Alignment::None,
                dropout: *dropout,
                stop_anchor_grad: false,
            },
        }
    }

    pub fn wants_anchors(&self) -> bool {
        matches!(
            self,
            ArchSection::Modular {
                alignment: Alignment::Relative,
                ..
            }
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub cycles: usize,
    pub rollout_episodes: usize,
    pub grad_steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub random_episodes: usize,
    pub buffer_capacity: usize,
    pub k_relabel: usize,
    pub her: HerStrategy,
}

impl Default for TrainSection {
    fn default() -> Self {
        let p = TrainParams::default();
        TrainSection {
            epochs: p.epochs,
            cycles: p.cycles,
            rollout_episodes: p.rollout_episodes,
            grad_steps: p.grad_steps,
            eval_every: p.eval_every,
            eval_episodes: p.eval_episodes,
            random_episodes: p.random_episodes,
            buffer_capacity: p.buffer_capacity,
            k_relabel: p.k_relabel,
            her: p.her,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacSection {
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub init_log_alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_entropy: Option<f64>,
}

impl Default for SacSection {
    fn default() -> Self {
        let c = SacConfig::default();
        SacSection {
            gamma: c.gamma,
            tau: c.tau,
            batch_size: c.batch_size,
            actor_lr: c.actor_lr,
            critic_lr: c.critic_lr,
            alpha_lr: c.alpha_lr,
            init_log_alpha: c.init_log_alpha,
            target_entropy: c.target_entropy,
        }
    }
}

impl SacSection {
    pub fn to_config(&self) -> SacConfig {
        SacConfig {
            gamma: self.gamma,
            tau: self.tau,
            batch_size: self.batch_size,
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            alpha_lr: self.alpha_lr,
            init_log_alpha: self.init_log_alpha,
            target_entropy: self.target_entropy,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Anchor file for relative interfaces. Relative paths resolve
    /// against the config file's directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchors: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text)
            .map_err(|e| Error::config(format!("config does not parse:\n{e}")))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(Error::config(format!(
                "config schema version {} is not the supported {SCHEMA_VERSION}",
                config.schema_version
            )));
        }
        Ok(config)
    }

    /// Read a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::parse(&text)?;
        if let Some(anchors) = &config.paths.anchors {
            if anchors.is_relative() {
                let base = path.parent().unwrap_or_else(|| Path::new("."));
                config.paths.anchors = Some(base.join(anchors));
            }
        }
        Ok(config)
    }

    /// Everything that can be checked before touching the environment:
    /// anchor path present when the architecture needs one, and the file
    /// actually there.
    pub fn validate(&self) -> Result<()> {
        if self.arch.wants_anchors() {
            match &self.paths.anchors {
                None => {
                    return Err(Error::config(
                        "this architecture aligns through anchors; set paths.anchors",
                    ))
                }
                Some(p) if !p.exists() => {
                    return Err(Error::config(format!(
                        "anchor file {} does not exist",
                        p.display()
                    )))
                }
                _ => {}
            }
        } else if self.paths.anchors.is_some() {
            return Err(Error::config(
                "paths.anchors is set but this architecture takes no anchors",
            ));
        }
        Ok(())
    }

    pub fn train_params(&self) -> TrainParams {
        TrainParams {
            epochs: self.train.epochs,
            cycles: self.train.cycles,
            rollout_episodes: self.train.rollout_episodes,
            grad_steps: self.train.grad_steps,
            eval_every: self.train.eval_every,
            eval_episodes: self.train.eval_episodes,
            random_episodes: self.train.random_episodes,
            buffer_capacity: self.train.buffer_capacity,
            k_relabel: self.train.k_relabel,
            her: self.train.her,
            sac: self.sac.to_config(),
            seed: self.seed,
        }
    }

    /// Canonical serialized form; its hash names the experiment directory.
    pub fn canonical(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Built-in configurations for the bundled experiments.
pub fn preset(name: &str) -> Option<&'static str> {
    Some(match name {
        "reach-plain" => {
            r#"
schema_version = 1
env = "reach-r2"

[arch]
family = "plain"
hidden = [64, 64, 64, 64]

[train]
epochs = 150
"#
        }
        "push-plain" => {
            r#"
schema_version = 1
env = "push1-r3"

[arch]
family = "plain"
hidden = [64, 64, 64, 64]

[train]
epochs = 150
"#
        }
        "push-modular" => {
            r#"
schema_version = 1
env = "push1-r3"

[arch]
family = "modular"
latent = 16
task_hidden = [64, 64]
robot_hidden = [64, 64]
alignment = "relative"

[train]
epochs = 150

[paths]
anchors = "anchors.bin"
"#
        }
        "push-ablation" => {
            r#"
schema_version = 1
env = "push1-r3"

[arch]
family = "modular"
latent = 16
task_hidden = [64, 64]
robot_hidden = [64, 64]
alignment = "none"

[train]
epochs = 150
"#
        }
        "push-devin" => {
            r#"
schema_version = 1
env = "push1-r3"

[arch]
family = "devin"
task_hidden = [64, 64]
robot_hidden = [64, 64]

[train]
epochs = 150
"#
        }
        _ => return None,
    })
}
