//! Modular actor: a task module embeds the task state, the interface
//! (optionally a relative representation against shared anchors) hands the
//! latent to a robot module, and the robot module emits Gaussian heads.
//!
//! Anchors are kept as raw task states and re-embedded by the current task
//! module on every pass, so the interface tracks training. Gradients flow
//! through the anchor embeddings too unless `stop_anchor_grad` is set.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpGrads, Tape};
use crate::policy::relrep::{relrep_backward, relrep_forward, RelRepTape};
use crate::policy::sample::{LOG_STD_MAX, LOG_STD_MIN};
use crate::policy::{Alignment, Interface, ModuleDims};

#[derive(Debug, Clone)]
pub struct ModularActor {
    pub task_module: Mlp,
    pub robot_module: Mlp,
    pub interface: Interface,
    task_dim: usize,
    robot_dim: usize,
    n_action: usize,
}

/// Everything the backward pass needs from one training forward.
#[derive(Debug)]
pub struct ModularActorPass {
    pub mean: Array2<f64>,
    pub log_std: Array2<f64>,
    clamp_mask: Array2<f64>,
    task_tape: Tape,
    anchor_tape: Option<Tape>,
    rel_tape: Option<RelRepTape>,
    dropout_mask: Option<Array2<f64>>,
    robot_tape: Tape,
}

#[derive(Debug, Clone)]
pub struct ModularGrads {
    pub task: MlpGrads,
    pub robot: MlpGrads,
}

impl ModularGrads {
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.task.flat();
        v.extend(self.robot.flat());
        v
    }
}

impl ModularActor {
    pub fn new<R: Rng>(dims: &ModuleDims, interface: Interface, rng: &mut R) -> Result<Self> {
        interface.validate(dims)?;
        let task_module = Mlp::feedforward(dims.task_dim, &dims.task_hidden, dims.latent, rng)?;
        let robot_in = dims.latent + dims.robot_dim;
        let robot_module =
            Mlp::feedforward(robot_in, &dims.robot_hidden, 2 * dims.n_action, rng)?;
        Ok(Self {
            task_module,
            robot_module,
            interface,
            task_dim: dims.task_dim,
            robot_dim: dims.robot_dim,
            n_action: dims.n_action,
        })
    }

    /// Rebuild from existing modules, revalidating the wiring. Used by
    /// checkpoint loading and stitching.
    pub fn from_parts(
        task_module: Mlp,
        robot_module: Mlp,
        interface: Interface,
        task_dim: usize,
        robot_dim: usize,
        n_action: usize,
    ) -> Result<Self> {
        let latent = task_module.out_dim();
        if task_module.in_dim() != task_dim {
            return Err(Error::shape("task module input width mismatch"));
        }
        if robot_module.in_dim() != latent + robot_dim {
            return Err(Error::shape("robot module input width mismatch"));
        }
        if robot_module.out_dim() != 2 * n_action {
            return Err(Error::shape("robot module must emit mean and log_std"));
        }
        let dims = ModuleDims {
            task_dim,
            robot_dim,
            n_action,
            latent,
            task_hidden: vec![],
            robot_hidden: vec![],
        };
        interface.validate(&dims)?;
        Ok(Self {
            task_module,
            robot_module,
            interface,
            task_dim,
            robot_dim,
            n_action,
        })
    }

    pub fn task_dim(&self) -> usize {
        self.task_dim
    }

    pub fn robot_dim(&self) -> usize {
        self.robot_dim
    }

    pub fn n_action(&self) -> usize {
        self.n_action
    }

    pub fn latent_width(&self) -> usize {
        self.task_module.out_dim()
    }

    /// Embed the anchor states with the current task module. `None` when the
    /// interface is absolute.
    pub fn embed_anchors(&self) -> Result<Option<Array2<f64>>> {
        match (&self.interface.alignment, &self.interface.anchors) {
            (Alignment::Relative, Some(set)) => Ok(Some(self.task_module.forward(set.states())?)),
            (Alignment::Relative, None) => Err(Error::config("relative interface lost its anchors")),
            (Alignment::None, _) => Ok(None),
        }
    }

    fn check_batch(&self, s_t: ArrayView2<f64>, s_r: ArrayView2<f64>) -> Result<()> {
        if s_t.ncols() != self.task_dim {
            return Err(Error::shape(format!(
                "task state is {}-dim, actor expects {}",
                s_t.ncols(),
                self.task_dim
            )));
        }
        if s_r.ncols() != self.robot_dim {
            return Err(Error::shape(format!(
                "robot state is {}-dim, actor expects {}",
                s_r.ncols(),
                self.robot_dim
            )));
        }
        if s_t.nrows() != s_r.nrows() {
            return Err(Error::shape("task and robot batches differ in length"));
        }
        Ok(())
    }

    /// Training-mode forward: keeps tapes, applies dropout when configured.
    pub fn forward_train<R: Rng>(
        &self,
        s_t: ArrayView2<f64>,
        s_r: ArrayView2<f64>,
        rng: &mut R,
    ) -> Result<ModularActorPass> {
        self.check_batch(s_t, s_r)?;
        let (embed, task_tape) = self.task_module.forward_tape(s_t)?;

        let (mut latent, anchor_tape, rel_tape) = match self.interface.alignment {
            Alignment::Relative => {
                let set = self
                    .interface
                    .anchors
                    .as_ref()
                    .ok_or_else(|| Error::config("relative interface lost its anchors"))?;
                let (a_embed, a_tape) = self.task_module.forward_tape(set.states())?;
                let rel = relrep_forward(embed.view(), a_embed.view())?;
                let scores = rel.scores.clone();
                let a_tape = if self.interface.stop_anchor_grad {
                    None
                } else {
                    Some(a_tape)
                };
                (scores, a_tape, Some(rel))
            }
            Alignment::None => (embed, None, None),
        };

        let dropout_mask = if self.interface.dropout > 0.0 {
            let p = self.interface.dropout;
            let keep = 1.0 - p;
            let mask = Array2::from_shape_simple_fn(latent.raw_dim(), || {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            latent *= &mask;
            Some(mask)
        } else {
            None
        };

        let x = concat_cols2(latent.view(), s_r);
        let (out, robot_tape) = self.robot_module.forward_tape(x.view())?;
        let (mean, log_std, clamp_mask) = split_heads(&out, self.n_action);
        Ok(ModularActorPass {
            mean,
            log_std,
            clamp_mask,
            task_tape,
            anchor_tape,
            rel_tape,
            dropout_mask,
            robot_tape,
        })
    }

    /// Gradients of a scalar loss with respect to all parameters, given the
    /// loss gradients on the clamped heads. Consumes the pass.
    pub fn backward(
        &self,
        pass: ModularActorPass,
        d_mean: ArrayView2<f64>,
        d_log_std: ArrayView2<f64>,
    ) -> Result<ModularGrads> {
        let d_out = join_head_grads(d_mean, d_log_std, &pass.clamp_mask)?;
        let (robot_grads, d_x) = self.robot_module.backward(pass.robot_tape, d_out.view())?;
        let w = self.latent_interface_width();
        let mut d_latent = d_x.slice(s![.., ..w]).to_owned();
        if let Some(mask) = &pass.dropout_mask {
            d_latent *= mask;
        }
        let task_grads = match self.interface.alignment {
            Alignment::Relative => {
                let rel = pass.rel_tape.as_ref().expect("relative pass keeps its tape");
                let (d_embed, d_anchor) = relrep_backward(rel, d_latent.view())?;
                let (mut g, _) = self.task_module.backward(pass.task_tape, d_embed.view())?;
                if let Some(a_tape) = pass.anchor_tape {
                    let (ga, _) = self.task_module.backward(a_tape, d_anchor.view())?;
                    g.add(&ga);
                }
                g
            }
            Alignment::None => {
                let (g, _) = self.task_module.backward(pass.task_tape, d_latent.view())?;
                g
            }
        };
        Ok(ModularGrads {
            task: task_grads,
            robot: robot_grads,
        })
    }

    fn latent_interface_width(&self) -> usize {
        match self.interface.alignment {
            Alignment::Relative => self
                .interface
                .anchors
                .as_ref()
                .map(|a| a.k())
                .unwrap_or(0),
            Alignment::None => self.task_module.out_dim(),
        }
    }

    /// Evaluation-mode heads for a batch: no dropout, no tapes.
    pub fn heads(
        &self,
        s_t: ArrayView2<f64>,
        s_r: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_batch(s_t, s_r)?;
        let latent = self.interface_latent(s_t, None)?;
        let x = concat_cols2(latent.view(), s_r);
        let out = self.robot_module.forward(x.view())?;
        let (mean, log_std, _) = split_heads(&out, self.n_action);
        Ok((mean, log_std))
    }

    /// Evaluation heads for one state, reusing precomputed anchor embeddings
    /// when serving many steps from frozen parameters.
    pub fn heads1(
        &self,
        cached_anchors: Option<&Array2<f64>>,
        s_t: &[f64],
        s_r: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if s_t.len() != self.task_dim || s_r.len() != self.robot_dim {
            return Err(Error::shape("state dims do not match the actor"));
        }
        let embed = self.task_module.forward1(s_t)?;
        let latent = match self.interface.alignment {
            Alignment::Relative => match cached_anchors {
                Some(a) => crate::policy::relrep::relative_representation(&embed, a.view())?,
                None => {
                    let a = self
                        .embed_anchors()?
                        .expect("relative interface embeds anchors");
                    crate::policy::relrep::relative_representation(&embed, a.view())?
                }
            },
            Alignment::None => embed,
        };
        let mut x = latent;
        x.extend_from_slice(s_r);
        let out = self.robot_module.forward1(&x)?;
        let mean = out[..self.n_action].to_vec();
        let log_std: Vec<f64> = out[self.n_action..]
            .iter()
            .map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect();
        Ok((mean, log_std))
    }

    /// Batched interface latents (post-alignment for relative interfaces).
    pub fn interface_latent(
        &self,
        s_t: ArrayView2<f64>,
        cached_anchors: Option<&Array2<f64>>,
    ) -> Result<Array2<f64>> {
        let embed = self.task_module.forward(s_t)?;
        match self.interface.alignment {
            Alignment::Relative => {
                let owned;
                let anchors = match cached_anchors {
                    Some(a) => a,
                    None => {
                        owned = self
                            .embed_anchors()?
                            .expect("relative interface embeds anchors");
                        &owned
                    }
                };
                Ok(relrep_forward(embed.view(), anchors.view())?.scores)
            }
            Alignment::None => Ok(embed),
        }
    }

    /// Last hidden activation of the robot module for one state, the layer
    /// read by regression probes.
    pub fn probe_latent1(&self, s_t: &[f64], s_r: &[f64]) -> Result<Vec<f64>> {
        let embed = self.task_module.forward1(s_t)?;
        let latent = match self.interface.alignment {
            Alignment::Relative => {
                let a = self
                    .embed_anchors()?
                    .expect("relative interface embeds anchors");
                crate::policy::relrep::relative_representation(&embed, a.view())?
            }
            Alignment::None => embed,
        };
        let mut x = latent;
        x.extend_from_slice(s_r);
        let (_, hidden) = self.robot_module.forward1_hidden(&x)?;
        Ok(hidden)
    }

    pub fn n_params(&self) -> usize {
        self.task_module.n_params() + self.robot_module.n_params()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut v = self.task_module.params_flat();
        v.extend(self.robot_module.params_flat());
        v
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        let nt = self.task_module.n_params();
        if params.len() != nt + self.robot_module.n_params() {
            return Err(Error::shape("parameter vector length mismatch"));
        }
        self.task_module.set_params_flat(&params[..nt])?;
        self.robot_module.set_params_flat(&params[nt..])
    }
}

/// Column-wise concatenation of two equally tall matrices. Written out per
/// arity because views with distinct borrow lifetimes cannot share a slice.
pub(crate) fn concat_cols2(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), a.ncols() + b.ncols()));
    out.slice_mut(s![.., ..a.ncols()]).assign(&a);
    out.slice_mut(s![.., a.ncols()..]).assign(&b);
    out
}

pub(crate) fn concat_cols3(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    c: ArrayView2<f64>,
) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), a.ncols() + b.ncols() + c.ncols()));
    out.slice_mut(s![.., ..a.ncols()]).assign(&a);
    out.slice_mut(s![.., a.ncols()..a.ncols() + b.ncols()]).assign(&b);
    out.slice_mut(s![.., a.ncols() + b.ncols()..]).assign(&c);
    out
}

/// Split raw head output into mean, clamped log_std and the clamp mask
/// (1 where the raw value was strictly inside the clamp interval).
pub(crate) fn split_heads(
    out: &Array2<f64>,
    n_action: usize,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let mean = out.slice(s![.., ..n_action]).to_owned();
    let raw = out.slice(s![.., n_action..]);
    let log_std = raw.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    let mask = raw.mapv(|v| if v > LOG_STD_MIN && v < LOG_STD_MAX { 1.0 } else { 0.0 });
    (mean, log_std, mask)
}

/// Head gradients back into the raw output layout, zeroing clamped entries.
pub(crate) fn join_head_grads(
    d_mean: ArrayView2<f64>,
    d_log_std: ArrayView2<f64>,
    clamp_mask: &Array2<f64>,
) -> Result<Array2<f64>> {
    if d_mean.shape() != d_log_std.shape() {
        return Err(Error::shape("head gradient shapes differ"));
    }
    let masked = &d_log_std.to_owned() * clamp_mask;
    Ok(concat_cols2(d_mean, masked.view()))
}
