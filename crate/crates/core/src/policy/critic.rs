//! Modular critic: same task module and interface layout as the actor, but
//! the robot module also consumes the action and emits a scalar value.

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Mlp, Tape};
use crate::policy::actor::{concat_cols3, ModularGrads};
use crate::policy::relrep::{relrep_backward, relrep_forward, RelRepTape};
use crate::policy::{Alignment, Interface, ModuleDims};

#[derive(Debug, Clone)]
pub struct ModularCritic {
    pub task_module: Mlp,
    pub robot_module: Mlp,
    pub interface: Interface,
    task_dim: usize,
    robot_dim: usize,
    n_action: usize,
}

#[derive(Debug)]
pub struct ModularCriticPass {
    pub q: Array1<f64>,
    task_tape: Tape,
    anchor_tape: Option<Tape>,
    rel_tape: Option<RelRepTape>,
    dropout_mask: Option<Array2<f64>>,
    robot_tape: Tape,
}

impl ModularCritic {
    pub fn new<R: Rng>(dims: &ModuleDims, interface: Interface, rng: &mut R) -> Result<Self> {
        interface.validate(dims)?;
        let task_module = Mlp::feedforward(dims.task_dim, &dims.task_hidden, dims.latent, rng)?;
        let robot_in = dims.latent + dims.robot_dim + dims.n_action;
        let robot_module = Mlp::feedforward(robot_in, &dims.robot_hidden, 1, rng)?;
        Ok(Self {
            task_module,
            robot_module,
            interface,
            task_dim: dims.task_dim,
            robot_dim: dims.robot_dim,
            n_action: dims.n_action,
        })
    }

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
        if robot_module.in_dim() != latent + robot_dim + n_action {
            return Err(Error::shape("robot module input width mismatch"));
        }
        if robot_module.out_dim() != 1 {
            return Err(Error::shape("critic robot module must emit a scalar"));
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

    fn check_batch(
        &self,
        s_t: ArrayView2<f64>,
        s_r: ArrayView2<f64>,
        a: ArrayView2<f64>,
    ) -> Result<()> {
        if s_t.ncols() != self.task_dim
            || s_r.ncols() != self.robot_dim
            || a.ncols() != self.n_action
        {
            return Err(Error::shape("critic input widths do not match"));
        }
        if s_t.nrows() != s_r.nrows() || s_t.nrows() != a.nrows() {
            return Err(Error::shape("critic batch lengths differ"));
        }
        Ok(())
    }

    fn latent_train<R: Rng>(
        &self,
        s_t: ArrayView2<f64>,
        rng: &mut R,
    ) -> Result<(Array2<f64>, Tape, Option<Tape>, Option<RelRepTape>, Option<Array2<f64>>)> {
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
            let keep = 1.0 - self.interface.dropout;
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
        Ok((latent, task_tape, anchor_tape, rel_tape, dropout_mask))
    }

    pub fn forward_train<R: Rng>(
        &self,
        s_t: ArrayView2<f64>,
        s_r: ArrayView2<f64>,
        a: ArrayView2<f64>,
        rng: &mut R,
    ) -> Result<ModularCriticPass> {
        self.check_batch(s_t, s_r, a)?;
        let (latent, task_tape, anchor_tape, rel_tape, dropout_mask) =
            self.latent_train(s_t, rng)?;
        let x = concat_cols3(latent.view(), s_r, a);
        let (out, robot_tape) = self.robot_module.forward_tape(x.view())?;
        let q = out.column(0).to_owned();
        Ok(ModularCriticPass {
            q,
            task_tape,
            anchor_tape,
            rel_tape,
            dropout_mask,
            robot_tape,
        })
    }

    /// Backward through the critic. Returns parameter gradients and the
    /// gradient with respect to the action inputs (needed when the critic
    /// scores actions proposed by a differentiable actor).
    pub fn backward(
        &self,
        pass: ModularCriticPass,
        d_q: &Array1<f64>,
    ) -> Result<(ModularGrads, Array2<f64>)> {
        if d_q.len() != pass.q.len() {
            return Err(Error::shape("value gradient length mismatch"));
        }
        let d_out = d_q.view().insert_axis(ndarray::Axis(1)).to_owned();
        let (robot_grads, d_x) = self.robot_module.backward(pass.robot_tape, d_out.view())?;
        let w = self.latent_interface_width();
        let mut d_latent = d_x.slice(s![.., ..w]).to_owned();
        let d_action = d_x.slice(s![.., w + self.robot_dim..]).to_owned();
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
        Ok((
            ModularGrads {
                task: task_grads,
                robot: robot_grads,
            },
            d_action,
        ))
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

    /// Evaluation-mode values: no dropout, no tapes. Used for TD targets.
    pub fn q_values(
        &self,
        s_t: ArrayView2<f64>,
        s_r: ArrayView2<f64>,
        a: ArrayView2<f64>,
    ) -> Result<Array1<f64>> {
        self.check_batch(s_t, s_r, a)?;
        let embed = self.task_module.forward(s_t)?;
        let latent = match self.interface.alignment {
            Alignment::Relative => {
                let set = self
                    .interface
                    .anchors
                    .as_ref()
                    .ok_or_else(|| Error::config("relative interface lost its anchors"))?;
                let a_embed = self.task_module.forward(set.states())?;
                relrep_forward(embed.view(), a_embed.view())?.scores
            }
            Alignment::None => embed,
        };
        let x = concat_cols3(latent.view(), s_r, a);
        let out = self.robot_module.forward(x.view())?;
        Ok(out.column(0).to_owned())
    }

    pub fn q_value1(&self, s_t: &[f64], s_r: &[f64], a: &[f64]) -> Result<f64> {
        let to_row = |v: &[f64]| Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap();
        Ok(self.q_values(to_row(s_t).view(), to_row(s_r).view(), to_row(a).view())?[0])
    }

    /// Soft parameter tracking from an online critic with matching shapes.
    pub fn polyak_from(&mut self, online: &Self, tau: f64) -> Result<()> {
        self.task_module.polyak_from(&online.task_module, tau)?;
        self.robot_module.polyak_from(&online.robot_module, tau)
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
