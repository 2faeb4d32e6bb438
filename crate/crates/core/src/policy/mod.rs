//! Policy architectures: the modular actor/critic pair with its optional
//! relative-representation interface, and the comparison architectures
//! (plain single net, bottleneck-plus-dropout modular).

pub mod actor;
pub mod anchor_set;
pub mod critic;
pub mod plain;
pub mod relrep;
pub mod sample;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mlp;

pub use actor::{ModularActor, ModularActorPass, ModularGrads};
pub use anchor_set::AnchorSet;
pub use critic::{ModularCritic, ModularCriticPass};
pub use plain::{PlainActor, PlainCritic};
pub use relrep::{cosine_scores, relative_representation};
pub use sample::{
    action_log_prob, clamp_log_std, deterministic_action, sample_action, sample_backward,
    SampledAction, LOG_STD_MAX, LOG_STD_MIN,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Interface latents are cosine scores against shared anchors.
    Relative,
    /// The task-module embedding feeds the robot module directly.
    None,
}

/// How the task module's output is presented to the robot module.
#[derive(Debug, Clone)]
pub struct Interface {
    pub alignment: Alignment,
    pub anchors: Option<AnchorSet>,
    /// Dropout rate on the interface latent, active in training mode only.
    pub dropout: f64,
    /// Freeze anchor embeddings during backprop.
    pub stop_anchor_grad: bool,
}

impl Interface {
    pub fn relative(anchors: AnchorSet) -> Self {
        Self {
            alignment: Alignment::Relative,
            anchors: Some(anchors),
            dropout: 0.0,
            stop_anchor_grad: false,
        }
    }

    pub fn absolute() -> Self {
        Self {
            alignment: Alignment::None,
            anchors: None,
            dropout: 0.0,
            stop_anchor_grad: false,
        }
    }

    pub fn validate(&self, dims: &ModuleDims) -> Result<()> {
        if dims.task_dim == 0 || dims.robot_dim == 0 || dims.n_action == 0 || dims.latent == 0 {
            return Err(Error::config("module dims must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        match self.alignment {
            Alignment::Relative => {
                let set = self
                    .anchors
                    .as_ref()
                    .ok_or_else(|| Error::config("relative interface needs anchors"))?;
                if set.k() != dims.latent {
                    return Err(Error::config(format!(
                        "{} anchors for a {}-wide interface; anchor count must equal \
                         the latent width",
                        set.k(),
                        dims.latent
                    )));
                }
                if set.state_dim() != dims.task_dim {
                    return Err(Error::config(format!(
                        "anchors are {}-dim states, task module expects {}",
                        set.state_dim(),
                        dims.task_dim
                    )));
                }
            }
            Alignment::None => {
                if self.anchors.is_some() {
                    return Err(Error::config("absolute interface carries anchors"));
                }
            }
        }
        Ok(())
    }
}

/// Widths for building a modular actor or critic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleDims {
    pub task_dim: usize,
    pub robot_dim: usize,
    pub n_action: usize,
    /// Task-module output width; equals the anchor count for relative
    /// interfaces and the bottleneck width for narrow ones.
    pub latent: usize,
    pub task_hidden: Vec<usize>,
    pub robot_hidden: Vec<usize>,
}

/// Serializable architecture descriptor; checkpoints embed one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArchDesc {
    Modular {
        task_dim: usize,
        robot_dim: usize,
        n_action: usize,
        latent: usize,
        task_hidden: Vec<usize>,
        robot_hidden: Vec<usize>,
        alignment: Alignment,
        dropout: f64,
        stop_anchor_grad: bool,
    },
    Plain {
        task_dim: usize,
        robot_dim: usize,
        n_action: usize,
        hidden: Vec<usize>,
        split: usize,
    },
}

impl ArchDesc {
    pub fn modular(dims: &ModuleDims, alignment: Alignment, dropout: f64) -> Self {
        ArchDesc::Modular {
            task_dim: dims.task_dim,
            robot_dim: dims.robot_dim,
            n_action: dims.n_action,
            latent: dims.latent,
            task_hidden: dims.task_hidden.clone(),
            robot_hidden: dims.robot_hidden.clone(),
            alignment,
            dropout,
            stop_anchor_grad: false,
        }
    }

    pub fn plain(task_dim: usize, robot_dim: usize, n_action: usize, hidden: Vec<usize>) -> Self {
        let split = plain::default_split(hidden.len());
        ArchDesc::Plain {
            task_dim,
            robot_dim,
            n_action,
            hidden,
            split,
        }
    }

    pub fn task_dim(&self) -> usize {
        match self {
            ArchDesc::Modular { task_dim, .. } | ArchDesc::Plain { task_dim, .. } => *task_dim,
        }
    }

    pub fn robot_dim(&self) -> usize {
        match self {
            ArchDesc::Modular { robot_dim, .. } | ArchDesc::Plain { robot_dim, .. } => *robot_dim,
        }
    }

    pub fn n_action(&self) -> usize {
        match self {
            ArchDesc::Modular { n_action, .. } | ArchDesc::Plain { n_action, .. } => *n_action,
        }
    }

    pub fn wants_anchors(&self) -> bool {
        matches!(
            self,
            ArchDesc::Modular {
                alignment: Alignment::Relative,
                ..
            }
        )
    }

    fn interface(&self, anchors: Option<AnchorSet>) -> Result<Interface> {
        match self {
            ArchDesc::Modular {
                alignment,
                dropout,
                stop_anchor_grad,
                ..
            } => {
                if *alignment == Alignment::Relative && anchors.is_none() {
                    return Err(Error::config(
                        "this architecture aligns through anchors; none were supplied",
                    ));
                }
                if *alignment == Alignment::None && anchors.is_some() {
                    return Err(Error::config(
                        "anchors supplied to an architecture without alignment",
                    ));
                }
                Ok(Interface {
                    alignment: *alignment,
                    anchors,
                    dropout: *dropout,
                    stop_anchor_grad: *stop_anchor_grad,
                })
            }
            ArchDesc::Plain { .. } => {
                if anchors.is_some() {
                    return Err(Error::config("plain architectures take no anchors"));
                }
                Ok(Interface::absolute())
            }
        }
    }

    fn module_dims(&self) -> Option<ModuleDims> {
        match self {
            ArchDesc::Modular {
                task_dim,
                robot_dim,
                n_action,
                latent,
                task_hidden,
                robot_hidden,
                ..
            } => Some(ModuleDims {
                task_dim: *task_dim,
                robot_dim: *robot_dim,
                n_action: *n_action,
                latent: *latent,
                task_hidden: task_hidden.clone(),
                robot_hidden: robot_hidden.clone(),
            }),
            ArchDesc::Plain { .. } => None,
        }
    }

    pub fn build_actor<R: Rng>(&self, anchors: Option<AnchorSet>, rng: &mut R) -> Result<Actor> {
        match self {
            ArchDesc::Modular { .. } => {
                let dims = self.module_dims().unwrap();
                let iface = self.interface(anchors)?;
                Ok(Actor::Modular(ModularActor::new(&dims, iface, rng)?))
            }
            ArchDesc::Plain {
                task_dim,
                robot_dim,
                n_action,
                hidden,
                split,
            } => {
                self.interface(anchors)?;
                let net = Mlp::feedforward(task_dim + robot_dim, hidden, 2 * n_action, rng)?;
                Ok(Actor::Plain(PlainActor::from_parts(
                    net, *split, *task_dim, *robot_dim, *n_action,
                )?))
            }
        }
    }

    pub fn build_critic<R: Rng>(&self, anchors: Option<AnchorSet>, rng: &mut R) -> Result<Critic> {
        match self {
            ArchDesc::Modular { .. } => {
                let dims = self.module_dims().unwrap();
                let iface = self.interface(anchors)?;
                Ok(Critic::Modular(ModularCritic::new(&dims, iface, rng)?))
            }
            ArchDesc::Plain {
                task_dim,
                robot_dim,
                n_action,
                hidden,
                split,
            } => {
                self.interface(anchors)?;
                let net =
                    Mlp::feedforward(task_dim + robot_dim + n_action, hidden, 1, rng)?;
                Ok(Critic::Plain(PlainCritic::from_parts(
                    net, *split, *task_dim, *robot_dim, *n_action,
                )?))
            }
        }
    }

    /// Descriptor of an existing actor, reading widths off the networks.
    pub fn of_actor(actor: &Actor) -> Self {
        match actor {
            Actor::Modular(a) => ArchDesc::Modular {
                task_dim: a.task_dim(),
                robot_dim: a.robot_dim(),
                n_action: a.n_action(),
                latent: a.task_module.out_dim(),
                task_hidden: hidden_of(&a.task_module),
                robot_hidden: hidden_of(&a.robot_module),
                alignment: a.interface.alignment,
                dropout: a.interface.dropout,
                stop_anchor_grad: a.interface.stop_anchor_grad,
            },
            Actor::Plain(a) => ArchDesc::Plain {
                task_dim: a.task_dim(),
                robot_dim: a.robot_dim(),
                n_action: a.n_action(),
                hidden: hidden_of(&a.net),
                split: a.split,
            },
        }
    }

    pub fn of_critic(critic: &Critic) -> Self {
        match critic {
            Critic::Modular(c) => ArchDesc::Modular {
                task_dim: c.task_dim(),
                robot_dim: c.robot_dim(),
                n_action: c.n_action(),
                latent: c.task_module.out_dim(),
                task_hidden: hidden_of(&c.task_module),
                robot_hidden: hidden_of(&c.robot_module),
                alignment: c.interface.alignment,
                dropout: c.interface.dropout,
                stop_anchor_grad: c.interface.stop_anchor_grad,
            },
            Critic::Plain(c) => ArchDesc::Plain {
                task_dim: c.task_dim(),
                robot_dim: c.robot_dim(),
                n_action: c.n_action(),
                hidden: hidden_of(&c.net),
                split: c.split,
            },
        }
    }
}

fn hidden_of(net: &Mlp) -> Vec<usize> {
    let shapes = net.layer_shapes();
    shapes[..shapes.len() - 1].iter().map(|s| s.1).collect()
}

/// Any actor the trainers and evaluators can drive.
#[derive(Debug, Clone)]
pub enum Actor {
    Modular(ModularActor),
    Plain(PlainActor),
}

#[derive(Debug)]
pub enum ActorPass {
    Modular(ModularActorPass),
    Plain(plain::PlainActorPass),
}

impl ActorPass {
    pub fn heads(&self) -> (&Array2<f64>, &Array2<f64>) {
        match self {
            ActorPass::Modular(p) => (&p.mean, &p.log_std),
            ActorPass::Plain(p) => (&p.mean, &p.log_std),
        }
    }
}

impl Actor {
    pub fn task_dim(&self) -> usize {
        match self {
            Actor::Modular(a) => a.task_dim(),
            Actor::Plain(a) => a.task_dim(),
        }
    }

    pub fn robot_dim(&self) -> usize {
        match self {
            Actor::Modular(a) => a.robot_dim(),
            Actor::Plain(a) => a.robot_dim(),
        }
    }

    pub fn n_action(&self) -> usize {
        match self {
            Actor::Modular(a) => a.n_action(),
            Actor::Plain(a) => a.n_action(),
        }
    }

    pub fn alignment(&self) -> Alignment {
        match self {
            Actor::Modular(a) => a.interface.alignment,
            Actor::Plain(_) => Alignment::None,
        }
    }

    pub fn anchors(&self) -> Option<&AnchorSet> {
        match self {
            Actor::Modular(a) => a.interface.anchors.as_ref(),
            Actor::Plain(_) => None,
        }
    }

    /// Precomputed anchor embeddings for serving many steps from frozen
    /// parameters; `None` when the actor has no relative interface.
    pub fn anchor_cache(&self) -> Result<Option<Array2<f64>>> {
        match self {
            Actor::Modular(a) => a.embed_anchors(),
            Actor::Plain(_) => Ok(None),
        }
    }

    pub fn forward_train<R: Rng>(
        &self,
        s_t: ArrayView2<f64>,
        s_r: ArrayView2<f64>,
        rng: &mut R,
    ) -> Result<ActorPass> {
        match self {
            Actor::Modular(a) => Ok(ActorPass::Modular(a.forward_train(s_t, s_r, rng)?)),
            Actor::Plain(a) => Ok(ActorPass::Plain(a.forward_train(s_t, s_r)?)),
        }
    }

    /// Flat parameter gradients, aligned with [`Actor::params_flat`].
    pub fn backward(
        &self,
        pass: ActorPass,
        d_mean: ArrayView2<f64>,
        d_log_std: ArrayView2<f64>,
    ) -> Result<Vec<f64>> {
        match (self, pass) {
            (Actor::Modular(a), ActorPass::Modular(p)) => {
                Ok(a.backward(p, d_mean, d_log_std)?.flat())
            }
            (Actor::Plain(a), ActorPass::Plain(p)) => {
                Ok(a.backward(p, d_mean, d_log_std)?.flat())
            }
            _ => Err(Error::usage("pass came from a different actor family")),
        }
    }

    pub fn heads(
        &self,
        s_t: ArrayView2<f64>,
        s_r: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        match self {
            Actor::Modular(a) => a.heads(s_t, s_r),
            Actor::Plain(a) => a.heads(s_t, s_r),
        }
    }

    pub fn heads1(
        &self,
        cached_anchors: Option<&Array2<f64>>,
        s_t: &[f64],
        s_r: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            Actor::Modular(a) => a.heads1(cached_anchors, s_t, s_r),
            Actor::Plain(a) => a.heads1(s_t, s_r),
        }
    }

    /// Greedy action: tanh of the mean head.
    pub fn act_mean1(
        &self,
        cached_anchors: Option<&Array2<f64>>,
        s_t: &[f64],
        s_r: &[f64],
    ) -> Result<Vec<f64>> {
        let (mean, _) = self.heads1(cached_anchors, s_t, s_r)?;
        Ok(deterministic_action(&mean))
    }

    pub fn act_sample1<R: Rng>(
        &self,
        cached_anchors: Option<&Array2<f64>>,
        s_t: &[f64],
        s_r: &[f64],
        rng: &mut R,
    ) -> Result<SampledAction> {
        let (mean, log_std) = self.heads1(cached_anchors, s_t, s_r)?;
        Ok(sample_action(&mean, &log_std, rng))
    }

    /// Interface latents for a batch of task states; the quantity compared
    /// across policies in latent-space analysis. Plain nets have no
    /// interface.
    pub fn interface_latent(&self, s_t: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            Actor::Modular(a) => a.interface_latent(s_t, None),
            Actor::Plain(_) => Err(Error::usage(
                "plain policies have no module interface to inspect",
            )),
        }
    }

    /// Last hidden activation feeding the action heads, for probes.
    pub fn probe_latent1(&self, s_t: &[f64], s_r: &[f64]) -> Result<Vec<f64>> {
        match self {
            Actor::Modular(a) => a.probe_latent1(s_t, s_r),
            Actor::Plain(a) => a.probe_latent1(s_t, s_r),
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Actor::Modular(a) => a.n_params(),
            Actor::Plain(a) => a.n_params(),
        }
    }

    pub fn params_flat(&self) -> Vec<f64> {
        match self {
            Actor::Modular(a) => a.params_flat(),
            Actor::Plain(a) => a.params_flat(),
        }
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        match self {
            Actor::Modular(a) => a.set_params_flat(params),
            Actor::Plain(a) => a.set_params_flat(params),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Critic {
    Modular(ModularCritic),
    Plain(PlainCritic),
}

#[derive(Debug)]
pub enum CriticPass {
    Modular(ModularCriticPass),
    Plain(plain::PlainCriticPass),
}

impl CriticPass {
    pub fn q(&self) -> &Array1<f64> {
        match self {
            CriticPass::Modular(p) => &p.q,
            CriticPass::Plain(p) => &p.q,
        }
    }
}

impl Critic {
    pub fn n_action(&self) -> usize {
        match self {
            Critic::Modular(c) => c.n_action(),
            Critic::Plain(c) => c.n_action(),
        }
    }

    pub fn alignment(&self) -> Alignment {
        match self {
            Critic::Modular(c) => c.interface.alignment,
            Critic::Plain(_) => Alignment::None,
        }
    }

    pub fn anchors(&self) -> Option<&AnchorSet> {
        match self {
            Critic::Modular(c) => c.interface.anchors.as_ref(),
            Critic::Plain(_) => None,
        }
    }

    pub fn forward_train<R: Rng>(
        &self,
        s_t: ArrayView2<f64>,
        s_r: ArrayView2<f64>,
        a: ArrayView2<f64>,
        rng: &mut R,
    ) -> Result<CriticPass> {
        match self {
            Critic::Modular(c) => Ok(CriticPass::Modular(c.forward_train(s_t, s_r, a, rng)?)),
            Critic::Plain(c) => Ok(CriticPass::Plain(c.forward_train(s_t, s_r, a)?)),
        }
    }

    /// Flat parameter gradients plus the gradient on the action inputs.
    pub fn backward(
        &self,
        pass: CriticPass,
        d_q: &Array1<f64>,
    ) -> Result<(Vec<f64>, Array2<f64>)> {
        match (self, pass) {
            (Critic::Modular(c), CriticPass::Modular(p)) => {
                let (g, da) = c.backward(p, d_q)?;
                Ok((g.flat(), da))
            }
            (Critic::Plain(c), CriticPass::Plain(p)) => {
                let (g, da) = c.backward(p, d_q)?;
                Ok((g.flat(), da))
            }
            _ => Err(Error::usage("pass came from a different critic family")),
        }
    }

    pub fn q_values(
        &self,
        s_t: ArrayView2<f64>,
        s_r: ArrayView2<f64>,
        a: ArrayView2<f64>,
    ) -> Result<Array1<f64>> {
        match self {
            Critic::Modular(c) => c.q_values(s_t, s_r, a),
            Critic::Plain(c) => c.q_values(s_t, s_r, a),
        }
    }

    pub fn polyak_from(&mut self, online: &Critic, tau: f64) -> Result<()> {
        match (self, online) {
            (Critic::Modular(t), Critic::Modular(o)) => t.polyak_from(o, tau),
            (Critic::Plain(t), Critic::Plain(o)) => t.polyak_from(o, tau),
            _ => Err(Error::incompatible(
                "cannot track a critic of a different family",
            )),
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Critic::Modular(c) => c.n_params(),
            Critic::Plain(c) => c.n_params(),
        }
    }

    pub fn params_flat(&self) -> Vec<f64> {
        match self {
            Critic::Modular(c) => c.params_flat(),
            Critic::Plain(c) => c.params_flat(),
        }
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        match self {
            Critic::Modular(c) => c.set_params_flat(params),
            Critic::Plain(c) => c.set_params_flat(params),
        }
    }
}

/// Heads for one state; the single-state serving path.
pub fn actor_forward(actor: &Actor, s_t: &[f64], s_r: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    actor.heads1(None, s_t, s_r)
}

/// Scalar value for one state-action pair.
pub fn critic_forward(critic: &Critic, s_t: &[f64], s_r: &[f64], a: &[f64]) -> Result<f64> {
    match critic {
        Critic::Modular(c) => c.q_value1(s_t, s_r, a),
        Critic::Plain(c) => {
            let to_row = |v: &[f64]| Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap();
            Ok(c.q_values(to_row(s_t).view(), to_row(s_r).view(), to_row(a).view())?[0])
        }
    }
}

/// Default bottleneck width and dropout for the narrow-interface baseline.
pub const BOTTLENECK_WIDTH: usize = 4;
pub const BOTTLENECK_DROPOUT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum BaselineKind {
    Plain,
    Devin { bottleneck: usize, dropout: f64 },
}

impl BaselineKind {
    pub fn devin_default() -> Self {
        BaselineKind::Devin {
            bottleneck: BOTTLENECK_WIDTH,
            dropout: BOTTLENECK_DROPOUT,
        }
    }
}

/// A built comparison architecture: actor, one critic, and the descriptor
/// both were built from. Trainers build additional critics from the
/// descriptor as needed.
#[derive(Debug, Clone)]
pub struct BaselineArch {
    pub desc: ArchDesc,
    pub actor: Actor,
    pub critic: Critic,
}

/// Build a comparison architecture against the modular dims it stands in
/// for. Plain gets one undivided net of the combined depth; the bottleneck
/// variant narrows the interface and adds dropout.
pub fn build_baseline<R: Rng>(
    kind: BaselineKind,
    dims: &ModuleDims,
    rng: &mut R,
) -> Result<BaselineArch> {
    let desc = match &kind {
        BaselineKind::Plain => {
            let mut hidden = dims.task_hidden.clone();
            hidden.extend_from_slice(&dims.robot_hidden);
            if hidden.is_empty() {
                return Err(Error::config("plain baseline needs hidden layers"));
            }
            ArchDesc::plain(dims.task_dim, dims.robot_dim, dims.n_action, hidden)
        }
        BaselineKind::Devin { bottleneck, dropout } => {
            if *bottleneck > dims.latent {
                return Err(Error::config(format!(
                    "bottleneck {} wider than the reference interface {}",
                    bottleneck, dims.latent
                )));
            }
            let narrow = ModuleDims {
                latent: *bottleneck,
                ..dims.clone()
            };
            ArchDesc::modular(&narrow, Alignment::None, *dropout)
        }
    };
    let actor = desc.build_actor(None, rng)?;
    let critic = desc.build_critic(None, rng)?;
    Ok(BaselineArch { desc, actor, critic })
}
