//! Recombining trained modules into policies for unseen task and robot
//! pairs.
//!
//! A stitch takes the task side of one checkpoint and the robot side of
//! another and wires them together with parameters copied unmodified; no
//! retraining or re-projection happens here. Modular policies swap whole
//! modules across the interface latent. Plain policies, which have no
//! seam, are spliced at their nominal layer split instead, which is the
//! baseline this framework measures itself against.
//!
//! Compatibility is checked before any parameters move: same family,
//! same interface width and alignment, and, for relative interfaces,
//! the exact same anchor set (by content hash). Anything else is
//! refused up front.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::checkpoint::{Checkpoint, CheckpointKind, CheckpointMeta};
use crate::env::make_env;
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::policy::{
    Actor, AnchorSet, ArchDesc, Critic, ModularActor, ModularCritic, PlainActor, PlainCritic,
};
use crate::rl::{evaluate, EvalReport, SacState, TrainOutcome, TrainParams, Trainer};

/// A stitching job: which checkpoint donates the task module, which
/// donates the robot module, and which environment the result targets.
#[derive(Debug, Clone)]
pub struct StitchRequest {
    pub task_source: Checkpoint,
    pub robot_source: Checkpoint,
    pub target_env: String,
}

impl StitchRequest {
    /// Metadata for a checkpoint of the stitched policy: provenance
    /// points at both sources, task donor first.
    pub fn stitched_meta(&self, seed: u64) -> CheckpointMeta {
        CheckpointMeta {
            env_id: self.target_env.clone(),
            seed,
            epoch: 0,
            kind: CheckpointKind::Stitched,
            parents: vec![
                self.task_source.content_hash(),
                self.robot_source.content_hash(),
            ],
        }
    }
}

fn ensure_compatible(
    task: &ArchDesc,
    robot: &ArchDesc,
    task_anchors: Option<&AnchorSet>,
    robot_anchors: Option<&AnchorSet>,
) -> Result<()> {
    match (task, robot) {
        (
            ArchDesc::Modular {
                latent: lt,
                alignment: at,
                ..
            },
            ArchDesc::Modular {
                latent: lr,
                alignment: ar,
                ..
            },
        ) => {
            if at != ar {
                return Err(Error::incompatible(
                    "sources align their interfaces differently; modules cannot be exchanged",
                ));
            }
            if lt != lr {
                return Err(Error::incompatible(format!(
                    "interface widths differ: task source is {lt}, robot source is {lr}"
                )));
            }
            match (task_anchors, robot_anchors) {
                (Some(a), Some(b)) => {
                    if a.content_hash() != b.content_hash() {
                        return Err(Error::incompatible(
                            "sources were trained against different anchor sets",
                        ));
                    }
                }
                (None, None) => {}
                _ => {
                    return Err(Error::incompatible(
                        "one source has anchors and the other does not",
                    ));
                }
            }
            Ok(())
        }
        (ArchDesc::Plain { .. }, ArchDesc::Plain { .. }) => {
            if task != robot {
                return Err(Error::incompatible(
                    "plain policies can only be spliced across identical architectures",
                ));
            }
            Ok(())
        }
        _ => Err(Error::incompatible(
            "cannot stitch across architecture families",
        )),
    }
}

/// Flat-parameter offset of the first layer at or above `split`.
fn split_offset(net: &Mlp, split: usize) -> usize {
    net.layer_shapes()
        .iter()
        .take(split)
        .map(|(i, o, _)| o * (i + 1))
        .sum()
}

/// Combine the task side of one actor with the robot side of another.
/// Parameters transfer bit for bit; the interface (anchors included)
/// travels with the task module.
pub fn stitch_actors(task_donor: &Actor, robot_donor: &Actor) -> Result<Actor> {
    ensure_compatible(
        &ArchDesc::of_actor(task_donor),
        &ArchDesc::of_actor(robot_donor),
        task_donor.anchors(),
        robot_donor.anchors(),
    )?;
    match (task_donor, robot_donor) {
        (Actor::Modular(t), Actor::Modular(r)) => Ok(Actor::Modular(ModularActor::from_parts(
            t.task_module.clone(),
            r.robot_module.clone(),
            t.interface.clone(),
            t.task_dim(),
            r.robot_dim(),
            r.n_action(),
        )?)),
        (Actor::Plain(t), Actor::Plain(r)) => {
            let off = split_offset(&t.net, t.split);
            let mut params = t.net.params_flat();
            params[off..].copy_from_slice(&r.net.params_flat()[off..]);
            let mut net = t.net.clone();
            net.set_params_flat(&params)?;
            Ok(Actor::Plain(PlainActor::from_parts(
                net,
                t.split,
                t.task_dim(),
                t.robot_dim(),
                t.n_action(),
            )?))
        }
        _ => Err(Error::incompatible(
            "cannot stitch across architecture families",
        )),
    }
}

/// Critic counterpart of [`stitch_actors`].
pub fn stitch_critics(task_donor: &Critic, robot_donor: &Critic) -> Result<Critic> {
    ensure_compatible(
        &ArchDesc::of_critic(task_donor),
        &ArchDesc::of_critic(robot_donor),
        task_donor.anchors(),
        robot_donor.anchors(),
    )?;
    match (task_donor, robot_donor) {
        (Critic::Modular(t), Critic::Modular(r)) => Ok(Critic::Modular(
            ModularCritic::from_parts(
                t.task_module.clone(),
                r.robot_module.clone(),
                t.interface.clone(),
                t.task_dim(),
                r.robot_dim(),
                r.n_action(),
            )?,
        )),
        (Critic::Plain(t), Critic::Plain(r)) => {
            let off = split_offset(&t.net, t.split);
            let mut params = t.net.params_flat();
            params[off..].copy_from_slice(&r.net.params_flat()[off..]);
            let mut net = t.net.clone();
            net.set_params_flat(&params)?;
            Ok(Critic::Plain(PlainCritic::from_parts(
                net,
                t.split,
                t.task_dim(),
                t.robot_dim(),
                t.n_action(),
            )?))
        }
        _ => Err(Error::incompatible(
            "cannot stitch across architecture families",
        )),
    }
}

/// Build the stitched actor for a request.
pub fn stitch_actor(req: &StitchRequest) -> Result<Actor> {
    let task = req.task_source.build_actor()?;
    let robot = req.robot_source.build_actor()?;
    stitch_actors(&task, &robot)
}

fn rebuild_critics(ck: &Checkpoint) -> Result<(Critic, Critic)> {
    let t = ck.training.as_ref().ok_or_else(|| {
        Error::usage("checkpoint carries no critics, so it cannot donate to a critic stitch")
    })?;
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let mut c1 = ck.desc.build_critic(ck.anchors.clone(), &mut rng)?;
    let mut c2 = ck.desc.build_critic(ck.anchors.clone(), &mut rng)?;
    c1.set_params_flat(&t.critic1)?;
    c2.set_params_flat(&t.critic2)?;
    Ok((c1, c2))
}

/// Build the stitched twin critics for a request, pairing first with
/// first and second with second.
pub fn stitch_critic(req: &StitchRequest) -> Result<(Critic, Critic)> {
    let (t1, t2) = rebuild_critics(&req.task_source)?;
    let (r1, r2) = rebuild_critics(&req.robot_source)?;
    Ok((stitch_critics(&t1, &r1)?, stitch_critics(&t2, &r2)?))
}

/// Per-seed evaluation rows with their mean and population spread.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTable {
    pub rows: Vec<EvalReport>,
    pub success_mean: f64,
    pub success_std: f64,
    pub touching_mean: f64,
    pub touching_std: f64,
}

impl EvalTable {
    pub fn from_rows(rows: Vec<EvalReport>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::usage("evaluation table needs at least one row"));
        }
        let (s_mean, s_std) = mean_std(rows.iter().map(|r| r.success_rate));
        let (t_mean, t_std) = mean_std(rows.iter().map(|r| r.touching_rate));
        Ok(Self {
            rows,
            success_mean: s_mean,
            success_std: s_std,
            touching_mean: t_mean,
            touching_std: t_std,
        })
    }
}

fn mean_std(vals: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = vals.clone().count() as f64;
    let mean = vals.clone().sum::<f64>() / n;
    let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Stitch the actor and evaluate it on the target environment without
/// any parameter updates, once per seed.
pub fn zero_shot_eval(req: &StitchRequest, n_episodes: usize, seeds: &[u64]) -> Result<EvalTable> {
    if seeds.is_empty() {
        return Err(Error::usage("zero-shot evaluation needs at least one seed"));
    }
    let env = make_env(&req.target_env)?;
    let actor = stitch_actor(req)?;
    let rows = seeds
        .iter()
        .map(|&s| evaluate(&actor, &env, n_episodes, s))
        .collect::<Result<Vec<_>>>()?;
    EvalTable::from_rows(rows)
}

/// Stitch actor and critics, then fine-tune on the target environment.
///
/// The optimizer state is fresh, target networks start as copies of the
/// stitched critics, and the temperature resets to its initial value.
/// Before any gradient step the stitched policy itself fills the buffer
/// for `warm_epochs` of rollouts (no uniform-random warm-up; the point
/// of stitching is that the initial policy is already informed).
/// Metrics are recorded at the trainer's evaluation cadence, one row per
/// epoch under the default settings.
pub fn few_shot_finetune(
    req: &StitchRequest,
    warm_epochs: usize,
    mut params: TrainParams,
) -> Result<TrainOutcome> {
    params.random_episodes = 0;
    let env = make_env(&req.target_env)?;
    let actor = stitch_actor(req)?;
    let (c1, c2) = stitch_critic(req)?;
    let sac = SacState::new(actor, c1, c2, params.sac)?;
    let epochs = params.epochs;
    let mut trainer = Trainer::new(&env, sac, params)?;
    trainer.warm_fill(warm_epochs)?;
    trainer.run(epochs)?;
    Ok(TrainOutcome {
        env_steps: trainer.env_steps(),
        sac: trainer.sac,
        records: trainer.records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::CheckpointMeta;
    use crate::policy::{relative_representation, Alignment, LOG_STD_MAX, LOG_STD_MIN};
    use crate::rl::SacConfig;
    use ndarray::array;

    fn anchors2() -> AnchorSet {
        AnchorSet::new(vec![vec![0.9, 0.0], vec![-0.5, 0.4], vec![0.1, -0.8]]).unwrap()
    }

    fn modular_desc(robot_dim: usize, n_action: usize, robot_hidden: Vec<usize>) -> ArchDesc {
        ArchDesc::Modular {
            task_dim: 2,
            robot_dim,
            n_action,
            latent: 3,
            task_hidden: vec![8],
            robot_hidden,
            alignment: Alignment::Relative,
            dropout: 0.0,
            stop_anchor_grad: false,
        }
    }

    fn sac_for(desc: &ArchDesc, anchors: Option<AnchorSet>, seed: u64) -> SacState {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let actor = desc.build_actor(anchors.clone(), &mut rng).unwrap();
        let c1 = desc.build_critic(anchors.clone(), &mut rng).unwrap();
        let c2 = desc.build_critic(anchors, &mut rng).unwrap();
        SacState::new(actor, c1, c2, SacConfig::default()).unwrap()
    }

    fn ckpt(desc: &ArchDesc, anchors: Option<AnchorSet>, seed: u64, env_id: &str) -> Checkpoint {
        let sac = sac_for(desc, anchors, seed);
        Checkpoint::of_sac(&sac, CheckpointMeta::trained(env_id, seed, 0)).unwrap()
    }

    #[test]
    fn self_stitch_is_the_identity() {
        let desc = modular_desc(6, 3, vec![8]);
        let a = ckpt(&desc, Some(anchors2()), 7, "reach-r3");
        let req = StitchRequest {
            task_source: a.clone(),
            robot_source: a.clone(),
            target_env: "reach-r3".into(),
        };
        let actor = stitch_actor(&req).unwrap();
        assert_eq!(actor.params_flat(), a.actor);
        let (c1, c2) = stitch_critic(&req).unwrap();
        let t = a.training.as_ref().unwrap();
        assert_eq!(c1.params_flat(), t.critic1);
        assert_eq!(c2.params_flat(), t.critic2);
    }

    #[test]
    fn modular_stitch_matches_composing_the_modules_by_hand() {
        let shared = anchors2();
        // different robot sides on purpose: 4-dim 2-action vs 6-dim 3-action
        let task_ck = ckpt(&modular_desc(4, 2, vec![8]), Some(shared.clone()), 1, "a");
        let robot_ck = ckpt(&modular_desc(6, 3, vec![10]), Some(shared.clone()), 2, "b");
        let req = StitchRequest {
            task_source: task_ck.clone(),
            robot_source: robot_ck.clone(),
            target_env: "push1-r3".into(),
        };
        let stitched = stitch_actor(&req).unwrap();
        assert_eq!(stitched.task_dim(), 2);
        assert_eq!(stitched.robot_dim(), 6);
        assert_eq!(stitched.n_action(), 3);

        let s_t = vec![0.31, -0.44];
        let s_r = vec![0.05, -0.2, 0.4, 0.11, -0.33, 0.27];
        let (mean, log_std) = stitched
            .heads(
                array![[s_t[0], s_t[1]]].view(),
                array![[s_r[0], s_r[1], s_r[2], s_r[3], s_r[4], s_r[5]]].view(),
            )
            .unwrap();

        // by hand: task module of the first source, anchors re-embedded
        // through it, cosine alignment, then the robot module of the second
        let task_actor = task_ck.build_actor().unwrap();
        let robot_actor = robot_ck.build_actor().unwrap();
        let (task_net, robot_net) = match (&task_actor, &robot_actor) {
            (Actor::Modular(t), Actor::Modular(r)) => (&t.task_module, &r.robot_module),
            _ => unreachable!(),
        };
        let e = task_net.forward1(&s_t).unwrap();
        let anchor_embeds = task_net.forward(shared.states()).unwrap();
        let latent = relative_representation(&e, anchor_embeds.view()).unwrap();
        let mut z = latent.clone();
        z.extend_from_slice(&s_r);
        let out = robot_net.forward1(&z).unwrap();
        for j in 0..3 {
            assert!((mean[[0, j]] - out[j]).abs() < 1e-12);
            let clamped = out[3 + j].clamp(LOG_STD_MIN, LOG_STD_MAX);
            assert!((log_std[[0, j]] - clamped).abs() < 1e-12);
        }
    }

    #[test]
    fn critic_stitch_pairs_twins_in_order() {
        let shared = anchors2();
        let a = ckpt(&modular_desc(6, 3, vec![8]), Some(shared.clone()), 3, "a");
        let b = ckpt(&modular_desc(6, 3, vec![8]), Some(shared), 4, "b");
        let req = StitchRequest {
            task_source: a.clone(),
            robot_source: b.clone(),
            target_env: "push1-r3".into(),
        };
        let (c1, c2) = stitch_critic(&req).unwrap();
        // each stitched critic: task params from a, robot params from b
        let (a1, _) = rebuild_critics(&a).unwrap();
        let (_, b2) = rebuild_critics(&b).unwrap();
        let (Critic::Modular(s1), Critic::Modular(s2)) = (&c1, &c2) else {
            unreachable!()
        };
        let (Critic::Modular(a1), Critic::Modular(b2)) = (&a1, &b2) else {
            unreachable!()
        };
        assert_eq!(s1.task_module.params_flat(), a1.task_module.params_flat());
        assert_eq!(s2.robot_module.params_flat(), b2.robot_module.params_flat());
        assert_ne!(s1.robot_module.params_flat(), s2.robot_module.params_flat());
    }

    #[test]
    fn anchor_mismatch_is_refused() {
        let other = AnchorSet::new(vec![vec![0.8, 0.1], vec![-0.5, 0.4], vec![0.1, -0.8]]).unwrap();
        let desc = modular_desc(6, 3, vec![8]);
        let a = ckpt(&desc, Some(anchors2()), 5, "a");
        let b = ckpt(&desc, Some(other), 6, "b");
        let req = StitchRequest {
            task_source: a,
            robot_source: b,
            target_env: "push1-r3".into(),
        };
        let err = stitch_actor(&req).unwrap_err();
        assert!(matches!(err, Error::Incompatible(_)), "{err:?}");
    }

    #[test]
    fn family_and_width_mismatches_are_refused() {
        let modular = ckpt(&modular_desc(6, 3, vec![8]), Some(anchors2()), 1, "a");
        let plain = ckpt(&ArchDesc::plain(2, 6, 3, vec![8, 8]), None, 2, "b");
        let req = StitchRequest {
            task_source: modular.clone(),
            robot_source: plain,
            target_env: "push1-r3".into(),
        };
        assert!(matches!(
            stitch_actor(&req).unwrap_err(),
            Error::Incompatible(_)
        ));

        let wide = ArchDesc::Modular {
            task_dim: 2,
            robot_dim: 6,
            n_action: 3,
            latent: 4,
            task_hidden: vec![8],
            robot_hidden: vec![8],
            alignment: Alignment::Relative,
            dropout: 0.0,
            stop_anchor_grad: false,
        };
        let wide_anchors = AnchorSet::new(vec![
            vec![0.9, 0.0],
            vec![-0.5, 0.4],
            vec![0.1, -0.8],
            vec![0.6, 0.6],
        ])
        .unwrap();
        let b = ckpt(&wide, Some(wide_anchors), 3, "b");
        let req = StitchRequest {
            task_source: modular,
            robot_source: b,
            target_env: "push1-r3".into(),
        };
        assert!(matches!(
            stitch_actor(&req).unwrap_err(),
            Error::Incompatible(_)
        ));
    }

    #[test]
    fn plain_splice_swaps_everything_above_the_split() {
        let desc = ArchDesc::plain(2, 6, 3, vec![8, 8, 8]);
        let a = ckpt(&desc, None, 7, "a");
        let b = ckpt(&desc, None, 8, "b");
        let req = StitchRequest {
            task_source: a.clone(),
            robot_source: b.clone(),
            target_env: "reach-r3".into(),
        };
        let stitched = stitch_actor(&req).unwrap();
        let params = stitched.params_flat();
        let split = match desc {
            ArchDesc::Plain { split, .. } => split,
            _ => unreachable!(),
        };
        let task_actor = a.build_actor().unwrap();
        let off = match &task_actor {
            Actor::Plain(p) => split_offset(&p.net, split),
            _ => unreachable!(),
        };
        assert!(off > 0 && off < params.len());
        assert_eq!(params[..off], a.actor[..off]);
        assert_eq!(params[off..], b.actor[off..]);

        // differing shapes cannot be spliced
        let c = ckpt(&ArchDesc::plain(2, 6, 3, vec![8, 8]), None, 9, "c");
        let req = StitchRequest {
            task_source: a,
            robot_source: c,
            target_env: "reach-r3".into(),
        };
        assert!(matches!(
            stitch_actor(&req).unwrap_err(),
            Error::Incompatible(_)
        ));
    }

    #[test]
    fn zero_shot_eval_aggregates_per_seed_rows() {
        let env = make_env("reach-r2").unwrap();
        let desc = ArchDesc::Modular {
            task_dim: env.task_dim(),
            robot_dim: env.robot_dim(),
            n_action: env.robot().n_joints(),
            latent: 3,
            task_hidden: vec![8],
            robot_hidden: vec![8],
            alignment: Alignment::Relative,
            dropout: 0.0,
            stop_anchor_grad: false,
        };
        let a = ckpt(&desc, Some(anchors2()), 11, "reach-r2");
        let req = StitchRequest {
            task_source: a.clone(),
            robot_source: a.clone(),
            target_env: "reach-r2".into(),
        };
        let table = zero_shot_eval(&req, 10, &[0, 1, 2]).unwrap();
        assert_eq!(table.rows.len(), 3);
        let expect_mean =
            table.rows.iter().map(|r| r.success_rate).sum::<f64>() / 3.0;
        assert!((table.success_mean - expect_mean).abs() < 1e-15);
        assert!(table.success_std >= 0.0 && table.touching_std >= 0.0);

        // self-stitch rows match evaluating the source actor directly
        let direct = evaluate(&a.build_actor().unwrap(), &env, 10, 1).unwrap();
        assert_eq!(table.rows[1], direct);

        let again = zero_shot_eval(&req, 10, &[0, 1, 2]).unwrap();
        assert_eq!(table, again);

        assert!(zero_shot_eval(&req, 10, &[]).is_err());
    }

    #[test]
    fn finetune_with_zero_epochs_is_the_stitched_initialization() {
        let env = make_env("reach-r2").unwrap();
        let shared = anchors2();
        let desc = ArchDesc::Modular {
            task_dim: env.task_dim(),
            robot_dim: env.robot_dim(),
            n_action: env.robot().n_joints(),
            latent: 3,
            task_hidden: vec![8],
            robot_hidden: vec![8],
            alignment: Alignment::Relative,
            dropout: 0.0,
            stop_anchor_grad: false,
        };
        let a = ckpt(&desc, Some(shared.clone()), 21, "reach-r2");
        let b = ckpt(&desc, Some(shared), 22, "reach-r2");
        let req = StitchRequest {
            task_source: a,
            robot_source: b,
            target_env: "reach-r2".into(),
        };
        let mut params = TrainParams::default();
        params.epochs = 0;
        params.cycles = 1;
        params.rollout_episodes = 1;
        params.eval_episodes = 2;
        params.sac.batch_size = 16;

        let out = few_shot_finetune(&req, 1, params.clone()).unwrap();
        assert!(out.records.is_empty());
        assert!(out.env_steps > 0, "warm rollouts must touch the env");

        let actor = stitch_actor(&req).unwrap();
        let (c1, _) = stitch_critic(&req).unwrap();
        assert_eq!(out.sac.actor.params_flat(), actor.params_flat());
        assert_eq!(out.sac.critic1.params_flat(), c1.params_flat());
        assert_eq!(
            out.sac.target1.params_flat(),
            out.sac.critic1.params_flat(),
            "targets start as copies of the stitched critics"
        );
        assert_eq!(out.sac.log_alpha, params.sac.init_log_alpha);
    }

    #[test]
    fn finetune_records_one_row_per_epoch_and_moves_parameters() {
        let env = make_env("reach-r2").unwrap();
        let shared = anchors2();
        let desc = ArchDesc::Modular {
            task_dim: env.task_dim(),
            robot_dim: env.robot_dim(),
            n_action: env.robot().n_joints(),
            latent: 3,
            task_hidden: vec![8],
            robot_hidden: vec![8],
            alignment: Alignment::Relative,
            dropout: 0.0,
            stop_anchor_grad: false,
        };
        let a = ckpt(&desc, Some(shared.clone()), 31, "reach-r2");
        let b = ckpt(&desc, Some(shared), 32, "reach-r2");
        let req = StitchRequest {
            task_source: a,
            robot_source: b,
            target_env: "reach-r2".into(),
        };
        let mut params = TrainParams::default();
        params.epochs = 2;
        params.cycles = 2;
        params.rollout_episodes = 1;
        params.grad_steps = 3;
        params.eval_every = 1;
        params.eval_episodes = 2;
        params.sac.batch_size = 16;

        let before = stitch_actor(&req).unwrap().params_flat();
        let out = few_shot_finetune(&req, 1, params).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_ne!(out.sac.actor.params_flat(), before);
    }
}
