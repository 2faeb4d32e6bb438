//! Self-describing policy checkpoints.
//!
//! A checkpoint carries everything needed to rebuild its policy: the
//! architecture descriptor, the anchor set (embedded verbatim when the
//! policy aligns through one), flat parameter vectors per network, and
//! training metadata. Files are integrity-checked end to end; the same
//! digest doubles as the checkpoint's identity, so provenance chains
//! (which checkpoints a stitched policy came from) refer to exact bytes.
//!
//! Layout: magic, format version, a JSON header (descriptor, metadata,
//! section table), the anchor blob, the parameter sections as 64-bit
//! little-endian floats in declared order, and a SHA-256 trailer over
//! everything before it. No timestamps anywhere: the same policy saved
//! twice produces identical bytes.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::policy::{Actor, AnchorSet, ArchDesc};
use crate::rl::{SacConfig, SacState};
use crate::util::atomic_write;

const MAGIC: &[u8; 4] = b"SKCP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    /// Parameters came out of a training run.
    Trained,
    /// Parameters were recombined from other checkpoints.
    Stitched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub env_id: String,
    pub seed: u64,
    pub epoch: usize,
    pub kind: CheckpointKind,
    /// Content hashes of the source checkpoints, task donor first.
    /// Empty for trained policies.
    #[serde(default)]
    pub parents: Vec<String>,
}

impl CheckpointMeta {
    pub fn trained(env_id: &str, seed: u64, epoch: usize) -> Self {
        Self {
            env_id: env_id.to_string(),
            seed,
            epoch,
            kind: CheckpointKind::Trained,
            parents: Vec::new(),
        }
    }
}

/// Critic-side state needed to resume or fine-tune. Optimizer moments are
/// not persisted; loading always starts fresh Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub critic1: Vec<f64>,
    pub critic2: Vec<f64>,
    pub target1: Vec<f64>,
    pub target2: Vec<f64>,
    pub log_alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub desc: ArchDesc,
    pub meta: CheckpointMeta,
    pub anchors: Option<AnchorSet>,
    /// Actor parameters, flat, in the actor's declared order.
    pub actor: Vec<f64>,
    pub training: Option<TrainingState>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    desc: ArchDesc,
    meta: CheckpointMeta,
    anchor_hash: Option<String>,
    anchors_len: u64,
    sections: Vec<Section>,
    log_alpha: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Section {
    name: String,
    len: u64,
}

impl Checkpoint {
    /// Snapshot an actor alone; enough to act, not to resume training.
    pub fn of_actor(actor: &Actor, meta: CheckpointMeta) -> Self {
        Self {
            desc: ArchDesc::of_actor(actor),
            meta,
            anchors: actor.anchors().cloned(),
            actor: actor.params_flat(),
            training: None,
        }
    }

    /// Snapshot a full training state: actor, both critics, both targets,
    /// and the entropy temperature.
    pub fn of_sac(sac: &SacState, meta: CheckpointMeta) -> Result<Self> {
        let desc = ArchDesc::of_actor(&sac.actor);
        for critic in [&sac.critic1, &sac.critic2, &sac.target1, &sac.target2] {
            if ArchDesc::of_critic(critic) != desc {
                return Err(Error::shape(
                    "critic architecture does not match the actor's descriptor",
                ));
            }
        }
        let anchors = sac.actor.anchors().cloned();
        let actor_hash = anchors.as_ref().map(|a| a.content_hash().to_string());
        for critic in [&sac.critic1, &sac.critic2] {
            let h = critic.anchors().map(|a| a.content_hash().to_string());
            if h != actor_hash {
                return Err(Error::incompatible(
                    "actor and critics use different anchor sets",
                ));
            }
        }
        Ok(Self {
            desc,
            meta,
            anchors,
            actor: sac.actor.params_flat(),
            training: Some(TrainingState {
                critic1: sac.critic1.params_flat(),
                critic2: sac.critic2.params_flat(),
                target1: sac.target1.params_flat(),
                target2: sac.target2.params_flat(),
                log_alpha: sac.log_alpha,
            }),
        })
    }

    /// Rebuild the actor with these exact parameters.
    pub fn build_actor(&self) -> Result<Actor> {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut actor = self.desc.build_actor(self.anchors.clone(), &mut rng)?;
        actor.set_params_flat(&self.actor)?;
        Ok(actor)
    }

    /// Rebuild the full training state. Hyperparameters come from `cfg`
    /// (optimizers start fresh); parameters and the temperature come from
    /// the checkpoint.
    pub fn build_sac(&self, cfg: SacConfig) -> Result<SacState> {
        let t = self.training.as_ref().ok_or_else(|| {
            Error::usage("checkpoint holds an actor only; it cannot seed a training state")
        })?;
        let actor = self.build_actor()?;
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut critic1 = self.desc.build_critic(self.anchors.clone(), &mut rng)?;
        let mut critic2 = self.desc.build_critic(self.anchors.clone(), &mut rng)?;
        critic1.set_params_flat(&t.critic1)?;
        critic2.set_params_flat(&t.critic2)?;
        let mut sac = SacState::new(actor, critic1, critic2, cfg)?;
        sac.target1.set_params_flat(&t.target1)?;
        sac.target2.set_params_flat(&t.target2)?;
        sac.log_alpha = t.log_alpha;
        Ok(sac)
    }

    /// Hex digest of the serialized checkpoint; identical content gives
    /// an identical hash.
    pub fn content_hash(&self) -> String {
        let bytes = self.to_bytes();
        hex::encode(&bytes[bytes.len() - 32..])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let anchor_blob = self
            .anchors
            .as_ref()
            .map(|a| a.to_bytes())
            .unwrap_or_default();
        let mut sections = vec![Section {
            name: "actor".into(),
            len: self.actor.len() as u64,
        }];
        if let Some(t) = &self.training {
            for (name, p) in [
                ("critic1", &t.critic1),
                ("critic2", &t.critic2),
                ("target1", &t.target1),
                ("target2", &t.target2),
            ] {
                sections.push(Section {
                    name: name.into(),
                    len: p.len() as u64,
                });
            }
        }
        let header = Header {
            desc: self.desc.clone(),
            meta: self.meta.clone(),
            anchor_hash: self
                .anchors
                .as_ref()
                .map(|a| a.content_hash().to_string()),
            anchors_len: anchor_blob.len() as u64,
            sections,
            log_alpha: self.training.as_ref().map(|t| t.log_alpha),
        };
        let header_json = serde_json::to_vec(&header).expect("header serializes");

        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header_json);
        buf.extend_from_slice(&anchor_blob);
        push_f64s(&mut buf, &self.actor);
        if let Some(t) = &self.training {
            push_f64s(&mut buf, &t.critic1);
            push_f64s(&mut buf, &t.critic2);
            push_f64s(&mut buf, &t.target1);
            push_f64s(&mut buf, &t.target2);
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |what: &str| Error::corrupt(format!("checkpoint: {what}"));
        if bytes.len() < 4 + 4 + 8 + 32 {
            return Err(corrupt("truncated"));
        }
        if &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(corrupt(&format!("unsupported format version {version}")));
        }
        let body_end = bytes.len() - 32;
        let digest = Sha256::digest(&bytes[..body_end]);
        if digest.as_slice() != &bytes[body_end..] {
            return Err(corrupt("checksum mismatch"));
        }

        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let mut off = 16usize;
        let header_end = off
            .checked_add(header_len)
            .filter(|&e| e <= body_end)
            .ok_or_else(|| corrupt("header overruns file"))?;
        let header: Header = serde_json::from_slice(&bytes[off..header_end])
            .map_err(|e| corrupt(&format!("bad header: {e}")))?;
        off = header_end;

        let names: Vec<&str> = header.sections.iter().map(|s| s.name.as_str()).collect();
        let with_training = match names.as_slice() {
            ["actor"] => false,
            ["actor", "critic1", "critic2", "target1", "target2"] => true,
            _ => return Err(corrupt("unexpected section table")),
        };
        if with_training != header.log_alpha.is_some() {
            return Err(corrupt("temperature does not match the section table"));
        }

        let anchors = if header.anchors_len > 0 {
            let end = off
                .checked_add(header.anchors_len as usize)
                .filter(|&e| e <= body_end)
                .ok_or_else(|| corrupt("anchor blob overruns file"))?;
            let set = AnchorSet::from_bytes(&bytes[off..end])?;
            off = end;
            Some(set)
        } else {
            None
        };
        let stored_hash = anchors.as_ref().map(|a| a.content_hash().to_string());
        if stored_hash != header.anchor_hash {
            return Err(corrupt("anchor hash does not match the embedded set"));
        }

        let mut params = Vec::with_capacity(header.sections.len());
        for s in &header.sections {
            let n = s.len as usize;
            let end = off
                .checked_add(n.checked_mul(8).ok_or_else(|| corrupt("size overflow"))?)
                .filter(|&e| e <= body_end)
                .ok_or_else(|| corrupt("parameter section overruns file"))?;
            params.push(read_f64s(&bytes[off..end]));
            off = end;
        }
        if off != body_end {
            return Err(corrupt("trailing bytes after the last section"));
        }

        let mut params = params.into_iter();
        let actor = params.next().unwrap();
        let training = if with_training {
            Some(TrainingState {
                critic1: params.next().unwrap(),
                critic2: params.next().unwrap(),
                target1: params.next().unwrap(),
                target2: params.next().unwrap(),
                log_alpha: header.log_alpha.unwrap(),
            })
        } else {
            None
        };
        if header.desc.wants_anchors() != anchors.is_some() {
            return Err(corrupt("anchor presence contradicts the descriptor"));
        }
        Ok(Self {
            desc: header.desc,
            meta: header.meta,
            anchors,
            actor,
            training,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

fn push_f64s(buf: &mut Vec<u8>, vals: &[f64]) {
    buf.reserve(vals.len() * 8);
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Alignment;
    use crate::rl::SacConfig;
    use ndarray::array;

    fn anchors() -> AnchorSet {
        AnchorSet::new(vec![
            vec![0.9, 0.0],
            vec![-0.5, 0.4],
            vec![0.1, -0.8],
        ])
        .unwrap()
    }

    fn modular_desc() -> ArchDesc {
        ArchDesc::Modular {
            task_dim: 2,
            robot_dim: 6,
            n_action: 3,
            latent: 3,
            task_hidden: vec![8],
            robot_hidden: vec![8],
            alignment: Alignment::Relative,
            dropout: 0.0,
            stop_anchor_grad: false,
        }
    }

    fn sample_sac(desc: &ArchDesc, anchors: Option<AnchorSet>, seed: u64) -> SacState {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let actor = desc.build_actor(anchors.clone(), &mut rng).unwrap();
        let c1 = desc.build_critic(anchors.clone(), &mut rng).unwrap();
        let c2 = desc.build_critic(anchors, &mut rng).unwrap();
        SacState::new(actor, c1, c2, SacConfig::default()).unwrap()
    }

    #[test]
    fn sac_round_trip_is_bit_exact() {
        let desc = modular_desc();
        let mut sac = sample_sac(&desc, Some(anchors()), 7);
        sac.log_alpha = -0.321;
        let meta = CheckpointMeta::trained("push1-r3", 7, 42);
        let ck = Checkpoint::of_sac(&sac, meta.clone()).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(ck, back);
        assert_eq!(ck.content_hash(), back.content_hash());

        let rebuilt = back.build_sac(SacConfig::default()).unwrap();
        assert_eq!(rebuilt.actor.params_flat(), sac.actor.params_flat());
        assert_eq!(rebuilt.critic1.params_flat(), sac.critic1.params_flat());
        assert_eq!(rebuilt.target2.params_flat(), sac.target2.params_flat());
        assert_eq!(rebuilt.log_alpha, sac.log_alpha);

        let s_t = array![[0.3, -0.2]];
        let s_r = array![[0.1, 0.2, 0.3, -0.1, -0.2, -0.3]];
        let (m0, l0) = sac.actor.heads(s_t.view(), s_r.view()).unwrap();
        let (m1, l1) = rebuilt.actor.heads(s_t.view(), s_r.view()).unwrap();
        assert_eq!(m0, m1);
        assert_eq!(l0, l1);
    }

    #[test]
    fn saved_bytes_are_deterministic() {
        let desc = modular_desc();
        let sac = sample_sac(&desc, Some(anchors()), 3);
        let meta = CheckpointMeta::trained("push1-r3", 3, 10);
        let a = Checkpoint::of_sac(&sac, meta.clone()).unwrap().to_bytes();
        let b = Checkpoint::of_sac(&sac, meta).unwrap().to_bytes();
        assert_eq!(a, b);
    }

    #[test]
    fn actor_only_checkpoint_cannot_seed_training() {
        let desc = ArchDesc::plain(2, 6, 3, vec![8, 8]);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let actor = desc.build_actor(None, &mut rng).unwrap();
        let ck = Checkpoint::of_actor(&actor, CheckpointMeta::trained("reach-r3", 1, 0));
        assert!(ck.training.is_none());

        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        let rebuilt = back.build_actor().unwrap();
        assert_eq!(rebuilt.params_flat(), actor.params_flat());

        let err = back.build_sac(SacConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Usage(_)), "{err:?}");
    }

    #[test]
    fn stitched_metadata_round_trips() {
        let desc = modular_desc();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let actor = desc.build_actor(Some(anchors()), &mut rng).unwrap();
        let meta = CheckpointMeta {
            env_id: "push1-r3-lock1".into(),
            seed: 5,
            epoch: 0,
            kind: CheckpointKind::Stitched,
            parents: vec!["a".repeat(64), "b".repeat(64)],
        };
        let ck = Checkpoint::of_actor(&actor, meta.clone());
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.meta, meta);
        assert_eq!(back.meta.kind, CheckpointKind::Stitched);
    }

    #[test]
    fn corruption_is_detected() {
        let desc = modular_desc();
        let sac = sample_sac(&desc, Some(anchors()), 9);
        let ck = Checkpoint::of_sac(&sac, CheckpointMeta::trained("push1-r3", 9, 1)).unwrap();
        let bytes = ck.to_bytes();

        // every region: header, anchors, params, trailer
        for frac in [0.05, 0.3, 0.6, 0.95, 0.999] {
            let mut bad = bytes.clone();
            let i = ((bytes.len() as f64) * frac) as usize;
            bad[i] ^= 0x01;
            let err = Checkpoint::from_bytes(&bad).unwrap_err();
            assert!(matches!(err, Error::Corrupt(_)), "flip at {i}: {err:?}");
        }
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 5]).is_err());
        assert!(Checkpoint::from_bytes(b"SKCPxxxx").is_err());

        let mut wrong_version = bytes.clone();
        wrong_version[4..8].copy_from_slice(&99u32.to_le_bytes());
        assert!(Checkpoint::from_bytes(&wrong_version).is_err());
    }

    #[test]
    fn content_hash_tracks_parameters() {
        let desc = modular_desc();
        let sac = sample_sac(&desc, Some(anchors()), 11);
        let meta = CheckpointMeta::trained("push1-r3", 11, 0);
        let a = Checkpoint::of_sac(&sac, meta.clone()).unwrap();
        let mut b = Checkpoint::of_sac(&sac, meta).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        b.actor[0] += 1e-12;
        assert_ne!(a.content_hash(), b.content_hash());
    }
}
