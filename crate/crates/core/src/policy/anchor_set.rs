//! A set of anchor task states shared by policies that align through
//! relative representations.
//!
//! Anchors are stored as raw task states, not embeddings: each policy
//! re-embeds them with its own task module, so the stored set stays valid
//! across architectures and training stages. A content hash identifies the
//! set; two policies can only be stitched over the relative interface when
//! their hashes match.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::util::atomic_write;

const MAGIC: &[u8; 4] = b"SKAN";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    states: Array2<f64>, // k x state_dim
    hash: String,
}

impl AnchorSet {
    pub fn new(states: Vec<Vec<f64>>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::config("anchor set needs at least one state"));
        }
        let dim = states[0].len();
        if dim == 0 {
            return Err(Error::config("anchor states cannot be zero dimensional"));
        }
        for (i, s) in states.iter().enumerate() {
            if s.len() != dim {
                return Err(Error::shape(format!(
                    "anchor {i} has {} dims, expected {dim}",
                    s.len()
                )));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(format!("anchor {i} is not finite")));
            }
        }
        for i in 0..states.len() {
            for j in (i + 1)..states.len() {
                if states[i] == states[j] {
                    return Err(Error::config(format!("anchors {i} and {j} are identical")));
                }
            }
        }
        let k = states.len();
        let flat: Vec<f64> = states.into_iter().flatten().collect();
        let states = Array2::from_shape_vec((k, dim), flat).unwrap();
        let hash = content_hash(&states);
        Ok(Self { states, hash })
    }

    pub fn k(&self) -> usize {
        self.states.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn states(&self) -> ArrayView2<'_, f64> {
        self.states.view()
    }

    /// Hex digest identifying the exact anchor states.
    pub fn content_hash(&self) -> &str {
        &self.hash
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.k() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.state_dim() as u64).to_le_bytes());
        for v in self.states.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |what: &str| Error::corrupt(format!("anchor file: {what}"));
        if bytes.len() < 4 + 4 + 8 + 8 + 32 {
            return Err(corrupt("truncated"));
        }
        if &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let k = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let dim = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        let body = 24 + k
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| corrupt("size overflow"))?;
        if bytes.len() != body + 32 {
            return Err(corrupt("length does not match header"));
        }
        let digest = Sha256::digest(&bytes[..body]);
        if digest.as_slice() != &bytes[body..] {
            return Err(corrupt("checksum mismatch"));
        }
        let mut states = Vec::with_capacity(k);
        for i in 0..k {
            let mut row = Vec::with_capacity(dim);
            for j in 0..dim {
                let off = 24 + (i * dim + j) * 8;
                row.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
            }
            states.push(row);
        }
        Self::new(states)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

fn content_hash(states: &Array2<f64>) -> String {
    let mut h = Sha256::new();
    h.update((states.nrows() as u64).to_le_bytes());
    h.update((states.ncols() as u64).to_le_bytes());
    for v in states.iter() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> AnchorSet {
        AnchorSet::new(vec![
            vec![0.1, -0.4, 2.0],
            vec![1.5, 0.0, -0.3],
            vec![0.0, 0.0, 0.0],
        ])
        .unwrap()
    }

    #[test]
    fn hash_depends_only_on_content() {
        let a = sample();
        let b = sample();
        assert_eq!(a.content_hash(), b.content_hash());
        let c = AnchorSet::new(vec![vec![0.1, -0.4, 2.0], vec![1.5, 0.0, -0.31]]).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn rejects_duplicates_and_ragged_rows() {
        assert!(AnchorSet::new(vec![vec![1.0, 2.0], vec![1.0, 2.0]]).is_err());
        assert!(AnchorSet::new(vec![vec![1.0, 2.0], vec![1.0]]).is_err());
        assert!(AnchorSet::new(vec![]).is_err());
        assert!(AnchorSet::new(vec![vec![f64::NAN, 0.0]]).is_err());
    }

    #[test]
    fn file_round_trip_preserves_bits_and_hash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("anchors.bin");
        let a = sample();
        a.save(&path).unwrap();
        let b = AnchorSet::load(&path).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn corruption_is_detected() {
        let a = sample();
        let mut bytes = a.to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        let err = AnchorSet::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::Corrupt(_)), "{err:?}");
        assert!(AnchorSet::from_bytes(&bytes[..10]).is_err());
    }
}
