//! Store digests and set reconciliation.
//!
//! A digest is the full sorted tuple-id list plus its count — exact and
//! cheap at this scale. Two stores hold the same tuples iff their digests
//! are equal, and the symmetric difference of two digests is exactly what
//! anti-entropy needs to pull in each direction.

use crate::model::TupleId;
use sha2::{Digest as _, Sha256};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Digest {
    pub count: u64,
    /// Sorted ascending, no duplicates.
    pub ids: Vec<TupleId>,
}

impl Digest {
    pub fn empty() -> Self {
        Digest {
            count: 0,
            ids: Vec::new(),
        }
    }

    /// A compact fingerprint of the id list, for display and quick
    /// equality checks across nodes.
    pub fn root_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.count.to_be_bytes());
        for id in &self.ids {
            h.update(id.as_bytes());
        }
        h.finalize().into()
    }

    pub fn root_hash_hex(&self) -> String {
        hex::encode(self.root_hash())
    }
}

/// Splits the symmetric difference: ids present remotely but not locally,
/// and ids present locally but not remotely.
pub fn diff(local: &Digest, remote: &Digest) -> (Vec<TupleId>, Vec<TupleId>) {
    let mut missing_locally = Vec::new();
    let mut missing_remotely = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < local.ids.len() && j < remote.ids.len() {
        match local.ids[i].cmp(&remote.ids[j]) {
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => {
                missing_remotely.push(local.ids[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                missing_locally.push(remote.ids[j]);
                j += 1;
            }
        }
    }
    missing_remotely.extend_from_slice(&local.ids[i..]);
    missing_locally.extend_from_slice(&remote.ids[j..]);
    (missing_locally, missing_remotely)
}
