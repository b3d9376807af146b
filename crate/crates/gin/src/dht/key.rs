//! 160-bit keyspace shared by node ids and placement keys; XOR metric.

use crate::model::{tuple_id, Tuple7, TupleId, TuplePattern, Uuid, SLOT_CONTEXT, SLOT_EDGE, SLOT_SOURCE, SLOT_TARGET};
use rand::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const KEY_LEN: usize = 20;
pub const KEY_BITS: usize = KEY_LEN * 8;

/// A 160-bit identifier: node id or lookup/placement key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Key(pub [u8; KEY_LEN]);

/// Node identity lives in the same keyspace.
pub type NodeId = Key;

/// XOR distance between two keys, ordered as an unsigned 160-bit integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Distance(pub [u8; KEY_LEN]);

impl Key {
    pub fn zero() -> Self {
        Key([0u8; KEY_LEN])
    }

    pub fn random(rng: &mut impl RngCore) -> Self {
        let mut bytes = [0u8; KEY_LEN];
        rng.fill_bytes(&mut bytes);
        Key(bytes)
    }

    /// Where a slot value lives: 160-bit truncation of SHA-256 over the
    /// UUID's bytes. The same id maps to the same key on every node.
    pub fn for_uuid(u: &Uuid) -> Self {
        let digest = Sha256::digest(u.as_bytes());
        let mut bytes = [0u8; KEY_LEN];
        bytes.copy_from_slice(&digest[..KEY_LEN]);
        Key(bytes)
    }

    /// Where a tuple's own id lives: the 256-bit content hash truncated.
    pub fn for_tuple_id(id: &TupleId) -> Self {
        let mut bytes = [0u8; KEY_LEN];
        bytes.copy_from_slice(&id.as_bytes()[..KEY_LEN]);
        Key(bytes)
    }

    /// Deterministic id from seed bytes, for `--id-seed`.
    pub fn from_seed(seed: &[u8]) -> Self {
        let digest = Sha256::digest(seed);
        let mut bytes = [0u8; KEY_LEN];
        bytes.copy_from_slice(&digest[..KEY_LEN]);
        Key(bytes)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl std::fmt::Display for Key {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// `a XOR b` as an unsigned 160-bit integer.
pub fn xor_distance(a: &Key, b: &Key) -> Distance {
    let mut out = [0u8; KEY_LEN];
    for i in 0..KEY_LEN {
        out[i] = a.0[i] ^ b.0[i];
    }
    Distance(out)
}

impl Distance {
    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|b| *b == 0)
    }

    /// Bucket index i such that the distance lies in [2^i, 2^(i+1));
    /// `None` for distance zero (a node never buckets itself).
    pub fn bucket_index(&self) -> Option<usize> {
        for (byte_idx, byte) in self.0.iter().enumerate() {
            if *byte != 0 {
                let bit = 7 - byte.leading_zeros() as usize;
                return Some((KEY_LEN - 1 - byte_idx) * 8 + bit);
            }
        }
        None
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("all-wildcard pattern has no routing key")]
pub struct UnroutablePattern;

/// Every key a tuple is stored under: one per distinct slot value plus
/// the truncated content id.
pub fn placement_keys(t: &Tuple7) -> Vec<Key> {
    let mut keys = Vec::with_capacity(5);
    for slot in 0..4 {
        let k = Key::for_uuid(&t.slot(slot));
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let id_key = Key::for_tuple_id(&tuple_id(t));
    if !keys.contains(&id_key) {
        keys.push(id_key);
    }
    keys
}

/// The single deterministic key a pattern routes to: the key of the
/// highest-priority fixed slot, priority source > target > context >
/// edge. Entity ids tend to be more selective than edge vocabulary, and
/// the choice must agree across all nodes so that subscriptions and
/// stores co-locate.
pub fn routing_key_for(p: &TuplePattern) -> Result<Key, UnroutablePattern> {
    for slot in [SLOT_SOURCE, SLOT_TARGET, SLOT_CONTEXT, SLOT_EDGE] {
        if let Some(v) = p.slots[slot] {
            return Ok(Key::for_uuid(&v));
        }
    }
    Err(UnroutablePattern)
}
