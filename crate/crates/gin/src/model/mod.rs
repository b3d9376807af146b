//! The 7-tuple data model: identifiers, canonical bytes, content ids,
//! wildcard patterns and the pluggable signature contract.
//!
//! A tuple is one immutable hypergraph statement: two vertices, the
//! connecting edge, a context vertex grouping statements into hyperedges,
//! a timestamp, and an optional signer with a detached signature. All
//! vertex and edge labels are opaque UUIDs; their interpretation is an
//! end-to-end concern of the applications publishing them.

mod serial;
mod sig;
mod text;

pub use serial::{
    canonical_serialize, parse_tuple, parse_tuple_prefix, read_tuple, TupleCodecError,
    UNSIGNED_LEN,
};
pub use sig::{
    hmac_sha256, sign_tuple, verify_tuple, KeyLookup, KeyPair, KeyRegistry, KeyedSha256,
    PublicKey, SecretKey, SignError, SignatureScheme, VerifyStatus,
};
pub use text::{
    format_pattern, format_tuple, parse_pattern, parse_tuple_line, parse_tuples, TextError,
};

use rand::RngCore;
use sha2::{Digest as _, Sha256};
pub use uuid::Uuid;

/// Number of addressable slots in a tuple/pattern: source, edge, target, context.
pub const SLOT_COUNT: usize = 4;

/// Slot indices in canonical order.
pub const SLOT_SOURCE: usize = 0;
pub const SLOT_EDGE: usize = 1;
pub const SLOT_TARGET: usize = 2;
pub const SLOT_CONTEXT: usize = 3;

/// One immutable signed hypergraph statement; the sole unit of
/// publication and storage. Fields are never updated after creation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Tuple7 {
    /// First vertex.
    pub source: Uuid,
    /// Connecting edge identifier (itself a vertex; labels about it are
    /// published as further tuples).
    pub edge: Uuid,
    /// Second vertex.
    pub target: Uuid,
    /// Hyperedge/context vertex grouping related statements.
    pub context: Uuid,
    /// Microseconds since the Unix epoch, UTC.
    pub timestamp: i64,
    /// Publishing entity, when the statement is signed.
    pub signer: Option<Uuid>,
    /// Detached signature over the canonical bytes of the first six fields.
    pub signature: Option<Vec<u8>>,
}

impl Tuple7 {
    /// An unsigned statement.
    pub fn new(source: Uuid, edge: Uuid, target: Uuid, context: Uuid, timestamp: i64) -> Self {
        Tuple7 {
            source,
            edge,
            target,
            context,
            timestamp,
            signer: None,
            signature: None,
        }
    }

    /// Tags the statement with a signer, ready for [`sign_tuple`].
    pub fn with_signer(mut self, signer: Uuid) -> Self {
        self.signer = Some(signer);
        self
    }

    /// Slot value by canonical index (0 source, 1 edge, 2 target, 3 context).
    pub fn slot(&self, i: usize) -> Uuid {
        match i {
            SLOT_SOURCE => self.source,
            SLOT_EDGE => self.edge,
            SLOT_TARGET => self.target,
            SLOT_CONTEXT => self.context,
            _ => panic!("slot index out of range: {i}"),
        }
    }

    /// A stored tuple carries either both signer and signature or neither.
    pub fn is_well_formed(&self) -> bool {
        self.signer.is_some() == self.signature.is_some()
    }

    /// Content id of this tuple; see [`tuple_id`].
    pub fn id(&self) -> TupleId {
        tuple_id(self)
    }
}

/// 256-bit content hash identifying a tuple. Two tuples are the same
/// statement iff their ids are equal; the signature is excluded so that
/// re-signing never forks the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TupleId(pub [u8; 32]);

impl TupleId {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<TupleId> {
        let bytes = hex::decode(s).ok()?;
        let arr: [u8; 32] = bytes.try_into().ok()?;
        Some(TupleId(arr))
    }
}

impl std::fmt::Display for TupleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Content id: SHA-256 over the canonical bytes of the first six fields.
/// Stable across runs and platforms.
pub fn tuple_id(t: &Tuple7) -> TupleId {
    let bytes = canonical_serialize(t, false);
    let digest = Sha256::digest(&bytes);
    TupleId(digest.into())
}

/// 4-slot template with wildcards, in order [source, edge, target, context].
///
/// The mask is derived from the slots (bit i set iff slot i is fixed), so
/// the two can never disagree. Timestamp and signer are never constrained
/// by a pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TuplePattern {
    pub slots: [Option<Uuid>; SLOT_COUNT],
}

impl TuplePattern {
    pub fn new(
        source: Option<Uuid>,
        edge: Option<Uuid>,
        target: Option<Uuid>,
        context: Option<Uuid>,
    ) -> Self {
        TuplePattern {
            slots: [source, edge, target, context],
        }
    }

    /// Matches every tuple.
    pub fn wildcard() -> Self {
        TuplePattern {
            slots: [None; SLOT_COUNT],
        }
    }

    /// Bit-vector of fixed slots: bit i set iff slot i holds a concrete id.
    pub fn mask(&self) -> u8 {
        let mut m = 0u8;
        for (i, s) in self.slots.iter().enumerate() {
            if s.is_some() {
                m |= 1 << i;
            }
        }
        m
    }

    /// Number of fixed slots.
    pub fn fixed_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_all_wildcard(&self) -> bool {
        self.mask() == 0
    }

    pub fn matches(&self, t: &Tuple7) -> bool {
        pattern_matches(self, t)
    }
}

impl std::fmt::Display for TuplePattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&format_pattern(self))
    }
}

/// True iff every fixed slot of `p` equals the corresponding field of `t`.
/// Wildcard slots match anything.
pub fn pattern_matches(p: &TuplePattern, t: &Tuple7) -> bool {
    p.slots
        .iter()
        .enumerate()
        .all(|(i, s)| match s {
            Some(v) => *v == t.slot(i),
            None => true,
        })
}

/// A v4 UUID drawn from the given RNG; deterministic for seeded RNGs.
pub fn random_uuid(rng: &mut impl RngCore) -> Uuid {
    let mut bytes = [0u8; 16];
    rng.fill_bytes(&mut bytes);
    uuid::Builder::from_random_bytes(bytes).into_uuid()
}

/// A UUID derived from a label by hashing; the same label always yields
/// the same id. Used for well-known vocabulary vertices.
pub fn uuid_from_label(label: &str) -> Uuid {
    let digest = Sha256::digest(label.as_bytes());
    let mut bytes = [0u8; 16];
    bytes.copy_from_slice(&digest[..16]);
    uuid::Builder::from_random_bytes(bytes).into_uuid()
}
