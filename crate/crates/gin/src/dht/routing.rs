//! k-bucket routing table with least-recently-seen eviction.

use super::key::{xor_distance, Key, NodeId, KEY_BITS};

/// A peer's network identity as we know it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Contact {
    pub id: NodeId,
    pub addr: Addr,
}

/// Opaque transport address. For the simulator this is an index
/// rendered as text; for TCP it is `host:port`.
pub type Addr = String;

impl Contact {
    pub fn new(id: NodeId, addr: impl Into<Addr>) -> Self {
        Contact { id, addr: addr.into() }
    }
}

/// What became of an observed contact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Observed {
    /// Went straight into a bucket with spare room (or was brand new).
    Inserted,
    /// Already known; moved to most-recently-seen, address refreshed.
    Refreshed,
    /// Bucket is full. The caller should ping `oldest` and only evict
    /// it if the ping fails; until then the candidate is dropped.
    Full { oldest: Contact },
    /// Our own id: never stored.
    SelfId,
}

#[derive(Debug, Clone, Default)]
struct KBucket {
    /// Least-recently-seen first, most-recently-seen last.
    entries: Vec<Contact>,
}

/// One bucket per distance range [2^i, 2^(i+1)). Buckets are allocated
/// lazily since desk-scale tables touch only a handful.
#[derive(Debug, Clone)]
pub struct RoutingTable {
    pub self_id: NodeId,
    k: usize,
    buckets: Vec<KBucket>,
}

impl RoutingTable {
    pub fn new(self_id: NodeId, k: usize) -> Self {
        assert!(k > 0, "bucket capacity must be positive");
        RoutingTable {
            self_id,
            k,
            buckets: vec![KBucket::default(); KEY_BITS],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    fn bucket_of(&self, id: &NodeId) -> Option<usize> {
        xor_distance(&self.self_id, id).bucket_index()
    }

    /// Record that we heard from (or about) a contact.
    pub fn observe(&mut self, contact: Contact) -> Observed {
        let Some(idx) = self.bucket_of(&contact.id) else {
            return Observed::SelfId;
        };
        let bucket = &mut self.buckets[idx];
        if let Some(pos) = bucket.entries.iter().position(|c| c.id == contact.id) {
            bucket.entries.remove(pos);
            bucket.entries.push(contact);
            return Observed::Refreshed;
        }
        if bucket.entries.len() < self.k {
            bucket.entries.push(contact);
            return Observed::Inserted;
        }
        Observed::Full { oldest: bucket.entries[0].clone() }
    }

    /// After a failed ping of `stale`, replace it with `candidate`.
    /// No-op if `stale` already fell out or was refreshed meanwhile.
    pub fn evict_and_insert(&mut self, stale: &NodeId, candidate: Contact) -> bool {
        let Some(idx) = self.bucket_of(stale) else { return false };
        let candidate_idx = self.bucket_of(&candidate.id);
        let bucket = &mut self.buckets[idx];
        if let Some(pos) = bucket.entries.iter().position(|c| c.id == *stale) {
            bucket.entries.remove(pos);
            if candidate_idx == Some(idx) && bucket.entries.len() < self.k {
                bucket.entries.push(candidate);
            }
            return true;
        }
        false
    }

    /// Drop a contact entirely (e.g. it failed a ping and there is no
    /// replacement candidate).
    pub fn remove(&mut self, id: &NodeId) -> bool {
        let Some(idx) = self.bucket_of(id) else { return false };
        let bucket = &mut self.buckets[idx];
        if let Some(pos) = bucket.entries.iter().position(|c| c.id == *id) {
            bucket.entries.remove(pos);
            return true;
        }
        false
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.bucket_of(id)
            .map(|i| self.buckets[i].entries.iter().any(|c| c.id == *id))
            .unwrap_or(false)
    }

    pub fn get(&self, id: &NodeId) -> Option<&Contact> {
        let idx = self.bucket_of(id)?;
        self.buckets[idx].entries.iter().find(|c| c.id == *id)
    }

    pub fn len(&self) -> usize {
        self.buckets.iter().map(|b| b.entries.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All known contacts, unordered beyond bucket layout.
    pub fn contacts(&self) -> Vec<Contact> {
        self.buckets
            .iter()
            .flat_map(|b| b.entries.iter().cloned())
            .collect()
    }

    /// Up to `count` known contacts closest to `target`, ascending by
    /// XOR distance. Never includes ourselves.
    pub fn closest(&self, target: &Key, count: usize) -> Vec<Contact> {
        let mut all = self.contacts();
        all.sort_by_key(|c| xor_distance(&c.id, target));
        all.truncate(count);
        all
    }

    /// Per-bucket occupancy, for diagnostics.
    pub fn bucket_sizes(&self) -> Vec<(usize, usize)> {
        self.buckets
            .iter()
            .enumerate()
            .filter(|(_, b)| !b.entries.is_empty())
            .map(|(i, b)| (i, b.entries.len()))
            .collect()
    }
}
