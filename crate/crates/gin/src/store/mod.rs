//! The per-node persistent tuple store.
//!
//! Add-only: tuples are appended to an ordered log, never removed or
//! modified, and duplicate inserts (by content id) are silently absorbed
//! so that re-propagation during anti-entropy stays harmless. Four
//! inverted indexes — one per slot position — back template scans, and an
//! alpha-subscription registry turns every matching insert into a
//! notification for the subscriber. This is the template-matching stage
//! of the query pipeline; joins happen at the end host.

mod digest;
mod log;

pub use digest::{diff, Digest};
pub use log::{open_log, replay_log, LogWriter};

use crate::model::{tuple_id, Tuple7, TupleId, TuplePattern, Uuid, SLOT_COUNT};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::collections::{BTreeSet, HashMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("malformed tuple: {0}")]
    MalformedTuple(String),
    #[error("log i/o: {0}")]
    LogIo(String),
}

/// A template subscription registered at this store. The endpoint type is
/// opaque to the store; the surrounding node decides how to deliver.
#[derive(Debug, Clone)]
pub struct AlphaSubscription<E> {
    pub sub_id: Uuid,
    pub pattern: TuplePattern,
    pub endpoint: E,
    pub created_at: i64,
}

/// What an insert did. `notify` lists, in registration order, every
/// subscription whose pattern matches the inserted tuple — exactly once
/// each. Empty when the tuple was already present.
#[derive(Debug)]
pub struct InsertOutcome<E> {
    pub newly_inserted: bool,
    pub notify: Vec<(Uuid, E)>,
}

/// Append-only tuple store with field indexes and alpha subscriptions.
///
/// One writer at a time; `&mut` methods serialize inserts, and
/// registration plus initial scan happens atomically inside one call, so
/// no tuple can be both missed by the backfill and unnotified.
pub struct TupleStore<E> {
    log: Vec<Tuple7>,
    ids: BTreeSet<TupleId>,
    field_index: [HashMap<Uuid, Vec<usize>>; SLOT_COUNT],
    subs: Vec<AlphaSubscription<E>>,
    writer: Option<LogWriter>,
    sub_id_rng: ChaCha20Rng,
}

impl<E: Clone> TupleStore<E> {
    /// An empty in-memory store. The seed drives subscription-id
    /// generation only.
    pub fn new(seed: u64) -> Self {
        TupleStore {
            log: Vec::new(),
            ids: BTreeSet::new(),
            field_index: Default::default(),
            subs: Vec::new(),
            writer: None,
            sub_id_rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    /// Opens a store backed by an append-only log file, replaying any
    /// existing records to rebuild the indexes. Subscriptions are
    /// ephemeral and never persisted.
    pub fn open(path: &std::path::Path, seed: u64) -> Result<Self, StoreError> {
        let mut store = Self::new(seed);
        let (tuples, writer) = open_log(path).map_err(|e| StoreError::LogIo(e.to_string()))?;
        for t in tuples {
            store.insert_mem(&t)?;
        }
        store.writer = Some(writer);
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log.is_empty()
    }

    pub fn contains(&self, id: &TupleId) -> bool {
        self.ids.contains(id)
    }

    /// The full log in insertion order.
    pub fn log(&self) -> &[Tuple7] {
        &self.log
    }

    pub fn get(&self, id: &TupleId) -> Option<&Tuple7> {
        // Log scan is fine at this scale; ids are only looked up in tests
        // and pull handling, which go through `get_many`.
        self.log.iter().find(|t| t.id() == *id)
    }

    /// Resolves ids to tuples, skipping unknown ids.
    pub fn get_many(&self, ids: &[TupleId]) -> Vec<Tuple7> {
        let wanted: BTreeSet<&TupleId> = ids.iter().collect();
        self.log
            .iter()
            .filter(|t| wanted.contains(&t.id()))
            .cloned()
            .collect()
    }

    /// Inserts a tuple. Returns `newly_inserted: false` (and no
    /// notifications) when the content id is already present; otherwise
    /// appends to the log, indexes all four slot values, persists when a
    /// log file is attached, and reports every matching subscription.
    pub fn insert(&mut self, t: &Tuple7) -> Result<InsertOutcome<E>, StoreError> {
        if !self.insert_mem(t)? {
            return Ok(InsertOutcome {
                newly_inserted: false,
                notify: Vec::new(),
            });
        }
        if let Some(w) = &mut self.writer {
            w.append(t).map_err(|e| StoreError::LogIo(e.to_string()))?;
        }
        let notify = self
            .subs
            .iter()
            .filter(|s| s.pattern.matches(t))
            .map(|s| (s.sub_id, s.endpoint.clone()))
            .collect();
        Ok(InsertOutcome {
            newly_inserted: true,
            notify,
        })
    }

    fn insert_mem(&mut self, t: &Tuple7) -> Result<bool, StoreError> {
        if !t.is_well_formed() {
            return Err(StoreError::MalformedTuple(
                "signer and signature must be present together".into(),
            ));
        }
        let id = tuple_id(t);
        if !self.ids.insert(id) {
            return Ok(false);
        }
        let offset = self.log.len();
        for slot in 0..SLOT_COUNT {
            self.field_index[slot]
                .entry(t.slot(slot))
                .or_default()
                .push(offset);
        }
        self.log.push(t.clone());
        Ok(true)
    }

    /// All stored tuples matching `p`, in log order. Scans the posting
    /// list of the most selective fixed slot (ties broken in slot order
    /// source, target, context, edge); an all-wildcard pattern returns
    /// the whole log.
    pub fn scan(&self, p: &TuplePattern) -> Vec<Tuple7> {
        let mut best: Option<(usize, usize)> = None; // (slot, posting len)
        for slot in [0usize, 2, 3, 1] {
            if let Some(v) = p.slots[slot] {
                let len = self.field_index[slot].get(&v).map_or(0, Vec::len);
                if best.map_or(true, |(_, l)| len < l) {
                    best = Some((slot, len));
                }
            }
        }
        match best {
            None => self.log.clone(),
            Some((slot, _)) => {
                let value = p.slots[slot].unwrap();
                match self.field_index[slot].get(&value) {
                    None => Vec::new(),
                    Some(offsets) => offsets
                        .iter()
                        .map(|&o| &self.log[o])
                        .filter(|t| p.matches(t))
                        .cloned()
                        .collect(),
                }
            }
        }
    }

    /// Registers a template subscription and atomically returns the
    /// current matches as the initial pull. Future matching inserts
    /// report this subscription until it is unregistered.
    pub fn register_alpha(
        &mut self,
        pattern: TuplePattern,
        endpoint: E,
        created_at: i64,
    ) -> (Uuid, Vec<Tuple7>) {
        let sub_id = crate::model::random_uuid(&mut self.sub_id_rng);
        let initial = self.scan(&pattern);
        self.subs.push(AlphaSubscription {
            sub_id,
            pattern,
            endpoint,
            created_at,
        });
        (sub_id, initial)
    }

    /// Removes a subscription; true iff it existed. No notifications for
    /// it are reported after this returns.
    pub fn unregister_alpha(&mut self, sub_id: Uuid) -> bool {
        let before = self.subs.len();
        self.subs.retain(|s| s.sub_id != sub_id);
        self.subs.len() != before
    }

    pub fn subscription_count(&self) -> usize {
        self.subs.len()
    }

    pub fn subscriptions(&self) -> &[AlphaSubscription<E>] {
        &self.subs
    }

    /// Compact summary of the tuple-id set; equal digests iff equal sets.
    pub fn digest(&self) -> Digest {
        Digest {
            count: self.ids.len() as u64,
            ids: self.ids.iter().copied().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::random_uuid;
    use proptest::prelude::*;
    use rand::Rng;

    fn u(n: u128) -> Uuid {
        Uuid::from_u128(n)
    }

    fn t(s: u128, e: u128, g: u128, c: u128) -> Tuple7 {
        Tuple7::new(u(s), u(e), u(g), u(c), 1000 + (s + e + g + c) as i64)
    }

    #[test]
    fn duplicate_insert_is_absorbed() {
        let mut store: TupleStore<()> = TupleStore::new(1);
        let tup = t(1, 2, 3, 4);
        assert!(store.insert(&tup).unwrap().newly_inserted);
        assert!(!store.insert(&tup).unwrap().newly_inserted);
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn malformed_tuple_rejected() {
        let mut store: TupleStore<()> = TupleStore::new(1);
        let mut bad = t(1, 2, 3, 4);
        bad.signature = Some(vec![1]);
        assert!(matches!(
            store.insert(&bad),
            Err(StoreError::MalformedTuple(_))
        ));
        let half = t(1, 2, 3, 4).with_signer(u(9));
        assert!(store.insert(&half).is_err());
    }

    #[test]
    fn scan_in_log_order() {
        let mut store: TupleStore<()> = TupleStore::new(1);
        let a = t(1, 7, 2, 9);
        let b = t(1, 7, 3, 9);
        let c = t(4, 7, 2, 9);
        for x in [&a, &b, &c] {
            store.insert(x).unwrap();
        }
        let p = TuplePattern::new(Some(u(1)), Some(u(7)), None, None);
        assert_eq!(store.scan(&p), vec![a.clone(), b.clone()]);
        assert_eq!(store.scan(&TuplePattern::wildcard()).len(), 3);
        assert!(store
            .scan(&TuplePattern::new(Some(u(42)), None, None, None))
            .is_empty());
    }

    #[test]
    fn empty_store_scans_empty() {
        let store: TupleStore<()> = TupleStore::new(1);
        assert!(store.scan(&TuplePattern::wildcard()).is_empty());
    }

    #[test]
    fn register_notify_unregister() {
        let mut store: TupleStore<&'static str> = TupleStore::new(1);
        let p = TuplePattern::new(Some(u(1)), None, None, None);
        let (sub, initial) = store.register_alpha(p, "client-a", 0);
        assert!(initial.is_empty());
        let out = store.insert(&t(1, 2, 3, 4)).unwrap();
        assert_eq!(out.notify, vec![(sub, "client-a")]);
        let out = store.insert(&t(5, 2, 3, 4)).unwrap();
        assert!(out.notify.is_empty(), "non-matching insert must not notify");
        assert!(store.unregister_alpha(sub));
        assert!(!store.unregister_alpha(sub));
        let out = store.insert(&t(1, 9, 9, 9)).unwrap();
        assert!(out.notify.is_empty());
    }

    #[test]
    fn identical_patterns_notify_independently() {
        let mut store: TupleStore<u32> = TupleStore::new(1);
        let p = TuplePattern::new(Some(u(1)), None, None, None);
        let (s1, _) = store.register_alpha(p, 10, 0);
        let (s2, _) = store.register_alpha(p, 20, 0);
        assert_ne!(s1, s2);
        let out = store.insert(&t(1, 2, 3, 4)).unwrap();
        assert_eq!(out.notify, vec![(s1, 10), (s2, 20)]);
    }

    #[test]
    fn register_returns_matching_backlog() {
        let mut store: TupleStore<()> = TupleStore::new(1);
        let a = t(1, 2, 3, 4);
        let b = t(1, 2, 5, 4);
        store.insert(&a).unwrap();
        store.insert(&b).unwrap();
        store.insert(&t(9, 9, 9, 9)).unwrap();
        let (_, initial) =
            store.register_alpha(TuplePattern::new(Some(u(1)), None, None, None), (), 0);
        assert_eq!(initial, vec![a, b]);
    }

    #[test]
    fn notification_multiset_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
        let pool: Vec<Uuid> = (0..12).map(|_| random_uuid(&mut rng)).collect();
        let pick = |rng: &mut rand_chacha::ChaCha20Rng| pool[rng.gen_range(0..pool.len())];

        let mut patterns = Vec::new();
        for _ in 0..20 {
            let mut slots = [None; 4];
            for s in slots.iter_mut() {
                if rng.gen_bool(0.4) {
                    *s = Some(pick(&mut rng));
                }
            }
            patterns.push(TuplePattern { slots });
        }
        let mut store: TupleStore<usize> = TupleStore::new(1);
        let sub_ids: Vec<Uuid> = patterns
            .iter()
            .enumerate()
            .map(|(i, p)| store.register_alpha(*p, i, 0).0)
            .collect();

        let mut tuples = Vec::new();
        let mut counts = vec![0usize; patterns.len()];
        for i in 0..500 {
            let tup = Tuple7::new(
                pick(&mut rng),
                pick(&mut rng),
                pick(&mut rng),
                pick(&mut rng),
                i,
            );
            let out = store.insert(&tup).unwrap();
            if out.newly_inserted {
                tuples.push(tup.clone());
                for (sub, ep) in out.notify {
                    assert_eq!(sub, sub_ids[ep]);
                    counts[ep] += 1;
                }
            }
        }
        for (i, p) in patterns.iter().enumerate() {
            let expected = tuples.iter().filter(|t| p.matches(t)).count();
            assert_eq!(counts[i], expected, "pattern {i} notification count");
        }
    }

    proptest! {
        #[test]
        fn scan_equals_brute_force_filter(seed in 0u64..500) {
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            let pool: Vec<Uuid> = (0..8).map(|_| random_uuid(&mut rng)).collect();
            let mut store: TupleStore<()> = TupleStore::new(seed);
            let mut all = Vec::new();
            for i in 0..120 {
                let tup = Tuple7::new(
                    pool[rng.gen_range(0..pool.len())],
                    pool[rng.gen_range(0..pool.len())],
                    pool[rng.gen_range(0..pool.len())],
                    pool[rng.gen_range(0..pool.len())],
                    i,
                );
                if store.insert(&tup).unwrap().newly_inserted {
                    all.push(tup);
                }
            }
            let mut slots = [None; 4];
            for s in slots.iter_mut() {
                if rng.gen_bool(0.5) {
                    *s = Some(pool[rng.gen_range(0..pool.len())]);
                }
            }
            let p = TuplePattern { slots };
            let brute: Vec<Tuple7> = all.iter().filter(|t| p.matches(t)).cloned().collect();
            prop_assert_eq!(store.scan(&p), brute);
        }

        #[test]
        fn log_is_append_only(ops in proptest::collection::vec(0u8..255, 1..60)) {
            let mut store: TupleStore<()> = TupleStore::new(3);
            let mut prev: Vec<TupleId> = Vec::new();
            for (i, op) in ops.iter().enumerate() {
                let tup = t(*op as u128 % 6, *op as u128 % 5, *op as u128 % 4, 1);
                let _ = store.insert(&tup);
                let now: Vec<TupleId> = store.log().iter().map(Tuple7::id).collect();
                prop_assert!(now.starts_with(&prev), "log shrank or reordered at op {}", i);
                prev = now;
            }
        }
    }
}
