//! The store-node state machine and the client-side iterative operations.
//!
//! Handlers are pure with respect to the network: they mutate local state
//! and queue [`SideEffect`]s, but never call a transport themselves. The
//! surrounding driver — simulator tick loop or TCP event loop — drains
//! the effect queue and performs the sends. That keeps every handler
//! re-entrancy-free and lets one deterministic scheduler own all I/O
//! ordering.
//!
//! The client operations (`bootstrap`, `store_tuple`, `multi_get`,
//! `subscribe_remote`) drive iterative lookups over a [`Transport`].
//! They treat the local node as just another candidate replica: when the
//! node's own id lands in a replica set, the operation short-circuits to
//! local state instead of calling the transport, so a transport is never
//! asked to deliver to its own address.

use std::collections::{BTreeSet, VecDeque};

use rand_chacha::ChaCha20Rng;
use sha2::{Digest as _, Sha256};

use crate::model::{tuple_id, Tuple7, TupleId, TuplePattern, Uuid};
use crate::store::{diff, StoreError, TupleStore};
use crate::sync::GossipConfig;

use super::key::{placement_keys, routing_key_for, xor_distance, Key, NodeId, UnroutablePattern};
use super::routing::{Addr, Contact, Observed, RoutingTable};
use super::rpc::{Request, Response, RpcError, Transport};

use rand::{Rng, SeedableRng};
use thiserror::Error;

#[derive(Debug, Clone)]
pub struct NodeConfig {
    /// k-bucket capacity and lookup result width.
    pub k: usize,
    /// Lookup parallelism (sequential batches of this size).
    pub alpha: usize,
    /// Replica count per placement key.
    pub replication: usize,
    pub gossip: GossipConfig,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            k: 20,
            alpha: 3,
            replication: 3,
            gossip: GossipConfig::default(),
        }
    }
}

impl NodeConfig {
    /// Desk-scale parameters for tests and simulations: tiny buckets so
    /// routing tables actually overflow at a dozen nodes.
    pub fn desk() -> Self {
        NodeConfig {
            k: 4,
            alpha: 3,
            replication: 3,
            gossip: GossipConfig::default(),
        }
    }
}

/// Deferred work queued by a handler, executed later by the driver.
#[derive(Debug, Clone, PartialEq)]
pub enum SideEffect {
    /// Push matching tuples to a standing-query subscriber. On delivery
    /// failure the driver should hand the effect back via
    /// [`Node::requeue_notify`]; retries go out on the next gossip tick.
    Notify {
        to: Contact,
        sub_id: Uuid,
        tuples: Vec<Tuple7>,
    },
    /// Fetch the listed tuples from a peer known to have them.
    PullFrom { peer: Contact, ids: Vec<TupleId> },
    /// Run one digest exchange with this peer now (reachability-change
    /// fast path; the periodic rounds come from the driver's timer).
    GossipWith { peer: Contact },
    /// A bucket was full: ping the oldest entry and evict it only if the
    /// ping fails, then admit the candidate.
    PingReplace { stale: Contact, candidate: Contact },
}

/// Trace record for the structured event log.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeEvent {
    Stored { id: TupleId },
    NotifyQueued { sub_id: Uuid, to: NodeId, count: usize },
    NotifyReceived { sub_id: Uuid, count: usize },
    SubRegistered { sub_id: Uuid, pattern: TuplePattern },
    SubRemoved { sub_id: Uuid },
    PullQueued { peer: NodeId, count: usize },
    Pulled { peer: NodeId, count: usize },
    Gossip { peer: NodeId },
}

impl NodeEvent {
    pub fn json(&self) -> serde_json::Value {
        use serde_json::json;
        match self {
            NodeEvent::Stored { id } => json!({"event": "stored", "id": id.to_hex()}),
            NodeEvent::NotifyQueued { sub_id, to, count } => json!({
                "event": "notify_queued", "sub": sub_id.to_string(),
                "to": to.to_hex(), "count": count,
            }),
            NodeEvent::NotifyReceived { sub_id, count } => json!({
                "event": "notify_received", "sub": sub_id.to_string(), "count": count,
            }),
            NodeEvent::SubRegistered { sub_id, pattern } => json!({
                "event": "sub_registered", "sub": sub_id.to_string(),
                "pattern": pattern.to_string(),
            }),
            NodeEvent::SubRemoved { sub_id } => {
                json!({"event": "sub_removed", "sub": sub_id.to_string()})
            }
            NodeEvent::PullQueued { peer, count } => json!({
                "event": "pull_queued", "peer": peer.to_hex(), "count": count,
            }),
            NodeEvent::Pulled { peer, count } => json!({
                "event": "pulled", "peer": peer.to_hex(), "count": count,
            }),
            NodeEvent::Gossip { peer } => json!({"event": "gossip", "peer": peer.to_hex()}),
        }
    }
}

/// A standing-query push delivered to this node as subscriber, waiting
/// for the client runtime to feed it into its join networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Notification {
    pub sub_id: Uuid,
    pub tuples: Vec<Tuple7>,
}

/// Contacts remembered after being dropped as unreachable, per node.
const PARKED_CAP: usize = 64;

/// One node's complete state: identity, routing table, tuple store,
/// plus the deferred-work queues the driver drains.
pub struct Node {
    pub config: NodeConfig,
    pub contact: Contact,
    pub table: RoutingTable,
    pub store: TupleStore<Contact>,
    effects: VecDeque<SideEffect>,
    events: Vec<NodeEvent>,
    inbox: Vec<Notification>,
    retry_notifies: VecDeque<(Contact, Uuid, Vec<Tuple7>)>,
    parked: VecDeque<Contact>,
    pub(crate) rng: ChaCha20Rng,
}

impl Node {
    pub fn new(id: NodeId, addr: impl Into<Addr>, config: NodeConfig, seed: u64) -> Self {
        let store = TupleStore::new(Self::derived_store_seed(&id, seed));
        Self::with_store(id, addr, config, store, seed)
    }

    /// Wraps an existing store (typically one opened from a log file).
    pub fn with_store(
        id: NodeId,
        addr: impl Into<Addr>,
        config: NodeConfig,
        store: TupleStore<Contact>,
        seed: u64,
    ) -> Self {
        let k = config.k;
        Node {
            config,
            contact: Contact::new(id, addr),
            table: RoutingTable::new(id, k),
            store,
            effects: VecDeque::new(),
            events: Vec::new(),
            inbox: Vec::new(),
            retry_notifies: VecDeque::new(),
            parked: VecDeque::new(),
            rng: ChaCha20Rng::seed_from_u64(Self::mix_seed(&id, seed, b"node")),
        }
    }

    /// Subscription-id streams must differ across nodes even when runs
    /// share a master seed, so fold the node id into the seed.
    pub fn derived_store_seed(id: &NodeId, seed: u64) -> u64 {
        Self::mix_seed(id, seed, b"store")
    }

    fn mix_seed(id: &NodeId, seed: u64, label: &[u8]) -> u64 {
        let mut h = Sha256::new();
        h.update(id.0);
        h.update(seed.to_be_bytes());
        h.update(label);
        let d = h.finalize();
        u64::from_be_bytes(d[..8].try_into().unwrap())
    }

    pub fn id(&self) -> NodeId {
        self.contact.id
    }

    /// Records a peer sighting; a full bucket becomes a deferred
    /// ping-and-maybe-evict instead of an immediate drop.
    pub(crate) fn touch(&mut self, c: &Contact) {
        self.parked.retain(|p| p.id != c.id);
        if let Observed::Full { oldest } = self.table.observe(c.clone()) {
            self.effects.push_back(SideEffect::PingReplace {
                stale: oldest,
                candidate: c.clone(),
            });
        }
    }

    /// Drops a contact that stopped answering, but remembers it for
    /// later reachability probes. Forgetting unreachable peers outright
    /// would make a partition permanent: after enough failed lookups
    /// neither side retains a single contact across the cut, and no
    /// amount of gossip can bridge stores that share no addresses.
    pub(crate) fn park_unreachable(&mut self, c: &Contact) {
        self.table.remove(&c.id);
        if c.id == self.contact.id || self.parked.iter().any(|p| p.id == c.id) {
            return;
        }
        self.parked.push_back(c.clone());
        if self.parked.len() > PARKED_CAP {
            self.parked.pop_front();
        }
    }

    /// One parked contact chosen at random — the candidate for this
    /// round's reachability probe. Stays parked until it answers
    /// something (any [`Node::touch`] clears it).
    pub fn parked_probe(&mut self) -> Option<Contact> {
        if self.parked.is_empty() {
            return None;
        }
        let i = self.rng.gen_range(0..self.parked.len());
        self.parked.get(i).cloned()
    }

    /// Every contact currently parked as unreachable.
    pub fn parked_peers(&self) -> Vec<Contact> {
        self.parked.iter().cloned().collect()
    }

    /// Up to `count` closest known contacts to `target`, with this node
    /// itself competing for a place. Used wherever replica sets are
    /// computed locally.
    pub fn closest_with_self(&self, target: &Key, count: usize) -> Vec<Contact> {
        let mut all = self.table.closest(target, count + 1);
        all.push(self.contact.clone());
        all.sort_by_key(|c| xor_distance(&c.id, target));
        all.truncate(count);
        all
    }

    /// Inserts a tuple locally, queueing notify effects for remote
    /// subscribers and delivering straight to the inbox for local ones.
    /// Used by the STORE_TUPLE handler, anti-entropy pulls, and
    /// single-node operation.
    pub fn local_insert(&mut self, t: &Tuple7) -> Result<bool, StoreError> {
        let out = self.store.insert(t)?;
        if !out.newly_inserted {
            return Ok(false);
        }
        self.events.push(NodeEvent::Stored { id: tuple_id(t) });
        for (sub_id, endpoint) in out.notify {
            if endpoint.id == self.contact.id {
                self.inbox.push(Notification {
                    sub_id,
                    tuples: vec![t.clone()],
                });
            } else {
                self.events.push(NodeEvent::NotifyQueued {
                    sub_id,
                    to: endpoint.id,
                    count: 1,
                });
                self.effects.push_back(SideEffect::Notify {
                    to: endpoint,
                    sub_id,
                    tuples: vec![t.clone()],
                });
            }
        }
        Ok(true)
    }

    /// The pure RPC dispatch. Never calls a transport; queues effects.
    pub fn handle_request(&mut self, from: &Contact, req: &Request, now_us: i64) -> Response {
        self.touch(from);
        match req {
            Request::Ping => Response::Pong,
            Request::FindNode(target) => {
                Response::Nodes(self.table.closest(target, self.config.k))
            }
            Request::StoreTuple(t) => {
                let new = match self.local_insert(t) {
                    Ok(new) => new,
                    Err(e) => {
                        log::warn!("rejecting stored tuple: {e}");
                        false
                    }
                };
                Response::Stored { new }
            }
            Request::MultiGet(p) => Response::Tuples(self.store.scan(p)),
            Request::Subscribe {
                pattern,
                subscriber,
            } => {
                let (sub_id, backlog) =
                    self.store.register_alpha(*pattern, subscriber.clone(), now_us);
                self.events.push(NodeEvent::SubRegistered {
                    sub_id,
                    pattern: *pattern,
                });
                Response::Subscribed { sub_id, backlog }
            }
            Request::Unsubscribe { sub_id } => {
                let removed = self.store.unregister_alpha(*sub_id);
                if removed {
                    self.events.push(NodeEvent::SubRemoved { sub_id: *sub_id });
                }
                Response::Unsubscribed { removed }
            }
            Request::Notify { sub_id, tuples } => {
                self.events.push(NodeEvent::NotifyReceived {
                    sub_id: *sub_id,
                    count: tuples.len(),
                });
                self.inbox.push(Notification {
                    sub_id: *sub_id,
                    tuples: tuples.clone(),
                });
                Response::NotifyAck
            }
            Request::Digest(remote) => {
                let local = self.store.digest();
                let (missing_here, _) = diff(&local, remote);
                if !missing_here.is_empty() {
                    self.events.push(NodeEvent::PullQueued {
                        peer: from.id,
                        count: missing_here.len(),
                    });
                    self.effects.push_back(SideEffect::PullFrom {
                        peer: from.clone(),
                        ids: missing_here,
                    });
                }
                Response::DigestReply(local)
            }
            Request::PullTuples(ids) => Response::Tuples(self.store.get_many(ids)),
        }
    }

    /// Drains the deferred-work queue; the driver executes each effect.
    pub fn take_effects(&mut self) -> Vec<SideEffect> {
        self.effects.drain(..).collect()
    }

    pub fn has_effects(&self) -> bool {
        !self.effects.is_empty()
    }

    pub(crate) fn push_effect(&mut self, e: SideEffect) {
        self.effects.push_back(e);
    }

    /// Drains the trace-event buffer.
    pub fn take_events(&mut self) -> Vec<NodeEvent> {
        std::mem::take(&mut self.events)
    }

    pub(crate) fn push_event(&mut self, e: NodeEvent) {
        self.events.push(e);
    }

    /// Drains standing-query pushes received as a subscriber.
    pub fn take_inbox(&mut self) -> Vec<Notification> {
        std::mem::take(&mut self.inbox)
    }

    /// Hands an undeliverable notify back for a later attempt. Retries
    /// are re-queued by [`Node::flush_notify_retries`] on gossip ticks,
    /// so a subscriber cut off by a partition gets its pushes once the
    /// partition heals. Dropped if the subscription is gone by then.
    pub fn requeue_notify(&mut self, to: Contact, sub_id: Uuid, tuples: Vec<Tuple7>) {
        self.retry_notifies.push_back((to, sub_id, tuples));
    }

    /// Moves pending notify retries back onto the effect queue.
    pub fn flush_notify_retries(&mut self) {
        let pending: Vec<_> = self.retry_notifies.drain(..).collect();
        for (to, sub_id, tuples) in pending {
            if self.store.subscriptions().iter().any(|s| s.sub_id == sub_id) {
                self.effects.push_back(SideEffect::Notify { to, sub_id, tuples });
            }
        }
    }

    pub fn pending_retry_count(&self) -> usize {
        self.retry_notifies.len()
    }
}

/// Outcome of a replicated add.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddOutcome {
    pub id: TupleId,
    /// Distinct replicas the operation tried to reach (self included).
    pub targeted: usize,
    /// Replicas that acknowledged the store.
    pub stored: usize,
    /// Whether the tuple was new at the replica closest to its content
    /// id; `None` when no such replica answered.
    pub new_on_primary: Option<bool>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LookupError {
    #[error(transparent)]
    Unroutable(#[from] UnroutablePattern),
    #[error("no replica reachable")]
    NoReplica,
}

/// One remote (or local) alpha registration made on behalf of a
/// standing query.
#[derive(Debug, Clone, PartialEq)]
pub struct RemoteSub {
    pub replica: Contact,
    pub sub_id: Uuid,
    pub backlog: Vec<Tuple7>,
}

/// Join the overlay: learn the seeds' identities, then look up our own
/// id to fill nearby buckets. Returns the resulting routing-table size.
/// With no seeds the node simply runs standalone.
pub fn bootstrap(
    node: &mut Node,
    transport: &mut dyn Transport,
    seeds: &[Addr],
) -> Result<usize, RpcError> {
    let mut reached = false;
    for addr in seeds {
        if *addr == node.contact.addr {
            continue;
        }
        match transport.call(&node.contact, addr, &Request::Ping) {
            Ok((responder, Response::Pong)) => {
                node.touch(&responder);
                reached = true;
            }
            Ok(_) | Err(_) => continue,
        }
    }
    if !seeds.is_empty() && !reached {
        return Err(RpcError::Unreachable);
    }
    let self_id = node.contact.id;
    iterative_find_node(node, transport, &self_id);
    Ok(node.table.len())
}

fn sort_shortlist(list: &mut Vec<Contact>, target: &Key) {
    list.sort_by_key(|c| (xor_distance(&c.id, target), c.id));
    list.dedup_by(|a, b| a.id == b.id);
}

/// Iterative Kademlia lookup: query the alpha closest unqueried
/// candidates, merge what they return, stop when the k closest are all
/// queried. The local node is itself a candidate and counts as queried.
pub fn iterative_find_node(
    node: &mut Node,
    transport: &mut dyn Transport,
    target: &Key,
) -> Vec<Contact> {
    let k = node.config.k;
    let alpha = node.config.alpha.max(1);
    let mut shortlist = node.table.closest(target, k);
    shortlist.push(node.contact.clone());
    sort_shortlist(&mut shortlist, target);

    let mut queried: BTreeSet<NodeId> = BTreeSet::new();
    queried.insert(node.contact.id);
    let mut failed: BTreeSet<NodeId> = BTreeSet::new();

    loop {
        let batch: Vec<Contact> = shortlist
            .iter()
            .filter(|c| !queried.contains(&c.id))
            .take(alpha)
            .cloned()
            .collect();
        if batch.is_empty() {
            break;
        }
        for c in batch {
            queried.insert(c.id);
            match transport.call(&node.contact, &c.addr, &Request::FindNode(*target)) {
                Ok((responder, Response::Nodes(contacts))) => {
                    node.touch(&responder);
                    for nc in contacts {
                        if nc.id == node.contact.id {
                            continue;
                        }
                        node.touch(&nc);
                        if !shortlist.iter().any(|x| x.id == nc.id) {
                            shortlist.push(nc);
                        }
                    }
                }
                Ok(_) | Err(_) => {
                    failed.insert(c.id);
                    node.park_unreachable(&c);
                }
            }
        }
        shortlist.retain(|c| !failed.contains(&c.id));
        sort_shortlist(&mut shortlist, target);
        if shortlist.iter().take(k).all(|c| queried.contains(&c.id)) {
            break;
        }
    }
    shortlist.retain(|c| !failed.contains(&c.id));
    shortlist.truncate(k);
    shortlist
}

/// The replica set for one placement key: the `replication` closest
/// live contacts found by iterative lookup.
fn replicas_for(node: &mut Node, transport: &mut dyn Transport, key: &Key) -> Vec<Contact> {
    let r = node.config.replication;
    let mut found = iterative_find_node(node, transport, key);
    found.truncate(r);
    found
}

/// Replicated add: place the tuple under each of its placement keys.
/// Errors only on a malformed tuple; network trouble shows up as a low
/// `stored` count instead.
pub fn store_tuple(
    node: &mut Node,
    transport: &mut dyn Transport,
    t: &Tuple7,
) -> Result<AddOutcome, StoreError> {
    if !t.is_well_formed() {
        return Err(StoreError::MalformedTuple(
            "signer and signature must be present together".into(),
        ));
    }
    let id = tuple_id(t);
    let id_key = Key::for_tuple_id(&id);

    let mut targets: Vec<Contact> = Vec::new();
    for key in placement_keys(t) {
        for c in replicas_for(node, transport, &key) {
            if !targets.iter().any(|x| x.id == c.id) {
                targets.push(c);
            }
        }
    }

    let mut stored = 0usize;
    let mut acks: Vec<(Contact, bool)> = Vec::new();
    for c in &targets {
        if c.id == node.contact.id {
            let new = node.local_insert(t)?;
            stored += 1;
            acks.push((c.clone(), new));
            continue;
        }
        match transport.call(&node.contact, &c.addr, &Request::StoreTuple(t.clone())) {
            Ok((responder, Response::Stored { new })) => {
                node.touch(&responder);
                stored += 1;
                acks.push((c.clone(), new));
            }
            Ok(_) | Err(_) => {}
        }
    }

    acks.sort_by_key(|(c, _)| xor_distance(&c.id, &id_key));
    Ok(AddOutcome {
        id,
        targeted: targets.len(),
        stored,
        new_on_primary: acks.first().map(|(_, new)| *new),
    })
}

/// Replicated template query: route by the pattern's key, scan all
/// replicas, merge by content id. Results come back ordered by
/// (timestamp, id) so every caller sees the same sequence.
pub fn multi_get(
    node: &mut Node,
    transport: &mut dyn Transport,
    pattern: &TuplePattern,
) -> Result<Vec<Tuple7>, LookupError> {
    let key = routing_key_for(pattern)?;
    let replicas = replicas_for(node, transport, &key);
    let mut merged: Vec<Tuple7> = Vec::new();
    let mut seen: BTreeSet<TupleId> = BTreeSet::new();
    let mut answered = 0usize;
    for c in &replicas {
        let tuples = if c.id == node.contact.id {
            answered += 1;
            node.store.scan(pattern)
        } else {
            match transport.call(&node.contact, &c.addr, &Request::MultiGet(*pattern)) {
                Ok((responder, Response::Tuples(ts))) => {
                    node.touch(&responder);
                    answered += 1;
                    ts
                }
                Ok(_) | Err(_) => continue,
            }
        };
        for t in tuples {
            if seen.insert(tuple_id(&t)) {
                merged.push(t);
            }
        }
    }
    if answered == 0 {
        return Err(LookupError::NoReplica);
    }
    merged.sort_by_key(|t| (t.timestamp, tuple_id(t)));
    Ok(merged)
}

/// Registers a standing template at every replica responsible for its
/// routing key. Partial success is reported as fewer subs than
/// `targeted`; total failure is an error.
pub fn subscribe_remote(
    node: &mut Node,
    transport: &mut dyn Transport,
    pattern: &TuplePattern,
    now_us: i64,
) -> Result<(Vec<RemoteSub>, usize), LookupError> {
    let key = routing_key_for(pattern)?;
    let replicas = replicas_for(node, transport, &key);
    let targeted = replicas.len();
    let subscriber = node.contact.clone();
    let mut subs = Vec::new();
    for c in &replicas {
        if c.id == node.contact.id {
            let (sub_id, backlog) =
                node.store
                    .register_alpha(*pattern, subscriber.clone(), now_us);
            node.push_event(NodeEvent::SubRegistered {
                sub_id,
                pattern: *pattern,
            });
            subs.push(RemoteSub {
                replica: c.clone(),
                sub_id,
                backlog,
            });
            continue;
        }
        let req = Request::Subscribe {
            pattern: *pattern,
            subscriber: subscriber.clone(),
        };
        match transport.call(&node.contact, &c.addr, &req) {
            Ok((responder, Response::Subscribed { sub_id, backlog })) => {
                node.touch(&responder);
                subs.push(RemoteSub {
                    replica: c.clone(),
                    sub_id,
                    backlog,
                });
            }
            Ok(_) | Err(_) => {}
        }
    }
    if subs.is_empty() {
        return Err(LookupError::NoReplica);
    }
    Ok((subs, targeted))
}

/// Best-effort teardown of the registrations made by
/// [`subscribe_remote`]; returns how many replicas confirmed removal.
pub fn unsubscribe_remote(
    node: &mut Node,
    transport: &mut dyn Transport,
    subs: &[RemoteSub],
) -> usize {
    let mut removed = 0usize;
    for sub in subs {
        if sub.replica.id == node.contact.id {
            if node.store.unregister_alpha(sub.sub_id) {
                node.push_event(NodeEvent::SubRemoved { sub_id: sub.sub_id });
                removed += 1;
            }
            continue;
        }
        let req = Request::Unsubscribe { sub_id: sub.sub_id };
        match transport.call(&node.contact, &sub.replica.addr, &req) {
            Ok((_, Response::Unsubscribed { removed: true })) => removed += 1,
            _ => {}
        }
    }
    removed
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::random_uuid;
    use rand::SeedableRng;
    use std::collections::BTreeMap;

    fn uuid(n: u128) -> Uuid {
        Uuid::from_u128(n)
    }

    fn tup(s: u128, e: u128, g: u128, c: u128) -> Tuple7 {
        Tuple7::new(uuid(s), uuid(e), uuid(g), uuid(c), (s + g) as i64)
    }

    fn mk_node(label: &str) -> Node {
        Node::new(
            Key::from_seed(label.as_bytes()),
            format!("addr-{label}"),
            NodeConfig::desk(),
            7,
        )
    }

    /// A transport that refuses everything; for exercising pure logic.
    struct DeadNet;
    impl Transport for DeadNet {
        fn call(
            &mut self,
            _from: &Contact,
            _to: &Addr,
            _req: &Request,
        ) -> Result<(Contact, Response), RpcError> {
            Err(RpcError::Unreachable)
        }
    }

    /// Static full-knowledge mesh: every node answers FIND_NODE from a
    /// routing table that already contains everyone. Good enough to
    /// check that iterative lookup converges to the true closest set.
    struct MeshTransport {
        nodes: BTreeMap<Addr, (Contact, RoutingTable)>,
    }

    impl MeshTransport {
        fn build(count: usize, k: usize) -> (Self, Vec<Contact>) {
            let contacts: Vec<Contact> = (0..count)
                .map(|i| {
                    Contact::new(Key::from_seed(format!("mesh-{i}").as_bytes()), format!("m{i}"))
                })
                .collect();
            let mut nodes = BTreeMap::new();
            for c in &contacts {
                let mut rt = RoutingTable::new(c.id, k);
                for other in &contacts {
                    rt.observe(other.clone());
                }
                nodes.insert(c.addr.clone(), (c.clone(), rt));
            }
            (MeshTransport { nodes }, contacts)
        }
    }

    impl Transport for MeshTransport {
        fn call(
            &mut self,
            _from: &Contact,
            to: &Addr,
            req: &Request,
        ) -> Result<(Contact, Response), RpcError> {
            let (contact, table) = self.nodes.get(to).ok_or(RpcError::Unreachable)?;
            match req {
                Request::Ping => Ok((contact.clone(), Response::Pong)),
                Request::FindNode(target) => {
                    Ok((contact.clone(), Response::Nodes(table.closest(target, 20))))
                }
                _ => Err(RpcError::Protocol("mesh only resolves lookups".into())),
            }
        }
    }

    #[test]
    fn lone_node_serves_itself() {
        let mut node = mk_node("solo");
        let mut net = DeadNet;
        let t = tup(1, 2, 3, 4);
        let out = store_tuple(&mut node, &mut net, &t).unwrap();
        assert_eq!(out.stored, 1);
        assert_eq!(out.targeted, 1);
        assert_eq!(out.new_on_primary, Some(true));

        let p = TuplePattern::new(Some(uuid(1)), None, None, None);
        assert_eq!(multi_get(&mut node, &mut net, &p).unwrap(), vec![t.clone()]);

        let (subs, targeted) = subscribe_remote(&mut node, &mut net, &p, 10).unwrap();
        assert_eq!(targeted, 1);
        assert_eq!(subs[0].backlog, vec![t]);

        // A later matching insert lands in the local inbox, not on the wire.
        let t2 = tup(1, 9, 9, 9);
        store_tuple(&mut node, &mut net, &t2).unwrap();
        let inbox = node.take_inbox();
        assert_eq!(inbox.len(), 1);
        assert_eq!(inbox[0].sub_id, subs[0].sub_id);
        assert_eq!(inbox[0].tuples, vec![t2]);
        assert!(!node.has_effects() || node.take_effects().iter().all(|e| matches!(e, SideEffect::PingReplace { .. })));
    }

    #[test]
    fn handler_queues_notify_for_remote_subscriber() {
        let mut node = mk_node("store");
        let client = Contact::new(Key::from_seed(b"client"), "addr-client");
        let p = TuplePattern::new(Some(uuid(5)), None, None, None);
        let resp = node.handle_request(
            &client,
            &Request::Subscribe {
                pattern: p,
                subscriber: client.clone(),
            },
            0,
        );
        let sub_id = match resp {
            Response::Subscribed { sub_id, backlog } => {
                assert!(backlog.is_empty());
                sub_id
            }
            other => panic!("unexpected {other:?}"),
        };

        let peer = Contact::new(Key::from_seed(b"peer"), "addr-peer");
        let t = tup(5, 1, 1, 1);
        let resp = node.handle_request(&peer, &Request::StoreTuple(t.clone()), 1);
        assert_eq!(resp, Response::Stored { new: true });
        let effects = node.take_effects();
        assert!(effects.contains(&SideEffect::Notify {
            to: client.clone(),
            sub_id,
            tuples: vec![t.clone()],
        }));
        // Duplicate store: absorbed, no second notification.
        let resp = node.handle_request(&peer, &Request::StoreTuple(t), 2);
        assert_eq!(resp, Response::Stored { new: false });
        assert!(node.take_effects().is_empty());
    }

    #[test]
    fn digest_handler_queues_pull_for_missing() {
        let mut a = mk_node("a");
        let mut b = mk_node("b");
        let t1 = tup(1, 1, 1, 1);
        let t2 = tup(2, 2, 2, 2);
        a.local_insert(&t1).unwrap();
        b.local_insert(&t1).unwrap();
        b.local_insert(&t2).unwrap();

        let resp = a.handle_request(&b.contact.clone(), &Request::Digest(b.store.digest()), 0);
        assert_eq!(resp, Response::DigestReply(a.store.digest()));
        let effects = a.take_effects();
        assert_eq!(
            effects,
            vec![SideEffect::PullFrom {
                peer: b.contact.clone(),
                ids: vec![tuple_id(&t2)],
            }]
        );
        // Symmetric case: b learns nothing is missing on its side.
        let resp = b.handle_request(&a.contact.clone(), &Request::Digest(a.store.digest()), 0);
        assert_eq!(resp, Response::DigestReply(b.store.digest()));
        assert!(b.take_effects().is_empty());
    }

    #[test]
    fn notify_lands_in_inbox() {
        let mut node = mk_node("sub");
        let peer = Contact::new(Key::from_seed(b"peer"), "addr-peer");
        let sub_id = uuid(99);
        let t = tup(1, 2, 3, 4);
        let resp = node.handle_request(
            &peer,
            &Request::Notify {
                sub_id,
                tuples: vec![t.clone()],
            },
            0,
        );
        assert_eq!(resp, Response::NotifyAck);
        assert_eq!(
            node.take_inbox(),
            vec![Notification {
                sub_id,
                tuples: vec![t]
            }]
        );
    }

    #[test]
    fn notify_retry_survives_until_flush() {
        let mut node = mk_node("retry");
        let client = Contact::new(Key::from_seed(b"client"), "addr-client");
        let p = TuplePattern::wildcard();
        let (sub_id, _) = node.store.register_alpha(p, client.clone(), 0);
        node.requeue_notify(client.clone(), sub_id, vec![tup(1, 1, 1, 1)]);
        assert_eq!(node.pending_retry_count(), 1);
        node.flush_notify_retries();
        assert_eq!(node.pending_retry_count(), 0);
        assert!(matches!(
            node.take_effects().as_slice(),
            [SideEffect::Notify { .. }]
        ));
        // After unsubscribe the retry is dropped instead of re-queued.
        node.requeue_notify(client, sub_id, vec![tup(2, 2, 2, 2)]);
        node.store.unregister_alpha(sub_id);
        node.flush_notify_retries();
        assert!(node.take_effects().is_empty());
    }

    #[test]
    fn iterative_lookup_matches_global_sort() {
        let (mut mesh, contacts) = MeshTransport::build(40, 20);
        let mut node = mk_node("seeker");
        // Seed with a single arbitrary peer.
        node.table.observe(contacts[0].clone());

        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..25 {
            let target = Key::for_uuid(&random_uuid(&mut rng));
            let got = iterative_find_node(&mut node, &mut mesh, &target);
            let mut want: Vec<Contact> = contacts.clone();
            want.push(node.contact.clone());
            want.sort_by_key(|c| (xor_distance(&c.id, &target), c.id));
            want.truncate(node.config.k);
            assert_eq!(got, want);
        }
    }

    #[test]
    fn lookup_skips_dead_nodes() {
        let (mut mesh, contacts) = MeshTransport::build(12, 20);
        // Kill three nodes by removing them from the mesh.
        let dead: Vec<Contact> = contacts[3..6].to_vec();
        for c in &dead {
            mesh.nodes.remove(&c.addr);
        }
        // Wide k so every live node fits in one result set.
        let mut cfg = NodeConfig::desk();
        cfg.k = 20;
        let mut node = Node::new(Key::from_seed(b"seeker"), "addr-seeker", cfg, 7);
        node.table.observe(contacts[0].clone());
        let target = Key::from_seed(b"somewhere");
        let got = iterative_find_node(&mut node, &mut mesh, &target);
        for c in &dead {
            assert!(!got.iter().any(|g| g.id == c.id), "dead node in result");
        }
        // All live nodes fit in k, so the result is exactly the live set
        // plus the seeker.
        assert_eq!(got.len(), 12 - 3 + 1);
    }

    #[test]
    fn bootstrap_fails_when_no_seed_answers() {
        let mut node = mk_node("boot");
        let mut net = DeadNet;
        let err = bootstrap(&mut node, &mut net, &["nowhere:1".to_string()]).unwrap_err();
        assert_eq!(err, RpcError::Unreachable);
        assert_eq!(bootstrap(&mut node, &mut net, &[]).unwrap(), 0);
    }

    #[test]
    fn closest_with_self_ranks_own_id() {
        let mut node = mk_node("me");
        let far = Contact::new(Key::from_seed(b"far-away"), "f");
        node.table.observe(far.clone());
        let own = node.contact.id;
        let got = node.closest_with_self(&own, 2);
        assert_eq!(got[0].id, own);
        assert_eq!(got[1].id, far.id);
    }
}
