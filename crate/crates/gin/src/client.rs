//! End-host runtime: the two client operations and everything needed to
//! make them feel simple.
//!
//! `add` verifies (per policy), replicates, and reports. `map` compiles
//! a graph query, registers its templates at the responsible store
//! nodes, seeds the join network from the subscription backlogs, and
//! then feeds every pushed match incrementally. Each completed result is
//! surfaced exactly once; duplicate pushes from replicas or healed
//! partitions are absorbed by the join network's memories.
//!
//! [`ClientRuntime`] holds only the standing-query state and borrows a
//! node plus transport per call, so drivers that own their nodes (the
//! simulator, the daemon event loop) can embed it. [`GinClient`] bundles
//! node, transport, and runtime for straight-line use.

use std::collections::BTreeMap;

use crate::dht::{
    bootstrap, multi_get, store_tuple, subscribe_remote, unsubscribe_remote, Contact, LookupError,
    Node, Notification, RemoteSub, Request, Response, RpcError, Transport, UnroutablePattern,
};
use crate::model::{
    random_uuid, sign_tuple, uuid_from_label, verify_tuple, KeyPair, KeyRegistry,
    KeyedSha256, PublicKey, SecretKey, SignError, Tuple7, TupleId, TuplePattern, Uuid, VerifyStatus,
};
use crate::query::{Binding, GraphQuery, QueryError, QueryPlan};
use crate::store::StoreError;
use crate::sync::{gossip_round, perform_effect};
use thiserror::Error;

/// What `add` does about signature verification before publishing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VerifyPolicy {
    /// Refuse tuples that verify `Invalid` or `UnknownSigner`.
    Reject,
    /// Publish anyway, but log a warning.
    #[default]
    Warn,
    /// Skip verification entirely.
    Off,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddReport {
    pub id: TupleId,
    /// Replicas targeted / replicas that acknowledged.
    pub targeted: usize,
    pub stored: usize,
    /// New at the primary replica (false when it was already known).
    pub new: bool,
    pub verified: VerifyStatus,
}

#[derive(Debug, Error)]
pub enum AddError {
    #[error("verification failed: {0:?}")]
    Rejected(VerifyStatus),
    #[error(transparent)]
    Malformed(#[from] StoreError),
    #[error("no replica reachable")]
    NoReplica,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MapError {
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Unroutable(#[from] UnroutablePattern),
    #[error("no replica reachable for template {0}")]
    NoReplica(TuplePattern),
    #[error("unknown map id")]
    UnknownMap,
}

/// Lifecycle of a standing query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapStatus {
    /// Registration still in progress.
    Seeding,
    /// Every responsible replica holds our templates.
    Live,
    /// Some replicas could not be reached; deliveries may lag until
    /// retries or anti-entropy close the gap.
    Degraded,
    Closed,
}

/// One alpha template's registrations across its replica set.
#[derive(Debug, Clone)]
struct AlphaSubs {
    pattern: TuplePattern,
    subs: Vec<RemoteSub>,
    /// Replicas from the latest lookup that do not hold our template
    /// yet. Non-zero means deliveries may lag until reconciliation.
    missing: usize,
}

/// One standing query: compiled plan plus its live subscriptions.
pub struct MapState {
    pub map_id: Uuid,
    pub query: GraphQuery,
    plan: QueryPlan,
    alphas: Vec<AlphaSubs>,
    status: MapStatus,
    /// Completed results not yet taken by the caller.
    pending: Vec<Binding>,
}

impl MapState {
    pub fn status(&self) -> MapStatus {
        self.status
    }

    pub fn results(&self) -> &[Binding] {
        self.plan.results()
    }

    pub fn local_graph(&self) -> Vec<Tuple7> {
        self.plan.local_graph()
    }

    fn feed(&mut self, tuples: &[Tuple7]) {
        for t in tuples {
            let delta = self.plan.on_tuple(t);
            self.pending.extend(delta);
        }
    }

    fn recompute_status(&mut self) {
        if self.status == MapStatus::Closed {
            return;
        }
        let complete = self.alphas.iter().all(|a| a.missing == 0);
        self.status = if complete {
            MapStatus::Live
        } else {
            MapStatus::Degraded
        };
    }
}

/// Standing-query state for one end host.
#[derive(Default)]
pub struct ClientRuntime {
    maps: BTreeMap<Uuid, MapState>,
    /// Remote subscription id -> owning map.
    routes: BTreeMap<Uuid, Uuid>,
}

impl ClientRuntime {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a standing query: one subscription per distinct erased
    /// template at each responsible replica, join network seeded from
    /// the backlogs. Returns the map id.
    pub fn map(
        &mut self,
        node: &mut Node,
        transport: &mut dyn Transport,
        query: &GraphQuery,
        now_us: i64,
    ) -> Result<Uuid, MapError> {
        let plan = query.compile()?;
        let map_id = random_uuid(&mut node.rng);
        let mut state = MapState {
            map_id,
            query: query.clone(),
            plan,
            alphas: Vec::new(),
            status: MapStatus::Seeding,
            pending: Vec::new(),
        };

        let mut backlog: Vec<Tuple7> = Vec::new();
        for pattern in state.plan.alpha_patterns() {
            if pattern.is_all_wildcard() {
                self.teardown(node, transport, &state);
                return Err(MapError::Unroutable(UnroutablePattern));
            }
            match subscribe_remote(node, transport, &pattern, now_us) {
                Ok((subs, targeted)) => {
                    for s in &subs {
                        self.routes.insert(s.sub_id, map_id);
                        backlog.extend(s.backlog.iter().cloned());
                    }
                    let missing = targeted.saturating_sub(subs.len());
                    state.alphas.push(AlphaSubs {
                        pattern,
                        subs,
                        missing,
                    });
                }
                Err(LookupError::NoReplica) => {
                    self.teardown(node, transport, &state);
                    return Err(MapError::NoReplica(pattern));
                }
                Err(LookupError::Unroutable(e)) => {
                    self.teardown(node, transport, &state);
                    return Err(MapError::Unroutable(e));
                }
            }
        }
        state.feed(&backlog);
        state.recompute_status();
        self.maps.insert(map_id, state);
        Ok(map_id)
    }

    fn teardown(&mut self, node: &mut Node, transport: &mut dyn Transport, state: &MapState) {
        for a in &state.alphas {
            unsubscribe_remote(node, transport, &a.subs);
            for s in &a.subs {
                self.routes.remove(&s.sub_id);
            }
        }
    }

    /// Closes a standing query and withdraws its subscriptions.
    pub fn unmap(
        &mut self,
        node: &mut Node,
        transport: &mut dyn Transport,
        map_id: Uuid,
    ) -> Result<(), MapError> {
        let mut state = self.maps.remove(&map_id).ok_or(MapError::UnknownMap)?;
        self.teardown(node, transport, &state);
        state.status = MapStatus::Closed;
        Ok(())
    }

    /// Routes one received push into its join network.
    pub fn on_notification(&mut self, n: &Notification) {
        let Some(map_id) = self.routes.get(&n.sub_id) else {
            return; // late push for an unmapped query
        };
        if let Some(state) = self.maps.get_mut(map_id) {
            state.feed(&n.tuples);
        }
    }

    /// Drains the node's notification inbox into the join networks.
    pub fn drain_inbox(&mut self, node: &mut Node) {
        for n in node.take_inbox() {
            self.on_notification(&n);
        }
    }

    /// Re-derives every map's replica sets and registers the templates
    /// anywhere they are missing, seeding from the returned backlogs.
    /// Run on the gossip cadence: this is what moves a degraded map
    /// back to live, and what follows the responsible replica set as
    /// nodes join, fail, or return from a partition. Replicas that
    /// dropped out of the closest set keep their (now redundant)
    /// registrations; duplicate pushes are absorbed by the join
    /// network. Returns the number of new registrations.
    pub fn reconcile_maps(
        &mut self,
        node: &mut Node,
        transport: &mut dyn Transport,
        now_us: i64,
    ) -> usize {
        let open: Vec<Uuid> = self.maps.keys().copied().collect();
        let mut added = 0usize;
        for map_id in open {
            let mut state = self.maps.remove(&map_id).expect("listed above");
            let mut caught_up: Vec<Tuple7> = Vec::new();
            for a in state.alphas.iter_mut() {
                let key = match crate::dht::routing_key_for(&a.pattern) {
                    Ok(k) => k,
                    Err(_) => continue,
                };
                let replicas: Vec<Contact> = crate::dht::iterative_find_node(node, transport, &key)
                    .into_iter()
                    .take(node.config.replication)
                    .collect();
                a.missing = 0;
                for c in replicas {
                    if a.subs.iter().any(|s| s.replica.id == c.id) {
                        continue;
                    }
                    let sub = if c.id == node.contact.id {
                        let (sub_id, backlog) =
                            node.store
                                .register_alpha(a.pattern, node.contact.clone(), now_us);
                        Some(RemoteSub {
                            replica: c.clone(),
                            sub_id,
                            backlog,
                        })
                    } else {
                        let req = Request::Subscribe {
                            pattern: a.pattern,
                            subscriber: node.contact.clone(),
                        };
                        match transport.call(&node.contact, &c.addr, &req) {
                            Ok((_, Response::Subscribed { sub_id, backlog })) => Some(RemoteSub {
                                replica: c.clone(),
                                sub_id,
                                backlog,
                            }),
                            _ => None,
                        }
                    };
                    match sub {
                        Some(sub) => {
                            self.routes.insert(sub.sub_id, map_id);
                            caught_up.extend(sub.backlog.iter().cloned());
                            a.subs.push(sub);
                            added += 1;
                        }
                        None => a.missing += 1,
                    }
                }
            }
            state.feed(&caught_up);
            state.recompute_status();
            self.maps.insert(map_id, state);
        }
        added
    }

    pub fn status(&self, map_id: Uuid) -> Option<MapStatus> {
        self.maps.get(&map_id).map(|s| s.status)
    }

    pub fn state(&self, map_id: Uuid) -> Option<&MapState> {
        self.maps.get(&map_id)
    }

    /// All results completed so far for a map.
    pub fn results(&self, map_id: Uuid) -> Option<&[Binding]> {
        self.maps.get(&map_id).map(|s| s.plan.results())
    }

    /// Results completed since the last call; each result is returned
    /// exactly once across the lifetime of the map.
    pub fn take_new_results(&mut self, map_id: Uuid) -> Vec<Binding> {
        self.maps
            .get_mut(&map_id)
            .map(|s| std::mem::take(&mut s.pending))
            .unwrap_or_default()
    }

    pub fn local_graph(&self, map_id: Uuid) -> Option<Vec<Tuple7>> {
        self.maps.get(&map_id).map(|s| s.plan.local_graph())
    }

    pub fn map_ids(&self) -> Vec<Uuid> {
        self.maps.keys().copied().collect()
    }
}

// ---- key distribution ---------------------------------------------------

/// Edge id for in-graph key announcements.
pub fn has_key_edge() -> Uuid {
    uuid_from_label("gin:has-key")
}

/// Encodes a 32-byte verifying key as a tuple: the signer points through
/// the well-known edge at two vertices carrying the key halves. Keys
/// thus replicate and converge like any other data.
pub fn key_announcement(signer: Uuid, key: &PublicKey, timestamp: i64) -> Option<Tuple7> {
    if key.0.len() != 32 {
        return None;
    }
    let hi = Uuid::from_bytes(key.0[..16].try_into().unwrap());
    let lo = Uuid::from_bytes(key.0[16..].try_into().unwrap());
    Some(Tuple7::new(signer, has_key_edge(), hi, lo, timestamp))
}

/// Reads key announcements back out of a tuple list.
pub fn extract_key_announcements(tuples: &[Tuple7]) -> Vec<(Uuid, PublicKey)> {
    let edge = has_key_edge();
    tuples
        .iter()
        .filter(|t| t.edge == edge)
        .map(|t| {
            let mut bytes = Vec::with_capacity(32);
            bytes.extend_from_slice(t.target.as_bytes());
            bytes.extend_from_slice(t.context.as_bytes());
            (t.source, PublicKey(bytes))
        })
        .collect()
}

/// Text key file: one `signer-uuid hex-key` per line, `#` comments.
pub fn parse_key_file(text: &str) -> Result<Vec<(Uuid, PublicKey)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let (Some(id), Some(hexkey), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(format!("line {}: expected 'signer-uuid hex-key'", i + 1));
        };
        let signer =
            Uuid::parse_str(id).map_err(|_| format!("line {}: bad uuid '{id}'", i + 1))?;
        let key = hex::decode(hexkey).map_err(|_| format!("line {}: bad hex key", i + 1))?;
        out.push((signer, PublicKey(key)));
    }
    Ok(out)
}

pub fn format_key_file(keys: &[(Uuid, PublicKey)]) -> String {
    let mut out = String::new();
    for (signer, key) in keys {
        out.push_str(&format!("{signer} {}\n", hex::encode(&key.0)));
    }
    out
}

// ---- the bundled client -------------------------------------------------

/// Node + transport + runtime in one place, for straight-line callers:
/// the CLI, examples, and tests that do not need a custom driver.
pub struct GinClient<T: Transport> {
    pub node: Node,
    pub transport: T,
    pub runtime: ClientRuntime,
    pub registry: KeyRegistry,
    pub verify_policy: VerifyPolicy,
    scheme: KeyedSha256,
    clock_us: i64,
}

impl<T: Transport> GinClient<T> {
    pub fn new(node: Node, transport: T) -> Self {
        GinClient {
            node,
            transport,
            runtime: ClientRuntime::new(),
            registry: KeyRegistry::new(),
            verify_policy: VerifyPolicy::default(),
            scheme: KeyedSha256,
            clock_us: 0,
        }
    }

    /// Advances the client's notion of time (used for subscription
    /// bookkeeping and default timestamps).
    pub fn set_clock(&mut self, now_us: i64) {
        self.clock_us = now_us;
    }

    pub fn now_us(&self) -> i64 {
        self.clock_us
    }

    pub fn bootstrap(&mut self, seeds: &[String]) -> Result<usize, RpcError> {
        let n = bootstrap(&mut self.node, &mut self.transport, seeds)?;
        self.pump();
        Ok(n)
    }

    /// Verify per policy, replicate, pump deliveries.
    pub fn add(&mut self, t: &Tuple7) -> Result<AddReport, AddError> {
        let verified = match self.verify_policy {
            VerifyPolicy::Off => VerifyStatus::Unsigned,
            _ => verify_tuple(t, &self.registry, &self.scheme),
        };
        match (self.verify_policy, verified) {
            (VerifyPolicy::Reject, VerifyStatus::Invalid | VerifyStatus::UnknownSigner) => {
                return Err(AddError::Rejected(verified));
            }
            (VerifyPolicy::Warn, VerifyStatus::Invalid | VerifyStatus::UnknownSigner) => {
                log::warn!("publishing tuple that verifies {verified:?}");
            }
            _ => {}
        }
        let out = store_tuple(&mut self.node, &mut self.transport, t)?;
        if out.stored == 0 {
            return Err(AddError::NoReplica);
        }
        self.pump();
        Ok(AddReport {
            id: out.id,
            targeted: out.targeted,
            stored: out.stored,
            new: out.new_on_primary.unwrap_or(false),
            verified,
        })
    }

    /// Convenience: sign with the given secret key, then add.
    pub fn sign_and_add(&mut self, t: &Tuple7, key: &SecretKey) -> Result<AddReport, AddError> {
        let signed = sign_tuple(t, key, &self.scheme)
            .map_err(|e: SignError| StoreError::MalformedTuple(e.to_string()))?;
        self.add(&signed)
    }

    pub fn get(&mut self, p: &TuplePattern) -> Result<Vec<Tuple7>, LookupError> {
        let out = multi_get(&mut self.node, &mut self.transport, p);
        self.pump();
        out
    }

    pub fn map(&mut self, q: &GraphQuery) -> Result<Uuid, MapError> {
        let now = self.clock_us;
        let id = self
            .runtime
            .map(&mut self.node, &mut self.transport, q, now)?;
        self.pump();
        Ok(id)
    }

    pub fn unmap(&mut self, map_id: Uuid) -> Result<(), MapError> {
        let out = self
            .runtime
            .unmap(&mut self.node, &mut self.transport, map_id);
        self.pump();
        out
    }

    pub fn map_status(&self, map_id: Uuid) -> Option<MapStatus> {
        self.runtime.status(map_id)
    }

    pub fn results(&self, map_id: Uuid) -> Option<&[Binding]> {
        self.runtime.results(map_id)
    }

    pub fn take_new_results(&mut self, map_id: Uuid) -> Vec<Binding> {
        self.runtime.take_new_results(map_id)
    }

    pub fn local_graph(&self, map_id: Uuid) -> Option<Vec<Tuple7>> {
        self.runtime.local_graph(map_id)
    }

    /// One anti-entropy round plus standing-query upkeep.
    pub fn gossip_tick(&mut self) {
        gossip_round(&mut self.node, &mut self.transport);
        let now = self.clock_us;
        self.runtime
            .reconcile_maps(&mut self.node, &mut self.transport, now);
        self.pump();
    }

    /// Executes queued side effects and feeds received pushes into the
    /// standing queries. Runs until the effect queue is quiet.
    pub fn pump(&mut self) {
        loop {
            let effects = self.node.take_effects();
            if effects.is_empty() {
                break;
            }
            for e in effects {
                perform_effect(&mut self.node, &mut self.transport, e);
            }
        }
        self.runtime.drain_inbox(&mut self.node);
    }

    /// Publishes this client's verifying key as a tuple.
    pub fn publish_key(&mut self, signer: Uuid, pair: &KeyPair) -> Result<AddReport, AddError> {
        let t = key_announcement(signer, &pair.public, self.clock_us).ok_or_else(|| {
            AddError::Malformed(StoreError::MalformedTuple("key must be 32 bytes".into()))
        })?;
        self.registry.register(signer, pair.public.clone());
        self.add(&t)
    }

    /// Pulls key announcements from the network into the local registry.
    pub fn learn_keys(&mut self) -> Result<usize, LookupError> {
        let p = TuplePattern::new(None, Some(has_key_edge()), None, None);
        let tuples = self.get(&p)?;
        let found = extract_key_announcements(&tuples);
        let n = found.len();
        for (signer, key) in found {
            self.registry.register(signer, key);
        }
        Ok(n)
    }

    pub fn verify(&self, t: &Tuple7) -> VerifyStatus {
        verify_tuple(t, &self.registry, &self.scheme)
    }
}
