//! Deterministic in-process network simulator.
//!
//! Every node lives in one `SimNet` behind an `Option` slot; driving a
//! node means taking it out, letting it talk to the rest of the network
//! through the simulator's [`Transport`] impl, and putting it back. A
//! virtual clock advances by the configured latency on every call, a
//! seeded RNG decides message drops, and partitions are group labels
//! checked at delivery time — so a run is a pure function of its seed
//! and the sequence of operations, and two identical runs produce
//! byte-identical traces.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::client::{ClientRuntime, MapError, MapStatus};
use crate::dht::{
    bootstrap, multi_get, store_tuple, subscribe_remote, AddOutcome, Addr, Contact, Key,
    LookupError, Node, NodeConfig, Request, Response, RpcError, Transport,
};
use crate::model::{Tuple7, TuplePattern, Uuid};
use crate::query::{Binding, GraphQuery};
use crate::store::{Digest, StoreError};
use crate::sync::{gossip_round, on_reachability_change, perform_effect};

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub seed: u64,
    pub node_config: NodeConfig,
    /// Virtual time added per RPC delivery.
    pub latency_us: i64,
    /// Probability a given RPC is lost (the caller sees a timeout).
    pub drop_rate: f64,
    /// Each node's local clock is offset from simulated time by a value
    /// drawn uniformly from `[-clock_drift_us, clock_drift_us]`.
    pub clock_drift_us: i64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            node_config: NodeConfig::desk(),
            latency_us: 1_000,
            drop_rate: 0.0,
            clock_drift_us: 0,
        }
    }
}

pub struct SimNet {
    cfg: SimConfig,
    slots: Vec<Option<Node>>,
    runtimes: Vec<ClientRuntime>,
    addr_index: BTreeMap<Addr, usize>,
    clock_offsets: Vec<i64>,
    /// Nodes reach each other iff their group labels match.
    groups: Vec<usize>,
    crashed: Vec<bool>,
    next_gossip_at: Vec<i64>,
    rng: ChaCha20Rng,
    now_us: i64,
    trace: Vec<String>,
}

impl Transport for SimNet {
    fn call(
        &mut self,
        from: &Contact,
        to: &Addr,
        req: &Request,
    ) -> Result<(Contact, Response), RpcError> {
        self.now_us += self.cfg.latency_us;
        let Some(&to_idx) = self.addr_index.get(to) else {
            return Err(RpcError::Unreachable);
        };
        let from_idx = *self
            .addr_index
            .get(&from.addr)
            .expect("caller is a simulated node");
        if self.crashed[to_idx] || self.groups[from_idx] != self.groups[to_idx] {
            return Err(RpcError::Unreachable);
        }
        if self.cfg.drop_rate > 0.0 && self.rng.gen::<f64>() < self.cfg.drop_rate {
            return Err(RpcError::Timeout);
        }
        let mut node = self.slots[to_idx]
            .take()
            .expect("no re-entrant calls to a node being driven");
        let now = self.now_us + self.clock_offsets[to_idx];
        let resp = node.handle_request(from, req, now);
        let contact = node.contact.clone();
        self.slots[to_idx] = Some(node);
        Ok((contact, resp))
    }
}

impl SimNet {
    /// Builds `n` nodes and joins them into one network: node 0 starts
    /// alone, each later node bootstraps off it. Message drops are
    /// disabled while joining so the initial topology is complete.
    pub fn build(n: usize, cfg: SimConfig) -> SimNet {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let mut net = SimNet {
            slots: Vec::with_capacity(n),
            runtimes: Vec::with_capacity(n),
            addr_index: BTreeMap::new(),
            clock_offsets: Vec::with_capacity(n),
            groups: vec![0; n],
            crashed: vec![false; n],
            next_gossip_at: Vec::with_capacity(n),
            rng: ChaCha20Rng::seed_from_u64(rng.gen()),
            now_us: 0,
            trace: Vec::new(),
            cfg: cfg.clone(),
        };
        let interval = cfg.node_config.gossip.round_interval_us;
        for i in 0..n {
            let label = format!("sim-node-{i}-{}", cfg.seed);
            let id = Key::from_seed(label.as_bytes());
            let addr = format!("sim:{i}");
            net.addr_index.insert(addr.clone(), i);
            net.slots
                .push(Some(Node::new(id, addr, cfg.node_config.clone(), cfg.seed)));
            net.runtimes.push(ClientRuntime::new());
            let drift = if cfg.clock_drift_us > 0 {
                rng.gen_range(-cfg.clock_drift_us..=cfg.clock_drift_us)
            } else {
                0
            };
            net.clock_offsets.push(drift);
            net.next_gossip_at.push(interval);
        }
        let steady_drop = net.cfg.drop_rate;
        net.cfg.drop_rate = 0.0;
        for i in 1..n {
            let mut node = net.slots[i].take().expect("building");
            bootstrap(&mut node, &mut net, &["sim:0".to_string()])
                .expect("bootstrap within the simulator");
            net.slots[i] = Some(node);
            net.pump();
        }
        net.cfg.drop_rate = steady_drop;
        net
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn now_us(&self) -> i64 {
        self.now_us
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// The given node's local clock (simulated time plus its drift).
    pub fn local_time(&self, i: usize) -> i64 {
        self.now_us + self.clock_offsets[i]
    }

    pub fn node(&self, i: usize) -> &Node {
        self.slots[i].as_ref().expect("node is not being driven")
    }

    pub fn node_mut(&mut self, i: usize) -> &mut Node {
        self.slots[i].as_mut().expect("node is not being driven")
    }

    /// Runs queued side effects network-wide until everything is quiet,
    /// then files received pushes into the standing queries.
    pub fn pump(&mut self) {
        loop {
            let Some(i) = (0..self.slots.len()).find(|&i| {
                !self.crashed[i]
                    && self.slots[i]
                        .as_ref()
                        .map(|n| n.has_effects())
                        .unwrap_or(false)
            }) else {
                break;
            };
            let mut node = self.slots[i].take().expect("checked above");
            for e in node.take_effects() {
                perform_effect(&mut node, self, e);
            }
            self.slots[i] = Some(node);
        }
        self.deliver_inboxes();
        self.drain_events();
    }

    fn deliver_inboxes(&mut self) {
        for i in 0..self.slots.len() {
            let Some(node) = self.slots[i].as_mut() else {
                continue;
            };
            for n in node.take_inbox() {
                self.runtimes[i].on_notification(&n);
            }
        }
    }

    fn drain_events(&mut self) {
        let t = self.now_us;
        for i in 0..self.slots.len() {
            let Some(node) = self.slots[i].as_mut() else {
                continue;
            };
            for ev in node.take_events() {
                let mut v = ev.json();
                let obj = v.as_object_mut().expect("events are objects");
                obj.insert("t".into(), serde_json::json!(t));
                obj.insert("node".into(), serde_json::json!(i));
                self.trace.push(v.to_string());
            }
        }
    }

    /// Advances simulated time and runs one maintenance pass: gossip
    /// rounds for nodes whose schedule came due, replica reconciliation
    /// for standing queries, then a full pump.
    pub fn tick(&mut self, dt_us: i64) {
        self.now_us += dt_us;
        let interval = self.cfg.node_config.gossip.round_interval_us;
        for i in 0..self.slots.len() {
            if self.crashed[i] || self.next_gossip_at[i] > self.now_us {
                continue;
            }
            while self.next_gossip_at[i] <= self.now_us {
                self.next_gossip_at[i] += interval;
            }
            let mut node = self.slots[i].take().expect("tick is not re-entrant");
            gossip_round(&mut node, self);
            self.slots[i] = Some(node);
            self.pump();
        }
        for i in 0..self.slots.len() {
            if self.crashed[i] {
                continue;
            }
            let mut node = self.slots[i].take().expect("tick is not re-entrant");
            let mut rt = std::mem::take(&mut self.runtimes[i]);
            let now = self.now_us + self.clock_offsets[i];
            rt.reconcile_maps(&mut node, self, now);
            self.runtimes[i] = rt;
            self.slots[i] = Some(node);
        }
        self.pump();
    }

    /// Ticks one gossip interval at a time until every live store holds
    /// the same tuple set; returns the number of rounds it took.
    pub fn converge(&mut self, max_rounds: usize) -> Option<usize> {
        let interval = self.cfg.node_config.gossip.round_interval_us;
        for round in 1..=max_rounds {
            if self.converged() {
                return Some(round - 1);
            }
            self.tick(interval);
        }
        if self.converged() {
            Some(max_rounds)
        } else {
            None
        }
    }

    /// True iff all live nodes report identical digests.
    pub fn converged(&self) -> bool {
        let mut first: Option<Digest> = None;
        for (i, slot) in self.slots.iter().enumerate() {
            if self.crashed[i] {
                continue;
            }
            let d = slot.as_ref().expect("not driving").store.digest();
            match &first {
                None => first = Some(d),
                Some(f) => {
                    if *f != d {
                        return false;
                    }
                }
            }
        }
        true
    }

    pub fn digests(&self) -> Vec<Digest> {
        self.slots
            .iter()
            .map(|s| s.as_ref().expect("not driving").store.digest())
            .collect()
    }

    /// Splits the network: nodes reach each other iff they share a
    /// group label.
    pub fn partition(&mut self, groups: &[usize]) {
        assert_eq!(groups.len(), self.slots.len(), "one group per node");
        self.groups = groups.to_vec();
    }

    /// Removes all partitions. Every node immediately schedules an
    /// anti-entropy exchange with its known peers, so a subsequent
    /// [`SimNet::pump`] (or tick) starts reconciliation without waiting
    /// for the next gossip round.
    pub fn heal(&mut self) {
        self.groups = vec![0; self.slots.len()];
        for i in 0..self.slots.len() {
            if self.crashed[i] {
                continue;
            }
            let node = self.slots[i].as_mut().expect("not driving");
            let mut peers = node.table.contacts();
            peers.extend(node.parked_peers());
            on_reachability_change(node, &peers);
        }
        self.pump();
    }

    pub fn crash(&mut self, i: usize) {
        self.crashed[i] = true;
    }

    /// Brings a crashed node back; its store is as it was at crash time
    /// and it rejoins via anti-entropy.
    pub fn restart(&mut self, i: usize) {
        self.crashed[i] = false;
        let node = self.slots[i].as_mut().expect("not driving");
        let mut peers = node.table.contacts();
        peers.extend(node.parked_peers());
        on_reachability_change(node, &peers);
        self.pump();
    }

    // ---- client operations, executed from a chosen node ------------

    fn with_node<R>(&mut self, i: usize, f: impl FnOnce(&mut Node, &mut SimNet) -> R) -> R {
        assert!(!self.crashed[i], "node {i} is crashed");
        let mut node = self.slots[i].take().expect("not re-entrant");
        let out = f(&mut node, self);
        self.slots[i] = Some(node);
        self.pump();
        out
    }

    pub fn add_from(&mut self, i: usize, t: &Tuple7) -> Result<AddOutcome, StoreError> {
        self.with_node(i, |node, net| store_tuple(node, net, t))
    }

    pub fn get_from(&mut self, i: usize, p: &TuplePattern) -> Result<Vec<Tuple7>, LookupError> {
        self.with_node(i, |node, net| multi_get(node, net, p))
    }

    pub fn subscribe_from(
        &mut self,
        i: usize,
        p: &TuplePattern,
    ) -> Result<(Vec<crate::dht::RemoteSub>, usize), LookupError> {
        let now = self.local_time(i);
        self.with_node(i, |node, net| subscribe_remote(node, net, p, now))
    }

    pub fn map_on(&mut self, i: usize, q: &GraphQuery) -> Result<Uuid, MapError> {
        assert!(!self.crashed[i], "node {i} is crashed");
        let mut node = self.slots[i].take().expect("not re-entrant");
        let mut rt = std::mem::take(&mut self.runtimes[i]);
        let now = self.now_us + self.clock_offsets[i];
        let out = rt.map(&mut node, self, q, now);
        self.runtimes[i] = rt;
        self.slots[i] = Some(node);
        self.pump();
        out
    }

    pub fn unmap_on(&mut self, i: usize, map_id: Uuid) -> Result<(), MapError> {
        assert!(!self.crashed[i], "node {i} is crashed");
        let mut node = self.slots[i].take().expect("not re-entrant");
        let mut rt = std::mem::take(&mut self.runtimes[i]);
        let out = rt.unmap(&mut node, self, map_id);
        self.runtimes[i] = rt;
        self.slots[i] = Some(node);
        self.pump();
        out
    }

    pub fn status_of(&self, i: usize, map_id: Uuid) -> Option<MapStatus> {
        self.runtimes[i].status(map_id)
    }

    pub fn results_of(&self, i: usize, map_id: Uuid) -> Vec<Binding> {
        self.runtimes[i]
            .results(map_id)
            .map(|r| r.to_vec())
            .unwrap_or_default()
    }

    pub fn take_new_results(&mut self, i: usize, map_id: Uuid) -> Vec<Binding> {
        self.runtimes[i].take_new_results(map_id)
    }

    pub fn local_graph_of(&self, i: usize, map_id: Uuid) -> Vec<Tuple7> {
        self.runtimes[i].local_graph(map_id).unwrap_or_default()
    }

    /// Appends a caller-supplied line to the event log, in order with
    /// the node events. Harnesses use this for their own milestones.
    pub fn trace_push(&mut self, line: String) {
        self.trace.push(line);
    }

    /// The run's event log: one JSON object per line.
    pub fn trace(&self) -> String {
        let mut out = self.trace.join("\n");
        if !out.is_empty() {
            out.push('\n');
        }
        out
    }

    pub fn trace_lines(&self) -> &[String] {
        &self.trace
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tuple_id;
    use crate::query::{QueryPattern, Term};
    use crate::testkit::{brute_filter, random_tuples, seeded_vocab};
    use rand::SeedableRng;

    fn u(n: u128) -> Uuid {
        Uuid::from_u128(n)
    }

    #[test]
    fn replicated_get_sees_every_add() {
        let mut net = SimNet::build(8, SimConfig::default());
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let vocab = seeded_vocab(&mut rng, 6);
        let tuples = random_tuples(&mut rng, 60, &vocab);
        for t in &tuples {
            let out = net.add_from(0, t).unwrap();
            assert!(out.stored > 0);
        }
        let p = TuplePattern::new(None, Some(vocab[0]), None, None);
        let got = net.get_from(3, &p).unwrap();
        let want = brute_filter(&tuples, &p);
        assert_eq!(
            got.iter().map(tuple_id).collect::<Vec<_>>(),
            want.iter().map(tuple_id).collect::<Vec<_>>()
        );
    }

    #[test]
    fn standing_query_delivers_across_nodes() {
        let mut net = SimNet::build(6, SimConfig::default());
        let rel = u(500);
        let q = GraphQuery::new(vec![
            QueryPattern::new(Term::Var("a".into()), Term::Const(rel), Term::Var("b".into()), Term::Any),
            QueryPattern::new(Term::Var("b".into()), Term::Const(rel), Term::Var("c".into()), Term::Any),
        ]);
        let map_id = net.map_on(5, &q).unwrap();
        assert_eq!(net.status_of(5, map_id), Some(MapStatus::Live));

        net.add_from(0, &Tuple7::new(u(1), rel, u(2), u(9), 100)).unwrap();
        net.add_from(1, &Tuple7::new(u(2), rel, u(3), u(9), 101)).unwrap();
        let fresh = net.take_new_results(5, map_id);
        assert_eq!(fresh.len(), 1);
        assert_eq!(fresh[0].get("a"), Some(u(1)));
        assert_eq!(fresh[0].get("c"), Some(u(3)));
        // Replica duplicates were absorbed, not re-delivered.
        assert!(net.take_new_results(5, map_id).is_empty());
    }

    #[test]
    fn partition_blocks_then_heal_reconciles() {
        let mut net = SimNet::build(6, SimConfig::default());
        net.partition(&[0, 0, 0, 1, 1, 1]);
        let t_left = Tuple7::new(u(1), u(2), u(3), u(4), 50);
        let t_right = Tuple7::new(u(5), u(6), u(7), u(8), 51);
        net.add_from(0, &t_left).unwrap();
        net.add_from(5, &t_right).unwrap();
        assert!(!net.converged());

        net.heal();
        let rounds = net.converge(16).expect("should reconcile");
        assert!(rounds <= 16);
        for i in 0..6 {
            assert!(net.node(i).store.contains(&tuple_id(&t_left)));
            assert!(net.node(i).store.contains(&tuple_id(&t_right)));
        }
    }

    #[test]
    fn crashed_node_rejoins_by_gossip() {
        let mut net = SimNet::build(5, SimConfig::default());
        net.crash(2);
        let t = Tuple7::new(u(10), u(11), u(12), u(13), 60);
        net.add_from(0, &t).unwrap();
        net.restart(2);
        net.converge(16).expect("restarted node catches up");
        assert!(net.node(2).store.contains(&tuple_id(&t)));
    }

    #[test]
    fn identical_seeds_produce_identical_traces() {
        let run = |seed: u64| {
            let cfg = SimConfig {
                seed,
                drop_rate: 0.05,
                clock_drift_us: 2_000,
                ..SimConfig::default()
            };
            let mut net = SimNet::build(6, cfg);
            let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xfeed);
            let vocab = seeded_vocab(&mut rng, 4);
            for t in random_tuples(&mut rng, 40, &vocab) {
                let _ = net.add_from(3, &t);
            }
            net.partition(&[0, 0, 0, 1, 1, 1]);
            net.tick(1_000_000);
            net.heal();
            net.converge(20);
            net.trace()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10), "different seeds should diverge");
    }

    #[test]
    fn map_registered_during_partition_delivers_after_heal() {
        let mut net = SimNet::build(6, SimConfig::default());
        let interval = net.config().node_config.gossip.round_interval_us;
        let rel = u(700);
        // Cut the mapper off from the rest, then register: the only
        // replica it can find is itself.
        net.partition(&[0, 0, 0, 0, 0, 1]);
        let q = GraphQuery::new(vec![QueryPattern::new(
            Term::Var("x".into()),
            Term::Const(rel),
            Term::Var("y".into()),
            Term::Any,
        )]);
        let map_id = net.map_on(5, &q).unwrap();

        // Published on the majority side, invisible to the mapper.
        net.add_from(0, &Tuple7::new(u(21), rel, u(22), u(0), 200)).unwrap();
        assert!(net.take_new_results(5, map_id).is_empty());

        // After healing, reconciliation re-registers at the true
        // replica set (backlog included), and later adds flow live.
        net.heal();
        net.tick(interval);
        let fresh = net.take_new_results(5, map_id);
        assert_eq!(fresh.len(), 1);
        assert_eq!(fresh[0].get("x"), Some(u(21)));
        assert_eq!(net.status_of(5, map_id), Some(MapStatus::Live));

        net.add_from(1, &Tuple7::new(u(23), rel, u(24), u(0), 201)).unwrap();
        let fresh = net.take_new_results(5, map_id);
        assert_eq!(fresh.len(), 1);
        assert_eq!(fresh[0].get("x"), Some(u(23)));
    }
}
