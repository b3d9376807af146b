//! Anti-entropy: periodic digest exchange plus pull repair, and the
//! shared executor for deferred node side effects.
//!
//! A gossip round sends our digest to a peer; the reply carries theirs.
//! Each side then pulls exactly what it is missing — the responder
//! queues its pulls as a side effect, so one exchange converges both
//! directions. Pulled tuples go through the normal insert path, which
//! means standing-query subscriptions fire for them just as for direct
//! stores: convergence and delivery healing are the same mechanism.

use crate::dht::{
    Contact, Node, NodeEvent, NodeId, Request, Response, RpcError, SideEffect, Transport,
};
use crate::model::TupleId;
use crate::store::diff;
use rand::Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GossipConfig {
    /// Time between periodic rounds; the driver owns the timer.
    pub round_interval_us: i64,
    /// Peers contacted per round.
    pub fanout: usize,
    /// Largest id list per PULL_TUPLES request.
    pub max_pull_batch: usize,
}

impl Default for GossipConfig {
    fn default() -> Self {
        GossipConfig {
            round_interval_us: 1_000_000,
            fanout: 1,
            max_pull_batch: 256,
        }
    }
}

/// What one periodic round did.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GossipOutcome {
    pub peers: Vec<NodeId>,
    pub pulled: usize,
}

/// One digest exchange with a specific peer; pulls whatever the peer
/// has that we lack. The peer's own catch-up pulls ride back on its
/// effect queue.
pub fn gossip_with(
    node: &mut Node,
    transport: &mut dyn Transport,
    peer: &Contact,
) -> Result<usize, RpcError> {
    if peer.id == node.contact.id {
        return Ok(0);
    }
    node.push_event(NodeEvent::Gossip { peer: peer.id });
    let local = node.store.digest();
    match transport.call(&node.contact, &peer.addr, &Request::Digest(local.clone()))? {
        (responder, Response::DigestReply(remote)) => {
            node.touch(&responder);
            let (missing_here, _) = diff(&local, &remote);
            Ok(do_pull(node, transport, peer, &missing_here))
        }
        _ => Err(RpcError::Protocol("unexpected reply to digest".into())),
    }
}

/// Fetches the listed tuples from `peer` in batches and inserts them
/// locally. Returns how many were new here.
pub fn do_pull(
    node: &mut Node,
    transport: &mut dyn Transport,
    peer: &Contact,
    ids: &[TupleId],
) -> usize {
    let batch = node.config.gossip.max_pull_batch.max(1);
    let mut new = 0usize;
    for chunk in ids.chunks(batch) {
        let req = Request::PullTuples(chunk.to_vec());
        match transport.call(&node.contact, &peer.addr, &req) {
            Ok((responder, Response::Tuples(tuples))) => {
                node.touch(&responder);
                for t in tuples {
                    match node.local_insert(&t) {
                        Ok(true) => new += 1,
                        Ok(false) => {}
                        Err(e) => log::warn!("dropping pulled tuple: {e}"),
                    }
                }
            }
            Ok(_) | Err(_) => break,
        }
    }
    if new > 0 {
        node.push_event(NodeEvent::Pulled {
            peer: peer.id,
            count: new,
        });
    }
    new
}

/// One periodic round: flush pending notify retries, then exchange
/// digests with `fanout` peers chosen by the node's own RNG.
pub fn gossip_round(node: &mut Node, transport: &mut dyn Transport) -> GossipOutcome {
    node.flush_notify_retries();
    let mut contacts = node.table.contacts();
    contacts.sort_by_key(|c| c.id);
    let mut out = GossipOutcome::default();
    let fanout = node.config.gossip.fanout.max(1).min(contacts.len());
    for _ in 0..fanout {
        if contacts.is_empty() {
            break;
        }
        let peer = contacts.remove(node.rng.gen_range(0..contacts.len()));
        if let Ok(pulled) = gossip_with(node, transport, &peer) {
            out.pulled += pulled;
        }
        out.peers.push(peer.id);
    }
    // Probe one parked contact per round. When a partition heals this
    // is how the halves rediscover each other; the digest exchange
    // doubles as the liveness check and the first repair.
    if let Some(peer) = node.parked_probe() {
        if let Ok(pulled) = gossip_with(node, transport, &peer) {
            out.pulled += pulled;
            out.peers.push(peer.id);
        }
    }
    out
}

/// Queues an immediate digest exchange toward peers that just became
/// reachable again, instead of waiting out the gossip interval.
pub fn on_reachability_change(node: &mut Node, newly_reachable: &[Contact]) {
    for peer in newly_reachable {
        if peer.id != node.contact.id {
            node.push_effect(SideEffect::GossipWith { peer: peer.clone() });
        }
    }
}

/// Executes one deferred side effect against the transport. Drivers
/// drain [`Node::take_effects`] and feed each effect here; new effects
/// queued during execution are picked up on the driver's next sweep.
pub fn perform_effect(node: &mut Node, transport: &mut dyn Transport, effect: SideEffect) {
    match effect {
        SideEffect::Notify { to, sub_id, tuples } => {
            let req = Request::Notify {
                sub_id,
                tuples: tuples.clone(),
            };
            match transport.call(&node.contact, &to.addr, &req) {
                Ok((responder, _)) => node.touch(&responder),
                Err(_) => node.requeue_notify(to, sub_id, tuples),
            }
        }
        SideEffect::PullFrom { peer, ids } => {
            do_pull(node, transport, &peer, &ids);
        }
        SideEffect::GossipWith { peer } => {
            let _ = gossip_with(node, transport, &peer);
        }
        SideEffect::PingReplace { stale, candidate } => {
            match transport.call(&node.contact, &stale.addr, &Request::Ping) {
                Ok((responder, _)) => node.touch(&responder),
                Err(_) => {
                    node.table.evict_and_insert(&stale.id, candidate);
                    node.park_unreachable(&stale);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dht::{Addr, Key, NodeConfig};
    use crate::model::{Tuple7, TuplePattern, Uuid};
    use std::collections::BTreeMap;

    /// Minimal multi-node harness: nodes live in `Option` slots so the
    /// transport can hand out a target while the caller holds another.
    struct MiniNet {
        nodes: BTreeMap<Addr, Option<Node>>,
        pull_calls: usize,
    }

    impl MiniNet {
        fn new(nodes: Vec<Node>) -> Self {
            MiniNet {
                nodes: nodes
                    .into_iter()
                    .map(|n| (n.contact.addr.clone(), Some(n)))
                    .collect(),
                pull_calls: 0,
            }
        }

        fn with<R>(&mut self, addr: &str, f: impl FnOnce(&mut Node, &mut MiniNet) -> R) -> R {
            let mut node = self.nodes.get_mut(addr).unwrap().take().unwrap();
            let r = f(&mut node, self);
            self.nodes.get_mut(addr).unwrap().replace(node);
            r
        }

        /// Drain every effect queue until quiet.
        fn pump(&mut self) {
            loop {
                let next = self.nodes.iter().find_map(|(a, n)| {
                    n.as_ref()
                        .filter(|n| n.has_effects())
                        .map(|_| a.clone())
                });
                let Some(addr) = next else { break };
                self.with(&addr, |node, net| {
                    for e in node.take_effects() {
                        perform_effect(node, net, e);
                    }
                });
            }
        }

        fn digest_of(&self, addr: &str) -> crate::store::Digest {
            self.nodes[addr].as_ref().unwrap().store.digest()
        }
    }

    impl Transport for MiniNet {
        fn call(
            &mut self,
            from: &Contact,
            to: &Addr,
            req: &Request,
        ) -> Result<(Contact, Response), RpcError> {
            if matches!(req, Request::PullTuples(_)) {
                self.pull_calls += 1;
            }
            let slot = self.nodes.get_mut(to).ok_or(RpcError::Unreachable)?;
            let mut node = slot.take().expect("transport re-entered busy node");
            let resp = node.handle_request(from, req, 0);
            let contact = node.contact.clone();
            self.nodes.get_mut(to).unwrap().replace(node);
            Ok((contact, resp))
        }
    }

    fn mk_node(label: &str) -> Node {
        Node::new(
            Key::from_seed(label.as_bytes()),
            format!("addr-{label}"),
            NodeConfig::desk(),
            42,
        )
    }

    fn tup(n: u128) -> Tuple7 {
        Tuple7::new(
            Uuid::from_u128(n),
            Uuid::from_u128(n + 1),
            Uuid::from_u128(n + 2),
            Uuid::from_u128(n + 3),
            n as i64,
        )
    }

    #[test]
    fn one_exchange_converges_both_sides() {
        let mut a = mk_node("a");
        let mut b = mk_node("b");
        a.local_insert(&tup(1)).unwrap();
        b.local_insert(&tup(2)).unwrap();
        b.local_insert(&tup(3)).unwrap();
        let b_contact = b.contact.clone();
        a.table.observe(b_contact.clone());

        let mut net = MiniNet::new(vec![b]);
        let pulled = gossip_with(&mut a, &mut net, &b_contact).unwrap();
        assert_eq!(pulled, 2, "a pulls what b had");
        // b queued its own pull of tup(1); run it.
        let a_digest = a.store.digest();
        net.nodes.insert(a.contact.addr.clone(), Some(a));
        net.pump();
        assert_eq!(net.digest_of("addr-a"), a_digest);
        assert_eq!(net.digest_of("addr-b"), a_digest);
        assert_eq!(a_digest.count, 3);
    }

    #[test]
    fn pulls_are_batched() {
        let mut a = mk_node("a");
        let mut b = mk_node("b");
        a.config.gossip.max_pull_batch = 2;
        for n in 0..5 {
            b.local_insert(&tup(n * 10)).unwrap();
        }
        let b_contact = b.contact.clone();
        let mut net = MiniNet::new(vec![b]);
        let pulled = gossip_with(&mut a, &mut net, &b_contact).unwrap();
        assert_eq!(pulled, 5);
        assert_eq!(net.pull_calls, 3, "5 ids at batch size 2");
    }

    #[test]
    fn pulled_insert_fires_standing_subscription() {
        // b holds the alpha subscription for a; b pulls a matching tuple
        // from c during gossip, and the match is pushed to a.
        let a = mk_node("a");
        let mut b = mk_node("b");
        let mut c = mk_node("c");
        let pattern = TuplePattern::new(Some(Uuid::from_u128(100)), None, None, None);
        let (sub_id, backlog) = b.store.register_alpha(pattern, a.contact.clone(), 0);
        assert!(backlog.is_empty());

        let matching = Tuple7::new(
            Uuid::from_u128(100),
            Uuid::from_u128(5),
            Uuid::from_u128(6),
            Uuid::from_u128(7),
            99,
        );
        c.local_insert(&matching).unwrap();
        c.local_insert(&tup(500)).unwrap(); // non-matching traffic

        let c_contact = c.contact.clone();
        let a_addr = a.contact.addr.clone();
        let b_addr = b.contact.addr.clone();
        let mut net = MiniNet::new(vec![a, c]);
        let pulled = gossip_with(&mut b, &mut net, &c_contact).unwrap();
        assert_eq!(pulled, 2);
        net.nodes.insert(b_addr, Some(b));
        net.pump();

        net.with(&a_addr, |a, _| {
            let inbox = a.take_inbox();
            assert_eq!(inbox.len(), 1);
            assert_eq!(inbox[0].sub_id, sub_id);
            assert_eq!(inbox[0].tuples, vec![matching.clone()]);
        });
    }

    #[test]
    fn failed_notify_retries_on_next_round() {
        let mut b = mk_node("b");
        let sub_contact = Contact::new(Key::from_seed(b"ghost"), "addr-ghost");
        let pattern = TuplePattern::wildcard();
        let (sub_id, _) = b.store.register_alpha(pattern, sub_contact.clone(), 0);

        // Subscriber not in the net: the notify fails and is parked.
        let mut net = MiniNet::new(vec![]);
        b.local_insert(&tup(7)).unwrap();
        for e in b.take_effects() {
            perform_effect(&mut b, &mut net, e);
        }
        assert_eq!(b.pending_retry_count(), 1);

        // Subscriber appears; the next round flushes the retry through.
        let mut ghost = Node::new(sub_contact.id, "addr-ghost", NodeConfig::desk(), 1);
        ghost.table.observe(b.contact.clone());
        net.nodes.insert("addr-ghost".into(), Some(ghost));
        b.table.observe(sub_contact.clone());
        gossip_round(&mut b, &mut net);
        for e in b.take_effects() {
            perform_effect(&mut b, &mut net, e);
        }
        assert_eq!(b.pending_retry_count(), 0);
        net.with("addr-ghost", |g, _| {
            let inbox = g.take_inbox();
            assert_eq!(inbox.len(), 1);
            assert_eq!(inbox[0].sub_id, sub_id);
        });
    }

    #[test]
    fn parked_peer_is_probed_back_into_the_table() {
        // a's only contact goes dark: a failed lookup drops it from the
        // routing table but parks it. Once the peer answers again, the
        // per-round probe restores the link and syncs the stores.
        let mut a = mk_node("a");
        let mut b = mk_node("b");
        b.local_insert(&tup(9)).unwrap();
        let b_contact = b.contact.clone();
        a.table.observe(b_contact.clone());

        let mut net = MiniNet::new(vec![]); // b unreachable
        crate::dht::iterative_find_node(&mut a, &mut net, &Key::from_seed(b"t"));
        assert!(!a.table.contains(&b_contact.id), "dead contact dropped");
        assert_eq!(a.parked_peers(), vec![b_contact.clone()]);

        // Still dark: the probe fails and b stays parked.
        gossip_round(&mut a, &mut net);
        assert_eq!(a.parked_peers(), vec![b_contact.clone()]);

        // Back up: the next round's probe rediscovers and repairs.
        b.table.observe(a.contact.clone());
        net.nodes.insert(b_contact.addr.clone(), Some(b));
        gossip_round(&mut a, &mut net);
        assert!(a.table.contains(&b_contact.id), "probed peer re-learned");
        assert!(a.parked_peers().is_empty());
        assert_eq!(a.store.digest().count, 1, "probe exchange pulled b's tuple");
    }

    #[test]
    fn reachability_change_queues_fast_gossip() {
        let mut a = mk_node("a");
        let peer = Contact::new(Key::from_seed(b"p"), "addr-p");
        let self_contact = a.contact.clone();
        on_reachability_change(&mut a, &[peer.clone(), self_contact]);
        assert_eq!(a.take_effects(), vec![SideEffect::GossipWith { peer }]);
    }
}
