//! An add-only, fully distributed hypergraph tuple store with exactly two
//! client operations: `add` publishes signed 7-tuples into a persistent
//! global graph, and `map` opens a standing conjunctive graph query that
//! incrementally mirrors the matching sub-graph on the local host.
//!
//! Tuples are placed on a Kademlia-style DHT under one key per slot value,
//! so any pattern with at least one fixed slot is routable (`multi_get`).
//! Store nodes run the template-matching half of the query pipeline
//! (alpha subscriptions with insert-time notification); joins over shared
//! variables run at the end host, seeded by pulls and kept current by
//! notifications. Anti-entropy digest exchange re-converges stores after
//! network partitions; the add-only model makes merges conflict-free.
//!
//! ## Crate layout
//!
//! - [`model`] — 7-tuple data model, canonical bytes, content ids,
//!   wildcard patterns, signatures.
//! - [`store`] — per-node append-only tuple store with field indexes,
//!   alpha subscriptions and digests.
//! - [`dht`] — 160-bit keyspace, k-bucket routing, iterative lookup,
//!   tuple placement and `multi_get`.
//! - [`query`] — standing conjunctive queries compiled into an
//!   alpha/beta dataflow with incremental joins.
//! - [`sync`] — anti-entropy gossip configuration and round reports.
//! - [`client`] — the two-call `add`/`map` API and map-handle lifecycle.
//! - [`sim`] — deterministic in-process network simulator (virtual time,
//!   partitions, crashes, clock drift).
//! - [`net`] — length-prefixed TCP transport and the node event loop.
//! - [`scenario`] — scripted multi-agent simulation runs with
//!   post-hoc assertions and JSONL traces.
//! - [`wire`] — binary frame and payload encodings.
//! - [`testkit`] — brute-force oracles and seeded workload generators
//!   used by the test suites.
//!
//! ## Runnable examples
//!
//! One example per major capability, under `examples/`:
//!
//! ```bash
//! cargo run -p gin --example local_store      # embedded store, scans, subscriptions
//! cargo run -p gin --example add_and_get     # DHT placement and multi_get
//! cargo run -p gin --example standing_query  # incremental joins over live adds
//! cargo run -p gin --example signed_provenance
//! cargo run -p gin --example partition_heal  # split-brain and anti-entropy merge
//! cargo run -p gin --example flood_scenario  # scripted multi-agent run
//! cargo run -p gin --example two_node_tcp    # real sockets, two in-process nodes
//! ```
//!
//! The `gin` binary exposes the same machinery operationally:
//! `gin node`, `gin add`, `gin get`, `gin map`, `gin digest`, `gin sim`.

pub mod client;
pub mod dht;
pub mod model;
pub mod net;
pub mod query;
pub mod scenario;
pub mod sim;
pub mod store;
pub mod sync;
pub mod testkit;
pub mod wire;

pub use client::{AddReport, GinClient, MapStatus, VerifyPolicy};
pub use dht::{Addr, Contact, Key, Node, NodeConfig, NodeId, RoutingTable};
pub use model::{
    canonical_serialize, pattern_matches, sign_tuple, tuple_id, verify_tuple, Tuple7, TupleId,
    TuplePattern, VerifyStatus,
};
pub use query::{Binding, GraphQuery, QueryPattern, QueryPlan, Term};
pub use store::{Digest, TupleStore};
pub use sync::GossipConfig;
