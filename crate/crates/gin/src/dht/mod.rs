//! Kademlia-style overlay: keyspace, routing table, RPC vocabulary, and
//! the store-node state machine with its iterative client operations.

pub mod key;
pub mod node;
pub mod routing;
pub mod rpc;

pub use key::{
    placement_keys, routing_key_for, xor_distance, Distance, Key, NodeId, UnroutablePattern,
    KEY_BITS, KEY_LEN,
};
pub use node::{
    bootstrap, iterative_find_node, multi_get, store_tuple, subscribe_remote, unsubscribe_remote,
    AddOutcome, LookupError, Node, NodeConfig, NodeEvent, Notification, RemoteSub, SideEffect,
};
pub use routing::{Addr, Contact, Observed, RoutingTable};
pub use rpc::{Request, Response, RpcError, Transport};
