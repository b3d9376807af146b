//! Transport-agnostic RPC vocabulary. Nine request kinds, one response
//! each; the wire module gives them a byte encoding, the simulator skips
//! bytes entirely.

use super::key::Key;
use super::routing::{Addr, Contact};
use crate::model::{Tuple7, TupleId, TuplePattern, Uuid};
use crate::store::Digest;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    /// Liveness probe; also used before evicting a stale bucket entry.
    Ping,
    /// Replicate one tuple at the receiver.
    StoreTuple(Tuple7),
    /// Closest-known-contacts query driving iterative lookup.
    FindNode(Key),
    /// Template scan of the receiver's store.
    MultiGet(TuplePattern),
    /// Register a standing template; matches flow back as `Notify`.
    Subscribe {
        pattern: TuplePattern,
        subscriber: Contact,
    },
    Unsubscribe { sub_id: Uuid },
    /// Store node -> subscriber push for a standing subscription.
    Notify { sub_id: Uuid, tuples: Vec<Tuple7> },
    /// Anti-entropy: here is my digest; yours comes back in the reply.
    Digest(Digest),
    /// Fetch specific tuples by content id.
    PullTuples(Vec<TupleId>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Pong,
    Stored { new: bool },
    Nodes(Vec<Contact>),
    /// Answers both `MultiGet` and `PullTuples`.
    Tuples(Vec<Tuple7>),
    Subscribed { sub_id: Uuid, backlog: Vec<Tuple7> },
    Unsubscribed { removed: bool },
    NotifyAck,
    DigestReply(Digest),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RpcError {
    #[error("request timed out")]
    Timeout,
    #[error("peer unreachable")]
    Unreachable,
    #[error("i/o: {0}")]
    Io(String),
    #[error("protocol: {0}")]
    Protocol(String),
}

/// One blocking request/response exchange. Implementations return the
/// responder's self-reported contact so callers can refresh their
/// routing tables. Callers never pass their own address as `to`.
pub trait Transport {
    fn call(
        &mut self,
        from: &Contact,
        to: &Addr,
        req: &Request,
    ) -> Result<(Contact, Response), RpcError>;
}
