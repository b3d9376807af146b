//! Byte-level message format for the TCP transport.
//!
//! Every message is one frame:
//!
//! ```text
//! u32  length of everything after this field (big-endian)
//! u8   kind: request 0x01..=0x09, response = request kind | 0x80
//! [16] request id, echoed verbatim in the response
//! [20] sender node id
//! u16  sender address length, then that many UTF-8 bytes
//! ...  payload, layout fixed per kind
//! ```
//!
//! Payload building blocks: tuples travel in their canonical signed
//! serialization and are self-delimiting, so lists need only a count;
//! patterns are a mask byte followed by the fixed slots in slot order;
//! keys are raw 20 bytes, content ids raw 32. Decoding is strict — every
//! byte must be consumed, unknown kinds and bad counts are errors — so a
//! frame either round-trips exactly or is rejected.

use crate::dht::{Contact, Key, Request, Response, KEY_LEN};
use crate::model::{
    canonical_serialize, parse_tuple_prefix, Tuple7, TupleCodecError, TupleId, TuplePattern, Uuid,
    SLOT_COUNT,
};
use crate::store::Digest;
use std::io::{Read, Write};
use thiserror::Error;

pub const KIND_PING: u8 = 0x01;
pub const KIND_STORE_TUPLE: u8 = 0x02;
pub const KIND_FIND_NODE: u8 = 0x03;
pub const KIND_MULTI_GET: u8 = 0x04;
pub const KIND_SUBSCRIBE: u8 = 0x05;
pub const KIND_UNSUBSCRIBE: u8 = 0x06;
pub const KIND_NOTIFY: u8 = 0x07;
pub const KIND_DIGEST: u8 = 0x08;
pub const KIND_PULL_TUPLES: u8 = 0x09;

pub const RESPONSE_BIT: u8 = 0x80;

/// An over-size frame is refused before allocation.
pub const MAX_FRAME_LEN: u32 = 16 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("truncated message")]
    Truncated,
    #[error("frame of {0} bytes exceeds limit")]
    TooLarge(u32),
    #[error("unknown message kind {0:#04x}")]
    UnknownKind(u8),
    #[error("trailing bytes after payload")]
    Trailing,
    #[error("bad payload: {0}")]
    BadPayload(String),
    #[error("response kind {0:#04x} cannot answer request kind {1:#04x}")]
    KindMismatch(u8, u8),
    #[error(transparent)]
    Tuple(#[from] TupleCodecError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// One decoded frame, minus the length prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub kind: u8,
    pub request_id: [u8; 16],
    pub sender: Contact,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn is_response(&self) -> bool {
        self.kind & RESPONSE_BIT != 0
    }
}

// ---- primitive readers -------------------------------------------------

struct Cur<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cur<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.pos + n > self.bytes.len() {
            return Err(WireError::Truncated);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn uuid(&mut self) -> Result<Uuid, WireError> {
        let b: [u8; 16] = self.take(16)?.try_into().unwrap();
        Ok(Uuid::from_bytes(b))
    }

    fn key(&mut self) -> Result<Key, WireError> {
        let b: [u8; KEY_LEN] = self.take(KEY_LEN)?.try_into().unwrap();
        Ok(Key(b))
    }

    fn tuple_id(&mut self) -> Result<TupleId, WireError> {
        let b: [u8; 32] = self.take(32)?.try_into().unwrap();
        Ok(TupleId(b))
    }

    fn done(&self) -> Result<(), WireError> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(WireError::Trailing)
        }
    }
}

// ---- payload building blocks -------------------------------------------

fn put_addr(out: &mut Vec<u8>, addr: &str) {
    let bytes = addr.as_bytes();
    out.extend_from_slice(&(bytes.len() as u16).to_be_bytes());
    out.extend_from_slice(bytes);
}

fn take_addr(cur: &mut Cur<'_>) -> Result<String, WireError> {
    let len = cur.u16()? as usize;
    let bytes = cur.take(len)?;
    String::from_utf8(bytes.to_vec())
        .map_err(|_| WireError::BadPayload("address is not UTF-8".into()))
}

fn put_contact(out: &mut Vec<u8>, c: &Contact) {
    out.extend_from_slice(&c.id.0);
    put_addr(out, &c.addr);
}

fn take_contact(cur: &mut Cur<'_>) -> Result<Contact, WireError> {
    let id = cur.key()?;
    let addr = take_addr(cur)?;
    Ok(Contact { id, addr })
}

fn put_contacts(out: &mut Vec<u8>, cs: &[Contact]) {
    out.extend_from_slice(&(cs.len() as u16).to_be_bytes());
    for c in cs {
        put_contact(out, c);
    }
}

fn take_contacts(cur: &mut Cur<'_>) -> Result<Vec<Contact>, WireError> {
    let n = cur.u16()? as usize;
    let mut cs = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        cs.push(take_contact(cur)?);
    }
    Ok(cs)
}

fn put_tuple(out: &mut Vec<u8>, t: &Tuple7) {
    out.extend_from_slice(&canonical_serialize(t, true));
}

fn take_tuple(cur: &mut Cur<'_>) -> Result<Tuple7, WireError> {
    let rest = &cur.bytes[cur.pos..];
    let (t, used) = parse_tuple_prefix(rest, true)?;
    cur.pos += used;
    Ok(t)
}

fn put_tuples(out: &mut Vec<u8>, ts: &[Tuple7]) {
    out.extend_from_slice(&(ts.len() as u32).to_be_bytes());
    for t in ts {
        put_tuple(out, t);
    }
}

fn take_tuples(cur: &mut Cur<'_>) -> Result<Vec<Tuple7>, WireError> {
    let n = cur.u32()? as usize;
    let mut ts = Vec::with_capacity(n.min(4096));
    for _ in 0..n {
        ts.push(take_tuple(cur)?);
    }
    Ok(ts)
}

fn put_ids(out: &mut Vec<u8>, ids: &[TupleId]) {
    out.extend_from_slice(&(ids.len() as u32).to_be_bytes());
    for id in ids {
        out.extend_from_slice(id.as_bytes());
    }
}

fn take_ids(cur: &mut Cur<'_>) -> Result<Vec<TupleId>, WireError> {
    let n = cur.u32()? as usize;
    let mut ids = Vec::with_capacity(n.min(65536));
    for _ in 0..n {
        ids.push(cur.tuple_id()?);
    }
    Ok(ids)
}

fn put_pattern(out: &mut Vec<u8>, p: &TuplePattern) {
    out.push(p.mask());
    for slot in 0..SLOT_COUNT {
        if let Some(v) = p.slots[slot] {
            out.extend_from_slice(v.as_bytes());
        }
    }
}

fn take_pattern(cur: &mut Cur<'_>) -> Result<TuplePattern, WireError> {
    let mask = cur.u8()?;
    if mask & 0xf0 != 0 {
        return Err(WireError::BadPayload(format!("bad pattern mask {mask:#04x}")));
    }
    let mut slots = [None; SLOT_COUNT];
    for (i, s) in slots.iter_mut().enumerate() {
        if mask & (1 << i) != 0 {
            *s = Some(cur.uuid()?);
        }
    }
    Ok(TuplePattern { slots })
}

fn put_digest(out: &mut Vec<u8>, d: &Digest) {
    put_ids(out, &d.ids);
}

fn take_digest(cur: &mut Cur<'_>) -> Result<Digest, WireError> {
    let ids = take_ids(cur)?;
    Ok(Digest {
        count: ids.len() as u64,
        ids,
    })
}

// ---- request / response payloads ---------------------------------------

/// Kind byte plus payload bytes for a request.
pub fn encode_request(req: &Request) -> (u8, Vec<u8>) {
    let mut out = Vec::new();
    let kind = match req {
        Request::Ping => KIND_PING,
        Request::StoreTuple(t) => {
            put_tuple(&mut out, t);
            KIND_STORE_TUPLE
        }
        Request::FindNode(k) => {
            out.extend_from_slice(&k.0);
            KIND_FIND_NODE
        }
        Request::MultiGet(p) => {
            put_pattern(&mut out, p);
            KIND_MULTI_GET
        }
        Request::Subscribe {
            pattern,
            subscriber,
        } => {
            put_pattern(&mut out, pattern);
            put_contact(&mut out, subscriber);
            KIND_SUBSCRIBE
        }
        Request::Unsubscribe { sub_id } => {
            out.extend_from_slice(sub_id.as_bytes());
            KIND_UNSUBSCRIBE
        }
        Request::Notify { sub_id, tuples } => {
            out.extend_from_slice(sub_id.as_bytes());
            put_tuples(&mut out, tuples);
            KIND_NOTIFY
        }
        Request::Digest(d) => {
            put_digest(&mut out, d);
            KIND_DIGEST
        }
        Request::PullTuples(ids) => {
            put_ids(&mut out, ids);
            KIND_PULL_TUPLES
        }
    };
    (kind, out)
}

pub fn decode_request(kind: u8, payload: &[u8]) -> Result<Request, WireError> {
    let mut cur = Cur {
        bytes: payload,
        pos: 0,
    };
    let req = match kind {
        KIND_PING => Request::Ping,
        KIND_STORE_TUPLE => Request::StoreTuple(take_tuple(&mut cur)?),
        KIND_FIND_NODE => Request::FindNode(cur.key()?),
        KIND_MULTI_GET => Request::MultiGet(take_pattern(&mut cur)?),
        KIND_SUBSCRIBE => Request::Subscribe {
            pattern: take_pattern(&mut cur)?,
            subscriber: take_contact(&mut cur)?,
        },
        KIND_UNSUBSCRIBE => Request::Unsubscribe {
            sub_id: cur.uuid()?,
        },
        KIND_NOTIFY => Request::Notify {
            sub_id: cur.uuid()?,
            tuples: take_tuples(&mut cur)?,
        },
        KIND_DIGEST => Request::Digest(take_digest(&mut cur)?),
        KIND_PULL_TUPLES => Request::PullTuples(take_ids(&mut cur)?),
        other => return Err(WireError::UnknownKind(other)),
    };
    cur.done()?;
    Ok(req)
}

/// Kind byte plus payload for a response to a request of `req_kind`.
/// The request kind is needed because `Tuples` answers two different
/// requests; a variant that cannot answer `req_kind` is an error.
pub fn encode_response(req_kind: u8, resp: &Response) -> Result<(u8, Vec<u8>), WireError> {
    let mut out = Vec::new();
    let ok = match (req_kind, resp) {
        (KIND_PING, Response::Pong) => true,
        (KIND_STORE_TUPLE, Response::Stored { new }) => {
            out.push(*new as u8);
            true
        }
        (KIND_FIND_NODE, Response::Nodes(cs)) => {
            put_contacts(&mut out, cs);
            true
        }
        (KIND_MULTI_GET | KIND_PULL_TUPLES, Response::Tuples(ts)) => {
            put_tuples(&mut out, ts);
            true
        }
        (KIND_SUBSCRIBE, Response::Subscribed { sub_id, backlog }) => {
            out.extend_from_slice(sub_id.as_bytes());
            put_tuples(&mut out, backlog);
            true
        }
        (KIND_UNSUBSCRIBE, Response::Unsubscribed { removed }) => {
            out.push(*removed as u8);
            true
        }
        (KIND_NOTIFY, Response::NotifyAck) => true,
        (KIND_DIGEST, Response::DigestReply(d)) => {
            put_digest(&mut out, d);
            true
        }
        _ => false,
    };
    if !ok {
        return Err(WireError::KindMismatch(req_kind | RESPONSE_BIT, req_kind));
    }
    Ok((req_kind | RESPONSE_BIT, out))
}

pub fn decode_response(kind: u8, payload: &[u8]) -> Result<Response, WireError> {
    let mut cur = Cur {
        bytes: payload,
        pos: 0,
    };
    let take_bool = |cur: &mut Cur<'_>, what: &str| -> Result<bool, WireError> {
        match cur.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(WireError::BadPayload(format!("bad {what} flag {b}"))),
        }
    };
    let resp = match kind {
        k if k == KIND_PING | RESPONSE_BIT => Response::Pong,
        k if k == KIND_STORE_TUPLE | RESPONSE_BIT => Response::Stored {
            new: take_bool(&mut cur, "stored")?,
        },
        k if k == KIND_FIND_NODE | RESPONSE_BIT => Response::Nodes(take_contacts(&mut cur)?),
        k if k == KIND_MULTI_GET | RESPONSE_BIT || k == KIND_PULL_TUPLES | RESPONSE_BIT => {
            Response::Tuples(take_tuples(&mut cur)?)
        }
        k if k == KIND_SUBSCRIBE | RESPONSE_BIT => Response::Subscribed {
            sub_id: cur.uuid()?,
            backlog: take_tuples(&mut cur)?,
        },
        k if k == KIND_UNSUBSCRIBE | RESPONSE_BIT => Response::Unsubscribed {
            removed: take_bool(&mut cur, "removed")?,
        },
        k if k == KIND_NOTIFY | RESPONSE_BIT => Response::NotifyAck,
        k if k == KIND_DIGEST | RESPONSE_BIT => Response::DigestReply(take_digest(&mut cur)?),
        other => return Err(WireError::UnknownKind(other)),
    };
    cur.done()?;
    Ok(resp)
}

// ---- frame i/o ----------------------------------------------------------

/// Everything after the length prefix.
pub fn encode_frame_body(f: &Frame) -> Vec<u8> {
    let mut out = Vec::with_capacity(1 + 16 + KEY_LEN + 2 + f.sender.addr.len() + f.payload.len());
    out.push(f.kind);
    out.extend_from_slice(&f.request_id);
    put_contact(&mut out, &f.sender);
    out.extend_from_slice(&f.payload);
    out
}

pub fn decode_frame_body(body: &[u8]) -> Result<Frame, WireError> {
    let mut cur = Cur {
        bytes: body,
        pos: 0,
    };
    let kind = cur.u8()?;
    let request_id: [u8; 16] = cur.take(16)?.try_into().unwrap();
    let sender = take_contact(&mut cur)?;
    let payload = cur.bytes[cur.pos..].to_vec();
    Ok(Frame {
        kind,
        request_id,
        sender,
        payload,
    })
}

/// Writes one length-prefixed frame.
pub fn write_frame(w: &mut impl Write, f: &Frame) -> Result<(), WireError> {
    let body = encode_frame_body(f);
    let len = body.len() as u32;
    if len > MAX_FRAME_LEN {
        return Err(WireError::TooLarge(len));
    }
    w.write_all(&len.to_be_bytes())?;
    w.write_all(&body)?;
    w.flush()?;
    Ok(())
}

/// Reads one length-prefixed frame; `Ok(None)` on a clean close before
/// the length field.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Frame>, WireError> {
    let mut len_bytes = [0u8; 4];
    match r.read(&mut len_bytes)? {
        0 => return Ok(None),
        n => {
            if n < 4 {
                r.read_exact(&mut len_bytes[n..])
                    .map_err(|_| WireError::Truncated)?;
            }
        }
    }
    let len = u32::from_be_bytes(len_bytes);
    if len > MAX_FRAME_LEN {
        return Err(WireError::TooLarge(len));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body).map_err(|_| WireError::Truncated)?;
    decode_frame_body(&body).map(Some)
}
