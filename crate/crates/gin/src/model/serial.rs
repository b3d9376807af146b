//! Canonical byte serialization of tuples.
//!
//! Layout, in order: source, edge, target, context (16 bytes each,
//! big-endian), timestamp (8 bytes big-endian two's complement), signer
//! presence byte (0/1) followed by 16 signer bytes when present, and —
//! only when the signature is included — a 2-byte big-endian signature
//! length followed by the signature bytes. The same tuple produces the
//! same bytes on every platform, which is what both content hashing and
//! signing run over.

use super::{Tuple7, Uuid};
use std::io::Read;
use thiserror::Error;

/// Byte length of a serialized unsigned tuple without the signature tail.
pub const UNSIGNED_LEN: usize = 16 * 4 + 8 + 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TupleCodecError {
    #[error("unexpected end of input")]
    UnexpectedEof,
    #[error("bad signer presence byte {0:#04x}")]
    BadPresenceByte(u8),
    #[error("trailing bytes after tuple")]
    TrailingBytes,
    #[error("signature present without signer")]
    SignatureWithoutSigner,
    #[error("i/o error: {0}")]
    Io(String),
}

/// Serializes `t` deterministically. With `include_signature`, the
/// signature tail (2-byte length + bytes) is appended; a length of zero
/// encodes an absent signature.
pub fn canonical_serialize(t: &Tuple7, include_signature: bool) -> Vec<u8> {
    let mut out = Vec::with_capacity(UNSIGNED_LEN + 16 + 2 + 64);
    out.extend_from_slice(t.source.as_bytes());
    out.extend_from_slice(t.edge.as_bytes());
    out.extend_from_slice(t.target.as_bytes());
    out.extend_from_slice(t.context.as_bytes());
    out.extend_from_slice(&t.timestamp.to_be_bytes());
    match t.signer {
        Some(s) => {
            out.push(1);
            out.extend_from_slice(s.as_bytes());
        }
        None => out.push(0),
    }
    if include_signature {
        match &t.signature {
            Some(sig) => {
                debug_assert!(sig.len() <= u16::MAX as usize);
                out.extend_from_slice(&(sig.len() as u16).to_be_bytes());
                out.extend_from_slice(sig);
            }
            None => out.extend_from_slice(&0u16.to_be_bytes()),
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TupleCodecError> {
        if self.pos + n > self.bytes.len() {
            return Err(TupleCodecError::UnexpectedEof);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn take_uuid(&mut self) -> Result<Uuid, TupleCodecError> {
        let b = self.take(16)?;
        let mut arr = [0u8; 16];
        arr.copy_from_slice(b);
        Ok(Uuid::from_bytes(arr))
    }
}

/// Parses one tuple from `bytes`, expecting exactly the canonical layout
/// and nothing after it. Strict: the presence byte must be 0 or 1, and a
/// non-empty signature requires a signer.
pub fn parse_tuple(bytes: &[u8], with_signature: bool) -> Result<Tuple7, TupleCodecError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let t = parse_at(&mut cur, with_signature)?;
    if cur.pos != bytes.len() {
        return Err(TupleCodecError::TrailingBytes);
    }
    Ok(t)
}

/// Parses one tuple from a prefix of `bytes`; returns the tuple and the
/// number of bytes consumed. Used when tuples are concatenated.
pub fn parse_tuple_prefix(
    bytes: &[u8],
    with_signature: bool,
) -> Result<(Tuple7, usize), TupleCodecError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let t = parse_at(&mut cur, with_signature)?;
    Ok((t, cur.pos))
}

fn parse_at(cur: &mut Cursor<'_>, with_signature: bool) -> Result<Tuple7, TupleCodecError> {
    let source = cur.take_uuid()?;
    let edge = cur.take_uuid()?;
    let target = cur.take_uuid()?;
    let context = cur.take_uuid()?;
    let ts_bytes: [u8; 8] = cur.take(8)?.try_into().unwrap();
    let timestamp = i64::from_be_bytes(ts_bytes);
    let signer = match cur.take(1)?[0] {
        0 => None,
        1 => Some(cur.take_uuid()?),
        b => return Err(TupleCodecError::BadPresenceByte(b)),
    };
    let signature = if with_signature {
        let len_bytes: [u8; 2] = cur.take(2)?.try_into().unwrap();
        let len = u16::from_be_bytes(len_bytes) as usize;
        if len == 0 {
            None
        } else {
            if signer.is_none() {
                return Err(TupleCodecError::SignatureWithoutSigner);
            }
            Some(cur.take(len)?.to_vec())
        }
    } else {
        None
    };
    Ok(Tuple7 {
        source,
        edge,
        target,
        context,
        timestamp,
        signer,
        signature,
    })
}

/// Reads one signed-layout tuple from a stream, or `Ok(None)` at a clean
/// end of stream. Used to replay append-only log files.
pub fn read_tuple(r: &mut impl Read) -> Result<Option<Tuple7>, TupleCodecError> {
    let mut head = [0u8; UNSIGNED_LEN];
    match read_exact_or_eof(r, &mut head)? {
        0 => return Ok(None),
        n if n < UNSIGNED_LEN => return Err(TupleCodecError::UnexpectedEof),
        _ => {}
    }
    let mut buf = head.to_vec();
    let presence = head[UNSIGNED_LEN - 1];
    match presence {
        0 => {}
        1 => {
            let mut signer = [0u8; 16];
            r.read_exact(&mut signer)
                .map_err(|e| TupleCodecError::Io(e.to_string()))?;
            buf.extend_from_slice(&signer);
        }
        b => return Err(TupleCodecError::BadPresenceByte(b)),
    }
    let mut len_bytes = [0u8; 2];
    r.read_exact(&mut len_bytes)
        .map_err(|e| TupleCodecError::Io(e.to_string()))?;
    buf.extend_from_slice(&len_bytes);
    let len = u16::from_be_bytes(len_bytes) as usize;
    if len > 0 {
        let mut sig = vec![0u8; len];
        r.read_exact(&mut sig)
            .map_err(|e| TupleCodecError::Io(e.to_string()))?;
        buf.extend_from_slice(&sig);
    }
    parse_tuple(&buf, true).map(Some)
}

fn read_exact_or_eof(r: &mut impl Read, buf: &mut [u8]) -> Result<usize, TupleCodecError> {
    let mut read = 0;
    while read < buf.len() {
        match r.read(&mut buf[read..]) {
            Ok(0) => break,
            Ok(n) => read += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(TupleCodecError::Io(e.to_string())),
        }
    }
    Ok(read)
}
