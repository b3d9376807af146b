//! Line-oriented text formats for tuples and patterns.
//!
//! Tuple lines carry `source edge target context timestamp` and, for
//! signed tuples, `signer signature_hex` appended. Fields are
//! space-separated, UUIDs in hyphenated hex, one tuple per line; `#`
//! begins a comment line. Pattern text is four whitespace-separated
//! terms, each a UUID or `*`.

use super::{Tuple7, TuplePattern, Uuid};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TextError {
    #[error("line {line}: expected 5 or 7 fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: bad uuid `{value}`")]
    BadUuid { line: usize, value: String },
    #[error("line {line}: bad timestamp `{value}`")]
    BadTimestamp { line: usize, value: String },
    #[error("line {line}: bad signature hex `{value}`")]
    BadSignature { line: usize, value: String },
    #[error("pattern needs exactly 4 terms, found {0}")]
    PatternArity(usize),
    #[error("bad pattern term `{0}`")]
    BadPatternTerm(String),
}

pub fn format_tuple(t: &Tuple7) -> String {
    let mut line = format!(
        "{} {} {} {} {}",
        t.source, t.edge, t.target, t.context, t.timestamp
    );
    if let (Some(signer), Some(sig)) = (&t.signer, &t.signature) {
        line.push_str(&format!(" {} {}", signer, hex::encode(sig)));
    }
    line
}

/// Parses one tuple line; `line_no` is used for error reporting only.
pub fn parse_tuple_line(s: &str, line_no: usize) -> Result<Tuple7, TextError> {
    let fields: Vec<&str> = s.split_whitespace().collect();
    if fields.len() != 5 && fields.len() != 7 {
        return Err(TextError::FieldCount {
            line: line_no,
            found: fields.len(),
        });
    }
    let uuid_at = |i: usize| {
        fields[i].parse::<Uuid>().map_err(|_| TextError::BadUuid {
            line: line_no,
            value: fields[i].to_string(),
        })
    };
    let timestamp = fields[4]
        .parse::<i64>()
        .map_err(|_| TextError::BadTimestamp {
            line: line_no,
            value: fields[4].to_string(),
        })?;
    let mut t = Tuple7::new(uuid_at(0)?, uuid_at(1)?, uuid_at(2)?, uuid_at(3)?, timestamp);
    if fields.len() == 7 {
        t.signer = Some(uuid_at(5)?);
        let sig = hex::decode(fields[6]).map_err(|_| TextError::BadSignature {
            line: line_no,
            value: fields[6].to_string(),
        })?;
        t.signature = Some(sig);
    }
    Ok(t)
}

/// Parses a whole text document, skipping blank and `#`-comment lines.
pub fn parse_tuples(text: &str) -> Result<Vec<Tuple7>, TextError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(parse_tuple_line(line, idx + 1)?);
    }
    Ok(out)
}

pub fn format_pattern(p: &TuplePattern) -> String {
    p.slots
        .iter()
        .map(|s| match s {
            Some(u) => u.to_string(),
            None => "*".to_string(),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parses four whitespace-separated terms, each a UUID or `*`.
pub fn parse_pattern(s: &str) -> Result<TuplePattern, TextError> {
    let terms: Vec<&str> = s.split_whitespace().collect();
    if terms.len() != 4 {
        return Err(TextError::PatternArity(terms.len()));
    }
    let mut slots = [None; 4];
    for (i, term) in terms.iter().enumerate() {
        slots[i] = match *term {
            "*" => None,
            other => Some(
                other
                    .parse::<Uuid>()
                    .map_err(|_| TextError::BadPatternTerm(other.to_string()))?,
            ),
        };
    }
    Ok(TuplePattern { slots })
}
