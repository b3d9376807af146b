//! Graph queries: conjunctive tuple patterns with shared variables.
//!
//! A query is a list of 4-slot patterns whose terms are constants,
//! named variables, or `*`. Variables joining across patterns make the
//! query a subgraph match; compilation erases variables to wildcard
//! templates (the part a store node can match) and fixes a join order
//! for the incremental evaluation done at the end host.
//!
//! Text form, one pattern per line:
//!
//! ```text
//! # who reports on an analysis of ?g
//! ?a  analysis-of   ?g  ?ctx
//! ?r  reports-on    ?a  ?ctx
//! select ?r ?g
//! ```

mod plan;

pub use plan::{Binding, QueryPlan};

use crate::model::{TuplePattern, Uuid, SLOT_COUNT};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    /// Named variable; equal names must bind to equal ids.
    Var(String),
    Const(Uuid),
    /// Matches anything, binds nothing.
    Any,
}

impl Term {
    pub fn as_var(&self) -> Option<&str> {
        match self {
            Term::Var(v) => Some(v),
            _ => None,
        }
    }
}

impl std::fmt::Display for Term {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Term::Var(v) => write!(f, "?{v}"),
            Term::Const(u) => write!(f, "{u}"),
            Term::Any => f.write_str("*"),
        }
    }
}

/// One conjunct: terms for source, edge, target, context.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QueryPattern {
    pub terms: [Term; SLOT_COUNT],
}

impl QueryPattern {
    pub fn new(source: Term, edge: Term, target: Term, context: Term) -> Self {
        QueryPattern {
            terms: [source, edge, target, context],
        }
    }

    /// The store-side template: constants kept, variables and `*` erased
    /// to wildcards.
    pub fn erase(&self) -> TuplePattern {
        let mut slots = [None; SLOT_COUNT];
        for (i, t) in self.terms.iter().enumerate() {
            if let Term::Const(u) = t {
                slots[i] = Some(*u);
            }
        }
        TuplePattern { slots }
    }

    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().filter_map(Term::as_var)
    }

    fn fixed_count(&self) -> usize {
        self.terms
            .iter()
            .filter(|t| matches!(t, Term::Const(_)))
            .count()
    }
}

impl std::fmt::Display for QueryPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {} {} {}",
            self.terms[0], self.terms[1], self.terms[2], self.terms[3]
        )
    }
}

/// A conjunctive query plus an optional projection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphQuery {
    pub patterns: Vec<QueryPattern>,
    /// Variables to keep in results; `None` keeps all.
    pub select: Option<Vec<String>>,
}

impl GraphQuery {
    pub fn new(patterns: Vec<QueryPattern>) -> Self {
        GraphQuery {
            patterns,
            select: None,
        }
    }

    pub fn with_select(mut self, vars: Vec<String>) -> Self {
        self.select = Some(vars);
        self
    }

    /// Distinct variable names in order of first appearance.
    pub fn vars(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in &self.patterns {
            for v in p.vars() {
                if !out.iter().any(|x| x == v) {
                    out.push(v.to_string());
                }
            }
        }
        out
    }

    pub fn compile(&self) -> Result<QueryPlan, QueryError> {
        plan::compile(self)
    }
}

impl std::fmt::Display for GraphQuery {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for p in &self.patterns {
            writeln!(f, "{p}")?;
        }
        if let Some(sel) = &self.select {
            write!(f, "select")?;
            for v in sel {
                write!(f, " ?{v}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("query has no patterns")]
    Empty,
    #[error("pattern {index} shares no variable with the rest of the query")]
    Disconnected { index: usize },
    #[error("select references unknown variable ?{0}")]
    UnknownSelectVar(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

fn parse_term(s: &str, line: usize) -> Result<Term, QueryError> {
    if s == "*" {
        return Ok(Term::Any);
    }
    if let Some(name) = s.strip_prefix('?') {
        if name.is_empty() {
            return Err(QueryError::Parse {
                line,
                msg: "variable needs a name after '?'".into(),
            });
        }
        return Ok(Term::Var(name.to_string()));
    }
    Uuid::parse_str(s).map(Term::Const).map_err(|_| QueryError::Parse {
        line,
        msg: format!("'{s}' is neither a UUID, a ?variable, nor *"),
    })
}

/// Parses the text form: one pattern per line, `#` comments, blank lines
/// ignored, at most one trailing `select ?a ?b` line.
pub fn parse_query(text: &str) -> Result<GraphQuery, QueryError> {
    let mut patterns = Vec::new();
    let mut select: Option<Vec<String>> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields[0] == "select" {
            if select.is_some() {
                return Err(QueryError::Parse {
                    line: line_no,
                    msg: "second select line".into(),
                });
            }
            let mut vars = Vec::new();
            for f in &fields[1..] {
                match parse_term(f, line_no)? {
                    Term::Var(v) => vars.push(v),
                    _ => {
                        return Err(QueryError::Parse {
                            line: line_no,
                            msg: format!("select takes only ?variables, got '{f}'"),
                        })
                    }
                }
            }
            if vars.is_empty() {
                return Err(QueryError::Parse {
                    line: line_no,
                    msg: "select needs at least one variable".into(),
                });
            }
            select = Some(vars);
            continue;
        }
        if fields.len() != SLOT_COUNT {
            return Err(QueryError::Parse {
                line: line_no,
                msg: format!("expected 4 terms, got {}", fields.len()),
            });
        }
        patterns.push(QueryPattern::new(
            parse_term(fields[0], line_no)?,
            parse_term(fields[1], line_no)?,
            parse_term(fields[2], line_no)?,
            parse_term(fields[3], line_no)?,
        ));
    }
    let mut q = GraphQuery::new(patterns);
    q.select = select;
    Ok(q)
}
