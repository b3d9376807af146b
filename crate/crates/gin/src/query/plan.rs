//! Compiled query plans: incremental left-deep joins over alpha feeds.
//!
//! Tuples arrive one at a time — from a backlog, a template scan, or a
//! standing-subscription push — and each arrival extends partial join
//! tokens. Because the store is add-only the evaluation is monotone:
//! results only accumulate, and the final result set is independent of
//! arrival order. Duplicate arrivals of the same tuple are absorbed at
//! the alpha memories, so replicated delivery is harmless.

use std::collections::{BTreeMap, BTreeSet};

use crate::model::{tuple_id, Tuple7, TupleId, TuplePattern, Uuid};

use super::{GraphQuery, QueryError, Term};

/// One query result: values for the (projected) variables plus the
/// witnesses — one tuple id per join step, in join order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Binding {
    pub vars: BTreeMap<String, Uuid>,
    pub witnesses: Vec<TupleId>,
}

impl Binding {
    pub fn get(&self, var: &str) -> Option<Uuid> {
        self.vars.get(var).copied()
    }

    /// Dedup key: projected values plus the witness multiset.
    fn fingerprint(&self) -> (Vec<(String, Uuid)>, Vec<TupleId>) {
        let vars = self.vars.iter().map(|(k, v)| (k.clone(), *v)).collect();
        let mut ws = self.witnesses.clone();
        ws.sort();
        (vars, ws)
    }
}

#[derive(Debug, Clone, Default)]
struct Token {
    vars: BTreeMap<String, Uuid>,
    witnesses: Vec<TupleId>,
}

#[derive(Debug, Clone)]
struct Step {
    terms: [Term; 4],
    alpha: usize,
    /// Position in the original pattern list, for diagnostics.
    original: usize,
}

#[derive(Debug, Clone)]
struct Alpha {
    pattern: TuplePattern,
    ids: BTreeSet<TupleId>,
}

/// Incremental evaluation state for one compiled query.
#[derive(Debug, Clone)]
pub struct QueryPlan {
    steps: Vec<Step>,
    alphas: Vec<Alpha>,
    /// Every tuple admitted to some alpha memory, by content id.
    tuples: BTreeMap<TupleId, Tuple7>,
    /// Partial tokens per level; `levels[i]` covers steps `0..=i`.
    /// The last level is not stored — completion is immediate.
    levels: Vec<Vec<Token>>,
    level_seen: Vec<BTreeSet<Vec<TupleId>>>,
    results: Vec<Binding>,
    result_seen: BTreeSet<(Vec<(String, Uuid)>, Vec<TupleId>)>,
    select: Option<Vec<String>>,
    var_order: Vec<String>,
}

/// Fixes the join order and wires up shared alpha memories.
///
/// Order is greedy left-deep: start with the pattern fixing the most
/// slots, then repeatedly add the most-fixed pattern that shares a
/// variable with the tree so far (ties broken by original position).
/// A pattern that never connects makes the query an error — its cross
/// product is almost never what the author meant.
pub fn compile(q: &GraphQuery) -> Result<QueryPlan, QueryError> {
    if q.patterns.is_empty() {
        return Err(QueryError::Empty);
    }
    let var_order = q.vars();
    if let Some(sel) = &q.select {
        for v in sel {
            if !var_order.iter().any(|x| x == v) {
                return Err(QueryError::UnknownSelectVar(v.clone()));
            }
        }
    }

    // Shared alphas: one memory per distinct erased template.
    let mut alphas: Vec<Alpha> = Vec::new();
    let mut alpha_of = Vec::with_capacity(q.patterns.len());
    for p in &q.patterns {
        let erased = p.erase();
        let idx = match alphas.iter().position(|a| a.pattern == erased) {
            Some(i) => i,
            None => {
                alphas.push(Alpha {
                    pattern: erased,
                    ids: BTreeSet::new(),
                });
                alphas.len() - 1
            }
        };
        alpha_of.push(idx);
    }

    let pick = |remaining: &[usize], allowed: &dyn Fn(usize) -> bool| -> Option<usize> {
        let mut best: Option<usize> = None;
        for &i in remaining {
            if !allowed(i) {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => q.patterns[i].fixed_count() > q.patterns[b].fixed_count(),
            };
            if better {
                best = Some(i);
            }
        }
        best
    };

    let mut remaining: Vec<usize> = (0..q.patterns.len()).collect();
    let mut order: Vec<usize> = Vec::new();
    let mut bound: BTreeSet<String> = BTreeSet::new();

    let first = pick(&remaining, &|_| true).expect("non-empty");
    remaining.retain(|&i| i != first);
    bound.extend(q.patterns[first].vars().map(str::to_string));
    order.push(first);

    while !remaining.is_empty() {
        let shares = |i: usize| q.patterns[i].vars().any(|v| bound.contains(v));
        match pick(&remaining, &shares) {
            Some(i) => {
                remaining.retain(|&x| x != i);
                bound.extend(q.patterns[i].vars().map(str::to_string));
                order.push(i);
            }
            None => {
                return Err(QueryError::Disconnected {
                    index: remaining[0],
                })
            }
        }
    }

    let steps: Vec<Step> = order
        .iter()
        .map(|&i| Step {
            terms: q.patterns[i].terms.clone(),
            alpha: alpha_of[i],
            original: i,
        })
        .collect();
    let depth = steps.len().saturating_sub(1);
    Ok(QueryPlan {
        steps,
        alphas,
        tuples: BTreeMap::new(),
        levels: vec![Vec::new(); depth],
        level_seen: vec![BTreeSet::new(); depth],
        results: Vec::new(),
        result_seen: BTreeSet::new(),
        select: q.select.clone(),
        var_order,
    })
}

/// Unifies a tuple against a step under an existing token. Returns the
/// extended token, or `None` on any conflict.
fn extend_token(token: &Token, terms: &[Term; 4], t: &Tuple7, id: TupleId) -> Option<Token> {
    let mut out = token.clone();
    for (slot, term) in terms.iter().enumerate() {
        let value = t.slot(slot);
        match term {
            Term::Any => {}
            Term::Const(c) => {
                if *c != value {
                    return None;
                }
            }
            Term::Var(name) => match out.vars.get(name) {
                Some(bound) => {
                    if *bound != value {
                        return None;
                    }
                }
                None => {
                    out.vars.insert(name.clone(), value);
                }
            },
        }
    }
    out.witnesses.push(id);
    Some(out)
}

impl QueryPlan {
    /// The distinct erased templates, i.e. what to subscribe for.
    pub fn alpha_patterns(&self) -> Vec<TuplePattern> {
        self.alphas.iter().map(|a| a.pattern).collect()
    }

    /// Original-order pattern positions in chosen join order.
    pub fn join_order(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.original).collect()
    }

    pub fn var_names(&self) -> &[String] {
        &self.var_order
    }

    /// Tuples admitted to at least one alpha memory so far.
    pub fn matched_count(&self) -> usize {
        self.tuples.len()
    }

    /// Feeds one tuple; returns the results newly completed by it.
    pub fn on_tuple(&mut self, t: &Tuple7) -> Vec<Binding> {
        let id = tuple_id(t);
        let mut touched = Vec::new();
        for (i, a) in self.alphas.iter_mut().enumerate() {
            if a.pattern.matches(t) && a.ids.insert(id) {
                touched.push(i);
            }
        }
        if touched.is_empty() {
            return Vec::new();
        }
        self.tuples.insert(id, t.clone());

        let mut delta = Vec::new();
        for ai in touched {
            for p in 0..self.steps.len() {
                if self.steps[p].alpha != ai {
                    continue;
                }
                let terms = self.steps[p].terms.clone();
                if p == 0 {
                    if let Some(tok) = extend_token(&Token::default(), &terms, t, id) {
                        self.add_token(0, tok, &mut delta);
                    }
                } else {
                    let parents = self.levels[p - 1].clone();
                    for parent in &parents {
                        if let Some(tok) = extend_token(parent, &terms, t, id) {
                            self.add_token(p, tok, &mut delta);
                        }
                    }
                }
            }
        }
        delta
    }

    /// Feeds many tuples; returns all results they completed.
    pub fn seed<'a>(&mut self, tuples: impl IntoIterator<Item = &'a Tuple7>) -> Vec<Binding> {
        let mut delta = Vec::new();
        for t in tuples {
            delta.extend(self.on_tuple(t));
        }
        delta
    }

    fn add_token(&mut self, p: usize, token: Token, delta: &mut Vec<Binding>) {
        if p + 1 == self.steps.len() {
            self.complete(token, delta);
            return;
        }
        if !self.level_seen[p].insert(token.witnesses.clone()) {
            return;
        }
        self.levels[p].push(token.clone());
        let next = self.steps[p + 1].clone();
        let candidates: Vec<TupleId> = self.alphas[next.alpha].ids.iter().copied().collect();
        for cid in candidates {
            let ct = self.tuples[&cid].clone();
            if let Some(tok) = extend_token(&token, &next.terms, &ct, cid) {
                self.add_token(p + 1, tok, delta);
            }
        }
    }

    fn complete(&mut self, token: Token, delta: &mut Vec<Binding>) {
        let vars = match &self.select {
            None => token.vars,
            Some(sel) => token
                .vars
                .into_iter()
                .filter(|(k, _)| sel.iter().any(|s| s == k))
                .collect(),
        };
        let b = Binding {
            vars,
            witnesses: token.witnesses,
        };
        if self.result_seen.insert(b.fingerprint()) {
            self.results.push(b.clone());
            delta.push(b);
        }
    }

    /// All results completed so far, in completion order.
    pub fn results(&self) -> &[Binding] {
        &self.results
    }

    /// The union of all witness tuples across results: the local
    /// subgraph this query has materialized, ordered by (timestamp, id).
    pub fn local_graph(&self) -> Vec<Tuple7> {
        let mut ids: BTreeSet<TupleId> = BTreeSet::new();
        for b in &self.results {
            ids.extend(b.witnesses.iter().copied());
        }
        let mut out: Vec<Tuple7> = ids.iter().map(|id| self.tuples[id].clone()).collect();
        out.sort_by_key(|t| (t.timestamp, tuple_id(t)));
        out
    }
}
