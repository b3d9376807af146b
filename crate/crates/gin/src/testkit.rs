//! Naive reference implementations and data generators for tests.
//!
//! Everything here is deliberately brute-force and shares no code with
//! the production paths it is used to check: template scans are plain
//! slot-by-slot filters, query evaluation is an exhaustive nested-loop
//! enumeration in written pattern order. Slow is fine; independent is
//! the point.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::model::{
    random_uuid, tuple_id, KeyLookup, PublicKey, Tuple7, TupleId, TuplePattern, Uuid,
};
use crate::query::{GraphQuery, Term};

/// Slot-by-slot template filter, no indexes involved.
pub fn brute_filter(tuples: &[Tuple7], p: &TuplePattern) -> Vec<Tuple7> {
    let mut out = Vec::new();
    for t in tuples {
        let fields = [t.source, t.edge, t.target, t.context];
        let ok = (0..4).all(|i| match p.slots[i] {
            Some(v) => v == fields[i],
            None => true,
        });
        if ok {
            out.push(t.clone());
        }
    }
    out
}

/// A result in comparison form: sorted (var, value) pairs plus the
/// sorted witness multiset.
pub type CanonResult = (Vec<(String, Uuid)>, Vec<TupleId>);

/// Brings plan results into [`CanonResult`] form for set comparison.
pub fn canonicalize(bindings: &[crate::query::Binding]) -> BTreeSet<CanonResult> {
    bindings
        .iter()
        .map(|b| {
            let vars = b.vars.iter().map(|(k, v)| (k.clone(), *v)).collect();
            let mut ws = b.witnesses.clone();
            ws.sort();
            (vars, ws)
        })
        .collect()
}

fn try_match(
    pattern: &[Term; 4],
    t: &Tuple7,
    env: &BTreeMap<String, Uuid>,
) -> Option<BTreeMap<String, Uuid>> {
    let mut env = env.clone();
    let fields = [t.source, t.edge, t.target, t.context];
    for (i, term) in pattern.iter().enumerate() {
        match term {
            Term::Any => {}
            Term::Const(c) => {
                if *c != fields[i] {
                    return None;
                }
            }
            Term::Var(name) => match env.get(name) {
                Some(v) => {
                    if *v != fields[i] {
                        return None;
                    }
                }
                None => {
                    env.insert(name.clone(), fields[i]);
                }
            },
        }
    }
    Some(env)
}

/// Exhaustive query evaluation: tries every assignment of one tuple per
/// pattern, in written order, keeping consistent variable bindings.
/// Results are projected and deduplicated the same way delivery is:
/// by projected values plus witness multiset.
pub fn batch_eval(tuples: &[Tuple7], q: &GraphQuery) -> BTreeSet<CanonResult> {
    fn go(
        tuples: &[Tuple7],
        q: &GraphQuery,
        i: usize,
        env: &BTreeMap<String, Uuid>,
        witnesses: &mut Vec<TupleId>,
        out: &mut BTreeSet<CanonResult>,
    ) {
        if i == q.patterns.len() {
            let projected: Vec<(String, Uuid)> = env
                .iter()
                .filter(|(k, _)| match &q.select {
                    None => true,
                    Some(sel) => sel.iter().any(|s| s == *k),
                })
                .map(|(k, v)| (k.clone(), *v))
                .collect();
            let mut ws = witnesses.clone();
            ws.sort();
            out.insert((projected, ws));
            return;
        }
        for t in tuples {
            if let Some(env2) = try_match(&q.patterns[i].terms, t, env) {
                witnesses.push(tuple_id(t));
                go(tuples, q, i + 1, &env2, witnesses, out);
                witnesses.pop();
            }
        }
    }
    let mut out = BTreeSet::new();
    go(
        tuples,
        q,
        0,
        &BTreeMap::new(),
        &mut Vec::new(),
        &mut out,
    );
    out
}

/// A key lookup that resolves every signer id to the same key. Useful
/// for checking that corrupted bytes can never verify: with the lookup
/// always succeeding, any failure must come from the signature itself.
pub struct UniversalKeys(pub PublicKey);

impl KeyLookup for UniversalKeys {
    fn public_key_for(&self, _signer: &Uuid) -> Option<&PublicKey> {
        Some(&self.0)
    }
}

/// A fixed pool of vertex/edge ids so random tuples actually collide.
pub fn seeded_vocab(rng: &mut ChaCha20Rng, n: usize) -> Vec<Uuid> {
    (0..n).map(|_| random_uuid(rng)).collect()
}

/// Random well-formed unsigned tuples over a vocabulary, timestamps
/// strictly increasing.
pub fn random_tuples(rng: &mut ChaCha20Rng, n: usize, vocab: &[Uuid]) -> Vec<Tuple7> {
    let pick = |rng: &mut ChaCha20Rng| vocab[rng.gen_range(0..vocab.len())];
    (0..n)
        .map(|i| {
            Tuple7::new(
                pick(rng),
                pick(rng),
                pick(rng),
                pick(rng),
                1_700_000_000_000_000 + i as i64,
            )
        })
        .collect()
}

/// Random template over the vocabulary; each slot is fixed with
/// probability `fix_prob`, and at least one slot is always fixed so the
/// result is routable.
pub fn random_pattern(rng: &mut ChaCha20Rng, vocab: &[Uuid], fix_prob: f64) -> TuplePattern {
    loop {
        let mut slots = [None; 4];
        for s in slots.iter_mut() {
            if rng.gen_bool(fix_prob) {
                *s = Some(vocab[rng.gen_range(0..vocab.len())]);
            }
        }
        let p = TuplePattern { slots };
        if !p.is_all_wildcard() {
            return p;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::QueryPattern;
    use rand::SeedableRng;

    #[test]
    fn brute_filter_agrees_with_pattern_matches() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let vocab = seeded_vocab(&mut rng, 6);
        let tuples = random_tuples(&mut rng, 80, &vocab);
        for _ in 0..40 {
            let p = random_pattern(&mut rng, &vocab, 0.5);
            let brute = brute_filter(&tuples, &p);
            let via_matches: Vec<Tuple7> =
                tuples.iter().filter(|t| p.matches(t)).cloned().collect();
            assert_eq!(brute, via_matches);
        }
    }

    #[test]
    fn batch_eval_finds_hand_checked_join() {
        let a = Uuid::from_u128(1);
        let b = Uuid::from_u128(2);
        let c = Uuid::from_u128(3);
        let r = Uuid::from_u128(9);
        let ctx = Uuid::from_u128(0);
        let tuples = vec![
            Tuple7::new(a, r, b, ctx, 1),
            Tuple7::new(b, r, c, ctx, 2),
        ];
        let q = GraphQuery::new(vec![
            QueryPattern::new(Term::Var("x".into()), Term::Const(r), Term::Var("y".into()), Term::Any),
            QueryPattern::new(Term::Var("y".into()), Term::Const(r), Term::Var("z".into()), Term::Any),
        ]);
        let results = batch_eval(&tuples, &q);
        assert_eq!(results.len(), 1);
        let (vars, witnesses) = results.iter().next().unwrap();
        assert_eq!(
            vars,
            &vec![
                ("x".to_string(), a),
                ("y".to_string(), b),
                ("z".to_string(), c)
            ]
        );
        assert_eq!(witnesses.len(), 2);
    }
}
