//! The embedded store on its own: append-only inserts, content ids,
//! wildcard scans, alpha subscriptions, and the digest used by
//! anti-entropy. No network involved.

use gin::model::{tuple_id, uuid_from_label, Tuple7, TuplePattern};
use gin::store::TupleStore;

fn main() {
    // Labels are opaque UUIDs; hashing a string is one way to mint them.
    let alice = uuid_from_label("example:alice");
    let bob = uuid_from_label("example:bob");
    let carol = uuid_from_label("example:carol");
    let knows = uuid_from_label("example:knows");
    let team = uuid_from_label("example:team-context");

    let mut store: TupleStore<&str> = TupleStore::new(7);

    // A subscription registered before any data sees an empty backlog.
    let watch_knows = TuplePattern::new(None, Some(knows), None, None);
    let (sub, backlog) = store.register_alpha(watch_knows, "watcher", 0);
    println!("subscribed {sub} with {} backlog tuple(s)", backlog.len());

    let statements = [
        Tuple7::new(alice, knows, bob, team, 1_000),
        Tuple7::new(bob, knows, carol, team, 2_000),
        Tuple7::new(carol, knows, alice, team, 3_000),
    ];
    for t in &statements {
        let out = store.insert(t).unwrap();
        println!(
            "insert {}… new={} notified={:?}",
            &tuple_id(t).to_hex()[..12],
            out.newly_inserted,
            out.notify.iter().map(|(_, e)| *e).collect::<Vec<_>>()
        );
    }

    // Re-inserting the same statement is a no-op: same content id, no
    // growth, no notifications. This is what makes replica merges safe.
    let replay = store.insert(&statements[0]).unwrap();
    assert!(!replay.newly_inserted && replay.notify.is_empty());
    println!("replay of the first statement changed nothing");

    // Scans match on any combination of fixed slots.
    let from_alice = store.scan(&TuplePattern::new(Some(alice), None, None, None));
    println!("alice is the source of {} statement(s)", from_alice.len());
    let in_team = store.scan(&TuplePattern::new(None, None, None, Some(team)));
    println!("the team context groups {} statement(s)", in_team.len());

    let d = store.digest();
    println!("digest: {} id(s), first {}…", d.count, &d.ids[0].to_hex()[..12]);
    assert_eq!(d.count as usize, statements.len());
}
