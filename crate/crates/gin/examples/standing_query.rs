//! A standing conjunctive query over a live network: `map` once, then
//! keep receiving join results as other nodes publish matching tuples.
//! The delivered set is compared against a nested-loop batch evaluation
//! at the end.

use gin::model::{uuid_from_label, Tuple7};
use gin::query::{GraphQuery, QueryPattern, Term};
use gin::sim::{SimConfig, SimNet};
use gin::testkit::{batch_eval, canonicalize};

fn main() {
    let works_at = uuid_from_label("example:works-at");
    let located_in = uuid_from_label("example:located-in");
    let ctx = uuid_from_label("example:directory");

    let mut net = SimNet::build(
        8,
        SimConfig {
            seed: 5,
            ..SimConfig::default()
        },
    );

    // Who works at a company, and where is that company?
    //   ?person works-at ?company . ?company located-in ?city
    let q = GraphQuery::new(vec![
        QueryPattern::new(
            Term::Var("person".into()),
            Term::Const(works_at),
            Term::Var("company".into()),
            Term::Const(ctx),
        ),
        QueryPattern::new(
            Term::Var("company".into()),
            Term::Const(located_in),
            Term::Var("city".into()),
            Term::Const(ctx),
        ),
    ]);
    let map_id = net.map_on(0, &q).unwrap();
    println!("map opened on node 0, status {:?}", net.status_of(0, map_id));

    let person = |n: &str| uuid_from_label(&format!("example:person:{n}"));
    let co = |n: &str| uuid_from_label(&format!("example:co:{n}"));
    let city = |n: &str| uuid_from_label(&format!("example:city:{n}"));

    // Facts arrive over time, from different nodes, in join-unfriendly
    // order: the company location often lands before any employee.
    let feed: Vec<(usize, Tuple7)> = vec![
        (1, Tuple7::new(co("acme"), located_in, city("perth"), ctx, 10)),
        (2, Tuple7::new(person("ada"), works_at, co("acme"), ctx, 20)),
        (3, Tuple7::new(person("bert"), works_at, co("globex"), ctx, 30)),
        (4, Tuple7::new(co("globex"), located_in, city("cairns"), ctx, 40)),
        (5, Tuple7::new(person("cleo"), works_at, co("acme"), ctx, 50)),
    ];
    let mut all = Vec::new();
    for (node, t) in feed {
        net.add_from(node, &t).unwrap();
        all.push(t);
        net.tick(1_000_000);
        for b in net.take_new_results(0, map_id) {
            println!(
                "delivered: person={} company={} city={}",
                b.get("person").unwrap(),
                b.get("company").unwrap(),
                b.get("city").unwrap()
            );
        }
    }

    // Quiesce, then check the mirror equals the batch oracle.
    net.converge(20);
    let _ = net.take_new_results(0, map_id);
    let delivered = canonicalize(&net.results_of(0, map_id));
    let oracle = batch_eval(&all, &q);
    assert_eq!(delivered, oracle);
    println!(
        "final result set ({} binding(s)) equals the batch evaluation",
        delivered.len()
    );

    // The local sub-graph mirror holds exactly the witnesses.
    let mirror = net.local_graph_of(0, map_id);
    println!("local mirror holds {} distinct tuple(s)", mirror.len());
}
