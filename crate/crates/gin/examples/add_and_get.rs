//! DHT placement and retrieval: tuples published anywhere in a simulated
//! network are findable from any node through `multi_get`, as long as the
//! pattern fixes at least one slot. Results are checked against a
//! brute-force filter over everything that was added.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use gin::model::TuplePattern;
use gin::sim::{SimConfig, SimNet};
use gin::testkit::{brute_filter, random_tuples, seeded_vocab};

fn main() {
    let mut net = SimNet::build(
        12,
        SimConfig {
            seed: 42,
            ..SimConfig::default()
        },
    );
    println!("built a {}-node network", net.len());

    // A small shared vocabulary makes patterns actually overlap.
    let mut rng = ChaCha20Rng::seed_from_u64(42);
    let vocab = seeded_vocab(&mut rng, 12);
    let tuples = random_tuples(&mut rng, 80, &vocab);

    // Publish round-robin: every node is somebody's entry point.
    for (i, t) in tuples.iter().enumerate() {
        let out = net.add_from(i % net.len(), t).unwrap();
        if i == 0 {
            println!(
                "first add targeted {} replica(s), stored on {}",
                out.targeted, out.stored
            );
        }
    }
    println!("published {} tuple(s)", tuples.len());

    // Query each slot position from a node that did not publish the data.
    let a = vocab[0];
    let queries = [
        ("source", TuplePattern::new(Some(a), None, None, None)),
        ("edge", TuplePattern::new(None, Some(a), None, None)),
        ("target", TuplePattern::new(None, None, Some(a), None)),
        ("context", TuplePattern::new(None, None, None, Some(a))),
    ];
    for (slot, p) in &queries {
        let got = net.get_from(11, p).unwrap();
        let want = brute_filter(&tuples, p);
        assert_eq!(got, want, "{slot} query must equal the global filter");
        println!("{slot:>7} query: {} hit(s), matches the oracle", got.len());
    }

    // All-wildcard patterns have no routing key and are refused.
    let unroutable = TuplePattern::new(None, None, None, None);
    assert!(net.get_from(3, &unroutable).is_err());
    println!("all-wildcard pattern correctly refused");
}
