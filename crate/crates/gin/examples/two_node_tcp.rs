//! Two real nodes on loopback sockets: spawn, bootstrap, publish on one,
//! read from the other, and watch anti-entropy level the stores. The
//! same event loop backs the `gin node` daemon.

use std::net::TcpListener;
use std::time::{Duration, Instant};

use gin::dht::{bootstrap, multi_get, store_tuple, Key, Node, NodeConfig};
use gin::model::{uuid_from_label, Tuple7, TuplePattern};
use gin::net::{spawn_node, wall_clock_us, DaemonConfig, NodeHandle};

fn spawn(name: &str, gossip: Duration) -> NodeHandle {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let node = Node::new(
        Key::from_seed(name.as_bytes()),
        addr.to_string(),
        NodeConfig::default(),
        1,
    );
    let cfg = DaemonConfig {
        gossip_interval: Some(gossip),
        log_path: None,
    };
    spawn_node(node, listener, cfg).unwrap()
}

fn main() {
    let a = spawn("example:tcp-a", Duration::from_millis(100));
    let b = spawn("example:tcp-b", Duration::from_millis(100));
    println!("node A on {}", a.local_addr());
    println!("node B on {}", b.local_addr());

    let seed = a.contact().addr.clone();
    let joined = b.command(move |ctx| bootstrap(&mut ctx.node, &mut ctx.transport, &[seed]));
    println!("B joined through A, routing table size {}", joined.unwrap());

    let gauge = uuid_from_label("example:gauge");
    let reading = uuid_from_label("example:reading");
    let level = uuid_from_label("example:level");
    let ctx_id = uuid_from_label("example:river");
    let t = Tuple7::new(gauge, reading, level, ctx_id, wall_clock_us());

    let publish = t.clone();
    let out = a
        .command(move |ctx| store_tuple(&mut ctx.node, &mut ctx.transport, &publish))
        .unwrap();
    println!("A stored the tuple on {}/{} replica(s)", out.stored, out.targeted);

    // B either already holds a replica or pulls it within a few gossip
    // rounds; poll until the pattern resolves there.
    let p = TuplePattern::new(Some(gauge), None, None, None);
    let deadline = Instant::now() + Duration::from_secs(5);
    loop {
        let got = b.command(move |ctx| multi_get(&mut ctx.node, &mut ctx.transport, &p));
        if matches!(&got, Ok(ts) if ts.contains(&t)) {
            println!("B sees the tuple");
            break;
        }
        assert!(Instant::now() < deadline, "tuple never reached B");
        std::thread::sleep(Duration::from_millis(100));
    }

    let da = a.command(|ctx| ctx.node.store.digest());
    let db = b.command(|ctx| ctx.node.store.digest());
    assert_eq!(da, db);
    println!("digests match: {} tuple(s) everywhere", da.count);

    a.stop();
    b.stop();
}
