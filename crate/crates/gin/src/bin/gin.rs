//! `gin` — command-line front end: a store-node daemon, ad-hoc verbs
//! against a running network (`add`, `get`, `map`, `digest`), and the
//! deterministic scenario simulator (`sim`).
//!
//! The ad-hoc verbs join the overlay as a transient node: they bind an
//! ephemeral port, bootstrap off `--node`, run their operation through
//! the ordinary client machinery, and leave. `map` keeps its node alive
//! and prints bindings as they arrive until interrupted (or `--count`).
//!
//! Exit codes: 0 success, 1 usage error or failed scenario assertion,
//! 2 bind failure, 3 bootstrap timeout, 4 network failure.
//! Logging goes to stderr; tune it with `GIN_LOG_LEVEL=debug` etc.

use std::io::{Read as _, Write as _};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::exit;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest as _, Sha256};
use uuid::Uuid;

use gin::dht::{
    bootstrap, multi_get, store_tuple, Contact, Key, LookupError, Node, NodeConfig, Request,
    Response, Transport,
};
use gin::model::{
    format_tuple, parse_pattern, parse_tuple_line, parse_tuples, pattern_matches, sign_tuple,
    tuple_id, KeyedSha256, SecretKey, Tuple7, TupleId,
};
use gin::net::{spawn_node, wall_clock_us, DaemonConfig, NodeHandle, TcpTransport};
use gin::query::{parse_query, Binding, GraphQuery};
use gin::scenario::{run_script_text, ScriptError};
use gin::store::Digest;

const USAGE: i32 = 1;
const BIND: i32 = 2;
const BOOTSTRAP: i32 = 3;
const NET: i32 = 4;

#[derive(Parser)]
#[command(name = "gin", version, about = "Distributed add-only hypergraph tuple store")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a store node until killed.
    Node(NodeCmd),
    /// Publish tuples (tuple text: `source edge target context [ts [signer sig]]`).
    Add(AddCmd),
    /// One-shot template query; prints matching tuples as tuple text.
    Get(GetCmd),
    /// Standing query; prints bindings as they arrive.
    Map(MapCmd),
    /// Print a store summary: tuple count and id-list hash.
    Digest(DigestCmd),
    /// Run a scenario script and print its assertion report.
    Sim(SimCmd),
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GIN_LOG_LEVEL", "warn"))
        .format_timestamp_micros()
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            exit(code);
        }
    };
    exit(match cli.cmd {
        Cmd::Node(a) => run_node(a),
        Cmd::Add(a) => run_add(a),
        Cmd::Get(a) => run_get(a),
        Cmd::Map(a) => run_map(a),
        Cmd::Digest(a) => run_digest(a),
        Cmd::Sim(a) => run_sim(a),
    });
}

// ---- gin node -----------------------------------------------------------

#[derive(Args)]
struct NodeCmd {
    /// Address to bind and advertise to peers, e.g. 127.0.0.1:4100.
    #[arg(long)]
    listen: String,
    /// Existing node(s) to join through; repeatable.
    #[arg(long)]
    bootstrap: Vec<String>,
    /// Routing bucket capacity and lookup result width.
    #[arg(long, default_value_t = NodeConfig::default().k)]
    k: usize,
    /// Lookup parallelism.
    #[arg(long, default_value_t = NodeConfig::default().alpha)]
    alpha: usize,
    /// Replicas per placement key.
    #[arg(long, default_value_t = NodeConfig::default().replication)]
    replication: usize,
    /// Derive the node id from this hex string instead of randomly.
    #[arg(long)]
    id_seed: Option<String>,
    /// Append one JSON event object per line to this file.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Anti-entropy cadence in milliseconds; 0 disables gossip.
    #[arg(long, default_value_t = 1000)]
    gossip_ms: u64,
    /// How long to keep retrying the bootstrap seeds before giving up.
    #[arg(long, default_value_t = 10)]
    bootstrap_timeout_s: u64,
}

fn run_node(a: NodeCmd) -> i32 {
    let id = match &a.id_seed {
        Some(s) => match hex::decode(s) {
            Ok(bytes) => Key::from_seed(&bytes),
            Err(_) => {
                eprintln!("--id-seed must be a hex string");
                return USAGE;
            }
        },
        None => Key::from_seed(&rand::random::<[u8; 32]>()),
    };
    let listener = match TcpListener::bind(&a.listen) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("cannot bind {}: {e}", a.listen);
            return BIND;
        }
    };
    // Advertise the resolved address, not the bind string: with
    // `--listen 127.0.0.1:0` the OS picks the port, and peers must be
    // able to dial what we hand out.
    let advertised = match listener.local_addr() {
        Ok(addr) => addr.to_string(),
        Err(e) => {
            eprintln!("cannot resolve local address: {e}");
            return BIND;
        }
    };
    let mut config = NodeConfig::default();
    config.k = a.k;
    config.alpha = a.alpha;
    config.replication = a.replication;
    let rng_seed = u64::from_be_bytes(id.0[..8].try_into().unwrap());
    let node = Node::new(id, advertised.clone(), config, rng_seed);
    let cfg = DaemonConfig {
        gossip_interval: (a.gossip_ms > 0).then(|| Duration::from_millis(a.gossip_ms)),
        log_path: a.log.clone(),
    };
    let handle = match spawn_node(node, listener, cfg) {
        Ok(h) => h,
        Err(e) => {
            eprintln!("cannot start node: {e}");
            return BIND;
        }
    };

    if !a.bootstrap.is_empty() {
        let deadline = Instant::now() + Duration::from_secs(a.bootstrap_timeout_s);
        loop {
            let seeds = a.bootstrap.clone();
            let joined = handle
                .command(move |ctx| bootstrap(&mut ctx.node, &mut ctx.transport, &seeds).is_ok());
            if joined {
                break;
            }
            if Instant::now() >= deadline {
                eprintln!("bootstrap timed out: none of {:?} answered", a.bootstrap);
                handle.stop();
                return BOOTSTRAP;
            }
            std::thread::sleep(Duration::from_millis(250));
        }
    }
    println!("node {} listening on {advertised}", handle.contact().id);
    loop {
        std::thread::park();
    }
}

// ---- transient client node for the ad-hoc verbs -------------------------

/// Joins the overlay on an ephemeral port long enough to run one verb.
fn join_network(listen: &str, seed: &str, cfg: DaemonConfig) -> Result<NodeHandle, i32> {
    let listener = TcpListener::bind(listen).map_err(|e| {
        eprintln!("cannot bind {listen}: {e}");
        BIND
    })?;
    let addr = listener.local_addr().map_err(|e| {
        eprintln!("cannot resolve local address: {e}");
        BIND
    })?;
    let id = Key::from_seed(&rand::random::<[u8; 32]>());
    let node = Node::new(id, addr.to_string(), NodeConfig::default(), rand::random());
    let handle = spawn_node(node, listener, cfg).map_err(|e| {
        eprintln!("cannot start client node: {e}");
        BIND
    })?;
    // The seed may be mid-gossip and slow to answer; give it a few tries.
    for attempt in 0..3 {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(500));
        }
        let seeds = vec![seed.to_string()];
        let joined = handle
            .command(move |ctx| bootstrap(&mut ctx.node, &mut ctx.transport, &seeds).is_ok());
        if joined {
            return Ok(handle);
        }
    }
    eprintln!("cannot reach {seed}");
    handle.stop();
    Err(NET)
}

fn read_input(path: &Path) -> std::io::Result<String> {
    if path == Path::new("-") {
        let mut text = String::new();
        std::io::stdin().read_to_string(&mut text)?;
        Ok(text)
    } else {
        std::fs::read_to_string(path)
    }
}

// ---- gin add ------------------------------------------------------------

#[derive(Args)]
struct AddCmd {
    /// Any reachable node of the target network.
    #[arg(long, required_unless_present = "local")]
    node: Option<String>,
    /// Operate on a tuple-text file instead of a network.
    #[arg(long, conflicts_with = "node")]
    local: Option<PathBuf>,
    /// Read tuple text lines from this file ('-' = stdin).
    #[arg(long)]
    file: Option<PathBuf>,
    /// Inline tuple: SOURCE EDGE TARGET CONTEXT [TIMESTAMP-µs].
    #[arg(value_name = "TERM", num_args = 0..=5)]
    tuple: Vec<String>,
    /// Sign unsigned tuples as this signer id (requires --key).
    #[arg(long, requires = "key")]
    sign: Option<Uuid>,
    /// Hex signing key.
    #[arg(long)]
    key: Option<String>,
    /// Listen address for the transient client node.
    #[arg(long, default_value = "127.0.0.1:0")]
    listen: String,
}

fn run_add(a: AddCmd) -> i32 {
    let mut tuples: Vec<Tuple7> = Vec::new();
    if let Some(path) = &a.file {
        let text = match read_input(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("cannot read {}: {e}", path.display());
                return USAGE;
            }
        };
        match parse_tuples(&text) {
            Ok(ts) => tuples.extend(ts),
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                return USAGE;
            }
        }
    }
    if !a.tuple.is_empty() {
        let mut fields = a.tuple.clone();
        if fields.len() == 4 {
            fields.push(wall_clock_us().to_string());
        }
        match parse_tuple_line(&fields.join(" "), 1) {
            Ok(t) => tuples.push(t),
            Err(e) => {
                eprintln!("inline tuple: {e}");
                return USAGE;
            }
        }
    }
    if tuples.is_empty() {
        eprintln!("nothing to add: pass --file or an inline tuple");
        return USAGE;
    }

    if let Some(signer) = a.sign {
        let key = match hex::decode(a.key.as_deref().unwrap_or_default()) {
            Ok(bytes) if !bytes.is_empty() => SecretKey(bytes),
            _ => {
                eprintln!("--key must be a non-empty hex string");
                return USAGE;
            }
        };
        for t in &mut tuples {
            if t.signature.is_none() {
                t.signer = Some(signer);
                match sign_tuple(t, &key, &KeyedSha256) {
                    Ok(signed) => *t = signed,
                    Err(e) => {
                        eprintln!("cannot sign: {e}");
                        return USAGE;
                    }
                }
            }
        }
    }

    if let Some(path) = &a.local {
        return add_local(path, &tuples);
    }

    let handle = match join_network(&a.listen, a.node.as_deref().unwrap(), DaemonConfig::default())
    {
        Ok(h) => h,
        Err(code) => return code,
    };
    let mut failures = 0usize;
    for t in tuples {
        let out = handle.command(move |ctx| store_tuple(&mut ctx.node, &mut ctx.transport, &t));
        match out {
            Ok(out) => {
                println!("{} stored at {}/{} replica(s)", out.id, out.stored, out.targeted);
                if out.stored == 0 {
                    failures += 1;
                }
            }
            Err(e) => {
                eprintln!("rejected: {e}");
                failures += 1;
            }
        }
    }
    handle.stop();
    if failures > 0 {
        NET
    } else {
        0
    }
}

/// Add-only semantics against a plain tuple-text file: append what is
/// new by content id, skip what is already there.
fn add_local(path: &Path, tuples: &[Tuple7]) -> i32 {
    let existing = match std::fs::read_to_string(path) {
        Ok(text) => match parse_tuples(&text) {
            Ok(ts) => ts,
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                return USAGE;
            }
        },
        Err(_) => Vec::new(),
    };
    let mut seen: std::collections::BTreeSet<TupleId> =
        existing.iter().map(tuple_id).collect();
    let mut file = match std::fs::OpenOptions::new().create(true).append(true).open(path) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("cannot open {}: {e}", path.display());
            return USAGE;
        }
    };
    let mut added = 0usize;
    let mut duplicates = 0usize;
    for t in tuples {
        if seen.insert(tuple_id(t)) {
            if let Err(e) = writeln!(file, "{}", format_tuple(t)) {
                eprintln!("cannot write {}: {e}", path.display());
                return USAGE;
            }
            added += 1;
        } else {
            duplicates += 1;
        }
    }
    println!("{added} added, {duplicates} duplicate(s) skipped");
    0
}

// ---- gin get ------------------------------------------------------------

#[derive(Args)]
struct GetCmd {
    /// Any reachable node of the target network.
    #[arg(long, required_unless_present = "local")]
    node: Option<String>,
    /// Query a tuple-text file instead of a network.
    #[arg(long, conflicts_with = "node")]
    local: Option<PathBuf>,
    /// Four terms (source edge target context), each a UUID or '*'.
    pattern: String,
    /// Listen address for the transient client node.
    #[arg(long, default_value = "127.0.0.1:0")]
    listen: String,
}

fn run_get(a: GetCmd) -> i32 {
    let pattern = match parse_pattern(&a.pattern) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("pattern: {e}");
            return USAGE;
        }
    };

    if let Some(path) = &a.local {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("cannot read {}: {e}", path.display());
                return USAGE;
            }
        };
        let mut hits = match parse_tuples(&text) {
            Ok(ts) => ts,
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                return USAGE;
            }
        };
        hits.retain(|t| pattern_matches(&pattern, t));
        hits.sort_by_key(|t| (t.timestamp, tuple_id(t)));
        hits.dedup_by_key(|t| tuple_id(t));
        for t in &hits {
            println!("{}", format_tuple(t));
        }
        return 0;
    }

    let handle = match join_network(&a.listen, a.node.as_deref().unwrap(), DaemonConfig::default())
    {
        Ok(h) => h,
        Err(code) => return code,
    };
    let out = handle.command(move |ctx| multi_get(&mut ctx.node, &mut ctx.transport, &pattern));
    handle.stop();
    match out {
        Ok(tuples) => {
            for t in &tuples {
                println!("{}", format_tuple(t));
            }
            0
        }
        Err(LookupError::Unroutable(e)) => {
            eprintln!("{e}");
            USAGE
        }
        Err(LookupError::NoReplica) => {
            eprintln!("no replica answered");
            NET
        }
    }
}

// ---- gin map ------------------------------------------------------------

#[derive(Args)]
struct MapCmd {
    /// Any reachable node of the target network.
    #[arg(long, required_unless_present = "local")]
    node: Option<String>,
    /// Batch-evaluate against a tuple-text file instead of a network.
    #[arg(long, conflicts_with = "node")]
    local: Option<PathBuf>,
    /// File with query text (one pattern per line; optional `select`).
    query_file: Option<PathBuf>,
    /// Inline query text; separate patterns with ';'.
    #[arg(long, conflicts_with = "query_file")]
    query: Option<String>,
    /// Exit after printing this many bindings.
    #[arg(long)]
    count: Option<usize>,
    /// Also print each binding's witness tuple ids.
    #[arg(long)]
    witnesses: bool,
    /// Gossip / poll cadence in milliseconds.
    #[arg(long, default_value_t = 500)]
    gossip_ms: u64,
    /// Listen address for the client node (it must be dialable for
    /// notifications; pick a routable host when the network is remote).
    #[arg(long, default_value = "127.0.0.1:0")]
    listen: String,
}

fn render_binding(b: &Binding, order: &[String], witnesses: bool) -> String {
    let mut parts: Vec<String> = Vec::new();
    for var in order {
        if let Some(id) = b.get(var) {
            parts.push(format!("?{var}={id}"));
        }
    }
    if witnesses {
        let ids: Vec<String> = b.witnesses.iter().map(|w| w.to_string()).collect();
        parts.push(format!("witnesses={}", ids.join(",")));
    }
    parts.join("  ")
}

fn run_map(a: MapCmd) -> i32 {
    let text = match (&a.query_file, &a.query) {
        (Some(path), None) => match read_input(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("cannot read {}: {e}", path.display());
                return USAGE;
            }
        },
        (None, Some(inline)) => inline.replace(';', "\n"),
        _ => {
            eprintln!("pass a query file or --query");
            return USAGE;
        }
    };
    let query: GraphQuery = match parse_query(&text) {
        Ok(q) => q,
        Err(e) => {
            eprintln!("query: {e}");
            return USAGE;
        }
    };
    let order = query.select.clone().unwrap_or_else(|| query.vars());

    if let Some(path) = &a.local {
        let file_text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("cannot read {}: {e}", path.display());
                return USAGE;
            }
        };
        let tuples = match parse_tuples(&file_text) {
            Ok(ts) => ts,
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                return USAGE;
            }
        };
        let mut plan = match query.compile() {
            Ok(p) => p,
            Err(e) => {
                eprintln!("query: {e}");
                return USAGE;
            }
        };
        for b in plan.seed(tuples.iter()) {
            println!("{}", render_binding(&b, &order, a.witnesses));
        }
        return 0;
    }

    let cfg = DaemonConfig {
        gossip_interval: Some(Duration::from_millis(a.gossip_ms.max(1))),
        log_path: None,
    };
    let handle = match join_network(&a.listen, a.node.as_deref().unwrap(), cfg) {
        Ok(h) => h,
        Err(code) => return code,
    };
    let q = query.clone();
    let mapped = handle.command(move |ctx| {
        ctx.runtime
            .map(&mut ctx.node, &mut ctx.transport, &q, wall_clock_us())
    });
    let map_id = match mapped {
        Ok(id) => id,
        Err(e) => {
            eprintln!("map: {e}");
            handle.stop();
            return USAGE;
        }
    };

    let mut printed = 0usize;
    let poll = Duration::from_millis(a.gossip_ms.max(1).min(250));
    loop {
        let fresh = handle.command(move |ctx| ctx.runtime.take_new_results(map_id));
        for b in &fresh {
            println!("{}", render_binding(b, &order, a.witnesses));
            printed += 1;
            if a.count.is_some_and(|n| printed >= n) {
                let _ = std::io::stdout().flush();
                handle.command(move |ctx| {
                    let _ = ctx.runtime.unmap(&mut ctx.node, &mut ctx.transport, map_id);
                });
                handle.stop();
                return 0;
            }
        }
        let _ = std::io::stdout().flush();
        std::thread::sleep(poll);
    }
}

// ---- gin digest ---------------------------------------------------------

#[derive(Args)]
struct DigestCmd {
    /// Node to summarize.
    #[arg(long, required_unless_present = "local")]
    node: Option<String>,
    /// Summarize a tuple-text file instead.
    #[arg(long, conflicts_with = "node")]
    local: Option<PathBuf>,
}

/// `count=N hash=<sha256 of the sorted id list>`; equal stores print
/// equal lines, so two converged nodes can be compared with `diff`.
fn digest_line(d: &Digest) -> String {
    let mut h = Sha256::new();
    for id in &d.ids {
        h.update(id.as_bytes());
    }
    format!("count={} hash={}", d.count, hex::encode(h.finalize()))
}

fn run_digest(a: DigestCmd) -> i32 {
    if let Some(path) = &a.local {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("cannot read {}: {e}", path.display());
                return USAGE;
            }
        };
        let tuples = match parse_tuples(&text) {
            Ok(ts) => ts,
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                return USAGE;
            }
        };
        let mut ids: Vec<TupleId> = tuples.iter().map(tuple_id).collect();
        ids.sort();
        ids.dedup();
        let d = Digest { count: ids.len() as u64, ids };
        println!("{}", digest_line(&d));
        return 0;
    }

    // One-shot RPC: offer an empty digest, print what comes back. The
    // responder has nothing to pull from us, so this is read-only.
    let addr = a.node.unwrap();
    let me = Contact::new(Key::from_seed(&rand::random::<[u8; 32]>()), "client:0");
    let mut transport = TcpTransport::default();
    match transport.call(&me, &addr, &Request::Digest(Digest::empty())) {
        Ok((_, Response::DigestReply(d))) => {
            println!("{}", digest_line(&d));
            0
        }
        Ok((_, other)) => {
            eprintln!("unexpected reply: {other:?}");
            NET
        }
        Err(e) => {
            eprintln!("cannot reach {addr}: {e}");
            NET
        }
    }
}

// ---- gin sim ------------------------------------------------------------

#[derive(Args)]
struct SimCmd {
    /// Scenario script (JSON).
    script: PathBuf,
    /// Also write the run's JSONL trace to this file.
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn run_sim(a: SimCmd) -> i32 {
    let text = match std::fs::read_to_string(&a.script) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", a.script.display());
            return USAGE;
        }
    };
    let report = match run_script_text(&text) {
        Ok(r) => r,
        Err(ScriptError::Parse { line, column, msg }) => {
            eprintln!("{}:{line}:{column}: {msg}", a.script.display());
            return USAGE;
        }
        Err(ScriptError::Invalid(msg)) => {
            eprintln!("{}: {msg}", a.script.display());
            return USAGE;
        }
    };
    print!("{}", report.render());
    if let Some(path) = &a.trace {
        let mut text = report.trace.clone();
        if !text.is_empty() && !text.ends_with('\n') {
            text.push('\n');
        }
        if let Err(e) = std::fs::write(path, text) {
            eprintln!("cannot write {}: {e}", path.display());
            return USAGE;
        }
    }
    if report.all_passed() {
        0
    } else {
        1
    }
}
