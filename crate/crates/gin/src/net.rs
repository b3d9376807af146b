//! Real sockets: a framed TCP transport and the threaded node runtime
//! behind `gin node`.
//!
//! The transport opens one connection per call — at desk scale the
//! simplicity is worth more than connection reuse — with a read/write
//! timeout and a bounded retry loop. The daemon side runs one acceptor
//! thread, one short-lived thread per connection, a timer thread for
//! gossip cadence, and a single event-loop thread that owns the node;
//! every mutation funnels through that loop, so handlers stay free of
//! locks. Replies are written before queued side effects run, keeping
//! request latency independent of fan-out.
//!
//! Two live nodes can, rarely, dial each other at the same moment and
//! each block on the other's busy event loop; the read timeout breaks
//! the tie and the retry resolves it.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use rand::{Rng, RngCore};

use crate::client::ClientRuntime;
use crate::dht::{Addr, Contact, Node, Request, Response, RpcError, Transport};
use crate::sync::{gossip_round, perform_effect};
use crate::wire::{
    decode_request, decode_response, encode_request, encode_response, read_frame, write_frame,
    Frame, RESPONSE_BIT,
};

/// Microseconds since the Unix epoch.
pub fn wall_clock_us() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_micros() as i64)
        .unwrap_or(0)
}

/// One-connection-per-call TCP transport.
pub struct TcpTransport {
    pub timeout: Duration,
    pub retries: u32,
    rng: rand_chacha::ChaCha20Rng,
}

impl Default for TcpTransport {
    fn default() -> Self {
        use rand::SeedableRng;
        TcpTransport {
            timeout: Duration::from_secs(2),
            retries: 3,
            rng: rand_chacha::ChaCha20Rng::from_entropy(),
        }
    }
}

impl TcpTransport {
    pub fn new(timeout: Duration, retries: u32) -> Self {
        TcpTransport {
            timeout,
            retries,
            ..TcpTransport::default()
        }
    }

    fn connect(&self, to: &Addr) -> Result<TcpStream, RpcError> {
        let mut addrs = to
            .to_socket_addrs()
            .map_err(|e| RpcError::Io(format!("resolve {to}: {e}")))?;
        let sa = addrs.next().ok_or(RpcError::Unreachable)?;
        let stream =
            TcpStream::connect_timeout(&sa, self.timeout).map_err(|_| RpcError::Unreachable)?;
        stream
            .set_read_timeout(Some(self.timeout))
            .and_then(|()| stream.set_write_timeout(Some(self.timeout)))
            .map_err(|e| RpcError::Io(e.to_string()))?;
        Ok(stream)
    }

    fn attempt(
        &mut self,
        from: &Contact,
        to: &Addr,
        req: &Request,
    ) -> Result<(Contact, Response), RpcError> {
        let mut stream = self.connect(to)?;
        let (kind, payload) = encode_request(req);
        let mut request_id = [0u8; 16];
        self.rng.fill_bytes(&mut request_id);
        let frame = Frame {
            kind,
            request_id,
            sender: from.clone(),
            payload,
        };
        write_frame(&mut stream, &frame).map_err(io_to_rpc)?;
        let reply = read_frame(&mut stream)
            .map_err(io_to_rpc)?
            .ok_or_else(|| RpcError::Io("connection closed before reply".into()))?;
        if reply.request_id != request_id {
            return Err(RpcError::Protocol("reply for a different request".into()));
        }
        if reply.kind != kind | RESPONSE_BIT {
            return Err(RpcError::Protocol(format!(
                "kind {:#04x} cannot answer {kind:#04x}",
                reply.kind
            )));
        }
        let resp = decode_response(reply.kind, &reply.payload)
            .map_err(|e| RpcError::Protocol(e.to_string()))?;
        Ok((reply.sender, resp))
    }
}

fn io_to_rpc(e: crate::wire::WireError) -> RpcError {
    match e {
        crate::wire::WireError::Io(ioe)
            if matches!(
                ioe.kind(),
                io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
            ) =>
        {
            RpcError::Timeout
        }
        crate::wire::WireError::Io(ioe) => RpcError::Io(ioe.to_string()),
        other => RpcError::Protocol(other.to_string()),
    }
}

impl Transport for TcpTransport {
    fn call(
        &mut self,
        from: &Contact,
        to: &Addr,
        req: &Request,
    ) -> Result<(Contact, Response), RpcError> {
        let mut last = RpcError::Unreachable;
        for _ in 0..=self.retries {
            match self.attempt(from, to, req) {
                Ok(out) => return Ok(out),
                Err(e @ RpcError::Protocol(_)) => return Err(e),
                Err(e) => last = e,
            }
        }
        Err(last)
    }
}

// ---- daemon runtime -----------------------------------------------------

/// Everything the event loop owns; commands run against this.
pub struct NodeCtx {
    pub node: Node,
    pub transport: TcpTransport,
    pub runtime: ClientRuntime,
}

enum Event {
    Rpc {
        sender: Contact,
        req: Request,
        reply: Sender<Response>,
    },
    Command(Box<dyn FnOnce(&mut NodeCtx) + Send>),
    Tick,
    Shutdown,
}

#[derive(Debug, Clone, Default)]
pub struct DaemonConfig {
    /// Anti-entropy cadence; `None` disables the timer.
    pub gossip_interval: Option<Duration>,
    /// Append one JSON object per node event to this file.
    pub log_path: Option<PathBuf>,
}

/// A running node: threads plus the channel into its event loop.
pub struct NodeHandle {
    contact: Contact,
    local_addr: SocketAddr,
    tx: Sender<Event>,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl NodeHandle {
    pub fn contact(&self) -> &Contact {
        &self.contact
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Runs a closure on the event-loop thread and returns its result.
    /// This is how callers read or mutate node state.
    pub fn command<R: Send + 'static>(
        &self,
        f: impl FnOnce(&mut NodeCtx) -> R + Send + 'static,
    ) -> R {
        let (tx, rx) = channel();
        self.tx
            .send(Event::Command(Box::new(move |ctx| {
                let _ = tx.send(f(ctx));
            })))
            .expect("event loop alive");
        rx.recv().expect("command completed")
    }

    /// Triggers one gossip round out of schedule.
    pub fn kick_gossip(&self) {
        let _ = self.tx.send(Event::Tick);
    }

    /// Stops all threads and joins them.
    pub fn stop(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.tx.send(Event::Shutdown);
        // Unblock the acceptor.
        let _ = TcpStream::connect_timeout(&self.local_addr, Duration::from_millis(200));
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

/// Starts the threads for one node on an already-bound listener. The
/// node's advertised address should match what peers can dial.
pub fn spawn_node(node: Node, listener: TcpListener, cfg: DaemonConfig) -> io::Result<NodeHandle> {
    let local_addr = listener.local_addr()?;
    let contact = node.contact.clone();
    let (tx, rx) = channel::<Event>();
    let stop = Arc::new(AtomicBool::new(false));
    let mut threads = Vec::new();

    // Event loop: sole owner of the node.
    let mut log = match &cfg.log_path {
        Some(p) => Some(io::BufWriter::new(
            std::fs::OpenOptions::new().create(true).append(true).open(p)?,
        )),
        None => None,
    };
    let tick_pending = Arc::new(AtomicBool::new(false));
    let loop_pending = tick_pending.clone();
    threads.push(thread::spawn(move || {
        let mut ctx = NodeCtx {
            node,
            // Fail fast inside the loop: a peer gossiping back at us at
            // the same moment blocks both loops until one read times
            // out, and every queued RPC waits behind that.
            transport: TcpTransport::new(Duration::from_secs(2), 2),
            runtime: ClientRuntime::new(),
        };
        while let Ok(event) = rx.recv() {
            match event {
                Event::Rpc { sender, req, reply } => {
                    let resp = ctx.node.handle_request(&sender, &req, wall_clock_us());
                    // Answer first; effects (notifies, pulls) follow.
                    let _ = reply.send(resp);
                    drain(&mut ctx, &mut log);
                }
                Event::Command(f) => {
                    f(&mut ctx);
                    drain(&mut ctx, &mut log);
                }
                Event::Tick => {
                    loop_pending.store(false, Ordering::SeqCst);
                    gossip_round(&mut ctx.node, &mut ctx.transport);
                    ctx.runtime.reconcile_maps(
                        &mut ctx.node,
                        &mut ctx.transport,
                        wall_clock_us(),
                    );
                    drain(&mut ctx, &mut log);
                }
                Event::Shutdown => break,
            }
        }
    }));

    // Acceptor: one short-lived thread per connection.
    let accept_tx = tx.clone();
    let accept_stop = stop.clone();
    let self_contact = contact.clone();
    threads.push(thread::spawn(move || {
        for stream in listener.incoming() {
            if accept_stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let tx = accept_tx.clone();
            let me = self_contact.clone();
            thread::spawn(move || serve_connection(stream, tx, me));
        }
    }));

    // Timer: wakes the event loop on the gossip cadence. Ticks coalesce
    // (at most one queued while the loop is busy) and the cadence is
    // jittered ±25% so two daemons cannot stay phase-locked, dialing
    // each other at the same instant every round.
    if let Some(interval) = cfg.gossip_interval {
        let timer_tx = tx.clone();
        let timer_stop = stop.clone();
        let timer_pending = tick_pending.clone();
        threads.push(thread::spawn(move || {
            let mut rng = rand::thread_rng();
            let step = Duration::from_millis(25).min(interval);
            let mut elapsed = Duration::ZERO;
            let mut target = interval.mul_f64(rng.gen_range(0.75..1.25));
            while !timer_stop.load(Ordering::SeqCst) {
                thread::sleep(step);
                elapsed += step;
                if elapsed >= target {
                    elapsed = Duration::ZERO;
                    target = interval.mul_f64(rng.gen_range(0.75..1.25));
                    if !timer_pending.swap(true, Ordering::SeqCst)
                        && timer_tx.send(Event::Tick).is_err()
                    {
                        break;
                    }
                }
            }
        }));
    }

    Ok(NodeHandle {
        contact,
        local_addr,
        tx,
        stop,
        threads,
    })
}

fn drain(ctx: &mut NodeCtx, log: &mut Option<io::BufWriter<std::fs::File>>) {
    use std::io::Write as _;
    loop {
        let effects = ctx.node.take_effects();
        if effects.is_empty() {
            break;
        }
        for e in effects {
            perform_effect(&mut ctx.node, &mut ctx.transport, e);
        }
    }
    ctx.runtime.drain_inbox(&mut ctx.node);
    let events = ctx.node.take_events();
    if let Some(w) = log {
        let t = wall_clock_us();
        for ev in events {
            let mut v = ev.json();
            if let Some(obj) = v.as_object_mut() {
                obj.insert("t".into(), serde_json::json!(t));
            }
            let _ = writeln!(w, "{v}");
        }
        let _ = w.flush();
    }
}

/// Reads frames off one connection, routes them through the event loop,
/// writes replies. Exits on EOF or the first malformed frame.
fn serve_connection(mut stream: TcpStream, tx: Sender<Event>, me: Contact) {
    let _ = stream.set_read_timeout(Some(Duration::from_secs(30)));
    loop {
        let frame = match read_frame(&mut stream) {
            Ok(Some(f)) => f,
            Ok(None) => return,
            Err(e) => {
                log::debug!("closing connection: {e}");
                return;
            }
        };
        if frame.is_response() {
            log::debug!("unexpected response frame on server side");
            return;
        }
        let req = match decode_request(frame.kind, &frame.payload) {
            Ok(r) => r,
            Err(e) => {
                log::debug!("rejecting request: {e}");
                return;
            }
        };
        let (reply_tx, reply_rx) = channel();
        if tx
            .send(Event::Rpc {
                sender: frame.sender.clone(),
                req,
                reply: reply_tx,
            })
            .is_err()
        {
            return; // shutting down
        }
        let Ok(resp) = reply_rx.recv() else { return };
        let (kind, payload) = match encode_response(frame.kind, &resp) {
            Ok(kp) => kp,
            Err(e) => {
                log::debug!("cannot encode response: {e}");
                return;
            }
        };
        let out = Frame {
            kind,
            request_id: frame.request_id,
            sender: me.clone(),
            payload,
        };
        if write_frame(&mut stream, &out).is_err() {
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dht::{bootstrap, Key, NodeConfig};
    use crate::model::{tuple_id, Tuple7, TuplePattern, Uuid};

    fn spawn(label: &str, cfg: DaemonConfig) -> NodeHandle {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let node = Node::new(
            Key::from_seed(label.as_bytes()),
            addr,
            NodeConfig::desk(),
            42,
        );
        spawn_node(node, listener, cfg).unwrap()
    }

    fn u(n: u128) -> Uuid {
        Uuid::from_u128(n)
    }

    #[test]
    fn rpc_round_trip_over_sockets() {
        let server = spawn("srv", DaemonConfig::default());
        let mut t = TcpTransport::new(Duration::from_secs(2), 1);
        let me = Contact::new(Key::from_seed(b"cli"), "127.0.0.1:9"); // never dialed

        let addr = server.local_addr().to_string();
        let (who, resp) = t.call(&me, &addr, &Request::Ping).unwrap();
        assert_eq!(resp, Response::Pong);
        assert_eq!(who.id, server.contact().id);

        let tuple = Tuple7::new(u(1), u(2), u(3), u(4), 99);
        let (_, resp) = t.call(&me, &addr, &Request::StoreTuple(tuple.clone())).unwrap();
        assert_eq!(resp, Response::Stored { new: true });
        let (_, resp) = t.call(&me, &addr, &Request::StoreTuple(tuple.clone())).unwrap();
        assert_eq!(resp, Response::Stored { new: false });

        let p = TuplePattern::new(Some(u(1)), None, None, None);
        let (_, resp) = t.call(&me, &addr, &Request::MultiGet(p)).unwrap();
        assert_eq!(resp, Response::Tuples(vec![tuple.clone()]));

        // The command channel sees the same store.
        let held = server.command(move |ctx| ctx.node.store.contains(&tuple_id(&tuple)));
        assert!(held);
        server.stop();
    }

    #[test]
    fn unreachable_and_timeout_errors() {
        let mut t = TcpTransport::new(Duration::from_millis(300), 0);
        let me = Contact::new(Key::from_seed(b"cli2"), "127.0.0.1:9");
        // Port 1 on localhost: refused immediately.
        let err = t.call(&me, &"127.0.0.1:1".to_string(), &Request::Ping);
        assert!(matches!(err, Err(RpcError::Unreachable)));
        let err = t.call(&me, &"not-an-address".to_string(), &Request::Ping);
        assert!(err.is_err());
    }

    #[test]
    fn two_daemons_bootstrap_and_gossip() {
        let a = spawn("node-a", DaemonConfig::default());
        let b = spawn(
            "node-b",
            DaemonConfig {
                gossip_interval: Some(Duration::from_millis(50)),
                log_path: None,
            },
        );
        let a_addr = a.contact().addr.clone();
        let joined = b.command(move |ctx| {
            bootstrap(&mut ctx.node, &mut ctx.transport, &[a_addr])
        });
        assert_eq!(joined.unwrap(), 1);

        // A tuple stored only at A reaches B by anti-entropy.
        let tuple = Tuple7::new(u(7), u(8), u(9), u(10), 123);
        let stored = {
            let t = tuple.clone();
            a.command(move |ctx| ctx.node.local_insert(&t).unwrap())
        };
        assert!(stored);
        let id = tuple_id(&tuple);
        let deadline = std::time::Instant::now() + Duration::from_secs(5);
        let mut seen = false;
        while std::time::Instant::now() < deadline {
            if b.command(move |ctx| ctx.node.store.contains(&id)) {
                seen = true;
                break;
            }
            thread::sleep(Duration::from_millis(25));
        }
        assert!(seen, "gossip should replicate the tuple to B");
        a.stop();
        b.stop();
    }
}
