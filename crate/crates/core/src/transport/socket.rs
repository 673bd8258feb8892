//! TCP transport: one node per call, one outgoing connection per peer.
//!
//! Each accepted connection gets a reader thread that decodes frames and
//! forwards them to the node's inbox. The first frame on every connection is
//! a `Hello` naming the sender. Per-pair FIFO follows from TCP ordering on a
//! single connection per directed pair.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};

use crate::error::{Error, Result};
use crate::protocol::{read_frame, write_frame, Message, NodeId};
use crate::transport::{Node, Reaction};

#[derive(Clone, Debug)]
pub struct SocketOptions {
    /// Longest the node waits for any message before giving up.
    pub idle_timeout: Duration,
    /// Longest spent retrying a connection to a peer that is not up yet.
    pub connect_timeout: Duration,
}

impl Default for SocketOptions {
    fn default() -> Self {
        Self {
            idle_timeout: Duration::from_secs(60),
            connect_timeout: Duration::from_secs(10),
        }
    }
}

enum Inbound {
    Msg(NodeId, Message),
    Failed(String),
}

/// Runs `node` as `id` until it reports done, receiving on `listener` and
/// sending to `peers`. Returns the node so callers can read its final state.
pub fn run_socket_node<N: Node>(
    id: NodeId,
    mut node: N,
    listener: TcpListener,
    peers: &HashMap<NodeId, SocketAddr>,
    opts: &SocketOptions,
) -> Result<N> {
    let (tx, rx) = mpsc::channel();
    let stop = Arc::new(AtomicBool::new(false));
    listener.set_nonblocking(true)?;
    let acceptor = {
        let stop = Arc::clone(&stop);
        thread::spawn(move || accept_loop(listener, tx, stop))
    };

    let clock = Instant::now();
    let mut outgoing: HashMap<NodeId, BufWriter<TcpStream>> = HashMap::new();
    let result = (|| {
        let reaction = node.start(0.0)?;
        deliver(id, reaction, peers, &mut outgoing, opts)?;
        while !node.is_done() {
            match rx.recv_timeout(opts.idle_timeout) {
                Ok(Inbound::Msg(from, msg)) => {
                    let now = clock.elapsed().as_secs_f64();
                    let reaction = node.handle(now, from, msg)?;
                    deliver(id, reaction, peers, &mut outgoing, opts)?;
                }
                Ok(Inbound::Failed(e)) => return Err(Error::Transport(e)),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(Error::Transport(format!(
                        "{id}: no message within {:?}",
                        opts.idle_timeout
                    )))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::Transport(format!("{id}: listener stopped")))
                }
            }
        }
        Ok(())
    })();
    stop.store(true, Ordering::SeqCst);
    for (_, mut w) in outgoing.drain() {
        let _ = w.flush();
    }
    let _ = acceptor.join();
    result.map(|()| node)
}

fn accept_loop(listener: TcpListener, tx: Sender<Inbound>, stop: Arc<AtomicBool>) {
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let tx = tx.clone();
                let stop = Arc::clone(&stop);
                thread::spawn(move || read_loop(stream, tx, stop));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(1));
            }
            Err(e) => {
                let _ = tx.send(Inbound::Failed(format!("accept failed: {e}")));
                return;
            }
        }
    }
}

fn read_loop(stream: TcpStream, tx: Sender<Inbound>, stop: Arc<AtomicBool>) {
    if stream.set_nonblocking(false).is_err() {
        return;
    }
    let _ = stream.set_nodelay(true);
    let mut reader = BufReader::new(stream);
    let from = match read_frame(&mut reader) {
        Ok(Some(Message::Hello(from))) => from,
        Ok(other) => {
            let _ = tx.send(Inbound::Failed(format!("expected hello, got {other:?}")));
            return;
        }
        Err(e) => {
            let _ = tx.send(Inbound::Failed(format!("handshake failed: {e}")));
            return;
        }
    };
    loop {
        match read_frame(&mut reader) {
            Ok(Some(msg)) => {
                // keep draining after the node is done so late senders never see a reset
                let _ = tx.send(Inbound::Msg(from, msg));
            }
            Ok(None) => return,
            Err(e) => {
                if !stop.load(Ordering::SeqCst) {
                    let _ = tx.send(Inbound::Failed(format!("read from {from} failed: {e}")));
                }
                return;
            }
        }
    }
}

fn deliver(
    me: NodeId,
    reaction: Reaction,
    peers: &HashMap<NodeId, SocketAddr>,
    outgoing: &mut HashMap<NodeId, BufWriter<TcpStream>>,
    opts: &SocketOptions,
) -> Result<()> {
    let mut touched = Vec::new();
    for (to, msg) in reaction.outbox {
        let w = match outgoing.entry(to) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(slot) => {
                let addr = peers.get(&to).ok_or(Error::UnknownEndpoint(to))?;
                let stream = connect(*addr, opts.connect_timeout)
                    .map_err(|e| Error::Transport(format!("{me} → {to} at {addr}: {e}")))?;
                let mut w = BufWriter::new(stream);
                write_frame(&mut w, &Message::Hello(me))?;
                slot.insert(w)
            }
        };
        if let Err(e) = write_frame(w, &msg) {
            // the peer already shut down; a real loss shows up as an idle timeout
            warn!("{me} → {to}: dropping connection after write error: {e}");
            outgoing.remove(&to);
            continue;
        }
        touched.push(to);
    }
    for to in touched {
        if let Some(w) = outgoing.get_mut(&to) {
            if let Err(e) = w.flush() {
                warn!("{me} → {to}: flush failed: {e}");
                outgoing.remove(&to);
            }
        }
    }
    Ok(())
}

fn connect(addr: SocketAddr, timeout: Duration) -> std::io::Result<TcpStream> {
    let deadline = Instant::now() + timeout;
    let mut backoff = Duration::from_millis(5);
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => {
                s.set_nodelay(true)?;
                return Ok(s);
            }
            Err(e) if Instant::now() < deadline => {
                debug!("connect to {addr} failed ({e}), retrying");
                thread::sleep(backoff);
                backoff = (backoff * 2).min(Duration::from_millis(200));
            }
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Control, TaskId};

    struct Echo {
        peer: NodeId,
        got: Vec<Message>,
        want: usize,
        initial: Vec<Message>,
    }

    impl Node for Echo {
        fn start(&mut self, _now: f64) -> Result<Reaction> {
            let mut r = Reaction::idle();
            for m in self.initial.drain(..) {
                r.send(self.peer, m);
            }
            Ok(r)
        }
        fn handle(&mut self, _now: f64, _from: NodeId, msg: Message) -> Result<Reaction> {
            self.got.push(msg);
            Ok(Reaction::idle())
        }
        fn is_done(&self) -> bool {
            self.got.len() >= self.want
        }
    }

    #[test]
    fn two_nodes_exchange_in_order() {
        let la = TcpListener::bind("127.0.0.1:0").unwrap();
        let lb = TcpListener::bind("127.0.0.1:0").unwrap();
        let peers: HashMap<NodeId, SocketAddr> = [
            (NodeId::Server, la.local_addr().unwrap()),
            (NodeId::Worker(0), lb.local_addr().unwrap()),
        ]
        .into();
        let msgs: Vec<Message> = (1..=50)
            .map(|t| Message::AssignTask(TaskId::update(t)))
            .collect();
        let a = Echo {
            peer: NodeId::Worker(0),
            got: vec![],
            want: 1,
            initial: msgs.clone(),
        };
        let b = Echo {
            peer: NodeId::Server,
            got: vec![],
            want: 50,
            initial: vec![Message::Control(Control::Stop)],
        };
        let opts = SocketOptions::default();
        let (pa, pb) = (peers.clone(), peers);
        let (oa, ob) = (opts.clone(), opts);
        let ha = thread::spawn(move || run_socket_node(NodeId::Server, a, la, &pa, &oa));
        let hb = thread::spawn(move || run_socket_node(NodeId::Worker(0), b, lb, &pb, &ob));
        let a = ha.join().unwrap().unwrap();
        let b = hb.join().unwrap().unwrap();
        assert_eq!(a.got, [Message::Control(Control::Stop)]);
        assert_eq!(b.got, msgs);
    }

    #[test]
    fn unreachable_peer_is_a_transport_error() {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        // reserve then free a port so nothing listens there
        let dead = TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap();
        let peers: HashMap<NodeId, SocketAddr> = [(NodeId::Server, dead)].into();
        let node = Echo {
            peer: NodeId::Server,
            got: vec![],
            want: 1,
            initial: vec![Message::Control(Control::Stop)],
        };
        let opts = SocketOptions {
            connect_timeout: Duration::from_millis(50),
            idle_timeout: Duration::from_millis(100),
        };
        let err = run_socket_node(NodeId::Worker(0), node, l, &peers, &opts)
            .err()
            .unwrap();
        assert!(matches!(err, Error::Transport(_)), "{err}");
    }
}
