use std::collections::{BTreeMap, HashMap};
use std::io::{self, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crossbeam_channel::{bounded, Receiver, Sender, TrySendError};

use super::log::{hex, Session};
use super::pacer::{Clock, Pacer, PacerStats, SystemClock};
use super::{Outbound, ServerError, SimStats};
use crate::protocol::{
    decode, encode, handshake_response, parse_handshake, read_frame, write_frame, Body, Header, Message, Opcode,
};

const POLL: Duration = Duration::from_millis(20);
const WS_OUT_QUEUE: usize = 1024;

#[derive(Debug, Clone)]
pub struct NetConfig {
    pub udp: Option<SocketAddr>,
    pub ws: Option<SocketAddr>,
    /// Stop after this much sim time.
    pub duration_s: Option<f64>,
    /// Stop once every station that joined has left.
    pub exit_when_empty: bool,
    /// Inbound datagrams buffered between ticks; excess is dropped.
    pub queue_capacity: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            udp: None,
            ws: None,
            duration_s: None,
            exit_when_empty: false,
            queue_capacity: 4096,
        }
    }
}

/// Cloneable flag that ends [`serve`] at the next tick boundary.
#[derive(Debug, Clone, Default)]
pub struct StopHandle(Arc<AtomicBool>);

impl StopHandle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stop(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_stopped(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NetStats {
    pub received: u64,
    pub dropped: u64,
    pub decode_errors: u64,
    pub sent: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServeSummary {
    pub ticks: u64,
    pub digest: String,
    pub pacer: PacerStats,
    pub net: NetStats,
    pub sim: SimStats,
}

enum PeerTx {
    Udp(SocketAddr),
    Ws(Sender<Vec<u8>>, TcpStream),
}

#[derive(Default)]
struct Peers {
    next: u32,
    udp: HashMap<SocketAddr, u32>,
    tx: BTreeMap<u32, PeerTx>,
}

impl Peers {
    fn add(&mut self, tx: PeerTx) -> u32 {
        self.next += 1;
        if let PeerTx::Udp(addr) = tx {
            self.udp.insert(addr, self.next);
        }
        self.tx.insert(self.next, tx);
        self.next
    }

    fn udp_source(&mut self, addr: SocketAddr) -> u32 {
        match self.udp.get(&addr) {
            Some(&id) => id,
            None => self.add(PeerTx::Udp(addr)),
        }
    }
}

struct Shared {
    peers: Mutex<Peers>,
    stop: StopHandle,
    clock: SystemClock,
    session: u16,
    pong_seq: AtomicU64,
    received: AtomicU64,
    dropped: AtomicU64,
}

impl Shared {
    fn enqueue(&self, tx: &Sender<(u32, Vec<u8>)>, source: u32, bytes: Vec<u8>) {
        self.received.fetch_add(1, Ordering::Relaxed);
        if let Err(TrySendError::Full(_)) = tx.try_send((source, bytes)) {
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
    }

    /// PONG for a PING, or `None` if the datagram is something else.
    fn pong(&self, bytes: &[u8], t1: u64) -> Option<Vec<u8>> {
        let msg = decode(bytes).ok()?;
        let Body::Ping { t0 } = msg.body else {
            return None;
        };
        let header = Header {
            session: self.session,
            seq: self.pong_seq.fetch_add(1, Ordering::Relaxed) as u32 + 1,
            timestamp_us: self.clock.now_us(),
            ..Header::default()
        };
        let body = Body::Pong {
            t0,
            t1,
            t2: self.clock.now_us(),
        };
        encode(&Message::new(header, body)).ok()
    }
}

/// Bound sockets, ready to run a session.
pub struct Server {
    udp: Option<UdpSocket>,
    ws: Option<TcpListener>,
    cfg: NetConfig,
}

impl Server {
    pub fn bind(cfg: NetConfig) -> Result<Self, ServerError> {
        let udp = cfg.udp.map(UdpSocket::bind).transpose()?;
        let ws = cfg.ws.map(TcpListener::bind).transpose()?;
        Ok(Self { udp, ws, cfg })
    }

    pub fn udp_addr(&self) -> Option<SocketAddr> {
        self.udp.as_ref().and_then(|s| s.local_addr().ok())
    }

    pub fn ws_addr(&self) -> Option<SocketAddr> {
        self.ws.as_ref().and_then(|s| s.local_addr().ok())
    }

    /// Run the tick loop until stopped; returns the summary and log sink.
    pub fn run<W: Write>(
        self,
        mut session: Session<W>,
        stop: StopHandle,
    ) -> Result<(ServeSummary, Option<W>), ServerError> {
        let config = *session.sim().config();
        let shared = Arc::new(Shared {
            peers: Mutex::new(Peers::default()),
            stop: stop.clone(),
            clock: SystemClock::new(),
            session: config.session,
            pong_seq: AtomicU64::new(0),
            received: AtomicU64::new(0),
            dropped: AtomicU64::new(0),
        });
        let (in_tx, in_rx) = bounded(self.cfg.queue_capacity.max(1));
        let mut threads: Vec<JoinHandle<()>> = Vec::new();
        let udp_out = match &self.udp {
            Some(s) => Some(s.try_clone()?),
            None => None,
        };
        if let Some(sock) = self.udp {
            sock.set_read_timeout(Some(POLL))?;
            let (shared, tx) = (shared.clone(), in_tx.clone());
            threads.push(thread::spawn(move || udp_loop(sock, &shared, &tx)));
        }
        if let Some(listener) = self.ws {
            listener.set_nonblocking(true)?;
            let (shared, tx) = (shared.clone(), in_tx.clone());
            threads.push(thread::spawn(move || accept_loop(listener, shared, tx)));
        }
        drop(in_tx);

        let mut net = NetStats::default();
        let rate = config.tick_rate_hz;
        let max_ticks = self.cfg.duration_s.map(|d| (d * rate as f64).round() as u64);
        let mut pacer = Pacer::new(rate, shared.clock.now_us());
        let mut had_members = false;
        let mut next_report = shared.clock.now_us() + 1_000_000;
        let mut late_reported = 0;
        let result = (|| -> Result<(), ServerError> {
            'run: loop {
                pacer.wait(&shared.clock);
                let due = pacer.due(shared.clock.now_us());
                for _ in 0..due {
                    if stop.is_stopped() || max_ticks.is_some_and(|m| session.sim().tick() >= m) {
                        break 'run;
                    }
                    drain(&in_rx, &mut session, &shared, udp_out.as_ref(), &mut net)?;
                    let out = session.step()?;
                    send(&out.outbound, &shared, udp_out.as_ref(), &mut net);
                    pacer.ran(shared.clock.now_us());
                    let members = session.sim().members();
                    had_members |= !members.is_empty();
                    if self.cfg.exit_when_empty && had_members && members.is_empty() {
                        break 'run;
                    }
                }
                let now = shared.clock.now_us();
                if now >= next_report {
                    next_report += 1_000_000;
                    let p = pacer.stats();
                    net.received = shared.received.load(Ordering::Relaxed);
                    net.dropped = shared.dropped.load(Ordering::Relaxed);
                    if p.late_ticks > late_reported {
                        tracing::warn!(late = p.late_ticks - late_reported, max_lag_us = p.max_lag_us, "tick overrun");
                        late_reported = p.late_ticks;
                    }
                    tracing::info!(
                        tick = session.sim().tick(),
                        members = session.sim().members().len(),
                        received = net.received,
                        dropped = net.dropped,
                        sent = net.sent,
                        "stats"
                    );
                }
            }
            Ok(())
        })();
        stop.stop();
        for (_, tx) in std::mem::take(&mut shared.peers.lock().expect("peer lock").tx) {
            if let PeerTx::Ws(_, stream) = tx {
                let _ = stream.shutdown(Shutdown::Both);
            }
        }
        for t in threads {
            let _ = t.join();
        }
        result?;
        net.received = shared.received.load(Ordering::Relaxed);
        net.dropped = shared.dropped.load(Ordering::Relaxed);
        let sim_stats = session.sim().stats();
        let (sim, sink) = session.finish()?;
        let summary = ServeSummary {
            ticks: sim.tick(),
            digest: hex(&sim.state_digest()),
            pacer: pacer.stats(),
            net,
            sim: sim_stats,
        };
        Ok((summary, sink))
    }
}

/// Bind, then run until `stop` fires or an exit condition is met.
pub fn serve<W: Write>(
    session: Session<W>,
    cfg: NetConfig,
    stop: StopHandle,
) -> Result<(ServeSummary, Option<W>), ServerError> {
    Server::bind(cfg)?.run(session, stop)
}

fn drain<W: Write>(
    rx: &Receiver<(u32, Vec<u8>)>,
    session: &mut Session<W>,
    shared: &Shared,
    udp: Option<&UdpSocket>,
    net: &mut NetStats,
) -> io::Result<()> {
    while let Ok((source, bytes)) = rx.try_recv() {
        match session.handle(source, &bytes)? {
            Ok(replies) => send(&replies, shared, udp, net),
            Err(e) => {
                net.decode_errors += 1;
                tracing::warn!(source, error = %e, "dropping malformed datagram");
            }
        }
    }
    Ok(())
}

fn send(out: &[Outbound], shared: &Shared, udp: Option<&UdpSocket>, net: &mut NetStats) {
    let peers = shared.peers.lock().expect("peer lock");
    for o in out {
        for to in &o.to {
            match peers.tx.get(to) {
                Some(PeerTx::Udp(addr)) => {
                    if let Some(sock) = udp {
                        for d in &o.datagrams {
                            if sock.send_to(d, addr).is_ok() {
                                net.sent += 1;
                            }
                        }
                    }
                }
                Some(PeerTx::Ws(tx, _)) => {
                    for d in &o.datagrams {
                        if tx.try_send(d.clone()).is_ok() {
                            net.sent += 1;
                        }
                    }
                }
                None => {}
            }
        }
    }
}

fn udp_loop(sock: UdpSocket, shared: &Shared, tx: &Sender<(u32, Vec<u8>)>) {
    let mut buf = vec![0u8; 65_536];
    while !shared.stop.is_stopped() {
        let (n, addr) = match sock.recv_from(&mut buf) {
            Ok(r) => r,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => continue,
            Err(e) => {
                tracing::warn!(error = %e, "udp receive failed");
                continue;
            }
        };
        let t1 = shared.clock.now_us();
        let bytes = &buf[..n];
        if let Some(pong) = shared.pong(bytes, t1) {
            let _ = sock.send_to(&pong, addr);
            continue;
        }
        let source = shared.peers.lock().expect("peer lock").udp_source(addr);
        shared.enqueue(tx, source, bytes.to_vec());
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>, tx: Sender<(u32, Vec<u8>)>) {
    let mut conns = Vec::new();
    while !shared.stop.is_stopped() {
        match listener.accept() {
            Ok((stream, addr)) => {
                let (shared, tx) = (shared.clone(), tx.clone());
                conns.push(thread::spawn(move || {
                    if let Err(e) = ws_connection(stream, &shared, &tx) {
                        tracing::debug!(%addr, error = %e, "websocket connection ended");
                    }
                }));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => {
                tracing::warn!(error = %e, "websocket accept failed");
                thread::sleep(POLL);
            }
        }
    }
    for c in conns {
        let _ = c.join();
    }
}

/// Synthetic BYE for a station whose connection dropped.
fn bye(session: u16) -> Vec<u8> {
    let header = Header {
        session,
        seq: u32::MAX,
        ..Header::default()
    };
    encode(&Message::new(header, Body::Bye)).expect("BYE encodes")
}

fn ws_connection(stream: TcpStream, shared: &Shared, tx: &Sender<(u32, Vec<u8>)>) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream.try_clone()?;
    let key = match parse_handshake(&mut reader) {
        Ok(k) => k,
        Err(e) => {
            let _ = writer.write_all(b"HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\n\r\n");
            return Err(io::Error::new(io::ErrorKind::InvalidData, e.to_string()));
        }
    };
    writer.write_all(handshake_response(&key).as_bytes())?;

    let (out_tx, out_rx) = bounded::<Vec<u8>>(WS_OUT_QUEUE);
    let source = shared
        .peers
        .lock()
        .expect("peer lock")
        .add(PeerTx::Ws(out_tx.clone(), stream.try_clone()?));
    let mut w = writer.try_clone()?;
    let writer_thread = thread::spawn(move || {
        for payload in out_rx {
            if write_frame(&mut w, Opcode::Binary, &payload).is_err() {
                break;
            }
        }
    });

    let close_code = loop {
        let frame = match read_frame(&mut reader, true) {
            Ok(f) => f,
            Err(e) => break Some(e.close_code()),
        };
        match frame.opcode {
            Opcode::Binary => {
                let t1 = shared.clock.now_us();
                match shared.pong(&frame.payload, t1) {
                    Some(pong) => {
                        let _ = out_tx.try_send(pong);
                    }
                    None => shared.enqueue(tx, source, frame.payload),
                }
            }
            Opcode::Ping => {
                let _ = write_frame(&mut writer, Opcode::Pong, &frame.payload);
            }
            Opcode::Pong => {}
            Opcode::Close => break Some(1000),
            Opcode::Text | Opcode::Continuation => break Some(crate::protocol::CLOSE_PROTOCOL_ERROR),
        }
    };
    if let Some(code) = close_code {
        let _ = write_frame(&mut writer, Opcode::Close, &code.to_be_bytes());
    }
    let _ = stream.shutdown(Shutdown::Both);
    shared.peers.lock().expect("peer lock").tx.remove(&source);
    drop(out_tx);
    if !shared.stop.is_stopped() {
        shared.enqueue(tx, source, bye(shared.session));
    }
    let _ = writer_thread.join();
    Ok(())
}
