//! Blocking socket endpoints speaking the wire format.
//!
//! Over TCP one connection carries one handshake. Over UDP each message is
//! one datagram and the server tells Message1 and Message3 apart by length.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs, UdpSocket};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use rand::RngCore;

use super::protocol::{client_init, client_solve, Gatekeeper};
use super::wire::{Message1, Message2, Message3, Verdict, MESSAGE1_LEN, MESSAGE2_LEN, MESSAGE3_HEADER_LEN, VERDICT_HEADER_LEN};
use super::{GatekeeperError, HashAlg};

/// Proxies an admitted request and produces the response body.
pub type Forward = Arc<dyn Fn(&[u8]) -> Vec<u8> + Send + Sync>;

/// What a client saw during one handshake.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientReport {
    pub verdict: Verdict,
    pub k: u8,
    pub attempts: u64,
    pub elapsed: Duration,
}

fn micros_since(start: Instant) -> u64 {
    start.elapsed().as_micros() as u64
}

fn serve_connection(mut stream: TcpStream, gk: &Mutex<Gatekeeper>, forward: &Forward, start: Instant) -> Result<(), GatekeeperError> {
    let peer = stream.peer_addr()?.ip();
    let mut m1 = [0u8; MESSAGE1_LEN];
    stream.read_exact(&mut m1)?;
    let m1 = Message1::decode(&m1)?;
    let mut rng = rand::thread_rng();
    let m2 = gk.lock().expect("gatekeeper lock").challenge(peer, &m1, micros_since(start), &mut rng);
    stream.write_all(&m2.encode())?;

    let mut buf = vec![0u8; MESSAGE3_HEADER_LEN];
    stream.read_exact(&mut buf)?;
    let len = Message3::request_len(&buf)?;
    buf.resize(MESSAGE3_HEADER_LEN + len, 0);
    stream.read_exact(&mut buf[MESSAGE3_HEADER_LEN..])?;
    let m3 = Message3::decode(&buf)?;
    let verdict = gk
        .lock()
        .expect("gatekeeper lock")
        .admit(peer, &m3, micros_since(start), &mut rng, |r| forward(r));
    stream.write_all(&verdict.encode())?;
    Ok(())
}

/// Serves handshakes on `listener`, one thread per connection. Returns after
/// `max_connections` connections when given, otherwise runs until the
/// listener fails.
pub fn serve_tcp(
    listener: TcpListener,
    gk: Arc<Mutex<Gatekeeper>>,
    forward: Forward,
    max_connections: Option<usize>,
) -> Result<(), GatekeeperError> {
    let start = Instant::now();
    let mut workers = Vec::new();
    for (served, stream) in listener.incoming().enumerate() {
        let stream = stream?;
        let gk = Arc::clone(&gk);
        let forward = Arc::clone(&forward);
        workers.push(thread::spawn(move || {
            // a misbehaving client only loses its own connection
            let _ = serve_connection(stream, &gk, &forward, start);
        }));
        if max_connections.is_some_and(|m| served + 1 >= m) {
            break;
        }
    }
    for w in workers {
        let _ = w.join();
    }
    Ok(())
}

/// Serves handshakes on a datagram socket. Returns after `max_datagrams`
/// datagrams when given.
pub fn serve_udp(
    socket: UdpSocket,
    gk: Arc<Mutex<Gatekeeper>>,
    forward: Forward,
    max_datagrams: Option<usize>,
) -> Result<(), GatekeeperError> {
    let start = Instant::now();
    let mut rng = rand::thread_rng();
    let mut buf = vec![0u8; 65_536];
    let mut served = 0usize;
    while max_datagrams.map_or(true, |m| served < m) {
        let (n, from) = socket.recv_from(&mut buf)?;
        served += 1;
        let now = micros_since(start);
        let reply = if n == MESSAGE1_LEN {
            let m1 = Message1::decode(&buf[..n])?;
            gk.lock().expect("gatekeeper lock").challenge(from.ip(), &m1, now, &mut rng).encode().to_vec()
        } else {
            match Message3::decode(&buf[..n]) {
                Ok(m3) => gk
                    .lock()
                    .expect("gatekeeper lock")
                    .admit(from.ip(), &m3, now, &mut rng, |r| forward(r))
                    .encode(),
                Err(_) => continue,
            }
        };
        socket.send_to(&reply, from)?;
    }
    Ok(())
}

/// Runs one full handshake over TCP.
pub fn handshake_tcp<A: ToSocketAddrs, R: RngCore>(
    addr: A,
    request: &[u8],
    alg: HashAlg,
    rng: &mut R,
) -> Result<ClientReport, GatekeeperError> {
    let begin = Instant::now();
    let mut stream = TcpStream::connect(addr)?;
    let (mut session, m1) = client_init(rng);
    stream.write_all(&m1.encode())?;
    let mut m2 = [0u8; MESSAGE2_LEN];
    stream.read_exact(&mut m2)?;
    session.accept_challenge(&Message2::decode(&m2)?)?;
    let solution = client_solve(&mut session, alg, rng)?;
    stream.write_all(&session.message3(request.to_vec())?.encode())?;
    let mut buf = vec![0u8; VERDICT_HEADER_LEN];
    stream.read_exact(&mut buf)?;
    let len = Verdict::body_len(&buf)?;
    buf.resize(VERDICT_HEADER_LEN + len, 0);
    stream.read_exact(&mut buf[VERDICT_HEADER_LEN..])?;
    let verdict = Verdict::decode(&buf)?;
    session.finish(&verdict)?;
    Ok(ClientReport {
        verdict,
        k: session.k,
        attempts: solution.attempts,
        elapsed: begin.elapsed(),
    })
}

/// Runs one full handshake over UDP, waiting at most `timeout` per reply.
pub fn handshake_udp<R: RngCore>(
    server: SocketAddr,
    request: &[u8],
    alg: HashAlg,
    timeout: Duration,
    rng: &mut R,
) -> Result<ClientReport, GatekeeperError> {
    let begin = Instant::now();
    let bind: SocketAddr = if server.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" }.parse().expect("literal address");
    let socket = UdpSocket::bind(bind)?;
    socket.set_read_timeout(Some(timeout))?;
    socket.connect(server)?;
    let (mut session, m1) = client_init(rng);
    socket.send(&m1.encode())?;
    let mut buf = vec![0u8; 65_536];
    let n = socket.recv(&mut buf)?;
    session.accept_challenge(&Message2::decode(&buf[..n])?)?;
    let solution = client_solve(&mut session, alg, rng)?;
    socket.send(&session.message3(request.to_vec())?.encode())?;
    let n = socket.recv(&mut buf)?;
    let verdict = Verdict::decode(&buf[..n])?;
    session.finish(&verdict)?;
    Ok(ClientReport {
        verdict,
        k: session.k,
        attempts: solution.attempts,
        elapsed: begin.elapsed(),
    })
}
