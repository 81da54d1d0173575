//! The protocol over TCP: length-prefixed frames, a stateless answer server
//! and a client that queries all `N` servers concurrently.

use std::io::{self, BufReader, BufWriter, ErrorKind, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::allocation::Allocation;
use crate::error::{Error, Result};
use crate::params::Symbol;
use crate::scheme::{answer, decode, encode_queries, Answer, MessageStore, Query, RandomKey};
use crate::sim::KeySampler;

pub const MAX_FRAME: usize = 1 << 16;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

const QUERY_VECTOR: u8 = 0x00;
const QUERY_ESCAPE: u8 = 0x01;
const ANSWER_OK: u8 = 0x00;
const ANSWER_ERROR: u8 = 0xFF;

/// Reason byte carried by an error frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Reason {
    Truncated = 0x01,
    UnknownType = 0x02,
    BadValue = 0x03,
    Oversize = 0x04,
}

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> io::Result<()> {
    if payload.len() > MAX_FRAME {
        return Err(io::Error::new(
            ErrorKind::InvalidInput,
            "frame payload exceeds 65536 bytes",
        ));
    }
    w.write_all(&(payload.len() as u32).to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// Outcome of reading one frame.
#[derive(Debug, PartialEq, Eq)]
pub enum Incoming {
    Frame(Vec<u8>),
    /// Header announced more than [`MAX_FRAME`] bytes; the payload was skipped.
    Oversize(u32),
    /// The stream ended inside a frame.
    Truncated,
    Closed,
}

pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Incoming> {
    let mut header = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(Incoming::Closed),
            Ok(0) => return Ok(Incoming::Truncated),
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_be_bytes(header);
    if len as usize > MAX_FRAME {
        let skipped = io::copy(&mut r.take(len as u64), &mut io::sink())?;
        return Ok(if skipped < len as u64 {
            Incoming::Truncated
        } else {
            Incoming::Oversize(len)
        });
    }
    let mut payload = vec![0u8; len as usize];
    match r.read_exact(&mut payload) {
        Ok(()) => Ok(Incoming::Frame(payload)),
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => Ok(Incoming::Truncated),
        Err(e) => Err(e),
    }
}

pub fn encode_query(q: &Query) -> Vec<u8> {
    match q {
        Query::Vector(v) => std::iter::once(QUERY_VECTOR)
            .chain(v.iter().map(|&x| x as u8))
            .collect(),
        Query::Escape(m) => {
            let mut out = vec![QUERY_ESCAPE];
            out.extend_from_slice(&(*m as u16).to_be_bytes());
            out
        }
    }
}

/// Parses a query payload against a store of `k` messages of `l` symbols.
pub fn decode_query(payload: &[u8], k: usize, l: usize) -> std::result::Result<Query, Reason> {
    let (&kind, body) = payload.split_first().ok_or(Reason::Truncated)?;
    match kind {
        QUERY_VECTOR => {
            if body.len() < k {
                return Err(Reason::Truncated);
            }
            if body.len() > k {
                return Err(Reason::BadValue);
            }
            if body.iter().any(|&x| x as usize > l) {
                return Err(Reason::BadValue);
            }
            Ok(Query::Vector(body.iter().map(|&x| x as usize).collect()))
        }
        QUERY_ESCAPE => {
            let bytes: [u8; 2] = match body.len() {
                0 | 1 => return Err(Reason::Truncated),
                2 => [body[0], body[1]],
                _ => return Err(Reason::BadValue),
            };
            let m = u16::from_be_bytes(bytes) as usize;
            if !(1..=k).contains(&m) {
                return Err(Reason::BadValue);
            }
            Ok(Query::Escape(m))
        }
        _ => Err(Reason::UnknownType),
    }
}

pub fn encode_answer(a: &Answer) -> Vec<u8> {
    std::iter::once(ANSWER_OK)
        .chain(a.symbols.iter().map(|s| s.0))
        .collect()
}

pub fn error_frame(reason: Reason) -> Vec<u8> {
    vec![ANSWER_ERROR, reason as u8]
}

/// The reply payload for one request payload.
pub fn respond(payload: &[u8], store: &MessageStore) -> Vec<u8> {
    match decode_query(payload, store.k(), store.l()) {
        Ok(q) => encode_answer(&answer(&q, store)),
        Err(reason) => error_frame(reason),
    }
}

fn handle_connection(stream: TcpStream, store: &MessageStore) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    loop {
        match read_frame(&mut reader)? {
            Incoming::Frame(payload) => write_frame(&mut writer, &respond(&payload, store))?,
            Incoming::Oversize(_) => write_frame(&mut writer, &error_frame(Reason::Oversize))?,
            Incoming::Truncated => {
                write_frame(&mut writer, &error_frame(Reason::Truncated))?;
                return Ok(());
            }
            Incoming::Closed => return Ok(()),
        }
    }
}

/// A bound answer server. Each connection gets its own thread; the store is
/// shared read-only.
pub struct Server {
    listener: TcpListener,
    store: Arc<MessageStore>,
    stop: Arc<AtomicBool>,
}

impl Server {
    pub fn bind(store: MessageStore, address: impl ToSocketAddrs) -> Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(address)?,
            store: Arc::new(store),
            stop: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Accepts connections until the shutdown flag is raised.
    pub fn run(self) -> Result<()> {
        for conn in self.listener.incoming() {
            if self.stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = conn else { continue };
            let store = Arc::clone(&self.store);
            thread::spawn(move || {
                let _ = handle_connection(stream, &store);
            });
        }
        Ok(())
    }

    /// Runs on a background thread.
    pub fn spawn(self) -> Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::clone(&self.stop);
        let thread = thread::spawn(move || self.run());
        Ok(ServerHandle {
            addr,
            stop,
            thread: Some(thread),
        })
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop_now();
        }
    }
}

/// Serves `store_file` on `address` until the process ends.
pub fn serve(store_file: impl AsRef<Path>, address: &str) -> Result<()> {
    let store = MessageStore::load(store_file)?;
    Server::bind(store, address)?.run()
}

struct Endpoint {
    name: String,
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Endpoint {
    fn connect(name: &str, timeout: Duration) -> Result<Self> {
        let failed = |source| Error::ConnectionFailed {
            endpoint: name.to_string(),
            source,
        };
        let addrs: Vec<SocketAddr> = name.to_socket_addrs().map_err(failed)?.collect();
        let mut last = io::Error::new(ErrorKind::NotFound, "address resolved to nothing");
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, timeout) {
                Ok(stream) => {
                    stream.set_read_timeout(Some(timeout)).map_err(failed)?;
                    stream.set_write_timeout(Some(timeout)).map_err(failed)?;
                    stream.set_nodelay(true).map_err(failed)?;
                    return Ok(Self {
                        name: name.to_string(),
                        reader: BufReader::new(stream.try_clone().map_err(failed)?),
                        writer: BufWriter::new(stream),
                    });
                }
                Err(e) => last = e,
            }
        }
        Err(failed(last))
    }

    fn io_error(&self, e: io::Error) -> Error {
        match e.kind() {
            ErrorKind::WouldBlock | ErrorKind::TimedOut => Error::Timeout {
                endpoint: self.name.clone(),
            },
            _ => Error::ConnectionFailed {
                endpoint: self.name.clone(),
                source: e,
            },
        }
    }

    fn exchange(&mut self, q: &Query, l: usize) -> Result<Answer> {
        write_frame(&mut self.writer, &encode_query(q)).map_err(|e| self.io_error(e))?;
        let reply = match read_frame(&mut self.reader).map_err(|e| self.io_error(e))? {
            Incoming::Frame(p) => p,
            other => {
                return Err(Error::Protocol(format!(
                    "{}: unexpected reply {other:?}",
                    self.name
                )))
            }
        };
        match reply.split_first() {
            Some((&ANSWER_OK, symbols)) => {
                let expected = q.answer_length(l);
                if symbols.len() != expected {
                    return Err(Error::AnswerLengthMismatch {
                        endpoint: self.name.clone(),
                        expected,
                        got: symbols.len(),
                    });
                }
                Ok(Answer {
                    symbols: symbols.iter().map(|&b| Symbol(b)).collect(),
                })
            }
            Some((&ANSWER_ERROR, rest)) => Err(Error::ServerError {
                endpoint: self.name.clone(),
                code: rest.first().copied().unwrap_or(0),
            }),
            _ => Err(Error::Protocol(format!(
                "{}: malformed answer frame",
                self.name
            ))),
        }
    }
}

/// Outcome of one networked retrieval.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Retrieval {
    pub message: Vec<Symbol>,
    pub key: RandomKey,
    /// Query frames sent, one per server.
    pub frames_sent: usize,
    /// Servers that returned at least one symbol.
    pub nonempty_answers: usize,
    pub symbols_downloaded: usize,
}

/// Persistent connections to the `N` servers, in server order.
pub struct Client {
    endpoints: Vec<Endpoint>,
}

impl Client {
    pub fn connect(addresses: &[String], timeout: Duration) -> Result<Self> {
        let endpoints = addresses
            .iter()
            .map(|a| Endpoint::connect(a, timeout))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { endpoints })
    }

    /// Sends `queries[i]` to server `i + 1` concurrently and collects the answers.
    pub fn exchange(&mut self, queries: &[Query], l: usize) -> Result<Vec<Answer>> {
        if queries.len() != self.endpoints.len() {
            return Err(Error::InvalidParams(format!(
                "{} queries for {} endpoints",
                queries.len(),
                self.endpoints.len()
            )));
        }
        thread::scope(|s| {
            let handles: Vec<_> = self
                .endpoints
                .iter_mut()
                .zip(queries)
                .map(|(ep, q)| s.spawn(move || ep.exchange(q, l)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("endpoint worker panicked"))
                .collect()
        })
    }

    pub fn retrieve_with_key(
        &mut self,
        k: usize,
        key: &RandomKey,
        a: &Allocation,
    ) -> Result<Retrieval> {
        let params = a.params();
        if self.endpoints.len() != params.n() {
            return Err(Error::InvalidParams(format!(
                "{} endpoints for N = {}",
                self.endpoints.len(),
                params.n()
            )));
        }
        let queries = encode_queries(k, key, params)?;
        let answers = self.exchange(&queries, params.l())?;
        let message = decode(&answers, k, key, params)?;
        Ok(Retrieval {
            message,
            key: key.clone(),
            frames_sent: queries.len(),
            nonempty_answers: answers.iter().filter(|x| !x.symbols.is_empty()).count(),
            symbols_downloaded: answers.iter().map(|x| x.symbols.len()).sum(),
        })
    }

    pub fn retrieve(
        &mut self,
        k: usize,
        a: &Allocation,
        rng: &mut ChaCha8Rng,
    ) -> Result<Retrieval> {
        let key = KeySampler::new(a, k)?.sample(rng).clone();
        self.retrieve_with_key(k, &key, a)
    }

    pub fn close(self) {
        for ep in self.endpoints {
            let _ = ep.writer.get_ref().shutdown(Shutdown::Both);
        }
    }
}

/// One retrieval of message `k` with a key drawn from `a` under `seed`.
pub fn client_retrieve(
    k: usize,
    a: &Allocation,
    addresses: &[String],
    seed: u64,
) -> Result<Retrieval> {
    let mut client = Client::connect(addresses, DEFAULT_TIMEOUT)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = client.retrieve(k, a, &mut rng);
    client.close();
    out
}
