//! Client side: a [`TransportProvider`] over real TCP connections.

use std::net::{Shutdown, SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use speedlab_core::engines::{
    run_engine, AccountingMode, AdaptivePolicy, ConnCounters, ConnId, EngineError, EngineKind, ProviderError,
    SpeedReport, TransportProvider,
};
use speedlab_core::Direction;

use crate::frame::{self, close_frame, CounterReport, Frame, FrameType, SessionResult, Start};
use crate::WireError;

pub const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);
/// A session with no traffic from the server for this long is dead.
const READ_TIMEOUT: Duration = Duration::from_secs(5);
const DATA_FRAME_BYTES: usize = 64 * 1024;

#[derive(Default)]
struct Shared {
    sender_app: AtomicU64,
    receiver_acked: AtomicU64,
    stop: AtomicBool,
    error: Mutex<Option<String>>,
    result: Mutex<Option<SessionResult>>,
}

impl Shared {
    fn fail(&self, e: WireError) {
        let mut slot = self.error.lock().unwrap();
        if slot.is_none() {
            *slot = Some(e.to_string());
        }
    }
}

struct Conn {
    direction: Direction,
    stream: TcpStream,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
    closed: bool,
}

/// Connections to one measurement server.
pub struct WireProvider {
    addr: SocketAddr,
    engine: EngineKind,
    connect_timeout: Duration,
    epoch: Instant,
    conns: Vec<Conn>,
}

impl WireProvider {
    pub fn new(endpoint: impl ToSocketAddrs, engine: EngineKind) -> Result<Self, ProviderError> {
        let addr = endpoint
            .to_socket_addrs()
            .map_err(|e| ProviderError::Connect(e.to_string()))?
            .next()
            .ok_or_else(|| ProviderError::Connect("endpoint resolved to no address".into()))?;
        Ok(WireProvider {
            addr,
            engine,
            connect_timeout: CONNECT_TIMEOUT,
            epoch: Instant::now(),
            conns: Vec::new(),
        })
    }

    pub fn with_connect_timeout(mut self, t: Duration) -> Self {
        self.connect_timeout = t;
        self
    }

    /// Server totals for a closed connection.
    pub fn server_result(&self, conn: ConnId) -> Option<SessionResult> {
        *self.conns.get(conn)?.shared.result.lock().unwrap()
    }

    /// Payload bytes this side has seen so far, including any drained after
    /// close.
    pub fn local_bytes(&self, conn: ConnId) -> Option<ConnCounters> {
        self.conns.get(conn).map(|c| counters(c))
    }

    fn check(&self) -> Result<(), ProviderError> {
        for (i, c) in self.conns.iter().enumerate() {
            if c.closed {
                continue;
            }
            if let Some(e) = c.shared.error.lock().unwrap().as_ref() {
                return Err(ProviderError::Io(format!("connection {i}: {e}")));
            }
        }
        Ok(())
    }
}

fn counters(c: &Conn) -> ConnCounters {
    ConnCounters {
        sender_app_bytes: c.shared.sender_app.load(Ordering::Acquire),
        receiver_acked_bytes: c.shared.receiver_acked.load(Ordering::Acquire),
        srtt_s: srtt(&c.stream),
    }
}

#[cfg(target_os = "linux")]
fn srtt(stream: &TcpStream) -> Option<f64> {
    use std::os::fd::AsRawFd;
    let mut info: libc::tcp_info = unsafe { std::mem::zeroed() };
    let mut len = std::mem::size_of::<libc::tcp_info>() as libc::socklen_t;
    // SAFETY: `info` is a properly sized, writable tcp_info and `len` holds its size.
    let rc = unsafe {
        libc::getsockopt(
            stream.as_raw_fd(),
            libc::IPPROTO_TCP,
            libc::TCP_INFO,
            &mut info as *mut libc::tcp_info as *mut libc::c_void,
            &mut len,
        )
    };
    (rc == 0 && info.tcpi_rtt > 0).then(|| info.tcpi_rtt as f64 / 1e6)
}

#[cfg(not(target_os = "linux"))]
fn srtt(_stream: &TcpStream) -> Option<f64> {
    None
}

/// Download reader: count DATA until RESULT.
fn read_download(mut r: TcpStream, shared: Arc<Shared>) {
    let mut scratch = vec![0u8; 64 * 1024];
    loop {
        let step = match frame::read_header(&mut r) {
            Ok(Some((FrameType::Data, len))) => frame::drain_payload(&mut r, len, &mut scratch, |n| {
                shared.sender_app.fetch_add(n as u64, Ordering::AcqRel);
                shared.receiver_acked.fetch_add(n as u64, Ordering::AcqRel);
            }),
            Ok(Some((FrameType::Result, len))) => {
                let mut payload = vec![0u8; len as usize];
                let parsed = std::io::Read::read_exact(&mut r, &mut payload)
                    .map_err(WireError::from)
                    .and_then(|_| SessionResult::from_frame(&Frame::new(FrameType::Result, payload)));
                match parsed {
                    Ok(res) => *shared.result.lock().unwrap() = Some(res),
                    Err(e) => shared.fail(e),
                }
                return;
            }
            Ok(Some((kind, _))) => Err(WireError::Protocol(format!(
                "unexpected {kind:?} during download"
            ))),
            Ok(None) => Err(WireError::Protocol("server closed the connection".into())),
            Err(e) => Err(e),
        };
        if let Err(e) = step {
            shared.fail(e);
            return;
        }
    }
}

/// Upload reader: track COUNTER_REPORTs until RESULT.
fn read_upload(mut r: TcpStream, shared: Arc<Shared>) {
    loop {
        let frame = match Frame::read_from(&mut r) {
            Ok(Some(f)) => f,
            Ok(None) => {
                shared.fail(WireError::Protocol("server closed the connection".into()));
                return;
            }
            Err(e) => {
                shared.fail(e);
                return;
            }
        };
        let step = match frame.kind {
            FrameType::CounterReport => CounterReport::from_frame(&frame).map(|c| {
                shared
                    .receiver_acked
                    .fetch_max(c.bytes_received_cum, Ordering::AcqRel);
            }),
            FrameType::Result => match SessionResult::from_frame(&frame) {
                Ok(res) => {
                    shared
                        .receiver_acked
                        .fetch_max(res.bytes_received, Ordering::AcqRel);
                    *shared.result.lock().unwrap() = Some(res);
                    return;
                }
                Err(e) => Err(e),
            },
            kind => Err(WireError::Protocol(format!("unexpected {kind:?} during upload"))),
        };
        if let Err(e) = step {
            shared.fail(e);
            return;
        }
    }
}

/// Upload writer: send DATA until told to stop, then CLOSE.
fn write_upload(mut w: TcpStream, shared: Arc<Shared>) {
    let payload = vec![0u8; DATA_FRAME_BYTES];
    while !shared.stop.load(Ordering::Acquire) {
        if let Err(e) = frame::write_data(&mut w, &payload) {
            shared.fail(e);
            return;
        }
        // Handed to the socket: what an application-level counter sees.
        shared
            .sender_app
            .fetch_add(payload.len() as u64, Ordering::AcqRel);
    }
    if let Err(e) = close_frame().write_to(&mut w) {
        shared.fail(e);
    }
}

impl TransportProvider for WireProvider {
    fn now_s(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }

    fn open(&mut self, direction: Direction) -> Result<ConnId, ProviderError> {
        let connect = |a: &SocketAddr| -> Result<TcpStream, std::io::Error> {
            let s = TcpStream::connect_timeout(a, self.connect_timeout)?;
            s.set_nodelay(true)?;
            s.set_read_timeout(Some(READ_TIMEOUT))?;
            Ok(s)
        };
        let mut stream =
            connect(&self.addr).map_err(|e| ProviderError::Connect(format!("{}: {e}", self.addr)))?;
        let io = |e: std::io::Error| ProviderError::Io(e.to_string());
        Start {
            direction,
            engine: self.engine,
        }
        .to_frame()
        .write_to(&mut stream)
        .map_err(|e| ProviderError::Io(e.to_string()))?;
        let shared = Arc::new(Shared::default());
        let mut threads = Vec::new();
        let reader = stream.try_clone().map_err(io)?;
        match direction {
            Direction::Down => {
                let sh = Arc::clone(&shared);
                threads.push(thread::spawn(move || read_download(reader, sh)));
            }
            Direction::Up => {
                let writer = stream.try_clone().map_err(io)?;
                let sh = Arc::clone(&shared);
                threads.push(thread::spawn(move || write_upload(writer, sh)));
                let sh = Arc::clone(&shared);
                threads.push(thread::spawn(move || read_upload(reader, sh)));
            }
        }
        self.conns.push(Conn {
            direction,
            stream,
            shared,
            threads,
            closed: false,
        });
        Ok(self.conns.len() - 1)
    }

    fn advance_to(&mut self, t_s: f64) -> Result<(), ProviderError> {
        loop {
            self.check()?;
            let left = t_s - self.now_s();
            if left <= 0.0 {
                return Ok(());
            }
            thread::sleep(Duration::from_secs_f64(left.min(0.05)));
        }
    }

    fn snapshot(&mut self, conns: &[ConnId]) -> Result<Vec<ConnCounters>, ProviderError> {
        conns
            .iter()
            .map(|&i| {
                self.conns
                    .get(i)
                    .map(counters)
                    .ok_or(ProviderError::UnknownConnection(i))
            })
            .collect()
    }

    fn close(&mut self, conn: ConnId) {
        let Some(c) = self.conns.get_mut(conn) else {
            return;
        };
        if c.closed {
            return;
        }
        c.closed = true;
        c.shared.stop.store(true, Ordering::Release);
        if c.direction == Direction::Down {
            if let Err(e) = close_frame().write_to(&mut c.stream) {
                c.shared.fail(e);
                let _ = c.stream.shutdown(Shutdown::Both);
            }
        }
        for t in c.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for WireProvider {
    fn drop(&mut self) {
        for i in 0..self.conns.len() {
            self.close(i);
        }
    }
}

/// Run one engine against a server.
pub fn client_run(
    endpoint: impl ToSocketAddrs,
    engine: EngineKind,
    direction: Direction,
    accounting: AccountingMode,
    policy: &AdaptivePolicy,
) -> Result<SpeedReport, EngineError> {
    let mut p = WireProvider::new(endpoint, engine).map_err(|source| EngineError::Aborted {
        source,
        partial_samples: Vec::new(),
    })?;
    run_engine(engine, &mut p, direction, accounting, policy)
}
