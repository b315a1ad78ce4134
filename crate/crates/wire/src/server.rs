//! Measurement server. One thread per session.

use std::io::Write;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use speedlab_core::Direction;

use crate::frame::{self, close_frame, CounterReport, Frame, FrameType, SessionResult, Start};
use crate::WireError;

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    /// Payload size of each DATA frame the server sends.
    pub data_frame_bytes: usize,
    pub report_interval: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            data_frame_bytes: 64 * 1024,
            report_interval: Duration::from_millis(250),
        }
    }
}

/// Accept sessions forever.
pub fn serve(listener: TcpListener, cfg: ServerConfig) -> std::io::Result<()> {
    let cfg = Arc::new(cfg);
    for conn in listener.incoming() {
        match conn {
            Ok(stream) => {
                let cfg = Arc::clone(&cfg);
                thread::spawn(move || {
                    let peer = stream.peer_addr().ok();
                    match handle_session(stream, &cfg) {
                        Ok(r) => log::info!("session {peer:?} done: {r:?}"),
                        Err(e) => log::warn!("session {peer:?} aborted: {e}"),
                    }
                });
            }
            Err(e) => log::warn!("accept failed: {e}"),
        }
    }
    Ok(())
}

/// Bind and serve on a background thread; returns the bound address.
pub fn spawn_server(addr: impl ToSocketAddrs, cfg: ServerConfig) -> std::io::Result<SocketAddr> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    thread::spawn(move || serve(listener, cfg));
    Ok(local)
}

fn handle_session(mut stream: TcpStream, cfg: &ServerConfig) -> Result<SessionResult, WireError> {
    stream.set_nodelay(true)?;
    let result = match Frame::read_from(&mut stream)? {
        Some(f) if f.kind == FrameType::Start => {
            let start = Start::from_frame(&f)?;
            match start.direction {
                Direction::Down => source(&mut stream, cfg),
                Direction::Up => sink(&mut stream, cfg),
            }
        }
        Some(f) => Err(WireError::Protocol(format!("expected Start, got {:?}", f.kind))),
        None => return Ok(SessionResult::default()),
    };
    if result.is_err() {
        let _ = stream.shutdown(Shutdown::Both);
    }
    result
}

/// Download: send DATA until the client closes.
fn source(stream: &mut TcpStream, cfg: &ServerConfig) -> Result<SessionResult, WireError> {
    let stop = Arc::new(AtomicBool::new(false));
    let sent = Arc::new(AtomicU64::new(0));
    let mut w = stream.try_clone()?;
    let writer = {
        let (stop, sent) = (Arc::clone(&stop), Arc::clone(&sent));
        let payload = vec![0u8; cfg.data_frame_bytes];
        thread::spawn(move || -> Result<(), WireError> {
            while !stop.load(Ordering::Acquire) {
                frame::write_data(&mut w, &payload)?;
                sent.fetch_add(payload.len() as u64, Ordering::AcqRel);
            }
            Ok(())
        })
    };
    let outcome = loop {
        match Frame::read_from(stream) {
            Ok(Some(f)) if f.kind == FrameType::Close => break Ok(true),
            Ok(Some(f)) => {
                break Err(WireError::Protocol(format!(
                    "unexpected {:?} during download",
                    f.kind
                )))
            }
            Ok(None) => break Ok(false),
            Err(e) => break Err(e),
        }
    };
    stop.store(true, Ordering::Release);
    if outcome.is_err() {
        // Unblock a writer stuck on a full socket.
        let _ = stream.shutdown(Shutdown::Both);
    }
    let written = writer.join().unwrap_or(Ok(()));
    let result = SessionResult {
        bytes_received: 0,
        bytes_sent: sent.load(Ordering::Acquire),
    };
    if outcome? {
        written?;
        result.to_frame().write_to(stream)?;
    }
    Ok(result)
}

/// Upload: count DATA and report progress until the client closes.
fn sink(stream: &mut TcpStream, cfg: &ServerConfig) -> Result<SessionResult, WireError> {
    let t0 = Instant::now();
    let stop = Arc::new(AtomicBool::new(false));
    let received = Arc::new(AtomicU64::new(0));
    let mut w = stream.try_clone()?;
    let reporter = {
        let (stop, received) = (Arc::clone(&stop), Arc::clone(&received));
        let every = cfg.report_interval;
        thread::spawn(move || -> Result<TcpStream, WireError> {
            let mut next = every;
            loop {
                let now = t0.elapsed();
                if stop.load(Ordering::Acquire) {
                    return Ok(w);
                }
                if now >= next {
                    let report = CounterReport {
                        t_offset_s: now.as_secs_f64(),
                        bytes_received_cum: received.load(Ordering::Acquire),
                    };
                    report.to_frame().write_to(&mut w)?;
                    next += every;
                } else {
                    thread::sleep((next - now).min(Duration::from_millis(10)));
                }
            }
        })
    };
    let mut scratch = vec![0u8; 64 * 1024];
    let outcome = loop {
        match frame::read_header(stream) {
            Ok(Some((FrameType::Data, len))) => {
                if let Err(e) = frame::drain_payload(stream, len, &mut scratch, |n| {
                    received.fetch_add(n as u64, Ordering::AcqRel);
                }) {
                    break Err(e);
                }
            }
            Ok(Some((FrameType::Close, 0))) => break Ok(true),
            Ok(Some((kind, _))) => {
                break Err(WireError::Protocol(format!("unexpected {kind:?} during upload")))
            }
            Ok(None) => break Ok(false),
            Err(e) => break Err(e),
        }
    };
    stop.store(true, Ordering::Release);
    let w = reporter
        .join()
        .unwrap_or_else(|_| Err(WireError::Protocol("reporter panicked".into())));
    let result = SessionResult {
        bytes_received: received.load(Ordering::Acquire),
        bytes_sent: 0,
    };
    if outcome? {
        let mut w = w?;
        let last = CounterReport {
            t_offset_s: t0.elapsed().as_secs_f64(),
            bytes_received_cum: result.bytes_received,
        };
        last.to_frame().write_to(&mut w)?;
        result.to_frame().write_to(&mut w)?;
        w.flush()?;
    }
    Ok(result)
}

/// Send CLOSE on a raw stream. Used by clients and tests.
pub fn send_close(stream: &mut TcpStream) -> Result<(), WireError> {
    close_frame().write_to(stream)
}
