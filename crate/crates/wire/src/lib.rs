//! Real-socket backend: a measurement server and a [`TransportProvider`]
//! client speaking a small length-prefixed protocol over TCP.
//!
//! A session is one TCP connection. The client sends `START`, then data
//! flows in the requested direction until the client sends `CLOSE`; the
//! server answers with `RESULT`. On uploads the server streams
//! `COUNTER_REPORT`s every 250 ms so the client can count confirmed bytes.
//!
//! [`TransportProvider`]: speedlab_core::engines::TransportProvider

pub mod client;
pub mod frame;
pub mod server;

use thiserror::Error;

pub use client::{client_run, WireProvider, CONNECT_TIMEOUT};
pub use frame::{CounterReport, Frame, FrameType, SessionResult, Start, MAX_PAYLOAD};
pub use server::{serve, spawn_server, ServerConfig};

#[derive(Debug, Error)]
pub enum WireError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("frame length {0} exceeds the 1 MiB limit")]
    Oversized(u64),
    #[error("unknown frame type {0:#04x}")]
    UnknownType(u8),
    #[error("stream ended inside a frame")]
    Truncated,
    #[error("protocol error: {0}")]
    Protocol(String),
}
