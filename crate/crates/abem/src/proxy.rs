//! Untrusted transform service: a framed TCP protocol carrying
//! (transform key, ciphertext) requests and partial-decryption replies,
//! with a blocking client, plus a byzantine server mode for exercising the
//! verification path.
//!
//! ```text
//! frame   = length (u32 BE, counts msg type + body) | msg type (1) | body
//! request = 0x01 | tk length (u32 BE) | tk | ct length (u32 BE) | ct
//! replies = 0x81 | partial            (TransformOk)
//!           0x82                      (NotSatisfied)
//!           0xFF | code (u16 BE) | UTF-8 message
//! ```
//!
//! One request is in flight per connection; every request gets exactly one
//! reply, and the connection closes after any `0xFF` reply. The `tk` and
//! `ct` slots carry codec-enveloped objects, so a master key, secret key, or
//! retrieval key smuggled into a request fails the typed decode and is
//! refused with code `0x0002` before any processing.
//!
//! The server holds no state across requests and shares nothing mutable
//! across connections; each connection runs on its own thread. The client
//! is blocking, one call per request, safe to use from many threads with
//! separate connections.

use crate::bilinear::{derive_scalar, Scalar, TargetElement};
use crate::codec::{self, CodecError};
use crate::outsource::{transform_inner, PartialDecryption, TransformKey};
use crate::scheme::{Ciphertext, SchemeError};
use sha2::{Digest, Sha256};
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

/// Default maximum frame length: 64 MiB, comfortably above the largest
/// ciphertext a maximum-size policy produces.
pub const DEFAULT_MAX_FRAME: u32 = 1 << 26;

pub const MSG_TRANSFORM_REQUEST: u8 = 0x01;
pub const MSG_TRANSFORM_OK: u8 = 0x81;
pub const MSG_NOT_SATISFIED: u8 = 0x82;
pub const MSG_ERROR: u8 = 0xFF;

/// Frame length exceeds the server's configured maximum.
pub const ERR_OVERSIZED: u16 = 0x0001;
/// Frame, request body, or embedded object failed to decode.
pub const ERR_DECODE: u16 = 0x0002;
/// Transform failed for a reason other than an unsatisfied policy.
pub const ERR_INTERNAL: u16 = 0x00FF;

/// Server options.
#[derive(Clone, Debug)]
pub struct ServerConfig {
    /// Reject frames whose declared length exceeds this.
    pub max_frame: u32,
    /// When set, every successful transform's output is perturbed by a
    /// nonidentity target-group factor derived from this seed and the
    /// request bytes: deterministic per (seed, request), wrong every time.
    pub byzantine_seed: Option<u64>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            max_frame: DEFAULT_MAX_FRAME,
            byzantine_seed: None,
        }
    }
}

/// Client-side failure taxonomy. `NotSatisfied` and `Server` mirror protocol
/// replies; the rest are local.
#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("network: {0}")]
    Io(#[from] io::Error),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("server error {code:#06x}: {message}")]
    Server { code: u16, message: String },
    #[error("transform key does not satisfy the ciphertext policy")]
    NotSatisfied,
    #[error("reply payload: {0}")]
    Codec(#[from] CodecError),
}

/// Encodes one frame: length prefix, message type, body.
pub fn encode_frame(msg_type: u8, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + body.len());
    out.extend_from_slice(&(1 + body.len() as u32).to_be_bytes());
    out.push(msg_type);
    out.extend_from_slice(body);
    out
}

/// Encodes a transform-request body from already-encoded objects.
pub fn encode_request_body(tk_bytes: &[u8], ct_bytes: &[u8]) -> Vec<u8> {
    let mut body = Vec::with_capacity(8 + tk_bytes.len() + ct_bytes.len());
    body.extend_from_slice(&(tk_bytes.len() as u32).to_be_bytes());
    body.extend_from_slice(tk_bytes);
    body.extend_from_slice(&(ct_bytes.len() as u32).to_be_bytes());
    body.extend_from_slice(ct_bytes);
    body
}

fn encode_error_body(code: u16, message: &str) -> Vec<u8> {
    let mut body = Vec::with_capacity(2 + message.len());
    body.extend_from_slice(&code.to_be_bytes());
    body.extend_from_slice(message.as_bytes());
    body
}

enum FrameEvent {
    Frame {
        msg_type: u8,
        body: Vec<u8>,
    },
    /// Clean end of stream at a frame boundary.
    Eof,
    /// Declared length exceeds the maximum; nothing past the length field
    /// has been read.
    TooLarge {
        declared: u32,
    },
    /// Declared length is zero, leaving no room for a message type.
    Empty,
}

/// Reads one frame. Distinguishes clean EOF (between frames) from truncation
/// (inside one), which is an `UnexpectedEof` error.
fn read_frame(r: &mut impl Read, max_frame: u32) -> io::Result<FrameEvent> {
    let mut len_buf = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        let n = r.read(&mut len_buf[filled..])?;
        if n == 0 {
            if filled == 0 {
                return Ok(FrameEvent::Eof);
            }
            return Err(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "stream ended inside a frame header",
            ));
        }
        filled += n;
    }
    let declared = u32::from_be_bytes(len_buf);
    if declared == 0 {
        return Ok(FrameEvent::Empty);
    }
    if declared > max_frame {
        return Ok(FrameEvent::TooLarge { declared });
    }
    let mut payload = vec![0u8; declared as usize];
    r.read_exact(&mut payload)?;
    let msg_type = payload[0];
    payload.remove(0);
    Ok(FrameEvent::Frame {
        msg_type,
        body: payload,
    })
}

fn write_frame(w: &mut impl Write, msg_type: u8, body: &[u8]) -> io::Result<()> {
    w.write_all(&encode_frame(msg_type, body))?;
    w.flush()
}

/// Handle to a background server; dropping it also shuts the server down.
pub struct ServerHandle {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    /// The address the server actually bound (useful with port 0).
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Stops accepting, wakes the accept loop, and joins it. Connections
    /// already being served finish their current request.
    pub fn shutdown(mut self) {
        self.shutdown_inner();
    }

    fn shutdown_inner(&mut self) {
        if let Some(handle) = self.accept_thread.take() {
            self.stop.store(true, Ordering::SeqCst);
            // Kick the blocking accept so it observes the flag.
            let _ = TcpStream::connect(self.local_addr);
            let _ = handle.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown_inner();
    }
}

/// Binds and serves in the background, returning a handle for the bound
/// address and shutdown.
pub fn spawn(addr: impl ToSocketAddrs, config: ServerConfig) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    let local_addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let accept_stop = Arc::clone(&stop);
    let accept_thread = std::thread::spawn(move || accept_loop(listener, config, accept_stop));
    Ok(ServerHandle {
        local_addr,
        stop,
        accept_thread: Some(accept_thread),
    })
}

/// Binds and serves on the calling thread until the process ends.
pub fn serve(addr: impl ToSocketAddrs, config: ServerConfig) -> io::Result<()> {
    let listener = TcpListener::bind(addr)?;
    accept_loop(listener, config, Arc::new(AtomicBool::new(false)));
    Ok(())
}

/// [`serve`] with the byzantine perturbation enabled.
pub fn serve_byzantine(addr: impl ToSocketAddrs, seed: u64) -> io::Result<()> {
    serve(
        addr,
        ServerConfig {
            byzantine_seed: Some(seed),
            ..ServerConfig::default()
        },
    )
}

fn accept_loop(listener: TcpListener, config: ServerConfig, stop: Arc<AtomicBool>) {
    let config = Arc::new(config);
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            return;
        }
        match stream {
            Ok(stream) => {
                let config = Arc::clone(&config);
                std::thread::spawn(move || handle_connection(stream, &config));
            }
            Err(_) => continue,
        }
    }
}

fn handle_connection(mut stream: TcpStream, config: &ServerConfig) {
    loop {
        let (msg_type, body) = match read_frame(&mut stream, config.max_frame) {
            Ok(FrameEvent::Frame { msg_type, body }) => (msg_type, body),
            Ok(FrameEvent::Eof) => return,
            Ok(FrameEvent::TooLarge { declared }) => {
                let body = encode_error_body(
                    ERR_OVERSIZED,
                    &format!(
                        "frame of {declared} bytes exceeds maximum {}",
                        config.max_frame
                    ),
                );
                return reply_error_and_close(stream, &body);
            }
            Ok(FrameEvent::Empty) => {
                let body = encode_error_body(ERR_DECODE, "zero-length frame");
                return reply_error_and_close(stream, &body);
            }
            // Truncated or reset mid-frame: nothing sensible to reply to.
            Err(_) => return,
        };
        let (reply_type, reply_body) = handle_request(msg_type, &body, config);
        if reply_type == MSG_ERROR {
            return reply_error_and_close(stream, &reply_body);
        }
        if write_frame(&mut stream, reply_type, &reply_body).is_err() {
            return;
        }
    }
}

/// Sends an error frame, then closes the connection gracefully: half-close
/// the write side and drain what the client is still sending, so the reply
/// is delivered instead of being destroyed by a TCP reset (closing a socket
/// with unread inbound data resets it). Draining is bounded so a hostile
/// client cannot pin the thread.
fn reply_error_and_close(mut stream: TcpStream, error_body: &[u8]) {
    if write_frame(&mut stream, MSG_ERROR, error_body).is_err() {
        return;
    }
    let _ = stream.shutdown(std::net::Shutdown::Write);
    let _ = stream.set_read_timeout(Some(Duration::from_secs(2)));
    let mut sink = [0u8; 4096];
    let mut drained: usize = 0;
    while drained < (1 << 20) {
        match stream.read(&mut sink) {
            Ok(0) | Err(_) => break,
            Ok(n) => drained += n,
        }
    }
}

/// Produces the (msg type, body) reply for one request frame.
fn handle_request(msg_type: u8, body: &[u8], config: &ServerConfig) -> (u8, Vec<u8>) {
    if msg_type != MSG_TRANSFORM_REQUEST {
        return (
            MSG_ERROR,
            encode_error_body(
                ERR_DECODE,
                &format!("unexpected message type {msg_type:#04x}"),
            ),
        );
    }
    let (tk_bytes, ct_bytes) = match split_request(body) {
        Ok(parts) => parts,
        Err(msg) => return (MSG_ERROR, encode_error_body(ERR_DECODE, msg)),
    };
    // Typed decodes: anything that is not exactly a transform key and a
    // ciphertext (wrong tag, wrong group, damaged) is refused here. This is
    // what keeps master, secret, and retrieval keys out of the server.
    let tk: TransformKey = match codec::decode(tk_bytes) {
        Ok(tk) => tk,
        Err(e) => {
            return (
                MSG_ERROR,
                encode_error_body(ERR_DECODE, &format!("transform key: {e}")),
            )
        }
    };
    let ct: Ciphertext = match codec::decode(ct_bytes) {
        Ok(ct) => ct,
        Err(e) => {
            return (
                MSG_ERROR,
                encode_error_body(ERR_DECODE, &format!("ciphertext: {e}")),
            )
        }
    };
    match transform_inner(&tk, &ct) {
        Ok(mut partial) => {
            if let Some(seed) = config.byzantine_seed {
                byzantine_perturb(&mut partial, seed, body);
            }
            (MSG_TRANSFORM_OK, codec::encode(&partial))
        }
        Err(SchemeError::PolicyNotSatisfied) => (MSG_NOT_SATISFIED, Vec::new()),
        Err(e) => (
            MSG_ERROR,
            encode_error_body(ERR_INTERNAL, &format!("transform: {e}")),
        ),
    }
}

fn split_request(body: &[u8]) -> Result<(&[u8], &[u8]), &'static str> {
    if body.len() < 4 {
        return Err("request truncated before transform key length");
    }
    let tk_len = u32::from_be_bytes([body[0], body[1], body[2], body[3]]) as usize;
    let rest = &body[4..];
    if rest.len() < tk_len {
        return Err("request truncated inside transform key");
    }
    let (tk_bytes, rest) = rest.split_at(tk_len);
    if rest.len() < 4 {
        return Err("request truncated before ciphertext length");
    }
    let ct_len = u32::from_be_bytes([rest[0], rest[1], rest[2], rest[3]]) as usize;
    let rest = &rest[4..];
    if rest.len() != ct_len {
        return Err("request length does not match its contents");
    }
    Ok((tk_bytes, rest))
}

/// Multiplies T by a nonidentity factor derived from the seed and the exact
/// request bytes, so a given byzantine server corrupts deterministically but
/// never returns the honest value.
fn byzantine_perturb(partial: &mut PartialDecryption, seed: u64, request_body: &[u8]) {
    let mut input = Vec::with_capacity(8 + 32);
    input.extend_from_slice(&seed.to_be_bytes());
    input.extend_from_slice(&Sha256::digest(request_body));
    let mut z = derive_scalar(b"ABEM/Byz", &input);
    if z.is_zero() {
        z = Scalar::one();
    }
    partial.t = partial.t.mul(&TargetElement::generator().pow(&z));
}

/// Sends one transform request and returns the partial decryption. The
/// timeout, when set, bounds connecting and each read and write. Replies are
/// surfaced distinctly: an unsatisfying key as [`ClientError::NotSatisfied`],
/// a server-reported error as [`ClientError::Server`], anything outside the
/// protocol as [`ClientError::Protocol`].
pub fn client_transform(
    addr: impl ToSocketAddrs,
    tk: &TransformKey,
    ct: &Ciphertext,
    timeout: Option<Duration>,
) -> Result<PartialDecryption, ClientError> {
    let mut stream = connect(addr, timeout)?;
    stream.set_read_timeout(timeout)?;
    stream.set_write_timeout(timeout)?;
    let body = encode_request_body(&codec::encode(tk), &codec::encode(ct));
    write_frame(&mut stream, MSG_TRANSFORM_REQUEST, &body)?;
    match read_frame(&mut stream, DEFAULT_MAX_FRAME)? {
        FrameEvent::Frame { msg_type, body } => match msg_type {
            MSG_TRANSFORM_OK => Ok(codec::decode(&body)?),
            MSG_NOT_SATISFIED => Err(ClientError::NotSatisfied),
            MSG_ERROR => {
                if body.len() < 2 {
                    return Err(ClientError::Protocol(
                        "error reply shorter than its code".into(),
                    ));
                }
                Err(ClientError::Server {
                    code: u16::from_be_bytes([body[0], body[1]]),
                    message: String::from_utf8_lossy(&body[2..]).into_owned(),
                })
            }
            other => Err(ClientError::Protocol(format!(
                "unexpected message type {other:#04x}"
            ))),
        },
        FrameEvent::Eof => Err(ClientError::Protocol(
            "connection closed before a reply".into(),
        )),
        FrameEvent::Empty => Err(ClientError::Protocol("zero-length reply frame".into())),
        FrameEvent::TooLarge { declared } => Err(ClientError::Protocol(format!(
            "reply frame of {declared} bytes exceeds maximum"
        ))),
    }
}

fn connect(addr: impl ToSocketAddrs, timeout: Option<Duration>) -> io::Result<TcpStream> {
    match timeout {
        None => TcpStream::connect(addr),
        Some(t) => {
            let mut last_err = None;
            for resolved in addr.to_socket_addrs()? {
                match TcpStream::connect_timeout(&resolved, t) {
                    Ok(stream) => return Ok(stream),
                    Err(e) => last_err = Some(e),
                }
            }
            Err(last_err.unwrap_or_else(|| {
                io::Error::new(io::ErrorKind::InvalidInput, "address resolved to nothing")
            }))
        }
    }
}
