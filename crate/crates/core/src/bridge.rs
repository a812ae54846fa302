//! Client for an external model served over a framed stream.
//!
//! Every message is one frame:
//!
//! ```text
//! u32 LE header length | UTF-8 JSON header | raw payload
//! ```
//!
//! The header names the operation (`handshake`, `predict_eps`, `encode`,
//! `decode`, `shutdown`), the tensor `shape` `[c,h,w]`, the payload `dtype`
//! (`"f32"` or `"f64"`), the `timestep`, the conditioning id `cond`, and
//! `payload_bytes`. Payloads are little-endian floats in `(c,i,j)` order. A
//! handshake response carries `n_train` and the full `alpha_bar` table; a
//! response with an `error` field reports a failure on the remote side.
//!
//! The client is strictly request/response and never retries on its own.

use std::io::{self, Read, Write};
use std::net::TcpStream;
#[cfg(unix)]
use std::os::unix::net::UnixStream;

use serde::{Deserialize, Serialize};

use crate::denoiser::{CallCounts, Conditioning, Denoiser};
use crate::error::{Error, Result};
use crate::tensor::{LatentFeature, Shape};

/// Environment variable naming the bridge address.
pub const BRIDGE_ADDR_ENV: &str = "FBS_BRIDGE_ADDR";

const MAX_HEADER_LEN: u32 = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Handshake,
    PredictEps,
    Encode,
    Decode,
    Shutdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameHeader {
    pub op: Op,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<[u64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dtype: Option<Dtype>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestep: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cond: Option<String>,
    #[serde(default)]
    pub payload_bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_train: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_bar: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl FrameHeader {
    pub fn new(op: Op) -> Self {
        Self {
            op,
            shape: None,
            dtype: None,
            timestep: None,
            cond: None,
            payload_bytes: 0,
            n_train: None,
            alpha_bar: None,
            error: None,
        }
    }
}

pub fn write_frame<W: Write>(w: &mut W, header: &FrameHeader, payload: &[u8]) -> Result<()> {
    let json = serde_json::to_vec(header).map_err(|e| Error::Protocol(e.to_string()))?;
    let len = u32::try_from(json.len())
        .map_err(|_| Error::Protocol("header longer than u32::MAX".into()))?;
    w.write_all(&len.to_le_bytes()).map_err(Error::Transport)?;
    w.write_all(&json).map_err(Error::Transport)?;
    w.write_all(payload).map_err(Error::Transport)?;
    w.flush().map_err(Error::Transport)
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<(FrameHeader, Vec<u8>)> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len).map_err(Error::Transport)?;
    let len = u32::from_le_bytes(len);
    if len > MAX_HEADER_LEN {
        return Err(Error::Protocol(format!("header length {len} too large")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json).map_err(Error::Transport)?;
    let header: FrameHeader =
        serde_json::from_slice(&json).map_err(|e| Error::Protocol(format!("bad header: {e}")))?;
    let mut payload = vec![0u8; header.payload_bytes as usize];
    r.read_exact(&mut payload).map_err(Error::Transport)?;
    Ok((header, payload))
}

pub fn encode_payload(values: &[f64], dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * dtype.size());
    for &v in values {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

pub fn decode_payload(bytes: &[u8], dtype: Dtype) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(dtype.size()) {
        return Err(Error::Protocol(format!(
            "{} payload bytes is not a whole number of {dtype:?} values",
            bytes.len()
        )));
    }
    Ok(match dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect(),
    })
}

fn shape_field(shape: Shape) -> [u64; 3] {
    [shape.channels as u64, shape.height as u64, shape.width as u64]
}

/// Builds a tensor from a frame, validating shape, size and finiteness.
pub fn frame_tensor(header: &FrameHeader, payload: &[u8]) -> Result<LatentFeature> {
    let [c, h, w] = header
        .shape
        .ok_or_else(|| Error::Protocol("frame is missing shape".into()))?;
    let dtype = header.dtype.unwrap_or_default();
    let values = decode_payload(payload, dtype)?;
    let expected = (c * h * w) as usize;
    if values.len() != expected {
        return Err(Error::Protocol(format!(
            "shape [{c},{h},{w}] needs {expected} values, payload has {}",
            values.len()
        )));
    }
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Protocol(format!("non-finite payload value at {k}")));
    }
    LatentFeature::new(c as usize, h as usize, w as usize, values)
        .map_err(|e| Error::Protocol(e.to_string()))
}

/// Agreed state after a successful handshake.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub n_train: usize,
    pub alpha_bar: Vec<f64>,
}

pub struct BridgeClient<S> {
    stream: S,
    wire_dtype: Dtype,
    session: Option<Session>,
    counts: CallCounts,
}

impl<S: Read + Write> BridgeClient<S> {
    pub fn new(stream: S) -> Self {
        Self {
            stream,
            wire_dtype: Dtype::F64,
            session: None,
            counts: CallCounts::default(),
        }
    }

    /// Dtype used for request payloads. Responses are decoded per their own
    /// header.
    pub fn with_wire_dtype(mut self, dtype: Dtype) -> Self {
        self.wire_dtype = dtype;
        self
    }

    pub fn session(&self) -> Option<&Session> {
        self.session.as_ref()
    }

    fn exchange(&mut self, header: &FrameHeader, payload: &[u8]) -> Result<(FrameHeader, Vec<u8>)> {
        write_frame(&mut self.stream, header, payload)?;
        let (resp, body) = read_frame(&mut self.stream)?;
        if let Some(msg) = resp.error {
            return Err(Error::Remote(msg));
        }
        if resp.op != header.op {
            return Err(Error::Protocol(format!(
                "response op {:?} does not answer request {:?}",
                resp.op, header.op
            )));
        }
        Ok((resp, body))
    }

    /// Agrees on the latent shape and fetches the remote schedule. Fails with
    /// a protocol error if the remote `n_train` differs from `n_train`.
    pub fn handshake(&mut self, shape: Shape, n_train: usize) -> Result<&Session> {
        let mut req = FrameHeader::new(Op::Handshake);
        req.shape = Some(shape_field(shape));
        req.dtype = Some(self.wire_dtype);
        req.n_train = Some(n_train as u64);
        let (resp, _) = self.exchange(&req, &[])?;
        let remote_n = resp
            .n_train
            .ok_or_else(|| Error::Protocol("handshake response lacks n_train".into()))?
            as usize;
        if remote_n != n_train {
            return Err(Error::Protocol(format!(
                "remote schedule has n_train={remote_n}, expected {n_train}"
            )));
        }
        let alpha_bar = resp
            .alpha_bar
            .ok_or_else(|| Error::Protocol("handshake response lacks alpha_bar".into()))?;
        if alpha_bar.len() != remote_n {
            return Err(Error::Protocol(format!(
                "alpha_bar has {} entries, expected {remote_n}",
                alpha_bar.len()
            )));
        }
        if alpha_bar.windows(2).any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Less)) || alpha_bar.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(Error::Protocol(
                "alpha_bar is not strictly decreasing in (0, 1]".into(),
            ));
        }
        self.session = Some(Session {
            n_train: remote_n,
            alpha_bar,
        });
        Ok(self.session.as_ref().expect("just set"))
    }

    fn tensor_request(
        &mut self,
        op: Op,
        z: &LatentFeature,
        timestep: Option<u64>,
        cond: Option<Conditioning>,
        expect_same_shape: bool,
    ) -> Result<LatentFeature> {
        if self.session.is_none() {
            return Err(Error::Protocol(format!("{op:?} before handshake")));
        }
        let payload = encode_payload(z.data(), self.wire_dtype);
        let mut req = FrameHeader::new(op);
        req.shape = Some(shape_field(z.shape()));
        req.dtype = Some(self.wire_dtype);
        req.timestep = timestep;
        req.cond = cond.map(|c| c.id().to_string());
        req.payload_bytes = payload.len() as u64;
        let (resp, body) = self.exchange(&req, &payload)?;
        let out = frame_tensor(&resp, &body)?;
        if expect_same_shape && out.shape() != z.shape() {
            return Err(Error::Protocol(format!(
                "response shape {} differs from request shape {}",
                out.shape(),
                z.shape()
            )));
        }
        Ok(out)
    }

    pub fn predict(&mut self, z_t: &LatentFeature, t: usize, cond: Conditioning) -> Result<LatentFeature> {
        self.counts.record(cond);
        self.tensor_request(Op::PredictEps, z_t, Some(t as u64), Some(cond), true)
    }

    pub fn encode(&mut self, image: &LatentFeature) -> Result<LatentFeature> {
        self.tensor_request(Op::Encode, image, None, None, false)
    }

    pub fn decode(&mut self, latent: &LatentFeature) -> Result<LatentFeature> {
        self.tensor_request(Op::Decode, latent, None, None, false)
    }

    pub fn shutdown(mut self) -> Result<()> {
        self.exchange(&FrameHeader::new(Op::Shutdown), &[])
            .map(|_| ())
    }

    pub fn into_inner(self) -> S {
        self.stream
    }
}

impl<S: Read + Write + Send> Denoiser for BridgeClient<S> {
    fn predict_eps(
        &mut self,
        z_t: &LatentFeature,
        t: usize,
        cond: Conditioning,
    ) -> Result<LatentFeature> {
        self.predict(z_t, t, cond)
    }

    fn call_counts(&self) -> CallCounts {
        self.counts
    }
}

/// TCP or Unix-domain stream.
pub enum BridgeStream {
    Tcp(TcpStream),
    #[cfg(unix)]
    Unix(UnixStream),
}

impl Read for BridgeStream {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        match self {
            BridgeStream::Tcp(s) => s.read(buf),
            #[cfg(unix)]
            BridgeStream::Unix(s) => s.read(buf),
        }
    }
}

impl Write for BridgeStream {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match self {
            BridgeStream::Tcp(s) => s.write(buf),
            #[cfg(unix)]
            BridgeStream::Unix(s) => s.write(buf),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match self {
            BridgeStream::Tcp(s) => s.flush(),
            #[cfg(unix)]
            BridgeStream::Unix(s) => s.flush(),
        }
    }
}

/// Connects to `unix:/path/to/socket`, `tcp:host:port` or a bare `host:port`.
pub fn connect(addr: &str) -> Result<BridgeStream> {
    if let Some(path) = addr.strip_prefix("unix:") {
        #[cfg(unix)]
        {
            return UnixStream::connect(path)
                .map(BridgeStream::Unix)
                .map_err(Error::Transport);
        }
        #[cfg(not(unix))]
        {
            let _ = path;
            return Err(Error::Protocol("unix sockets unsupported here".into()));
        }
    }
    let host = addr.strip_prefix("tcp:").unwrap_or(addr);
    let stream = TcpStream::connect(host).map_err(Error::Transport)?;
    stream.set_nodelay(true).map_err(Error::Transport)?;
    Ok(BridgeStream::Tcp(stream))
}

/// Stream wrapper that keeps a copy of every byte sent and received, so a
/// client session can be saved as a transcript and replayed against a server.
pub struct TranscriptStream<S> {
    inner: S,
    sent: Vec<u8>,
    received: Vec<u8>,
}

impl<S> TranscriptStream<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            sent: Vec::new(),
            received: Vec::new(),
        }
    }

    pub fn sent(&self) -> &[u8] {
        &self.sent
    }

    pub fn received(&self) -> &[u8] {
        &self.received
    }

    pub fn into_parts(self) -> (S, Vec<u8>, Vec<u8>) {
        (self.inner, self.sent, self.received)
    }
}

impl<S: Read> Read for TranscriptStream<S> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.received.extend_from_slice(&buf[..n]);
        Ok(n)
    }
}

impl<S: Write> Write for TranscriptStream<S> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.sent.extend_from_slice(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Splits a byte stream into its frames.
pub fn split_frames(mut bytes: &[u8]) -> Result<Vec<(FrameHeader, Vec<u8>)>> {
    let mut frames = Vec::new();
    while !bytes.is_empty() {
        frames.push(read_frame(&mut bytes)?);
    }
    Ok(frames)
}

/// Reference server loop answering every op by echoing the request tensor.
/// Handshakes report `n_train` and `alpha_bar`. Returns after `shutdown` or
/// when the peer hangs up. Useful as a protocol conformance fixture.
pub fn serve_echo<S: Read + Write>(mut stream: S, alpha_bar: &[f64]) -> Result<()> {
    loop {
        let (req, payload) = match read_frame(&mut stream) {
            Ok(frame) => frame,
            Err(Error::Transport(e)) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => return Err(e),
        };
        let mut resp = FrameHeader::new(req.op);
        let body = match req.op {
            Op::Handshake => {
                resp.n_train = Some(alpha_bar.len() as u64);
                resp.alpha_bar = Some(alpha_bar.to_vec());
                Vec::new()
            }
            Op::Shutdown => {
                write_frame(&mut stream, &resp, &[])?;
                return Ok(());
            }
            Op::PredictEps | Op::Encode | Op::Decode => {
                resp.shape = req.shape;
                resp.dtype = req.dtype;
                resp.timestep = req.timestep;
                resp.cond = req.cond.clone();
                payload
            }
        };
        resp.payload_bytes = body.len() as u64;
        write_frame(&mut stream, &resp, &body)?;
    }
}
