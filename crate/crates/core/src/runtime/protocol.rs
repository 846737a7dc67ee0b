//! Length-prefixed binary frames between the coordinator and pricing workers.
//!
//! ```text
//! magic[8] | version u8 | type u8 | payload_len u32 LE | payload
//! ```
//!
//! Payload fields are little-endian fixed-width integers and IEEE-754 f64s;
//! sequences are a u32 count followed by the elements.

use std::io::{Read, Write};

use thiserror::Error;

use crate::decomposition::{Candidate, Column, EdgeSubproblem, TieRule};
use crate::model::Endpoint;
use crate::relaxation::BlockTerm;

pub const MAGIC: [u8; 8] = *b"DWMAPRPC";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 14;
pub const DEFAULT_MAX_FRAME: usize = 64 << 20;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("frame truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("bad frame magic {0:02x?}")]
    BadMagic([u8; 8]),
    #[error("protocol version {found}, expected {expected}")]
    VersionMismatch { expected: u8, found: u8 },
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("frame payload of {len} bytes exceeds the {max} byte limit")]
    Oversize { len: usize, max: usize },
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    Hello = 1,
    EdgeData = 2,
    PriceRequest = 3,
    PriceReply = 4,
    Shutdown = 5,
    Error = 6,
}

impl MessageType {
    fn from_u8(b: u8) -> Result<Self, ProtocolError> {
        Ok(match b {
            1 => MessageType::Hello,
            2 => MessageType::EdgeData,
            3 => MessageType::PriceRequest,
            4 => MessageType::PriceReply,
            5 => MessageType::Shutdown,
            6 => MessageType::Error,
            other => return Err(ProtocolError::UnknownType(other)),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceRequest {
    pub iteration: u64,
    pub tie: TieRule,
    /// `(row, pi)` for every row touching the worker's edges, ascending.
    pub pi: Vec<(u64, f64)>,
    /// `(edge, gamma)`; lists the edges to price.
    pub gamma: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceReply {
    pub iteration: u64,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello { peer: u32 },
    EdgeData(Vec<EdgeSubproblem>),
    PriceRequest(PriceRequest),
    PriceReply(PriceReply),
    Shutdown,
    Error(String),
}

impl Message {
    pub fn kind(&self) -> MessageType {
        match self {
            Message::Hello { .. } => MessageType::Hello,
            Message::EdgeData(_) => MessageType::EdgeData,
            Message::PriceRequest(_) => MessageType::PriceRequest,
            Message::PriceReply(_) => MessageType::PriceReply,
            Message::Shutdown => MessageType::Shutdown,
            Message::Error(_) => MessageType::Error,
        }
    }
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("sequence longer than u32::MAX"));
    }
    fn pairs(&mut self, v: &[(u64, f64)]) {
        self.len(v.len());
        for &(i, x) in v {
            self.u64(i);
            self.f64(x);
        }
    }
    fn sparse(&mut self, v: &[(usize, f64)]) {
        self.len(v.len());
        for &(i, x) in v {
            self.u64(i as u64);
            self.f64(x);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(ProtocolError::Truncated { needed: n, available });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, ProtocolError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize, ProtocolError> {
        usize::try_from(self.u64()?).map_err(|_| ProtocolError::Malformed("index overflows usize".into()))
    }
    fn f64(&mut self) -> Result<f64, ProtocolError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    /// Sequence length, checked against the bytes left so a corrupt count
    /// cannot trigger a huge allocation.
    fn len(&mut self, elem_size: usize) -> Result<usize, ProtocolError> {
        let n = self.u32()? as usize;
        let available = self.buf.len() - self.pos;
        if n.saturating_mul(elem_size) > available {
            return Err(ProtocolError::Truncated { needed: n * elem_size, available });
        }
        Ok(n)
    }
    fn pairs(&mut self) -> Result<Vec<(u64, f64)>, ProtocolError> {
        let n = self.len(16)?;
        (0..n).map(|_| Ok((self.u64()?, self.f64()?))).collect()
    }
    fn sparse(&mut self) -> Result<Vec<(usize, f64)>, ProtocolError> {
        let n = self.len(16)?;
        (0..n).map(|_| Ok((self.usize()?, self.f64()?))).collect()
    }
    fn finish(&self) -> Result<(), ProtocolError> {
        if self.pos != self.buf.len() {
            return Err(ProtocolError::Malformed(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn encode_payload(msg: &Message) -> Vec<u8> {
    let mut w = Writer::default();
    match msg {
        Message::Hello { peer } => w.u32(*peer),
        Message::EdgeData(subs) => {
            w.len(subs.len());
            for s in subs {
                w.u64(s.edge as u64);
                w.u32(s.rows as u32);
                w.u32(s.cols as u32);
                w.len(s.costs.len());
                for &c in &s.costs {
                    w.f64(c);
                }
                w.len(s.terms.len());
                for t in &s.terms {
                    w.u64(t.row as u64);
                    w.u8(match t.endpoint {
                        Endpoint::S => 0,
                        Endpoint::T => 1,
                    });
                    w.u32(t.state as u32);
                    w.f64(t.coef);
                }
            }
        }
        Message::PriceRequest(r) => {
            w.u64(r.iteration);
            w.u8(r.tie.to_wire());
            w.pairs(&r.pi);
            w.pairs(&r.gamma);
        }
        Message::PriceReply(r) => {
            w.u64(r.iteration);
            w.len(r.candidates.len());
            for c in &r.candidates {
                w.u64(c.column.edge as u64);
                w.u64(c.column.solution_index as u64);
                w.f64(c.column.cost);
                w.f64(c.reduced_cost);
                w.sparse(&c.column.constraint_column);
            }
        }
        Message::Shutdown => {}
        Message::Error(text) => {
            w.len(text.len());
            w.0.extend_from_slice(text.as_bytes());
        }
    }
    w.0
}

fn decode_payload(kind: MessageType, payload: &[u8]) -> Result<Message, ProtocolError> {
    let mut r = Reader { buf: payload, pos: 0 };
    let msg = match kind {
        MessageType::Hello => Message::Hello { peer: r.u32()? },
        MessageType::EdgeData => {
            let n = r.len(24)?;
            let mut subs = Vec::with_capacity(n);
            for _ in 0..n {
                let edge = r.usize()?;
                let rows = r.u32()? as usize;
                let cols = r.u32()? as usize;
                let nc = r.len(8)?;
                let costs = (0..nc).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
                if nc != rows * cols {
                    return Err(ProtocolError::Malformed(format!("edge {edge}: {nc} costs for a {rows}x{cols} table")));
                }
                let nt = r.len(21)?;
                let mut terms = Vec::with_capacity(nt);
                for _ in 0..nt {
                    let row = r.usize()?;
                    let endpoint = match r.u8()? {
                        0 => Endpoint::S,
                        1 => Endpoint::T,
                        b => return Err(ProtocolError::Malformed(format!("endpoint tag {b}"))),
                    };
                    let state = r.u32()? as usize;
                    let coef = r.f64()?;
                    terms.push(BlockTerm { row, endpoint, state, coef });
                }
                subs.push(EdgeSubproblem { edge, rows, cols, costs, terms });
            }
            Message::EdgeData(subs)
        }
        MessageType::PriceRequest => {
            let iteration = r.u64()?;
            let tie_byte = r.u8()?;
            let tie = TieRule::from_wire(tie_byte)
                .ok_or_else(|| ProtocolError::Malformed(format!("tie rule tag {tie_byte}")))?;
            let pi = r.pairs()?;
            let gamma = r.pairs()?;
            Message::PriceRequest(PriceRequest { iteration, tie, pi, gamma })
        }
        MessageType::PriceReply => {
            let iteration = r.u64()?;
            let n = r.len(36)?;
            let mut candidates = Vec::with_capacity(n);
            for _ in 0..n {
                let edge = r.usize()?;
                let solution_index = r.usize()?;
                let cost = r.f64()?;
                let reduced_cost = r.f64()?;
                let constraint_column = r.sparse()?;
                candidates.push(Candidate {
                    column: Column { edge, solution_index, cost, constraint_column, iteration: iteration as usize },
                    reduced_cost,
                });
            }
            Message::PriceReply(PriceReply { iteration, candidates })
        }
        MessageType::Shutdown => Message::Shutdown,
        MessageType::Error => {
            let n = r.len(1)?;
            let text = String::from_utf8(r.take(n)?.to_vec()).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
            Message::Error(text)
        }
    };
    r.finish()?;
    Ok(msg)
}

pub fn encode_frame(msg: &Message) -> Vec<u8> {
    let payload = encode_payload(msg);
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg.kind() as u8);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

struct Header {
    kind: u8,
    len: usize,
}

fn parse_header(h: &[u8; HEADER_LEN], max_frame: usize) -> Result<Header, ProtocolError> {
    let magic: [u8; 8] = h[..8].try_into().unwrap();
    if magic != MAGIC {
        return Err(ProtocolError::BadMagic(magic));
    }
    if h[8] != VERSION {
        return Err(ProtocolError::VersionMismatch { expected: VERSION, found: h[8] });
    }
    let len = u32::from_le_bytes(h[10..14].try_into().unwrap()) as usize;
    if len > max_frame {
        return Err(ProtocolError::Oversize { len, max: max_frame });
    }
    Ok(Header { kind: h[9], len })
}

/// Decode one frame from the front of `bytes`, returning the message and
/// the number of bytes consumed.
pub fn decode_frame(bytes: &[u8], max_frame: usize) -> Result<(Message, usize), ProtocolError> {
    if bytes.len() < HEADER_LEN {
        return Err(ProtocolError::Truncated { needed: HEADER_LEN, available: bytes.len() });
    }
    let header = parse_header(bytes[..HEADER_LEN].try_into().unwrap(), max_frame)?;
    let kind = MessageType::from_u8(header.kind)?;
    let end = HEADER_LEN + header.len;
    if bytes.len() < end {
        return Err(ProtocolError::Truncated { needed: end, available: bytes.len() });
    }
    Ok((decode_payload(kind, &bytes[HEADER_LEN..end])?, end))
}

/// Write a frame and return the bytes written.
pub fn write_message(w: &mut impl Write, msg: &Message) -> Result<u64, ProtocolError> {
    let frame = encode_frame(msg);
    w.write_all(&frame)?;
    w.flush()?;
    Ok(frame.len() as u64)
}

/// Read one frame, returning the message and the bytes read.
pub fn read_message(r: &mut impl Read, max_frame: usize) -> Result<(Message, u64), ProtocolError> {
    let mut h = [0u8; HEADER_LEN];
    r.read_exact(&mut h)?;
    let header = parse_header(&h, max_frame)?;
    let kind = MessageType::from_u8(header.kind)?;
    let mut payload = vec![0u8; header.len];
    r.read_exact(&mut payload)?;
    Ok((decode_payload(kind, &payload)?, (HEADER_LEN + header.len) as u64))
}
