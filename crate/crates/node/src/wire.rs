//! Framed wire protocol.
//!
//! ```text
//! frame = "FTMP" | version u8 | type u8 | body_len u32 | body | crc32(body) u32
//! ```
//!
//! All integers and floats are little-endian. Bodies:
//!
//! | type | message        | body |
//! |------|----------------|------|
//! | 1    | Hello          | origin.x f64, origin.y f64, cell_side f64, tau f64 |
//! | 2    | HelloAck       | empty |
//! | 3    | PublishGrids   | tau f64, cell_side f64, plan str, query_len u32, sub_query_len u32, n u32, n x (ix i64, iy i64) |
//! | 4    | FilterStats    | database_size u64, candidates u64, partitions u64 |
//! | 5    | PruneSession   | phase u8, session payload |
//! | 6    | ValidateSession| phase u8, session payload |
//! | 7    | ResultSet      | n u32, n x str |
//! | 8    | Error          | code u16, text str |
//!
//! `str` is a u16 byte length followed by UTF-8. Session payload layouts are
//! those of `ftm_core::verify::payload`.

use std::io::{self, Read, Write};

use ftm_core::geometry::Coord;
use ftm_core::grid::GridId;
use ftm_core::plan::FilterStats;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"FTMP";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 4 + 1 + 1 + 4;
pub const TRAILER_LEN: usize = 4;
/// Bodies above this size are refused before allocation.
pub const MAX_BODY: u32 = 64 << 20;
/// Wire bytes of one Hello/HelloAck exchange.
pub const HANDSHAKE_BYTES: usize = 2 * (HEADER_LEN + TRAILER_LEN) + 32;

pub mod code {
    pub const MALFORMED: u16 = 1;
    pub const VERSION: u16 = 2;
    pub const TESSELLATION_MISMATCH: u16 = 3;
    pub const UNEXPECTED: u16 = 4;
    pub const BAD_QUERY: u16 = 5;
    pub const INTERNAL: u16 = 6;
    pub const SESSION_ABORT: u16 = 7;
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("connection closed")]
    Closed,
    #[error("bad frame magic")]
    BadMagic,
    #[error("unsupported protocol version {found} (expected {VERSION})")]
    VersionMismatch { found: u8 },
    #[error("frame body of {0} bytes exceeds the limit")]
    TooLarge(u32),
    #[error("frame checksum mismatch")]
    Checksum,
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("malformed {kind} body: {why}")]
    Malformed { kind: &'static str, why: &'static str },
    #[error("unexpected {found} while waiting for {expected}")]
    Unexpected { expected: &'static str, found: &'static str },
    #[error("peer reported error {code}: {text}")]
    Remote { code: u16, text: String },
}

impl WireError {
    /// Error code sent to the peer before closing, if any.
    pub fn code(&self) -> u16 {
        match self {
            WireError::VersionMismatch { .. } => code::VERSION,
            WireError::Unexpected { .. } => code::UNEXPECTED,
            _ => code::MALFORMED,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Phase {
    Open = 1,
    Input = 2,
    Outcome = 3,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello { origin: Coord, cell_side: f64, tau: f64 },
    HelloAck,
    PublishGrids {
        tau: f64,
        cell_side: f64,
        plan: String,
        query_len: u32,
        sub_query_len: u32,
        grids: Vec<GridId>,
    },
    FilterStats(FilterStats),
    PruneSession { phase: Phase, payload: Vec<u8> },
    ValidateSession { phase: Phase, payload: Vec<u8> },
    ResultSet { ids: Vec<String> },
    Error { code: u16, text: String },
}

impl Message {
    pub fn type_id(&self) -> u8 {
        match self {
            Message::Hello { .. } => 1,
            Message::HelloAck => 2,
            Message::PublishGrids { .. } => 3,
            Message::FilterStats(_) => 4,
            Message::PruneSession { .. } => 5,
            Message::ValidateSession { .. } => 6,
            Message::ResultSet { .. } => 7,
            Message::Error { .. } => 8,
        }
    }

    pub fn kind(&self) -> &'static str {
        kind_name(self.type_id())
    }

    pub fn encode_body(&self) -> Vec<u8> {
        let mut b = Vec::new();
        match self {
            Message::Hello { origin, cell_side, tau } => {
                for v in [origin.x, origin.y, *cell_side, *tau] {
                    b.extend_from_slice(&v.to_le_bytes());
                }
            }
            Message::HelloAck => {}
            Message::PublishGrids {
                tau,
                cell_side,
                plan,
                query_len,
                sub_query_len,
                grids,
            } => {
                b.extend_from_slice(&tau.to_le_bytes());
                b.extend_from_slice(&cell_side.to_le_bytes());
                put_str(&mut b, plan);
                b.extend_from_slice(&query_len.to_le_bytes());
                b.extend_from_slice(&sub_query_len.to_le_bytes());
                b.extend_from_slice(&(grids.len() as u32).to_le_bytes());
                for g in grids {
                    b.extend_from_slice(&g.ix.to_le_bytes());
                    b.extend_from_slice(&g.iy.to_le_bytes());
                }
            }
            Message::FilterStats(s) => {
                for v in [s.database_size, s.candidates, s.partitions] {
                    b.extend_from_slice(&v.to_le_bytes());
                }
            }
            Message::PruneSession { phase, payload } | Message::ValidateSession { phase, payload } => {
                b.push(*phase as u8);
                b.extend_from_slice(payload);
            }
            Message::ResultSet { ids } => {
                b.extend_from_slice(&(ids.len() as u32).to_le_bytes());
                for id in ids {
                    put_str(&mut b, id);
                }
            }
            Message::Error { code, text } => {
                b.extend_from_slice(&code.to_le_bytes());
                put_str(&mut b, text);
            }
        }
        b
    }

    pub fn decode_body(type_id: u8, body: &[u8]) -> Result<Self, WireError> {
        let kind = kind_name(type_id);
        let mut r = Body { buf: body, kind };
        let msg = match type_id {
            1 => Message::Hello {
                origin: Coord::new(r.f64()?, r.f64()?),
                cell_side: r.f64()?,
                tau: r.f64()?,
            },
            2 => Message::HelloAck,
            3 => {
                let tau = r.f64()?;
                let cell_side = r.f64()?;
                let plan = r.str()?;
                let query_len = r.u32()?;
                let sub_query_len = r.u32()?;
                let n = r.u32()? as usize;
                if n > r.buf.len() / 16 {
                    return Err(r.bad("grid count exceeds body"));
                }
                let grids = (0..n)
                    .map(|_| Ok(GridId::new(r.i64()?, r.i64()?)))
                    .collect::<Result<_, WireError>>()?;
                Message::PublishGrids {
                    tau,
                    cell_side,
                    plan,
                    query_len,
                    sub_query_len,
                    grids,
                }
            }
            4 => Message::FilterStats(FilterStats {
                database_size: r.u64()?,
                candidates: r.u64()?,
                partitions: r.u64()?,
            }),
            5 | 6 => {
                let phase = match r.u8()? {
                    1 => Phase::Open,
                    2 => Phase::Input,
                    3 => Phase::Outcome,
                    _ => return Err(r.bad("unknown session phase")),
                };
                let payload = std::mem::take(&mut r.buf).to_vec();
                if type_id == 5 {
                    Message::PruneSession { phase, payload }
                } else {
                    Message::ValidateSession { phase, payload }
                }
            }
            7 => {
                let n = r.u32()? as usize;
                if n > r.buf.len() / 2 {
                    return Err(r.bad("id count exceeds body"));
                }
                let ids = (0..n).map(|_| r.str()).collect::<Result<_, _>>()?;
                Message::ResultSet { ids }
            }
            8 => Message::Error {
                code: r.u16()?,
                text: r.str()?,
            },
            other => return Err(WireError::UnknownType(other)),
        };
        if !r.buf.is_empty() {
            return Err(r.bad("trailing bytes"));
        }
        Ok(msg)
    }

    /// Full frame bytes.
    pub fn to_frame(&self) -> Vec<u8> {
        let body = self.encode_body();
        let mut f = Vec::with_capacity(HEADER_LEN + body.len() + TRAILER_LEN);
        f.extend_from_slice(MAGIC);
        f.push(VERSION);
        f.push(self.type_id());
        f.extend_from_slice(&(body.len() as u32).to_le_bytes());
        f.extend_from_slice(&body);
        f.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
        f
    }
}

pub fn kind_name(type_id: u8) -> &'static str {
    match type_id {
        1 => "Hello",
        2 => "HelloAck",
        3 => "PublishGrids",
        4 => "FilterStats",
        5 => "PruneSession",
        6 => "ValidateSession",
        7 => "ResultSet",
        8 => "Error",
        _ => "Unknown",
    }
}

fn put_str(b: &mut Vec<u8>, s: &str) {
    let bytes = &s.as_bytes()[..s.len().min(u16::MAX as usize)];
    b.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
    b.extend_from_slice(bytes);
}

struct Body<'a> {
    buf: &'a [u8],
    kind: &'static str,
}

impl<'a> Body<'a> {
    fn bad(&self, why: &'static str) -> WireError {
        WireError::Malformed { kind: self.kind, why }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(self.bad("body too short"));
        }
        let (h, t) = self.buf.split_at(n);
        self.buf = t;
        Ok(h)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64, WireError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, WireError> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| self.bad("invalid utf-8"))
    }
}

/// Writes one frame, returning its length on the wire.
pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<Vec<u8>, WireError> {
    let frame = msg.to_frame();
    w.write_all(&frame)?;
    w.flush()?;
    Ok(frame)
}

/// Reads one frame, returning the message and the raw frame bytes.
pub fn read_message<R: Read>(r: &mut R) -> Result<(Message, Vec<u8>), WireError> {
    let mut header = [0u8; HEADER_LEN];
    match r.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Err(WireError::Closed),
        Err(e) => return Err(e.into()),
    }
    if &header[..4] != MAGIC {
        return Err(WireError::BadMagic);
    }
    if header[4] != VERSION {
        return Err(WireError::VersionMismatch { found: header[4] });
    }
    let type_id = header[5];
    let len = u32::from_le_bytes(header[6..10].try_into().unwrap());
    if len > MAX_BODY {
        return Err(WireError::TooLarge(len));
    }
    let mut rest = vec![0u8; len as usize + TRAILER_LEN];
    r.read_exact(&mut rest).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => WireError::Closed,
        _ => e.into(),
    })?;
    let (body, crc) = rest.split_at(len as usize);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Err(WireError::Checksum);
    }
    let msg = Message::decode_body(type_id, body)?;
    let mut frame = header.to_vec();
    frame.extend_from_slice(&rest);
    Ok((msg, frame))
}
