//! Typed round messages and their wire encoding.
//!
//! A connection starts with the 8-byte magic `SSCAFL01`, followed by frames:
//!
//! ```text
//! kind: u8 | round: u32 LE | sender: u16 LE | payload length: u32 LE | payload
//! payload = ndims: u16 LE | dims: ndims x u32 LE | data
//! ```
//!
//! `data` holds `prod(dims)` little-endian `f64` values, or `u32` sample
//! indices for `BatchAnnounce`.

use std::io::{ErrorKind, Read, Write};

use thiserror::Error;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SSCAFL01";
pub const HEADER_LEN: usize = 11;
/// Sender id used by the server.
pub const SERVER_ID: u16 = u16::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageKind {
    ModelBroadcast = 1,
    BatchAnnounce = 2,
    QObjective = 3,
    QConstraint = 4,
    HExchange = 5,
    QAggregate = 6,
}

impl MessageKind {
    pub const ALL: [MessageKind; 6] = [
        MessageKind::ModelBroadcast,
        MessageKind::BatchAnnounce,
        MessageKind::QObjective,
        MessageKind::QConstraint,
        MessageKind::HExchange,
        MessageKind::QAggregate,
    ];

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(usize::from(tag).wrapping_sub(1)).copied()
    }

    pub fn tag(self) -> u8 {
        self as u8
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Reals(Vec<f64>),
    Indices(Vec<u32>),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::Reals(v) => v.len(),
            Payload::Indices(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundMessage {
    pub kind: MessageKind,
    pub round: u32,
    pub sender: u16,
    pub dims: Vec<u32>,
    pub payload: Payload,
}

impl RoundMessage {
    pub fn reals(
        kind: MessageKind,
        round: u32,
        sender: u16,
        dims: Vec<u32>,
        data: Vec<f64>,
    ) -> Result<Self> {
        let msg = Self {
            kind,
            round,
            sender,
            dims,
            payload: Payload::Reals(data),
        };
        msg.validate()?;
        Ok(msg)
    }

    pub fn batch(round: u32, sender: u16, indices: Vec<u32>) -> Result<Self> {
        let msg = Self {
            kind: MessageKind::BatchAnnounce,
            round,
            sender,
            dims: vec![indices.len() as u32],
            payload: Payload::Indices(indices),
        };
        msg.validate()?;
        Ok(msg)
    }

    pub fn element_count(&self) -> u64 {
        self.dims.iter().map(|&d| u64::from(d)).product()
    }

    /// Checks the kind-specific schema.
    pub fn validate(&self) -> Result<()> {
        schema_problem(self.kind, &self.dims, &self.payload)
            .map_or(Ok(()), |p| Err(Error::Protocol(p)))
    }

    pub fn as_reals(&self) -> Result<&[f64]> {
        match &self.payload {
            Payload::Reals(v) => Ok(v),
            Payload::Indices(_) => Err(Error::Protocol(format!("{:?} carries indices", self.kind))),
        }
    }

    pub fn into_reals(self) -> Result<Vec<f64>> {
        match self.payload {
            Payload::Reals(v) => Ok(v),
            Payload::Indices(_) => Err(Error::Protocol(format!("{:?} carries indices", self.kind))),
        }
    }

    /// Number of scalar values carried, for traffic accounting.
    pub fn scalars(&self) -> usize {
        self.payload.len()
    }
}

fn schema_problem(kind: MessageKind, dims: &[u32], payload: &Payload) -> Option<String> {
    if dims.is_empty() {
        return Some("payload declares no dimensions".into());
    }
    if dims.len() > usize::from(u16::MAX) {
        return Some(format!("{} dimensions exceed the u16 count", dims.len()));
    }
    let count: u64 = dims.iter().map(|&d| u64::from(d)).product();
    if count != payload.len() as u64 {
        return Some(format!(
            "dims {dims:?} declare {count} values, payload has {}",
            payload.len()
        ));
    }
    match (kind, payload) {
        (MessageKind::BatchAnnounce, Payload::Reals(_)) => {
            Some("BatchAnnounce must carry indices".into())
        }
        (MessageKind::BatchAnnounce, _) => None,
        (_, Payload::Indices(_)) => Some(format!("{kind:?} must carry reals")),
        (MessageKind::ModelBroadcast, _) if count == 0 => {
            Some("model dimension must be at least 1".into())
        }
        _ => None,
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("bad magic at offset {offset}")]
    BadMagic { offset: usize },
    #[error("truncated input at offset {offset}: need {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("unknown kind tag {tag} at offset {offset}")]
    UnknownKind { offset: usize, tag: u8 },
    #[error("length mismatch at offset {offset}: {detail}")]
    LengthMismatch { offset: usize, detail: String },
    #[error("schema violation at offset {offset}: {detail}")]
    Schema { offset: usize, detail: String },
    #[error("{count} trailing bytes at offset {offset}")]
    TrailingBytes { offset: usize, count: usize },
}

/// One frame, without the connection magic.
pub fn encode_message(msg: &RoundMessage) -> Result<Vec<u8>> {
    msg.validate()?;
    let elem = match msg.payload {
        Payload::Reals(_) => 8,
        Payload::Indices(_) => 4,
    };
    let payload_len = 2 + 4 * msg.dims.len() + elem * msg.payload.len();
    let payload_len32 = u32::try_from(payload_len)
        .map_err(|_| Error::Protocol(format!("payload of {payload_len} bytes is too large")))?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload_len);
    out.push(msg.kind.tag());
    out.extend_from_slice(&msg.round.to_le_bytes());
    out.extend_from_slice(&msg.sender.to_le_bytes());
    out.extend_from_slice(&payload_len32.to_le_bytes());
    out.extend_from_slice(&(msg.dims.len() as u16).to_le_bytes());
    for d in &msg.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    match &msg.payload {
        Payload::Reals(v) => v
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Payload::Indices(v) => v
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(DecodeError::Truncated {
                offset: self.base + self.bytes.len(),
                needed: self.pos + n - self.bytes.len(),
            }),
        }
    }

    fn offset(&self) -> usize {
        self.base + self.pos
    }
}

fn le_u16(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

struct Header {
    kind: MessageKind,
    round: u32,
    sender: u16,
    payload_len: usize,
}

fn decode_header(bytes: &[u8], base: usize) -> std::result::Result<Header, DecodeError> {
    let mut cur = Cursor {
        bytes,
        pos: 0,
        base,
    };
    let tag = cur.take(1)?[0];
    let kind = MessageKind::from_tag(tag).ok_or(DecodeError::UnknownKind { offset: base, tag })?;
    let round = le_u32(cur.take(4)?);
    let sender = le_u16(cur.take(2)?);
    let payload_len = le_u32(cur.take(4)?) as usize;
    Ok(Header {
        kind,
        round,
        sender,
        payload_len,
    })
}

fn decode_payload(
    header: Header,
    bytes: &[u8],
    base: usize,
) -> std::result::Result<RoundMessage, DecodeError> {
    let mut cur = Cursor {
        bytes,
        pos: 0,
        base,
    };
    let ndims = usize::from(le_u16(cur.take(2)?));
    let dims_at = cur.offset();
    let dims: Vec<u32> = cur.take(4 * ndims)?.chunks_exact(4).map(le_u32).collect();
    let count: u64 = dims.iter().map(|&d| u64::from(d)).product();
    let elem = if header.kind == MessageKind::BatchAnnounce {
        4
    } else {
        8
    };
    let remaining = (bytes.len() - cur.pos) as u64;
    if count.checked_mul(elem) != Some(remaining) {
        return Err(DecodeError::LengthMismatch {
            offset: dims_at,
            detail: format!(
                "dims {dims:?} need {} data bytes, frame has {remaining}",
                count.saturating_mul(elem)
            ),
        });
    }
    let data = cur.take(remaining as usize)?;
    let payload = if header.kind == MessageKind::BatchAnnounce {
        Payload::Indices(data.chunks_exact(4).map(le_u32).collect())
    } else {
        Payload::Reals(
            data.chunks_exact(8)
                .map(|b| f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))
                .collect(),
        )
    };
    if let Some(detail) = schema_problem(header.kind, &dims, &payload) {
        return Err(DecodeError::Schema {
            offset: base,
            detail,
        });
    }
    Ok(RoundMessage {
        kind: header.kind,
        round: header.round,
        sender: header.sender,
        dims,
        payload,
    })
}

fn decode_frame_at(
    bytes: &[u8],
    base: usize,
) -> std::result::Result<(RoundMessage, usize), DecodeError> {
    let header_bytes = bytes
        .get(..HEADER_LEN)
        .ok_or_else(|| DecodeError::Truncated {
            offset: base + bytes.len(),
            needed: HEADER_LEN - bytes.len(),
        })?;
    let header = decode_header(header_bytes, base)?;
    let end = HEADER_LEN + header.payload_len;
    if bytes.len() < end {
        return Err(DecodeError::Truncated {
            offset: base + bytes.len(),
            needed: end - bytes.len(),
        });
    }
    let msg = decode_payload(header, &bytes[HEADER_LEN..end], base + HEADER_LEN)?;
    Ok((msg, end))
}

/// Decodes exactly one frame; trailing bytes are an error.
pub fn decode_message(bytes: &[u8]) -> std::result::Result<RoundMessage, DecodeError> {
    let (msg, used) = decode_frame_at(bytes, 0)?;
    if used != bytes.len() {
        return Err(DecodeError::TrailingBytes {
            offset: used,
            count: bytes.len() - used,
        });
    }
    Ok(msg)
}

/// Magic followed by every frame.
pub fn encode_stream(msgs: &[RoundMessage]) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    for m in msgs {
        out.extend(encode_message(m)?);
    }
    Ok(out)
}

pub fn decode_stream(bytes: &[u8]) -> std::result::Result<Vec<RoundMessage>, DecodeError> {
    match bytes.get(..MAGIC.len()) {
        Some(m) if m == MAGIC => {}
        Some(_) => return Err(DecodeError::BadMagic { offset: 0 }),
        None => {
            return Err(DecodeError::Truncated {
                offset: bytes.len(),
                needed: MAGIC.len() - bytes.len(),
            })
        }
    }
    let mut pos = MAGIC.len();
    let mut out = Vec::new();
    while pos < bytes.len() {
        let (msg, used) = decode_frame_at(&bytes[pos..], pos)?;
        out.push(msg);
        pos += used;
    }
    Ok(out)
}

pub fn write_magic<W: Write>(w: &mut W) -> Result<()> {
    w.write_all(MAGIC)?;
    Ok(())
}

pub fn read_magic<R: Read>(r: &mut R) -> Result<()> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    if &buf != MAGIC {
        return Err(DecodeError::BadMagic { offset: 0 }.into());
    }
    Ok(())
}

pub fn write_frame<W: Write>(w: &mut W, msg: &RoundMessage) -> Result<()> {
    w.write_all(&encode_message(msg)?)?;
    Ok(())
}

/// Reads one frame; `Ok(None)` on a clean end of stream at a frame boundary.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<RoundMessage>> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => {
                return Err(DecodeError::Truncated {
                    offset: got,
                    needed: HEADER_LEN - got,
                }
                .into())
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) if e.kind() == ErrorKind::ConnectionReset => return Ok(None),
            Err(e) => return Err(e.into()),
        }
    }
    let h = decode_header(&header, 0)?;
    let mut payload = vec![0u8; h.payload_len];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::Decode(DecodeError::Truncated {
            offset: HEADER_LEN,
            needed: h.payload_len,
        }),
        _ => Error::Io(e),
    })?;
    Ok(Some(decode_payload(h, &payload, HEADER_LEN)?))
}
