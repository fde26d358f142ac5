//! Protocol 2.0 servo bus frames.
//!
//! Wire layout:
//!
//! ```text
//! FF FF FD 00 | id | len_l len_h | instruction | params (stuffed) | crc_l crc_h
//! ```
//!
//! `len` counts the stuffed instruction + params plus the two CRC bytes. The
//! CRC covers everything from the header through the last stuffed param byte.
//! Byte stuffing inserts an extra `FD` after every `FF FF FD` run in the
//! instruction/params region so the header can never appear inside a frame.

use std::fmt;

use crate::error::{Error, Result};

pub const HEADER: [u8; 4] = [0xFF, 0xFF, 0xFD, 0x00];
pub const BROADCAST_ID: u8 = 0xFE;
pub const MAX_ID: u8 = 252;
/// Largest logical parameter block a frame may carry.
pub const MAX_PARAMS: usize = 65_528;
/// Position resolution of the XL330/XL430 family, ticks per revolution.
pub const DEFAULT_RESOLUTION: u32 = 4096;

pub const ADDR_GOAL_POSITION: u16 = 116;
pub const ADDR_PRESENT_POSITION: u16 = 132;
pub const POSITION_BYTES: u16 = 4;

pub mod instruction {
    pub const PING: u8 = 0x01;
    pub const READ: u8 = 0x02;
    pub const WRITE: u8 = 0x03;
    pub const STATUS: u8 = 0x55;
    pub const SYNC_READ: u8 = 0x82;
    pub const SYNC_WRITE: u8 = 0x83;
}

const CRC_POLY: u16 = 0x8005;

const fn build_crc_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = (i as u16) << 8;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 0x8000 != 0 {
                (crc << 1) ^ CRC_POLY
            } else {
                crc << 1
            };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

static CRC_TABLE: [u16; 256] = build_crc_table();

/// CRC-16 with polynomial x¹⁶+x¹⁵+x²+1 (0x8005), initial value 0, no reflection.
pub fn crc16(bytes: &[u8]) -> u16 {
    crc16_update(0, bytes)
}

pub fn crc16_update(crc: u16, bytes: &[u8]) -> u16 {
    bytes.iter().fold(crc, |crc, &b| {
        let idx = ((crc >> 8) ^ b as u16) & 0xFF;
        (crc << 8) ^ CRC_TABLE[idx as usize]
    })
}

/// One bus frame in logical (unstuffed) form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BusPacket {
    pub id: u8,
    pub instruction: u8,
    pub params: Vec<u8>,
}

pub fn valid_id(id: u8) -> bool {
    id <= MAX_ID || id == BROADCAST_ID
}

impl BusPacket {
    pub fn new(id: u8, instruction: u8, params: Vec<u8>) -> Result<Self> {
        let pkt = Self {
            id,
            instruction,
            params,
        };
        pkt.validate()?;
        Ok(pkt)
    }

    pub fn ping(id: u8) -> Result<Self> {
        Self::new(id, instruction::PING, Vec::new())
    }

    /// Status reply: `params[0]` is the error byte, the rest is data.
    pub fn status(id: u8, error: u8, data: &[u8]) -> Result<Self> {
        let mut params = Vec::with_capacity(data.len() + 1);
        params.push(error);
        params.extend_from_slice(data);
        Self::new(id, instruction::STATUS, params)
    }

    pub fn validate(&self) -> Result<()> {
        if !valid_id(self.id) {
            return Err(Error::invalid(format!("bus id {} out of range", self.id)));
        }
        if self.params.len() > MAX_PARAMS {
            return Err(Error::invalid(format!(
                "{} param bytes exceed the {MAX_PARAMS}-byte limit",
                self.params.len()
            )));
        }
        Ok(())
    }
}

/// Inserts `FD` after each `FF FF FD` run.
pub fn stuff(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + payload.len() / 8);
    let mut window = [0u8; 3];
    for &b in payload {
        out.push(b);
        window = [window[1], window[2], b];
        if window == [0xFF, 0xFF, 0xFD] {
            out.push(0xFD);
            window = [0; 3];
        }
    }
    out
}

/// Inverse of [`stuff`]. Returns `None` if a `FF FF FD` run is not followed
/// by the stuffing byte.
pub fn unstuff(stuffed: &[u8]) -> Option<Vec<u8>> {
    let mut out = Vec::with_capacity(stuffed.len());
    let mut window = [0u8; 3];
    let mut iter = stuffed.iter().copied();
    while let Some(b) = iter.next() {
        out.push(b);
        window = [window[1], window[2], b];
        if window == [0xFF, 0xFF, 0xFD] {
            if iter.next() != Some(0xFD) {
                return None;
            }
            window = [0; 3];
        }
    }
    Some(out)
}

pub fn encode_packet(pkt: &BusPacket) -> Result<Vec<u8>> {
    pkt.validate()?;
    let mut logical = Vec::with_capacity(pkt.params.len() + 1);
    logical.push(pkt.instruction);
    logical.extend_from_slice(&pkt.params);
    let stuffed = stuff(&logical);
    let len = stuffed.len() + 2;
    if len > u16::MAX as usize {
        return Err(Error::invalid(format!(
            "stuffed frame body of {len} bytes does not fit the length field"
        )));
    }
    let mut frame = Vec::with_capacity(7 + len);
    frame.extend_from_slice(&HEADER);
    frame.push(pkt.id);
    frame.extend_from_slice(&(len as u16).to_le_bytes());
    frame.extend_from_slice(&stuffed);
    let crc = crc16(&frame);
    frame.extend_from_slice(&crc.to_le_bytes());
    Ok(frame)
}

/// Something the stream decoder had to skip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnostic {
    CrcMismatch {
        id: u8,
        expected: u16,
        found: u16,
    },
    /// Length field smaller than instruction + CRC.
    BadLength {
        id: u8,
        length: u16,
    },
    InvalidId {
        id: u8,
    },
    /// CRC was fine but the payload carried an unstuffed `FF FF FD` run.
    BadStuffing {
        id: u8,
    },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::CrcMismatch {
                id,
                expected,
                found,
            } => write!(
                f,
                "crc-mismatch id={id} expected={expected:#06x} found={found:#06x}"
            ),
            Diagnostic::BadLength { id, length } => write!(f, "bad-length id={id} length={length}"),
            Diagnostic::InvalidId { id } => write!(f, "invalid-id id={id}"),
            Diagnostic::BadStuffing { id } => write!(f, "bad-stuffing id={id}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DecodeOutput {
    pub packets: Vec<BusPacket>,
    /// Unconsumed tail: a partial frame, or a partial header.
    pub remainder: Vec<u8>,
    pub diagnostics: Vec<Diagnostic>,
}

fn find_header(buf: &[u8], from: usize) -> Option<usize> {
    buf.get(from..)?
        .windows(HEADER.len())
        .position(|w| w == HEADER)
        .map(|p| p + from)
}

/// Length of the longest suffix of `buf` that is a proper prefix of the header.
fn partial_header_suffix(buf: &[u8]) -> usize {
    (1..HEADER.len())
        .rev()
        .find(|&k| buf.len() >= k && buf[buf.len() - k..] == HEADER[..k])
        .unwrap_or(0)
}

/// Decodes every complete frame in `buf`.
///
/// Bytes that cannot start a frame are dropped. A frame with a bad CRC or a
/// bad length skips one byte and the scan resumes at the next header.
pub fn decode_stream(buf: &[u8]) -> DecodeOutput {
    let mut out = DecodeOutput::default();
    let mut pos = 0;
    loop {
        let Some(h) = find_header(buf, pos) else {
            let tail = &buf[pos.min(buf.len())..];
            let keep = partial_header_suffix(tail);
            out.remainder = tail[tail.len() - keep..].to_vec();
            return out;
        };
        if buf.len() < h + 7 {
            out.remainder = buf[h..].to_vec();
            return out;
        }
        let id = buf[h + 4];
        let length = u16::from_le_bytes([buf[h + 5], buf[h + 6]]);
        if length < 3 {
            out.diagnostics.push(Diagnostic::BadLength { id, length });
            pos = h + 1;
            continue;
        }
        let total = 7 + length as usize;
        if buf.len() < h + total {
            out.remainder = buf[h..].to_vec();
            return out;
        }
        let frame = &buf[h..h + total];
        let expected = crc16(&frame[..total - 2]);
        let found = u16::from_le_bytes([frame[total - 2], frame[total - 1]]);
        if expected != found {
            out.diagnostics.push(Diagnostic::CrcMismatch {
                id,
                expected,
                found,
            });
            pos = h + 1;
            continue;
        }
        pos = h + total;
        if !valid_id(id) {
            out.diagnostics.push(Diagnostic::InvalidId { id });
            continue;
        }
        match unstuff(&frame[7..total - 2]) {
            Some(mut logical) => {
                let params = logical.split_off(1);
                out.packets.push(BusPacket {
                    id,
                    instruction: logical[0],
                    params,
                });
            }
            None => out.diagnostics.push(Diagnostic::BadStuffing { id }),
        }
    }
}

/// Incremental wrapper around [`decode_stream`] that owns the remainder.
#[derive(Debug, Clone, Default)]
pub struct StreamDecoder {
    pending: Vec<u8>,
}

impl StreamDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, bytes: &[u8]) -> (Vec<BusPacket>, Vec<Diagnostic>) {
        self.pending.extend_from_slice(bytes);
        let out = decode_stream(&self.pending);
        self.pending = out.remainder;
        (out.packets, out.diagnostics)
    }

    pub fn pending(&self) -> &[u8] {
        &self.pending
    }
}

/// Raw motor positions, one per motor, each in `[0, resolution)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTicks {
    pub ticks: Vec<u32>,
    pub resolution: u32,
}

impl RawTicks {
    pub fn new(ticks: Vec<u32>, resolution: u32) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::invalid("tick resolution must be positive"));
        }
        if let Some((i, t)) = ticks.iter().enumerate().find(|(_, t)| **t >= resolution) {
            return Err(Error::invalid(format!(
                "motor {i}: tick {t} outside [0, {}]",
                resolution - 1
            )));
        }
        Ok(Self { ticks, resolution })
    }

    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }
}

fn check_ids(ids: &[u8]) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::invalid("id list is empty"));
    }
    let mut seen = [false; 256];
    for &id in ids {
        if id > MAX_ID {
            return Err(Error::invalid(format!("motor id {id} out of range")));
        }
        if std::mem::replace(&mut seen[id as usize], true) {
            return Err(Error::invalid(format!("duplicate motor id {id}")));
        }
    }
    Ok(())
}

/// Grouped goal-position write: one broadcast frame for the whole arm.
pub fn sync_write_positions(ids: &[u8], ticks: &RawTicks) -> Result<BusPacket> {
    check_ids(ids)?;
    if ids.len() != ticks.len() {
        return Err(Error::Dimension {
            expected: ids.len(),
            got: ticks.len(),
        });
    }
    let ticks = RawTicks::new(ticks.ticks.clone(), ticks.resolution)?;
    let mut params = Vec::with_capacity(4 + ids.len() * 5);
    params.extend_from_slice(&ADDR_GOAL_POSITION.to_le_bytes());
    params.extend_from_slice(&POSITION_BYTES.to_le_bytes());
    for (&id, &t) in ids.iter().zip(&ticks.ticks) {
        params.push(id);
        params.extend_from_slice(&t.to_le_bytes());
    }
    BusPacket::new(BROADCAST_ID, instruction::SYNC_WRITE, params)
}

/// Grouped present-position read request.
pub fn sync_read_positions(ids: &[u8]) -> Result<BusPacket> {
    check_ids(ids)?;
    let mut params = Vec::with_capacity(4 + ids.len());
    params.extend_from_slice(&ADDR_PRESENT_POSITION.to_le_bytes());
    params.extend_from_slice(&POSITION_BYTES.to_le_bytes());
    params.extend_from_slice(ids);
    BusPacket::new(BROADCAST_ID, instruction::SYNC_READ, params)
}

/// Status replies a motor sends back for a sync read.
pub fn position_status(id: u8, tick: u32) -> Result<BusPacket> {
    BusPacket::status(id, 0, &tick.to_le_bytes())
}

/// Collects one present-position reply per requested id, in request order.
pub fn parse_sync_read_reply(
    ids: &[u8],
    packets: &[BusPacket],
    resolution: u32,
) -> Result<RawTicks> {
    check_ids(ids)?;
    let mut ticks: Vec<Option<u32>> = vec![None; ids.len()];
    for pkt in packets {
        if pkt.instruction != instruction::STATUS {
            return Err(Error::invalid(format!(
                "id {}: expected status reply, got instruction {:#04x}",
                pkt.id, pkt.instruction
            )));
        }
        let slot = ids
            .iter()
            .position(|&id| id == pkt.id)
            .ok_or_else(|| Error::invalid(format!("unexpected reply from id {}", pkt.id)))?;
        if ticks[slot].is_some() {
            return Err(Error::invalid(format!(
                "duplicate reply from id {}",
                pkt.id
            )));
        }
        if pkt.params.len() != 1 + POSITION_BYTES as usize {
            return Err(Error::invalid(format!(
                "id {}: status carries {} bytes, expected 5",
                pkt.id,
                pkt.params.len()
            )));
        }
        if pkt.params[0] != 0 {
            return Err(Error::invalid(format!(
                "id {} reported error byte {:#04x}",
                pkt.id, pkt.params[0]
            )));
        }
        let raw = i32::from_le_bytes([pkt.params[1], pkt.params[2], pkt.params[3], pkt.params[4]]);
        if raw < 0 || raw as u32 >= resolution {
            return Err(Error::invalid(format!(
                "id {}: position {raw} outside single-turn range",
                pkt.id
            )));
        }
        ticks[slot] = Some(raw as u32);
    }
    let ticks = ticks
        .into_iter()
        .zip(ids)
        .map(|(t, id)| t.ok_or_else(|| Error::invalid(format!("no reply from id {id}"))))
        .collect::<Result<Vec<_>>>()?;
    RawTicks::new(ticks, resolution)
}

/// Hex capture files: one frame per line, bytes as two hex digits separated
/// by whitespace, `#` comments allowed.
pub mod capture {
    use crate::error::{Error, Result};
    use crate::kv::strip_comment;

    pub fn parse(text: &str) -> Result<Vec<Vec<u8>>> {
        let mut frames = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let bytes = line
                .split_whitespace()
                .map(|tok| {
                    if tok.len() != 2 {
                        return Err(Error::parse(idx + 1, format!("`{tok}` is not a hex byte")));
                    }
                    u8::from_str_radix(tok, 16)
                        .map_err(|e| Error::parse(idx + 1, format!("`{tok}`: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            frames.push(bytes);
        }
        Ok(frames)
    }

    pub fn format(frames: &[Vec<u8>]) -> String {
        let mut out = String::new();
        for frame in frames {
            let line: Vec<String> = frame.iter().map(|b| format!("{b:02X}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}
