//! Bitcoin message framing, byte for byte.
//!
//! Header layout: magic (4) | command (12, NUL padded) | payload length (u32 LE)
//! | checksum (4) followed by the payload. The checksum is the first four bytes
//! of SHA256(SHA256(payload)).

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAINNET_MAGIC: [u8; 4] = [0xf9, 0xbe, 0xb4, 0xd9];
pub const HEADER_LEN: usize = 24;
pub const INV_ENTRY_LEN: usize = 36;
pub const BLOCK_HEADER_LEN: usize = 80;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated frame: need {needed} bytes, have {got}")]
    Truncated { needed: usize, got: usize },
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("malformed command field")]
    BadCommand,
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("expected a {expected} message, got {got}")]
    WrongCommand { expected: &'static str, got: String },
    #[error("malformed payload: {0}")]
    BadPayload(&'static str),
}

pub fn double_sha256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(Sha256::digest(data)).into()
}

pub fn checksum(payload: &[u8]) -> [u8; 4] {
    let h = double_sha256(payload);
    [h[0], h[1], h[2], h[3]]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    magic: [u8; 4],
    command: [u8; 12],
    checksum: [u8; 4],
    payload: Vec<u8>,
}

impl WireMessage {
    /// A well-formed mainnet frame. Panics on commands longer than 12 bytes.
    pub fn new(command: &str, payload: Vec<u8>) -> Self {
        Self::with_magic(MAINNET_MAGIC, command, payload)
    }

    pub fn with_magic(magic: [u8; 4], command: &str, payload: Vec<u8>) -> Self {
        assert!(command.len() <= 12 && command.is_ascii(), "command {command:?} does not fit");
        let mut cmd = [0u8; 12];
        cmd[..command.len()].copy_from_slice(command.as_bytes());
        WireMessage { magic, command: cmd, checksum: checksum(&payload), payload }
    }

    pub fn magic(&self) -> [u8; 4] {
        self.magic
    }

    pub fn command(&self) -> &str {
        let end = self.command.iter().position(|&b| b == 0).unwrap_or(12);
        std::str::from_utf8(&self.command[..end]).unwrap_or("")
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    /// The checksum carried in the header, which may be stale.
    pub fn checksum(&self) -> [u8; 4] {
        self.checksum
    }

    pub fn checksum_valid(&self) -> bool {
        self.checksum == checksum(&self.payload)
    }

    pub fn len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&self.command);
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.checksum);
        out.extend_from_slice(&self.payload);
        out
    }
}

/// Parses one mainnet frame. The returned flag reports whether the header
/// checksum matches the payload.
pub fn parse(bytes: &[u8]) -> Result<(WireMessage, bool), WireError> {
    parse_with_magic(bytes, MAINNET_MAGIC)
}

pub fn parse_with_magic(bytes: &[u8], magic: [u8; 4]) -> Result<(WireMessage, bool), WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::Truncated { needed: HEADER_LEN, got: bytes.len() });
    }
    let got_magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if got_magic != magic {
        return Err(WireError::BadMagic(got_magic));
    }
    let command: [u8; 12] = bytes[4..16].try_into().unwrap();
    let end = command.iter().position(|&b| b == 0).unwrap_or(12);
    if command[end..].iter().any(|&b| b != 0) || !command[..end].iter().all(|b| b.is_ascii_graphic()) {
        return Err(WireError::BadCommand);
    }
    let len = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let sum: [u8; 4] = bytes[20..24].try_into().unwrap();
    let total = HEADER_LEN + len;
    if bytes.len() < total {
        return Err(WireError::Truncated { needed: total, got: bytes.len() });
    }
    if bytes.len() > total {
        return Err(WireError::TrailingBytes(bytes.len() - total));
    }
    let msg = WireMessage { magic: got_magic, command, checksum: sum, payload: bytes[HEADER_LEN..].to_vec() };
    let valid = msg.checksum_valid();
    Ok((msg, valid))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InvType {
    Tx,
    Block,
    Other(u32),
}

impl InvType {
    pub fn code(self) -> u32 {
        match self {
            InvType::Tx => 1,
            InvType::Block => 2,
            InvType::Other(c) => c,
        }
    }

    pub fn from_code(c: u32) -> Self {
        match c {
            1 => InvType::Tx,
            2 => InvType::Block,
            c => InvType::Other(c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InvEntry {
    pub kind: InvType,
    pub hash: [u8; 32],
}

pub fn write_varint(out: &mut Vec<u8>, n: u64) {
    match n {
        0..=0xfc => out.push(n as u8),
        0xfd..=0xffff => {
            out.push(0xfd);
            out.extend_from_slice(&(n as u16).to_le_bytes());
        }
        0x1_0000..=0xffff_ffff => {
            out.push(0xfe);
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        _ => {
            out.push(0xff);
            out.extend_from_slice(&n.to_le_bytes());
        }
    }
}

/// Returns the value and the number of bytes consumed.
pub fn read_varint(buf: &[u8]) -> Result<(u64, usize), WireError> {
    let short = WireError::BadPayload("short varint");
    let first = *buf.first().ok_or(short.clone())?;
    let width = match first {
        0xfd => 2,
        0xfe => 4,
        0xff => 8,
        b => return Ok((u64::from(b), 1)),
    };
    let body = buf.get(1..1 + width).ok_or(short)?;
    let mut le = [0u8; 8];
    le[..width].copy_from_slice(body);
    Ok((u64::from_le_bytes(le), 1 + width))
}

pub fn encode_inventory(entries: &[InvEntry]) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + entries.len() * INV_ENTRY_LEN);
    write_varint(&mut out, entries.len() as u64);
    for e in entries {
        out.extend_from_slice(&e.kind.code().to_le_bytes());
        out.extend_from_slice(&e.hash);
    }
    out
}

pub fn decode_inventory(payload: &[u8]) -> Result<Vec<InvEntry>, WireError> {
    let (count, mut at) = read_varint(payload)?;
    let count = usize::try_from(count).map_err(|_| WireError::BadPayload("inventory count"))?;
    if payload.len() != at + count.saturating_mul(INV_ENTRY_LEN) {
        return Err(WireError::BadPayload("inventory length does not match count"));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = InvType::from_code(u32::from_le_bytes(payload[at..at + 4].try_into().unwrap()));
        let hash: [u8; 32] = payload[at + 4..at + 36].try_into().unwrap();
        out.push(InvEntry { kind, hash });
        at += INV_ENTRY_LEN;
    }
    Ok(out)
}

pub fn inv(entries: &[InvEntry]) -> WireMessage {
    WireMessage::new("inv", encode_inventory(entries))
}

pub fn getdata(entries: &[InvEntry]) -> WireMessage {
    WireMessage::new("getdata", encode_inventory(entries))
}

/// The 80-byte block header. The simulator stores the block height in `bits`
/// and a miner code in `nonce`; nothing here checks proof of work.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockHeader {
    pub version: i32,
    pub prev: [u8; 32],
    pub merkle: [u8; 32],
    pub time: u32,
    pub bits: u32,
    pub nonce: u32,
}

impl BlockHeader {
    pub fn encode(&self) -> [u8; BLOCK_HEADER_LEN] {
        let mut out = [0u8; BLOCK_HEADER_LEN];
        out[0..4].copy_from_slice(&self.version.to_le_bytes());
        out[4..36].copy_from_slice(&self.prev);
        out[36..68].copy_from_slice(&self.merkle);
        out[68..72].copy_from_slice(&self.time.to_le_bytes());
        out[72..76].copy_from_slice(&self.bits.to_le_bytes());
        out[76..80].copy_from_slice(&self.nonce.to_le_bytes());
        out
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        if b.len() < BLOCK_HEADER_LEN {
            return Err(WireError::BadPayload("short block header"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap());
        Ok(BlockHeader {
            version: u32_at(0) as i32,
            prev: b[4..36].try_into().unwrap(),
            merkle: b[36..68].try_into().unwrap(),
            time: u32_at(68),
            bits: u32_at(72),
            nonce: u32_at(76),
        })
    }

    pub fn hash(&self) -> [u8; 32] {
        double_sha256(&self.encode())
    }
}

/// A block message carrying a header and an empty transaction list.
pub fn block(header: &BlockHeader) -> WireMessage {
    let mut payload = header.encode().to_vec();
    write_varint(&mut payload, 0);
    WireMessage::new("block", payload)
}

pub fn decode_block(payload: &[u8]) -> Result<BlockHeader, WireError> {
    let header = BlockHeader::decode(payload)?;
    let (n, used) = read_varint(&payload[BLOCK_HEADER_LEN..])?;
    if n != 0 || payload.len() != BLOCK_HEADER_LEN + used {
        return Err(WireError::BadPayload("block body"));
    }
    Ok(header)
}

fn expect(msg: &WireMessage, command: &'static str) -> Result<(), WireError> {
    if msg.command() == command {
        Ok(())
    } else {
        Err(WireError::WrongCommand { expected: command, got: msg.command().to_string() })
    }
}

/// Replaces the hash of the first inventory entry matching `from_hash`.
/// The payload length never changes and the checksum is recomputed. The flag
/// is false (and the message returned untouched) when no entry matches.
pub fn rewrite_getdata_hash(msg: &WireMessage, from_hash: &[u8; 32], to_hash: &[u8; 32]) -> Result<(WireMessage, bool), WireError> {
    rewrite(msg, from_hash, None, to_hash)
}

/// Like [`rewrite_getdata_hash`] but also sets the entry's inventory type,
/// which is how a transaction request is turned into a block request.
pub fn rewrite_getdata_entry(msg: &WireMessage, from_hash: &[u8; 32], to: InvEntry) -> Result<(WireMessage, bool), WireError> {
    rewrite(msg, from_hash, Some(to.kind), &to.hash)
}

fn rewrite(
    msg: &WireMessage,
    from_hash: &[u8; 32],
    kind: Option<InvType>,
    to_hash: &[u8; 32],
) -> Result<(WireMessage, bool), WireError> {
    expect(msg, "getdata")?;
    let entries = decode_inventory(&msg.payload)?;
    let Some(i) = entries.iter().position(|e| &e.hash == from_hash) else {
        return Ok((msg.clone(), false));
    };
    let (_, prefix) = read_varint(&msg.payload)?;
    let at = prefix + i * INV_ENTRY_LEN;
    let mut payload = msg.payload.clone();
    if let Some(k) = kind {
        payload[at..at + 4].copy_from_slice(&k.code().to_le_bytes());
    }
    payload[at + 4..at + 36].copy_from_slice(to_hash);
    let out = WireMessage { magic: msg.magic, command: msg.command, checksum: checksum(&payload), payload };
    Ok((out, true))
}

/// Flips one payload byte chosen by `seed`, keeping the stale checksum so the
/// receiver rejects the frame.
pub fn corrupt_block(msg: &WireMessage, seed: u64) -> Result<WireMessage, WireError> {
    expect(msg, "block")?;
    let mut out = msg.clone();
    if out.payload.is_empty() {
        return Ok(out);
    }
    let mix = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(17) ^ seed;
    let at = (mix % out.payload.len() as u64) as usize;
    let mask = 1u8 << ((mix >> 32) % 8);
    out.payload[at] ^= mask;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksum_of_empty_payload() {
        // Independently computed with Python's hashlib.
        assert_eq!(hex::encode(checksum(b"")), "5df6e0e2");
        assert_eq!(hex::encode(checksum(&[0u8])), "1406e058");
        assert_eq!(hex::encode(checksum(b"hello")), "9595c9df");
    }

    #[test]
    fn getdata_roundtrip() {
        let msg = getdata(&[InvEntry { kind: InvType::Block, hash: [7; 32] }]);
        let bytes = msg.serialize();
        assert_eq!(bytes.len(), 24 + 1 + 36);
        let (back, ok) = parse(&bytes).unwrap();
        assert!(ok);
        assert_eq!(back, msg);
        assert_eq!(back.command(), "getdata");
    }

    #[test]
    fn flipped_bit_fails_checksum() {
        let mut bytes = getdata(&[InvEntry { kind: InvType::Block, hash: [7; 32] }]).serialize();
        bytes[30] ^= 0x01;
        let (_, ok) = parse(&bytes).unwrap();
        assert!(!ok);
    }

    #[test]
    fn short_buffer_is_truncated() {
        assert!(matches!(parse(&[0u8; 10]), Err(WireError::Truncated { needed: 24, got: 10 })));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = inv(&[]).serialize();
        bytes[0] = 0;
        assert!(matches!(parse(&bytes), Err(WireError::BadMagic(_))));
    }

    #[test]
    fn rewrite_identity_is_byte_identical() {
        let msg = getdata(&[InvEntry { kind: InvType::Block, hash: [42; 32] }]);
        let (out, hit) = rewrite_getdata_hash(&msg, &[42; 32], &[42; 32]).unwrap();
        assert!(hit);
        assert_eq!(out.serialize(), msg.serialize());
    }

    #[test]
    fn rewrite_missing_hash_is_noop() {
        let msg = getdata(&[InvEntry { kind: InvType::Tx, hash: [1; 32] }]);
        let (out, hit) = rewrite_getdata_hash(&msg, &[2; 32], &[3; 32]).unwrap();
        assert!(!hit);
        assert_eq!(out, msg);
    }

    #[test]
    fn corrupt_then_fix_checksum_is_valid() {
        let header = BlockHeader { version: 1, prev: [0; 32], merkle: [5; 32], time: 9, bits: 1, nonce: 3 };
        let msg = block(&header);
        let bad = corrupt_block(&msg, 11).unwrap();
        assert_eq!(bad.len(), msg.len());
        assert!(!parse(&bad.serialize()).unwrap().1);
        let fixed = WireMessage::new("block", bad.payload().to_vec());
        assert!(parse(&fixed.serialize()).unwrap().1);
        assert_eq!(corrupt_block(&msg, 11).unwrap(), bad);
    }

    #[test]
    fn varint_widths() {
        for (n, w) in [(0u64, 1), (0xfc, 1), (0xfd, 3), (0xffff, 3), (0x10000, 5), (u64::MAX, 9)] {
            let mut v = Vec::new();
            write_varint(&mut v, n);
            assert_eq!(v.len(), w);
            assert_eq!(read_varint(&v).unwrap(), (n, w));
        }
    }
}
