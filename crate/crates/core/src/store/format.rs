//! Byte-level layout of the container files.
//!
//! All integers are little-endian. Every file starts with a fixed header
//! whose last four bytes are the CRC-32 of the bytes before it. Payload is a
//! sequence of blocks, each framed as `crc32(u32) | compressed_len(u64) |
//! compressed bytes`, the CRC covering the compressed bytes.

use std::fs::File;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use super::codec::Codec;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u16 = 1;

pub const EVENTS_FILE: &str = "events.bin";
pub const GRAY_FILE: &str = "gray.bin";
pub const FLOW_FILE: &str = "flow.bin";
pub const MAPS_FILE: &str = "maps.bin";
pub const PROPS_FILE: &str = "props.json";

pub const EVENTS_MAGIC: [u8; 4] = *b"EVKZ";
pub const GRAY_MAGIC: [u8; 4] = *b"EVKG";
pub const FLOW_MAGIC: [u8; 4] = *b"EVKF";
pub const MAPS_MAGIC: [u8; 4] = *b"EVKM";

pub const BLOCK_HEADER_LEN: u64 = 12;

/// `events.bin` header: magic, version u16, codec u8, chunk_size u32,
/// N u64, width u16, height u16, crc32.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventsHeader {
    pub version: u16,
    pub codec: Codec,
    pub chunk_size: u32,
    pub num_events: u64,
    pub width: u16,
    pub height: u16,
}

impl EventsHeader {
    pub const LEN: usize = 27;

    pub fn to_bytes(&self) -> [u8; Self::LEN] {
        let mut b = [0u8; Self::LEN];
        b[0..4].copy_from_slice(&EVENTS_MAGIC);
        b[4..6].copy_from_slice(&self.version.to_le_bytes());
        b[6] = self.codec.id();
        b[7..11].copy_from_slice(&self.chunk_size.to_le_bytes());
        b[11..19].copy_from_slice(&self.num_events.to_le_bytes());
        b[19..21].copy_from_slice(&self.width.to_le_bytes());
        b[21..23].copy_from_slice(&self.height.to_le_bytes());
        let crc = crc32fast::hash(&b[..23]);
        b[23..27].copy_from_slice(&crc.to_le_bytes());
        b
    }

    pub fn parse(b: &[u8; Self::LEN], path: &Path) -> Result<Self> {
        check_header(b, &EVENTS_MAGIC, path)?;
        Ok(Self {
            version: check_version(u16_at(b, 4))?,
            codec: Codec::from_id(b[6])?,
            chunk_size: u32::from_le_bytes(b[7..11].try_into().unwrap()),
            num_events: u64::from_le_bytes(b[11..19].try_into().unwrap()),
            width: u16_at(b, 19),
            height: u16_at(b, 21),
        })
    }

    pub fn num_chunks(&self) -> usize {
        if self.num_events == 0 {
            0
        } else {
            (self.num_events as usize).div_ceil(self.chunk_size as usize)
        }
    }
}

/// Header shared by `gray.bin` and `flow.bin`: magic, version u16, codec u8,
/// count u64, width u16, height u16, crc32.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelHeader {
    pub version: u16,
    pub codec: Codec,
    pub count: u64,
    pub width: u16,
    pub height: u16,
}

impl ChannelHeader {
    pub const LEN: usize = 23;

    pub fn to_bytes(&self, magic: &[u8; 4]) -> [u8; Self::LEN] {
        let mut b = [0u8; Self::LEN];
        b[0..4].copy_from_slice(magic);
        b[4..6].copy_from_slice(&self.version.to_le_bytes());
        b[6] = self.codec.id();
        b[7..15].copy_from_slice(&self.count.to_le_bytes());
        b[15..17].copy_from_slice(&self.width.to_le_bytes());
        b[17..19].copy_from_slice(&self.height.to_le_bytes());
        let crc = crc32fast::hash(&b[..19]);
        b[19..23].copy_from_slice(&crc.to_le_bytes());
        b
    }

    pub fn parse(b: &[u8; Self::LEN], magic: &[u8; 4], path: &Path) -> Result<Self> {
        check_header(b, magic, path)?;
        Ok(Self {
            version: check_version(u16_at(b, 4))?,
            codec: Codec::from_id(b[6])?,
            count: u64::from_le_bytes(b[7..15].try_into().unwrap()),
            width: u16_at(b, 15),
            height: u16_at(b, 17),
        })
    }
}

/// `maps.bin` header: magic, version u16, codec u8, crc32.
pub struct MapsHeader {
    pub codec: Codec,
}

impl MapsHeader {
    pub const LEN: usize = 11;

    pub fn to_bytes(&self) -> [u8; Self::LEN] {
        let mut b = [0u8; Self::LEN];
        b[0..4].copy_from_slice(&MAPS_MAGIC);
        b[4..6].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        b[6] = self.codec.id();
        let crc = crc32fast::hash(&b[..7]);
        b[7..11].copy_from_slice(&crc.to_le_bytes());
        b
    }

    pub fn parse(b: &[u8; Self::LEN], path: &Path) -> Result<Self> {
        check_header(b, &MAPS_MAGIC, path)?;
        check_version(u16_at(b, 4))?;
        Ok(Self {
            codec: Codec::from_id(b[6])?,
        })
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn check_header(b: &[u8], magic: &[u8; 4], path: &Path) -> Result<()> {
    if &b[0..4] != magic {
        return Err(Error::BadMagic(path.to_path_buf()));
    }
    let n = b.len();
    let stored = u32::from_le_bytes(b[n - 4..].try_into().unwrap());
    if crc32fast::hash(&b[..n - 4]) != stored {
        return Err(Error::HeaderChecksum(path.to_path_buf()));
    }
    Ok(())
}

fn check_version(v: u16) -> Result<u16> {
    if v != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(v));
    }
    Ok(v)
}

/// Opens `path` and reads its fixed-size header; a missing or truncated file
/// is reported as a missing header.
pub fn read_header<const N: usize>(path: &Path) -> Result<(File, [u8; N])> {
    let mut file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingHeader(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut b = [0u8; N];
    file.read_exact(&mut b).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::MissingHeader(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    Ok((file, b))
}

pub fn write_block<W: Write>(w: &mut W, codec: Codec, raw: &[u8]) -> Result<u64> {
    let packed = codec.compress(raw)?;
    w.write_all(&crc32fast::hash(&packed).to_le_bytes())?;
    w.write_all(&(packed.len() as u64).to_le_bytes())?;
    w.write_all(&packed)?;
    Ok(BLOCK_HEADER_LEN + packed.len() as u64)
}

/// Reads the block at the reader's current position.
pub fn read_block<R: Read>(
    r: &mut R,
    codec: Codec,
    raw_len: usize,
    file: &'static str,
    block: usize,
) -> Result<Vec<u8>> {
    let mut hdr = [0u8; BLOCK_HEADER_LEN as usize];
    r.read_exact(&mut hdr).map_err(truncated)?;
    let crc = u32::from_le_bytes(hdr[0..4].try_into().unwrap());
    let len = u64::from_le_bytes(hdr[4..12].try_into().unwrap());
    let mut packed = vec![0u8; usize::try_from(len).map_err(|_| Error::Corrupt("block too large".into()))?];
    r.read_exact(&mut packed).map_err(truncated)?;
    if crc32fast::hash(&packed) != crc {
        return Err(Error::ChunkChecksum { file, block });
    }
    codec.decompress(&packed, raw_len)
}

/// Skips one block, returning its total framed length.
pub fn skip_block<R: Read + Seek>(r: &mut R) -> Result<u64> {
    let mut hdr = [0u8; BLOCK_HEADER_LEN as usize];
    r.read_exact(&mut hdr).map_err(truncated)?;
    let len = u64::from_le_bytes(hdr[4..12].try_into().unwrap());
    r.seek(SeekFrom::Current(len as i64))?;
    Ok(BLOCK_HEADER_LEN + len)
}

fn truncated(e: std::io::Error) -> Error {
    match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Corrupt("truncated block".into()),
        _ => Error::Io(e),
    }
}

pub fn u16s_to_bytes(v: &[u16]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn bytes_to_u16s(b: &[u8]) -> Vec<u16> {
    b.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect()
}

pub fn i64s_to_bytes(v: &[i64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn bytes_to_i64s(b: &[u8]) -> Vec<i64> {
    b.chunks_exact(8)
        .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

pub fn f64s_to_bytes(v: impl Iterator<Item = f64>) -> Vec<u8> {
    v.flat_map(|x| x.to_le_bytes()).collect()
}

pub fn bytes_to_f64s(b: &[u8]) -> Vec<f64> {
    b.chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

/// Timestamps are stored as deltas from the previous value; the first
/// delta is relative to zero.
pub fn delta_encode(ts: &[i64]) -> Vec<i64> {
    let mut prev = 0i64;
    ts.iter()
        .map(|&t| {
            let d = t.wrapping_sub(prev);
            prev = t;
            d
        })
        .collect()
}

pub fn delta_decode(deltas: &[i64]) -> Vec<i64> {
    let mut acc = 0i64;
    deltas
        .iter()
        .map(|&d| {
            acc = acc.wrapping_add(d);
            acc
        })
        .collect()
}
