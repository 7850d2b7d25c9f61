use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Block compression codec. The id is what the container header records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Codec {
    #[default]
    None,
    Deflate,
    Zstd,
}

impl Codec {
    pub const ALL: [Codec; 3] = [Codec::None, Codec::Deflate, Codec::Zstd];

    pub fn name(self) -> &'static str {
        match self {
            Codec::None => "none",
            Codec::Deflate => "deflate",
            Codec::Zstd => "zstd",
        }
    }

    pub fn id(self) -> u8 {
        match self {
            Codec::None => 0,
            Codec::Deflate => 1,
            Codec::Zstd => 2,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(Codec::None),
            1 => Ok(Codec::Deflate),
            2 => Ok(Codec::Zstd),
            other => Err(Error::UnknownCodec(other)),
        }
    }

    pub fn compress(self, raw: &[u8]) -> Result<Vec<u8>> {
        match self {
            Codec::None => Ok(raw.to_vec()),
            Codec::Deflate => {
                let mut enc = flate2::write::DeflateEncoder::new(
                    Vec::with_capacity(raw.len() / 2),
                    flate2::Compression::fast(),
                );
                enc.write_all(raw)?;
                Ok(enc.finish()?)
            }
            Codec::Zstd => Ok(zstd::bulk::compress(raw, 3)?),
        }
    }

    pub fn decompress(self, data: &[u8], raw_len: usize) -> Result<Vec<u8>> {
        let out = match self {
            Codec::None => data.to_vec(),
            Codec::Deflate => {
                let mut out = Vec::with_capacity(raw_len);
                flate2::read::DeflateDecoder::new(data).read_to_end(&mut out)?;
                out
            }
            Codec::Zstd => zstd::bulk::decompress(data, raw_len)?,
        };
        if out.len() != raw_len {
            return Err(Error::Corrupt(format!(
                "block decoded to {} bytes, expected {raw_len}",
                out.len()
            )));
        }
        Ok(out)
    }
}

impl std::str::FromStr for Codec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Codec::None),
            "deflate" => Ok(Codec::Deflate),
            "zstd" => Ok(Codec::Zstd),
            other => Err(Error::InvalidInput(format!("unknown codec {other:?}"))),
        }
    }
}
