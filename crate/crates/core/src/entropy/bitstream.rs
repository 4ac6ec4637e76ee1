//! `.b2p` container.
//!
//! ```text
//! header (24 bytes)
//!   0  magic      "B2P1"
//!   4  version    u16
//!   6  depth N    u8
//!   7  base L     u8
//!   8  max level  u8   highest level the encoding model can code
//!   9  channels   u8
//!  10  reserved   u16
//!  12  model hash u64
//!  20  crc32 of bytes 0..20
//! geometry chunk
//!   len u32, crc32 u32, occupancy bytes
//! level chunks, one per level L, L+1, ...
//!   level u8, num_points u32, payload_len u32, crc32 u32, payload
//! ```
//!
//! All integers are little-endian. The level chunk CRC covers its first nine
//! bytes and the payload. Cutting the stream after any complete chunk leaves
//! a valid stream for a lower maximum level.

use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"B2P1";
pub const VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 24;
pub const GEOMETRY_PREFIX_BYTES: usize = 8;
pub const LEVEL_PREFIX_BYTES: usize = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamHeader {
    pub version: u16,
    pub depth: u8,
    pub base: u8,
    pub max_level: u8,
    pub channels: u8,
    pub model_hash: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelChunk {
    pub level: u8,
    pub num_points: u32,
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayeredBitstream {
    pub header: StreamHeader,
    pub geometry: Vec<u8>,
    pub levels: Vec<LevelChunk>,
}

fn crc(parts: &[&[u8]]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for p in parts {
        h.update(p);
    }
    h.finalize()
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

impl LayeredBitstream {
    /// Highest level with a feature chunk, if any.
    pub fn top_level(&self) -> Option<u32> {
        self.levels.last().map(|c| c.level as u32)
    }

    pub fn chunk(&self, level: u32) -> Option<&LevelChunk> {
        self.levels.iter().find(|c| c.level as u32 == level)
    }

    /// Copy keeping only chunks up to `level`.
    pub fn truncated_to(&self, level: u32) -> Result<Self> {
        match self.top_level() {
            Some(top) if level >= self.header.base as u32 && level <= top => {}
            _ => {
                return Err(Error::LevelUnavailable(format!(
                    "level {level} not in stream levels {}..={}",
                    self.header.base,
                    self.top_level().map_or("none".to_string(), |t| t.to_string())
                )))
            }
        }
        Ok(LayeredBitstream {
            header: self.header,
            geometry: self.geometry.clone(),
            levels: self.levels.iter().filter(|c| c.level as u32 <= level).cloned().collect(),
        })
    }

    pub fn geometry_bytes(&self) -> usize {
        GEOMETRY_PREFIX_BYTES + self.geometry.len()
    }

    pub fn level_bytes(&self, level: u32) -> Option<usize> {
        self.chunk(level).map(|c| LEVEL_PREFIX_BYTES + c.payload.len())
    }

    pub fn total_bytes(&self) -> usize {
        HEADER_BYTES
            + self.geometry_bytes()
            + self.levels.iter().map(|c| LEVEL_PREFIX_BYTES + c.payload.len()).sum::<usize>()
    }

    pub fn serialize(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(self.total_bytes());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&h.version.to_le_bytes());
        out.extend_from_slice(&[h.depth, h.base, h.max_level, h.channels]);
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&h.model_hash.to_le_bytes());
        let c = crc(&[&out[..20]]);
        out.extend_from_slice(&c.to_le_bytes());

        out.extend_from_slice(&(self.geometry.len() as u32).to_le_bytes());
        out.extend_from_slice(&crc(&[&self.geometry]).to_le_bytes());
        out.extend_from_slice(&self.geometry);

        for chunk in &self.levels {
            let mut head = Vec::with_capacity(9);
            head.push(chunk.level);
            head.extend_from_slice(&chunk.num_points.to_le_bytes());
            head.extend_from_slice(&(chunk.payload.len() as u32).to_le_bytes());
            out.extend_from_slice(&head);
            out.extend_from_slice(&crc(&[&head, &chunk.payload]).to_le_bytes());
            out.extend_from_slice(&chunk.payload);
        }
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self> {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic, not a b2p stream".into()));
        }
        if bytes.len() < HEADER_BYTES {
            return Err(Error::Truncated("header".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported stream version {version}")));
        }
        if crc(&[&bytes[..20]]) != u32_at(bytes, 20) {
            return Err(Error::Checksum("header".into()));
        }
        let header = StreamHeader {
            version,
            depth: bytes[6],
            base: bytes[7],
            max_level: bytes[8],
            channels: bytes[9],
            model_hash: u64::from_le_bytes(bytes[12..20].try_into().unwrap()),
        };
        if header.base > header.max_level || header.max_level > header.depth {
            return Err(Error::Format(format!(
                "inconsistent levels base {} max {} depth {}",
                header.base, header.max_level, header.depth
            )));
        }

        let mut pos = HEADER_BYTES;
        if bytes.len() < pos + GEOMETRY_PREFIX_BYTES {
            return Err(Error::Truncated("geometry".into()));
        }
        let glen = u32_at(bytes, pos) as usize;
        let gcrc = u32_at(bytes, pos + 4);
        pos += GEOMETRY_PREFIX_BYTES;
        if bytes.len() < pos + glen {
            return Err(Error::Truncated("geometry".into()));
        }
        let geometry = bytes[pos..pos + glen].to_vec();
        if crc(&[&geometry]) != gcrc {
            return Err(Error::Checksum("geometry".into()));
        }
        pos += glen;

        let mut levels = Vec::new();
        let mut expect = header.base;
        while pos < bytes.len() {
            let rest = &bytes[pos..];
            let name = format!("level {}", rest[0]);
            if rest[0] != expect || expect > header.max_level {
                return Err(Error::Format(format!(
                    "found chunk for level {} where level {expect} was expected",
                    rest[0]
                )));
            }
            if rest.len() < LEVEL_PREFIX_BYTES {
                return Err(Error::Truncated(name));
            }
            let num_points = u32_at(rest, 1);
            let plen = u32_at(rest, 5) as usize;
            let ccrc = u32_at(rest, 9);
            if rest.len() < LEVEL_PREFIX_BYTES + plen {
                return Err(Error::Truncated(name));
            }
            let payload = rest[LEVEL_PREFIX_BYTES..LEVEL_PREFIX_BYTES + plen].to_vec();
            if crc(&[&rest[..9], &payload]) != ccrc {
                return Err(Error::Checksum(name));
            }
            levels.push(LevelChunk {
                level: rest[0],
                num_points,
                payload,
            });
            pos += LEVEL_PREFIX_BYTES + plen;
            expect += 1;
        }
        Ok(LayeredBitstream {
            header,
            geometry,
            levels,
        })
    }
}
