//! Binary checkpoint container.
//!
//! Layout: magic `DLMA`, format version (u32 LE), then records until EOF.
//! Each record is `name_len: u32 | name | dtype: u8 | rank: u8 |
//! dims: rank x u32 | payload | crc32(payload): u32`, everything
//! little-endian. dtype 0 carries 32-bit reals, dtype 1 raw bytes.

use std::io::Write;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"DLMA";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (supported up to {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32 { dims: Vec<u32>, data: Vec<f32> },
    Bytes(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub records: Vec<Record>,
}

impl Checkpoint {
    pub fn new(records: Vec<Record>) -> Self {
        Self {
            version: FORMAT_VERSION,
            records,
        }
    }

    pub fn find(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn tensor(&self, name: &str) -> Result<(&[u32], &[f32]), CheckpointError> {
        match self.find(name).map(|r| &r.payload) {
            Some(Payload::F32 { dims, data }) => Ok((dims, data)),
            Some(Payload::Bytes(_)) => Err(CheckpointError::Corrupt(format!(
                "record {name} is not a tensor"
            ))),
            None => Err(CheckpointError::Corrupt(format!("missing record {name}"))),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8], CheckpointError> {
        match self.find(name).map(|r| &r.payload) {
            Some(Payload::Bytes(b)) => Ok(b),
            Some(Payload::F32 { .. }) => Err(CheckpointError::Corrupt(format!(
                "record {name} is not a byte blob"
            ))),
            None => Err(CheckpointError::Corrupt(format!("missing record {name}"))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&self.version.to_le_bytes())?;
        for record in &self.records {
            let name = record.name.as_bytes();
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name)?;
            let (dtype, rank, dims, payload): (u8, u8, Vec<u32>, Vec<u8>) = match &record.payload {
                Payload::F32 { dims, data } => {
                    let mut bytes = Vec::with_capacity(data.len() * 4);
                    for v in data {
                        bytes.extend_from_slice(&v.to_le_bytes());
                    }
                    (0, dims.len() as u8, dims.clone(), bytes)
                }
                Payload::Bytes(b) => (1, 1, vec![b.len() as u32], b.clone()),
            };
            out.write_all(&[dtype, rank])?;
            for d in &dims {
                out.write_all(&d.to_le_bytes())?;
            }
            out.write_all(&payload)?;
            out.write_all(&crc32(&payload).to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path)?;
        let mut r = Cursor { bytes: &bytes, pos: 0 };
        if r.take(4)? != &MAGIC[..] {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version > FORMAT_VERSION {
            return Err(CheckpointError::Version { found: version });
        }
        let mut records = Vec::new();
        while !r.at_end() {
            let name_len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|e| CheckpointError::Corrupt(format!("record name: {e}")))?;
            let dtype = r.take(1)?[0];
            let rank = r.take(1)?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(u32::from_le_bytes(r.take(4)?.try_into().unwrap()));
            }
            let count: usize = dims.iter().map(|&d| d as usize).product();
            let payload = match dtype {
                0 => {
                    let raw = r.take(count * 4)?;
                    verify_crc(&name, raw, r.take(4)?)?;
                    let data = raw
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                        .collect();
                    Payload::F32 { dims, data }
                }
                1 => {
                    let raw = r.take(count)?;
                    verify_crc(&name, raw, r.take(4)?)?;
                    Payload::Bytes(raw.to_vec())
                }
                other => {
                    return Err(CheckpointError::Corrupt(format!(
                        "record {name}: unknown dtype {other}"
                    )))
                }
            };
            records.push(Record { name, payload });
        }
        Ok(Self { version, records })
    }
}

fn verify_crc(name: &str, payload: &[u8], stored: &[u8]) -> Result<(), CheckpointError> {
    let expect = u32::from_le_bytes(stored.try_into().unwrap());
    let got = crc32(payload);
    if got != expect {
        return Err(CheckpointError::Corrupt(format!(
            "record {name}: checksum {got:#010x} != {expect:#010x}"
        )));
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CheckpointError::Corrupt(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            ))),
        }
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// CRC-32 (IEEE 802.3), bitwise table-free form.
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}

/// Helpers shared by reader and writer code.
pub fn u64_bytes(v: u64) -> Vec<u8> {
    v.to_le_bytes().to_vec()
}

pub fn u64_from(bytes: &[u8]) -> Result<u64, CheckpointError> {
    bytes
        .try_into()
        .map(u64::from_le_bytes)
        .map_err(|_| CheckpointError::Corrupt("expected 8-byte integer".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint::new(vec![
            Record {
                name: "g.head.weight".into(),
                payload: Payload::F32 {
                    dims: vec![2, 3],
                    data: vec![0.5, -1.25, 3.0, 0.0, 1e-6, 9.75],
                },
            },
            Record {
                name: "meta.iteration".into(),
                payload: Payload::Bytes(u64_bytes(1234)),
            },
        ])
    }

    #[test]
    fn crc32_known_value() {
        // standard check value for "123456789"
        assert_eq!(crc32(b"123456789"), 0xCBF43926);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.dlma");
        let p2 = dir.path().join("b.dlma");
        let ck = sample();
        ck.save(&p1).unwrap();
        let loaded = Checkpoint::load(&p1).unwrap();
        assert_eq!(loaded, ck);
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.dlma");
        sample().save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            Checkpoint::load(&p),
            Err(CheckpointError::Corrupt(_))
        ));
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.dlma");
        sample().save(&p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&p, &bytes).unwrap();
        assert!(Checkpoint::load(&p).is_err());
    }

    #[test]
    fn future_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.dlma");
        sample().save(&p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            Checkpoint::load(&p),
            Err(CheckpointError::Version { found: 99 })
        ));
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.dlma");
        std::fs::write(&p, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(
            Checkpoint::load(&p),
            Err(CheckpointError::BadMagic)
        ));
    }
}
