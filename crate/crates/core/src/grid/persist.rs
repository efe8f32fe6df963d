//! On-disk index format.
//!
//! ```text
//! magic "FTMI" | version u16 | body length u64 | body | crc32(body) u32
//! body = origin.x f64 | origin.y f64 | cell_side f64 | tau f64
//!        | trajectory_count u64 | entry_count u64
//!        | entry_count x (ix i64 | iy i64 | len u32 | len x LEB128 delta)
//! ```
//! All integers and floats are little-endian. The first posting id of each
//! entry is stored as-is, the rest as gaps from the previous id.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{GridId, GridIndex, GridSpec};
use crate::geometry::Coord;

pub const INDEX_MAGIC: &[u8; 4] = b"FTMI";
pub const INDEX_VERSION: u16 = 1;
const PREAMBLE: usize = 4 + 2 + 8;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("index file truncated")]
    Truncated,
    #[error("not an index file (bad magic)")]
    BadMagic,
    #[error("unsupported index version {found} (expected {INDEX_VERSION})")]
    VersionMismatch { found: u16 },
    #[error("index checksum mismatch")]
    Checksum,
    #[error("corrupt index: {0}")]
    Corrupt(&'static str),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn put_varint(out: &mut Vec<u8>, mut v: u32) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

pub fn write_index<W: Write>(mut w: W, idx: &GridIndex) -> std::io::Result<()> {
    let mut body = Vec::new();
    body.extend_from_slice(&idx.spec.origin.x.to_le_bytes());
    body.extend_from_slice(&idx.spec.origin.y.to_le_bytes());
    body.extend_from_slice(&idx.spec.cell_side.to_le_bytes());
    body.extend_from_slice(&idx.tau.to_le_bytes());
    body.extend_from_slice(&idx.trajectory_count.to_le_bytes());
    body.extend_from_slice(&(idx.entries.len() as u64).to_le_bytes());
    for (g, ids) in &idx.entries {
        body.extend_from_slice(&g.ix.to_le_bytes());
        body.extend_from_slice(&g.iy.to_le_bytes());
        body.extend_from_slice(&(ids.len() as u32).to_le_bytes());
        let mut prev = 0u32;
        for (i, &id) in ids.iter().enumerate() {
            put_varint(&mut body, if i == 0 { id } else { id - prev });
            prev = id;
        }
    }
    w.write_all(INDEX_MAGIC)?;
    w.write_all(&INDEX_VERSION.to_le_bytes())?;
    w.write_all(&(body.len() as u64).to_le_bytes())?;
    w.write_all(&body)?;
    w.write_all(&crc32fast::hash(&body).to_le_bytes())?;
    w.flush()
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PersistError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(PersistError::Corrupt("record extends past body"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, PersistError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, PersistError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64, PersistError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, PersistError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn varint(&mut self) -> Result<u32, PersistError> {
        let mut v: u64 = 0;
        for shift in (0..35).step_by(7) {
            let b = self.take(1)?[0];
            v |= u64::from(b & 0x7f) << shift;
            if b & 0x80 == 0 {
                return u32::try_from(v).map_err(|_| PersistError::Corrupt("varint overflow"));
            }
        }
        Err(PersistError::Corrupt("varint too long"))
    }
}

pub fn read_index<R: Read>(mut r: R) -> Result<GridIndex, PersistError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < PREAMBLE {
        return Err(if bytes.len() >= 4 && &bytes[..4] != INDEX_MAGIC {
            PersistError::BadMagic
        } else {
            PersistError::Truncated
        });
    }
    if &bytes[..4] != INDEX_MAGIC {
        return Err(PersistError::BadMagic);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != INDEX_VERSION {
        return Err(PersistError::VersionMismatch { found: version });
    }
    let body_len = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
    let needed = (PREAMBLE as u64)
        .checked_add(body_len)
        .and_then(|v| v.checked_add(4))
        .ok_or(PersistError::Corrupt("body length overflow"))?;
    if (bytes.len() as u64) < needed {
        return Err(PersistError::Truncated);
    }
    if bytes.len() as u64 > needed {
        return Err(PersistError::Corrupt("trailing bytes after checksum"));
    }
    let body = &bytes[PREAMBLE..PREAMBLE + body_len as usize];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(PersistError::Checksum);
    }

    let mut c = Cursor { buf: body, pos: 0 };
    let origin = Coord::new(c.f64()?, c.f64()?);
    let cell_side = c.f64()?;
    if !(cell_side > 0.0 && cell_side.is_finite()) {
        return Err(PersistError::Corrupt("non-positive cell side"));
    }
    let tau = c.f64()?;
    let trajectory_count = c.u64()?;
    let n_entries = c.u64()?;
    let mut entries = BTreeMap::new();
    for _ in 0..n_entries {
        let g = GridId::new(c.i64()?, c.i64()?);
        let len = c.u32()? as usize;
        let mut ids = Vec::with_capacity(len.min(body.len()));
        let mut prev = 0u32;
        for i in 0..len {
            let v = c.varint()?;
            let id = if i == 0 {
                v
            } else {
                if v == 0 {
                    return Err(PersistError::Corrupt("posting list not strictly ascending"));
                }
                prev.checked_add(v).ok_or(PersistError::Corrupt("posting id overflow"))?
            };
            if u64::from(id) >= trajectory_count {
                return Err(PersistError::Corrupt("posting id out of range"));
            }
            ids.push(id);
            prev = id;
        }
        if entries.insert(g, ids).is_some() {
            return Err(PersistError::Corrupt("duplicate grid entry"));
        }
    }
    if c.pos != body.len() {
        return Err(PersistError::Corrupt("unparsed bytes in body"));
    }
    Ok(GridIndex {
        spec: GridSpec { origin, cell_side },
        tau,
        trajectory_count,
        entries,
    })
}

pub fn persist_index(idx: &GridIndex, path: impl AsRef<Path>) -> Result<(), PersistError> {
    let f = File::create(path)?;
    write_index(BufWriter::new(f), idx)?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>) -> Result<GridIndex, PersistError> {
    read_index(std::io::BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point, Trajectory};
    use crate::grid::build_index;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_index(n: usize) -> GridIndex {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ts: Vec<Trajectory> = (0..n)
            .map(|i| {
                let mut ts = 0.0;
                let (mut x, mut y) = (rng.gen_range(0.0..3000.0), rng.gen_range(0.0..3000.0));
                let pts = (0..rng.gen_range(1..12))
                    .map(|_| {
                        let p = Point::new(ts, x, y);
                        ts += 10.0;
                        x += rng.gen_range(-150.0..150.0);
                        y += rng.gen_range(-150.0..150.0);
                        p
                    })
                    .collect();
                Trajectory::new(format!("t{i}"), pts).unwrap()
            })
            .collect();
        build_index(&ts, 50.0, GridSpec::new(Coord::new(-7.5, 3.25), 100.0)).unwrap()
    }

    #[test]
    fn round_trip_through_file() {
        let idx = sample_index(1000);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.ftmi");
        persist_index(&idx, &path).unwrap();
        assert_eq!(load_index(&path).unwrap(), idx);
    }

    #[test]
    fn empty_file_is_truncated() {
        assert!(matches!(read_index(&[][..]), Err(PersistError::Truncated)));
    }

    #[test]
    fn cut_file_is_truncated() {
        let mut buf = Vec::new();
        write_index(&mut buf, &sample_index(20)).unwrap();
        buf.truncate(buf.len() - 10);
        assert!(matches!(read_index(buf.as_slice()), Err(PersistError::Truncated)));
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let mut buf = Vec::new();
        write_index(&mut buf, &sample_index(20)).unwrap();
        let mid = buf.len() / 2;
        buf[mid] ^= 0x40;
        assert!(matches!(read_index(buf.as_slice()), Err(PersistError::Checksum)));
    }

    #[test]
    fn version_and_magic_checked() {
        let mut buf = Vec::new();
        write_index(&mut buf, &sample_index(5)).unwrap();
        let mut v = buf.clone();
        v[4] = 9;
        assert!(matches!(
            read_index(v.as_slice()),
            Err(PersistError::VersionMismatch { found: 9 })
        ));
        let mut m = buf.clone();
        m[0] = b'X';
        assert!(matches!(read_index(m.as_slice()), Err(PersistError::BadMagic)));
    }

    #[test]
    fn varint_encoding() {
        let mut out = Vec::new();
        put_varint(&mut out, 300);
        assert_eq!(out, vec![0xac, 0x02]);
        let mut c = Cursor { buf: &out, pos: 0 };
        assert_eq!(c.varint().unwrap(), 300);
    }
}
