//! A tiny checksummed file format for numeric payloads.
//!
//! Layout: an 8-byte magic, a format version, a JSON header (whose schema is
//! up to the caller), then a flat little-endian `f64` payload, then a SHA-256
//! digest over everything before it.  The digest turns silent corruption —
//! truncated writes, bit rot in a cache directory — into a detectable
//! [`Error::Corrupt`] instead of garbage numerics.

use crate::{Error, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"WAVEBOX\0";
const VERSION: u32 = 1;

/// Writes `header` (as JSON) and `payload` to `path`, checksummed.
///
/// The write goes through a sibling temp file and a rename, so a crash never
/// leaves a half-written container at the destination.
pub fn write_container(path: &Path, header: &serde_json::Value, payload: &[f64]) -> Result<()> {
    let header_bytes = serde_json::to_vec(header)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let mut buf: Vec<u8> = Vec::with_capacity(32 + header_bytes.len() + payload.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.write_u32::<LittleEndian>(VERSION)?;
    buf.write_u64::<LittleEndian>(header_bytes.len() as u64)?;
    buf.extend_from_slice(&header_bytes);
    buf.write_u64::<LittleEndian>(payload.len() as u64)?;
    for &v in payload {
        buf.write_f64::<LittleEndian>(v)?;
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);

    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(parent)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a container back, verifying magic, version, and checksum.
pub fn read_container(path: &Path) -> Result<(serde_json::Value, Vec<f64>)> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 32 + 20 {
        return Err(Error::Corrupt(format!("{}: too short", path.display())));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Corrupt(format!(
            "{}: checksum mismatch",
            path.display()
        )));
    }
    let mut r = std::io::Cursor::new(body);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Corrupt(format!("{}: bad magic", path.display())));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Corrupt(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let header_len = r.read_u64::<LittleEndian>()? as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: serde_json::Value = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Corrupt(format!("{}: header is not JSON: {e}", path.display())))?;
    let n = r.read_u64::<LittleEndian>()? as usize;
    let mut payload = Vec::with_capacity(n);
    for _ in 0..n {
        payload.push(r.read_f64::<LittleEndian>()?);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Corrupt(format!(
            "{}: {} trailing bytes",
            path.display(),
            rest.len()
        )));
    }
    Ok((header, payload))
}
