//! The binary tensor container: magic "BOTF1", little-endian, u32 rank,
//! u64 extents, contiguous f64 data, trailing CRC32 over everything before
//! it. Bit-exact and validated on read.

use anyhow::{bail, Context, Result};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 5] = b"BOTF1";

pub fn write_tensor(path: &Path, extents: &[u64], data: &[f64]) -> Result<()> {
    let expected: u64 = extents.iter().product();
    if expected != data.len() as u64 {
        bail!(
            "tensor extents {:?} expect {expected} values, got {}",
            extents,
            data.len()
        );
    }
    let mut buf = Vec::with_capacity(5 + 4 + 8 * extents.len() + 8 * data.len() + 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(extents.len() as u32).to_le_bytes());
    for e in extents {
        buf.extend_from_slice(&e.to_le_bytes());
    }
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<(Vec<u64>, Vec<f64>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .read_to_end(&mut bytes)?;
    if bytes.len() < 13 {
        bail!("{}: truncated tensor file", path.display());
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        bail!(
            "{}: CRC mismatch (stored {stored:#010x}, computed {computed:#010x})",
            path.display()
        );
    }
    if &body[..5] != MAGIC {
        bail!("{}: bad magic", path.display());
    }
    let rank = u32::from_le_bytes(body[5..9].try_into().unwrap()) as usize;
    let mut offset = 9;
    if body.len() < offset + 8 * rank {
        bail!("{}: truncated extents", path.display());
    }
    let mut extents = Vec::with_capacity(rank);
    for _ in 0..rank {
        extents.push(u64::from_le_bytes(body[offset..offset + 8].try_into().unwrap()));
        offset += 8;
    }
    let count: u64 = extents.iter().product();
    if body.len() != offset + 8 * count as usize {
        bail!(
            "{}: expected {count} values, file holds {}",
            path.display(),
            (body.len() - offset) / 8
        );
    }
    let mut data = Vec::with_capacity(count as usize);
    for k in 0..count as usize {
        data.push(f64::from_le_bytes(
            body[offset + 8 * k..offset + 8 * (k + 1)].try_into().unwrap(),
        ));
    }
    Ok((extents, data))
}

/// CRC of a file on disk, for determinism checks.
#[allow(dead_code)] // used by integration tests
pub fn file_crc(path: &Path) -> Result<u32> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Ok(crc32fast::hash(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.botf");
        let data: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin()).collect();
        write_tensor(&path, &[2, 3, 4], &data).unwrap();
        let (extents, back) = read_tensor(&path).unwrap();
        assert_eq!(extents, vec![2, 3, 4]);
        assert_eq!(back, data);
        // Re-writing produces the identical file.
        let crc1 = file_crc(&path).unwrap();
        write_tensor(&path, &[2, 3, 4], &data).unwrap();
        assert_eq!(file_crc(&path).unwrap(), crc1);
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.botf");
        write_tensor(&path, &[4], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[20] ^= 0xFF;
        std::fs::write(&path, &bytes).unwrap();
        let err = read_tensor(&path).unwrap_err().to_string();
        assert!(err.contains("CRC"), "{err}");
    }

    #[test]
    fn extent_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.botf");
        assert!(write_tensor(&path, &[3], &[1.0, 2.0]).is_err());
    }
}
