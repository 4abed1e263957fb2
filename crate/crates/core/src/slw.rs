//! Raw real-field files: `"SLW1"`, `nx` and `ny` as little-endian `u32`,
//! then `nx * ny` little-endian `f32` values, row-major.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::RealField;

pub const MAGIC: &[u8; 4] = b"SLW1";

pub fn write<W: Write>(mut w: W, field: &RealField) -> Result<()> {
    w.write_all(&encode(field)?)?;
    Ok(())
}

pub fn encode(field: &RealField) -> Result<Vec<u8>> {
    let (nx, ny) = field.shape();
    let nx32 = u32::try_from(nx).map_err(|_| Error::Format("nx does not fit u32".into()))?;
    let ny32 = u32::try_from(ny).map_err(|_| Error::Format("ny does not fit u32".into()))?;
    let mut buf = Vec::with_capacity(12 + 4 * field.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&nx32.to_le_bytes());
    buf.extend_from_slice(&ny32.to_le_bytes());
    for &v in field.as_slice() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(buf)
}

pub fn read<R: Read>(mut r: R) -> Result<RealField> {
    let mut header = [0u8; 12];
    r.read_exact(&mut header)
        .map_err(|e| Error::Format(format!("truncated SLW1 header: {e}")))?;
    if &header[..4] != MAGIC {
        return Err(Error::Format("bad SLW1 magic".into()));
    }
    let nx = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let ny = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let count = nx
        .checked_mul(ny)
        .ok_or_else(|| Error::Format("SLW1 dimensions overflow".into()))?;
    let mut raw = vec![0u8; count * 4];
    r.read_exact(&mut raw)
        .map_err(|e| Error::Format(format!("truncated SLW1 payload: {e}")))?;
    let values = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    RealField::from_vec(nx, ny, values)
}

pub fn save(path: impl AsRef<Path>, field: &RealField) -> Result<()> {
    fs::write(path, encode(field)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<RealField> {
    let bytes = fs::read(path)?;
    read(bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let f = RealField::from_fn(3, 2, |i, j| (i + 3 * j) as f64 * 0.5);
        let bytes = encode(&f).unwrap();
        assert_eq!(&bytes[..4], b"SLW1");
        assert_eq!(&bytes[4..8], &[3, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[2, 0, 0, 0]);
        assert_eq!(bytes.len(), 12 + 6 * 4);
        assert_eq!(&bytes[12 + 4 * 5..], &2.5f32.to_le_bytes());
        assert_eq!(read(bytes.as_slice()).unwrap(), f);
    }

    #[test]
    fn rejects_corruption() {
        let f = RealField::filled(4, 4, 1.0);
        let mut bytes = encode(&f).unwrap();
        assert!(read(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(read(bytes.as_slice()).is_err());
    }
}
