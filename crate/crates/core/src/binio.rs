//! Little-endian record helpers shared by the layer and checkpoint formats.

use std::io::{Read, Write};

use crate::error::{GcnError, Result};

fn write_err(e: std::io::Error) -> GcnError {
    GcnError::Format(format!("write failed: {e}"))
}

fn read_err(e: std::io::Error) -> GcnError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        GcnError::Format("record truncated".into())
    } else {
        GcnError::Format(format!("read failed: {e}"))
    }
}

pub fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(write_err)
}

pub fn put_usize(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| GcnError::Format(format!("{v} does not fit in u32")))?;
    put_u32(w, v)
}

pub fn put_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(write_err)
}

pub fn put_f64s(w: &mut impl Write, vs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(vs.len() * 8);
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(write_err)
}

pub fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(read_err)?;
    Ok(u32::from_le_bytes(b))
}

pub fn get_usize(r: &mut impl Read) -> Result<usize> {
    Ok(get_u32(r)? as usize)
}

pub fn get_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(read_err)?;
    Ok(f64::from_le_bytes(b))
}

pub fn get_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf).map_err(read_err)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn expect_magic(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(read_err)?;
    if &b != magic {
        return Err(GcnError::Format(format!(
            "expected record magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&b)
        )));
    }
    Ok(())
}

pub fn put_bytes(w: &mut impl Write, bytes: &[u8]) -> Result<()> {
    w.write_all(bytes).map_err(write_err)
}

pub fn get_bytes(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(read_err)?;
    Ok(buf)
}

/// Reads a four-byte record tag.
pub fn get_tag(r: &mut impl Read) -> Result<[u8; 4]> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(read_err)?;
    Ok(b)
}
