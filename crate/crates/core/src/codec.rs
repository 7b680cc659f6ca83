//! Little-endian primitives shared by the binary file formats.

use std::io::{self, Read, Write};

pub(crate) fn put_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_f64<W: Write>(w: &mut W, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    put_u32(w, len_u32(s.len())?)?;
    w.write_all(s.as_bytes())
}

pub(crate) fn len_u32(n: usize) -> io::Result<u32> {
    u32::try_from(n).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "length exceeds u32"))
}

pub(crate) fn get_array<R: Read, const N: usize>(r: &mut R) -> io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub(crate) fn get_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    Ok(u32::from_le_bytes(get_array(r)?))
}

pub(crate) fn get_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    Ok(u64::from_le_bytes(get_array(r)?))
}

pub(crate) fn get_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    Ok(f64::from_le_bytes(get_array(r)?))
}

/// Reads a u32-length-prefixed UTF-8 string, refusing lengths above `max`.
pub(crate) fn get_str<R: Read>(r: &mut R, max: usize) -> io::Result<String> {
    let len = get_u32(r)? as usize;
    if len > max {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("string length {len} exceeds {max}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}
