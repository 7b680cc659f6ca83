//! Embedding files, little-endian:
//!
//! ```text
//! u32 count | count × ( u32 len + recording_id | f64 start | f64 duration | u32 D | D × f32 )
//! ```

use std::io::{self, Read, Write};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub recording_id: String,
    pub start: f64,
    pub duration: f64,
    pub vector: Vec<f32>,
}

fn len_u32(n: usize) -> io::Result<u32> {
    u32::try_from(n).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "length exceeds u32"))
}

pub fn write_embeddings<W: Write>(w: &mut W, records: &[EmbeddingRecord]) -> io::Result<()> {
    w.write_all(&len_u32(records.len())?.to_le_bytes())?;
    for r in records {
        w.write_all(&len_u32(r.recording_id.len())?.to_le_bytes())?;
        w.write_all(r.recording_id.as_bytes())?;
        w.write_all(&r.start.to_le_bytes())?;
        w.write_all(&r.duration.to_le_bytes())?;
        w.write_all(&len_u32(r.vector.len())?.to_le_bytes())?;
        for v in &r.vector {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn take<const N: usize, R: Read>(r: &mut R) -> io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_embeddings<R: Read>(r: &mut R) -> io::Result<Vec<EmbeddingRecord>> {
    let count = u32::from_le_bytes(take(r)?) as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = u32::from_le_bytes(take(r)?) as usize;
        let mut id = Vec::new();
        r.by_ref().take(len as u64).read_to_end(&mut id)?;
        if id.len() != len {
            return Err(io::ErrorKind::UnexpectedEof.into());
        }
        let recording_id = String::from_utf8(id).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        let start = f64::from_le_bytes(take(r)?);
        let duration = f64::from_le_bytes(take(r)?);
        let dim = u32::from_le_bytes(take(r)?) as usize;
        let vector = (0..dim).map(|_| take(r).map(f32::from_le_bytes)).collect::<io::Result<_>>()?;
        out.push(EmbeddingRecord { recording_id, start, duration, vector });
    }
    Ok(out)
}
