//! `DKC1` checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DKC1" | u32 version | u32 len + config JSON
//!        | u32 count | count × entry
//!        | u8 has_state [ u64 iteration | u32 count | count × entry
//!                       | 32-byte rng seed | u64 rng stream | u128 rng word position
//!                       | u32 count | count × f64 loss ]
//!        | u32 CRC32 of every preceding byte
//! entry = u32 len + name | u32 rank | rank × u32 extent | product × f64
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::codec::{get_array, get_f64, get_str, get_u32, get_u64, len_u32, put_f64, put_str, put_u32, put_u64};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DKC1";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_NAME: usize = 4096;
const MAX_CONFIG: usize = 1 << 20;
const MAX_VALUES: usize = 1 << 30;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint is missing parameter {0}")]
    MissingEntry(String),
    #[error("parameter {name}: checkpoint shape {found:?}, model expects {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Serialized ChaCha stream position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRecord {
    pub iteration: u64,
    pub moments: Vec<Entry>,
    pub rng: RngState,
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_json: String,
    pub params: Vec<Entry>,
    pub training: Option<TrainingRecord>,
}

/// Forwards writes while updating a running CRC32.
struct CrcWriter<W> {
    inner: W,
    hasher: crc32fast::Hasher,
}

impl<W: Write> Write for CrcWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

fn put_entries<W: Write>(w: &mut W, entries: &[Entry]) -> io::Result<()> {
    put_u32(w, len_u32(entries.len())?)?;
    for e in entries {
        put_str(w, &e.name)?;
        put_u32(w, len_u32(e.shape.len())?)?;
        for &d in &e.shape {
            put_u32(w, len_u32(d)?)?;
        }
        for &v in &e.values {
            put_f64(w, v)?;
        }
    }
    Ok(())
}

fn get_entries<R: Read>(r: &mut R) -> Result<Vec<Entry>, CheckpointError> {
    let count = get_u32(r)? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name = get_str(r, MAX_NAME)?;
        let rank = get_u32(r)? as usize;
        if rank > 8 {
            return Err(CheckpointError::Malformed(format!("{name}: rank {rank}")));
        }
        let shape: Vec<usize> = (0..rank).map(|_| get_u32(r).map(|d| d as usize)).collect::<io::Result<_>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= MAX_VALUES)
            .ok_or_else(|| CheckpointError::Malformed(format!("{name}: implausible shape {shape:?}")))?;
        let values = (0..n).map(|_| get_f64(r)).collect::<io::Result<_>>()?;
        out.push(Entry { name, shape, values });
    }
    Ok(out)
}

impl Checkpoint {
    pub fn write<W: Write>(&self, w: W) -> Result<(), CheckpointError> {
        let mut cw = CrcWriter { inner: w, hasher: crc32fast::Hasher::new() };
        cw.write_all(CHECKPOINT_MAGIC)?;
        put_u32(&mut cw, CHECKPOINT_VERSION)?;
        put_str(&mut cw, &self.config_json)?;
        put_entries(&mut cw, &self.params)?;
        match &self.training {
            None => cw.write_all(&[0])?,
            Some(t) => {
                cw.write_all(&[1])?;
                put_u64(&mut cw, t.iteration)?;
                put_entries(&mut cw, &t.moments)?;
                cw.write_all(&t.rng.seed)?;
                put_u64(&mut cw, t.rng.stream)?;
                cw.write_all(&t.rng.word_pos.to_le_bytes())?;
                put_u32(&mut cw, len_u32(t.losses.len())?)?;
                for &l in &t.losses {
                    put_f64(&mut cw, l)?;
                }
            }
        }
        let crc = cw.hasher.clone().finalize();
        put_u32(&mut cw.inner, crc)?;
        cw.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(buf)
    }

    /// Parses a complete checkpoint, verifying the trailing checksum first.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 4 {
            return Err(CheckpointError::Malformed("file too short".into()));
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("length checked");
        if &magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        if bytes.len() < 12 {
            return Err(CheckpointError::Malformed("file too short".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(CheckpointError::Checksum { stored, computed });
        }
        let mut r = &body[4..];
        let version = get_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let config_json = get_str(&mut r, MAX_CONFIG)?;
        let params = get_entries(&mut r)?;
        let [flag] = get_array::<_, 1>(&mut r)?;
        let training = match flag {
            0 => None,
            1 => {
                let iteration = get_u64(&mut r)?;
                let moments = get_entries(&mut r)?;
                let seed = get_array::<_, 32>(&mut r)?;
                let stream = get_u64(&mut r)?;
                let word_pos = u128::from_le_bytes(get_array::<_, 16>(&mut r)?);
                let n = get_u32(&mut r)? as usize;
                if n > MAX_VALUES {
                    return Err(CheckpointError::Malformed(format!("loss history length {n}")));
                }
                let losses = (0..n).map(|_| get_f64(&mut r)).collect::<io::Result<_>>()?;
                Some(TrainingRecord { iteration, moments, rng: RngState { seed, stream, word_pos }, losses })
            }
            other => return Err(CheckpointError::Malformed(format!("state flag {other}"))),
        };
        if !r.is_empty() {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", r.len())));
        }
        Ok(Self { config_json, params, training })
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn entry(&self, name: &str) -> Option<&Entry> {
        self.params.iter().find(|e| e.name == name)
    }
}
