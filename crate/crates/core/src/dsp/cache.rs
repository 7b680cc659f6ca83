//! `DKF1` feature cache: magic, `u32 T`, `u32 d`, then `T*d` little-endian
//! `f64` values in row-major order.

use std::io::{Read, Write};

use super::FeatureError;
use crate::codec::{get_array, get_f64, get_u32, len_u32, put_f64, put_u32};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub const FEATURE_CACHE_MAGIC: &[u8; 4] = b"DKF1";

pub fn write_feature_cache<S: Scalar, W: Write>(w: &mut W, frames: &Matrix<S>) -> Result<(), FeatureError> {
    w.write_all(FEATURE_CACHE_MAGIC)?;
    put_u32(w, len_u32(frames.rows())?)?;
    put_u32(w, len_u32(frames.cols())?)?;
    for &v in frames.as_slice() {
        put_f64(w, v.to_f64_lossy())?;
    }
    Ok(())
}

pub fn read_feature_cache<S: Scalar, R: Read>(r: &mut R) -> Result<Matrix<S>, FeatureError> {
    let magic: [u8; 4] = get_array(r)?;
    if &magic != FEATURE_CACHE_MAGIC {
        return Err(FeatureError::Cache(format!("bad magic {magic:?}")));
    }
    let rows = get_u32(r)? as usize;
    let cols = get_u32(r)? as usize;
    let n = rows
        .checked_mul(cols)
        .filter(|&n| n <= (1 << 32))
        .ok_or_else(|| FeatureError::Cache(format!("implausible shape {rows}x{cols}")))?;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(S::lit(get_f64(r)?));
    }
    Ok(Matrix::from_vec(rows, cols, data).expect("length checked"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_bit_exact() {
        let m = Matrix::<f64>::from_vec(2, 1, vec![1.0, -0.5]).unwrap();
        let mut buf = Vec::new();
        write_feature_cache(&mut buf, &m).unwrap();
        let mut expect = b"DKF1".to_vec();
        expect.extend(2u32.to_le_bytes());
        expect.extend(1u32.to_le_bytes());
        expect.extend(1.0f64.to_le_bytes());
        expect.extend((-0.5f64).to_le_bytes());
        assert_eq!(buf, expect);
        let back: Matrix<f64> = read_feature_cache(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_feature_cache::<f64, _>(&mut &b"DKF0\0\0\0\0\0\0\0\0"[..]).is_err());
        let mut buf = Vec::new();
        write_feature_cache(&mut buf, &Matrix::<f64>::zeros(3, 3)).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(read_feature_cache::<f64, _>(&mut buf.as_slice()).is_err());
    }
}
