//! STEN: the raw tensor file format used by dataset rasters and checkpoints.
//!
//! Layout: magic `SMAL`, u8 version (1), u8 dtype (0 = f32, 1 = f64),
//! u32 rank, u32 dims, then the row-major payload. All integers and floats
//! are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::NumericsError;

const MAGIC: &[u8; 4] = b"SMAL";
const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum StenPayload {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl StenPayload {
    pub fn len(&self) -> usize {
        match self {
            StenPayload::F32(v) => v.len(),
            StenPayload::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Payload as f32, converting if stored as f64.
    pub fn into_f32(self) -> Vec<f32> {
        match self {
            StenPayload::F32(v) => v,
            StenPayload::F64(v) => v.into_iter().map(|x| x as f32).collect(),
        }
    }

    pub fn into_f64(self) -> Vec<f64> {
        match self {
            StenPayload::F32(v) => v.into_iter().map(|x| x as f64).collect(),
            StenPayload::F64(v) => v,
        }
    }
}

fn header(dtype: u8, shape: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + 4 * shape.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(dtype);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out
}

pub fn write_sten_f32(path: &Path, shape: &[usize], data: &[f32]) -> Result<(), NumericsError> {
    let numel: usize = shape.iter().product();
    if numel != data.len() {
        return Err(NumericsError::Sten(format!(
            "shape {:?} implies {} values, got {}",
            shape,
            numel,
            data.len()
        )));
    }
    let mut bytes = header(0, shape);
    bytes.reserve(4 * data.len());
    for &v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn write_sten_f64(path: &Path, shape: &[usize], data: &[f64]) -> Result<(), NumericsError> {
    let numel: usize = shape.iter().product();
    if numel != data.len() {
        return Err(NumericsError::Sten(format!(
            "shape {:?} implies {} values, got {}",
            shape,
            numel,
            data.len()
        )));
    }
    let mut bytes = header(1, shape);
    bytes.reserve(8 * data.len());
    for &v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_sten(path: &Path) -> Result<(Vec<usize>, StenPayload), NumericsError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| NumericsError::Sten(format!("{}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    let fail = |msg: &str| NumericsError::Sten(format!("{}: {msg}", path.display()));
    if bytes.len() < 10 {
        return Err(fail("truncated header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail("bad magic"));
    }
    if bytes[4] != VERSION {
        return Err(fail(&format!("unsupported version {}", bytes[4])));
    }
    let dtype = bytes[5];
    let rank = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    if bytes.len() < 10 + 4 * rank {
        return Err(fail("truncated dims"));
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let off = 10 + 4 * i;
        shape.push(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize);
    }
    let numel: usize = shape.iter().product();
    let payload = &bytes[10 + 4 * rank..];
    match dtype {
        0 => {
            if payload.len() != 4 * numel {
                return Err(fail(&format!(
                    "payload {} bytes, expected {} for shape {shape:?}",
                    payload.len(),
                    4 * numel
                )));
            }
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok((shape, StenPayload::F32(data)))
        }
        1 => {
            if payload.len() != 8 * numel {
                return Err(fail(&format!(
                    "payload {} bytes, expected {} for shape {shape:?}",
                    payload.len(),
                    8 * numel
                )));
            }
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok((shape, StenPayload::F64(data)))
        }
        other => Err(fail(&format!("unknown dtype {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_round_trip_is_bit_exact() {
        let dir = std::env::temp_dir().join("sten_test_f32");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.sten");
        let data: Vec<f32> = (0..24).map(|i| (i as f32).sin()).collect();
        write_sten_f32(&path, &[2, 3, 4], &data).unwrap();
        let (shape, payload) = read_sten(&path).unwrap();
        assert_eq!(shape, vec![2, 3, 4]);
        match payload {
            StenPayload::F32(v) => assert_eq!(v, data),
            _ => panic!("wrong dtype"),
        }
    }

    #[test]
    fn f64_round_trip() {
        let dir = std::env::temp_dir().join("sten_test_f64");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.sten");
        let data = vec![1.0f64 / 3.0, -2.5e-300, 7.0];
        write_sten_f64(&path, &[3], &data).unwrap();
        let (shape, payload) = read_sten(&path).unwrap();
        assert_eq!(shape, vec![3]);
        assert_eq!(payload, StenPayload::F64(data));
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = std::env::temp_dir().join("sten_test_bad");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.sten");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x00\x00").unwrap();
        let err = read_sten(&path).unwrap_err().to_string();
        assert!(err.contains("bad magic"), "{err}");
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = std::env::temp_dir().join("sten_test_trunc");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trunc.sten");
        let data: Vec<f32> = vec![1.0, 2.0, 3.0, 4.0];
        write_sten_f32(&path, &[4], &data).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_sten(&path).is_err());
    }
}
