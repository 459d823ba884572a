//! Flat binary tensor files.
//!
//! Layout, all integers little-endian: the 4 magic bytes `FMNT`, a `u32`
//! rank, one `u32` per dimension, then the elements as `f32` in row-major
//! order. Values are stored as `f32` regardless of the in-memory element
//! type.

use std::path::Path;

use super::{Element, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FMNT";
const MAX_RANK: u32 = 8;

pub fn save_tensor<E: Element>(path: &Path, tensor: &Tensor<E>) -> Result<()> {
    let rank = tensor.rank();
    if rank > MAX_RANK as usize {
        return Err(Error::contract(format!(
            "tensor file: rank {} exceeds the supported maximum {}",
            rank, MAX_RANK
        )));
    }
    let mut bytes = Vec::with_capacity(4 + 4 + 4 * rank + 4 * tensor.numel());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(rank as u32).to_le_bytes());
    for &dim in tensor.shape() {
        let dim = u32::try_from(dim).map_err(|_| {
            Error::contract(format!("tensor file: dimension {} exceeds u32", dim))
        })?;
        bytes.extend_from_slice(&dim.to_le_bytes());
    }
    for &v in tensor.data() {
        bytes.extend_from_slice(&(v.f64() as f32).to_le_bytes());
    }
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))
}

fn take<'a>(bytes: &'a [u8], off: &mut usize, n: usize) -> Option<&'a [u8]> {
    let end = off.checked_add(n)?;
    let chunk = bytes.get(*off..end)?;
    *off = end;
    Some(chunk)
}

pub fn load_tensor<E: Element>(path: &Path) -> Result<Tensor<E>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |what: &str| Error::Parse(format!("tensor file {}: {}", path.display(), what));

    let mut off = 0usize;
    let magic = take(&bytes, &mut off, 4).ok_or_else(|| fail("missing magic"))?;
    if magic != MAGIC {
        return Err(fail("bad magic"));
    }
    let rank_bytes = take(&bytes, &mut off, 4).ok_or_else(|| fail("truncated rank"))?;
    let rank = u32::from_le_bytes(rank_bytes.try_into().unwrap());
    if rank > MAX_RANK {
        return Err(fail(&format!("rank {} exceeds the supported maximum", rank)));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut numel = 1usize;
    for _ in 0..rank {
        let dim_bytes = take(&bytes, &mut off, 4).ok_or_else(|| fail("truncated shape"))?;
        let dim = u32::from_le_bytes(dim_bytes.try_into().unwrap()) as usize;
        numel = numel
            .checked_mul(dim)
            .ok_or_else(|| fail("shape overflows"))?;
        shape.push(dim);
    }
    let payload_len = numel.checked_mul(4).ok_or_else(|| fail("shape overflows"))?;
    let payload =
        take(&bytes, &mut off, payload_len).ok_or_else(|| fail("truncated payload"))?;
    let mut data = Vec::with_capacity(numel);
    for chunk in payload.chunks_exact(4) {
        data.push(E::of(f32::from_le_bytes(chunk.try_into().unwrap()) as f64));
    }
    if off != bytes.len() {
        return Err(fail("trailing bytes"));
    }
    Tensor::new(&shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_shape_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.fmnt");
        let t = Tensor::<f32>::new(&[2, 3], vec![1.0, -2.5, 3.25, 0.0, 1e-7, 4096.0]).unwrap();
        save_tensor(&path, &t).unwrap();
        let back = load_tensor::<f32>(&path).unwrap();
        assert_eq!(back.shape(), &[2, 3]);
        assert_eq!(back.data(), t.data());
    }

    #[test]
    fn header_spells_out_magic_rank_and_dims() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.fmnt");
        let t = Tensor::<f32>::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        save_tensor(&path, &t).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"FMNT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 16 + 2 * 4);
        assert_eq!(
            f32::from_le_bytes(bytes[16..20].try_into().unwrap()),
            1.0f32
        );
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fmnt");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(
            load_tensor::<f32>(&path),
            Err(Error::Parse(_))
        ));

        let t = Tensor::<f32>::new(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        save_tensor(&path, &t).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_tensor::<f32>(&path),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn rejects_trailing_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("extra.fmnt");
        let t = Tensor::<f32>::new(&[1], vec![7.0]).unwrap();
        save_tensor(&path, &t).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_tensor::<f32>(&path),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = load_tensor::<f32>(Path::new("/nonexistent/t.fmnt")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert_eq!(err.exit_code(), 2);
    }
}
