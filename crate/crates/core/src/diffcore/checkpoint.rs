//! Weight checkpoint files.
//!
//! ```text
//! magic     8 bytes   "PBCKPT\0\0"
//! version   u32 LE
//! dtype     u32 LE    4 = f32, 8 = f64
//! meta_len  u32 LE    followed by meta_len bytes of UTF-8 (model description)
//! count     u32 LE    number of tensors, then for each:
//!   name_len u32 LE, name bytes, ndim u32 LE (= 2), dims u64 LE × ndim,
//!   data: dtype-sized little-endian floats, row-major
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::params::ParamStore;
use super::Scalar;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PBCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint<F: Scalar>(meta: &str, store: &ParamStore<F>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&u32::from(F::BYTES).to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, name, value) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(value.nrows() as u64).to_le_bytes());
        out.extend_from_slice(&(value.ncols() as u64).to_le_bytes());
        for &v in value.iter() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "checkpoint is truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, len: usize) -> Result<String> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::format(self.path, "invalid UTF-8"))
    }
}

pub fn decode_checkpoint<F: Scalar>(bytes: &[u8], path: &Path) -> Result<(String, ParamStore<F>)> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a checkpoint file"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let dtype = r.u32()?;
    if dtype != u32::from(F::BYTES) {
        return Err(Error::format(path, format!("checkpoint holds {dtype}-byte floats, expected {}", F::BYTES)));
    }
    let meta_len = r.u32()? as usize;
    let meta = r.string(meta_len)?;
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = r.string(name_len)?;
        let ndim = r.u32()?;
        if ndim != 2 {
            return Err(Error::format(path, format!("tensor '{name}' has {ndim} dims, expected 2")));
        }
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::format(path, "tensor too large"))?;
        let raw = r.take(n * F::BYTES as usize)?;
        let data: Vec<F> = raw.chunks_exact(F::BYTES as usize).map(F::read_le).collect();
        let arr = Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::format(path, e.to_string()))?;
        store.add(name, arr)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last tensor"));
    }
    Ok((meta, store))
}

pub fn save_checkpoint<F: Scalar>(path: &Path, meta: &str, store: &ParamStore<F>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode_checkpoint(meta, store)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<(String, ParamStore<F>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            a in proptest::collection::vec(any::<f32>(), 6),
            b in proptest::collection::vec(any::<f64>(), 4),
        ) {
            let mut s32 = ParamStore::<f32>::new();
            s32.add("layer.0.w", Array2::from_shape_vec((2, 3), a).unwrap()).unwrap();
            let bytes = encode_checkpoint("{\"k\":1}", &s32);
            let (meta, back) = decode_checkpoint::<f32>(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(meta, "{\"k\":1}");
            let orig: Vec<u32> = s32.iter().flat_map(|(_, _, v)| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect();
            let got: Vec<u32> = back.iter().flat_map(|(_, _, v)| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect();
            prop_assert_eq!(orig, got);
            prop_assert_eq!(encode_checkpoint("{\"k\":1}", &back), bytes);

            let mut s64 = ParamStore::<f64>::new();
            s64.add("x", Array2::from_shape_vec((4, 1), b).unwrap()).unwrap();
            let bytes = encode_checkpoint("", &s64);
            let (_, back) = decode_checkpoint::<f64>(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(encode_checkpoint("", &back), bytes);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let mut s = ParamStore::<f32>::new();
        s.add("w", Array2::zeros((2, 2))).unwrap();
        let bytes = encode_checkpoint("", &s);
        let p = Path::new("mem");
        assert!(matches!(decode_checkpoint::<f32>(&bytes[..bytes.len() - 1], p), Err(Error::Format { .. })));
        assert!(decode_checkpoint::<f64>(&bytes, p).is_err());
        let mut wrong = bytes.clone();
        wrong[8] = 9;
        assert!(matches!(decode_checkpoint::<f32>(&wrong, p), Err(Error::Version { .. })));
        assert!(decode_checkpoint::<f32>(b"garbage!", p).is_err());
    }
}
