//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "SKFP"
//! version    u32      1
//! header_len u32      length of the UTF-8 header that follows (may be 0)
//! header     bytes
//! count      u32      number of parameter records
//! record*    name_len u32, name bytes, ndim u32, dims u64 × ndim,
//!            values f64 × product(dims)
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a save/load round trip is
//! bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SKFP";
const VERSION: u32 = 1;

pub fn write_params<W: Write>(mut w: W, header: &str, store: &ParamStore) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, t) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.ndim() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn read_params<R: Read>(mut r: R) -> Result<(String, ParamStore)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
    if &magic != MAGIC {
        return Err(bad("not a parameter checkpoint"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let header = read_string(&mut r)?;
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name = read_string(&mut r)?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut buf).map_err(|_| bad("truncated values"))?;
            data.push(f64::from_le_bytes(buf));
        }
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        store.add(name, t);
    }
    Ok((header, store))
}

pub fn save_params(path: &Path, header: &str, store: &ParamStore) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_params(BufWriter::new(f), header, store).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<(String, ParamStore)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_params(BufReader::new(f))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("truncated u32".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("truncated u64".into()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint("truncated string".into()))?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in prop::collection::vec(any::<f64>(), 1..40), header in ".{0,20}") {
            let mut store = ParamStore::new();
            let n = values.len();
            store.add("w", Tensor::new(vec![n], values.clone()).unwrap());
            store.add("b", Tensor::scalar(-0.0));
            let mut buf = Vec::new();
            write_params(&mut buf, &header, &store).unwrap();
            let (h, back) = read_params(&buf[..]).unwrap();
            prop_assert_eq!(h, header);
            prop_assert_eq!(back.len(), 2);
            for (a, b) in store.tensors().iter().zip(back.tensors()) {
                prop_assert_eq!(a.shape(), b.shape());
                for (x, y) in a.data().iter().zip(b.data()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_params(&b"nope"[..]).is_err());
        assert!(read_params(&b"SKFP\x01\x00\x00\x00"[..]).is_err());
    }
}
