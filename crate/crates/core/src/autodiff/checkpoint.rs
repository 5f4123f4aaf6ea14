//! Binary tensor checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SDPM"            4 bytes magic
//! version           u32
//! then, until end of stream, one record per tensor:
//!   name length     u32
//!   name            UTF-8 bytes
//!   rank            u32
//!   dims            rank × u64
//!   values          product(dims) × f64
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"SDPM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint has no tensor named `{0}`")]
    Missing(String),
    #[error("tensor `{name}` has shape {found:?} in checkpoint, model expects {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

pub fn write_tensors<'a, W, I>(mut w: W, tensors: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = (&'a str, &'a Tensor)>,
{
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads 4 bytes, distinguishing clean end-of-stream from a torn header.
fn read_record_start<R: Read>(r: &mut R) -> Result<Option<u32>, CheckpointError> {
    let mut b = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        let n = r.read(&mut b[got..])?;
        if n == 0 {
            return if got == 0 {
                Ok(None)
            } else {
                Err(CheckpointError::Corrupt("truncated record header".into()))
            };
        }
        got += n;
    }
    Ok(Some(u32::from_le_bytes(b)))
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let mut out = Vec::new();
    while let Some(name_len) = read_record_start(&mut r)? {
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| CheckpointError::Corrupt("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let dims = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<io::Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(dims, data)
            .map_err(|e| CheckpointError::Corrupt(format!("tensor `{name}`: {e}")))?;
        out.push((name, t));
    }
    Ok(out)
}

pub fn save_store(store: &ParamStore, path: &Path) -> Result<(), CheckpointError> {
    let w = BufWriter::new(File::create(path)?);
    write_tensors(w, store.iter().map(|(_, p)| (p.name.as_str(), &p.value)))?;
    Ok(())
}

/// Overwrites every parameter in `store` with the same-named checkpoint tensor.
pub fn load_into_store(
    store: &mut ParamStore,
    entries: &[(String, Tensor)],
) -> Result<(), CheckpointError> {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.get(id).name.clone();
        let t = entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CheckpointError::Missing(name.clone()))?;
        if t.shape() != store.value(id).shape() {
            return Err(CheckpointError::Shape {
                name,
                expected: store.value(id).shape().to_vec(),
                found: t.shape().to_vec(),
            });
        }
        *store.value_mut(id) = t.clone();
    }
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    read_tensors(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![1, 2], vec![1.5, -0.0]).unwrap();
        let mut buf = Vec::new();
        write_tensors(&mut buf, [("w", &t)]).unwrap();
        assert_eq!(&buf[..4], b"SDPM");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(buf[12], b'w');
        assert_eq!(&buf[13..17], &2u32.to_le_bytes());
        assert_eq!(buf.len(), 17 + 16 + 16);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(
            read_tensors(&b"NOPE\x01\0\0\0"[..]),
            Err(CheckpointError::BadMagic)
        ));
        let t = Tensor::scalar(3.0);
        let mut buf = Vec::new();
        write_tensors(&mut buf, [("s", &t)]).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_tensors(&buf[..]).is_err());
    }

    #[test]
    fn shape_mismatch_on_load() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(&[2, 2]), false);
        let entries = vec![("w".to_string(), Tensor::zeros(&[4]))];
        assert!(matches!(
            load_into_store(&mut store, &entries),
            Err(CheckpointError::Shape { .. })
        ));
    }

    proptest! {
        #[test]
        fn bit_exact_round_trip(
            tensors in prop::collection::vec(
                (prop::collection::vec(1usize..4, 0..4), any::<u64>()),
                0..5,
            )
        ) {
            let named: Vec<(String, Tensor)> = tensors
                .iter()
                .enumerate()
                .map(|(i, (shape, bits))| {
                    let n: usize = shape.iter().product();
                    // arbitrary bit patterns, including NaN payloads and signed zeros
                    let data = (0..n as u64)
                        .map(|k| f64::from_bits(bits.wrapping_mul(k + 1).rotate_left(k as u32)))
                        .collect();
                    (format!("t{i}/é"), Tensor::new(shape.clone(), data).unwrap())
                })
                .collect();
            let mut buf = Vec::new();
            write_tensors(&mut buf, named.iter().map(|(n, t)| (n.as_str(), t))).unwrap();
            let back = read_tensors(&buf[..]).unwrap();
            prop_assert_eq!(back.len(), named.len());
            for ((n1, t1), (n2, t2)) in named.iter().zip(&back) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(t1.shape(), t2.shape());
                let b1: Vec<u64> = t1.data().iter().map(|x| x.to_bits()).collect();
                let b2: Vec<u64> = t2.data().iter().map(|x| x.to_bits()).collect();
                prop_assert_eq!(b1, b2);
            }
        }
    }
}
