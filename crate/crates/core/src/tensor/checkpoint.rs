//! Flat parameter checkpoints.
//!
//! Layout (little-endian): `"GTEMCKPT"` | version `u8` | record count `u32`,
//! then per parameter in name order: name length `u16` | UTF-8 name |
//! rank `u8` | dims `u32 x rank` | values `f64 x product(dims)`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GTEMCKPT";
const VERSION: u8 = 1;

pub fn write_checkpoint<W: Write>(store: &ParamStore, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&[VERSION])?;
    out.write_all(&(store.len() as u32).to_le_bytes())?;
    for p in store.iter_sorted() {
        let name = p.name.as_bytes();
        out.write_all(&(name.len() as u16).to_le_bytes())?;
        out.write_all(name)?;
        out.write_all(&[p.tensor.rank() as u8])?;
        for &d in p.tensor.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in p.tensor.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    let (head, tail) = buf.split_at(n);
    *buf = tail;
    Ok(head)
}

/// Parse every record of a checkpoint.
pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut buf = bytes.as_slice();
    if take(&mut buf, 8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = take(&mut buf, 1)?[0];
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(take(&mut buf, 4)?.try_into().unwrap()) as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u16::from_le_bytes(take(&mut buf, 2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut buf, len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = take(&mut buf, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(&mut buf, 4)?.try_into().unwrap()) as usize);
        }
        let n: usize = shape.iter().product();
        let raw = take(&mut buf, n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push((name, Tensor::new(shape, data)?));
    }
    if !buf.is_empty() {
        return Err(Error::Checkpoint("trailing bytes after last record".into()));
    }
    Ok(records)
}

pub fn save_checkpoint(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::new();
    write_checkpoint(store, &mut bytes)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Overwrite `store` with the checkpoint at `path`. Names and shapes must
/// match exactly.
pub fn load_checkpoint(store: &mut ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let records = read_checkpoint(fs::File::open(path)?)?;
    if records.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} parameters, model has {}",
            records.len(),
            store.len()
        )));
    }
    for (name, t) in records {
        let id = store
            .id(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        let p = store.get_mut(id);
        if p.tensor.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "{name}: shape {:?} vs {:?}",
                t.shape(),
                p.tensor.shape()
            )));
        }
        p.tensor = t;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("z.bias", Tensor::new(vec![2], vec![1.5, -2.0]).unwrap(), true)
            .unwrap();
        s.insert("a.weight", Tensor::from_fn(&[2, 3], |i| i as f64 * 0.1), true)
            .unwrap();
        s
    }

    #[test]
    fn records_are_name_ordered_and_roundtrip() {
        let s = store();
        let mut bytes = Vec::new();
        write_checkpoint(&s, &mut bytes).unwrap();
        assert_eq!(&bytes[..8], b"GTEMCKPT");
        assert_eq!(bytes[8], 1);
        let recs = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(recs[0].0, "a.weight");
        assert_eq!(recs[1].0, "z.bias");
        assert_eq!(&recs[1].1, s.by_name("z.bias").map(|p| &p.tensor).unwrap());
    }

    #[test]
    fn truncation_is_an_error() {
        let mut bytes = Vec::new();
        write_checkpoint(&store(), &mut bytes).unwrap();
        bytes.pop();
        assert!(read_checkpoint(bytes.as_slice()).is_err());
    }
}
