//! Binary tensor checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"FKGECKPT"
//! version  u32
//! count    u64
//! count x { name_len u32, name utf-8, frozen u8, rows u64, cols u64, rows*cols f64 }
//! ```
//!
//! A text manifest with one `name<TAB>rows<TAB>cols<TAB>frozen` line per tensor
//! is written next to the checkpoint with the extension `manifest`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{Matrix, ParamStore};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FKGECKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub frozen: bool,
    pub value: Matrix,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest")
}

pub fn manifest(store: &ParamStore) -> String {
    let mut out = String::new();
    for p in store.iter() {
        let (r, c) = p.value().shape();
        out.push_str(&format!("{}\t{r}\t{c}\t{}\n", p.name(), p.is_frozen()));
    }
    out
}

pub fn write_checkpoint(path: &Path, store: &ParamStore) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for p in store.iter() {
        let name = p.name().as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[p.is_frozen() as u8])?;
        let (r, c) = p.value().shape();
        w.write_all(&(r as u64).to_le_bytes())?;
        w.write_all(&(c as u64).to_le_bytes())?;
        for x in p.value().as_slice() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    std::fs::write(manifest_path(path), manifest(store))?;
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<TensorRecord>> {
    let mut r = BufReader::new(File::open(path)?);
    if &read_exact::<8>(&mut r)? != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(read_exact(&mut r)?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = u64::from_le_bytes(read_exact(&mut r)?);
    let mut out = Vec::new();
    for _ in 0..count {
        let len = u32::from_le_bytes(read_exact(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated tensor name: {e}")))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?;
        let frozen = match read_exact::<1>(&mut r)?[0] {
            0 => false,
            1 => true,
            b => {
                return Err(Error::Checkpoint(format!(
                    "bad frozen flag {b} for `{name}`"
                )))
            }
        };
        let rows = u64::from_le_bytes(read_exact(&mut r)?) as usize;
        let cols = u64::from_le_bytes(read_exact(&mut r)?) as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint(format!("shape overflow for `{name}`")))?;
        let mut data = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            data.push(f64::from_le_bytes(read_exact(&mut r)?));
        }
        out.push(TensorRecord {
            name,
            frozen,
            value: Matrix::from_vec(rows, cols, data)?,
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok(out)
}

/// Copies checkpoint values into an already built store. Names, shapes and
/// frozen flags must match one to one.
pub fn restore(store: &mut ParamStore, records: &[TensorRecord]) -> Result<()> {
    if records.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, model has {}",
            records.len(),
            store.len()
        )));
    }
    for rec in records {
        let id = store
            .by_name(&rec.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor `{}`", rec.name)))?;
        let param = store.get_mut(id);
        if param.value().shape() != rec.value.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` has shape {:?}, model expects {:?}",
                rec.name,
                rec.value.shape(),
                param.value().shape()
            )));
        }
        if param.is_frozen() != rec.frozen {
            return Err(Error::Checkpoint(format!(
                "frozen flag mismatch for `{}`",
                rec.name
            )));
        }
        *param.value_mut() = rec.value.clone();
    }
    Ok(())
}
