//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! | field        | type                         |
//! |--------------|------------------------------|
//! | magic        | `b"FTNCKPT\0"`               |
//! | version      | u32                          |
//! | spec length  | u64                          |
//! | spec         | UTF-8 JSON [`NetworkSpec`]   |
//! | value count  | u64                          |
//! | values       | f32 × count                  |
//!
//! Values are every parameter tensor in layer order (a shared pooling unit
//! once, where it first appears), then each batch-norm layer's running mean
//! and running variance.

use std::io::Write;
use std::path::Path;

use crate::real::Real;

use super::{Model, NetworkSpec, NnError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FTNCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

fn values<T: Real>(model: &Model<T>) -> Vec<f32> {
    let mut out: Vec<f32> = model
        .params()
        .iter()
        .flat_map(|p| p.value.data().iter().map(|v| v.as_f64() as f32))
        .collect();
    for r in model.running_stats() {
        out.extend(r.mean.iter().chain(&r.var).map(|&v| v as f32));
    }
    out
}

pub fn to_bytes<T: Real>(model: &Model<T>) -> Vec<u8> {
    let spec = serde_json::to_vec(model.spec()).expect("spec serializes");
    let vals = values(model);
    let mut buf = Vec::with_capacity(32 + spec.len() + 4 * vals.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(spec.len() as u64).to_le_bytes());
    buf.extend_from_slice(&spec);
    buf.extend_from_slice(&(vals.len() as u64).to_le_bytes());
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            NnError::Checkpoint(format!("truncated reading {what} at byte offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes<T: Real>(buf: &[u8]) -> Result<Model<T>, NnError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let len = r.u64("spec length")? as usize;
    let spec_bytes = r.take(len, "spec")?;
    let spec: NetworkSpec = serde_json::from_slice(spec_bytes)?;
    let mut model = Model::<T>::build(&spec, 0)?;
    let count = r.u64("value count")? as usize;
    let expected = values(&model).len();
    if count != expected {
        return Err(NnError::Checkpoint(format!(
            "{count} stored values, the spec needs {expected}"
        )));
    }
    let raw = r.take(4 * count, "values")?;
    if r.pos != buf.len() {
        return Err(NnError::Checkpoint(format!(
            "{} trailing bytes at offset {}",
            buf.len() - r.pos,
            r.pos
        )));
    }
    let mut it = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    for p in model.params_mut() {
        for v in p.value.data_mut() {
            *v = T::lit(it.next().expect("counted") as f64);
        }
    }
    for s in model.running_stats_mut() {
        for v in s.mean.iter_mut().chain(s.var.iter_mut()) {
            *v = it.next().expect("counted") as f64;
        }
    }
    Ok(model)
}

pub fn write_checkpoint<T: Real>(model: &Model<T>, path: &Path) -> Result<(), NnError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&to_bytes(model))?;
    Ok(())
}

pub fn read_checkpoint<T: Real>(path: &Path) -> Result<Model<T>, NnError> {
    from_bytes(&std::fs::read(path)?)
}
