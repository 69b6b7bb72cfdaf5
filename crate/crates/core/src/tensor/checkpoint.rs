//! Single-file checkpoint format.
//!
//! Layout: magic + version, a UTF-8 metadata blob (the resolved run
//! configuration), a manifest of named parameters (name, dtype, shape), then
//! the raw little-endian parameter data in manifest order. Optimizer state is
//! stored in the same manifest under `adam.*` names. Writes are atomic
//! (temp file + rename).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"CLRN";
const VERSION: u32 = 1;

pub struct CheckpointEntry {
    pub name: String,
    pub dtype: String,
    pub rows: usize,
    pub cols: usize,
    raw: Vec<u8>,
}

impl CheckpointEntry {
    /// Decode the raw payload into scalars of type `S`. Exact (bitwise) when
    /// the stored dtype matches `S`; converted through f64 otherwise.
    pub fn to_vec<S: Scalar>(&self) -> Result<Vec<S>> {
        let n = self.rows * self.cols;
        match self.dtype.as_str() {
            "f32" => {
                let mut out = Vec::with_capacity(n);
                for chunk in self.raw.chunks_exact(4) {
                    let v = f32::from_le_bytes(chunk.try_into().unwrap());
                    out.push(if S::DTYPE == "f32" {
                        S::from_le_slice(chunk)
                    } else {
                        S::of_f64(v as f64)
                    });
                }
                Ok(out)
            }
            "f64" => {
                let mut out = Vec::with_capacity(n);
                for chunk in self.raw.chunks_exact(8) {
                    let v = f64::from_le_bytes(chunk.try_into().unwrap());
                    out.push(if S::DTYPE == "f64" {
                        S::from_le_slice(chunk)
                    } else {
                        S::of_f64(v)
                    });
                }
                Ok(out)
            }
            other => Err(Error::invalid_input(format!("unknown dtype {other}"))),
        }
    }
}

pub struct Checkpoint {
    pub meta: String,
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::invalid_input("truncated checkpoint"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::invalid_input("bad utf-8 in checkpoint"))
    }
}

/// Write named tensors (and metadata) to `path` atomically.
pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    meta: &str,
    entries: &[(String, [usize; 2], Vec<S>)],
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_str(&mut buf, meta);
    put_u64(&mut buf, entries.len() as u64);
    for (name, shape, data) in entries {
        assert_eq!(data.len(), shape[0] * shape[1], "entry shape mismatch: {name}");
        put_str(&mut buf, name);
        put_str(&mut buf, S::DTYPE);
        put_u64(&mut buf, shape[0] as u64);
        put_u64(&mut buf, shape[1] as u64);
    }
    for (_, _, data) in entries {
        for &v in data {
            v.to_le_bytes(&mut buf);
        }
    }

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::invalid_input("not a checkpoint file"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::invalid_input(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let meta = r.str()?;
    let count = r.u64()? as usize;
    let mut headers = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.str()?;
        let dtype = r.str()?;
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        headers.push((name, dtype, rows, cols));
    }
    let mut entries = Vec::with_capacity(count);
    for (name, dtype, rows, cols) in headers {
        let width = match dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(Error::invalid_input(format!("unknown dtype {other}"))),
        };
        let raw = r.take(rows * cols * width)?.to_vec();
        entries.push(CheckpointEntry {
            name,
            dtype,
            rows,
            cols,
            raw,
        });
    }
    Ok(Checkpoint { meta, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise_for_matching_dtype() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let entries = vec![
            ("w".to_string(), [2, 2], vec![1.5f32, -2.25, 0.1, 1e-8]),
            ("b".to_string(), [1, 2], vec![0.0f32, 3.75]),
        ];
        save_checkpoint(&path, "mode = test", &entries).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.meta, "mode = test");
        assert_eq!(ck.entries.len(), 2);
        let w: Vec<f32> = ck.get("w").unwrap().to_vec().unwrap();
        assert_eq!(w.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   entries[0].2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        // no stray temp file left behind
        assert!(!dir.path().join("model.tmp").exists());
    }

    #[test]
    fn cross_dtype_load_converts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, "", &[("w".to_string(), [1, 2], vec![1.5f64, -0.5])]).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        let w: Vec<f32> = ck.get("w").unwrap().to_vec().unwrap();
        assert_eq!(w, vec![1.5f32, -0.5]);
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
