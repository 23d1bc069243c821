//! Checkpoint serialization.
//!
//! Layout: magic `FPRB1`, u32 length + JSON header (config and step
//! counter), u32 tensor count, then per tensor: u32 name length, name
//! bytes, u32 ndim, u64 dims, and the row-major data as little-endian f32.
//! Everything multi-byte is little-endian. Tensors are written in the
//! model's canonical walk order, and the loader insists every expected
//! tensor shows up exactly once with the right shape.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{ModelConfig, ModelState, TensorMut, TensorRef};

const MAGIC: &[u8; 5] = b"FPRB1";

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    step: u64,
}

pub fn save_model(state: &ModelState<f32>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    let header = serde_json::to_vec(&Header {
        config: state.config.clone(),
        step: state.step,
    })?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;

    let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    state.for_each_tensor(|name, t| match t {
        TensorRef::M(m) => tensors.push((
            name,
            vec![m.nrows(), m.ncols()],
            m.iter().copied().collect(),
        )),
        TensorRef::V(v) => tensors.push((name, vec![v.len()], v.to_vec())),
    });
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, dims, data) in &tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(dims.len() as u32).to_le_bytes())?;
        for &d in dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CoreError::BadCheckpoint("file truncated".into()));
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
}

pub fn load_model(path: &Path) -> Result<ModelState<f32>> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(5)? != MAGIC {
        return Err(CoreError::BadCheckpoint("bad magic bytes".into()));
    }
    let hlen = cur.u32()? as usize;
    let header: Header = serde_json::from_slice(cur.take(hlen)?)?;
    header.config.validate()?;

    let n_tensors = cur.u32()? as usize;
    let mut tensors: HashMap<String, (Vec<usize>, Vec<f32>)> = HashMap::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let nlen = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(nlen)?)
            .map_err(|_| CoreError::BadCheckpoint("tensor name not utf-8".into()))?
            .to_string();
        let ndim = cur.u32()? as usize;
        if ndim == 0 || ndim > 2 {
            return Err(CoreError::BadCheckpoint(format!(
                "tensor {name} has unsupported rank {ndim}"
            )));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(cur.u64()? as usize);
        }
        let count: usize = dims.iter().product();
        let bytes = cur.take(count * 4)?;
        let mut data = Vec::with_capacity(count);
        for c in bytes.chunks_exact(4) {
            data.push(f32::from_le_bytes(c.try_into().unwrap()));
        }
        if tensors.insert(name.clone(), (dims, data)).is_some() {
            return Err(CoreError::BadCheckpoint(format!("duplicate tensor {name}")));
        }
    }
    if cur.pos != buf.len() {
        return Err(CoreError::BadCheckpoint("trailing bytes".into()));
    }

    let mut state = ModelState::<f32>::init(header.config)?;
    state.step = header.step;
    let mut missing = Vec::new();
    state.for_each_tensor_mut(|name, t| match tensors.remove(name) {
        None => missing.push(name.to_string()),
        Some((dims, data)) => match t {
            TensorMut::M(m) => {
                if dims == [m.nrows(), m.ncols()] {
                    m.iter_mut().zip(data).for_each(|(dst, v)| *dst = v);
                } else {
                    missing.push(format!("{name} (shape {dims:?})"));
                }
            }
            TensorMut::V(v) => {
                if dims == [v.len()] {
                    v.iter_mut().zip(data).for_each(|(dst, val)| *dst = val);
                } else {
                    missing.push(format!("{name} (shape {dims:?})"));
                }
            }
        },
    });
    if !missing.is_empty() {
        return Err(CoreError::BadCheckpoint(format!(
            "missing or misshapen tensors: {}",
            missing.join(", ")
        )));
    }
    if !tensors.is_empty() {
        let extra: Vec<_> = tensors.keys().cloned().collect();
        return Err(CoreError::BadCheckpoint(format!(
            "unexpected tensors: {}",
            extra.join(", ")
        )));
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EmbeddingMode, ModelConfig};

    fn state() -> ModelState<f32> {
        ModelState::init(ModelConfig {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 12,
            vocab_size: 11,
            n_numbers: 9,
            max_seq_len: 6,
            embedding_mode: EmbeddingMode::InjectedFrozen,
            seed: 42,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut s = state();
        s.step = 77;
        save_model(&s, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.step, 77);
        assert_eq!(loaded.config, s.config);
        for (a, b) in s.flat().iter().zip(loaded.flat().iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_model(&state(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let bad = dir.path().join("bad.ckpt");
        let mut corrupted = bytes.clone();
        corrupted[0] = b'X';
        std::fs::write(&bad, &corrupted).unwrap();
        assert!(matches!(load_model(&bad), Err(CoreError::BadCheckpoint(_))));

        let cut = dir.path().join("cut.ckpt");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_model(&cut), Err(CoreError::BadCheckpoint(_))));

        let long = dir.path().join("long.ckpt");
        let mut extended = bytes;
        extended.push(0);
        std::fs::write(&long, &extended).unwrap();
        assert!(matches!(load_model(&long), Err(CoreError::BadCheckpoint(_))));
    }
}
