//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//! magic `RCPEDIT\0`, u32 version, u32+bytes config JSON, u32+bytes metadata
//! JSON, u32 parameter count, then per parameter: u32+bytes name, u32 rank,
//! u64 per dimension, f64 per value.

use std::fs;
use std::path::Path;

use super::tensor::{ModelConfig, ParameterStore, TensorValue};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RCPEDIT\0";
const VERSION: u32 = 1;

pub fn to_bytes(store: &ParameterStore, metadata: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(store.num_values() * 8 + 1024);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let config = serde_json::to_string(&store.config).expect("config serializes");
    put_str(&mut out, &config);
    put_str(&mut out, metadata);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        put_str(&mut out, name);
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in &t.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<(ParameterStore, String)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let config: ModelConfig =
        serde_json::from_str(&r.string()?).map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
    let metadata = r.string()?;
    let n = r.u32()?;
    let mut store = ParameterStore::new(config);
    for _ in 0..n {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let count: usize = shape.iter().product();
        let bytes = r.take(count.checked_mul(8).ok_or_else(|| Error::Checkpoint("bad shape".into()))?)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        store.insert(name, TensorValue::new(shape, data)?)?;
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok((store, metadata))
}

pub fn save(path: &Path, store: &ParameterStore, metadata: &str) -> Result<()> {
    fs::write(path, to_bytes(store, metadata)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(ParameterStore, String)> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn sample_store() -> ParameterStore {
        let mut store = ParameterStore::new(ModelConfig::desk());
        let mut rng = stream(5, Stream::Init);
        store.add_normal("b.weight", vec![3, 2], 1.0, &mut rng).unwrap();
        store.add_zeros("a.bias", vec![2]).unwrap();
        store.insert("s", TensorValue::new(vec![], vec![f64::MIN_POSITIVE]).unwrap()).unwrap();
        store
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let store = sample_store();
        let p = dir.path().join("m.ckpt");
        save(&p, &store, "{\"k\":1}").unwrap();
        let (loaded, meta) = load(&p).unwrap();
        assert_eq!(meta, "{\"k\":1}");
        assert_eq!(loaded, store);
        let q = dir.path().join("n.ckpt");
        save(&q, &loaded, &meta).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&q).unwrap());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = to_bytes(&sample_store(), "");
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
    }
}
