//! Named-tensor checkpoints.
//!
//! Layout: a line `FLOATERCKPT <version> <header bytes>`, a TOML header of
//! that many bytes holding the model config, then one record per tensor:
//! name length (u32), UTF-8 name, rank (u32), dims (u64 each), values
//! (f64 each). All integers and floats are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderModel, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "FLOATERCKPT";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub tensors: Vec<(String, Tensor)>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tensors: usize,
    config: ModelConfig,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Parse("checkpoint is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = toml::to_string(&Header {
            tensors: self.tensors.len(),
            config: self.config.clone(),
        })
        .map_err(|e| Error::Parse(format!("cannot serialize checkpoint header: {e}")))?;
        let mut out = format!("{MAGIC} {} {}\n", self.version, header.len()).into_bytes();
        out.extend_from_slice(header.as_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let nl = buf
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Parse("missing checkpoint preamble".into()))?;
        let preamble = std::str::from_utf8(&buf[..nl])
            .map_err(|_| Error::Parse("checkpoint preamble is not UTF-8".into()))?;
        let parts: Vec<&str> = preamble.split(' ').collect();
        if parts.len() != 3 || parts[0] != MAGIC {
            return Err(Error::Parse("not a checkpoint file".into()));
        }
        let version: u32 = parts[1]
            .parse()
            .map_err(|_| Error::Parse(format!("bad checkpoint version {:?}", parts[1])))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
        }
        let hlen: usize = parts[2]
            .parse()
            .map_err(|_| Error::Parse(format!("bad header length {:?}", parts[2])))?;
        let mut r = Reader { buf, pos: nl + 1 };
        let htext = std::str::from_utf8(r.take(hlen)?)
            .map_err(|_| Error::Parse("checkpoint header is not UTF-8".into()))?;
        let header: Header =
            toml::from_str(htext).map_err(|e| Error::Parse(format!("checkpoint header: {e}")))?;
        let mut tensors = Vec::with_capacity(header.tensors);
        for _ in 0..header.tensors {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec())
                .map_err(|_| Error::Parse("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::Parse("tensor too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        if r.pos != buf.len() {
            return Err(Error::Parse("trailing bytes after the last tensor".into()));
        }
        Ok(Checkpoint {
            version,
            config: header.config,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

impl EncoderModel {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.cfg.clone(),
            tensors: self
                .store
                .iter()
                .map(|(_, name, t, _)| (name.to_string(), t.clone().with_grad(false)))
                .collect(),
        }
    }

    /// Rebuilds a model from its config and overwrites every tensor.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut m = EncoderModel::new(&ck.config, 0)?;
        let mut missing = Vec::new();
        let ids: Vec<_> = m.store.ids().collect();
        for id in ids {
            let name = m.store.name(id).to_string();
            match ck.get(&name) {
                Some(t) if t.shape() == m.store.get(id).shape() => m.store.set(id, t)?,
                _ => missing.push(name),
            }
        }
        if !missing.is_empty() || ck.tensors.len() != m.store.len() {
            missing.extend(
                ck.tensors
                    .iter()
                    .filter(|(n, _)| m.store.id(n).is_none())
                    .map(|(n, _)| n.clone()),
            );
            return Err(Error::Surgery(missing));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{EncoderConfig, EncoderKind, Injection};

    fn model(kind: EncoderKind) -> EncoderModel {
        let cfg = ModelConfig {
            vocab: 6,
            out_vocab: 3,
            d_model: 4,
            d_ff: 8,
            blocks: 2,
            heads: 2,
            embed_std: 1.0,
            encoder: EncoderConfig::new(kind, Injection::All),
        };
        EncoderModel::new(&cfg, 21).unwrap()
    }

    #[test]
    fn bytes_roundtrip_bitwise() {
        for kind in EncoderKind::ALL {
            let m = model(kind);
            let ck = m.checkpoint();
            let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
            assert_eq!(back.config, ck.config);
            for ((na, a), (nb, b)) in ck.tensors.iter().zip(&back.tensors) {
                assert_eq!(na, nb);
                assert!(a.bitwise_eq(b));
            }
            let rebuilt = EncoderModel::from_checkpoint(&back).unwrap();
            assert!(m.encode(&[1, 2, 3]).unwrap().bitwise_eq(&rebuilt.encode(&[1, 2, 3]).unwrap()));
        }
    }

    #[test]
    fn file_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = model(EncoderKind::FloaterBias).checkpoint();
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        let bytes = ck.to_bytes().unwrap();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Parse(_))));
        assert!(matches!(Checkpoint::from_bytes(b"hello\n"), Err(Error::Parse(_))));
        assert!(matches!(
            Checkpoint::load(dir.path().join("absent")),
            Err(Error::Io { .. })
        ));
    }
}
