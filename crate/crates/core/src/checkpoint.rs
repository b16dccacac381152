//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "RESTCKPT" | u32 version
//! u32 len | config text ("key=value" lines)
//! u32 count | count × (u32 len | relation name)
//! u32 count | count × tensor
//! tensor = u32 len | name | u8 dtype | u32 ndim | ndim × u64 dim | payload
//! ```
//!
//! Optimizer moments are stored as tensors named `adam.m.<param>` and
//! `adam.v.<param>`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::kg::RelationVocab;
use crate::model::{ModelConfig, ModelParams};
use crate::trainer::AdamState;

pub const MAGIC: &[u8; 8] = b"RESTCKPT";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub relations: RelationVocab,
    pub epoch: usize,
    pub optimizer: AdamState,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(bad(format!("truncated at byte {}", self.pos))),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("string is not UTF-8"))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_str(out, name);
    out.push(DTYPE_F64);
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn get_tensor(r: &mut Reader) -> Result<(String, Tensor)> {
    let name = r.string()?;
    let dtype = r.u8()?;
    if dtype != DTYPE_F64 {
        return Err(bad(format!("tensor {name}: unsupported dtype tag {dtype}")));
    }
    let ndim = r.u32()? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(r.u64()? as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| bad(format!("tensor {name}: shape overflows")))?;
    let bytes = r.take(n.checked_mul(8).ok_or_else(|| bad("tensor too large"))?)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((name, Tensor::new(shape, data)?))
}

impl Checkpoint {
    pub fn new(params: ModelParams, relations: RelationVocab, epoch: usize, optimizer: AdamState) -> Self {
        Checkpoint {
            params,
            relations,
            epoch,
            optimizer,
        }
    }

    /// Fresh checkpoint with zero optimizer moments.
    pub fn from_params(params: ModelParams, relations: RelationVocab) -> Self {
        let optimizer = AdamState::new(params.tensors());
        Checkpoint::new(params, relations, 0, optimizer)
    }

    pub fn config(&self) -> &ModelConfig {
        self.params.config()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());

        let mut text = String::new();
        for (k, v) in self.params.config().to_pairs() {
            text.push_str(&format!("{k}={v}\n"));
        }
        text.push_str(&format!("relations={}\n", self.params.relations()));
        text.push_str(&format!("epoch={}\n", self.epoch));
        text.push_str(&format!("adam_step={}\n", self.optimizer.step));
        put_str(&mut out, &text);

        let names = self.relations.names();
        out.extend_from_slice(&(names.len() as u32).to_le_bytes());
        for n in names {
            put_str(&mut out, n);
        }

        let p = &self.params;
        out.extend_from_slice(&((3 * p.len()) as u32).to_le_bytes());
        for (name, t) in p.names().iter().zip(p.tensors()) {
            put_tensor(&mut out, name, t);
        }
        for (name, t) in p.names().iter().zip(&self.optimizer.first) {
            put_tensor(&mut out, &format!("adam.m.{name}"), t);
        }
        for (name, t) in p.names().iter().zip(&self.optimizer.second) {
            put_tensor(&mut out, &format!("adam.v.{name}"), t);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }

        let text = r.string()?;
        let mut cfg = ModelConfig::default();
        let (mut relations, mut epoch, mut step) = (None, None, None);
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("config line {line:?} lacks '='")))?;
            let num = |v: &str| v.parse::<u64>().map_err(|_| bad(format!("{k}: bad integer {v:?}")));
            match k {
                "relations" => relations = Some(num(v)? as usize),
                "epoch" => epoch = Some(num(v)? as usize),
                "adam_step" => step = Some(num(v)?),
                _ => {
                    if !cfg.set(k, v)? {
                        return Err(bad(format!("unknown config key {k:?}")));
                    }
                }
            }
        }
        let relations = relations.ok_or_else(|| bad("missing relations count"))?;

        let count = r.u32()? as usize;
        let names = (0..count).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        let vocab = RelationVocab::from_names(names);

        let count = r.u32()? as usize;
        if count % 3 != 0 {
            return Err(bad(format!("{count} tensors is not a multiple of three")));
        }
        let mut tensors = (0..count).map(|_| get_tensor(&mut r)).collect::<Result<Vec<_>>>()?;
        if r.pos != buf.len() {
            return Err(bad(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        let second: Vec<(String, Tensor)> = tensors.split_off(2 * count / 3);
        let first: Vec<(String, Tensor)> = tensors.split_off(count / 3);
        let params = ModelParams::from_named(&cfg, relations, tensors)?;
        let moments = |set: Vec<(String, Tensor)>, prefix: &str| -> Result<Vec<Tensor>> {
            set.into_iter()
                .zip(params.names())
                .zip(params.tensors())
                .map(|(((name, t), pname), p)| {
                    if name != format!("{prefix}{pname}") || t.shape() != p.shape() {
                        Err(bad(format!("unexpected optimizer tensor {name}")))
                    } else {
                        Ok(t)
                    }
                })
                .collect()
        };
        let optimizer = AdamState {
            step: step.unwrap_or(0),
            first: moments(first, "adam.m.")?,
            second: moments(second, "adam.v.")?,
        };
        Ok(Checkpoint {
            params,
            relations: vocab,
            epoch: epoch.unwrap_or(0),
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&buf)
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn roundtrip_is_bit_exact(seed in any::<u64>(), dim in 1usize..6, relations in 1usize..4) {
            let cfg = ModelConfig { dim, ..ModelConfig::default() };
            let params = ModelParams::init(&cfg, 2 * relations, seed).unwrap();
            let vocab = RelationVocab::from_names((0..relations).map(|i| format!("rel{i}")));
            let ckpt = Checkpoint::from_params(params, vocab);
            let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
            prop_assert_eq!(back.config(), ckpt.config());
            prop_assert_eq!(back.params.names(), ckpt.params.names());
            for (x, y) in back.params.tensors().iter().zip(ckpt.params.tensors()) {
                prop_assert_eq!(x.shape(), y.shape());
                prop_assert!(x.data().iter().zip(y.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
            }
            prop_assert_eq!(back.relations.names(), ckpt.relations.names());
        }
    }
}
