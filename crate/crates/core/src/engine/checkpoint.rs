//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PMR1"  u32 version
//! u64 config length, config text (`key = value` lines)
//! u32 parameter count, then per parameter:
//!     u32 name length, name, u32 rank, u64 dims..., u64 element offset
//! u64 element count, f64 parameters, f64 first moments, f64 second moments
//! u64 optimizer step, u64 training step, u64 sampler seed
//! ```
//!
//! The sampler state is fully determined by seed and step, so those two
//! numbers are the saved RNG state.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::train::{Adam, RunConfig, Trainer};
use crate::error::{Error, Result};
use crate::model::Model;

pub const MAGIC: &[u8; 4] = b"PMR1";
pub const VERSION: u32 = 1;

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: Model,
    pub adam: Adam,
    pub step: u64,
    pub seed: u64,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        Self {
            config: t.config.clone(),
            model: t.model.clone(),
            adam: t.adam.clone(),
            step: t.step,
            seed: t.config.train.seed,
        }
    }

    pub fn into_trainer(self) -> Result<Trainer> {
        Trainer::from_parts(self.config, self.model, Some(self.adam), self.step)
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    let text = ck.config.render();
    put_u64(&mut buf, text.len() as u64);
    buf.extend_from_slice(text.as_bytes());
    put_u32(&mut buf, ck.model.params.len() as u32);
    let mut offset = 0u64;
    for (name, t) in ck.model.params.iter() {
        put_u32(&mut buf, name.len() as u32);
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, t.shape().len() as u32);
        for &d in t.shape() {
            put_u64(&mut buf, d as u64);
        }
        put_u64(&mut buf, offset);
        offset += t.len() as u64;
    }
    put_u64(&mut buf, offset);
    for (_, t) in ck.model.params.iter() {
        put_f64s(&mut buf, t.values());
    }
    for m in &ck.adam.m {
        put_f64s(&mut buf, m);
    }
    for v in &ck.adam.v {
        put_f64s(&mut buf, v);
    }
    put_u64(&mut buf, ck.adam.t);
    put_u64(&mut buf, ck.step);
    put_u64(&mut buf, ck.seed);
    buf
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::format(format!(
                "truncated checkpoint: wanted {n} bytes at offset {}, {} left",
                self.pos,
                self.data.len() - self.pos
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::format("length does not fit in memory"))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::format("payload size overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode(data: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { data, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::format("not a checkpoint: bad magic bytes"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(format!(
            "checkpoint version {version}, this build reads version {VERSION}"
        )));
    }
    let text_len = r.len()?;
    let text = std::str::from_utf8(r.take(text_len)?)
        .map_err(|_| Error::format("config text is not UTF-8"))?;
    let config = RunConfig::parse(text)?;
    let mut model = Model::new(config.model.clone(), 0)?;

    let count = r.u32()? as usize;
    if count != model.params.len() {
        return Err(Error::format(format!(
            "manifest lists {count} parameters, the configured model has {}",
            model.params.len()
        )));
    }
    let mut expected_offset = 0u64;
    for i in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::format("parameter name is not UTF-8"))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.len()?);
        }
        let offset = r.u64()?;
        let want = model.params.get(i);
        if name != model.params.name(i) || shape != want.shape() || offset != expected_offset {
            return Err(Error::format(format!(
                "manifest entry {i} ({name} {shape:?} at {offset}) disagrees with the model ({} {:?} at {expected_offset})",
                model.params.name(i),
                want.shape()
            )));
        }
        expected_offset += want.len() as u64;
    }
    let total = r.len()?;
    if total as u64 != expected_offset {
        return Err(Error::format(format!(
            "payload holds {total} values, manifest describes {expected_offset}"
        )));
    }
    let sizes: Vec<usize> = model.params.iter().map(|(_, t)| t.len()).collect();
    let params = r.f64s(total)?;
    let m = r.f64s(total)?;
    let v = r.f64s(total)?;
    let adam_t = r.u64()?;
    let step = r.u64()?;
    let seed = r.u64()?;
    if r.pos != data.len() {
        return Err(Error::format(format!(
            "{} trailing bytes after the checkpoint payload",
            data.len() - r.pos
        )));
    }
    let split = |flat: &[f64]| -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(sizes.len());
        let mut at = 0;
        for &n in &sizes {
            out.push(flat[at..at + n].to_vec());
            at += n;
        }
        out
    };
    for (i, vals) in split(&params).iter().enumerate() {
        model.params.load_values(i, vals)?;
    }
    let mut adam = Adam::new(&model);
    adam.m = split(&m);
    adam.v = split(&v);
    adam.t = adam_t;
    Ok(Checkpoint {
        config,
        model,
        adam,
        step,
        seed,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let bytes = encode(ck);
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut data = Vec::new();
    fs::File::open(path)?.read_to_end(&mut data)?;
    decode(&data)
}
