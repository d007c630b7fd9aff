//! Binary weight files.
//!
//! Layout, all little-endian: magic `LSPW`, `u32` version, `u32` metadata
//! count followed by length-prefixed UTF-8 key/value pairs, `u32` group
//! count, `u32` layer count, one fixed-size record per layer, then the
//! parameters of every layer as raw `f32` in layer order.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{NnError, Result};
use crate::layers::{ActivationKind, Layer, LayerKind, LayerSpec};
use crate::sequential::Sequential;

pub const MAGIC: &[u8; 4] = b"LSPW";
pub const VERSION: u32 = 1;

/// A set of networks plus free-form string metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub groups: Vec<Sequential<f32>>,
    pub meta: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn bad<T>(msg: impl Into<String>) -> Result<T> {
    Err(NnError::Checkpoint(msg.into()))
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).or_else(|_| bad(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn to_bytes(groups: &[&Sequential<f32>], meta: &[(String, String)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, meta.len())?;
    for (k, v) in meta {
        put_str(&mut out, k)?;
        put_str(&mut out, v)?;
    }
    put_u32(&mut out, groups.len())?;
    put_u32(&mut out, groups.iter().map(|g| g.layers.len()).sum())?;
    for (gi, g) in groups.iter().enumerate() {
        for layer in &g.layers {
            let s = layer.spec();
            put_u32(&mut out, gi)?;
            out.push(s.kind.code());
            out.push(s.dim as u8);
            for v in [s.kernel, s.stride, s.n_i, s.n_o] {
                put_u32(&mut out, v)?;
            }
            out.push(s.activation.code());
            out.push(s.return_sequences as u8);
            put_u32(&mut out, s.repeat)?;
            out.extend_from_slice(&s.rate.to_le_bytes());
            out.extend_from_slice(&s.recurrent_rate.to_le_bytes());
            let n: usize = layer.params().iter().map(|p| p.value.len()).sum();
            out.extend_from_slice(&(n as u64).to_le_bytes());
        }
    }
    for g in groups {
        for p in g.params() {
            for v in &p.value.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return bad("unexpected end of file");
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).or_else(|_| bad("metadata is not UTF-8"))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return bad("not a weight file (bad magic)");
    }
    let version = c.u32()? as u32;
    if version != VERSION {
        return bad(format!("unsupported version {version}"));
    }
    let n_meta = c.u32()?;
    let mut meta = Vec::with_capacity(n_meta.min(1024));
    for _ in 0..n_meta {
        meta.push((c.string()?, c.string()?));
    }
    let n_groups = c.u32()?;
    let n_layers = c.u32()?;
    let mut records = Vec::with_capacity(n_layers.min(4096));
    for _ in 0..n_layers {
        let group = c.u32()?;
        let kind = LayerKind::from_code(c.u8()?).map_or_else(|| bad("unknown layer kind"), Ok)?;
        let dim = c.u8()? as usize;
        let (kernel, stride, n_i, n_o) = (c.u32()?, c.u32()?, c.u32()?, c.u32()?);
        let activation = ActivationKind::from_code(c.u8()?).map_or_else(|| bad("unknown activation"), Ok)?;
        let return_sequences = c.u8()? != 0;
        let repeat = c.u32()?;
        let rate = c.f64()?;
        let recurrent_rate = c.f64()?;
        let count = c.u64()?;
        if group >= n_groups {
            return bad(format!("layer refers to group {group} of {n_groups}"));
        }
        let spec = LayerSpec { kind, dim, kernel, stride, n_i, n_o, activation, rate, recurrent_rate, return_sequences, repeat };
        records.push((group, spec, count));
    }
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut groups: Vec<Sequential<f32>> = (0..n_groups).map(|_| Sequential::from_layers(Vec::new())).collect();
    for (group, spec, count) in &records {
        let layer = Layer::<f32>::from_spec(spec, &mut rng).or_else(|e| bad(format!("invalid layer record: {e}")))?;
        let expect: usize = layer.params().iter().map(|p| p.value.len()).sum();
        if expect as u64 != *count {
            return bad(format!("{:?} record holds {count} weights, architecture needs {expect}", spec.kind));
        }
        groups[*group].layers.push(layer);
    }
    for g in &mut groups {
        for p in g.params_mut() {
            let raw = c.take(p.value.len() * 4)?;
            for (v, b) in p.value.data.iter_mut().zip(raw.chunks_exact(4)) {
                *v = f32::from_le_bytes(b.try_into().unwrap());
            }
        }
    }
    if c.pos != buf.len() {
        return bad("trailing bytes after weights");
    }
    Ok(Checkpoint { groups, meta })
}

pub fn save(path: &Path, groups: &[&Sequential<f32>], meta: &[(String, String)]) -> Result<()> {
    let bytes = to_bytes(groups, meta)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    from_bytes(&buf)
}
