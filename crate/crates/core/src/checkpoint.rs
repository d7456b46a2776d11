//! Named-tensor checkpoint container.
//!
//! Layout (little-endian): magic `MTCK`, `u32` entry count, then per entry a
//! `u16` name length, the UTF-8 name, `u32` rank, `rank` × `u32` dims and the
//! `f64` values in row-major order.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::meta::{Mode, ModelState, Phase};
use crate::model::{Activation, Classifier, Extractor, Layer, LayerKind, SsLayer, SsParams};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MTCK";

/// Encodes `(name, tensor)` entries in order.
pub fn encode_entries(entries: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&u32::try_from(entries.len()).map_err(|_| Error::Checkpoint("too many entries".into()))?.to_le_bytes());
    for (name, t) in entries {
        let len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("entry name too long: {}", name)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format { path: self.path.to_path_buf(), offset: self.pos as u64, reason: reason.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.fail(format!("truncated: need {} bytes, {} left", n, self.buf.len() - self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decodes a container; `path` only labels errors.
pub fn decode_entries(buf: &[u8], path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf, pos: 0, path };
    if r.take(4)? != MAGIC {
        r.pos = 0;
        return Err(r.fail("bad magic, expected MTCK"));
    }
    let n = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..n {
        let len = r.u16()? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| {
            r.pos = at;
            r.fail("entry name is not UTF-8")
        })?;
        let name = name.to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        if numel.checked_mul(8).is_none_or(|b| b > buf.len()) {
            return Err(r.fail(format!("entry {} claims {} values", name, numel)));
        }
        let data = r.take(numel * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != buf.len() {
        return Err(r.fail("trailing bytes after last entry"));
    }
    Ok(out)
}

fn code(v: usize) -> Tensor {
    Tensor::scalar(v as f64)
}

fn act_code(a: Activation) -> usize {
    match a {
        Activation::Relu => 0,
        Activation::LeakyRelu => 1,
    }
}

fn kind_tensor(k: LayerKind) -> Tensor {
    match k {
        LayerKind::Linear => Tensor::from_vec(vec![0.0]),
        LayerKind::Conv { padding, pool } => Tensor::from_vec(vec![1.0, padding as f64, pool as u8 as f64]),
    }
}

fn push_extractor(out: &mut Vec<(String, Tensor)>, prefix: &str, ex: &Extractor) {
    for (i, l) in ex.layers().iter().enumerate() {
        out.push((format!("{prefix}/{i}/kind"), kind_tensor(l.kind)));
        out.push((format!("{prefix}/{i}/weight"), l.weight.clone()));
        out.push((format!("{prefix}/{i}/bias"), l.bias.clone()));
    }
}

/// Entries for a full model state.
pub fn state_entries(state: &ModelState) -> Vec<(String, Tensor)> {
    let mode = Mode::ALL.iter().position(|&m| m == state.mode).unwrap();
    let phase = match state.phase {
        Phase::Pretrain => 0,
        Phase::Meta => 1,
    };
    let mut out = vec![
        ("meta/phase".to_string(), code(phase)),
        ("meta/mode".to_string(), code(mode)),
        ("meta/activation".to_string(), code(act_code(state.extractor.activation()))),
        ("meta/classifier_activation".to_string(), code(act_code(state.classifier.activation))),
    ];
    push_extractor(&mut out, "extractor", &state.extractor);
    if let Some(t) = &state.tuned {
        push_extractor(&mut out, "tuned", t);
    }
    for (i, l) in state.ss.wrapped() {
        out.push((format!("ss/{i}/scale"), l.scale.clone()));
        out.push((format!("ss/{i}/shift"), l.shift.clone()));
    }
    for (j, (w, b)) in state.classifier.layers.iter().enumerate() {
        out.push((format!("classifier/{j}/weight"), w.clone()));
        out.push((format!("classifier/{j}/bias"), b.clone()));
    }
    out
}

pub fn encode(state: &ModelState) -> Result<Vec<u8>> {
    encode_entries(&state_entries(state))
}

/// SHA-256 of the encoded state.
pub fn state_hash(state: &ModelState) -> Result<String> {
    Ok(Sha256::digest(encode(state)?).iter().map(|b| format!("{:02x}", b)).collect())
}

struct Entries(BTreeMap<String, Tensor>);

impl Entries {
    fn take(&mut self, name: &str) -> Result<Tensor> {
        self.0.remove(name).ok_or_else(|| Error::Checkpoint(format!("missing entry {}", name)))
    }

    fn code(&mut self, name: &str, limit: usize) -> Result<usize> {
        let t = self.take(name)?;
        match t.data() {
            [v] if v.fract() == 0.0 && *v >= 0.0 && (*v as usize) < limit => Ok(*v as usize),
            _ => Err(Error::Checkpoint(format!("entry {} is not a code below {}", name, limit))),
        }
    }

    fn has_prefix(&self, prefix: &str) -> bool {
        self.0.keys().any(|k| k.starts_with(prefix))
    }

    fn extractor(&mut self, prefix: &str, activation: Activation) -> Result<Extractor> {
        let mut layers = Vec::new();
        while self.0.contains_key(&format!("{prefix}/{}/kind", layers.len())) {
            let i = layers.len();
            let kind = self.take(&format!("{prefix}/{i}/kind"))?;
            let kind = match kind.data() {
                [0.0] => LayerKind::Linear,
                [1.0, p, pool] if p.fract() == 0.0 && *p >= 0.0 => LayerKind::Conv { padding: *p as usize, pool: *pool != 0.0 },
                _ => return Err(Error::Checkpoint(format!("{prefix}/{i}/kind: unknown layer kind {:?}", kind.data()))),
            };
            let weight = self.take(&format!("{prefix}/{i}/weight"))?;
            let bias = self.take(&format!("{prefix}/{i}/bias"))?;
            layers.push(Layer { kind, weight, bias });
        }
        Extractor::new(layers, activation).map_err(|e| Error::Checkpoint(format!("{prefix}: {e}")))
    }
}

fn activation(c: usize) -> Activation {
    if c == 0 {
        Activation::Relu
    } else {
        Activation::LeakyRelu
    }
}

/// Rebuilds a state from its entries; unknown or missing names are errors.
pub fn state_from_entries(entries: Vec<(String, Tensor)>) -> Result<ModelState> {
    let n = entries.len();
    let mut e = Entries(entries.into_iter().collect());
    if e.0.len() != n {
        return Err(Error::Checkpoint("duplicate entry names".into()));
    }
    let phase = if e.code("meta/phase", 2)? == 0 { Phase::Pretrain } else { Phase::Meta };
    let mode = Mode::ALL[e.code("meta/mode", Mode::ALL.len())?];
    let act = activation(e.code("meta/activation", 2)?);
    let cls_act = activation(e.code("meta/classifier_activation", 2)?);

    let mut extractor = e.extractor("extractor", act)?;
    extractor.freeze();
    let tuned = if e.has_prefix("tuned/") { Some(e.extractor("tuned", act)?) } else { None };
    let ss_layers = (0..extractor.layers().len())
        .map(|i| {
            let key = format!("ss/{i}/scale");
            if e.0.contains_key(&key) {
                Ok(Some(SsLayer { scale: e.take(&key)?, shift: e.take(&format!("ss/{i}/shift"))? }))
            } else {
                Ok(None)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let ss = SsParams { layers: ss_layers };
    ss.check(&extractor)?;

    let mut cls_layers = Vec::new();
    while e.0.contains_key(&format!("classifier/{}/weight", cls_layers.len())) {
        let j = cls_layers.len();
        cls_layers.push((e.take(&format!("classifier/{j}/weight"))?, e.take(&format!("classifier/{j}/bias"))?));
    }
    if cls_layers.is_empty() {
        return Err(Error::Checkpoint("missing entry classifier/0/weight".into()));
    }
    let mut width = extractor.feature_dim();
    for (j, (w, b)) in cls_layers.iter().enumerate() {
        if w.rank() != 2 || w.shape()[1] != width || b.shape() != [w.shape()[0]] {
            return Err(Error::Checkpoint(format!("classifier/{j}: weight {:?}, bias {:?}, input width {}", w.shape(), b.shape(), width)));
        }
        width = w.shape()[0];
    }
    if let Some(k) = e.0.keys().next() {
        return Err(Error::Checkpoint(format!("unknown entry {}", k)));
    }
    let classifier = Classifier { layers: cls_layers, activation: cls_act };
    Ok(ModelState { extractor, tuned, ss, classifier, phase, mode })
}

pub fn decode(buf: &[u8], path: &Path) -> Result<ModelState> {
    state_from_entries(decode_entries(buf, path)?)
}

pub fn save(state: &ModelState, path: &Path) -> Result<()> {
    std::fs::write(path, encode(state)?).map_err(|e| Error::io(path, e))
}

/// Loads a state; a missing file reports "checkpoint not found".
pub fn load(path: &Path) -> Result<ModelState> {
    let buf = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::Checkpoint(format!("checkpoint not found: {}", path.display())))
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    decode(&buf, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_layout() {
        let t = Tensor::new(vec![2], vec![1.0, -2.5]).unwrap();
        let b = encode_entries(&[("ab".into(), t.clone())]).unwrap();
        let mut want = b"MTCK".to_vec();
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&2u16.to_le_bytes());
        want.extend_from_slice(b"ab");
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(&1.0f64.to_le_bytes());
        want.extend_from_slice(&(-2.5f64).to_le_bytes());
        assert_eq!(b, want);
        assert_eq!(decode_entries(&b, Path::new("x")).unwrap(), vec![("ab".to_string(), t)]);
    }

    #[test]
    fn truncation_reports_offset() {
        let b = encode_entries(&[("w".into(), Tensor::zeros(&[3]))]).unwrap();
        match decode_entries(&b[..b.len() - 4], Path::new("x")) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 4 + 4 + 2 + 1 + 4 + 4),
            other => panic!("{:?}", other),
        }
        assert!(matches!(decode_entries(b"MTCX\0\0\0\0", Path::new("x")), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn missing_file() {
        let err = load(Path::new("/nonexistent/model.mtck")).unwrap_err();
        assert!(err.to_string().contains("checkpoint not found"), "{err}");
    }
}
