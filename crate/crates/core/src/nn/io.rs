//! `KCNN` weights files.
//!
//! Layout, all integers 32-bit little-endian:
//!
//! ```text
//! "KCNN" version(=1)
//! category count, then per category: byte length, UTF-8 name
//! input height, width, channels
//! layer count, then per layer: kind tag, param count, params
//! tensor count, then per tensor: name length, name, ndim, dims, f32 values
//! ```
//!
//! Kind tags: 1 conv2d (kernel, filters, stride), 2 relu, 3 maxpool2d
//! (window, stride), 4 global_avg_pool, 5 dense (units), 6 softmax.
//! Tensors are matched to layers by name, so their order is free.

use std::collections::HashMap;
use std::path::Path;

use super::{LayerConfig, Model, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"KCNN";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn layer_tag(layer: &LayerConfig) -> (u32, Vec<u32>) {
    match *layer {
        LayerConfig::Conv2d {
            kernel,
            filters,
            stride,
        } => (1, vec![kernel as u32, filters as u32, stride as u32]),
        LayerConfig::Relu => (2, vec![]),
        LayerConfig::MaxPool2d { window, stride } => (3, vec![window as u32, stride as u32]),
        LayerConfig::GlobalAvgPool => (4, vec![]),
        LayerConfig::Dense { units } => (5, vec![units as u32]),
        LayerConfig::Softmax => (6, vec![]),
    }
}

fn layer_from_tag(tag: u32, p: &[u32]) -> Result<LayerConfig> {
    let arity = |n: usize| -> Result<()> {
        if p.len() == n {
            Ok(())
        } else {
            Err(Error::Format(format!("layer tag {tag} expects {n} params, found {}", p.len())))
        }
    };
    Ok(match tag {
        1 => {
            arity(3)?;
            LayerConfig::Conv2d {
                kernel: p[0] as usize,
                filters: p[1] as usize,
                stride: p[2] as usize,
            }
        }
        2 => {
            arity(0)?;
            LayerConfig::Relu
        }
        3 => {
            arity(2)?;
            LayerConfig::MaxPool2d {
                window: p[0] as usize,
                stride: p[1] as usize,
            }
        }
        4 => {
            arity(0)?;
            LayerConfig::GlobalAvgPool
        }
        5 => {
            arity(1)?;
            LayerConfig::Dense { units: p[0] as usize }
        }
        6 => {
            arity(0)?;
            LayerConfig::Softmax
        }
        other => return Err(Error::Format(format!("unknown layer tag {other}"))),
    })
}

pub fn encode_weights(model: &Model<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, model.categories().len() as u32);
    for c in model.categories() {
        put_str(&mut out, c);
    }
    for d in model.input_shape() {
        put_u32(&mut out, d as u32);
    }
    put_u32(&mut out, model.layers().len() as u32);
    for layer in model.layers() {
        let (tag, params) = layer_tag(layer);
        put_u32(&mut out, tag);
        put_u32(&mut out, params.len() as u32);
        for p in params {
            put_u32(&mut out, p);
        }
    }
    let tensors = model.named_tensors();
    put_u32(&mut out, tensors.len() as u32);
    for (name, t) in tensors {
        put_str(&mut out, &name);
        put_u32(&mut out, t.shape().len() as u32);
        for &d in t.shape() {
            put_u32(&mut out, d as u32);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated at byte {}: need {n} more bytes",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format(format!("invalid UTF-8 before byte {}", self.pos)))
    }

    pub fn finished(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub fn pos(&self) -> usize {
        self.pos
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<Model<f32>> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic, expected KCNN".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported KCNN version {version}")));
    }
    let n_cat = r.u32()? as usize;
    let categories = (0..n_cat).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
    let input = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let tag = r.u32()?;
        let n = r.u32()? as usize;
        let params = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        layers.push(layer_from_tag(tag, &params)?);
    }
    let n_tensors = r.u32()? as usize;
    let mut table: HashMap<String, Tensor<f32>> = HashMap::new();
    for _ in 0..n_tensors {
        let name = r.string()?;
        let ndim = r.u32()? as usize;
        let dims = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        let raw = r.take(count.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if table.insert(name.clone(), Tensor::from_vec(&dims, data)?).is_some() {
            return Err(Error::Format(format!("duplicate tensor {name:?}")));
        }
    }
    if !r.finished() {
        return Err(Error::Format(format!("trailing bytes after offset {}", r.pos())));
    }
    let mut model = Model::new(input, layers, categories).map_err(|e| Error::Format(e.to_string()))?;
    let expected: Vec<(String, Vec<usize>)> = model
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if expected.len() != table.len() {
        return Err(Error::Format(format!(
            "expected {} tensors, file has {}",
            expected.len(),
            table.len()
        )));
    }
    for (name, shape) in expected {
        let t = table
            .remove(&name)
            .ok_or_else(|| Error::Format(format!("missing tensor {name:?}")))?;
        if t.shape() != shape {
            return Err(Error::Format(format!(
                "tensor {name:?} has shape {:?}, layer expects {shape:?}",
                t.shape()
            )));
        }
        let (layer, kind) = name.split_once('.').expect("generated name");
        let layer: usize = layer.parse().expect("generated name");
        let p = model.params_mut()[layer].as_mut().expect("parameterized layer");
        match kind {
            "weight" => p.weight = t,
            _ => p.bias = t,
        }
    }
    Ok(model)
}

pub fn save_weights(model: &Model<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_weights(model)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<Model<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{arch, InitMode};

    fn model() -> Model<f32> {
        let mut m = Model::new([16, 16, 3], arch::first_cnn(8, 3), vec!["K".into(), "N".into(), "S".into()]).unwrap();
        m.init_params(InitMode::Gaussian, 11);
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let bytes = encode_weights(&m);
        assert_eq!(decode_weights(&bytes).unwrap(), m);
    }

    #[test]
    fn truncation_is_a_format_error() {
        let bytes = encode_weights(&model());
        for cut in [3, 10, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_weights(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_weights(&model());
        bytes[0] = b'X';
        assert!(matches!(decode_weights(&bytes), Err(Error::Format(_))));
        let mut bytes = encode_weights(&model());
        bytes[4] = 2;
        assert!(matches!(decode_weights(&bytes), Err(Error::Format(_))));
    }

    // Independent re-serializer: walks the file format by hand and writes the
    // tensor table back in reverse order.
    fn reverse_tensor_table(bytes: &[u8]) -> Vec<u8> {
        let rd = |b: &[u8], at: usize| u32::from_le_bytes(b[at..at + 4].try_into().unwrap()) as usize;
        let mut at = 8;
        let n_cat = rd(bytes, at);
        at += 4;
        for _ in 0..n_cat {
            at += 4 + rd(bytes, at);
        }
        at += 12;
        let n_layers = rd(bytes, at);
        at += 4;
        for _ in 0..n_layers {
            let n = rd(bytes, at + 4);
            at += 8 + 4 * n;
        }
        let n_tensors = rd(bytes, at);
        let head = &bytes[..at + 4];
        at += 4;
        let mut records = Vec::new();
        for _ in 0..n_tensors {
            let start = at;
            at += 4 + rd(bytes, at);
            let ndim = rd(bytes, at);
            at += 4;
            let mut count = 1;
            for _ in 0..ndim {
                count *= rd(bytes, at);
                at += 4;
            }
            at += 4 * count;
            records.push(&bytes[start..at]);
        }
        let mut out = head.to_vec();
        for r in records.iter().rev() {
            out.extend_from_slice(r);
        }
        out
    }

    #[test]
    fn permuted_tensor_order_loads_by_name() {
        let m = model();
        let bytes = encode_weights(&m);
        let permuted = reverse_tensor_table(&bytes);
        assert_ne!(permuted, bytes);
        assert_eq!(decode_weights(&permuted).unwrap(), m);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let m = model();
        let mut other = Model::new([16, 16, 3], arch::first_cnn(4, 3), vec!["K".into(), "N".into(), "S".into()]).unwrap();
        other.init_params(InitMode::Gaussian, 1);
        // graft the first model's header onto the second's tensor table
        let a = encode_weights(&m);
        let b = encode_weights(&other);
        let header_len = a.len() - m.named_tensors().iter().map(|(n, t)| 4 + n.len() + 4 + 4 * t.shape().len() + 4 * t.len()).sum::<usize>() - 4;
        let other_header_len = b.len() - other.named_tensors().iter().map(|(n, t)| 4 + n.len() + 4 + 4 * t.shape().len() + 4 * t.len()).sum::<usize>() - 4;
        let mut franken = a[..header_len].to_vec();
        franken.extend_from_slice(&b[other_header_len..]);
        assert!(matches!(decode_weights(&franken), Err(Error::Format(_))));
    }
}
