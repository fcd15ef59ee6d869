//! Binary model files.
//!
//! Layout (little-endian): `b"ATPR"`, version `u32`, input rank and dims,
//! layer count, then per layer a kind tag and its shape header followed by
//! `f64` parameters; then the site table with masks; then a CRC32 of every
//! preceding byte.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Activation, BatchNorm, Conv2d, Dense, Layer, Model, Site};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ATPR";
pub const VERSION: u32 = 1;

/// Bounds on header values, so hostile files cannot request absurd shapes.
const MAX_DIM: u32 = 1 << 20;
const MAX_RANK: u32 = 8;

mod tag {
    pub const DENSE: u8 = 0;
    pub const CONV: u8 = 1;
    pub const BATCH_NORM: u8 = 2;
    pub const ACTIVATION: u8 = 3;
    pub const MAX_POOL: u8 = 4;
    pub const DROPOUT: u8 = 5;
    pub const FLATTEN: u8 = 6;
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn tensor(&mut self, t: &Tensor) {
        for &v in t.data() {
            self.f64(v);
        }
    }
}

/// Serializes a model, including its sites and masks.
pub fn encode_model(model: &Model) -> Vec<u8> {
    let mut w = Writer(MAGIC.to_vec());
    w.u32(VERSION as usize);
    w.u32(model.input_shape().len());
    for &d in model.input_shape() {
        w.u32(d);
    }
    w.u32(model.layers().len());
    for layer in model.layers() {
        match layer {
            Layer::Dense(d) => {
                w.u8(tag::DENSE);
                w.u32(d.out_units());
                w.u32(d.in_units());
                w.tensor(&d.weight);
                w.tensor(&d.bias);
            }
            Layer::Conv2d(c) => {
                w.u8(tag::CONV);
                for &d in c.weight.shape() {
                    w.u32(d);
                }
                w.u32(c.stride);
                w.u32(c.padding);
                w.tensor(&c.weight);
                w.tensor(&c.bias);
            }
            Layer::BatchNorm(b) => {
                w.u8(tag::BATCH_NORM);
                w.u32(b.channels());
                w.f64(b.eps);
                for t in [&b.gamma, &b.beta, &b.running_mean, &b.running_var] {
                    w.tensor(t);
                }
            }
            Layer::Activation(a) => {
                w.u8(tag::ACTIVATION);
                let (kind, slope) = match a {
                    Activation::Relu => (0, 0.0),
                    Activation::LeakyRelu(s) => (1, *s),
                    Activation::Sigmoid => (2, 0.0),
                    Activation::Softplus => (3, 0.0),
                };
                w.u8(kind);
                w.f64(slope);
            }
            Layer::MaxPool2d { size } => {
                w.u8(tag::MAX_POOL);
                w.u32(*size);
            }
            Layer::Dropout { rate } => {
                w.u8(tag::DROPOUT);
                w.f64(*rate);
            }
            Layer::Flatten => w.u8(tag::FLATTEN),
        }
    }
    w.u32(model.sites().len());
    for site in model.sites() {
        w.u32(site.layer);
        w.u32(site.units);
        let mask = model.masks().get(&site.layer).map_or(&[][..], |m| &m[..]);
        w.u32(mask.len());
        for &u in mask {
            w.u32(u);
        }
    }
    let crc = crc32fast::hash(&w.0);
    w.0.extend_from_slice(&crc.to_le_bytes());
    w.0
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn fail(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Format { path: self.path.to_path_buf(), offset: offset as u64, message: message.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail(self.pos, format!("truncated while reading {what}"))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn dim(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        let v = self.u32(what)?;
        if v == 0 || v > MAX_DIM {
            return Err(self.fail(at, format!("{what} {v} is out of range")));
        }
        Ok(v as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("eight bytes")))
    }

    fn tensor(&mut self, shape: Vec<usize>, what: &str) -> Result<Tensor> {
        let at = self.pos;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= self.bytes.len() - self.pos))
            .ok_or_else(|| self.fail(at, format!("{what} of shape {shape:?} exceeds the file")))?;
        let raw = self.take(n * 8, what)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Tensor::new(shape, data).map_err(|e| self.fail(at, e.to_string()))
    }
}

/// Parses a model file's bytes; `path` is only used in diagnostics.
pub fn decode_model(bytes: &[u8], path: &Path) -> Result<Model> {
    let fail =
        |offset: usize, message: String| Error::Format { path: path.to_path_buf(), offset: offset as u64, message };
    if bytes.len() < 12 {
        return Err(fail(bytes.len(), "file too short for a model header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail(0, "bad magic (expected \"ATPR\")".into()));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    let mut r = Reader { bytes: body, pos: 4, path };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(fail(4, format!("unsupported format version {version} (expected {VERSION})")));
    }
    if stored != computed {
        return Err(fail(body.len(), format!("checksum mismatch (stored {stored:08x}, computed {computed:08x})")));
    }

    let at = r.pos;
    let rank = r.u32("input rank")?;
    if rank == 0 || rank > MAX_RANK {
        return Err(fail(at, format!("input rank {rank} is out of range")));
    }
    let input_shape = (0..rank).map(|_| r.dim("input dimension")).collect::<Result<Vec<_>>>()?;
    let count = r.u32("layer count")? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let at = r.pos;
        let layer = match r.u8("layer tag")? {
            tag::DENSE => {
                let out = r.dim("dense outputs")?;
                let inp = r.dim("dense inputs")?;
                let weight = r.tensor(vec![out, inp], "dense weight")?;
                let bias = r.tensor(vec![out], "dense bias")?;
                Layer::Dense(Dense::new(weight, bias).map_err(|e| fail(at, e.to_string()))?)
            }
            tag::CONV => {
                let shape = (0..4).map(|_| r.dim("conv weight dimension")).collect::<Result<Vec<_>>>()?;
                let stride = r.dim("conv stride")?;
                let pad_at = r.pos;
                let padding = r.u32("conv padding")?;
                if padding > MAX_DIM {
                    return Err(fail(pad_at, format!("conv padding {padding} is out of range")));
                }
                let oc = shape[0];
                let weight = r.tensor(shape, "conv weight")?;
                let bias = r.tensor(vec![oc], "conv bias")?;
                Layer::Conv2d(Conv2d::new(weight, bias, stride, padding as usize).map_err(|e| fail(at, e.to_string()))?)
            }
            tag::BATCH_NORM => {
                let c = r.dim("batch norm channels")?;
                let eps = r.f64("batch norm epsilon")?;
                let gamma = r.tensor(vec![c], "batch norm scale")?;
                let beta = r.tensor(vec![c], "batch norm shift")?;
                let running_mean = r.tensor(vec![c], "batch norm mean")?;
                let running_var = r.tensor(vec![c], "batch norm variance")?;
                Layer::BatchNorm(BatchNorm { gamma, beta, running_mean, running_var, eps })
            }
            tag::ACTIVATION => {
                let kind = r.u8("activation kind")?;
                let slope = r.f64("activation slope")?;
                Layer::Activation(match kind {
                    0 => Activation::Relu,
                    1 => Activation::LeakyRelu(slope),
                    2 => Activation::Sigmoid,
                    3 => Activation::Softplus,
                    k => return Err(fail(at + 1, format!("unknown activation kind {k}"))),
                })
            }
            tag::MAX_POOL => Layer::MaxPool2d { size: r.dim("pool size")? },
            tag::DROPOUT => Layer::Dropout { rate: r.f64("dropout rate")? },
            tag::FLATTEN => Layer::Flatten,
            t => return Err(fail(at, format!("unknown layer tag {t}"))),
        };
        layers.push(layer);
    }

    let sites_at = r.pos;
    let site_count = r.u32("site count")? as usize;
    let mut sites = Vec::with_capacity(site_count.min(1024));
    let mut masks = BTreeMap::new();
    for _ in 0..site_count {
        let layer = r.u32("site layer")? as usize;
        let units = r.u32("site units")? as usize;
        let n = r.u32("mask length")? as usize;
        if n > units {
            return Err(fail(r.pos - 4, format!("mask of {n} units on a site of {units}")));
        }
        let mask = (0..n).map(|_| r.u32("mask unit").map(|u| u as usize)).collect::<Result<Vec<_>>>()?;
        if !mask.is_empty() {
            masks.insert(layer, mask);
        }
        sites.push(Site { layer, units });
    }
    if r.pos != body.len() {
        return Err(fail(r.pos, "unexpected bytes before the checksum".into()));
    }
    Model::from_parts(input_shape, layers, sites, masks).map_err(|e| fail(sites_at, e.to_string()))
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, path)
}
