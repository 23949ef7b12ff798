//! Binary artifact formats. All integers and floats are little-endian and every
//! file ends with a CRC32 (IEEE) of all preceding bytes.
//!
//! Model file (`DTNN`, version 1):
//!
//! ```text
//! "DTNN" | u32 version | u32 rank | rank x u32 input dims | u32 layer_count
//! per layer: u8 kind | kind dims as u32 | u8 has_bias
//!     kind 0 linear:  in, out
//!     kind 1 conv2d:  in_ch, out_ch, kernel, stride, padding
//!     kind 2 relu:    -
//!     kind 3 leaky:   slope as f32 bits
//!     kind 4 maxpool: size
//!     kind 5 flatten: -
//! per weighted layer: weight f32s (row-major), then bias f32s if has_bias
//! u32 metadata_len | metadata as UTF-8 JSON object
//! u32 crc32
//! ```
//!
//! Spectrum archive (`DTSP`, version 1):
//! `"DTSP" | u32 version | u32 count | u32 H | u32 W | count*H*W f32 | u32 crc32`
//!
//! Meta-classifier file (`DTMC`, version 1). This file holds the detector's secret
//! parameters and should be kept confidential:
//! `"DTMC" | u32 version | u32 model_len | model file | u32 d | d f32 centre |
//!  u8 threshold_present | f64 threshold | u32 crc32`

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::meta::MetaClassifier;
use crate::nn::{Layer, LayerSpec, Model};
use crate::spectrum::SpectrumImage;
use crate::tensor::Tensor;

pub const MODEL_MAGIC: &[u8; 4] = b"DTNN";
pub const SPECTRA_MAGIC: &[u8; 4] = b"DTSP";
pub const META_MAGIC: &[u8; 4] = b"DTMC";
pub const VERSION: u32 = 1;

/// Writes to a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp-{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::format(format!("{v} does not fit a u32 field")))?;
        self.buf.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn f32s(&mut self, vs: &[f32]) {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Reader { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8]> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.buf.len() => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => Err(Error::format(format!(
                "{} truncated: missing {section} (need {n} bytes at offset {}, {} available)",
                self.what,
                self.pos,
                self.buf.len().saturating_sub(self.pos)
            ))),
        }
    }

    fn remaining(&self) -> usize {
        self.buf.len().saturating_sub(self.pos)
    }

    fn u8(&mut self, section: &str) -> Result<u8> {
        Ok(self.take(1, section)?[0])
    }

    fn u32(&mut self, section: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self, section: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, section)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, section: &str) -> Result<Vec<f32>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| Error::format(format!("{}: {section} length overflows", self.what)))?;
        Ok(self
            .take(bytes, section)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != magic {
            return Err(Error::format(format!(
                "{}: bad magic {:?}, expected {:?}",
                self.what,
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = self.u32("version")?;
        if version as u32 != VERSION {
            return Err(Error::format(format!("{}: unsupported version {version}", self.what)));
        }
        Ok(())
    }
}

/// Verifies the CRC, then runs `parse` over the payload. On a CRC failure the raw
/// bytes are probed so truncations name the section that went missing.
fn decode<T>(
    bytes: &[u8],
    what: &'static str,
    magic: &[u8; 4],
    parse: impl Fn(&mut Reader<'_>) -> Result<T>,
) -> Result<T> {
    if bytes.len() < 12 {
        let mut r = Reader::new(bytes, what);
        r.header(magic)?;
        r.take(4, "crc32")?;
    }
    let (payload, crc) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc.try_into().unwrap());
    if crc32fast::hash(payload) != stored {
        let mut probe = Reader::new(bytes, what);
        let detail = match probe.header(magic).and_then(|_| parse(&mut probe)) {
            Err(Error::Format(m)) => format!(" ({m})"),
            _ => String::new(),
        };
        return Err(Error::format(format!("{what}: CRC mismatch{detail}")));
    }
    let mut r = Reader::new(payload, what);
    r.header(magic)?;
    let value = parse(&mut r)?;
    if r.pos != payload.len() {
        return Err(Error::format(format!(
            "{what}: {} trailing bytes before the checksum",
            payload.len() - r.pos
        )));
    }
    Ok(value)
}

fn write_model_body(w: &mut Writer, model: &Model) -> Result<()> {
    w.u32(model.input_shape().len())?;
    for &d in model.input_shape() {
        w.u32(d)?;
    }
    w.u32(model.layers().len())?;
    for layer in model.layers() {
        match layer.spec {
            LayerSpec::Linear {
                in_features,
                out_features,
                ..
            } => {
                w.u8(0);
                w.u32(in_features)?;
                w.u32(out_features)?;
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => {
                w.u8(1);
                for d in [in_channels, out_channels, kernel, stride, padding] {
                    w.u32(d)?;
                }
            }
            LayerSpec::Relu => w.u8(2),
            LayerSpec::LeakyRelu { slope } => {
                w.u8(3);
                w.buf.extend_from_slice(&slope.to_bits().to_le_bytes());
            }
            LayerSpec::MaxPool { size } => {
                w.u8(4);
                w.u32(size)?;
            }
            LayerSpec::Flatten => w.u8(5),
        }
        w.u8(u8::from(layer.spec.has_bias()));
    }
    for layer in model.layers() {
        if let Some(wt) = &layer.weight {
            w.f32s(wt.data());
        }
        if let Some(b) = &layer.bias {
            w.f32s(b.data());
        }
    }
    let meta = serde_json::to_vec(&model.metadata)?;
    w.u32(meta.len())?;
    w.buf.extend_from_slice(&meta);
    Ok(())
}

fn read_model_body(r: &mut Reader<'_>) -> Result<Model> {
    let rank = r.u32("input rank")?;
    if rank == 0 || rank > 8 {
        return Err(Error::format(format!("model file: implausible input rank {rank}")));
    }
    let input_shape = (0..rank).map(|_| r.u32("input dims")).collect::<Result<Vec<_>>>()?;
    let count = r.u32("layer count")?;
    let mut specs = Vec::new();
    for i in 0..count {
        let section = format!("layer {i} descriptor");
        let kind = r.u8(&section)?;
        let spec = match kind {
            0 => LayerSpec::Linear {
                in_features: r.u32(&section)?,
                out_features: r.u32(&section)?,
                bias: false,
            },
            1 => LayerSpec::Conv2d {
                in_channels: r.u32(&section)?,
                out_channels: r.u32(&section)?,
                kernel: r.u32(&section)?,
                stride: r.u32(&section)?,
                padding: r.u32(&section)?,
                bias: false,
            },
            2 => LayerSpec::Relu,
            3 => LayerSpec::LeakyRelu {
                slope: f32::from_bits(r.u32(&section)? as u32),
            },
            4 => LayerSpec::MaxPool { size: r.u32(&section)? },
            5 => LayerSpec::Flatten,
            other => return Err(Error::format(format!("model file: unknown layer kind {other}"))),
        };
        let has_bias = match r.u8(&section)? {
            0 => false,
            1 => true,
            other => return Err(Error::format(format!("model file: bad bias flag {other}"))),
        };
        let spec = match spec {
            LayerSpec::Linear {
                in_features,
                out_features,
                ..
            } => LayerSpec::Linear {
                in_features,
                out_features,
                bias: has_bias,
            },
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                bias: has_bias,
            },
            other if has_bias => {
                return Err(Error::format(format!("model file: {other:?} cannot carry a bias")))
            }
            other => other,
        };
        spec.validate().map_err(|e| Error::format(format!("model file: layer {i}: {e}")))?;
        specs.push(spec);
    }
    let mut layers = Vec::with_capacity(specs.len());
    for (i, spec) in specs.into_iter().enumerate() {
        let weight = match spec.weight_shape() {
            Some(shape) => {
                let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
                let n = n.ok_or_else(|| Error::format("model file: weight size overflows"))?;
                Some(Tensor::new(shape, r.f32s(n, &format!("layer {i} weights"))?)?)
            }
            None => None,
        };
        let bias = match spec.bias_len() {
            Some(n) => Some(Tensor::from_vec(r.f32s(n, &format!("layer {i} bias"))?)),
            None => None,
        };
        layers.push(Layer { spec, weight, bias });
    }
    let meta_len = r.u32("metadata length")?;
    let meta_bytes = r.take(meta_len, "metadata")?;
    let metadata: BTreeMap<String, String> =
        serde_json::from_slice(meta_bytes).map_err(|e| Error::format(format!("model file: metadata: {e}")))?;
    Model::from_layers(layers, input_shape, metadata).map_err(|e| Error::format(format!("model file: {e}")))
}

pub fn save_model(model: &Model) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(MODEL_MAGIC);
    w.u32(VERSION as usize)?;
    write_model_body(&mut w, model)?;
    Ok(w.finish())
}

pub fn load_model(bytes: &[u8]) -> Result<Model> {
    decode(bytes, "model file", MODEL_MAGIC, read_model_body)
}

pub fn save_spectra(spectra: &[SpectrumImage]) -> Result<Vec<u8>> {
    let (h, w_) = spectra.first().map_or((0, 0), |s| (s.height(), s.width()));
    if spectra.iter().any(|s| (s.height(), s.width()) != (h, w_)) {
        return Err(Error::shape("archive spectra must share one size"));
    }
    let mut w = Writer::default();
    w.buf.extend_from_slice(SPECTRA_MAGIC);
    w.u32(VERSION as usize)?;
    w.u32(spectra.len())?;
    w.u32(h)?;
    w.u32(w_)?;
    for s in spectra {
        w.f32s(s.values());
    }
    Ok(w.finish())
}

pub fn load_spectra(bytes: &[u8]) -> Result<Vec<SpectrumImage>> {
    decode(bytes, "spectrum archive", SPECTRA_MAGIC, |r| {
        let count = r.u32("count")?;
        let h = r.u32("height")?;
        let w = r.u32("width")?;
        let per = h
            .checked_mul(w)
            .ok_or_else(|| Error::format("spectrum archive: size overflows"))?;
        if count > 0 && per == 0 {
            return Err(Error::format("spectrum archive: zero-sized spectra"));
        }
        let need = count.checked_mul(per).and_then(|n| n.checked_mul(4));
        if need.is_none_or(|n| n > r.remaining()) {
            return Err(Error::format(format!(
                "spectrum archive truncated: {count} spectra of {h}x{w} need more than {} bytes",
                r.remaining()
            )));
        }
        (0..count)
            .map(|i| {
                let values = r.f32s(per, &format!("spectrum {i}"))?;
                SpectrumImage::new(h, w, values).map_err(|e| Error::format(format!("spectrum archive: {e}")))
            })
            .collect()
    })
}

pub fn save_meta(meta: &MetaClassifier) -> Result<Vec<u8>> {
    let model = save_model(meta.encoder())?;
    let mut w = Writer::default();
    w.buf.extend_from_slice(META_MAGIC);
    w.u32(VERSION as usize)?;
    w.u32(model.len())?;
    w.buf.extend_from_slice(&model);
    w.u32(meta.latent_dim())?;
    w.f32s(meta.center());
    match meta.threshold() {
        Some(t) => {
            w.u8(1);
            w.buf.extend_from_slice(&t.to_le_bytes());
        }
        None => {
            w.u8(0);
            w.buf.extend_from_slice(&0f64.to_le_bytes());
        }
    }
    Ok(w.finish())
}

pub fn load_meta(bytes: &[u8]) -> Result<MetaClassifier> {
    decode(bytes, "meta file", META_MAGIC, |r| {
        let len = r.u32("encoder length")?;
        let encoder = load_model(r.take(len, "encoder")?)?;
        let d = r.u32("latent dim")?;
        let center = r.f32s(d, "centre")?;
        let flag = r.u8("threshold flag")?;
        let tau = r.f64("threshold")?;
        let threshold = match flag {
            0 => None,
            1 => Some(tau),
            other => return Err(Error::format(format!("meta file: bad threshold flag {other}"))),
        };
        MetaClassifier::new(encoder, center, threshold).map_err(|e| Error::format(format!("meta file: {e}")))
    })
}

pub fn save_model_file(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    write_atomic(path.as_ref(), &save_model(model)?)
}

pub fn load_model_file(path: impl AsRef<Path>) -> Result<Model> {
    load_model(&fs::read(path)?)
}

pub fn save_spectra_file(path: impl AsRef<Path>, spectra: &[SpectrumImage]) -> Result<()> {
    write_atomic(path.as_ref(), &save_spectra(spectra)?)
}

pub fn load_spectra_file(path: impl AsRef<Path>) -> Result<Vec<SpectrumImage>> {
    load_spectra(&fs::read(path)?)
}

pub fn save_meta_file(path: impl AsRef<Path>, meta: &MetaClassifier) -> Result<()> {
    write_atomic(path.as_ref(), &save_meta(meta)?)
}

pub fn load_meta_file(path: impl AsRef<Path>) -> Result<MetaClassifier> {
    load_meta(&fs::read(path)?)
}

/// Pretty JSON followed by a newline, written atomically.
pub fn save_json<T: serde::Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path.as_ref(), &bytes)
}
