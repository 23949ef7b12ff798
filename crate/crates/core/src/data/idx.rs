//! IDX (MNIST-style) files: big-endian `u32` magic, `u32` dimensions, raw `u8` payload.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn u32(&mut self, field: &str) -> Result<u32> {
        let bytes = self.take(4, field)?;
        Ok(u32::from_be_bytes(bytes.try_into().unwrap()))
    }

    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::format(format!(
                "{} file truncated reading {field}: need {n} bytes at offset {}, file has {}",
                self.what,
                self.pos,
                self.buf.len()
            ))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

/// Parses an IDX image/label pair held in memory. Pixels are scaled by `1/255`.
pub fn parse_idx(images: &[u8], labels: &[u8], name: &str) -> Result<Dataset> {
    let mut ri = Reader {
        buf: images,
        pos: 0,
        what: "images",
    };
    let magic = ri.u32("magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(format!("bad images magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let count = ri.u32("count")? as usize;
    let rows = ri.u32("rows")? as usize;
    let cols = ri.u32("cols")? as usize;

    let mut rl = Reader {
        buf: labels,
        pos: 0,
        what: "labels",
    };
    let magic = rl.u32("magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(format!("bad labels magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let label_count = rl.u32("count")? as usize;
    if label_count != count {
        return Err(Error::format(format!("{count} images but {label_count} labels")));
    }

    let pixels = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format("image dimensions overflow"))?;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        let raw = ri.take(pixels, &format!("image {i}"))?;
        let data = raw.iter().map(|&b| f32::from(b) / 255.0).collect();
        out.push(Tensor::new(vec![rows, cols, 1], data)?);
    }
    let labels: Vec<usize> = rl.take(count, "labels")?.iter().map(|&b| usize::from(b)).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(name, out, labels, num_classes)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let name = images_path
        .file_stem()
        .map_or_else(|| "idx".to_string(), |s| s.to_string_lossy().into_owned());
    parse_idx(&fs::read(images_path)?, &fs::read(labels_path)?, &name)
}

/// Encodes a single-channel dataset as an IDX pair, quantizing pixels to `round(255 v)`.
pub fn encode_idx(dataset: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let (rows, cols) = match dataset.image_shape() {
        [] => (0, 0),
        [r, c, 1] | [r, c] => (*r, *c),
        other => {
            return Err(Error::shape(format!(
                "IDX stores single-channel images only, got {other:?}"
            )))
        }
    };
    if dataset.num_classes > 256 {
        return Err(Error::format("IDX labels are single bytes"));
    }
    let count = u32::try_from(dataset.len()).map_err(|_| Error::format("too many images for IDX"))?;
    let mut images = Vec::with_capacity(16 + dataset.len() * rows * cols);
    images.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&count.to_be_bytes());
    images.extend_from_slice(&(rows as u32).to_be_bytes());
    images.extend_from_slice(&(cols as u32).to_be_bytes());
    for im in &dataset.images {
        images.extend(im.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    let mut labels = Vec::with_capacity(8 + dataset.len());
    labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&count.to_be_bytes());
    labels.extend(dataset.labels.iter().map(|&l| l as u8));
    Ok((images, labels))
}

pub fn write_idx(dataset: &Dataset, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    let (images, labels) = encode_idx(dataset)?;
    crate::persist::write_atomic(images_path.as_ref(), &images)?;
    crate::persist::write_atomic(labels_path.as_ref(), &labels)?;
    Ok(())
}
