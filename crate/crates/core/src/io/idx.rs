//! IDX files as distributed with MNIST: a big-endian magic word whose third
//! byte is the element type (0x08 = u8) and fourth the rank, then one u32
//! size per dimension, then the payload.

use std::path::{Path, PathBuf};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const IMAGES_MAGIC: u32 = 0x0000_0803;

/// A parsed unsigned-byte IDX array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn format_error(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), offset: offset as u64, message: message.into() }
}

/// Parses IDX bytes; `path` is only used in diagnostics.
pub fn parse_idx(bytes: &[u8], path: &Path) -> Result<IdxArray> {
    let word = |at: usize| -> Result<u32> {
        bytes.get(at..at + 4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]])).ok_or_else(|| {
            format_error(path, bytes.len(), format!("file ends inside the header (needs byte {})", at + 4))
        })
    };
    let magic = word(0)?;
    if magic != LABELS_MAGIC && magic != IMAGES_MAGIC {
        return Err(format_error(path, 0, format!("bad magic 0x{magic:08x} (expected 0x00000801 or 0x00000803)")));
    }
    let rank = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(rank);
    for d in 0..rank {
        dims.push(word(4 + 4 * d)? as usize);
    }
    if dims[0] == 0 {
        return Err(Error::EmptyDataset);
    }
    let header = 4 + 4 * rank;
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_error(path, 4, format!("dimensions {dims:?} overflow")))?;
    let payload = &bytes[header..];
    if payload.len() < len {
        return Err(format_error(
            path,
            bytes.len(),
            format!("truncated payload: {} of {len} bytes present", payload.len()),
        ));
    }
    if payload.len() > len {
        return Err(format_error(path, header + len, "trailing bytes after the payload"));
    }
    Ok(IdxArray { magic, dims, data: payload.to_vec() })
}

pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxArray> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes, path)
}

/// Images as a `[n, 1, rows, cols]` tensor scaled to `[0, 1]`.
pub fn images_tensor(idx: &IdxArray, path: &Path) -> Result<Tensor> {
    if idx.magic != IMAGES_MAGIC {
        return Err(format_error(path, 0, "not an image file (magic 0x00000803)"));
    }
    let shape = vec![idx.dims[0], 1, idx.dims[1], idx.dims[2]];
    Tensor::new(shape, idx.data.iter().map(|&b| f64::from(b) / 255.0).collect())
}

pub fn labels_vec(idx: &IdxArray, path: &Path) -> Result<Vec<usize>> {
    if idx.magic != LABELS_MAGIC {
        return Err(format_error(path, 0, "not a label file (magic 0x00000801)"));
    }
    Ok(idx.data.iter().map(|&b| usize::from(b)).collect())
}

/// Loads an IDX file as a tensor: images become `[n, 1, rows, cols]` in
/// `[0, 1]`, labels a `[n]` tensor of class indices.
pub fn load_idx(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let idx = read_idx(path)?;
    if idx.magic == IMAGES_MAGIC {
        images_tensor(&idx, path)
    } else {
        Tensor::new(vec![idx.dims[0]], idx.data.iter().map(|&b| f64::from(b)).collect())
    }
}

/// Pairs an image file with a label file and checks labels against
/// `classes`.
pub fn load_labelled(images: impl AsRef<Path>, labels: impl AsRef<Path>, classes: usize) -> Result<Dataset> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let x = images_tensor(&read_idx(ip)?, ip)?;
    let y = labels_vec(&read_idx(lp)?, lp)?;
    if x.batch() != y.len() {
        return Err(format_error(lp, 4, format!("{} labels for {} images in {}", y.len(), x.batch(), ip.display())));
    }
    let data = Dataset::classification(x, y)?;
    data.check_classes(classes)?;
    Ok(data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Loads `train-*` or `t10k-*` files from an MNIST-layout directory.
pub fn load_split(dir: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let dir: PathBuf = dir.as_ref().to_path_buf();
    load_labelled(dir.join(format!("{prefix}-images-idx3-ubyte")), dir.join(format!("{prefix}-labels-idx1-ubyte")), 10)
}

/// Encodes an unsigned-byte IDX array.
pub fn encode_idx(magic: u32, dims: &[u32], data: &[u8]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("fixture")
    }

    #[test]
    fn two_image_fixture() {
        let bytes = encode_idx(IMAGES_MAGIC, &[2, 2, 2], &[0, 255, 51, 102, 0, 0, 0, 255]);
        let t = images_tensor(&parse_idx(&bytes, p()).unwrap(), p()).unwrap();
        assert_eq!(t.shape(), &[2, 1, 2, 2]);
        assert_eq!(&t.data()[..4], &[0.0, 1.0, 0.2, 0.4]);
    }

    #[test]
    fn zero_items_is_empty_dataset() {
        let bytes = encode_idx(LABELS_MAGIC, &[0], &[]);
        let err = parse_idx(&bytes, p()).unwrap_err();
        assert_eq!(err.to_string(), "empty dataset");
    }

    #[test]
    fn bad_magic_and_truncation_name_offsets() {
        let err = parse_idx(&[0, 0, 9, 3, 0], p()).unwrap_err();
        assert!(err.to_string().contains("byte offset 0"), "{err}");
        let bytes = encode_idx(LABELS_MAGIC, &[5], &[1, 2]);
        let err = parse_idx(&bytes, p()).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn dimension_overflow_is_reported() {
        let bytes = encode_idx(IMAGES_MAGIC, &[u32::MAX, u32::MAX, u32::MAX], &[]);
        let err = parse_idx(&bytes, p()).unwrap_err();
        assert!(err.to_string().contains("overflow") || err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn out_of_range_label_fails_at_assembly() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("i");
        let lp = dir.path().join("l");
        std::fs::write(&ip, encode_idx(IMAGES_MAGIC, &[1, 1, 1], &[7])).unwrap();
        std::fs::write(&lp, encode_idx(LABELS_MAGIC, &[1], &[12])).unwrap();
        let err = load_labelled(&ip, &lp, 10).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { label: 12, .. }));
    }
}
