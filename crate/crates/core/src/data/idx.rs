use std::fs;
use std::path::Path;

use super::{scale_pixels, unscale_pixel, Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Unsigned-byte, rank-3 IDX.
pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
/// Unsigned-byte, rank-1 IDX.
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

const MNIST_CLASSES: usize = 10;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let word = bytes.get(at..at + 4).ok_or(Error::Truncated {
        needed: at + 4,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(word.try_into().expect("4 bytes")))
}

fn expect_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = be_u32(bytes, 0)?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

fn body(bytes: &[u8], header: usize, len: usize) -> Result<&[u8]> {
    let needed = header
        .checked_add(len)
        .ok_or_else(|| Error::format("IDX dimensions overflow"))?;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            needed,
            found: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(Error::format(format!(
            "{} trailing bytes after IDX payload",
            bytes.len() - needed
        )));
    }
    Ok(&bytes[header..])
}

/// Header fields and raw pixels of an IDX image file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages<'a> {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: &'a [u8],
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages<'_>> {
    expect_magic(bytes, IDX_IMAGE_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let len = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::format("IDX dimensions overflow"))?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body(bytes, 16, len)?,
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    expect_magic(bytes, IDX_LABEL_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    body(bytes, 8, count)
}

/// Builds a dataset from the contents of an image and a label IDX file.
pub fn parse_mnist(image_bytes: &[u8], label_bytes: &[u8]) -> Result<Dataset> {
    let images = parse_idx_images(image_bytes)?;
    let labels = parse_idx_labels(label_bytes)?;
    if labels.len() != images.count {
        return Err(Error::format(format!(
            "{} images but {} labels",
            images.count,
            labels.len()
        )));
    }
    let tensor = Tensor::new(
        [images.count, 1, images.rows, images.cols],
        scale_pixels(images.pixels),
    )?;
    Dataset::new(
        tensor,
        labels.iter().map(|&l| l as usize).collect(),
        MNIST_CLASSES,
    )
}

pub fn load_mnist_idx(image_path: impl AsRef<Path>, label_path: impl AsRef<Path>) -> Result<Dataset> {
    parse_mnist(&fs::read(image_path)?, &fs::read(label_path)?)
}

/// Loads a split from a directory holding the standard uncompressed file names.
pub fn load_mnist_dir(dir: &Path, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    load_mnist_idx(
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

/// Serializes single-channel images back to IDX bytes.
pub fn encode_idx_images(dataset: &Dataset) -> Result<Vec<u8>> {
    let (c, h, w) = dataset.image_shape();
    if c != 1 {
        return Err(Error::format(format!("IDX images need 1 channel, found {c}")));
    }
    let mut out = Vec::with_capacity(16 + dataset.images.len());
    out.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    for dim in [dataset.len(), h, w] {
        out.extend_from_slice(&(dim as u32).to_be_bytes());
    }
    out.extend(dataset.images.data().iter().map(|&v| unscale_pixel(v)));
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&l| l as u8));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(count: u32, rows: u32, cols: u32) -> (Vec<u8>, Vec<u8>) {
        let mut img = Vec::new();
        img.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
        for d in [count, rows, cols] {
            img.extend_from_slice(&d.to_be_bytes());
        }
        img.extend((0..count * rows * cols).map(|i| (i * 37 % 256) as u8));
        let mut lab = Vec::new();
        lab.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
        lab.extend_from_slice(&count.to_be_bytes());
        lab.extend((0..count).map(|i| (i % 10) as u8));
        (img, lab)
    }

    #[test]
    fn parses_and_scales() {
        let (img, mut lab) = synthetic(3, 2, 4);
        lab[8 + 1] = 7;
        let ds = parse_mnist(&img, &lab).unwrap();
        assert_eq!(ds.images.shape(), &[3, 1, 2, 4]);
        assert_eq!(ds.labels[1], 7);
        assert_eq!(ds.images.data()[1], 37.0 / 255.0);
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let (img, lab) = synthetic(5, 7, 3);
        let ds = parse_mnist(&img, &lab).unwrap();
        assert_eq!(encode_idx_images(&ds).unwrap(), img);
        assert_eq!(encode_idx_labels(&ds.labels), lab);
    }

    #[test]
    fn swapped_files_report_observed_magic() {
        let (img, lab) = synthetic(2, 2, 2);
        let err = parse_mnist(&lab, &img).unwrap_err();
        assert!(matches!(
            err,
            Error::BadMagic {
                expected: IDX_IMAGE_MAGIC,
                found: IDX_LABEL_MAGIC
            }
        ));
        assert!(err.to_string().contains("0x00000801"), "{err}");
    }

    #[test]
    fn truncated_payload_is_length_error() {
        let (img, lab) = synthetic(4, 3, 3);
        assert!(matches!(
            parse_mnist(&img[..img.len() - 1], &lab),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(parse_idx_labels(&lab[..6]), Err(Error::Truncated { .. })));
    }

    #[test]
    fn label_out_of_range() {
        let (img, mut lab) = synthetic(2, 1, 1);
        lab[8] = 10;
        assert!(matches!(parse_mnist(&img, &lab), Err(Error::LabelRange { .. })));
    }

    #[test]
    fn count_mismatch() {
        let (img, _) = synthetic(3, 1, 1);
        let (_, lab) = synthetic(2, 1, 1);
        assert!(matches!(parse_mnist(&img, &lab), Err(Error::Format(_))));
    }
}
