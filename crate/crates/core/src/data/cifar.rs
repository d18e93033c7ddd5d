use std::fs;
use std::path::Path;

use super::{scale_pixels, unscale_pixel, Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One label byte followed by a 3 x 32 x 32 image in planar RGB order.
pub const CIFAR10_RECORD_LEN: usize = 1 + IMAGE_LEN;
const IMAGE_LEN: usize = 3 * 32 * 32;
const CIFAR10_CLASSES: usize = 10;

pub fn parse_cifar10(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() % CIFAR10_RECORD_LEN != 0 {
        return Err(Error::format(format!(
            "CIFAR-10 file length {} is not a multiple of {CIFAR10_RECORD_LEN}",
            bytes.len()
        )));
    }
    let count = bytes.len() / CIFAR10_RECORD_LEN;
    let mut labels = Vec::with_capacity(count);
    let mut pixels = Vec::with_capacity(count * IMAGE_LEN);
    for record in bytes.chunks_exact(CIFAR10_RECORD_LEN) {
        let label = record[0] as usize;
        if label >= CIFAR10_CLASSES {
            return Err(Error::LabelRange {
                label,
                classes: CIFAR10_CLASSES,
            });
        }
        labels.push(label);
        pixels.extend(scale_pixels(&record[1..]));
    }
    Dataset::new(Tensor::new([count, 3, 32, 32], pixels)?, labels, CIFAR10_CLASSES)
}

/// Concatenates the records of several batch files.
pub fn load_cifar10_bin<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    let mut bytes = Vec::new();
    for p in paths {
        let chunk = fs::read(p)?;
        if chunk.len() % CIFAR10_RECORD_LEN != 0 {
            return Err(Error::format(format!(
                "{}: length {} is not a multiple of {CIFAR10_RECORD_LEN}",
                p.as_ref().display(),
                chunk.len()
            )));
        }
        bytes.extend(chunk);
    }
    parse_cifar10(&bytes)
}

/// `data_batch_1..5.bin` for training, `test_batch.bin` for testing.
pub fn load_cifar10_dir(dir: &Path, split: Split) -> Result<Dataset> {
    let files: Vec<_> = match split {
        Split::Train => (1..=5)
            .map(|i| dir.join(format!("data_batch_{i}.bin")))
            .collect(),
        Split::Test => vec![dir.join("test_batch.bin")],
    };
    load_cifar10_bin(&files)
}

pub fn encode_cifar10(dataset: &Dataset) -> Result<Vec<u8>> {
    if dataset.image_shape() != (3, 32, 32) {
        return Err(Error::format(format!(
            "CIFAR-10 records need 3x32x32 images, found {:?}",
            dataset.image_shape()
        )));
    }
    let mut out = Vec::with_capacity(dataset.len() * CIFAR10_RECORD_LEN);
    for i in 0..dataset.len() {
        out.push(dataset.labels[i] as u8);
        out.extend(dataset.images.row(i).iter().map(|&v| unscale_pixel(v)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(labels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for (r, &l) in labels.iter().enumerate() {
            out.push(l);
            out.extend((0..IMAGE_LEN).map(|i| ((i * 7 + r * 13) % 256) as u8));
        }
        out
    }

    #[test]
    fn parses_planar_records() {
        let mut bytes = records(&[3, 9]);
        bytes[1] = 255;
        let ds = parse_cifar10(&bytes).unwrap();
        assert_eq!(ds.images.shape(), &[2, 3, 32, 32]);
        assert_eq!(ds.labels, vec![3, 9]);
        assert_eq!(ds.images.data()[0], 1.0);
        // first green-plane pixel of record 0
        assert_eq!(ds.images.data()[1024], bytes[1 + 1024] as f32 / 255.0);
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let bytes = records(&[0, 1, 2, 9]);
        let ds = parse_cifar10(&bytes).unwrap();
        assert_eq!(encode_cifar10(&ds).unwrap(), bytes);
    }

    #[test]
    fn bad_length_and_label() {
        let bytes = records(&[1]);
        assert!(matches!(parse_cifar10(&bytes[..100]), Err(Error::Format(_))));
        assert!(matches!(
            parse_cifar10(&records(&[11])),
            Err(Error::LabelRange { label: 11, .. })
        ));
    }

    #[test]
    fn standard_batch_record_count() {
        assert_eq!(30_730_000 / CIFAR10_RECORD_LEN, 10_000);
        assert_eq!(30_730_000 % CIFAR10_RECORD_LEN, 0);
    }
}
