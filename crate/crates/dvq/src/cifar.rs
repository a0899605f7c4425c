//! CIFAR-10 binary batch loader.
//!
//! The on-disk format (`data_batch_*.bin`, `test_batch.bin`) is a flat
//! sequence of 3073-byte records: one label byte (0..=9) followed by
//! 3072 pixel bytes stored **planar** — 1024 red, 1024 green, 1024 blue,
//! each plane row-major over the 32x32 image. The loader validates the
//! length and labels, rescales bytes to `[0, 1]`, and re-interleaves the
//! planes into the `(y * w + x) * c + channel` layout the rest of the
//! crate uses, producing an [`ImageDataset`].

use crate::error::{Error, Result};
use crate::image::{ImageDataset, ImageShape};
use crate::matrix::Matrix;
use std::io::Read;
use std::path::Path;

/// Edge length of a CIFAR-10 image.
pub const CIFAR_EDGE: usize = 32;
/// Color channels per image.
pub const CIFAR_CHANNELS: usize = 3;
/// Number of classes; labels are `0..CIFAR_CLASSES`.
pub const CIFAR_CLASSES: u8 = 10;
/// Bytes per record: one label plus three 1024-byte color planes.
pub const CIFAR_RECORD_BYTES: usize = 1 + CIFAR_EDGE * CIFAR_EDGE * CIFAR_CHANNELS;

/// Checks that `len` bytes form whole CIFAR records and returns how many.
pub fn validate_cifar_len(len: usize) -> Result<usize> {
    if len == 0 {
        return Err(Error::invalid("a cifar batch must not be empty"));
    }
    if !len.is_multiple_of(CIFAR_RECORD_BYTES) {
        return Err(Error::Format {
            offset: (len - len % CIFAR_RECORD_BYTES) as u64,
            message: format!(
                "cifar batches are {CIFAR_RECORD_BYTES}-byte records, but {len} bytes leave a {}-byte tail",
                len % CIFAR_RECORD_BYTES
            ),
        });
    }
    Ok(len / CIFAR_RECORD_BYTES)
}

/// Decodes raw CIFAR-10 batch bytes into an [`ImageDataset`].
///
/// Pixels are rescaled to `[0, 1]` (`byte / 255`) and converted from the
/// planar file layout to interleaved channels. Labels outside
/// `0..CIFAR_CLASSES` are rejected with the offending byte offset.
pub fn decode_cifar_records(bytes: &[u8]) -> Result<ImageDataset> {
    let n = validate_cifar_len(bytes.len())?;
    let plane = CIFAR_EDGE * CIFAR_EDGE;
    let pixels_per_image = plane * CIFAR_CHANNELS;
    let mut labels = Vec::with_capacity(n);
    let mut data = vec![0.0f64; n * pixels_per_image];
    for (i, record) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = record[0];
        if label >= CIFAR_CLASSES {
            return Err(Error::Format {
                offset: (i * CIFAR_RECORD_BYTES) as u64,
                message: format!("label {label} is outside 0..{CIFAR_CLASSES}"),
            });
        }
        labels.push(label);
        let planes = &record[1..];
        let image = &mut data[i * pixels_per_image..(i + 1) * pixels_per_image];
        for ch in 0..CIFAR_CHANNELS {
            for (pos, &byte) in planes[ch * plane..(ch + 1) * plane].iter().enumerate() {
                image[pos * CIFAR_CHANNELS + ch] = f64::from(byte) / 255.0;
            }
        }
    }
    ImageDataset::new(
        Matrix::from_vec(n, pixels_per_image, data)?,
        ImageShape::new(CIFAR_EDGE, CIFAR_EDGE, CIFAR_CHANNELS),
        Some(labels),
    )
}

/// Reads one CIFAR-10 batch from a stream.
pub fn read_cifar<R: Read>(mut r: R) -> Result<ImageDataset> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_cifar_records(&bytes)
}

/// Loads and concatenates several batch files (e.g. the five training
/// batches) in the order given.
pub fn read_cifar_files<P: AsRef<Path>>(paths: &[P]) -> Result<ImageDataset> {
    if paths.is_empty() {
        return Err(Error::invalid("at least one cifar batch file is required"));
    }
    let mut bytes = Vec::new();
    for path in paths {
        let mut file = std::fs::File::open(path)?;
        file.read_to_end(&mut bytes)?;
    }
    decode_cifar_records(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Builds one synthetic record: `label`, then planes filled with
    /// `fill`, with a few hand-set bytes applied afterward.
    fn record(label: u8, fill: u8, edits: &[(usize, u8)]) -> Vec<u8> {
        let mut rec = vec![fill; CIFAR_RECORD_BYTES];
        rec[0] = label;
        for &(pos, value) in edits {
            rec[1 + pos] = value;
        }
        rec
    }

    #[test]
    fn length_validation_counts_whole_records() {
        assert_eq!(validate_cifar_len(CIFAR_RECORD_BYTES).unwrap(), 1);
        assert_eq!(validate_cifar_len(5 * CIFAR_RECORD_BYTES).unwrap(), 5);
        assert!(validate_cifar_len(0).is_err());
        let err = validate_cifar_len(2 * CIFAR_RECORD_BYTES + 7).unwrap_err();
        match err {
            Error::Format { offset, .. } => assert_eq!(offset, 2 * CIFAR_RECORD_BYTES as u64),
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn planes_are_interleaved_and_rescaled() {
        // Pixel (y=0, x=0): R=255, G=0, B=51. Pixel (y=1, x=2) green=102.
        let plane = CIFAR_EDGE * CIFAR_EDGE;
        let rec = record(
            7,
            0,
            &[
                (0, 255),
                (2 * plane, 51),
                (plane + CIFAR_EDGE + 2, 102),
            ],
        );
        let ds = decode_cifar_records(&rec).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.shape, ImageShape::new(32, 32, 3));
        assert_eq!(ds.labels.as_deref(), Some(&[7u8][..]));
        let img = ds.images.row(0);
        assert_eq!(img[0], 1.0); // (0,0) red
        assert_eq!(img[1], 0.0); // (0,0) green
        assert_eq!(img[2], 51.0 / 255.0); // (0,0) blue
        let base = (CIFAR_EDGE + 2) * CIFAR_CHANNELS;
        assert_eq!(img[base + 1], 102.0 / 255.0); // (1,2) green
        // Everything else stayed zero.
        let lit = img.iter().filter(|&&v| v != 0.0).count();
        assert_eq!(lit, 3);
    }

    #[test]
    fn multiple_records_concatenate_in_order() {
        let mut bytes = record(3, 10, &[]);
        bytes.extend(record(9, 20, &[]));
        let ds = decode_cifar_records(&bytes).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels.as_deref(), Some(&[3u8, 9][..]));
        assert_eq!(ds.images.row(0)[0], 10.0 / 255.0);
        assert_eq!(ds.images.row(1)[0], 20.0 / 255.0);
    }

    #[test]
    fn out_of_range_label_names_the_record_offset() {
        let mut bytes = record(0, 0, &[]);
        bytes.extend(record(10, 0, &[]));
        match decode_cifar_records(&bytes) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, CIFAR_RECORD_BYTES as u64);
                assert!(message.contains("label 10"), "{message}");
            }
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_stream_is_rejected() {
        let bytes = record(1, 0, &[]);
        assert!(read_cifar(&bytes[..bytes.len() - 1]).is_err());
    }
}
