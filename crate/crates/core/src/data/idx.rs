//! IDX (MNIST-style) binary files: big-endian headers, unsigned-byte payload.

use std::fs;
use std::path::Path;

use super::{Dataset, Labels, Split};
use crate::error::{Error, Result};
use crate::Scalar;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw decoded image file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse {
            offset: offset as u64,
            message: "unexpected end of header".into(),
        })
}

fn read_payload(bytes: &[u8], offset: usize, len: usize) -> Result<&[u8]> {
    let end = offset.checked_add(len).ok_or_else(|| Error::Parse {
        offset: offset as u64,
        message: "payload size overflows".into(),
    })?;
    if bytes.len() < end {
        return Err(Error::Parse {
            offset: bytes.len() as u64,
            message: format!("truncated payload: expected {len} bytes starting at offset {offset}"),
        });
    }
    if bytes.len() > end {
        return Err(Error::Parse {
            offset: end as u64,
            message: format!("{} trailing bytes after payload", bytes.len() - end),
        });
    }
    Ok(&bytes[offset..end])
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad magic number {magic:#010x}, expected {expected:#010x}"),
        });
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let len = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Parse {
            offset: 4,
            message: "image dimensions overflow".into(),
        })?;
    let pixels = read_payload(bytes, 16, len)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    Ok(read_payload(bytes, 8, count)?.to_vec())
}

/// Loads an image/label file pair. Pixels are scaled to `[0, 1]` by `/255`.
pub fn load_idx<S: Scalar>(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset<S>> {
    let images = parse_idx_images(&fs::read(images_path)?)?;
    let labels = parse_idx_labels(&fs::read(labels_path)?)?;
    dataset_from_idx(images, labels)
}

pub(crate) fn dataset_from_idx<S: Scalar>(images: IdxImages, labels: Vec<u8>) -> Result<Dataset<S>> {
    if images.count != labels.len() {
        return Err(Error::Parse {
            offset: 4,
            message: format!("{} images but {} labels", images.count, labels.len()),
        });
    }
    let dim = (images.rows * images.cols).max(1);
    let scale = S::lit(255.0);
    let features = images
        .pixels
        .iter()
        .map(|&b| S::from_count(b as usize) / scale)
        .collect();
    Dataset::new(
        dim,
        features,
        Labels::Class(labels.into_iter().map(u32::from).collect()),
        Split::Train,
    )
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_small_images() {
        let img = writer::images(2, 2, &[0, 255, 128, 64, 1, 2, 3, 4]);
        let lab = writer::labels(&[7, 3]);
        let ds: Dataset<f64> =
            dataset_from_idx(parse_idx_images(&img).unwrap(), parse_idx_labels(&lab).unwrap()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.row(0), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
        assert!((ds.row(0)[2] - 0.50196).abs() < 1e-5);
        assert!((ds.row(0)[3] - 0.25098).abs() < 1e-5);
        assert_eq!(ds.labels(), &Labels::Class(vec![7, 3]));
    }

    #[test]
    fn empty_payload() {
        let img = writer::images(28, 28, &[]);
        let parsed = parse_idx_images(&img).unwrap();
        assert_eq!(parsed.count, 0);
        let ds: Dataset<f64> = dataset_from_idx(parsed, parse_idx_labels(&writer::labels(&[])).unwrap()).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let mut lab = writer::labels(&[1, 2]);
        lab[3] = 0x03;
        match parse_idx_labels(&lab) {
            Err(Error::Parse { offset, message }) => {
                assert_eq!(offset, 0);
                assert!(message.contains("magic"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_and_mismatched_files() {
        let mut img = writer::images(2, 2, &[1, 2, 3, 4]);
        img.pop();
        assert!(matches!(parse_idx_images(&img), Err(Error::Parse { offset: 19, .. })));
        assert!(matches!(
            parse_idx_labels(&[0, 0, 8]),
            Err(Error::Parse { offset: 0, .. })
        ));
        let img = parse_idx_images(&writer::images(1, 1, &[1, 2])).unwrap();
        let err = dataset_from_idx::<f64>(img, vec![0]).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn load_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        std::fs::write(&ip, writer::images(1, 3, &[0, 51, 255])).unwrap();
        std::fs::write(&lp, writer::labels(&[9])).unwrap();
        let ds: Dataset<f32> = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.row(0), &[0.0, 0.2, 1.0]);
    }

    proptest! {
        #[test]
        fn write_read_round_trip(rows in 1u32..5, cols in 1u32..5, count in 0usize..6, seed in any::<u64>()) {
            let n = (rows * cols) as usize * count;
            let pixels: Vec<u8> = (0..n).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8).collect();
            let labels: Vec<u8> = (0..count).map(|i| (i % 10) as u8).collect();
            let img = parse_idx_images(&writer::images(rows, cols, &pixels)).unwrap();
            prop_assert_eq!(img.rows as u32, rows);
            prop_assert_eq!(img.cols as u32, cols);
            prop_assert_eq!(&img.pixels, &pixels);
            prop_assert_eq!(parse_idx_labels(&writer::labels(&labels)).unwrap(), labels);
        }
    }
}
