//! IDX image/label file ingestion.
//!
//! Only the two record types the digit benchmark uses are supported:
//! unsigned-byte images (magic 0x00000803) and unsigned-byte labels
//! (0x00000801), both with big-endian 32-bit headers. The parser is total:
//! any byte string yields a dataset or a typed error, never a panic.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum IdxError {
    #[error("bad magic 0x{got:08x}, expected 0x{expected:08x}")]
    WrongMagic { expected: u32, got: u32 },
    #[error("truncated file: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("dimension product overflows")]
    DimsOverflow,
    #[error("label byte {value} at index {index} exceeds 9")]
    LabelOutOfRange { index: usize, value: u8 },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("manifest line {line} is not \"filename<TAB>byte_size\"")]
    ManifestParse { line: usize },
    #[error("manifest: {file} has {actual} bytes, expected {expected}")]
    ManifestMismatch {
        file: String,
        expected: u64,
        actual: u64,
    },
    #[error("io: {0}")]
    Io(String),
}

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// A parsed image tensor: `count` images of `rows × cols` pixels scaled
/// into `[0,1]` by 1/255, flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f64>,
}

fn read_u32_be(bytes: &[u8], at: usize) -> Result<u32, IdxError> {
    let end = at.checked_add(4).ok_or(IdxError::DimsOverflow)?;
    if end > bytes.len() {
        return Err(IdxError::Truncated {
            expected: end,
            actual: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes(bytes[at..end].try_into().unwrap()))
}

/// Parse an unsigned-byte IDX image file.
pub fn parse_idx_images(bytes: &[u8]) -> Result<RawImages, IdxError> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(IdxError::WrongMagic {
            expected: IMAGES_MAGIC,
            got: magic,
        });
    }
    let count = read_u32_be(bytes, 4)? as usize;
    let rows = read_u32_be(bytes, 8)? as usize;
    let cols = read_u32_be(bytes, 12)? as usize;
    let payload = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or(IdxError::DimsOverflow)?;
    let expected = payload.checked_add(16).ok_or(IdxError::DimsOverflow)?;
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    let pixels = bytes[16..expected]
        .iter()
        .map(|b| f64::from(*b) / 255.0)
        .collect();
    Ok(RawImages {
        count,
        rows,
        cols,
        pixels,
    })
}

/// Parse an unsigned-byte IDX label file; every label must be a digit.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(IdxError::WrongMagic {
            expected: LABELS_MAGIC,
            got: magic,
        });
    }
    let count = read_u32_be(bytes, 4)? as usize;
    let expected = count.checked_add(8).ok_or(IdxError::DimsOverflow)?;
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    let labels = &bytes[8..expected];
    for (index, value) in labels.iter().enumerate() {
        if *value > 9 {
            return Err(IdxError::LabelOutOfRange {
                index,
                value: *value,
            });
        }
    }
    Ok(labels.to_vec())
}

/// Serialize images back to IDX bytes (pixels are recovered exactly from
/// the 1/255 scaling).
pub fn write_idx_images(images: &RawImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.count as u32).to_be_bytes());
    out.extend_from_slice(&(images.rows as u32).to_be_bytes());
    out.extend_from_slice(&(images.cols as u32).to_be_bytes());
    out.extend(images.pixels.iter().map(|p| (p * 255.0).round() as u8));
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// A labeled image dataset with pixels in `[0,1]`.
#[derive(Debug, Clone)]
pub struct ImageDataset {
    pub images: RawImages,
    pub labels: Vec<u8>,
    pub split: String,
}

impl ImageDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixel_dim(&self) -> usize {
        self.images.rows * self.images.cols
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let d = self.pixel_dim();
        &self.images.pixels[i * d..(i + 1) * d]
    }

    /// Combine parsed images and labels, checking the counts agree.
    pub fn new(images: RawImages, labels: Vec<u8>, split: &str) -> Result<Self, IdxError> {
        if images.count != labels.len() {
            return Err(IdxError::CountMismatch {
                images: images.count,
                labels: labels.len(),
            });
        }
        Ok(ImageDataset {
            images,
            labels,
            split: split.to_string(),
        })
    }

    /// Load one split from an image file and a label file.
    pub fn load(
        images_path: &std::path::Path,
        labels_path: &std::path::Path,
        split: &str,
    ) -> Result<Self, IdxError> {
        let img_bytes = std::fs::read(images_path).map_err(|e| IdxError::Io(e.to_string()))?;
        let lbl_bytes = std::fs::read(labels_path).map_err(|e| IdxError::Io(e.to_string()))?;
        ImageDataset::new(
            parse_idx_images(&img_bytes)?,
            parse_idx_labels(&lbl_bytes)?,
            split,
        )
    }
}

/// Validate `filename<TAB>byte_size` manifest lines against files in `dir`;
/// `#` starts a comment.
pub fn validate_manifest(manifest: &str, dir: &std::path::Path) -> Result<(), IdxError> {
    for (i, line) in manifest.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, size) = line
            .split_once('\t')
            .ok_or(IdxError::ManifestParse { line: i + 1 })?;
        let expected: u64 = size
            .trim()
            .parse()
            .map_err(|_| IdxError::ManifestParse { line: i + 1 })?;
        let meta = std::fs::metadata(dir.join(name)).map_err(|e| IdxError::Io(e.to_string()))?;
        if meta.len() != expected {
            return Err(IdxError::ManifestMismatch {
                file: name.to_string(),
                expected,
                actual: meta.len(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_pixel_file() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&1u32.to_be_bytes());
        bytes.extend_from_slice(&1u32.to_be_bytes());
        bytes.extend_from_slice(&1u32.to_be_bytes());
        bytes.push(255);
        let parsed = parse_idx_images(&bytes).unwrap();
        assert_eq!(parsed.count, 1);
        assert_eq!(parsed.pixels, vec![1.0]);
    }

    #[test]
    fn truncation_reports_lengths() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&3u32.to_be_bytes());
        bytes.extend_from_slice(&3u32.to_be_bytes());
        bytes.extend_from_slice(&[0u8; 10]); // needs 18
        assert_eq!(
            parse_idx_images(&bytes),
            Err(IdxError::Truncated {
                expected: 34,
                actual: 26
            })
        );
    }

    #[test]
    fn wrong_magic_is_typed() {
        let bytes = [0u8, 0, 8, 4, 0, 0, 0, 0];
        assert!(matches!(
            parse_idx_images(&bytes),
            Err(IdxError::WrongMagic { .. })
        ));
        assert!(matches!(
            parse_idx_labels(&bytes),
            Err(IdxError::WrongMagic { .. })
        ));
    }

    #[test]
    fn labels_round_trip_and_ranges() {
        let bytes = write_idx_labels(&[0, 9]);
        assert_eq!(parse_idx_labels(&bytes).unwrap(), vec![0, 9]);

        let mut bad = write_idx_labels(&[3]);
        *bad.last_mut().unwrap() = 10;
        assert_eq!(
            parse_idx_labels(&bad),
            Err(IdxError::LabelOutOfRange { index: 0, value: 10 })
        );

        let empty = write_idx_labels(&[]);
        assert_eq!(parse_idx_labels(&empty).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn images_round_trip_byte_exact() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&3u32.to_be_bytes());
        bytes.extend((0u8..12).map(|i| i * 21));
        let parsed = parse_idx_images(&bytes).unwrap();
        assert_eq!(write_idx_images(&parsed), bytes);
    }

    #[test]
    fn pixel_scaling_is_monotone_in_byte_value() {
        let mut prev = -1.0;
        for k in 0u8..=255 {
            let v = f64::from(k) / 255.0;
            assert!(v > prev);
            assert!((0.0..=1.0).contains(&v));
            prev = v;
        }
    }

    #[test]
    fn dataset_count_mismatch() {
        let imgs = RawImages {
            count: 2,
            rows: 1,
            cols: 1,
            pixels: vec![0.0, 0.5],
        };
        assert!(matches!(
            ImageDataset::new(imgs, vec![1], "train"),
            Err(IdxError::CountMismatch { .. })
        ));
    }

    #[test]
    fn manifest_validation() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.idx"), b"12345").unwrap();
        validate_manifest("# comment\na.idx\t5\n", dir.path()).unwrap();
        assert!(matches!(
            validate_manifest("a.idx\t6\n", dir.path()),
            Err(IdxError::ManifestMismatch { .. })
        ));
        assert!(matches!(
            validate_manifest("a.idx 5\n", dir.path()),
            Err(IdxError::ManifestParse { line: 1 })
        ));
    }

    proptest! {
        // Totality: arbitrary bytes parse to Ok or a typed error, no panic.
        #[test]
        fn parser_total_on_arbitrary_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..2048)) {
            let _ = parse_idx_images(&bytes);
            let _ = parse_idx_labels(&bytes);
        }

        #[test]
        fn label_round_trip(labels in proptest::collection::vec(0u8..=9, 0..256)) {
            let bytes = write_idx_labels(&labels);
            prop_assert_eq!(parse_idx_labels(&bytes).unwrap(), labels);
        }
    }
}
