use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset: offset as u64,
            detail: "truncated header".into(),
        })
}

/// `(count, rows, cols, pixels)` from an unsigned-byte rank-3 IDX file.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = read_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: format!("bad image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        });
    }
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let need = count * rows * cols;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(Error::Format {
            offset: (16 + payload.len()) as u64,
            detail: format!("truncated image payload: need {need} bytes, have {}", payload.len()),
        });
    }
    Ok((count, rows, cols, &payload[..need]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = read_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: format!("bad label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        });
    }
    let count = read_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(Error::Format {
            offset: (8 + payload.len()) as u64,
            detail: format!("truncated label payload: need {count} bytes, have {}", payload.len()),
        });
    }
    Ok(&payload[..count])
}

/// Loads IDX images (scaled to [0, 1], then normalized) and optional labels.
pub fn load_idx(images: impl AsRef<Path>, labels: Option<&Path>) -> Result<Dataset> {
    let images = images.as_ref();
    let img_bytes = fs::read(images).map_err(|e| Error::io(images, e))?;
    let (count, rows, cols, pixels) = parse_idx_images(&img_bytes)?;
    if count == 0 {
        return Err(Error::Degenerate("IDX file holds no images".into()));
    }
    let label_vec = match labels {
        Some(path) => {
            let lb = fs::read(path).map_err(|e| Error::io(path, e))?;
            let header_count = read_u32(&lb, 4)? as usize;
            if header_count != count {
                return Err(Error::Format {
                    offset: 4,
                    detail: format!("label count {header_count} != image count {count}"),
                });
            }
            Some(parse_idx_labels(&lb)?.iter().map(|&b| b as usize).collect())
        }
        None => None,
    };
    let raw = Tensor::matrix(
        count,
        rows * cols,
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    )?;
    let name = images
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, raw, label_vec, Some((rows, cols)))
}

pub fn write_idx_images(
    path: impl AsRef<Path>,
    rows: usize,
    cols: usize,
    pixels: &[u8],
) -> Result<()> {
    let path = path.as_ref();
    let count = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for v in [count, rows, cols] {
        out.extend_from_slice(&(v as u32).to_be_bytes());
    }
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_bytes() -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        b.extend_from_slice(&[0, 255, 255, 0, 0, 0, 255, 255]);
        b
    }

    #[test]
    fn hand_built_images_and_labels() {
        let b = image_bytes();
        let (n, r, c, px) = parse_idx_images(&b).unwrap();
        assert_eq!((n, r, c), (2, 2, 2));
        let raw: Vec<f64> = px.iter().map(|&p| p as f64 / 255.0).collect();
        assert_eq!(raw, vec![0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0]);

        let l = [0u8, 0, 8, 1, 0, 0, 0, 2, 3, 7];
        assert_eq!(parse_idx_labels(&l).unwrap(), &[3, 7]);
    }

    #[test]
    fn bad_magic_and_truncation_report_offsets() {
        let mut b = image_bytes();
        b[3] = 1;
        match parse_idx_images(&b) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
        let b = image_bytes();
        match parse_idx_images(&b[..20]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 20),
            other => panic!("{other:?}"),
        }
        assert!(parse_idx_images(&b[..10]).is_err());
    }

    #[test]
    fn label_count_mismatch_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        std::fs::write(&ip, image_bytes()).unwrap();
        write_idx_labels(&lp, &[1, 2, 3]).unwrap();
        assert!(matches!(load_idx(&ip, Some(&lp)), Err(Error::Format { offset: 4, .. })));

        write_idx_labels(&lp, &[3, 7]).unwrap();
        let ds = load_idx(&ip, Some(&lp)).unwrap();
        assert_eq!(ds.labels, Some(vec![3, 7]));
        assert_eq!(ds.image_shape, Some((2, 2)));
        assert!((ds.mean_sq_norm() - 1.0).abs() < 1e-12);
        // raw pixels are recovered by undoing the global scale
        assert!((ds.x.at(0, 1) / ds.scale - 1.0).abs() < 1e-12);
    }

    #[test]
    fn write_then_parse() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        write_idx_images(&p, 1, 3, &[1, 2, 3, 4, 5, 6]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let (n, r, c, px) = parse_idx_images(&bytes).unwrap();
        assert_eq!((n, r, c, px), (2, 1, 3, &[1u8, 2, 3, 4, 5, 6][..]));
    }
}
