//! Dataset ingestion, global normalization, batching and image augmentation.

mod augment;
mod batch;
mod idx;
mod synthetic;
mod table;

pub use augment::{augment, transform_image, AugmentParams};
pub use batch::{Batch, BatchIterator};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels};
pub use synthetic::gaussian_blobs;
pub use table::{load_table, parse_table};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// N×n samples after normalization.
    pub x: Tensor,
    pub labels: Option<Vec<usize>>,
    /// `(height, width)` when rows are flattened images.
    pub image_shape: Option<(usize, usize)>,
    /// Global factor applied by [`normalize`]; divide by it to recover raw values.
    pub scale: f64,
}

impl Dataset {
    /// Normalizes `raw` and wraps it.
    pub fn new(
        name: impl Into<String>,
        raw: Tensor,
        labels: Option<Vec<usize>>,
        image_shape: Option<(usize, usize)>,
    ) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != raw.rows() {
                return Err(Error::Contract(format!(
                    "{} labels for {} samples",
                    l.len(),
                    raw.rows()
                )));
            }
        }
        if let Some((h, w)) = image_shape {
            if h * w != raw.cols() {
                return Err(Error::Contract(format!(
                    "image shape {h}x{w} does not match {} features",
                    raw.cols()
                )));
            }
        }
        let (x, scale) = normalize(&raw)?;
        Ok(Dataset {
            name: name.into(),
            x,
            labels,
            image_shape,
            scale,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Number of distinct classes implied by the labels (max + 1).
    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m + 1))
    }

    /// First `n` samples (all of them when `n` exceeds the size).
    pub fn head(&self, n: usize) -> Result<Dataset> {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        let raw = Tensor::matrix(
            n,
            self.dim(),
            self.x.select_rows(&idx).into_data().iter().map(|v| v / self.scale).collect(),
        )?;
        Dataset::new(
            self.name.clone(),
            raw,
            self.labels.as_ref().map(|l| l[..n].to_vec()),
            self.image_shape,
        )
    }

    /// Mean over samples of `‖x_i‖² / n`.
    pub fn mean_sq_norm(&self) -> f64 {
        mean_sq_norm(&self.x)
    }
}

fn mean_sq_norm(x: &Tensor) -> f64 {
    let total: f64 = x.data().iter().map(|v| v * v).sum();
    total / (x.rows() * x.cols()) as f64
}

/// Scales the whole matrix by one factor `s = sqrt(N·n / Σ‖x_i‖²)` so that the
/// average of `‖x_i‖²/n` is exactly 1. Returns `(s·X, s)`.
pub fn normalize(x: &Tensor) -> Result<(Tensor, f64)> {
    if x.numel() == 0 {
        return Err(Error::Degenerate("empty dataset".into()));
    }
    let total: f64 = x.data().iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Err(Error::Degenerate("all-zero dataset cannot be normalized".into()));
    }
    if !total.is_finite() {
        return Err(Error::Degenerate("dataset contains non-finite values".into()));
    }
    let s = ((x.rows() * x.cols()) as f64 / total).sqrt();
    let data = x.data().iter().map(|v| v * s).collect();
    Ok((Tensor::new(x.shape().to_vec(), data)?, s))
}
