use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Uniform ranges for random rotation (degrees) and translation (pixels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub max_rotation_deg: f64,
    pub max_shift_px: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            max_rotation_deg: 10.0,
            max_shift_px: 2.0,
        }
    }
}

/// Rotates by `angle` (radians) about the image centre and shifts by
/// `(dx, dy)` pixels. Bilinear sampling, zero fill outside the frame, output
/// clamped to the source's value range.
pub fn transform_image(src: &[f64], h: usize, w: usize, angle: f64, dx: f64, dy: f64) -> Vec<f64> {
    let (lo, hi) = src
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (sin, cos) = angle.sin_cos();
    let pixel = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            src[r as usize * w + c as usize]
        }
    };
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let xo = c as f64 - cx - dx;
            let yo = r as f64 - cy - dy;
            let xs = cos * xo + sin * yo + cx;
            let ys = -sin * xo + cos * yo + cy;
            let (x0, y0) = (xs.floor(), ys.floor());
            let (fx, fy) = (xs - x0, ys - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let v = if fx == 0.0 && fy == 0.0 {
                pixel(y0, x0)
            } else {
                (1.0 - fy) * ((1.0 - fx) * pixel(y0, x0) + fx * pixel(y0, x0 + 1))
                    + fy * ((1.0 - fx) * pixel(y0 + 1, x0) + fx * pixel(y0 + 1, x0 + 1))
            };
            out[r * w + c] = v.clamp(lo, hi);
        }
    }
    out
}

/// Independently transformed copy of every row of `batch`. Non-image data
/// (no `image_shape`) is returned unchanged.
pub fn augment(
    batch: &Tensor,
    image_shape: Option<(usize, usize)>,
    params: AugmentParams,
    rng: &mut Rng,
) -> Result<Tensor> {
    let Some((h, w)) = image_shape else {
        return Ok(batch.clone());
    };
    if h * w != batch.cols() {
        return Err(Error::Contract(format!(
            "image shape {h}x{w} does not match {} features",
            batch.cols()
        )));
    }
    let mut out = Vec::with_capacity(batch.numel());
    let max_angle = params.max_rotation_deg.to_radians();
    for i in 0..batch.rows() {
        let angle = rng.random_range(-max_angle..=max_angle);
        let dx = rng.random_range(-params.max_shift_px..=params.max_shift_px);
        let dy = rng.random_range(-params.max_shift_px..=params.max_shift_px);
        out.extend(transform_image(batch.row(i), h, w, angle, dx, dy));
    }
    Ok(Tensor::matrix(batch.rows(), batch.cols(), out)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize) -> Vec<f64> {
        (0..h * w).map(|k| (k % 7) as f64 * 0.3 + 0.1).collect()
    }

    #[test]
    fn identity_is_exact() {
        let img = ramp(28, 28);
        assert_eq!(transform_image(&img, 28, 28, 0.0, 0.0, 0.0), img);
    }

    #[test]
    fn integer_shift_moves_pixels() {
        let img = ramp(5, 6);
        let out = transform_image(&img, 5, 6, 0.0, 1.0, 2.0);
        for r in 0..5 {
            for c in 0..6 {
                // zero fill is lifted to the sample minimum by the clamp
                let expect = if r >= 2 && c >= 1 { img[(r - 2) * 6 + c - 1] } else { 0.1 };
                assert_eq!(out[r * 6 + c], expect, "({r},{c})");
            }
        }
    }

    #[test]
    fn tabular_rows_pass_through() {
        let x = Tensor::full(vec![2, 4], 0.5);
        let mut rng = seeded(0);
        assert_eq!(augment(&x, None, AugmentParams::default(), &mut rng).unwrap(), x);
        let y = augment(&Tensor::full(vec![3, 4], 0.5), Some((2, 2)), AugmentParams::default(), &mut rng)
            .unwrap();
        assert_eq!(y.shape(), &[3, 4]);
    }

    proptest! {
        #[test]
        fn output_stays_in_source_range(
            pix in proptest::collection::vec(0.0f64..3.0, 36),
            angle in -0.2f64..0.2,
            dx in -2.0f64..2.0,
            dy in -2.0f64..2.0,
        ) {
            let out = transform_image(&pix, 6, 6, angle, dx, dy);
            let lo = pix.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = pix.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(out.len(), 36);
            prop_assert!(out.iter().all(|v| *v >= lo && *v <= hi));
        }
    }
}
