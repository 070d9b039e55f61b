//! Byte sequences as fixed-size grayscale images.

use crate::error::{MalsiamError, Result};
use crate::tensor::Tensor;

/// Side length of every model-facing image.
pub const IMAGE_SIDE: usize = 105;

/// Default row width when reshaping raw bytes, before resizing.
pub const DEFAULT_IMAGE_WIDTH: usize = 256;

/// A 105×105 grayscale image with pixel values in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MalwareImage {
    /// `[IMAGE_SIDE, IMAGE_SIDE]` pixel grid.
    pub pixels: Tensor,
}

impl MalwareImage {
    /// Wrap a pixel tensor, checking the shape and value-range invariants.
    pub fn new(pixels: Tensor) -> Result<Self> {
        if pixels.shape != [IMAGE_SIDE, IMAGE_SIDE] {
            return Err(MalsiamError::Data(format!(
                "image must be {IMAGE_SIDE}x{IMAGE_SIDE}, got {:?}",
                pixels.shape
            )));
        }
        if pixels.data.iter().any(|&v| !(0.0..=255.0).contains(&v)) {
            return Err(MalsiamError::Data(
                "image pixels must lie in [0, 255]".into(),
            ));
        }
        Ok(MalwareImage { pixels })
    }
}

/// Bilinear resize of a `src_h × src_w` grid to `dst_h × dst_w` using the
/// align-corners convention (`src = i·(S−1)/(D−1)`), so corner pixels map to
/// corner pixels and a constant field stays constant.
pub fn bilinear_resize(
    src: &[f64],
    src_h: usize,
    src_w: usize,
    dst_h: usize,
    dst_w: usize,
) -> Vec<f64> {
    assert!(src_h >= 1 && src_w >= 1 && dst_h >= 1 && dst_w >= 1);
    assert_eq!(src.len(), src_h * src_w);
    let scale = |i: usize, dst: usize, srcn: usize| -> f64 {
        if dst <= 1 {
            0.0
        } else {
            i as f64 * (srcn - 1) as f64 / (dst - 1) as f64
        }
    };
    let mut out = vec![0.0; dst_h * dst_w];
    for y in 0..dst_h {
        let sy = scale(y, dst_h, src_h);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(src_h - 1);
        let fy = sy - y0 as f64;
        for x in 0..dst_w {
            let sx = scale(x, dst_w, src_w);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(src_w - 1);
            let fx = sx - x0 as f64;
            let v00 = src[y0 * src_w + x0];
            let v01 = src[y0 * src_w + x1];
            let v10 = src[y1 * src_w + x0];
            let v11 = src[y1 * src_w + x1];
            out[y * dst_w + x] = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01)
                + fy * ((1.0 - fx) * v10 + fx * v11);
        }
    }
    out
}

/// Render raw bytes as a grayscale image: reshape to rows of `width`
/// (zero-padding the last row), then bilinear-resize to
/// [`IMAGE_SIDE`]`×`[`IMAGE_SIDE`].
pub fn binary_to_image(bytes: &[u8], width: usize) -> Result<MalwareImage> {
    if bytes.is_empty() {
        return Err(MalsiamError::Data("image input must be non-empty".into()));
    }
    if width == 0 {
        return Err(MalsiamError::Config("image width must be ≥ 1".into()));
    }
    let rows = bytes.len().div_ceil(width);
    let mut grid = vec![0.0f64; rows * width];
    for (i, &b) in bytes.iter().enumerate() {
        grid[i] = f64::from(b);
    }
    let pixels = bilinear_resize(&grid, rows, width, IMAGE_SIDE, IMAGE_SIDE);
    MalwareImage::new(Tensor::from_vec(pixels, &[IMAGE_SIDE, IMAGE_SIDE]))
}
