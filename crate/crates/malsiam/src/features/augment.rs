//! Image augmentation (rotation, wrap-filled vertical shift, horizontal
//! flip, rescale) plus a standalone ZCA whitening utility.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::MalwareImage;
use crate::error::{MalsiamError, Result};
use crate::linalg::symmetric_eigen;
use crate::rng::derive;
use crate::tensor::Tensor;

/// How out-of-bounds samples are filled during geometric transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillMode {
    /// Coordinates wrap around the image borders.
    Wrap,
}

/// Augmentation parameters. The defaults are the training-time settings
/// used throughout this crate: pixel rescale 1/255, ZCA epsilon 1e-6, wrap
/// fill, ±0.1° rotation, vertical shift up to half the image height, and
/// random horizontal flips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    /// Multiplier applied to every pixel after the geometric transforms.
    pub rescale: f64,
    /// Epsilon for the ZCA whitening utility (whitening itself is opt-in
    /// and off by default).
    pub zca_epsilon: f64,
    pub fill_mode: FillMode,
    /// Maximum absolute rotation, in degrees.
    pub rotation_range: f64,
    /// Maximum absolute vertical shift, as a fraction of image height.
    pub height_shift_range: f64,
    /// Whether to flip horizontally with probability 1/2.
    pub horizontal_flip: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            rescale: 1.0 / 255.0,
            zca_epsilon: 1e-6,
            fill_mode: FillMode::Wrap,
            rotation_range: 0.1,
            height_shift_range: 0.5,
            horizontal_flip: true,
        }
    }
}

impl AugmentationConfig {
    /// The identity configuration: no geometry, no rescale. Useful as a
    /// base for evaluation-time preprocessing.
    pub fn identity() -> Self {
        AugmentationConfig {
            rescale: 1.0,
            zca_epsilon: 1e-6,
            fill_mode: FillMode::Wrap,
            rotation_range: 0.0,
            height_shift_range: 0.0,
            horizontal_flip: false,
        }
    }
}

/// Sample the image at a real-valued coordinate with bilinear blending and
/// wrap fill.
fn sample_wrap(pixels: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let wrap = |i: i64, n: usize| -> usize { i.rem_euclid(n as i64) as usize };
    let y0 = y.floor();
    let x0 = x.floor();
    let (fy, fx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as i64, x0 as i64);
    let (ym, yp) = (wrap(y0, h), wrap(y0 + 1, h));
    let (xm, xp) = (wrap(x0, w), wrap(x0 + 1, w));
    (1.0 - fy) * ((1.0 - fx) * pixels[ym * w + xm] + fx * pixels[ym * w + xp])
        + fy * ((1.0 - fx) * pixels[yp * w + xm] + fx * pixels[yp * w + xp])
}

/// Apply one random augmentation draw: optional horizontal flip, rotation
/// in `±rotation_range` degrees about the image center, vertical shift in
/// `±height_shift_range·H` pixels with wrap fill, then the rescale
/// multiplier. Deterministic per `(image, config, seed)`; shape unchanged.
pub fn augment(img: &MalwareImage, cfg: &AugmentationConfig, seed: u64) -> MalwareImage {
    let h = img.pixels.shape[0];
    let w = img.pixels.shape[1];
    let mut rng = derive(seed, "features/augment", 0);

    let flip = cfg.horizontal_flip && rng.gen::<bool>();
    let theta = if cfg.rotation_range > 0.0 {
        rng.gen_range(-cfg.rotation_range..cfg.rotation_range)
            .to_radians()
    } else {
        0.0
    };
    let dy = if cfg.height_shift_range > 0.0 {
        let max = cfg.height_shift_range * h as f64;
        rng.gen_range(-max..max)
    } else {
        0.0
    };

    let src: Vec<f64> = if flip {
        let mut flipped = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                flipped[y * w + x] = img.pixels.data[y * w + (w - 1 - x)];
            }
        }
        flipped
    } else {
        img.pixels.data.clone()
    };

    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = theta.sin_cos();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            // Invert "rotate by theta, then shift down by dy".
            let v = y as f64 - dy - cy;
            let u = x as f64 - cx;
            let sx = cos * u + sin * v + cx;
            let sy = -sin * u + cos * v + cy;
            let value = if theta == 0.0 && dy == 0.0 {
                src[y * w + x] // exact identity path, no resampling fuzz
            } else {
                match cfg.fill_mode {
                    FillMode::Wrap => sample_wrap(&src, h, w, sy, sx),
                }
            };
            out[y * w + x] = value * cfg.rescale;
        }
    }
    MalwareImage {
        pixels: Tensor::from_vec(out, &img.pixels.shape),
    }
}

/// ZCA-whiten a row-major `[N, D]` data matrix: mean-center the columns and
/// apply `(Σ + εI)^(−1/2)` in the sample basis, computed through the N×N
/// Gram matrix so `D` can be large. Returns the whitened (still centered)
/// data with the same shape.
pub fn zca_whiten(data: &Tensor, epsilon: f64) -> Result<Tensor> {
    if data.shape.len() != 2 {
        return Err(MalsiamError::Data(format!(
            "zca_whiten expects a 2-D matrix, got shape {:?}",
            data.shape
        )));
    }
    if epsilon <= 0.0 {
        return Err(MalsiamError::Config("zca epsilon must be positive".into()));
    }
    let (n, d) = (data.shape[0], data.shape[1]);

    let mut centered = data.data.clone();
    for col in 0..d {
        let mean: f64 = (0..n).map(|r| data.data[r * d + col]).sum::<f64>() / n as f64;
        for row in 0..n {
            centered[row * d + col] -= mean;
        }
    }

    // Gram matrix G = Xc·Xcᵀ/N shares its nonzero eigenvalues with the
    // feature covariance; whitening in the sample basis is
    // Y = V·diag(1/sqrt(s+ε))·Vᵀ·Xc.
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let dot: f64 = (0..d).map(|k| centered[i * d + k] * centered[j * d + k]).sum();
            gram[i * n + j] = dot / n as f64;
            gram[j * n + i] = gram[i * n + j];
        }
    }
    let (eigenvalues, v) = symmetric_eigen(&gram, n); // rows of v are eigenvectors

    // coeffs = Vᵀ-projection of each sample (v is row-major with
    // eigenvectors as rows, so this is v·Xc).
    let coeffs = crate::tensor::matmul(&v, &centered, n, n, d);
    let mut scaled = coeffs;
    for (i, &s) in eigenvalues.iter().enumerate() {
        let f = 1.0 / (s.max(0.0) + epsilon).sqrt();
        for k in 0..d {
            scaled[i * d + k] *= f;
        }
    }
    // Back to the sample basis: Y = vᵀ·scaled.
    let out = crate::tensor::matmul_atb(&v, &scaled, n, n, d);
    Ok(Tensor::from_vec(out, &[n, d]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::image::IMAGE_SIDE;

    fn test_image() -> MalwareImage {
        let pixels: Vec<f64> = (0..IMAGE_SIDE * IMAGE_SIDE)
            .map(|i| ((i * 37) % 256) as f64)
            .collect();
        MalwareImage {
            pixels: Tensor::from_vec(pixels, &[IMAGE_SIDE, IMAGE_SIDE]),
        }
    }

    #[test]
    fn defaults_are_the_documented_table() {
        let cfg = AugmentationConfig::default();
        assert_eq!(cfg.rescale, 1.0 / 255.0);
        assert_eq!(cfg.zca_epsilon, 1e-6);
        assert_eq!(cfg.fill_mode, FillMode::Wrap);
        assert_eq!(cfg.rotation_range, 0.1);
        assert_eq!(cfg.height_shift_range, 0.5);
        assert!(cfg.horizontal_flip);
    }

    #[test]
    fn null_augmentation_is_exact_identity() {
        let img = test_image();
        let out = augment(&img, &AugmentationConfig::identity(), 123);
        assert_eq!(out.pixels, img.pixels);
    }

    #[test]
    fn double_flip_recovers_original() {
        let mut cfg = AugmentationConfig::identity();
        cfg.horizontal_flip = true;
        let img = test_image();
        // Find a seed whose draw actually flips (flip changes the image).
        let seed = (0..64)
            .find(|&s| augment(&img, &cfg, s).pixels != img.pixels)
            .expect("some seed in 0..64 must draw a flip");
        let once = augment(&img, &cfg, seed);
        let twice = augment(&once, &cfg, seed);
        assert_eq!(twice.pixels, img.pixels);
    }

    #[test]
    fn default_augmentation_lands_in_unit_range_and_is_deterministic() {
        let img = test_image();
        let cfg = AugmentationConfig::default();
        for seed in 0..10 {
            let out = augment(&img, &cfg, seed);
            assert_eq!(out.pixels.shape, img.pixels.shape);
            assert!(out
                .pixels
                .data
                .iter()
                .all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
            let again = augment(&img, &cfg, seed);
            assert_eq!(out.pixels, again.pixels);
        }
    }

    #[test]
    fn pre_rescale_range_is_preserved() {
        let img = test_image();
        let mut cfg = AugmentationConfig::default();
        cfg.rescale = 1.0;
        for seed in 0..10 {
            let out = augment(&img, &cfg, seed);
            assert!(out
                .pixels
                .data
                .iter()
                .all(|&v| (0.0..=255.0).contains(&v)));
        }
    }

    #[test]
    fn zca_whitening_gives_near_identity_covariance() {
        // Random full-rank 12x5 data; after whitening the feature covariance
        // should be within O(ε) of the identity.
        let data = Tensor::uniform(&mut crate::rng::derive(5, "zca/test", 0), &[12, 5], -1.0, 1.0);
        let white = zca_whiten(&data, 1e-6).unwrap();
        assert_eq!(white.shape, vec![12, 5]);
        let (n, d) = (12usize, 5usize);
        for a in 0..d {
            for b in 0..d {
                let cov: f64 = (0..n)
                    .map(|r| white.data[r * d + a] * white.data[r * d + b])
                    .sum::<f64>()
                    / n as f64;
                let want = if a == b { 1.0 } else { 0.0 };
                assert!(
                    (cov - want).abs() < 1e-3,
                    "cov[{a},{b}] = {cov}, want {want}"
                );
            }
        }
        // Determinism.
        assert_eq!(zca_whiten(&data, 1e-6).unwrap(), white);
    }

    #[test]
    fn zca_rejects_bad_inputs() {
        let t = Tensor::zeros(&[4]);
        assert!(zca_whiten(&t, 1e-6).is_err());
        let t = Tensor::zeros(&[2, 2]);
        assert!(zca_whiten(&t, 0.0).is_err());
    }
}
