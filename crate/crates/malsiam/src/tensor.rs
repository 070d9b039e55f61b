//! Dense `f64` tensors and the handful of kernels the model is built from.
//!
//! Matrices are row-major. The multiply kernels use an `i-k-j` loop order so
//! the inner loop walks both output and right-hand rows contiguously; that is
//! the difference between usable and unusable training times on one core.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A dense row-major tensor of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub data: Vec<f64>,
    pub shape: Vec<usize>,
}

impl Tensor {
    /// All-zero tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            data: vec![0.0; shape.iter().product()],
            shape: shape.to_vec(),
        }
    }

    /// Tensor from existing data; panics if the element count mismatches.
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Self {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            data,
            shape: shape.to_vec(),
        }
    }

    /// A single-element tensor (shape `[1]`).
    pub fn scalar(x: f64) -> Self {
        Tensor {
            data: vec![x],
            shape: vec![1],
        }
    }

    /// Tensor filled with draws from `U[lo, hi)`.
    pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor {
            data,
            shape: shape.to_vec(),
        }
    }

    /// Number of elements.
    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// `c = a @ b` for row-major `a: [m,k]`, `b: [k,n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `c = a @ b^T` for row-major `a: [m,k]`, `b: [n,k]`.
pub fn matmul_abt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (av, bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            c[i * n + j] = acc;
        }
    }
    c
}

/// `c = a^T @ b` for row-major `a: [k,m]`, `b: [k,n]`.
pub fn matmul_atb(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// Spatial output size of a convolution/pool along one axis.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Unfold one `[C, H, W]` image into a `[C*KH*KW, OH*OW]` patch matrix so a
/// convolution becomes a single matrix multiply.
#[allow(clippy::too_many_arguments)]
pub fn im2col(
    input: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = conv_out_dim(h, kh, stride, pad);
    let ow = conv_out_dim(w, kw, stride, pad);
    let mut col = vec![0.0; c * kh * kw * oh * ow];
    for ch in 0..c {
        let plane = &input[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut col[((ch * kh + ky) * kw + kx) * oh * ow..][..oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue; // row stays zero: implicit zero padding
                    }
                    let iy = iy as usize;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        row[oy * ow + ox] = plane[iy * w + ix as usize];
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: fold a patch-matrix gradient back onto the image,
/// accumulating into `grad_input` (which must be `[C, H, W]`, pre-zeroed or
/// carrying an existing accumulation).
#[allow(clippy::too_many_arguments)]
pub fn col2im(
    col: &[f64],
    grad_input: &mut [f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) {
    let oh = conv_out_dim(h, kh, stride, pad);
    let ow = conv_out_dim(w, kw, stride, pad);
    for ch in 0..c {
        let plane = &mut grad_input[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &col[((ch * kh + ky) * kw + kx) * oh * ow..][..oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        plane[iy * w + ix as usize] += row[oy * ow + ox];
                    }
                }
            }
        }
    }
}

/// Max-pool one `[C, H, W]` image with a square window (`kernel == stride`,
/// no padding, floor division). Returns the pooled values and, for each
/// output element, the flat input index of its maximum (for the backward
/// pass). Ties resolve to the first element in scan order.
pub fn maxpool(
    input: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kernel: usize,
) -> (Vec<f64>, Vec<usize>) {
    let oh = h / kernel;
    let ow = w / kernel;
    let mut out = vec![0.0; c * oh * ow];
    let mut arg = vec![0usize; c * oh * ow];
    for ch in 0..c {
        let plane = &input[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let iy = oy * kernel + ky;
                        let ix = ox * kernel + kx;
                        let v = plane[iy * w + ix];
                        if v > best {
                            best = v;
                            best_idx = iy * w + ix;
                        }
                    }
                }
                out[(ch * oh + oy) * ow + ox] = best;
                arg[(ch * oh + oy) * ow + ox] = ch * h * w + best_idx;
            }
        }
    }
    (out, arg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive;
    use proptest::prelude::*;

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        let mut t = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = a[i * cols + j];
            }
        }
        t
    }

    fn rand_mat(tag: &str, n: usize) -> Vec<f64> {
        let t = Tensor::uniform(&mut derive(11, tag, 0), &[n], -1.0, 1.0);
        t.data
    }

    #[test]
    fn matmul_matches_naive() {
        let (m, k, n) = (5, 7, 4);
        let a = rand_mat("a", m * k);
        let b = rand_mat("b", k * n);
        let got = matmul(&a, &b, m, k, n);
        let want = naive_matmul(&a, &b, m, k, n);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_variants_match_explicit_transpose() {
        let (m, k, n) = (4, 6, 3);
        let a = rand_mat("a", m * k);
        let b_nk = rand_mat("b", n * k); // b as [n,k]
        let got = matmul_abt(&a, &b_nk, m, k, n);
        let want = matmul(&a, &transpose(&b_nk, n, k), m, k, n);
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }

        let a_km = rand_mat("c", k * m); // a as [k,m]
        let b_kn = rand_mat("d", k * n);
        let got = matmul_atb(&a_km, &b_kn, k, m, n);
        let want = matmul(&transpose(&a_km, k, m), &b_kn, m, k, n);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn im2col_known_values() {
        // 1 channel, 3x3 input, 2x2 kernel, stride 1, no padding.
        let input: Vec<f64> = (1..=9).map(f64::from).collect();
        let col = im2col(&input, 1, 3, 3, 2, 2, 1, 0);
        // Patches (row-major over output positions): [1,2,4,5],[2,3,5,6],
        // [4,5,7,8],[5,6,8,9]; im2col lays them out transposed.
        let want = [
            1.0, 2.0, 4.0, 5.0, // kernel offset (0,0) over the 4 outputs
            2.0, 3.0, 5.0, 6.0, // (0,1)
            4.0, 5.0, 7.0, 8.0, // (1,0)
            5.0, 6.0, 8.0, 9.0, // (1,1)
        ];
        assert_eq!(col, want);
    }

    #[test]
    fn maxpool_known_values_and_argmax() {
        let input = vec![
            1.0, 5.0, 2.0, 0.0, //
            3.0, 4.0, 1.0, 6.0, //
            7.0, 0.0, 0.0, 0.0, //
            2.0, 8.0, 9.0, 1.0,
        ];
        let (out, arg) = maxpool(&input, 1, 4, 4, 2);
        assert_eq!(out, vec![5.0, 6.0, 8.0, 9.0]);
        assert_eq!(arg, vec![1, 7, 13, 14]);
    }

    proptest! {
        /// im2col and col2im are adjoint linear maps:
        /// <im2col(x), y> == <x, col2im(y)> for all x, y.
        #[test]
        fn im2col_col2im_adjoint(seed in 0u64..500) {
            let (c, h, w, kh, kw, stride, pad) = (2usize, 5usize, 4usize, 3usize, 3usize, 2usize, 1usize);
            let oh = conv_out_dim(h, kh, stride, pad);
            let ow = conv_out_dim(w, kw, stride, pad);
            let x = Tensor::uniform(&mut derive(seed, "adjoint/x", 0), &[c * h * w], -1.0, 1.0).data;
            let y = Tensor::uniform(&mut derive(seed, "adjoint/y", 0), &[c * kh * kw * oh * ow], -1.0, 1.0).data;

            let ax = im2col(&x, c, h, w, kh, kw, stride, pad);
            let mut aty = vec![0.0; c * h * w];
            col2im(&y, &mut aty, c, h, w, kh, kw, stride, pad);

            let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
            prop_assert!((lhs - rhs).abs() < 1e-9, "lhs {lhs} rhs {rhs}");
        }
    }
}
