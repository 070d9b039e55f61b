//! Frozen task-feature encoder: entropy graph → fixed-dimension vector.
//!
//! Stands in for a large pretrained backbone behind a pluggable trait: a
//! small seeded convolutional network whose weights are fixed at
//! construction and never updated by training. Any encoder honouring
//! [`TaskEncoder`] (e.g. a real pretrained feature extractor) can be swapped
//! in.

use super::entropy::EntropyGraph;
use crate::rng::derive;
use crate::tensor::{conv_out_dim, im2col, matmul, Tensor};

/// Feature dimension of the reference pretrained backbone this encoder
/// stands in for.
pub const DEFAULT_ENCODER_DIM: usize = 4096;

const CONV_FILTERS: usize = 8;
const CONV_KERNEL: usize = 5;
const CONV_STRIDE: usize = 2;
const CONV_PAD: usize = 2;
const POOL_GRID: usize = 8;

/// Anything that can turn an entropy graph into a task feature vector.
pub trait TaskEncoder {
    /// Output dimension.
    fn dim(&self) -> usize;
    /// Encode one graph; must be deterministic and read-only.
    fn encode(&self, graph: &EntropyGraph) -> Vec<f64>;
}

/// The default frozen encoder: one 5×5/stride-2 convolution with ReLU, an
/// adaptive 8×8 average pool, and a linear projection to `dim`.
#[derive(Debug, Clone)]
pub struct FrozenEncoder {
    seed: u64,
    dim: usize,
    conv_w: Tensor, // [filters, 1, 5, 5]
    conv_b: Tensor, // [filters]
    proj_w: Tensor, // [dim, filters*8*8]
    proj_b: Tensor, // [dim]
}

impl FrozenEncoder {
    /// Build the encoder for `(seed, dim)`. All weights are drawn here and
    /// never change afterwards.
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim >= 1, "encoder dimension must be ≥ 1");
        let fan_conv = (CONV_KERNEL * CONV_KERNEL) as f64;
        let conv_bound = 1.0 / fan_conv.sqrt();
        let conv_w = Tensor::uniform(
            &mut derive(seed, "features/encoder/conv_w", 0),
            &[CONV_FILTERS, 1, CONV_KERNEL, CONV_KERNEL],
            -conv_bound,
            conv_bound,
        );
        let conv_b = Tensor::uniform(
            &mut derive(seed, "features/encoder/conv_b", 0),
            &[CONV_FILTERS],
            -conv_bound,
            conv_bound,
        );
        let pooled = CONV_FILTERS * POOL_GRID * POOL_GRID;
        let proj_bound = 1.0 / (pooled as f64).sqrt();
        let proj_w = Tensor::uniform(
            &mut derive(seed, "features/encoder/proj_w", 0),
            &[dim, pooled],
            -proj_bound,
            proj_bound,
        );
        let proj_b = Tensor::uniform(
            &mut derive(seed, "features/encoder/proj_b", 0),
            &[dim],
            -proj_bound,
            proj_bound,
        );
        FrozenEncoder {
            seed,
            dim,
            conv_w,
            conv_b,
            proj_w,
            proj_b,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Concatenation of all weight bytes; lets tests assert the encoder is
    /// bit-identical before and after training.
    pub fn parameter_fingerprint(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for t in [&self.conv_w, &self.conv_b, &self.proj_w, &self.proj_b] {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

impl TaskEncoder for FrozenEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, graph: &EntropyGraph) -> Vec<f64> {
        let (h, w) = (graph.height(), graph.width());
        // Entropies live in [0, 8]; normalise to [0, 1].
        let input: Vec<f64> = graph.matrix.data.iter().map(|v| v / 8.0).collect();

        let oh = conv_out_dim(h, CONV_KERNEL, CONV_STRIDE, CONV_PAD);
        let ow = conv_out_dim(w, CONV_KERNEL, CONV_STRIDE, CONV_PAD);
        let col = im2col(&input, 1, h, w, CONV_KERNEL, CONV_KERNEL, CONV_STRIDE, CONV_PAD);
        let mut feat = matmul(
            &self.conv_w.data,
            &col,
            CONV_FILTERS,
            CONV_KERNEL * CONV_KERNEL,
            oh * ow,
        );
        for f in 0..CONV_FILTERS {
            let b = self.conv_b.data[f];
            for v in &mut feat[f * oh * ow..(f + 1) * oh * ow] {
                *v = (*v + b).max(0.0); // bias + ReLU
            }
        }

        // Adaptive average pool to POOL_GRID x POOL_GRID.
        let mut pooled = vec![0.0; CONV_FILTERS * POOL_GRID * POOL_GRID];
        for f in 0..CONV_FILTERS {
            let plane = &feat[f * oh * ow..(f + 1) * oh * ow];
            for py in 0..POOL_GRID {
                let y0 = py * oh / POOL_GRID;
                let y1 = ((py + 1) * oh / POOL_GRID).max(y0 + 1).min(oh.max(y0 + 1));
                for px in 0..POOL_GRID {
                    let x0 = px * ow / POOL_GRID;
                    let x1 = ((px + 1) * ow / POOL_GRID).max(x0 + 1).min(ow.max(x0 + 1));
                    let mut acc = 0.0;
                    let mut count = 0.0;
                    for y in y0..y1.min(oh) {
                        for x in x0..x1.min(ow) {
                            acc += plane[y * ow + x];
                            count += 1.0;
                        }
                    }
                    pooled[(f * POOL_GRID + py) * POOL_GRID + px] =
                        if count > 0.0 { acc / count } else { 0.0 };
                }
            }
        }

        let mut out = matmul(&self.proj_w.data, &pooled, self.dim, pooled.len(), 1);
        for (o, b) in out.iter_mut().zip(&self.proj_b.data) {
            *o += b;
        }
        out
    }
}

/// Encode a graph with any [`TaskEncoder`].
pub fn entropy_encode<E: TaskEncoder>(graph: &EntropyGraph, encoder: &E) -> Vec<f64> {
    encoder.encode(graph)
}
