//! Per-segment Shannon entropy and the fixed-size entropy graph.

use crate::error::{MalsiamError, Result};
use crate::tensor::Tensor;

/// Default segment length in bytes: matches the byte alphabet size, so a
/// single segment can reach the full 8-bit entropy ceiling.
pub const DEFAULT_SEGMENT_LENGTH: usize = 256;

/// Default entropy-graph side length.
pub const DEFAULT_GRAPH_SIDE: usize = 254;

/// Ordered per-segment entropies of one byte sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropySeries {
    /// Entropy in bits per byte for each segment, each in `[0, 8]`.
    pub values: Vec<f64>,
    pub segment_length: usize,
}

/// A fixed-size 2-D arrangement of an entropy series, row-major, zero-padded
/// or truncated to fit.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyGraph {
    /// `[height, width]` grid of entropies, each cell in `[0, 8]`.
    pub matrix: Tensor,
    /// Length of the series the graph was built from (before pad/truncate).
    pub source_length: usize,
}

impl EntropyGraph {
    pub fn height(&self) -> usize {
        self.matrix.shape[0]
    }
    pub fn width(&self) -> usize {
        self.matrix.shape[1]
    }
}

/// Shannon entropy of one byte segment in bits per byte: `H = −Σ p_j·log2 p_j`
/// over the byte values present (the empty-count terms contribute zero).
///
/// `H = 0` exactly when all bytes are equal; `H = 8` exactly when all 256
/// values occur equally often.
pub fn shannon_entropy(segment: &[u8]) -> f64 {
    debug_assert!(!segment.is_empty());
    let mut counts = [0u32; 256];
    for &b in segment {
        counts[b as usize] += 1;
    }
    let n = segment.len() as f64;
    let mut h = 0.0;
    for &c in &counts {
        if c > 0 {
            let p = f64::from(c) / n;
            h -= p * p.log2();
        }
    }
    h
}

/// Per-segment entropies of `bytes`, chunked into `segment_length`-byte
/// segments; the trailing partial segment is evaluated over its actual
/// length.
pub fn entropy_series(bytes: &[u8], segment_length: usize) -> Result<EntropySeries> {
    if bytes.is_empty() {
        return Err(MalsiamError::Data("entropy input must be non-empty".into()));
    }
    if segment_length == 0 {
        return Err(MalsiamError::Config("segment_length must be ≥ 1".into()));
    }
    let values = bytes.chunks(segment_length).map(shannon_entropy).collect();
    Ok(EntropySeries {
        values,
        segment_length,
    })
}

/// Lay an entropy series out row-major into an `height × width` grid:
/// shorter series are zero-padded, longer ones truncated.
pub fn entropy_graph(series: &EntropySeries, height: usize, width: usize) -> Result<EntropyGraph> {
    if series.values.is_empty() {
        return Err(MalsiamError::Data("entropy series must be non-empty".into()));
    }
    if height == 0 || width == 0 {
        return Err(MalsiamError::Config("graph dimensions must be ≥ 1".into()));
    }
    let mut cells = vec![0.0; height * width];
    let n = series.values.len().min(cells.len());
    cells[..n].copy_from_slice(&series.values[..n]);
    Ok(EntropyGraph {
        matrix: Tensor::from_vec(cells, &[height, width]),
        source_length: series.values.len(),
    })
}
