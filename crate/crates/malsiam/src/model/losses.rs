//! Value-level loss functions and the EMA class-center store.
//!
//! These are the reference implementations of the loss terms; the training
//! graph computes the same quantities on the autograd tape (where the
//! spec-level examples are also asserted against gradients). Keeping pure
//! versions lets evaluation and reporting compute losses without building a
//! tape, and gives tests an independent cross-check.

use crate::autograd::BCE_EPSILON;
use crate::tensor::Tensor;

/// Similarity probability of a pair: `sigmoid(shift − distance)`, clamped
/// away from {0, 1} so the log loss stays finite.
pub fn pair_probability(shift: f64, distance: f64) -> f64 {
    let z = shift - distance;
    let p = 1.0 / (1.0 + (-z).exp());
    p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON)
}

/// Mean binary cross-entropy over pair probabilities.
/// `labels[i] = 1.0` marks a same-family pair.
pub fn bce_loss(probabilities: &[f64], labels: &[f64]) -> f64 {
    assert_eq!(probabilities.len(), labels.len());
    assert!(!probabilities.is_empty());
    let n = probabilities.len() as f64;
    probabilities
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n
}

/// Center loss `(1/2N) Σ ‖f_i − c_{y_i}‖²` over feature rows and their
/// class centers.
pub fn center_loss(features: &Tensor, labels: &[usize], centers: &Tensor) -> f64 {
    assert_eq!(features.shape.len(), 2);
    assert_eq!(centers.shape.len(), 2);
    assert_eq!(features.shape[0], labels.len());
    assert_eq!(features.shape[1], centers.shape[1]);
    let (n, d) = (features.shape[0], features.shape[1]);
    assert!(n > 0);
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        assert!(label < centers.shape[0], "label {label} out of range");
        for j in 0..d {
            let diff = features.data[i * d + j] - centers.data[label * d + j];
            total += diff * diff;
        }
    }
    total / (2.0 * n as f64)
}

/// Mean softmax cross-entropy of logit rows against integer labels,
/// computed with a stable log-sum-exp.
pub fn embedding_loss(logits: &Tensor, labels: &[usize]) -> f64 {
    assert_eq!(logits.shape.len(), 2);
    assert_eq!(logits.shape[0], labels.len());
    let (n, k) = (logits.shape[0], logits.shape[1]);
    assert!(n > 0 && k > 0);
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        assert!(label < k, "label {label} out of range for {k} classes");
        let row = &logits.data[i * k..(i + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    total / n as f64
}

/// Weighted sum `β·L_e + L_b + λ·L_c` combining the embedding,
/// binary-cross-entropy, and center terms.
pub fn hybrid_loss(l_e: f64, l_b: f64, l_c: f64, beta: f64, lambda: f64) -> f64 {
    beta * l_e + l_b + lambda * l_c
}

/// Per-class feature centers maintained by exponential moving average:
/// `c ← (1−α)·c + α·batch_mean` for every class present in the batch.
/// Centers start at zero and are not gradient-trained.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCenters {
    pub centers: Tensor,
    pub alpha: f64,
}

impl ClassCenters {
    pub fn new(n_classes: usize, dim: usize, alpha: f64) -> Self {
        ClassCenters {
            centers: Tensor::zeros(&[n_classes, dim]),
            alpha,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.centers.shape[0]
    }

    pub fn dim(&self) -> usize {
        self.centers.shape[1]
    }

    /// Pull each class's center toward the mean of that class's rows in
    /// this batch. Classes absent from the batch keep their centers.
    pub fn update(&mut self, features: &Tensor, labels: &[usize]) {
        assert_eq!(features.shape.len(), 2);
        assert_eq!(features.shape[0], labels.len());
        assert_eq!(features.shape[1], self.dim());
        let d = self.dim();
        for class in 0..self.n_classes() {
            let rows: Vec<usize> = labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == class)
                .map(|(i, _)| i)
                .collect();
            if rows.is_empty() {
                continue;
            }
            for j in 0..d {
                let mean =
                    rows.iter().map(|&i| features.data[i * d + j]).sum::<f64>() / rows.len() as f64;
                let c = &mut self.centers.data[class * d + j];
                *c = (1.0 - self.alpha) * *c + self.alpha * mean;
            }
        }
    }
}
