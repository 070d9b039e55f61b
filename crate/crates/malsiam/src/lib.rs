//! Few-shot recognition of obfuscated binary variants with a task-aware
//! Siamese network.
//!
//! The crate is organised as a pipeline:
//!
//! 1. [`corpus`] — generates a synthetic corpus of byte-level "programs"
//!    grouped into families, plus control-flow-style obfuscation transforms
//!    (function shuffling, junk insertion, function splitting) that produce
//!    labelled variants of every program.
//! 2. [`features`] — turns raw bytes into model inputs: segment-entropy
//!    series and entropy graphs, fixed-size grayscale images, image
//!    augmentation, and a frozen convolutional encoder for task features.
//! 3. [`autograd`] — a minimal tape-based reverse-mode autodiff engine over
//!    dense `f64` tensors; just the operations the model needs.
//! 4. [`model`] — the Siamese network itself: shared convolutional trunk,
//!    task-aware weight factorization driven by a meta-learner, the hybrid
//!    loss (binary cross-entropy + embedding + center terms), Adam, and
//!    checkpointing.
//! 5. [`episodes`] — N-way K-shot episodic evaluation: episode sampling,
//!    accuracy / AUC-ROC / confusion metrics, and a 2-component PCA for
//!    inspecting the learned distance features.
//! 6. [`pipeline`] — run configuration and the end-to-end commands
//!    (`synth`, `extract`, `augment`, `train`, `eval`, `plot`) used by both
//!    the thin CLI binary and the runnable examples.
//!
//! Everything is deterministic: all randomness flows through
//! [`rng::derive`], which maps `(seed, site-tag, index)` to an independent
//! ChaCha8 stream, so identical configurations produce byte-identical
//! artifacts end to end.

pub mod autograd;
pub mod corpus;
pub mod episodes;
pub mod error;
pub mod features;
pub mod linalg;
pub mod model;
pub mod npy;
pub mod pipeline;
pub mod rng;
pub mod tensor;

pub use error::{MalsiamError, Result};
