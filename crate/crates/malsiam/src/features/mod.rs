//! Feature extraction: byte sequences → model inputs.
//!
//! Two complementary views of a program are produced. The *entropy graph*
//! summarises per-segment Shannon entropies into a fixed 2-D grid; a frozen
//! encoder turns it into the task feature vector that conditions the model.
//! The *grayscale image* maps raw bytes onto a fixed 105×105 picture via
//! bilinear resampling. An augmentation suite (rotation, wrap-filled
//! vertical shift, horizontal flip, rescale) expands the image side.

pub mod augment;
pub mod encoder;
pub mod entropy;
pub mod image;

pub use augment::{augment, zca_whiten, AugmentationConfig, FillMode};
pub use encoder::{entropy_encode, FrozenEncoder, TaskEncoder, DEFAULT_ENCODER_DIM};
pub use entropy::{entropy_graph, entropy_series, shannon_entropy, EntropyGraph, EntropySeries};
pub use image::{bilinear_resize, binary_to_image, MalwareImage, IMAGE_SIDE};
