//! The task-aware Siamese network.
//!
//! Twin convolutional branches share one parameter set; a meta-learner maps
//! a task feature vector (the encoded entropy graph of a family's support
//! samples) through a two-layer trunk and per-layer weight generators into
//! nonnegative task weight vectors. Each generated layer's effective weight
//! is the shared matrix modulated column-wise by the task vector
//! (`W[r,c] = W_sr[r,c] · W_ts[c]`), which this implementation applies as
//! input modulation — `(W ∘ 1vᵀ)·x = W·(v ⊙ x)` — so batches never
//! materialise per-sample weight matrices.
//!
//! This module holds the configuration, parameter store, initialization,
//! and the pure (non-autograd) forward paths used at evaluation time; the
//! training path builds the same computation on an autograd tape in
//! [`train`]. The two paths are asserted equal in tests.

pub mod adam;
pub mod baseline;
pub mod checkpoint;
pub mod losses;
pub mod train;

pub use baseline::GenericSnn;
pub use checkpoint::Checkpoint;
pub use train::{EpochStats, PairBatch, TrainItem, TrainOptions, Trainer};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{MalsiamError, Result};
use crate::features::image::{MalwareImage, IMAGE_SIDE};
use crate::rng::derive;
use crate::tensor::{conv_out_dim, im2col, matmul, matmul_abt, maxpool, Tensor};

/// Canonical pixel rescale applied before the network (images are stored in
/// `[0, 255]`, the model consumes `[0, 1]`).
pub const PIXEL_RESCALE: f64 = 1.0 / 255.0;

/// Pool window per conv layer (window == stride, floor division):
/// 105 → 35 → 17 → 8 → 4 for the default four-layer stack.
const POOL_KERNELS: [usize; 4] = [3, 2, 2, 2];
const CONV_KERNEL: usize = 3;
const CONV_STRIDE: usize = 1;
const CONV_PAD: usize = 1;

/// Network + loss hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Output channels of the four conv layers.
    pub conv_channels: Vec<usize>,
    /// Hidden width of the image head's first FC layer and of the
    /// meta-learner trunk.
    pub fc_hidden: usize,
    /// Dimension of the task feature vector (must match the encoder).
    pub task_input_dim: usize,
    /// Dimension of the output embedding.
    pub embedding_dim: usize,
    /// Number of families the embedding-loss classifier head discriminates.
    pub n_families: usize,
    /// How many of the final FC layers receive generated task weights
    /// (0 = plain Siamese baseline, 1 = last layer, 2 = both).
    pub generated_layers: usize,
    /// Weight of the embedding (cross-entropy) loss term.
    pub beta: f64,
    /// Weight λ of the center loss term.
    pub center_loss_weight: f64,
    /// EMA rate α for class-center updates.
    pub center_update_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            conv_channels: vec![16, 32, 32, 64],
            fc_hidden: 512,
            task_input_dim: 256,
            embedding_dim: 64,
            n_families: 13,
            generated_layers: 2,
            beta: 0.8,
            center_loss_weight: 0.5,
            center_update_rate: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.is_empty() || self.conv_channels.len() > POOL_KERNELS.len() {
            return Err(MalsiamError::Config(format!(
                "conv_channels must have 1..={} layers",
                POOL_KERNELS.len()
            )));
        }
        if self.conv_channels.iter().any(|&c| c == 0)
            || self.fc_hidden == 0
            || self.task_input_dim == 0
            || self.embedding_dim == 0
            || self.n_families == 0
        {
            return Err(MalsiamError::Config("model dimensions must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(MalsiamError::Config(format!(
                "beta must be in [0,1], got {}",
                self.beta
            )));
        }
        if self.center_loss_weight < 0.0 || !(0.0..=1.0).contains(&self.center_update_rate) {
            return Err(MalsiamError::Config(
                "center loss weight must be ≥ 0 and update rate in [0,1]".into(),
            ));
        }
        if self.generated_layers > 2 {
            return Err(MalsiamError::Config(
                "at most the final two FC layers can be generated".into(),
            ));
        }
        Ok(())
    }

    /// Side length of the feature map after conv layer `i` (post-pool).
    fn spatial_dims(&self) -> Vec<usize> {
        let mut side = IMAGE_SIDE;
        self.conv_channels
            .iter()
            .enumerate()
            .map(|(i, _)| {
                side = conv_out_dim(side, CONV_KERNEL, CONV_STRIDE, CONV_PAD) / POOL_KERNELS[i];
                side
            })
            .collect()
    }

    /// Flattened dimension entering the FC head.
    pub fn flat_dim(&self) -> usize {
        let side = *self.spatial_dims().last().unwrap();
        self.conv_channels.last().unwrap() * side * side
    }

    /// Input dimension of each head FC layer: `fc1` sees the conv flatten,
    /// `fc2` sees the hidden activation.
    pub fn fc_input_dims(&self) -> [usize; 2] {
        [self.flat_dim(), self.fc_hidden]
    }

    /// Names of the FC layers that receive generated weights, innermost
    /// last: `generated_layers = 1` → `["fc2"]`, `2` → `["fc1", "fc2"]`.
    pub fn generated_layer_names(&self) -> Vec<&'static str> {
        match self.generated_layers {
            0 => vec![],
            1 => vec!["fc2"],
            _ => vec!["fc1", "fc2"],
        }
    }
}

/// All trainable parameters, stored as named tensors. Naming is the single
/// source of truth for initialization, optimizer grouping (`meta.*` trains
/// at the lower rate), and the checkpoint layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// Seeded initialization. Every tensor is drawn from its own
    /// `(seed, name)` stream with uniform fan-in scaling, so two models that
    /// share a tensor name and seed share that tensor's initial value
    /// regardless of which other tensors exist (the plain baseline and the
    /// task-aware model start from identical common parameters).
    ///
    /// The distance→probability shift starts at 1.0; generator biases start
    /// at exactly 1.0 with near-zero weights, so initial task weights are
    /// ≈ 1 and the factorized model starts indistinguishable from the
    /// unconditioned one.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut tensors = BTreeMap::new();
        let mut fan_in_init = |name: &str, shape: &[usize], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let t = Tensor::uniform(
                &mut derive(seed, &format!("model/init/{name}"), 0),
                shape,
                -bound,
                bound,
            );
            tensors.insert(name.to_string(), t);
        };

        let mut in_ch = 1;
        for (i, &out_ch) in config.conv_channels.iter().enumerate() {
            let fan = in_ch * CONV_KERNEL * CONV_KERNEL;
            fan_in_init(
                &format!("conv{i}.w"),
                &[out_ch, in_ch, CONV_KERNEL, CONV_KERNEL],
                fan,
            );
            fan_in_init(&format!("conv{i}.b"), &[out_ch], fan);
            in_ch = out_ch;
        }

        let flat = config.flat_dim();
        fan_in_init("fc1.w", &[config.fc_hidden, flat], flat);
        fan_in_init("fc1.b", &[config.fc_hidden], flat);
        fan_in_init(
            "fc2.w",
            &[config.embedding_dim, config.fc_hidden],
            config.fc_hidden,
        );
        fan_in_init("fc2.b", &[config.embedding_dim], config.fc_hidden);
        fan_in_init(
            "classifier.w",
            &[config.n_families, config.embedding_dim],
            config.embedding_dim,
        );
        fan_in_init("classifier.b", &[config.n_families], config.embedding_dim);

        if config.generated_layers > 0 {
            fan_in_init(
                "meta.fc1.w",
                &[config.fc_hidden, config.task_input_dim],
                config.task_input_dim,
            );
            fan_in_init("meta.fc1.b", &[config.fc_hidden], config.task_input_dim);
            fan_in_init(
                "meta.fc2.w",
                &[config.fc_hidden, config.fc_hidden],
                config.fc_hidden,
            );
            fan_in_init("meta.fc2.b", &[config.fc_hidden], config.fc_hidden);

            let fc_inputs = config.fc_input_dims();
            for name in config.generated_layer_names() {
                let out_dim = if name == "fc1" { fc_inputs[0] } else { fc_inputs[1] };
                let t = Tensor::uniform(
                    &mut derive(seed, &format!("model/init/gen.{name}.w"), 0),
                    &[out_dim, config.fc_hidden],
                    -0.01,
                    0.01,
                );
                tensors.insert(format!("gen.{name}.w"), t);
                tensors.insert(
                    format!("gen.{name}.b"),
                    Tensor::from_vec(vec![1.0; out_dim], &[out_dim]),
                );
            }
        }

        tensors.insert("shift".to_string(), Tensor::scalar(1.0));
        Ok(ModelParams {
            config: config.clone(),
            tensors,
        })
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter tensor '{name}'"))
    }

    /// The learnable distance→probability shift.
    pub fn shift(&self) -> f64 {
        self.get("shift").data[0]
    }
}

/// Column-wise broadcast product `W[r,c] = shared[r,c] · task[c]` — a
/// task-modulated effective weight matrix.
pub fn compose_weights(shared: &Tensor, task: &[f64]) -> Tensor {
    assert_eq!(shared.shape.len(), 2, "shared weights must be a matrix");
    let (rows, cols) = (shared.shape[0], shared.shape[1]);
    assert_eq!(cols, task.len(), "task vector length must match columns");
    let mut data = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            data[r * cols + c] = shared.data[r * cols + c] * task[c];
        }
    }
    Tensor::from_vec(data, &[rows, cols])
}

/// Run the meta-learner on one task feature vector: trunk (two FC layers
/// with ReLU) followed by one generator per generated layer, each with a
/// final ReLU so all task weights are ≥ 0. Returns one vector per generated
/// layer, in `generated_layer_names()` order; `None` when the model has no
/// generated layers.
pub fn generate_task_weights(params: &ModelParams, e_t: &[f64]) -> Result<Option<Vec<Vec<f64>>>> {
    let cfg = &params.config;
    if cfg.generated_layers == 0 {
        return Ok(None);
    }
    if e_t.len() != cfg.task_input_dim {
        return Err(MalsiamError::Config(format!(
            "task feature has dimension {}, model expects {}",
            e_t.len(),
            cfg.task_input_dim
        )));
    }
    let linear_relu = |w: &Tensor, b: &Tensor, x: &[f64]| -> Vec<f64> {
        let out_dim = w.shape[0];
        let mut y = matmul_abt(x, &w.data, 1, x.len(), out_dim);
        for (v, bv) in y.iter_mut().zip(&b.data) {
            *v = (*v + bv).max(0.0);
        }
        y
    };
    let h1 = linear_relu(params.get("meta.fc1.w"), params.get("meta.fc1.b"), e_t);
    let trunk = linear_relu(params.get("meta.fc2.w"), params.get("meta.fc2.b"), &h1);
    let vectors = cfg
        .generated_layer_names()
        .iter()
        .map(|name| {
            linear_relu(
                params.get(&format!("gen.{name}.w")),
                params.get(&format!("gen.{name}.b")),
                &trunk,
            )
        })
        .collect();
    Ok(Some(vectors))
}

/// Canonical image preprocessing: `[0,255]` pixels → `[1, H, W]` tensor in
/// `[0, 1]`.
pub fn preprocess(img: &MalwareImage) -> Tensor {
    let data = img.pixels.data.iter().map(|v| v * PIXEL_RESCALE).collect();
    Tensor::from_vec(data, &[1, IMAGE_SIDE, IMAGE_SIDE])
}

/// Pure conv-trunk forward for one preprocessed `[C, H, W]` input: conv →
/// ReLU → max-pool per layer, flattened. This is the expensive part of
/// inference; evaluation caches its output per sample.
pub fn conv_features(params: &ModelParams, input: &Tensor) -> Vec<f64> {
    let cfg = &params.config;
    let mut data = input.data.clone();
    let (mut c, mut side) = (input.shape[0], input.shape[1]);
    for (i, &out_ch) in cfg.conv_channels.iter().enumerate() {
        let w = params.get(&format!("conv{i}.w"));
        let b = params.get(&format!("conv{i}.b"));
        let oh = conv_out_dim(side, CONV_KERNEL, CONV_STRIDE, CONV_PAD);
        let col = im2col(&data, c, side, side, CONV_KERNEL, CONV_KERNEL, CONV_STRIDE, CONV_PAD);
        let mut y = matmul(&w.data, &col, out_ch, c * CONV_KERNEL * CONV_KERNEL, oh * oh);
        for f in 0..out_ch {
            let bv = b.data[f];
            for v in &mut y[f * oh * oh..(f + 1) * oh * oh] {
                *v = (*v + bv).max(0.0);
            }
        }
        let (pooled, _) = maxpool(&y, out_ch, oh, oh, POOL_KERNELS[i]);
        data = pooled;
        side = oh / POOL_KERNELS[i];
        c = out_ch;
    }
    data
}

/// Pure FC-head forward: flattened conv features (+ optional task weight
/// vectors) → embedding. Task vectors modulate each generated layer's input
/// (`W·(v ⊙ x)`), which equals using the composed weights.
pub fn head_embed(params: &ModelParams, feats: &[f64], task: Option<&[Vec<f64>]>) -> Vec<f64> {
    let cfg = &params.config;
    let generated = cfg.generated_layer_names();
    let task_for = |layer: &str| -> Option<&Vec<f64>> {
        let t = task?;
        generated.iter().position(|n| *n == layer).map(|i| &t[i])
    };
    let linear = |w: &Tensor, b: &Tensor, x: &[f64]| -> Vec<f64> {
        let out_dim = w.shape[0];
        let mut y = matmul_abt(x, &w.data, 1, x.len(), out_dim);
        for (v, bv) in y.iter_mut().zip(&b.data) {
            *v += bv;
        }
        y
    };
    let modulate = |x: &[f64], v: Option<&Vec<f64>>| -> Vec<f64> {
        match v {
            Some(v) => x.iter().zip(v).map(|(a, b)| a * b).collect(),
            None => x.to_vec(),
        }
    };

    let x1 = modulate(feats, task_for("fc1"));
    let mut h = linear(params.get("fc1.w"), params.get("fc1.b"), &x1);
    for v in &mut h {
        *v = v.max(0.0);
    }
    let x2 = modulate(&h, task_for("fc2"));
    linear(params.get("fc2.w"), params.get("fc2.b"), &x2)
}

/// Task-aware embedding of one image under task feature `e_t`.
pub fn embed(params: &ModelParams, img: &MalwareImage, e_t: &[f64]) -> Result<Vec<f64>> {
    let task = generate_task_weights(params, e_t)?;
    let feats = conv_features(params, &preprocess(img));
    Ok(head_embed(params, &feats, task.as_deref()))
}

/// Euclidean distance between the embeddings of two images, both branches
/// conditioned on the same task feature (identical weights — the twin
/// property).
pub fn pair_distance(
    params: &ModelParams,
    x1: &MalwareImage,
    x2: &MalwareImage,
    e_t: &[f64],
) -> Result<f64> {
    let h1 = embed(params, x1, e_t)?;
    let h2 = embed(params, x2, e_t)?;
    Ok(h1
        .iter()
        .zip(&h2)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}
