//! Training: pair sampling, the batched twin-network loss graph, and the
//! epoch loop.
//!
//! Each step builds the full computation on an autograd tape: both branches
//! run the shared conv trunk, the meta-learner turns the pair's task
//! feature into per-layer modulation vectors applied to both branches, and
//! the hybrid objective combines binary cross-entropy over pair
//! probabilities, a center loss over |h1 − h2| distance features keyed by
//! pair polarity, and a softmax cross-entropy over both sides' family
//! logits. Class centers update by EMA after the optimizer step.
//!
//! A pair is conditioned on one task feature — the mean encoded entropy
//! graph of a few samples from the first side's family — mirroring how
//! evaluation conditions both branches on the candidate class's support
//! set.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::error::{MalsiamError, Result};
use crate::features::augment::{augment, AugmentationConfig};
use crate::features::image::{MalwareImage, IMAGE_SIDE};
use crate::rng::derive;
use crate::tensor::Tensor;

use super::adam::Adam;
use super::checkpoint::Checkpoint;
use super::losses::ClassCenters;
use super::{ModelConfig, ModelParams, CONV_PAD, CONV_STRIDE, POOL_KERNELS};

/// One training sample: raw image (pixels in `[0, 255]`), its encoded
/// entropy-graph task feature, and its family label.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub image: MalwareImage,
    pub task_feature: Vec<f64>,
    pub family: usize,
}

/// A batch of image pairs ready for the loss graph. Images are already
/// rescaled to `[0, 1]`; `task` holds one conditioning vector per pair.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub x1: Tensor,
    pub x2: Tensor,
    pub task: Option<Tensor>,
    pub labels: Vec<f64>,
    pub class1: Vec<usize>,
    pub class2: Vec<usize>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Pair polarity as center-loss classes (0 = different family,
    /// 1 = same family).
    pub fn polarity(&self) -> Vec<usize> {
        self.labels.iter().map(|&y| y as usize).collect()
    }

    /// Build a batch from explicit index pairs, without augmentation.
    /// Labels follow family equality; with `use_task`, each pair is
    /// conditioned on the first side's own task feature.
    pub fn from_item_pairs(
        items: &[TrainItem],
        pairs: &[(usize, usize)],
        use_task: bool,
    ) -> PairBatch {
        let n = pairs.len();
        let px = IMAGE_SIDE * IMAGE_SIDE;
        let mut x1 = Vec::with_capacity(n * px);
        let mut x2 = Vec::with_capacity(n * px);
        let mut task = Vec::new();
        let (mut labels, mut class1, mut class2) = (Vec::new(), Vec::new(), Vec::new());
        for &(i, j) in pairs {
            let (a, b) = (&items[i], &items[j]);
            x1.extend(a.image.pixels.data.iter().map(|v| v * super::PIXEL_RESCALE));
            x2.extend(b.image.pixels.data.iter().map(|v| v * super::PIXEL_RESCALE));
            if use_task {
                task.extend_from_slice(&a.task_feature);
            }
            labels.push((a.family == b.family) as u8 as f64);
            class1.push(a.family);
            class2.push(b.family);
        }
        PairBatch {
            x1: Tensor::from_vec(x1, &[n, 1, IMAGE_SIDE, IMAGE_SIDE]),
            x2: Tensor::from_vec(x2, &[n, 1, IMAGE_SIDE, IMAGE_SIDE]),
            task: if use_task {
                let dim = task.len() / n.max(1);
                Some(Tensor::from_vec(task, &[n, dim]))
            } else {
                None
            },
            labels,
            class1,
            class2,
        }
    }

    fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(MalsiamError::Data("empty pair batch".into()));
        }
        if self.x1.shape != self.x2.shape || self.x1.shape[0] != n {
            return Err(MalsiamError::Data("pair batch shape mismatch".into()));
        }
        if cfg.generated_layers > 0 {
            match &self.task {
                Some(t) if t.shape == vec![n, cfg.task_input_dim] => {}
                _ => {
                    return Err(MalsiamError::Data(
                        "pair batch lacks task features of the configured dimension".into(),
                    ))
                }
            }
        }
        for i in 0..n {
            if self.labels[i] != 0.0 && self.labels[i] != 1.0 {
                return Err(MalsiamError::Data("pair labels must be 0 or 1".into()));
            }
            if (self.labels[i] == 1.0) != (self.class1[i] == self.class2[i]) {
                return Err(MalsiamError::Data(
                    "pair label contradicts family labels".into(),
                ));
            }
            if self.class1[i] >= cfg.n_families || self.class2[i] >= cfg.n_families {
                return Err(MalsiamError::Data(format!(
                    "family label out of range for {} families",
                    cfg.n_families
                )));
            }
        }
        Ok(())
    }
}

/// Named parameter leaves of a loss graph.
pub struct GraphNodes {
    map: BTreeMap<String, crate::autograd::NodeId>,
}

impl GraphNodes {
    pub fn from_map(map: &BTreeMap<String, crate::autograd::NodeId>) -> Self {
        GraphNodes { map: map.clone() }
    }

    pub fn get(&self, name: &str) -> crate::autograd::NodeId {
        *self
            .map
            .get(name)
            .unwrap_or_else(|| panic!("graph has no parameter node '{name}'"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &crate::autograd::NodeId)> {
        self.map.iter()
    }
}

/// Insert every parameter tensor as a graph leaf.
pub fn insert_params(g: &mut Graph, params: &ModelParams, trainable: bool) -> GraphNodes {
    let map = params
        .tensors
        .iter()
        .map(|(name, t)| (name.clone(), g.leaf(t.clone(), trainable)))
        .collect();
    GraphNodes { map }
}

/// Shared conv trunk on a `[N, 1, H, W]` batch: conv → ReLU → max-pool per
/// layer, flattened to `[N, features]`.
pub fn build_conv_trunk(
    g: &mut Graph,
    cfg: &ModelConfig,
    nodes: &GraphNodes,
    x: crate::autograd::NodeId,
) -> crate::autograd::NodeId {
    let mut cur = x;
    for i in 0..cfg.conv_channels.len() {
        let w = nodes.get(&format!("conv{i}.w"));
        let b = nodes.get(&format!("conv{i}.b"));
        cur = g.conv2d(cur, w, b, CONV_STRIDE, CONV_PAD);
        cur = g.relu(cur);
        cur = g.maxpool2d(cur, POOL_KERNELS[i]);
    }
    let shape = g.value(cur).shape.clone();
    let flat: usize = shape[1..].iter().product();
    g.reshape(cur, &[shape[0], flat])
}

/// Meta-learner on a `[N, E]` batch of task features: two-layer ReLU trunk,
/// then one ReLU generator per generated layer. Returns `None` when the
/// model has no generated layers.
pub fn build_task_vectors(
    g: &mut Graph,
    cfg: &ModelConfig,
    nodes: &GraphNodes,
    e: crate::autograd::NodeId,
) -> Option<Vec<crate::autograd::NodeId>> {
    if cfg.generated_layers == 0 {
        return None;
    }
    let mut h = g.linear(e, nodes.get("meta.fc1.w"), nodes.get("meta.fc1.b"));
    h = g.relu(h);
    let mut t = g.linear(h, nodes.get("meta.fc2.w"), nodes.get("meta.fc2.b"));
    t = g.relu(t);
    let vectors = cfg
        .generated_layer_names()
        .iter()
        .map(|name| {
            let v = g.linear(
                t,
                nodes.get(&format!("gen.{name}.w")),
                nodes.get(&format!("gen.{name}.b")),
            );
            g.relu(v)
        })
        .collect();
    Some(vectors)
}

/// FC head on flattened conv features, modulating each generated layer's
/// input by its task vector (`W·(v ⊙ x)` — the factorized weights).
pub fn build_head(
    g: &mut Graph,
    cfg: &ModelConfig,
    nodes: &GraphNodes,
    feats: crate::autograd::NodeId,
    task: Option<&Vec<crate::autograd::NodeId>>,
) -> crate::autograd::NodeId {
    let generated = cfg.generated_layer_names();
    let task_for = |layer: &str| -> Option<crate::autograd::NodeId> {
        let t = task?;
        generated.iter().position(|n| *n == layer).map(|i| t[i])
    };
    let mut x = feats;
    if let Some(v) = task_for("fc1") {
        x = g.elem_mul(x, v);
    }
    x = g.linear(x, nodes.get("fc1.w"), nodes.get("fc1.b"));
    x = g.relu(x);
    if let Some(v) = task_for("fc2") {
        x = g.elem_mul(x, v);
    }
    g.linear(x, nodes.get("fc2.w"), nodes.get("fc2.b"))
}

/// Node handles of one assembled loss graph.
pub struct LossNodes {
    pub total: crate::autograd::NodeId,
    pub bce: crate::autograd::NodeId,
    pub center: crate::autograd::NodeId,
    pub embedding: crate::autograd::NodeId,
    pub dist_features: crate::autograd::NodeId,
    pub h1: crate::autograd::NodeId,
    pub h2: crate::autograd::NodeId,
}

/// Assemble the full hybrid loss over a pair batch:
/// `β·L_embedding + L_bce + λ·L_center`.
pub fn build_training_loss(
    g: &mut Graph,
    cfg: &ModelConfig,
    nodes: &GraphNodes,
    batch: &PairBatch,
    centers: &ClassCenters,
) -> LossNodes {
    let x1 = g.constant(batch.x1.clone());
    let x2 = g.constant(batch.x2.clone());
    let feats1 = build_conv_trunk(g, cfg, nodes, x1);
    let feats2 = build_conv_trunk(g, cfg, nodes, x2);
    let task = match (&batch.task, cfg.generated_layers) {
        (Some(t), k) if k > 0 => {
            let e = g.constant(t.clone());
            build_task_vectors(g, cfg, nodes, e)
        }
        _ => None,
    };
    let h1 = build_head(g, cfg, nodes, feats1, task.as_ref());
    let h2 = build_head(g, cfg, nodes, feats2, task.as_ref());

    let d = g.pair_l2(h1, h2);
    let z = g.shift_minus(d, nodes.get("shift"));
    let bce = g.bce_loss(z, &batch.labels);

    let dist_features = g.abs_diff(h1, h2);
    let center = g.center_loss(dist_features, &centers.centers, &batch.polarity());

    let logits1 = g.linear(h1, nodes.get("classifier.w"), nodes.get("classifier.b"));
    let logits2 = g.linear(h2, nodes.get("classifier.w"), nodes.get("classifier.b"));
    let xent1 = g.softmax_xent(logits1, &batch.class1);
    let xent2 = g.softmax_xent(logits2, &batch.class2);
    let summed = g.add(xent1, xent2);
    let embedding = g.scale(summed, 0.5);

    let weighted_center = g.scale(center, cfg.center_loss_weight);
    let inner = g.add(bce, weighted_center);
    let weighted_embedding = g.scale(embedding, cfg.beta);
    let total = g.add(weighted_embedding, inner);
    LossNodes {
        total,
        bce,
        center,
        embedding,
        dist_features,
        h1,
        h2,
    }
}

/// Loss values of one step.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepLosses {
    pub total: f64,
    pub bce: f64,
    pub center: f64,
    pub embedding: f64,
}

/// Per-epoch loss summary (means over the epoch's steps).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: u64,
    pub train_total: f64,
    pub train_bce: f64,
    pub train_center: f64,
    pub train_embedding: f64,
    pub val_total: Option<f64>,
}

/// Training hyperparameters independent of the model architecture.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Total epoch target; resumed runs continue toward the same target.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_main: f64,
    pub lr_meta: f64,
    pub seed: u64,
    /// Random augmentation applied to every sampled training image;
    /// `None` disables augmentation (plain rescale only).
    pub augment: Option<AugmentationConfig>,
    /// Task features average over `K ~ U[1..=max]` same-family samples.
    pub max_task_shots: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 20,
            batch_size: 32,
            lr_main: 1e-4,
            lr_meta: 1e-5,
            seed: 7,
            augment: Some(AugmentationConfig::default()),
            max_task_shots: 5,
        }
    }
}

impl TrainOptions {
    /// Check hyperparameter sanity.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(MalsiamError::Config("batch size must be positive".into()));
        }
        if self.max_task_shots == 0 {
            return Err(MalsiamError::Config(
                "task feature averaging needs at least one shot".into(),
            ));
        }
        if !(self.lr_main > 0.0) || !(self.lr_meta > 0.0) {
            return Err(MalsiamError::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Full training state: parameters, optimizer, class centers, and the pair
/// sampler's RNG.
pub struct Trainer {
    pub params: ModelParams,
    pub optimizer: Adam,
    pub centers: ClassCenters,
    pub options: TrainOptions,
    pub epochs_done: u64,
    rng: ChaCha8Rng,
}

/// Deterministic index pairs used for the per-epoch validation loss.
struct ValPlan {
    pairs: Vec<(usize, usize)>,
    tasks: Vec<Vec<f64>>,
}

impl Trainer {
    pub fn new(config: &ModelConfig, options: TrainOptions) -> Result<Self> {
        options.validate()?;
        let params = ModelParams::init(config, options.seed)?;
        let rng = derive(options.seed, "train/sampler", 0);
        Ok(Trainer {
            optimizer: Adam::new(options.lr_main, options.lr_meta),
            centers: ClassCenters::new(2, config.embedding_dim, config.center_update_rate),
            params,
            options,
            epochs_done: 0,
            rng,
        })
    }

    /// Resume from a checkpoint; the options' learning rates are superseded
    /// by the checkpointed optimizer state.
    pub fn from_checkpoint(ckpt: Checkpoint, options: TrainOptions) -> Result<Self> {
        options.validate()?;
        let rng = ckpt.restore_rng()?;
        Ok(Trainer {
            params: ckpt.params,
            optimizer: ckpt.optimizer,
            centers: ckpt.centers,
            options,
            epochs_done: ckpt.epochs_done,
            rng,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint {
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
            centers: self.centers.clone(),
            rng_seed: vec![0; 32],
            rng_stream: 0,
            rng_word_pos: 0,
            epochs_done: self.epochs_done,
        };
        ckpt.capture_rng(&self.rng);
        ckpt
    }

    /// One optimizer step on a batch: forward, backward, Adam update, then
    /// the EMA center update from this batch's distance features.
    pub fn step(&mut self, batch: &PairBatch) -> Result<StepLosses> {
        batch.validate(&self.params.config)?;
        let mut g = Graph::new();
        let nodes = insert_params(&mut g, &self.params, true);
        let loss = build_training_loss(&mut g, &self.params.config, &nodes, batch, &self.centers);
        let losses = StepLosses {
            total: g.value(loss.total).data[0],
            bce: g.value(loss.bce).data[0],
            center: g.value(loss.center).data[0],
            embedding: g.value(loss.embedding).data[0],
        };
        if !losses.total.is_finite() {
            return Err(MalsiamError::Numeric(format!(
                "non-finite training loss {}",
                losses.total
            )));
        }
        g.backward(loss.total);
        let mut grads = BTreeMap::new();
        for (name, &id) in nodes.iter() {
            if let Some(grad) = g.grad(id) {
                grads.insert(name.clone(), grad.clone());
            }
        }
        let dist_features = g.value(loss.dist_features).clone();
        drop(g);
        self.optimizer.step(&mut self.params, &grads)?;
        self.centers.update(&dist_features, &batch.polarity());
        Ok(losses)
    }

    /// Loss values on a batch without touching parameters or centers.
    pub fn forward_loss(&self, batch: &PairBatch) -> Result<StepLosses> {
        batch.validate(&self.params.config)?;
        let mut g = Graph::new();
        let nodes = insert_params(&mut g, &self.params, false);
        let loss = build_training_loss(&mut g, &self.params.config, &nodes, batch, &self.centers);
        let losses = StepLosses {
            total: g.value(loss.total).data[0],
            bce: g.value(loss.bce).data[0],
            center: g.value(loss.center).data[0],
            embedding: g.value(loss.embedding).data[0],
        };
        if !losses.total.is_finite() {
            return Err(MalsiamError::Numeric(format!(
                "non-finite validation loss {}",
                losses.total
            )));
        }
        Ok(losses)
    }

    /// Run epochs until the configured target, returning the stats of the
    /// epochs executed by this call. An already-satisfied target returns an
    /// empty series and leaves all state untouched.
    pub fn train(
        &mut self,
        train_items: &[TrainItem],
        val_items: &[TrainItem],
    ) -> Result<Vec<EpochStats>> {
        let families = group_by_family(train_items, &self.params.config)?;
        check_pairable(&families)?;
        let val_plan = self.plan_validation(val_items)?;
        let steps_per_epoch =
            (train_items.len() + self.options.batch_size - 1) / self.options.batch_size;
        let steps_per_epoch = steps_per_epoch.max(1);

        let mut history = Vec::new();
        while self.epochs_done < self.options.epochs as u64 {
            let mut sums = [0.0f64; 4];
            for _ in 0..steps_per_epoch {
                let batch = self.sample_batch(train_items, &families)?;
                let losses = self.step(&batch)?;
                sums[0] += losses.total;
                sums[1] += losses.bce;
                sums[2] += losses.center;
                sums[3] += losses.embedding;
            }
            let val_total = match &val_plan {
                Some(plan) => Some(self.validation_loss(val_items, plan)?),
                None => None,
            };
            let n = steps_per_epoch as f64;
            self.epochs_done += 1;
            history.push(EpochStats {
                epoch: self.epochs_done,
                train_total: sums[0] / n,
                train_bce: sums[1] / n,
                train_center: sums[2] / n,
                train_embedding: sums[3] / n,
                val_total,
            });
        }
        Ok(history)
    }

    /// Sample a balanced batch: half same-family pairs, half cross-family,
    /// each pair conditioned on a task feature averaged over a few samples
    /// of the first side's family, with per-image random augmentation.
    fn sample_batch(
        &mut self,
        items: &[TrainItem],
        families: &[(usize, Vec<usize>)],
    ) -> Result<PairBatch> {
        let cfg = self.params.config.clone();
        let n = self.options.batch_size;
        let n_pos = n - n / 2;
        let px = IMAGE_SIDE * IMAGE_SIDE;
        let pos_eligible: Vec<usize> = (0..families.len())
            .filter(|&f| families[f].1.len() >= 2)
            .collect();

        let mut x1 = Vec::with_capacity(n * px);
        let mut x2 = Vec::with_capacity(n * px);
        let mut task = Vec::new();
        let (mut labels, mut class1, mut class2) = (Vec::new(), Vec::new(), Vec::new());
        for slot in 0..n {
            let (fam1, idx1, fam2, idx2) = if slot < n_pos {
                let f = pos_eligible[self.rng.gen_range(0..pos_eligible.len())];
                let members = &families[f].1;
                let a = self.rng.gen_range(0..members.len());
                let mut b = self.rng.gen_range(0..members.len() - 1);
                if b >= a {
                    b += 1;
                }
                (f, members[a], f, members[b])
            } else {
                let f1 = self.rng.gen_range(0..families.len());
                let mut f2 = self.rng.gen_range(0..families.len() - 1);
                if f2 >= f1 {
                    f2 += 1;
                }
                let a = self.rng.gen_range(0..families[f1].1.len());
                let b = self.rng.gen_range(0..families[f2].1.len());
                (f1, families[f1].1[a], f2, families[f2].1[b])
            };

            if cfg.generated_layers > 0 {
                task.extend(self.mean_task_feature(items, &families[fam1].1, &cfg));
            }
            for (idx, dst) in [(idx1, &mut x1), (idx2, &mut x2)] {
                dst.extend(self.prepared_pixels(&items[idx].image)?);
            }
            labels.push((slot < n_pos) as u8 as f64);
            class1.push(families[fam1].0);
            class2.push(families[fam2].0);
        }
        Ok(PairBatch {
            x1: Tensor::from_vec(x1, &[n, 1, IMAGE_SIDE, IMAGE_SIDE]),
            x2: Tensor::from_vec(x2, &[n, 1, IMAGE_SIDE, IMAGE_SIDE]),
            task: if cfg.generated_layers > 0 {
                Some(Tensor::from_vec(task, &[n, cfg.task_input_dim]))
            } else {
                None
            },
            labels,
            class1,
            class2,
        })
    }

    /// Mean task feature over `K ~ U[1..=max]` distinct members of one
    /// family.
    fn mean_task_feature(
        &mut self,
        items: &[TrainItem],
        members: &[usize],
        cfg: &ModelConfig,
    ) -> Vec<f64> {
        let k_max = self.options.max_task_shots.min(members.len());
        let k = self.rng.gen_range(1..=k_max);
        let mut pool: Vec<usize> = members.to_vec();
        for i in 0..k {
            let j = self.rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        let mut mean = vec![0.0; cfg.task_input_dim];
        for &idx in &pool[..k] {
            for (m, v) in mean.iter_mut().zip(&items[idx].task_feature) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= k as f64;
        }
        mean
    }

    /// Rescale (and optionally augment) one raw image into model input.
    fn prepared_pixels(&mut self, image: &MalwareImage) -> Result<Vec<f64>> {
        match &self.options.augment {
            Some(cfg) => {
                let seed = self.rng.gen::<u64>();
                Ok(augment(image, cfg, seed).pixels.data)
            }
            None => Ok(image
                .pixels
                .data
                .iter()
                .map(|v| v * super::PIXEL_RESCALE)
                .collect()),
        }
    }

    /// Fixed validation pairs: balanced, drawn once per `train()` call from
    /// a seed-derived stream so resumed runs score the same pairs.
    fn plan_validation(&self, val_items: &[TrainItem]) -> Result<Option<ValPlan>> {
        if val_items.is_empty() {
            return Ok(None);
        }
        let families = group_by_family(val_items, &self.params.config)?;
        if check_pairable(&families).is_err() {
            return Ok(None);
        }
        let cfg = &self.params.config;
        let mut rng = derive(self.options.seed, "train/val-pairs", 0);
        let n = self.options.batch_size.max(8);
        let n_pos = n - n / 2;
        let pos_eligible: Vec<usize> = (0..families.len())
            .filter(|&f| families[f].1.len() >= 2)
            .collect();
        let mut pairs = Vec::with_capacity(n);
        let mut tasks = Vec::with_capacity(n);
        for slot in 0..n {
            let (f1, i, j) = if slot < n_pos {
                let f = pos_eligible[rng.gen_range(0..pos_eligible.len())];
                let members = &families[f].1;
                let a = rng.gen_range(0..members.len());
                let mut b = rng.gen_range(0..members.len() - 1);
                if b >= a {
                    b += 1;
                }
                (f, members[a], members[b])
            } else {
                let f1 = rng.gen_range(0..families.len());
                let mut f2 = rng.gen_range(0..families.len() - 1);
                if f2 >= f1 {
                    f2 += 1;
                }
                let a = rng.gen_range(0..families[f1].1.len());
                let b = rng.gen_range(0..families[f2].1.len());
                (f1, families[f1].1[a], families[f2].1[b])
            };
            pairs.push((i, j));
            if cfg.generated_layers > 0 {
                // Validation conditions on the family mean, like evaluation.
                let members = &families[f1].1;
                let mut mean = vec![0.0; cfg.task_input_dim];
                for &idx in members {
                    for (m, v) in mean.iter_mut().zip(&val_items[idx].task_feature) {
                        *m += v;
                    }
                }
                for m in &mut mean {
                    *m /= members.len() as f64;
                }
                tasks.push(mean);
            }
        }
        Ok(Some(ValPlan { pairs, tasks }))
    }

    fn validation_loss(&self, val_items: &[TrainItem], plan: &ValPlan) -> Result<f64> {
        let mut batch = PairBatch::from_item_pairs(val_items, &plan.pairs, false);
        if self.params.config.generated_layers > 0 {
            let n = plan.pairs.len();
            let dim = self.params.config.task_input_dim;
            let flat: Vec<f64> = plan.tasks.iter().flatten().copied().collect();
            batch.task = Some(Tensor::from_vec(flat, &[n, dim]));
        }
        Ok(self.forward_loss(&batch)?.total)
    }
}

/// Group item indices by family label, validating labels and feature
/// dimensions.
fn group_by_family(items: &[TrainItem], cfg: &ModelConfig) -> Result<Vec<(usize, Vec<usize>)>> {
    if items.is_empty() {
        return Err(MalsiamError::Data("no training samples".into()));
    }
    let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        if item.family >= cfg.n_families {
            return Err(MalsiamError::Data(format!(
                "family label {} out of range for {} families",
                item.family, cfg.n_families
            )));
        }
        if cfg.generated_layers > 0 && item.task_feature.len() != cfg.task_input_dim {
            return Err(MalsiamError::Data(format!(
                "task feature dimension {} does not match model ({})",
                item.task_feature.len(),
                cfg.task_input_dim
            )));
        }
        map.entry(item.family).or_default().push(i);
    }
    Ok(map.into_iter().collect())
}

/// Pair sampling needs at least one family with two samples (positives)
/// and at least two families (negatives).
fn check_pairable(families: &[(usize, Vec<usize>)]) -> Result<()> {
    if !families.iter().any(|(_, v)| v.len() >= 2) {
        return Err(MalsiamError::Data(
            "no family has two samples; cannot form similar pairs".into(),
        ));
    }
    if families.len() < 2 {
        return Err(MalsiamError::Data(
            "need at least two families to form dissimilar pairs".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::relative_error;

    /// Tiny architecture used throughout: two conv layers on the full
    /// 105×105 input keep the parameter count small but the real geometry.
    fn tiny_config() -> ModelConfig {
        ModelConfig {
            conv_channels: vec![2, 4],
            fc_hidden: 16,
            task_input_dim: 8,
            embedding_dim: 6,
            n_families: 3,
            generated_layers: 2,
            ..ModelConfig::default()
        }
    }

    fn tiny_options(epochs: usize) -> TrainOptions {
        TrainOptions {
            epochs,
            batch_size: 4,
            lr_main: 1e-3,
            lr_meta: 1e-4,
            seed: 5,
            augment: None,
            max_task_shots: 3,
        }
    }

    /// Separable toy dataset: families differ in brightness band, task
    /// features are noisy near-one-hot patterns.
    fn toy_items_families(n_families: usize, per_family: usize) -> Vec<TrainItem> {
        let bands = [(10.0, 60.0), (195.0, 245.0), (100.0, 155.0)];
        let mut items = Vec::new();
        for fam in 0..n_families {
            for s in 0..per_family {
                let mut rng = derive(900 + fam as u64, "train-test/img", s as u64);
                let (lo, hi) = bands[fam % bands.len()];
                let pixels = Tensor::uniform(&mut rng, &[IMAGE_SIDE, IMAGE_SIDE], lo, hi);
                let mut task = vec![0.0; 8];
                let mut trng = derive(77 + fam as u64, "train-test/task", s as u64);
                for (i, t) in task.iter_mut().enumerate() {
                    *t = if i % n_families == fam { 1.0 } else { 0.0 };
                    *t += trng.gen_range(-0.05..0.05);
                }
                items.push(TrainItem {
                    image: MalwareImage { pixels },
                    task_feature: task,
                    family: fam,
                });
            }
        }
        items
    }

    fn toy_items(per_family: usize) -> Vec<TrainItem> {
        toy_items_families(3, per_family)
    }

    #[test]
    fn hybrid_loss_gradients_match_finite_differences() {
        // Spot-check the assembled training graph end to end on a few
        // coordinates of every parameter kind.
        let cfg = ModelConfig {
            conv_channels: vec![2],
            fc_hidden: 6,
            task_input_dim: 4,
            embedding_dim: 4,
            n_families: 3,
            generated_layers: 2,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&cfg, 21).unwrap();
        let items = toy_items(2);
        let batch = PairBatch::from_item_pairs(
            &items,
            &[(0, 1), (0, 2)],
            true,
        );
        // Shrink task features to dim 4.
        let t = batch.task.as_ref().unwrap();
        let mut batch = batch.clone();
        batch.task = Some(Tensor::from_vec(
            t.data
                .chunks(8)
                .flat_map(|row| row[..4].to_vec())
                .collect(),
            &[2, 4],
        ));
        let mut centers = ClassCenters::new(2, 4, 0.5);
        centers.centers = Tensor::uniform(
            &mut derive(3, "train-test/centers", 0),
            &[2, 4],
            -0.2,
            0.2,
        );

        let loss_for = |params: &ModelParams| -> f64 {
            let mut g = Graph::new();
            let nodes = insert_params(&mut g, params, false);
            let loss = build_training_loss(&mut g, &cfg, &nodes, &batch, &centers);
            g.value(loss.total).data[0]
        };

        let mut g = Graph::new();
        let nodes = insert_params(&mut g, &params, true);
        let loss = build_training_loss(&mut g, &cfg, &nodes, &batch, &centers);
        g.backward(loss.total);

        for tensor_name in ["conv0.w", "fc1.w", "fc2.b", "gen.fc1.w", "meta.fc1.w", "shift", "classifier.w"] {
            let analytic = g.grad(nodes.get(tensor_name)).unwrap().clone();
            let base = params.get(tensor_name).clone();
            let probe = [0usize, base.numel() / 2, base.numel() - 1];
            for &coord in probe.iter().take(if base.numel() == 1 { 1 } else { 3 }) {
                let fd = {
                    let mut plus = params.clone();
                    plus.tensors.get_mut(tensor_name).unwrap().data[coord] += 1e-5;
                    let mut minus = params.clone();
                    minus.tensors.get_mut(tensor_name).unwrap().data[coord] -= 1e-5;
                    (loss_for(&plus) - loss_for(&minus)) / 2e-5
                };
                let err = relative_error(analytic.data[coord], fd);
                assert!(
                    err < 1e-4,
                    "{tensor_name}[{coord}]: analytic {} vs fd {fd} (rel {err})",
                    analytic.data[coord]
                );
            }
        }
    }

    #[test]
    fn beta_zero_lambda_zero_reduces_to_pure_bce() {
        let mut cfg = tiny_config();
        cfg.generated_layers = 0;
        cfg.beta = 0.0;
        cfg.center_loss_weight = 0.0;
        let trainer = Trainer::new(&cfg, tiny_options(1)).unwrap();
        let items = toy_items(2);
        let batch = PairBatch::from_item_pairs(&items, &[(0, 1), (0, 2), (2, 3)], false);
        let losses = trainer.forward_loss(&batch).unwrap();
        assert_eq!(losses.total, losses.bce, "weighted-off terms must vanish exactly");
    }

    #[test]
    fn two_hundred_toy_steps_halve_the_training_loss() {
        // 200 optimizer steps on a two-family separable toy corpus must cut
        // the hybrid training loss by at least half from step 1 (averaging
        // the last few steps to iron out batch-sampling noise).
        let mut cfg = tiny_config();
        cfg.n_families = 2;
        let mut options = tiny_options(0);
        options.batch_size = 6;
        options.lr_main = 3e-3;
        options.lr_meta = 3e-4;
        let mut trainer = Trainer::new(&cfg, options).unwrap();
        let items = toy_items_families(2, 4);
        let families = group_by_family(&items, &cfg).unwrap();
        let mut losses = Vec::with_capacity(200);
        for _ in 0..200 {
            let batch = trainer.sample_batch(&items, &families).unwrap();
            losses.push(trainer.step(&batch).unwrap().total);
        }
        let first = losses[0];
        let tail = losses[190..].iter().sum::<f64>() / 10.0;
        assert!(
            tail <= first * 0.5,
            "loss should halve on separable data: step 1 {first}, final {tail}"
        );
    }

    #[test]
    fn identical_seeds_give_identical_trajectories() {
        let cfg = tiny_config();
        let items = toy_items(3);
        let mut a = Trainer::new(&cfg, tiny_options(2)).unwrap();
        let mut b = Trainer::new(&cfg, tiny_options(2)).unwrap();
        let ha = a.train(&items, &[]).unwrap();
        let hb = b.train(&items, &[]).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.centers, b.centers);
        for (x, y) in ha.iter().zip(&hb) {
            assert_eq!(x.train_total, y.train_total);
        }
    }

    #[test]
    fn checkpoint_resume_matches_uninterrupted_run() {
        let cfg = tiny_config();
        let items = toy_items(3);
        let val = toy_items(2);

        // Uninterrupted: 3 epochs.
        let mut full = Trainer::new(&cfg, tiny_options(3)).unwrap();
        let h_full = full.train(&items, &val).unwrap();

        // Interrupted: 2 epochs, checkpoint, resume for the third.
        let mut first = Trainer::new(&cfg, tiny_options(2)).unwrap();
        let h_first = first.train(&items, &val).unwrap();
        let ckpt = first.to_checkpoint();
        let bytes = ckpt.to_bytes();
        let restored = Checkpoint::from_bytes(&bytes).unwrap();
        let mut second = Trainer::from_checkpoint(restored, tiny_options(3)).unwrap();
        let h_second = second.train(&items, &val).unwrap();

        assert_eq!(h_first.len(), 2);
        assert_eq!(h_second.len(), 1);
        assert_eq!(full.params, second.params);
        assert_eq!(full.centers, second.centers);
        assert_eq!(full.optimizer, second.optimizer);
        assert_eq!(
            h_full.last().unwrap().train_total,
            h_second.last().unwrap().train_total
        );
        assert_eq!(
            h_full.last().unwrap().val_total,
            h_second.last().unwrap().val_total
        );
    }

    #[test]
    fn zero_epoch_training_returns_empty_history() {
        let cfg = tiny_config();
        let mut trainer = Trainer::new(&cfg, tiny_options(0)).unwrap();
        let before = trainer.params.clone();
        let items = toy_items(2);
        let history = trainer.train(&items, &[]).unwrap();
        assert!(history.is_empty());
        assert_eq!(trainer.params, before);
        assert_eq!(trainer.epochs_done, 0);
    }

    #[test]
    fn rejects_unpairable_datasets() {
        let cfg = tiny_config();
        let mut trainer = Trainer::new(&cfg, tiny_options(1)).unwrap();
        let items = toy_items(2);

        // Single family: no dissimilar pairs possible.
        let one_family: Vec<TrainItem> =
            items.iter().filter(|i| i.family == 0).cloned().collect();
        assert!(trainer.train(&one_family, &[]).is_err());

        // One sample per family: no similar pairs possible.
        let singletons: Vec<TrainItem> = (0..3)
            .map(|f| items.iter().find(|i| i.family == f).unwrap().clone())
            .collect();
        assert!(trainer.train(&singletons, &[]).is_err());

        // Out-of-range family label.
        let mut bad = items.clone();
        bad[0].family = 99;
        assert!(trainer.train(&bad, &[]).is_err());

        assert!(trainer.train(&[], &[]).is_err());
    }

    #[test]
    fn augmented_sampling_is_reproducible_and_in_range() {
        let cfg = tiny_config();
        let mut options = tiny_options(1);
        options.augment = Some(AugmentationConfig::default());
        let items = toy_items(3);
        let mut a = Trainer::new(&cfg, options.clone()).unwrap();
        let mut b = Trainer::new(&cfg, options).unwrap();
        let fams = group_by_family(&items, &cfg).unwrap();
        let ba = a.sample_batch(&items, &fams).unwrap();
        let bb = b.sample_batch(&items, &fams).unwrap();
        assert_eq!(ba.x1, bb.x1);
        assert_eq!(ba.labels, bb.labels);
        assert!(ba.x1.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        // Balanced labels.
        let pos: usize = ba.labels.iter().map(|&y| y as usize).sum();
        assert_eq!(pos, 2);
        for i in 0..ba.len() {
            assert_eq!(ba.labels[i] == 1.0, ba.class1[i] == ba.class2[i]);
        }
    }

    #[test]
    fn validation_loss_is_deterministic_across_calls() {
        let cfg = tiny_config();
        let items = toy_items(3);
        let val = toy_items(2);
        let mut t = Trainer::new(&cfg, tiny_options(2)).unwrap();
        let history = t.train(&items, &val).unwrap();
        assert!(history.iter().all(|e| e.val_total.is_some()));
    }
}
