//! Episodic N-way K-shot evaluation and metrics.
//!
//! An episode draws `n_way` distinct families, `k_shot` support samples per
//! family, and keeps each family's remaining samples as queries with hidden
//! labels. Prediction scores a query against each candidate class with both
//! branches conditioned on that class's support-set mean task feature;
//! similarity is negative embedding distance averaged over the shots, and
//! the argmax (lowest class index on ties) is the prediction.
//!
//! `run_eval` executes `m` episodes, scoring one anchor query per episode
//! (accuracy = 100·Q/m), and separately scores a balanced set of sample
//! pairs for the confusion counts (pair probability thresholded at 0.5),
//! the AUC-ROC curve, and a 2-D PCA projection of the pairs' distance
//! features.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MalsiamError, Result};
use crate::linalg::symmetric_eigen;
use crate::model::losses::pair_probability;
use crate::model::train::TrainItem;
use crate::model::{conv_features, generate_task_weights, head_embed, preprocess, ModelParams};
use crate::rng::derive;
use crate::tensor::Tensor;

/// Pairs scored for the confusion / AUC / PCA report: 25 same-family and
/// 25 cross-family.
pub const DEFAULT_CONFUSION_PAIRS: usize = 50;

/// Evaluation pool with cached per-sample conv-trunk features (the
/// expensive half of the forward pass; the task-conditioned head is cheap
/// and runs per candidate class).
pub struct EvalPool {
    conv: Vec<Vec<f64>>,
    task: Vec<Vec<f64>>,
    family_of: Vec<usize>,
    /// `(family label, pool indices)`, ordered by label.
    pub families: Vec<(usize, Vec<usize>)>,
}

impl EvalPool {
    /// Run the conv trunk once per item and index items by family.
    pub fn build(params: &ModelParams, items: &[TrainItem]) -> Result<Self> {
        let conv = items
            .iter()
            .map(|item| conv_features(params, &preprocess(&item.image)))
            .collect();
        Self::from_features(
            conv,
            items.iter().map(|i| i.task_feature.clone()).collect(),
            items.iter().map(|i| i.family).collect(),
        )
    }

    /// Assemble a pool from precomputed features.
    pub fn from_features(
        conv: Vec<Vec<f64>>,
        task: Vec<Vec<f64>>,
        family_of: Vec<usize>,
    ) -> Result<Self> {
        if conv.is_empty() || conv.len() != task.len() || conv.len() != family_of.len() {
            return Err(MalsiamError::Data(
                "evaluation pool needs equal nonzero feature/label counts".into(),
            ));
        }
        let mut map: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (i, &f) in family_of.iter().enumerate() {
            map.entry(f).or_default().push(i);
        }
        Ok(EvalPool {
            conv,
            task,
            family_of,
            families: map.into_iter().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.conv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conv.is_empty()
    }

    pub fn family_of(&self, index: usize) -> usize {
        self.family_of[index]
    }

    /// Mean task feature over a set of pool indices.
    fn mean_task(&self, indices: &[usize]) -> Vec<f64> {
        let dim = self.task[indices[0]].len();
        let mut mean = vec![0.0; dim];
        for &i in indices {
            for (m, v) in mean.iter_mut().zip(&self.task[i]) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= indices.len() as f64;
        }
        mean
    }
}

/// One N-way K-shot task over pool indices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Episode {
    pub n_way: usize,
    pub k_shot: usize,
    /// Family label of each class slot.
    pub classes: Vec<usize>,
    /// `[n_way][k_shot]` support sample indices.
    pub support: Vec<Vec<usize>>,
    /// Query sample indices: every non-support sample of each episode
    /// class, grouped by class slot.
    pub query: Vec<usize>,
    /// Ground-truth class slot of each query (hidden from prediction).
    pub query_labels: Vec<usize>,
    /// Class slot whose query is scored for episode correctness.
    pub anchor: usize,
}

impl Episode {
    /// Index (within `query`) of the scored anchor query: the first query
    /// belonging to the anchor class.
    pub fn anchor_query(&self) -> usize {
        self.query_labels
            .iter()
            .position(|&l| l == self.anchor)
            .expect("episode invariant: every class has at least one query")
    }
}

/// Draw an episode: uniform class and sample selection without
/// replacement, deterministic per seed.
pub fn sample_episode(
    pool: &EvalPool,
    n_way: usize,
    k_shot: usize,
    seed: u64,
) -> Result<Episode> {
    if n_way == 0 || k_shot == 0 {
        return Err(MalsiamError::Config(
            "episodes need n_way ≥ 1 and k_shot ≥ 1".into(),
        ));
    }
    let eligible: Vec<usize> = (0..pool.families.len())
        .filter(|&f| pool.families[f].1.len() > k_shot)
        .collect();
    if eligible.len() < n_way {
        return Err(MalsiamError::Data(format!(
            "episode needs {n_way} families with at least {} samples, corpus has {}",
            k_shot + 1,
            eligible.len()
        )));
    }
    let mut rng = derive(seed, "episodes/sample", 0);
    // Partial Fisher-Yates over the eligible family list.
    let mut fams = eligible;
    for i in 0..n_way {
        let j = rng.gen_range(i..fams.len());
        fams.swap(i, j);
    }
    let mut classes = Vec::with_capacity(n_way);
    let mut support = Vec::with_capacity(n_way);
    let mut query = Vec::new();
    let mut query_labels = Vec::new();
    for (slot, &f) in fams[..n_way].iter().enumerate() {
        let (label, members) = &pool.families[f];
        let mut order = members.clone();
        for i in 0..order.len() - 1 {
            let j = rng.gen_range(i..order.len());
            order.swap(i, j);
        }
        classes.push(*label);
        support.push(order[..k_shot].to_vec());
        for &q in &order[k_shot..] {
            query.push(q);
            query_labels.push(slot);
        }
    }
    let anchor = rng.gen_range(0..n_way);
    Ok(Episode {
        n_way,
        k_shot,
        classes,
        support,
        query,
        query_labels,
        anchor,
    })
}

/// Per-query predictions and the full similarity score matrix
/// (`scores[query][class slot]`, higher = more similar).
#[derive(Debug, Clone)]
pub struct EpisodePrediction {
    pub predicted: Vec<usize>,
    pub scores: Vec<Vec<f64>>,
}

/// Index of the maximum score; ties resolve to the lowest class index.
pub fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Score every query of an episode against every candidate class. For each
/// class, both branches are conditioned on the mean task feature of that
/// class's support set; the class score is the mean similarity (negative
/// distance) over its shots.
pub fn predict_episode(
    pool: &EvalPool,
    params: &ModelParams,
    ep: &Episode,
) -> Result<EpisodePrediction> {
    if ep.support.len() != ep.n_way || ep.query.is_empty() {
        return Err(MalsiamError::Data("malformed episode".into()));
    }
    let mut scores = vec![vec![0.0; ep.n_way]; ep.query.len()];
    if params.config.generated_layers == 0 {
        // Unconditioned model: one embedding per sample serves all classes.
        let embed_one = |i: usize| head_embed(params, &pool.conv[i], None);
        let query_emb: Vec<Vec<f64>> = ep.query.iter().map(|&q| embed_one(q)).collect();
        for (c, shots) in ep.support.iter().enumerate() {
            let shot_emb: Vec<Vec<f64>> = shots.iter().map(|&s| embed_one(s)).collect();
            for (qi, qe) in query_emb.iter().enumerate() {
                let mean: f64 =
                    shot_emb.iter().map(|se| -l2(qe, se)).sum::<f64>() / shot_emb.len() as f64;
                scores[qi][c] = mean;
            }
        }
    } else {
        for (c, shots) in ep.support.iter().enumerate() {
            let e_c = pool.mean_task(shots);
            let task = generate_task_weights(params, &e_c)?;
            let task = task.as_deref();
            let shot_emb: Vec<Vec<f64>> = shots
                .iter()
                .map(|&s| head_embed(params, &pool.conv[s], task))
                .collect();
            for (qi, &q) in ep.query.iter().enumerate() {
                let qe = head_embed(params, &pool.conv[q], task);
                let mean: f64 =
                    shot_emb.iter().map(|se| -l2(&qe, se)).sum::<f64>() / shot_emb.len() as f64;
                scores[qi][c] = mean;
            }
        }
    }
    let predicted = scores.iter().map(|row| argmax_lowest(row)).collect();
    Ok(EpisodePrediction { predicted, scores })
}

/// Pair-decision counts at the 0.5 probability threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u32,
    pub fp: u32,
    pub tn: u32,
    #[serde(rename = "fn")]
    pub fn_: u32,
}

/// One projected pair in the PCA scatter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcaPoint {
    pub x: f64,
    pub y: f64,
    pub positive_pair: bool,
}

/// Metrics of one evaluation grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_way: usize,
    pub k_shot: usize,
    /// Episode count m.
    pub episodes: usize,
    /// Correct episode predictions Q.
    pub correct: usize,
    /// `100·Q/m` percent.
    pub accuracy: f64,
    pub confusion: Confusion,
    pub auc: f64,
    /// `(FPR, TPR)` from `(0,0)` to `(1,1)`.
    pub roc_points: Vec<(f64, f64)>,
    pub pca_coords: Vec<PcaPoint>,
}

/// Episode accuracy in percent: `100·Q/m` for `Q` correct anchor queries
/// out of `m` episodes.
pub fn episode_accuracy(correct: usize, episodes: usize) -> f64 {
    100.0 * correct as f64 / episodes as f64
}

/// Run `m` episodes plus the pair-level report.
pub fn run_eval(
    pool: &EvalPool,
    params: &ModelParams,
    n_way: usize,
    k_shot: usize,
    m: usize,
    seed: u64,
) -> Result<EvalReport> {
    if m == 0 {
        return Err(MalsiamError::Config("episode count m must be ≥ 1".into()));
    }
    let mut rng = derive(seed, "episodes/run-eval", 0);
    let mut correct = 0usize;
    for _ in 0..m {
        let ep_seed: u64 = rng.gen();
        let ep = sample_episode(pool, n_way, k_shot, ep_seed)?;
        let pred = predict_episode(pool, params, &ep)?;
        if pred.predicted[ep.anchor_query()] == ep.anchor {
            correct += 1;
        }
    }
    let accuracy = episode_accuracy(correct, m);

    let pairs = score_pairs(pool, params, DEFAULT_CONFUSION_PAIRS, seed)?;
    let mut confusion = Confusion {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (p, &label) in pairs.probabilities.iter().zip(&pairs.labels) {
        let predicted_same = *p > 0.5;
        match (label, predicted_same) {
            (1, true) => confusion.tp += 1,
            (1, false) => confusion.fn_ += 1,
            (0, true) => confusion.fp += 1,
            (0, false) => confusion.tn += 1,
            _ => unreachable!(),
        }
    }
    let (auc, roc_points) = auc_roc(&pairs.probabilities, &pairs.labels)?;
    let features = Tensor::from_vec(
        pairs.distance_features.concat(),
        &[pairs.labels.len(), pairs.distance_features[0].len()],
    );
    let pca_coords = pca_projection(&features, &pairs.labels)?;

    Ok(EvalReport {
        n_way,
        k_shot,
        episodes: m,
        correct,
        accuracy,
        confusion,
        auc,
        roc_points,
        pca_coords,
    })
}

/// Scored pair set: probabilities, polarity labels, |h1−h2| features.
pub struct ScoredPairs {
    pub probabilities: Vec<f64>,
    pub labels: Vec<usize>,
    pub distance_features: Vec<Vec<f64>>,
}

/// Draw and score a balanced pair set (half same-family). Each pair is
/// conditioned on the first side's family-mean task feature, mirroring
/// how training conditions pairs.
pub fn score_pairs(
    pool: &EvalPool,
    params: &ModelParams,
    n_pairs: usize,
    seed: u64,
) -> Result<ScoredPairs> {
    let pos_eligible: Vec<usize> = (0..pool.families.len())
        .filter(|&f| pool.families[f].1.len() >= 2)
        .collect();
    if pos_eligible.is_empty() || pool.families.len() < 2 {
        return Err(MalsiamError::Data(
            "pair scoring needs a family with two samples and at least two families".into(),
        ));
    }
    let mut rng = derive(seed, "episodes/pairs", 0);
    let n_pos = n_pairs - n_pairs / 2;
    let mut out = ScoredPairs {
        probabilities: Vec::with_capacity(n_pairs),
        labels: Vec::with_capacity(n_pairs),
        distance_features: Vec::with_capacity(n_pairs),
    };
    for slot in 0..n_pairs {
        let (f1, i, j) = if slot < n_pos {
            let f = pos_eligible[rng.gen_range(0..pos_eligible.len())];
            let members = &pool.families[f].1;
            let a = rng.gen_range(0..members.len());
            let mut b = rng.gen_range(0..members.len() - 1);
            if b >= a {
                b += 1;
            }
            (f, members[a], members[b])
        } else {
            let f1 = rng.gen_range(0..pool.families.len());
            let mut f2 = rng.gen_range(0..pool.families.len() - 1);
            if f2 >= f1 {
                f2 += 1;
            }
            let a = &pool.families[f1].1;
            let b = &pool.families[f2].1;
            (f1, a[rng.gen_range(0..a.len())], b[rng.gen_range(0..b.len())])
        };
        let task = if params.config.generated_layers > 0 {
            let e = pool.mean_task(&pool.families[f1].1);
            generate_task_weights(params, &e)?
        } else {
            None
        };
        let task = task.as_deref();
        let h1 = head_embed(params, &pool.conv[i], task);
        let h2 = head_embed(params, &pool.conv[j], task);
        out.probabilities
            .push(pair_probability(params.shift(), l2(&h1, &h2)));
        out.labels.push((slot < n_pos) as usize);
        out.distance_features
            .push(h1.iter().zip(&h2).map(|(a, b)| (a - b).abs()).collect());
    }
    Ok(out)
}

/// Threshold-sweep ROC and its area. Tied scores collapse into one sweep
/// step, which makes the trapezoidal area exactly the Mann–Whitney
/// statistic (concordant pairs + ½ credit for ties).
pub fn auc_roc(scores: &[f64], labels: &[usize]) -> Result<(f64, Vec<(f64, f64)>)> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(MalsiamError::Data(
            "AUC needs equal nonzero score/label counts".into(),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MalsiamError::Numeric("non-finite score in AUC input".into()));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(MalsiamError::Data("AUC labels must be 0 or 1".into()));
    }
    let p: u64 = labels.iter().map(|&l| l as u64).sum();
    let n = labels.len() as u64 - p;
    if p == 0 || n == 0 {
        return Err(MalsiamError::Data(
            "AUC needs both a positive and a negative label".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());

    let mut roc = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut area2 = 0u64; // twice the area in grid units of (1/N)·(1/P)
    let mut idx = 0;
    while idx < order.len() {
        // Consume one group of exactly-tied scores.
        let score = scores[order[idx]];
        let (mut d_tp, mut d_fp) = (0u64, 0u64);
        while idx < order.len() && scores[order[idx]] == score {
            if labels[order[idx]] == 1 {
                d_tp += 1;
            } else {
                d_fp += 1;
            }
            idx += 1;
        }
        area2 += d_fp * (2 * tp + d_tp);
        tp += d_tp;
        fp += d_fp;
        roc.push((fp as f64 / n as f64, tp as f64 / p as f64));
    }
    Ok((area2 as f64 / (2 * p * n) as f64, roc))
}

/// Project feature rows onto their top-2 principal components (eigenvectors
/// of the mean-centered covariance), labeling each point by pair polarity.
pub fn pca_projection(features: &Tensor, labels: &[usize]) -> Result<Vec<PcaPoint>> {
    if features.shape.len() != 2 {
        return Err(MalsiamError::Data("PCA expects a 2-D feature matrix".into()));
    }
    let (n, d) = (features.shape[0], features.shape[1]);
    if n < 2 || d < 2 {
        return Err(MalsiamError::Data(
            "PCA needs at least 2 samples and 2 feature dimensions".into(),
        ));
    }
    if labels.len() != n {
        return Err(MalsiamError::Data("PCA label count mismatch".into()));
    }
    let mut mean = vec![0.0; d];
    for row in 0..n {
        for (m, v) in mean.iter_mut().zip(&features.data[row * d..(row + 1) * d]) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut centered = features.data.clone();
    for row in 0..n {
        for (v, m) in centered[row * d..(row + 1) * d].iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    // Covariance (÷N) of the centered rows.
    let mut cov = vec![0.0; d * d];
    for row in 0..n {
        let r = &centered[row * d..(row + 1) * d];
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] += r[i] * r[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / n as f64;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    let (eigenvalues, eigenvectors) = symmetric_eigen(&cov, d);
    if eigenvalues[0] <= 1e-12 {
        return Err(MalsiamError::Data(
            "degenerate feature matrix: no principal direction".into(),
        ));
    }
    let mut points = Vec::with_capacity(n);
    for row in 0..n {
        let r = &centered[row * d..(row + 1) * d];
        let x: f64 = r.iter().zip(&eigenvectors[..d]).map(|(a, b)| a * b).sum();
        let y: f64 = r
            .iter()
            .zip(&eigenvectors[d..2 * d])
            .map(|(a, b)| a * b)
            .sum();
        points.push(PcaPoint {
            x,
            y,
            positive_pair: labels[row] == 1,
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::image::{MalwareImage, IMAGE_SIDE};
    use crate::model::ModelConfig;
    use proptest::prelude::*;

    fn dummy_pool(families: &[usize], feat_dim: usize) -> EvalPool {
        // Distinct constant conv features per item; task = 1-hot-ish.
        let conv = (0..families.len())
            .map(|i| vec![i as f64 + 1.0; feat_dim])
            .collect();
        let task = families.iter().map(|&f| vec![f as f64; 4]).collect();
        EvalPool::from_features(conv, task, families.to_vec()).unwrap()
    }

    #[test]
    fn five_way_one_shot_episode_shape() {
        // 13 families, 3 samples each.
        let labels: Vec<usize> = (0..13).flat_map(|f| [f, f, f]).collect();
        let pool = dummy_pool(&labels, 2);
        let ep = sample_episode(&pool, 5, 1, 42).unwrap();
        assert_eq!(ep.n_way, 5);
        assert_eq!(ep.classes.len(), 5);
        let mut distinct = ep.classes.clone();
        distinct.dedup();
        distinct.sort_unstable();
        distinct.dedup();
        assert_eq!(distinct.len(), 5, "classes must be distinct");
        assert!(ep.support.iter().all(|s| s.len() == 1));
        assert!(ep.anchor < 5);
        // Remaining 2 samples of each chosen family become queries.
        assert_eq!(ep.query.len(), 10);
        assert_eq!(sample_episode(&pool, 5, 1, 42).unwrap(), ep);
        assert_ne!(sample_episode(&pool, 5, 1, 43).unwrap(), ep);
    }

    #[test]
    fn five_shot_keeps_remaining_samples_as_queries() {
        let labels: Vec<usize> = (0..6).flat_map(|f| vec![f; 7]).collect();
        let pool = dummy_pool(&labels, 2);
        let ep = sample_episode(&pool, 4, 5, 9).unwrap();
        assert!(ep.support.iter().all(|s| s.len() == 5));
        assert_eq!(ep.query.len(), 4 * 2, "7 − 5 = 2 queries per class");
        for (qi, &q) in ep.query.iter().enumerate() {
            let slot = ep.query_labels[qi];
            assert_eq!(pool.family_of(q), ep.classes[slot]);
            assert!(
                !ep.support.iter().flatten().any(|&s| s == q),
                "support leaked into the query set"
            );
        }
    }

    #[test]
    fn infeasible_episode_requests_error() {
        let labels: Vec<usize> = (0..4).flat_map(|f| [f, f]).collect();
        let pool = dummy_pool(&labels, 2);
        // More ways than families.
        assert!(sample_episode(&pool, 5, 1, 0).is_err());
        // k_shot exhausts every family (needs k+1).
        assert!(sample_episode(&pool, 2, 2, 0).is_err());
        // Degenerate parameters.
        assert!(sample_episode(&pool, 0, 1, 0).is_err());
        assert!(sample_episode(&pool, 2, 0, 0).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax_lowest(&[0.3, 0.7, 0.7]), 1);
        assert_eq!(argmax_lowest(&[0.5, 0.5, 0.5]), 0);
        assert_eq!(argmax_lowest(&[1.0]), 0);
    }

    fn tiny_model() -> ModelParams {
        let cfg = ModelConfig {
            conv_channels: vec![2],
            fc_hidden: 8,
            task_input_dim: 4,
            embedding_dim: 4,
            n_families: 6,
            generated_layers: 2,
            ..ModelConfig::default()
        };
        ModelParams::init(&cfg, 3).unwrap()
    }

    /// Items with per-family brightness bands; within a family, images are
    /// identical, so an untrained network still embeds them identically.
    fn banded_items(n_families: usize, per_family: usize) -> Vec<TrainItem> {
        let mut items = Vec::new();
        for f in 0..n_families {
            let shade = 20.0 + 210.0 * f as f64 / (n_families - 1).max(1) as f64;
            let pixels = Tensor::from_vec(
                vec![shade; IMAGE_SIDE * IMAGE_SIDE],
                &[IMAGE_SIDE, IMAGE_SIDE],
            );
            for _ in 0..per_family {
                let mut task = vec![0.0; 4];
                task[f % 4] = 1.0;
                items.push(TrainItem {
                    image: MalwareImage {
                        pixels: pixels.clone(),
                    },
                    task_feature: task,
                    family: f,
                });
            }
        }
        items
    }

    #[test]
    fn identical_images_within_family_evaluate_perfectly() {
        let params = tiny_model();
        let items = banded_items(4, 3);
        let pool = EvalPool::build(&params, &items).unwrap();
        let report = run_eval(&pool, &params, 3, 1, 10, 77).unwrap();
        // Every query is pixel-identical to its class's support sample, so
        // its distance to the true class is exactly 0 — the maximum
        // possible similarity — while other classes sit at distance > 0.
        assert_eq!(report.correct, 10);
        assert_eq!(report.accuracy, 100.0);
        // Same-family pairs are identical: p = sigmoid(shift) > 0.5.
        assert_eq!(report.confusion.tp, 25);
        assert_eq!(report.confusion.fn_, 0);
        assert_eq!(
            report.confusion.tp + report.confusion.fn_ + report.confusion.fp + report.confusion.tn,
            50
        );
        // Positive pairs all score sigmoid(shift), negatives strictly less.
        assert_eq!(report.auc, 1.0);
        assert_eq!(report.roc_points.first(), Some(&(0.0, 0.0)));
        assert_eq!(report.roc_points.last(), Some(&(1.0, 1.0)));
        assert_eq!(report.pca_coords.len(), 50);
        // Determinism: bitwise-identical report on a rerun.
        let again = run_eval(&pool, &params, 3, 1, 10, 77).unwrap();
        assert_eq!(again, report);
    }

    #[test]
    fn accuracy_follows_the_q_over_m_formula() {
        let params = tiny_model();
        let items = banded_items(4, 3);
        let pool = EvalPool::build(&params, &items).unwrap();
        for (m, seed) in [(1usize, 4u64), (7, 9), (20, 1)] {
            let report = run_eval(&pool, &params, 3, 1, m, seed).unwrap();
            assert_eq!(report.accuracy, 100.0 * report.correct as f64 / m as f64);
            assert_eq!(report.episodes, m);
        }
    }

    #[test]
    fn query_matching_a_support_sample_wins() {
        let params = tiny_model();
        // Families 0/1/2 with distinct images; family 1's query duplicates
        // its support image exactly.
        let items = banded_items(3, 2);
        let pool = EvalPool::build(&params, &items).unwrap();
        let ep = Episode {
            n_way: 3,
            k_shot: 1,
            classes: vec![0, 1, 2],
            support: vec![vec![0], vec![2], vec![4]],
            query: vec![3], // same pixels as item 2
            query_labels: vec![1],
            anchor: 1,
        };
        let pred = predict_episode(&pool, &params, &ep).unwrap();
        assert_eq!(pred.predicted, vec![1]);
        assert_eq!(pred.scores[0][1], 0.0, "exact match has distance 0");
        assert!(pred.scores[0][0] < 0.0 && pred.scores[0][2] < 0.0);
    }

    #[test]
    fn all_equal_scores_predict_class_zero() {
        let mut params = tiny_model();
        params.config.generated_layers = 0;
        let params = ModelParams::init(&params.config, 3).unwrap();
        // All items identical → every distance 0 → full tie.
        let items = banded_items(1, 6)
            .into_iter()
            .enumerate()
            .map(|(i, mut item)| {
                item.family = i % 3;
                item
            })
            .collect::<Vec<_>>();
        let pool = EvalPool::build(&params, &items).unwrap();
        let ep = Episode {
            n_way: 3,
            k_shot: 1,
            classes: vec![0, 1, 2],
            support: vec![vec![0], vec![1], vec![2]],
            query: vec![3],
            query_labels: vec![0],
            anchor: 0,
        };
        let pred = predict_episode(&pool, &params, &ep).unwrap();
        assert!(pred.scores[0].iter().all(|&s| s == 0.0));
        assert_eq!(pred.predicted, vec![0]);
    }

    #[test]
    fn auc_matches_the_worked_example() {
        let (auc, roc) = auc_roc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert_eq!(auc, 0.75);
        assert_eq!(roc.first(), Some(&(0.0, 0.0)));
        assert_eq!(roc.last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn auc_perfect_and_inverted_rankings() {
        let labels = [1, 1, 0, 0];
        let (perfect, _) = auc_roc(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap();
        assert_eq!(perfect, 1.0);
        let (inverted, _) = auc_roc(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap();
        assert_eq!(inverted, 0.0);
        // All-tied scores → chance level, exactly one half.
        let (tied, _) = auc_roc(&[0.5, 0.5, 0.5, 0.5], &labels).unwrap();
        assert_eq!(tied, 0.5);
    }

    #[test]
    fn auc_rejects_degenerate_inputs() {
        assert!(auc_roc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(auc_roc(&[0.1, 0.2], &[0, 0]).is_err());
        assert!(auc_roc(&[], &[]).is_err());
        assert!(auc_roc(&[0.1], &[0, 1]).is_err());
        assert!(auc_roc(&[f64::NAN, 0.2], &[0, 1]).is_err());
        assert!(auc_roc(&[0.1, 0.2], &[0, 2]).is_err());
    }

    #[test]
    fn pca_identity_on_axis_aligned_centered_data() {
        let features = Tensor::from_vec(
            vec![2.0, 0.0, -2.0, 0.0, 0.0, 1.0, 0.0, -1.0],
            &[4, 2],
        );
        let pts = pca_projection(&features, &[1, 1, 0, 0]).unwrap();
        let expected = [(2.0, 0.0), (-2.0, 0.0), (0.0, 1.0), (0.0, -1.0)];
        for (p, (x, y)) in pts.iter().zip(expected) {
            assert!((p.x - x).abs() < 1e-12 && (p.y - y).abs() < 1e-12);
        }
        assert!(pts[0].positive_pair && !pts[2].positive_pair);
    }

    #[test]
    fn pca_is_invariant_under_dataset_duplication() {
        let mut rng = crate::rng::derive(5, "episodes-test/pca", 0);
        let x = Tensor::uniform(&mut rng, &[6, 3], -1.0, 1.0);
        let single = pca_projection(&x, &[0; 6]).unwrap();
        let doubled_data: Vec<f64> = x.data.iter().chain(&x.data).copied().collect();
        let doubled = pca_projection(
            &Tensor::from_vec(doubled_data, &[12, 3]),
            &[0; 12],
        )
        .unwrap();
        for (a, b) in single.iter().zip(&doubled) {
            assert!((a.x - b.x).abs() < 1e-10 && (a.y - b.y).abs() < 1e-10);
        }
    }

    #[test]
    fn pca_reconstruction_error_equals_discarded_eigenvalues() {
        let mut rng = crate::rng::derive(11, "episodes-test/pca-recon", 0);
        let x = Tensor::uniform(&mut rng, &[10, 5], -2.0, 2.0);
        let (n, d) = (10, 5);
        // Recompute the centered covariance exactly as pca_projection does.
        let mut mean = vec![0.0; d];
        for row in 0..n {
            for (m, v) in mean.iter_mut().zip(&x.data[row * d..(row + 1) * d]) {
                *m += v / n as f64;
            }
        }
        let mut centered = x.data.clone();
        for row in 0..n {
            for (v, m) in centered[row * d..(row + 1) * d].iter_mut().zip(&mean) {
                *v -= m;
            }
        }
        let mut cov = vec![0.0; d * d];
        for row in 0..n {
            let r = &centered[row * d..(row + 1) * d];
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += r[i] * r[j] / n as f64;
                }
            }
        }
        let (vals, vecs) = symmetric_eigen(&cov, d);
        let pts = pca_projection(&x, &[0; 10]).unwrap();
        // Mean squared reconstruction error from the top-2 projection
        // equals the sum of the discarded eigenvalues.
        let mut err = 0.0;
        for (row, p) in pts.iter().enumerate() {
            let r = &centered[row * d..(row + 1) * d];
            for i in 0..d {
                let recon = p.x * vecs[i] + p.y * vecs[d + i];
                err += (r[i] - recon) * (r[i] - recon);
            }
        }
        err /= n as f64;
        let discarded: f64 = vals[2..].iter().sum();
        assert!(
            (err - discarded).abs() < 1e-10,
            "reconstruction error {err} vs discarded eigenvalue mass {discarded}"
        );
    }

    #[test]
    fn pca_rejects_degenerate_inputs() {
        // Rank-0: all rows identical.
        let flat = Tensor::from_vec(vec![3.0; 8], &[4, 2]);
        assert!(pca_projection(&flat, &[0; 4]).is_err());
        // Too small.
        assert!(pca_projection(&Tensor::zeros(&[1, 5]), &[0]).is_err());
        assert!(pca_projection(&Tensor::zeros(&[5, 1]), &[0; 5]).is_err());
        // Label mismatch.
        assert!(pca_projection(&Tensor::zeros(&[4, 2]), &[0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn episode_sampler_never_leaks_support_into_queries(
            seed in 0u64..500,
            n_way in 2usize..5,
            k_shot in 1usize..4,
        ) {
            let labels: Vec<usize> = (0..6).flat_map(|f| vec![f; 5]).collect();
            let pool = dummy_pool(&labels, 2);
            let ep = sample_episode(&pool, n_way, k_shot, seed).unwrap();
            let mut support: Vec<usize> = ep.support.iter().flatten().copied().collect();
            prop_assert_eq!(support.len(), n_way * k_shot);
            support.sort_unstable();
            support.dedup();
            prop_assert_eq!(support.len(), n_way * k_shot, "support must not repeat");
            for (qi, &q) in ep.query.iter().enumerate() {
                prop_assert!(!support.contains(&q));
                prop_assert!(ep.query_labels[qi] < n_way);
                prop_assert_eq!(pool.family_of(q), ep.classes[ep.query_labels[qi]]);
            }
            // Every class contributes 5 − k_shot queries.
            prop_assert_eq!(ep.query.len(), n_way * (5 - k_shot));
        }

        #[test]
        fn auc_equals_brute_force_concordance(
            scores in proptest::collection::vec(0u8..8, 4..60),
            flips in proptest::collection::vec(any::<bool>(), 4..60),
        ) {
            // Coarse integer scores force plenty of ties.
            let n = scores.len().min(flips.len());
            let scores: Vec<f64> = scores[..n].iter().map(|&s| s as f64 / 4.0).collect();
            let labels: Vec<usize> = flips[..n].iter().map(|&b| b as usize).collect();
            let p: usize = labels.iter().sum();
            prop_assume!(p > 0 && p < n);

            let (auc, roc) = auc_roc(&scores, &labels).unwrap();
            // Brute force: concordant positive-negative pairs, ½ for ties.
            let mut credit = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if labels[i] == 1 && labels[j] == 0 {
                        credit += if scores[i] > scores[j] {
                            1.0
                        } else if scores[i] == scores[j] {
                            0.5
                        } else {
                            0.0
                        };
                    }
                }
            }
            let expected = credit / (p * (n - p)) as f64;
            prop_assert_eq!(auc, expected);
            // ROC monotonicity and endpoints.
            prop_assert_eq!(roc[0], (0.0, 0.0));
            prop_assert_eq!(*roc.last().unwrap(), (1.0, 1.0));
            for w in roc.windows(2) {
                prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
            }
        }

        #[test]
        fn prediction_is_invariant_under_monotone_score_transforms(
            scores in proptest::collection::vec(-3.0f64..3.0, 2..8),
            scale in 0.1f64..5.0,
            offset in -2.0f64..2.0,
        ) {
            let base = argmax_lowest(&scores);
            let affine: Vec<f64> = scores.iter().map(|s| scale * s + offset).collect();
            let tanh: Vec<f64> = scores.iter().map(|s| s.tanh()).collect();
            prop_assert_eq!(argmax_lowest(&affine), base);
            prop_assert_eq!(argmax_lowest(&tanh), base);
        }
    }
}
