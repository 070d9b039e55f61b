//! End-to-end run plumbing: a single serializable run configuration, a
//! digest that stamps every artifact it produces, and the six pipeline
//! commands (synth → extract → augment → train → eval → plot).
//!
//! A run is reproducible from the configuration alone: every stage derives
//! its randomness from the config seeds, and every artifact directory
//! carries a `provenance.json` stamp with the producing config's digest so
//! downstream stages can refuse mismatched inputs.

mod commands;
mod plot;

pub use commands::{
    cmd_augment, cmd_eval, cmd_extract, cmd_plot, cmd_synth, cmd_train, AugmentSummary,
    FullReport, LossSeries, SynthSummary, TrainSummary,
};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{CorpusSpec, Provenance, TransformMix};
use crate::error::{MalsiamError, Result};
use crate::features::image::IMAGE_SIDE;
use crate::features::AugmentationConfig;
use crate::model::train::{TrainItem, TrainOptions};
use crate::model::ModelConfig;
use crate::rng::derive;
use crate::{features, npy};

/// Environment variable naming the artifact cache root. Stage output
/// directories default to `<cache>/<digest prefix>/<stage>`.
pub const CACHE_ENV: &str = "MALSIAM_CACHE";

/// Stamp file written into every artifact directory.
pub const STAMP_FILE: &str = "provenance.json";

/// Corpus index file name.
pub const MANIFEST_FILE: &str = "manifest.json";

/// Feature index file name.
pub const FEATURES_FILE: &str = "features.json";

/// Checkpoint file name inside a model directory.
pub const CHECKPOINT_FILE: &str = "model.ckpt";

/// Loss-series file name inside a model directory.
pub const LOSS_FILE: &str = "loss_series.json";

/// Evaluation report file name.
pub const REPORT_FILE: &str = "report.json";

/// Seeds for the three independent random streams of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub corpus: u64,
    pub train: u64,
    pub eval: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            corpus: 7,
            train: 7,
            eval: 7,
        }
    }
}

/// Corpus generation parameters (see the corpus module for semantics).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusParams {
    pub families: usize,
    pub samples_per_family: usize,
    pub originals_per_family: usize,
    pub mix_shuffle: f64,
    pub mix_junk: f64,
    pub mix_split: f64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        let spec = CorpusSpec::default();
        CorpusParams {
            families: spec.n_families,
            samples_per_family: spec.samples_per_family,
            originals_per_family: spec.originals_per_family,
            mix_shuffle: spec.mix.shuffle,
            mix_junk: spec.mix.junk,
            mix_split: spec.mix.split,
        }
    }
}

impl CorpusParams {
    pub fn to_spec(&self, seed: u64) -> CorpusSpec {
        CorpusSpec {
            n_families: self.families,
            samples_per_family: self.samples_per_family,
            originals_per_family: self.originals_per_family,
            mix: TransformMix {
                shuffle: self.mix_shuffle,
                junk: self.mix_junk,
                split: self.mix_split,
            },
            seed,
        }
    }
}

/// Feature extraction parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureParams {
    /// Bytes per entropy segment.
    pub segment_length: usize,
    pub graph_height: usize,
    pub graph_width: usize,
    /// Fixed row width when rasterizing program bytes.
    pub image_width: usize,
    pub encoder_seed: u64,
    /// Task feature dimension; must equal the model's task input size.
    pub encoder_dim: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            segment_length: features::entropy::DEFAULT_SEGMENT_LENGTH,
            graph_height: features::entropy::DEFAULT_GRAPH_SIDE,
            graph_width: features::entropy::DEFAULT_GRAPH_SIDE,
            image_width: features::image::DEFAULT_IMAGE_WIDTH,
            encoder_seed: 7,
            encoder_dim: ModelConfig::default().task_input_dim,
        }
    }
}

/// Training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_main: f64,
    pub lr_meta: f64,
    /// Support-set sizes for pair-level task features are drawn uniformly
    /// from `1..=max_task_shots`.
    pub max_task_shots: usize,
    /// Samples per family withheld from training; they form the
    /// evaluation pool and the validation loss series.
    pub holdout_per_family: usize,
    /// Whether training applies random augmentation to each sampled image.
    pub augment: bool,
    pub augmentation: AugmentationConfig,
}

impl Default for TrainingParams {
    fn default() -> Self {
        let opts = TrainOptions::default();
        TrainingParams {
            epochs: opts.epochs,
            batch_size: opts.batch_size,
            lr_main: opts.lr_main,
            lr_meta: opts.lr_meta,
            max_task_shots: opts.max_task_shots,
            holdout_per_family: 6,
            augment: true,
            augmentation: AugmentationConfig::default(),
        }
    }
}

/// Evaluation grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalParams {
    pub ways: Vec<usize>,
    pub shots: Vec<usize>,
    /// Episodes per grid cell.
    pub episodes: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            ways: vec![5, 10, 15],
            shots: vec![1, 5],
            episodes: 200,
        }
    }
}

/// Complete description of one reproducible run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub seeds: Seeds,
    pub corpus: CorpusParams,
    pub features: FeatureParams,
    pub model: ModelConfig,
    pub training: TrainingParams,
    pub eval: EvalParams,
}

impl RunConfig {
    /// Load from a TOML file; absent keys take their defaults.
    pub fn from_toml_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text)
            .map_err(|e| MalsiamError::Config(format!("cannot parse {}: {e}", path.display())))
    }

    /// Render as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    /// Hex SHA-256 of the canonical JSON form — the digest of the whole
    /// run; evaluation reports carry this one.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("run config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }

    /// Digest over the fields that determine the corpus. Artifacts are
    /// stamped with the digest of exactly the config slice that produced
    /// them, so changing (say) the eval grid never invalidates a corpus.
    pub fn synth_digest(&self) -> String {
        scoped_digest(&("synth", self.seeds.corpus, &self.corpus))
    }

    /// Digest over the fields that determine extracted features.
    pub fn extract_digest(&self) -> String {
        scoped_digest(&("extract", self.synth_digest(), &self.features))
    }

    /// Digest over the fields that determine a trained model. Includes the
    /// eval seed because it fixes the train/holdout split.
    pub fn train_digest(&self) -> String {
        scoped_digest(&(
            "train",
            self.extract_digest(),
            &self.model,
            &self.training,
            self.seeds.train,
            self.seeds.eval,
        ))
    }

    /// Cross-field consistency checks.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.model.n_families != self.corpus.families {
            return Err(MalsiamError::Config(format!(
                "model.n_families ({}) must equal corpus.families ({})",
                self.model.n_families, self.corpus.families
            )));
        }
        if self.features.encoder_dim != self.model.task_input_dim {
            return Err(MalsiamError::Config(format!(
                "features.encoder_dim ({}) must equal model.task_input_dim ({})",
                self.features.encoder_dim, self.model.task_input_dim
            )));
        }
        if self.features.segment_length == 0
            || self.features.graph_height == 0
            || self.features.graph_width == 0
            || self.features.image_width == 0
        {
            return Err(MalsiamError::Config(
                "feature dimensions must be positive".into(),
            ));
        }
        if self.training.holdout_per_family >= self.corpus.samples_per_family {
            return Err(MalsiamError::Config(format!(
                "holdout_per_family ({}) must leave training samples (families have {})",
                self.training.holdout_per_family, self.corpus.samples_per_family
            )));
        }
        if self.eval.ways.is_empty()
            || self.eval.shots.is_empty()
            || self.eval.ways.iter().any(|&w| w == 0)
            || self.eval.shots.iter().any(|&s| s == 0)
        {
            return Err(MalsiamError::Config(
                "eval grid needs nonzero ways and shots".into(),
            ));
        }
        if self.eval.episodes == 0 {
            return Err(MalsiamError::Config("eval.episodes must be ≥ 1".into()));
        }
        self.to_train_options().validate()
    }

    /// Trainer options implied by this configuration.
    pub fn to_train_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            lr_main: self.training.lr_main,
            lr_meta: self.training.lr_meta,
            seed: self.seeds.train,
            augment: self.training.augment.then_some(self.training.augmentation),
            max_task_shots: self.training.max_task_shots,
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

fn scoped_digest<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config slices serialize");
    hex(&Sha256::digest(json.as_bytes()))
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Artifact cache root: `$MALSIAM_CACHE` or `./malsiam-cache`.
pub fn cache_root() -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("malsiam-cache"))
}

/// Default output directory for a stage of the given run, keyed by the
/// digest of the config slice that stage depends on. Stages unaffected by
/// a config change therefore keep their default paths (e.g. two models
/// trained from one corpus share its corpus and feature directories).
pub fn default_stage_dir(config: &RunConfig, stage: &str) -> PathBuf {
    let digest = match stage {
        "corpus" => config.synth_digest(),
        "features" | "augmented" => config.extract_digest(),
        "model" => config.train_digest(),
        _ => config.digest(),
    };
    cache_root().join(&digest[..12]).join(stage)
}

/// Digest stamp tying an artifact directory to the config that made it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStamp {
    pub stage: String,
    pub config_digest: String,
}

/// Write `provenance.json` into `dir`.
pub fn write_stamp(dir: &Path, stage: &str, config_digest: &str) -> Result<()> {
    atomic_write_json(
        &dir.join(STAMP_FILE),
        &StageStamp {
            stage: stage.to_string(),
            config_digest: config_digest.to_string(),
        },
    )
}

/// Read the stamp of an artifact directory.
pub fn read_stamp(dir: &Path) -> Result<StageStamp> {
    let path = dir.join(STAMP_FILE);
    let text = fs::read(&path).map_err(|_| {
        MalsiamError::Data(format!(
            "no {STAMP_FILE} in {}; run the producing stage first",
            dir.display()
        ))
    })?;
    Ok(serde_json::from_slice(&text)?)
}

/// Refuse artifacts produced by a different configuration unless `force`.
pub fn check_stamp(dir: &Path, stage: &str, expected_digest: &str, force: bool) -> Result<()> {
    let stamp = read_stamp(dir)?;
    if stamp.stage != stage {
        return Err(MalsiamError::Data(format!(
            "{} holds '{}' artifacts, expected '{stage}'",
            dir.display(),
            stamp.stage
        )));
    }
    if stamp.config_digest != expected_digest && !force {
        return Err(MalsiamError::Config(format!(
            "{} was produced by config {} but the current config is {}; \
             pass --force to use it anyway",
            dir.display(),
            &stamp.config_digest[..12.min(stamp.config_digest.len())],
            &expected_digest[..12]
        )));
    }
    Ok(())
}

/// Write bytes to `path` atomically: a temp file in the same directory is
/// renamed over the target, so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| MalsiamError::Config(format!("bad output path {}", path.display())))?;
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        MalsiamError::Io(e)
    })
}

/// Atomically write pretty JSON (with a trailing newline).
pub fn atomic_write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

/// One extracted sample in the feature index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureItem {
    /// File stem; features live at `<stem>.image.npy`, `<stem>.task.npy`,
    /// `<stem>.graph.npy`.
    pub stem: String,
    pub family: String,
    /// Index into [`FeatureManifest::families`].
    pub family_index: usize,
    pub provenance: Provenance,
    /// Stem of the original this variant derives from.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
}

/// Index of an extracted feature directory, written as `features.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub config_digest: String,
    pub segment_length: usize,
    pub graph_height: usize,
    pub graph_width: usize,
    pub image_width: usize,
    pub encoder_seed: u64,
    pub encoder_dim: usize,
    /// SHA-256 of the frozen encoder's weight bytes; lets callers verify
    /// the task features came from the same untouched encoder.
    pub encoder_fingerprint: String,
    /// Sorted family names; `family_index` fields index into this.
    pub families: Vec<String>,
    pub items: Vec<FeatureItem>,
}

impl FeatureManifest {
    pub fn image_path(&self, dir: &Path, item: &FeatureItem) -> PathBuf {
        dir.join(format!("{}.image.npy", item.stem))
    }
    pub fn task_path(&self, dir: &Path, item: &FeatureItem) -> PathBuf {
        dir.join(format!("{}.task.npy", item.stem))
    }
    pub fn graph_path(&self, dir: &Path, item: &FeatureItem) -> PathBuf {
        dir.join(format!("{}.graph.npy", item.stem))
    }
}

/// Read the feature index of an extracted directory.
pub fn load_feature_manifest(dir: &Path) -> Result<FeatureManifest> {
    let path = dir.join(FEATURES_FILE);
    let text = fs::read(&path).map_err(|_| {
        MalsiamError::Data(format!(
            "no {FEATURES_FILE} in {}; run `extract` first",
            dir.display()
        ))
    })?;
    Ok(serde_json::from_slice(&text)?)
}

/// Load every sample's image, task feature, and family index.
pub fn load_items(dir: &Path, manifest: &FeatureManifest) -> Result<Vec<TrainItem>> {
    let mut items = Vec::with_capacity(manifest.items.len());
    for item in &manifest.items {
        let pixels = npy::read(&manifest.image_path(dir, item))?;
        if pixels.shape != [IMAGE_SIDE, IMAGE_SIDE] {
            return Err(MalsiamError::Data(format!(
                "{}: expected a {IMAGE_SIDE}×{IMAGE_SIDE} image, got {:?}",
                item.stem, pixels.shape
            )));
        }
        let task = npy::read(&manifest.task_path(dir, item))?;
        items.push(TrainItem {
            image: features::MalwareImage::new(pixels)?,
            task_feature: task.data,
            family: item.family_index,
        });
    }
    Ok(items)
}

/// Deterministically split item indices into (train, holdout) per family.
///
/// Each family's items are shuffled by a stream derived from the eval seed
/// and the family index; the last `holdout_per_family` go to the holdout.
/// The same config therefore always produces the same split, in `train`
/// and `eval` alike.
pub fn split_holdout(
    manifest: &FeatureManifest,
    config: &RunConfig,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut by_family: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, item) in manifest.items.iter().enumerate() {
        by_family.entry(item.family_index).or_default().push(i);
    }
    let h = config.training.holdout_per_family;
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for (family_index, mut indices) in by_family {
        if indices.len() <= h {
            return Err(MalsiamError::Data(format!(
                "family '{}' has {} samples; holdout_per_family {} leaves no training data",
                manifest.families[family_index],
                indices.len(),
                h
            )));
        }
        let mut rng = derive(config.seeds.eval, "pipeline/holdout", family_index as u64);
        for i in 0..indices.len() - 1 {
            let j = rand::Rng::gen_range(&mut rng, i..indices.len());
            indices.swap(i, j);
        }
        let cut = indices.len() - h;
        train.extend_from_slice(&indices[..cut]);
        holdout.extend_from_slice(&indices[cut..]);
    }
    train.sort_unstable();
    holdout.sort_unstable();
    Ok((train, holdout))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = RunConfig::default();
        let b = RunConfig::default();
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
        let mut c = RunConfig::default();
        c.training.epochs += 1;
        assert_ne!(a.digest(), c.digest());
        let mut d = RunConfig::default();
        d.seeds.train += 1;
        assert_ne!(a.digest(), d.digest());
    }

    #[test]
    fn stage_digests_ignore_downstream_fields() {
        let base = RunConfig::default();
        // Eval grid changes touch only the full digest.
        let mut eval_only = base.clone();
        eval_only.eval.episodes = 9;
        assert_eq!(eval_only.synth_digest(), base.synth_digest());
        assert_eq!(eval_only.extract_digest(), base.extract_digest());
        assert_eq!(eval_only.train_digest(), base.train_digest());
        assert_ne!(eval_only.digest(), base.digest());
        // Model changes leave corpus and features valid.
        let mut model_only = base.clone();
        model_only.model.generated_layers = 0;
        assert_eq!(model_only.extract_digest(), base.extract_digest());
        assert_ne!(model_only.train_digest(), base.train_digest());
        // Corpus changes invalidate everything downstream.
        let mut corpus_change = base.clone();
        corpus_change.seeds.corpus += 1;
        assert_ne!(corpus_change.synth_digest(), base.synth_digest());
        assert_ne!(corpus_change.extract_digest(), base.extract_digest());
        assert_ne!(corpus_change.train_digest(), base.train_digest());
        // The eval seed moves the holdout split, hence the train scope.
        let mut eval_seed = base.clone();
        eval_seed.seeds.eval += 1;
        assert_eq!(eval_seed.extract_digest(), base.extract_digest());
        assert_ne!(eval_seed.train_digest(), base.train_digest());
    }

    #[test]
    fn toml_round_trip_preserves_the_config() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg: RunConfig = toml::from_str(
            "[training]\nepochs = 3\n\n[eval]\nways = [2]\nshots = [1]\nepisodes = 4\n",
        )
        .unwrap();
        assert_eq!(cfg.training.epochs, 3);
        assert_eq!(cfg.eval.ways, vec![2]);
        assert_eq!(cfg.corpus.families, CorpusParams::default().families);
        assert_eq!(cfg.model, ModelConfig::default());
    }

    #[test]
    fn default_config_validates() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn validation_rejects_cross_field_mismatches() {
        let mut cfg = RunConfig::default();
        cfg.model.n_families = 5;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.features.encoder_dim = 17;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.training.holdout_per_family = cfg.corpus.samples_per_family;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.eval.ways.clear();
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.eval.episodes = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn stamps_gate_mismatched_digests() {
        let dir = tempfile::tempdir().unwrap();
        write_stamp(dir.path(), "extract", "abc123def456").unwrap();
        let stamp = read_stamp(dir.path()).unwrap();
        assert_eq!(stamp.stage, "extract");
        check_stamp(dir.path(), "extract", "abc123def456", false).unwrap();
        // Wrong digest: refused without force, allowed with it.
        let err = check_stamp(dir.path(), "extract", "0123456789ab", false).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("--force"));
        check_stamp(dir.path(), "extract", "0123456789ab", true).unwrap();
        // Wrong stage is a data error even with force.
        assert!(check_stamp(dir.path(), "train", "abc123def456", true).is_err());
        // Missing stamp.
        let empty = tempfile::tempdir().unwrap();
        assert!(read_stamp(empty.path()).is_err());
    }

    #[test]
    fn atomic_write_replaces_whole_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        atomic_write(&path, b"first").unwrap();
        atomic_write(&path, b"second").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"second");
        // No temp litter.
        let names: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names.len(), 1);
    }

    fn toy_manifest(per_family: &[usize]) -> FeatureManifest {
        let families: Vec<String> = (0..per_family.len()).map(|f| format!("F{f:02}")).collect();
        let mut items = Vec::new();
        for (fi, &n) in per_family.iter().enumerate() {
            for s in 0..n {
                items.push(FeatureItem {
                    stem: format!("F{fi:02}_v{s:02}"),
                    family: families[fi].clone(),
                    family_index: fi,
                    provenance: Provenance::Original,
                    origin: None,
                });
            }
        }
        FeatureManifest {
            config_digest: "d".into(),
            segment_length: 256,
            graph_height: 8,
            graph_width: 8,
            image_width: 256,
            encoder_seed: 7,
            encoder_dim: 4,
            encoder_fingerprint: "f".into(),
            families,
            items,
        }
    }

    #[test]
    fn holdout_split_is_deterministic_and_disjoint() {
        let manifest = toy_manifest(&[10, 10, 10]);
        let mut cfg = RunConfig::default();
        cfg.training.holdout_per_family = 3;
        let (train, hold) = split_holdout(&manifest, &cfg).unwrap();
        assert_eq!(train.len(), 21);
        assert_eq!(hold.len(), 9);
        assert!(train.iter().all(|i| !hold.contains(i)));
        // Per-family holdout counts.
        for f in 0..3 {
            let count = hold
                .iter()
                .filter(|&&i| manifest.items[i].family_index == f)
                .count();
            assert_eq!(count, 3);
        }
        let again = split_holdout(&manifest, &cfg).unwrap();
        assert_eq!(again, (train.clone(), hold.clone()));
        // A different eval seed moves the split.
        let mut other = cfg.clone();
        other.seeds.eval += 1;
        assert_ne!(split_holdout(&manifest, &other).unwrap(), (train, hold));
    }

    #[test]
    fn holdout_exhausting_a_family_errors() {
        let manifest = toy_manifest(&[10, 3]);
        let mut cfg = RunConfig::default();
        cfg.training.holdout_per_family = 3;
        let err = split_holdout(&manifest, &cfg).unwrap_err();
        assert!(err.to_string().contains("F01"));
    }
}
