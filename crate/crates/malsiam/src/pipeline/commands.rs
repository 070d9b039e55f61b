//! The six pipeline commands. Each takes explicit directories, verifies
//! its inputs' provenance stamps, and writes its own stamp plus artifacts.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::plot::{render_svg, Mark, Series};
use super::{
    atomic_write, atomic_write_json, check_stamp, load_feature_manifest, load_items, sha256_hex,
    split_holdout, write_stamp, FeatureItem, FeatureManifest, RunConfig, CHECKPOINT_FILE,
    FEATURES_FILE, LOSS_FILE, MANIFEST_FILE, REPORT_FILE,
};
use crate::corpus::{build_corpus, CorpusManifest, FamilySummary, ManifestEntry, Provenance};
use crate::episodes::{run_eval, EvalPool, EvalReport};
use crate::error::{MalsiamError, Result};
use crate::features::{
    augment, binary_to_image, entropy_graph, entropy_series, FrozenEncoder, TaskEncoder,
};
use crate::model::checkpoint::Checkpoint;
use crate::model::train::{EpochStats, TrainItem, Trainer};
use crate::rng::derive;
use crate::tensor::Tensor;
use crate::{npy, pipeline};

/// What `synth` produced.
#[derive(Debug, Clone)]
pub struct SynthSummary {
    pub manifest: CorpusManifest,
    /// SHA-256 of the manifest file bytes; identical configs give
    /// identical digests.
    pub manifest_digest: String,
    pub n_files: usize,
}

/// Generate the corpus into `out_dir`: one `.bin` file per sample, then
/// the manifest (written last and atomically, so a failed run never
/// leaves a manifest pointing at missing files).
pub fn cmd_synth(config: &RunConfig, out_dir: &Path) -> Result<SynthSummary> {
    config.validate()?;
    let spec = config.corpus.to_spec(config.seeds.corpus);
    let samples = build_corpus(&spec)?;
    fs::create_dir_all(out_dir)?;

    let mut entries = Vec::with_capacity(samples.len());
    for sample in &samples {
        let path = format!("{}.bin", sample.id);
        fs::write(out_dir.join(&path), sample.program.serialize_bytes())?;
        entries.push(ManifestEntry {
            path,
            family: sample.program.family.clone(),
            provenance: sample.program.provenance,
            origin: sample.origin.as_ref().map(|o| format!("{o}.bin")),
        });
    }

    let family_names: BTreeSet<String> = entries.iter().map(|e| e.family.clone()).collect();
    let families = family_names
        .into_iter()
        .map(|name| {
            let n_samples = entries.iter().filter(|e| e.family == name).count();
            let n_variants = entries
                .iter()
                .filter(|e| e.family == name && e.provenance != Provenance::Original)
                .count();
            FamilySummary {
                name,
                n_samples,
                n_variants,
            }
        })
        .collect();

    let manifest = CorpusManifest {
        seed: config.seeds.corpus,
        families,
        entries,
    };
    manifest.validate()?;

    write_stamp(out_dir, "synth", &config.synth_digest())?;
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    atomic_write(&out_dir.join(MANIFEST_FILE), &bytes)?;

    Ok(SynthSummary {
        n_files: manifest.entries.len(),
        manifest_digest: sha256_hex(&bytes),
        manifest,
    })
}

fn read_corpus_manifest(dir: &Path) -> Result<CorpusManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read(&path).map_err(|_| {
        MalsiamError::Data(format!(
            "no {MANIFEST_FILE} in {}; run `synth` first",
            dir.display()
        ))
    })?;
    let manifest: CorpusManifest = serde_json::from_slice(&text)?;
    manifest.validate()?;
    Ok(manifest)
}

/// Extract per-sample features: entropy graph, grayscale image, and frozen
/// task vector, each as an `.npy` file, indexed by `features.json`.
pub fn cmd_extract(
    config: &RunConfig,
    corpus_dir: &Path,
    out_dir: &Path,
    force: bool,
) -> Result<FeatureManifest> {
    config.validate()?;
    check_stamp(corpus_dir, "synth", &config.synth_digest(), force)?;
    let manifest = read_corpus_manifest(corpus_dir)?;
    fs::create_dir_all(out_dir)?;

    let families: Vec<String> = manifest
        .families
        .iter()
        .map(|f| f.name.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let family_index = |name: &str| families.binary_search_by(|f| f.as_str().cmp(name)).unwrap();

    let p = &config.features;
    let encoder = FrozenEncoder::new(p.encoder_seed, p.encoder_dim);
    let stem_of = |path: &str| path.trim_end_matches(".bin").to_string();

    let mut items = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let bytes = fs::read(corpus_dir.join(&entry.path))?;
        let series = entropy_series(&bytes, p.segment_length)?;
        let graph = entropy_graph(&series, p.graph_height, p.graph_width)?;
        let task = encoder.encode(&graph);
        let image = binary_to_image(&bytes, p.image_width)?;

        let stem = stem_of(&entry.path);
        npy::write(&out_dir.join(format!("{stem}.image.npy")), &image.pixels)?;
        npy::write(
            &out_dir.join(format!("{stem}.task.npy")),
            &Tensor::from_vec(task, &[p.encoder_dim]),
        )?;
        npy::write(&out_dir.join(format!("{stem}.graph.npy")), &graph.matrix)?;

        items.push(FeatureItem {
            stem,
            family: entry.family.clone(),
            family_index: family_index(&entry.family),
            provenance: entry.provenance,
            origin: entry.origin.as_deref().map(stem_of),
        });
    }

    let feature_manifest = FeatureManifest {
        config_digest: config.extract_digest(),
        segment_length: p.segment_length,
        graph_height: p.graph_height,
        graph_width: p.graph_width,
        image_width: p.image_width,
        encoder_seed: p.encoder_seed,
        encoder_dim: p.encoder_dim,
        encoder_fingerprint: sha256_hex(&encoder.parameter_fingerprint()),
        families,
        items,
    };
    write_stamp(out_dir, "extract", &config.extract_digest())?;
    atomic_write_json(&out_dir.join(FEATURES_FILE), &feature_manifest)?;
    Ok(feature_manifest)
}

/// What `augment` produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub config_digest: String,
    pub per_image: usize,
    pub written: usize,
}

/// Write `per_image` augmented draws of every extracted image as
/// `<stem>.aug<k>.npy` (pixels already rescaled by the augmentation's
/// configured factor).
pub fn cmd_augment(
    config: &RunConfig,
    features_dir: &Path,
    out_dir: &Path,
    per_image: usize,
    force: bool,
) -> Result<AugmentSummary> {
    config.validate()?;
    if per_image == 0 {
        return Err(MalsiamError::Config("augment count must be ≥ 1".into()));
    }
    check_stamp(features_dir, "extract", &config.extract_digest(), force)?;
    let manifest = load_feature_manifest(features_dir)?;
    fs::create_dir_all(out_dir)?;

    let mut written = 0;
    for (i, item) in manifest.items.iter().enumerate() {
        let pixels = npy::read(&manifest.image_path(features_dir, item))?;
        let image = crate::features::MalwareImage::new(pixels)?;
        for k in 0..per_image {
            let seed: u64 = derive(
                config.seeds.train,
                "pipeline/augment",
                (i * per_image + k) as u64,
            )
            .gen();
            let out = augment(&image, &config.training.augmentation, seed);
            npy::write(
                &out_dir.join(format!("{}.aug{k}.npy", item.stem)),
                &out.pixels,
            )?;
            written += 1;
        }
    }
    let summary = AugmentSummary {
        config_digest: config.digest(),
        per_image,
        written,
    };
    write_stamp(out_dir, "augment", &config.digest())?;
    // (Augmented images are a leaf artifact; nothing consumes them, so the
    // stamp carries the full run digest.)
    atomic_write_json(&out_dir.join("augmented.json"), &summary)?;
    Ok(summary)
}

/// What `train` produced.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub epochs: Vec<EpochStats>,
    pub epochs_done: u64,
    pub checkpoint_path: PathBuf,
}

/// Loss series artifact written next to the checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossSeries {
    pub config_digest: String,
    pub epochs: Vec<EpochStats>,
}

fn load_split_items(
    config: &RunConfig,
    features_dir: &Path,
) -> Result<(FeatureManifest, Vec<TrainItem>, Vec<usize>, Vec<usize>)> {
    let manifest = load_feature_manifest(features_dir)?;
    if manifest.families.len() != config.model.n_families {
        return Err(MalsiamError::Config(format!(
            "feature set has {} families but model.n_families is {}",
            manifest.families.len(),
            config.model.n_families
        )));
    }
    if manifest.encoder_dim != config.model.task_input_dim {
        return Err(MalsiamError::Config(format!(
            "task features have dimension {} but model.task_input_dim is {}",
            manifest.encoder_dim, config.model.task_input_dim
        )));
    }
    let items = load_items(features_dir, &manifest)?;
    let (train_idx, holdout_idx) = split_holdout(&manifest, config)?;
    Ok((manifest, items, train_idx, holdout_idx))
}

/// Train the model on the non-holdout samples, using the holdout as the
/// validation series, and write `model.ckpt` + `loss_series.json`.
pub fn cmd_train(
    config: &RunConfig,
    features_dir: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
    force: bool,
) -> Result<TrainSummary> {
    config.validate()?;
    check_stamp(features_dir, "extract", &config.extract_digest(), force)?;
    let (_, items, train_idx, holdout_idx) = load_split_items(config, features_dir)?;
    let train_items: Vec<TrainItem> = train_idx.iter().map(|&i| items[i].clone()).collect();
    let val_items: Vec<TrainItem> = holdout_idx.iter().map(|&i| items[i].clone()).collect();

    let options = config.to_train_options();
    let mut trainer = match resume {
        Some(path) => {
            let ckpt = Checkpoint::read(path)?;
            if ckpt.params.config != config.model {
                return Err(MalsiamError::Config(
                    "resume checkpoint was trained with a different model configuration".into(),
                ));
            }
            Trainer::from_checkpoint(ckpt, options)?
        }
        None => Trainer::new(&config.model, options)?,
    };

    let epochs = trainer.train(&train_items, &val_items)?;
    fs::create_dir_all(out_dir)?;
    let checkpoint_path = out_dir.join(CHECKPOINT_FILE);
    trainer.to_checkpoint().write(&checkpoint_path)?;
    write_stamp(out_dir, "train", &config.train_digest())?;
    atomic_write_json(
        &out_dir.join(LOSS_FILE),
        &LossSeries {
            config_digest: config.train_digest(),
            epochs: epochs.clone(),
        },
    )?;
    Ok(TrainSummary {
        epochs,
        epochs_done: trainer.epochs_done,
        checkpoint_path,
    })
}

/// The full evaluation report: config echo first, then one entry per
/// grid cell in grid order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullReport {
    pub config_digest: String,
    pub config: RunConfig,
    pub cells: Vec<EvalReport>,
}

/// Evaluate every `(n_way, k_shot)` grid cell on the holdout pool and
/// write `report.json` plus plot-ready CSV point series.
pub fn cmd_eval(
    config: &RunConfig,
    features_dir: &Path,
    model_dir: &Path,
    out_dir: &Path,
    force: bool,
) -> Result<FullReport> {
    config.validate()?;
    let digest = config.digest();
    check_stamp(features_dir, "extract", &config.extract_digest(), force)?;
    check_stamp(model_dir, "train", &config.train_digest(), force)?;

    let ckpt = Checkpoint::read(&model_dir.join(CHECKPOINT_FILE))?;
    if ckpt.params.config != config.model {
        return Err(MalsiamError::Config(
            "checkpoint was trained with a different model configuration".into(),
        ));
    }
    let (manifest, items, _, holdout_idx) = load_split_items(config, features_dir)?;
    let holdout: Vec<TrainItem> = holdout_idx.iter().map(|&i| items[i].clone()).collect();
    drop(items);
    let pool = EvalPool::build(&ckpt.params, &holdout)?;

    // Fail fast if any cell is infeasible, naming it.
    for &way in &config.eval.ways {
        for &shot in &config.eval.shots {
            let eligible = pool.families.iter().filter(|(_, m)| m.len() > shot).count();
            if eligible < way {
                return Err(MalsiamError::Data(format!(
                    "eval cell {way}-way {shot}-shot is infeasible: only {eligible} of {} \
                     held-out families have at least {} samples",
                    manifest.families.len(),
                    shot + 1
                )));
            }
        }
    }

    let mut cells = Vec::new();
    for &way in &config.eval.ways {
        for &shot in &config.eval.shots {
            let seed: u64 = derive(
                config.seeds.eval,
                "pipeline/eval-cell",
                (way * 1000 + shot) as u64,
            )
            .gen();
            cells.push(run_eval(&pool, &ckpt.params, way, shot, config.eval.episodes, seed)?);
        }
    }

    let report = FullReport {
        config_digest: digest.clone(),
        config: config.clone(),
        cells,
    };
    fs::create_dir_all(out_dir)?;
    write_stamp(out_dir, "eval", &digest)?;
    write_report_csvs(&report, out_dir)?;
    atomic_write_json(&out_dir.join(REPORT_FILE), &report)?;
    Ok(report)
}

fn write_report_csvs(report: &FullReport, out_dir: &Path) -> Result<()> {
    let mut summary = String::from("n_way,k_shot,episodes,correct,accuracy,tp,fp,tn,fn,auc\n");
    for cell in &report.cells {
        summary.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            cell.n_way,
            cell.k_shot,
            cell.episodes,
            cell.correct,
            cell.accuracy,
            cell.confusion.tp,
            cell.confusion.fp,
            cell.confusion.tn,
            cell.confusion.fn_,
            cell.auc
        ));
        let mut roc = String::from("fpr,tpr\n");
        for (fpr, tpr) in &cell.roc_points {
            roc.push_str(&format!("{fpr},{tpr}\n"));
        }
        atomic_write(
            &out_dir.join(format!("roc_{}way_{}shot.csv", cell.n_way, cell.k_shot)),
            roc.as_bytes(),
        )?;
        let mut pca = String::from("x,y,positive_pair\n");
        for p in &cell.pca_coords {
            pca.push_str(&format!("{},{},{}\n", p.x, p.y, p.positive_pair as u8));
        }
        atomic_write(
            &out_dir.join(format!("pca_{}way_{}shot.csv", cell.n_way, cell.k_shot)),
            pca.as_bytes(),
        )?;
    }
    atomic_write(&out_dir.join("accuracy.csv"), summary.as_bytes())
}

/// Render loss curves, ROC curves, and PCA scatters from the `train` and
/// `eval` artifacts into CSV + SVG files; returns the written paths.
pub fn cmd_plot(
    model_dir: Option<&Path>,
    report_dir: Option<&Path>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if model_dir.is_none() && report_dir.is_none() {
        return Err(MalsiamError::Config(
            "plot needs --model and/or --report input directories".into(),
        ));
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    if let Some(dir) = model_dir {
        let path = dir.join(LOSS_FILE);
        let text = fs::read(&path).map_err(|_| {
            MalsiamError::Data(format!("no {LOSS_FILE} in {}; run `train` first", dir.display()))
        })?;
        let series: LossSeries = serde_json::from_slice(&text)?;
        let mut csv =
            String::from("epoch,train_total,train_bce,train_center,train_embedding,val_total\n");
        for e in &series.epochs {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.epoch,
                e.train_total,
                e.train_bce,
                e.train_center,
                e.train_embedding,
                e.val_total.map_or(String::new(), |v| v.to_string()),
            ));
        }
        let csv_path = out_dir.join("loss.csv");
        atomic_write(&csv_path, csv.as_bytes())?;
        written.push(csv_path);

        let mut curves = vec![Series {
            label: "train".into(),
            points: series
                .epochs
                .iter()
                .map(|e| (e.epoch as f64, e.train_total))
                .collect(),
            mark: Mark::Line,
        }];
        if series.epochs.iter().any(|e| e.val_total.is_some()) {
            curves.push(Series {
                label: "validation".into(),
                points: series
                    .epochs
                    .iter()
                    .filter_map(|e| e.val_total.map(|v| (e.epoch as f64, v)))
                    .collect(),
                mark: Mark::Line,
            });
        }
        let svg_path = out_dir.join("loss.svg");
        atomic_write(
            &svg_path,
            render_svg("Training loss", "epoch", "loss", &curves).as_bytes(),
        )?;
        written.push(svg_path);
    }

    if let Some(dir) = report_dir {
        let path = dir.join(REPORT_FILE);
        let text = fs::read(&path).map_err(|_| {
            MalsiamError::Data(format!("no {REPORT_FILE} in {}; run `eval` first", dir.display()))
        })?;
        let report: FullReport = serde_json::from_slice(&text)?;

        let roc_curves: Vec<Series> = report
            .cells
            .iter()
            .map(|cell| Series {
                label: format!(
                    "{}-way {}-shot (AUC {:.3})",
                    cell.n_way, cell.k_shot, cell.auc
                ),
                points: cell.roc_points.clone(),
                mark: Mark::Line,
            })
            .collect();
        let roc_path = out_dir.join("roc.svg");
        atomic_write(
            &roc_path,
            render_svg("ROC curves", "false positive rate", "true positive rate", &roc_curves)
                .as_bytes(),
        )?;
        written.push(roc_path);

        let mut acc = vec![];
        for &shot in report.cells.iter().map(|c| c.k_shot).collect::<BTreeSet<_>>().iter() {
            acc.push(Series {
                label: format!("{shot}-shot"),
                points: report
                    .cells
                    .iter()
                    .filter(|c| c.k_shot == shot)
                    .map(|c| (c.n_way as f64, c.accuracy))
                    .collect(),
                mark: Mark::Line,
            });
        }
        let acc_path = out_dir.join("accuracy.svg");
        atomic_write(
            &acc_path,
            render_svg("Episode accuracy", "n-way", "accuracy (%)", &acc).as_bytes(),
        )?;
        written.push(acc_path);

        for cell in &report.cells {
            let same = Series {
                label: "same family".into(),
                points: cell
                    .pca_coords
                    .iter()
                    .filter(|p| p.positive_pair)
                    .map(|p| (p.x, p.y))
                    .collect(),
                mark: Mark::Points,
            };
            let diff = Series {
                label: "different family".into(),
                points: cell
                    .pca_coords
                    .iter()
                    .filter(|p| !p.positive_pair)
                    .map(|p| (p.x, p.y))
                    .collect(),
                mark: Mark::Points,
            };
            let path = out_dir.join(format!("pca_{}way_{}shot.svg", cell.n_way, cell.k_shot));
            atomic_write(
                &path,
                render_svg(
                    &format!("Pair distance features, {}-way {}-shot", cell.n_way, cell.k_shot),
                    "PC 1",
                    "PC 2",
                    &[same, diff],
                )
                .as_bytes(),
            )?;
            written.push(path);
        }
    }
    write_stamp(out_dir, "plot", "plot-only")?;
    let _ = pipeline::read_stamp(out_dir); // stamp write sanity
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    /// A complete but miniature run configuration that executes in well
    /// under a second per stage.
    fn tiny_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.corpus.families = 3;
        cfg.corpus.samples_per_family = 6;
        cfg.corpus.originals_per_family = 3;
        cfg.features.graph_height = 24;
        cfg.features.graph_width = 24;
        cfg.features.encoder_dim = 6;
        cfg.model = ModelConfig {
            conv_channels: vec![2],
            fc_hidden: 8,
            task_input_dim: 6,
            embedding_dim: 4,
            n_families: 3,
            ..ModelConfig::default()
        };
        cfg.training.epochs = 1;
        cfg.training.batch_size = 4;
        cfg.training.holdout_per_family = 2;
        cfg.eval.ways = vec![2];
        cfg.eval.shots = vec![1];
        cfg.eval.episodes = 4;
        cfg
    }

    #[test]
    fn synth_is_deterministic_and_counts_add_up() {
        let cfg = tiny_config();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let s1 = cmd_synth(&cfg, a.path()).unwrap();
        let s2 = cmd_synth(&cfg, b.path()).unwrap();
        assert_eq!(s1.manifest_digest, s2.manifest_digest);
        assert_eq!(s1.n_files, 18);
        assert_eq!(s1.manifest.families.len(), 3);
        for f in &s1.manifest.families {
            assert_eq!(f.n_samples, 6);
            assert_eq!(f.n_variants, 3);
        }
        // Every referenced file exists.
        for e in &s1.manifest.entries {
            assert!(a.path().join(&e.path).exists());
        }
        // A different corpus seed changes the corpus.
        let mut other = cfg.clone();
        other.seeds.corpus += 1;
        let c = tempfile::tempdir().unwrap();
        let s3 = cmd_synth(&other, c.path()).unwrap();
        assert_ne!(s3.manifest_digest, s1.manifest_digest);
    }

    #[test]
    fn full_pipeline_round_trip_and_byte_identical_reports() {
        let cfg = tiny_config();
        let root = tempfile::tempdir().unwrap();
        let corpus = root.path().join("corpus");
        let feats = root.path().join("features");
        let model = root.path().join("model");
        let report1 = root.path().join("report1");
        let report2 = root.path().join("report2");
        let plots = root.path().join("plots");

        cmd_synth(&cfg, &corpus).unwrap();
        let fm = cmd_extract(&cfg, &corpus, &feats, false).unwrap();
        assert_eq!(fm.items.len(), 18);
        assert_eq!(fm.families, vec!["F00", "F01", "F02"]);
        for item in &fm.items {
            assert!(fm.image_path(&feats, item).exists());
            assert!(fm.task_path(&feats, item).exists());
            assert!(fm.graph_path(&feats, item).exists());
        }
        // Task vectors have the configured dimension.
        let task = npy::read(&fm.task_path(&feats, &fm.items[0])).unwrap();
        assert_eq!(task.shape, vec![6]);

        let summary = cmd_train(&cfg, &feats, &model, None, false).unwrap();
        assert_eq!(summary.epochs.len(), 1);
        assert_eq!(summary.epochs_done, 1);
        assert!(summary.checkpoint_path.exists());
        assert!(summary.epochs[0].val_total.is_some());

        let r1 = cmd_eval(&cfg, &feats, &model, &report1, false).unwrap();
        let r2 = cmd_eval(&cfg, &feats, &model, &report2, false).unwrap();
        assert_eq!(r1, r2);
        let bytes1 = fs::read(report1.join(REPORT_FILE)).unwrap();
        let bytes2 = fs::read(report2.join(REPORT_FILE)).unwrap();
        assert_eq!(bytes1, bytes2, "reports must be byte-identical");
        assert_eq!(r1.cells.len(), 1);
        assert_eq!(r1.cells[0].n_way, 2);
        assert!(report1.join("roc_2way_1shot.csv").exists());
        assert!(report1.join("pca_2way_1shot.csv").exists());
        assert!(report1.join("accuracy.csv").exists());

        let plotted = cmd_plot(Some(&model), Some(&report1), &plots).unwrap();
        assert!(plotted.iter().any(|p| p.ends_with("loss.svg")));
        assert!(plotted.iter().any(|p| p.ends_with("roc.svg")));
        assert!(plots.join("pca_2way_1shot.svg").exists());
        let svg = fs::read_to_string(plots.join("roc.svg")).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn augment_writes_reproducible_variants() {
        let cfg = tiny_config();
        let root = tempfile::tempdir().unwrap();
        let corpus = root.path().join("corpus");
        let feats = root.path().join("features");
        cmd_synth(&cfg, &corpus).unwrap();
        cmd_extract(&cfg, &corpus, &feats, false).unwrap();

        let out1 = root.path().join("aug1");
        let out2 = root.path().join("aug2");
        let s1 = cmd_augment(&cfg, &feats, &out1, 2, false).unwrap();
        let s2 = cmd_augment(&cfg, &feats, &out2, 2, false).unwrap();
        assert_eq!(s1.written, 36);
        assert_eq!(s2.written, 36);
        let fm = load_feature_manifest(&feats).unwrap();
        let name = format!("{}.aug0.npy", fm.items[0].stem);
        let a = fs::read(out1.join(&name)).unwrap();
        let b = fs::read(out2.join(&name)).unwrap();
        assert_eq!(a, b, "same config + seed must give identical augmentation");
        assert!(cmd_augment(&cfg, &feats, &out1, 0, false).is_err());
    }

    #[test]
    fn stages_refuse_mismatched_configs_without_force() {
        let cfg = tiny_config();
        let root = tempfile::tempdir().unwrap();
        let corpus = root.path().join("corpus");
        cmd_synth(&cfg, &corpus).unwrap();

        let mut other = cfg.clone();
        other.seeds.corpus += 1;
        let feats = root.path().join("features");
        let err = cmd_extract(&other, &corpus, &feats, false).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("--force"));
        // With force it proceeds.
        cmd_extract(&other, &corpus, &feats, true).unwrap();
    }

    #[test]
    fn eval_names_the_infeasible_cell() {
        let mut cfg = tiny_config();
        let root = tempfile::tempdir().unwrap();
        let corpus = root.path().join("corpus");
        let feats = root.path().join("features");
        let model = root.path().join("model");
        cmd_synth(&cfg, &corpus).unwrap();
        cmd_extract(&cfg, &corpus, &feats, false).unwrap();
        cfg.training.epochs = 0;
        let corpus2 = root.path().join("corpus2");
        let feats2 = root.path().join("features2");
        cmd_synth(&cfg, &corpus2).unwrap();
        cmd_extract(&cfg, &corpus2, &feats2, false).unwrap();
        cmd_train(&cfg, &feats2, &model, None, false).unwrap();

        cfg.eval.ways = vec![20];
        let err = cmd_eval(&cfg, &feats2, &model, &root.path().join("report"), true).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        let msg = err.to_string();
        assert!(msg.contains("20-way"), "message should name the cell: {msg}");
    }

    #[test]
    fn train_with_zero_epochs_writes_an_initialized_checkpoint() {
        let mut cfg = tiny_config();
        cfg.training.epochs = 0;
        let root = tempfile::tempdir().unwrap();
        let corpus = root.path().join("corpus");
        let feats = root.path().join("features");
        let model = root.path().join("model");
        cmd_synth(&cfg, &corpus).unwrap();
        cmd_extract(&cfg, &corpus, &feats, false).unwrap();
        let summary = cmd_train(&cfg, &feats, &model, None, false).unwrap();
        assert!(summary.epochs.is_empty(), "no epochs → empty loss series");
        assert_eq!(summary.epochs_done, 0);
        let ckpt = Checkpoint::read(&model.join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(ckpt.epochs_done, 0);
        assert_eq!(
            ckpt.params,
            crate::model::ModelParams::init(&cfg.model, cfg.seeds.train).unwrap(),
            "zero-epoch checkpoint is the freshly initialized model"
        );
    }

    #[test]
    fn resume_continues_to_the_new_epoch_target() {
        let mut cfg = tiny_config();
        cfg.training.epochs = 1;
        let root = tempfile::tempdir().unwrap();
        let corpus = root.path().join("corpus");
        let feats = root.path().join("features");
        let m1 = root.path().join("m1");
        let m2 = root.path().join("m2");
        cmd_synth(&cfg, &corpus).unwrap();
        cmd_extract(&cfg, &corpus, &feats, false).unwrap();
        cmd_train(&cfg, &feats, &m1, None, false).unwrap();

        let mut cfg2 = cfg.clone();
        cfg2.training.epochs = 2;
        // A changed epoch target is outside the extract scope, so the
        // existing features are accepted without --force.
        let summary =
            cmd_train(&cfg2, &feats, &m2, Some(&m1.join(CHECKPOINT_FILE)), false).unwrap();
        assert_eq!(summary.epochs_done, 2);
        assert_eq!(summary.epochs.len(), 1, "one additional epoch");
        assert_eq!(summary.epochs[0].epoch, 2);
    }
}
