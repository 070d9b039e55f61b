//! The full artifact pipeline as a library: synth -> extract -> augment ->
//! train -> eval -> plot, all driven by one `RunConfig`, with every stage
//! directory stamped by the digest of the config slice that produced it.
//!
//! The same flow is available on the command line via the `malsiam` binary
//! (`malsiam synth`, `malsiam extract`, ...).
//!
//! Run with: `cargo run --example pipeline_end_to_end`

use malsiam::pipeline::{
    cmd_augment, cmd_eval, cmd_extract, cmd_plot, cmd_synth, cmd_train, RunConfig,
};

fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seeds.corpus = 11;
    cfg.seeds.train = 11;
    cfg.seeds.eval = 11;
    cfg.corpus.families = 3;
    cfg.corpus.samples_per_family = 6;
    cfg.corpus.originals_per_family = 3;
    cfg.features.graph_height = 24;
    cfg.features.graph_width = 24;
    cfg.features.encoder_dim = 6;
    cfg.model.conv_channels = vec![2];
    cfg.model.fc_hidden = 8;
    cfg.model.task_input_dim = 6;
    cfg.model.embedding_dim = 4;
    cfg.model.n_families = 3;
    cfg.training.epochs = 2;
    cfg.training.batch_size = 4;
    cfg.training.holdout_per_family = 2;
    cfg.training.augment = false;
    cfg.eval.ways = vec![2, 3];
    cfg.eval.shots = vec![1];
    cfg.eval.episodes = 10;
    cfg
}

fn main() -> malsiam::Result<()> {
    let cfg = tiny_config();
    cfg.validate()?;
    println!("run digest:     {}", &cfg.digest()[..16]);
    println!("synth digest:   {}", &cfg.synth_digest()[..16]);
    println!("extract digest: {}", &cfg.extract_digest()[..16]);
    println!("train digest:   {}\n", &cfg.train_digest()[..16]);

    let root = std::env::temp_dir().join("malsiam-example-pipeline");
    if root.exists() {
        std::fs::remove_dir_all(&root)?;
    }
    let corpus = root.join("corpus");
    let features = root.join("features");
    let augmented = root.join("augmented");
    let model = root.join("model");
    let report = root.join("report");
    let plots = root.join("plots");

    // 1. synthesize the corpus
    let synth = cmd_synth(&cfg, &corpus)?;
    println!(
        "synth:   {} files, manifest digest {}",
        synth.n_files,
        &synth.manifest_digest[..16]
    );

    // 2. extract features (entropy graph, task feature, image per sample)
    let manifest = cmd_extract(&cfg, &corpus, &features, false)?;
    println!(
        "extract: {} items, families {:?}, encoder fingerprint {}",
        manifest.items.len(),
        manifest.families,
        &manifest.encoder_fingerprint[..16]
    );

    // 3. precompute augmented image variants (optional stage)
    let aug = cmd_augment(&cfg, &features, &augmented, 2, false)?;
    println!("augment: {} variant images ({} per input)", aug.written, aug.per_image);

    // 4. train; the holdout split is carved out per family before training
    let train = cmd_train(&cfg, &features, &model, None, false)?;
    for e in &train.epochs {
        println!(
            "train:   epoch {} total {:.4} (val {:.4})",
            e.epoch,
            e.train_total,
            e.val_total.unwrap()
        );
    }

    // 5. evaluate the n-way/k-shot grid on the held-out samples
    let full = cmd_eval(&cfg, &features, &model, &report, false)?;
    for cell in &full.cells {
        println!(
            "eval:    {}-way {}-shot accuracy {:>5.1}% ({}/{}), auc {:.3}",
            cell.n_way, cell.k_shot, cell.accuracy, cell.correct, cell.episodes, cell.auc
        );
    }

    // 6. render SVG plots from the loss series and the report
    let written = cmd_plot(Some(&model), Some(&report), &plots)?;
    println!("plot:    {} files:", written.len());
    for p in &written {
        println!("         {}", p.file_name().unwrap().to_string_lossy());
    }

    // Every stage directory is stamped with its producing digest; rerunning
    // eval yields a byte-identical report.
    let report_bytes = std::fs::read(report.join("report.json"))?;
    let report2 = root.join("report2");
    cmd_eval(&cfg, &features, &model, &report2, false)?;
    let again = std::fs::read(report2.join("report.json"))?;
    println!("\nsecond eval run is byte-identical: {}", report_bytes == again);

    std::fs::remove_dir_all(&root).ok();
    Ok(())
}
