//! N-way K-shot episodic evaluation: sample an episode from a held-out
//! pool, classify its queries by embedding distance to per-class support
//! sets, and aggregate accuracy, pair AUC, and a confusion matrix over many
//! episodes.
//!
//! Run with: `cargo run --example fewshot_evaluation`

use malsiam::corpus::{build_corpus, CorpusSpec, TransformMix};
use malsiam::episodes::{predict_episode, run_eval, sample_episode, EvalPool};
use malsiam::features::{
    binary_to_image, entropy_graph, entropy_series, FrozenEncoder, TaskEncoder,
};
use malsiam::model::{ModelConfig, TrainItem, TrainOptions, Trainer};

fn main() -> malsiam::Result<()> {
    // Build a 6-family corpus and keep 4 samples per family for evaluation.
    let spec = CorpusSpec {
        n_families: 6,
        samples_per_family: 10,
        originals_per_family: 4,
        mix: TransformMix::default(),
        seed: 7,
    };
    let encoder = FrozenEncoder::new(7, 16);
    let samples = build_corpus(&spec)?;
    let mut families: Vec<String> = samples.iter().map(|s| s.program.family.clone()).collect();
    families.sort();
    families.dedup();

    let mut train_items = Vec::new();
    let mut held_out = Vec::new();
    let mut seen = vec![0usize; families.len()];
    for s in &samples {
        let bytes = s.program.serialize_bytes();
        let series = entropy_series(&bytes, 256)?;
        let graph = entropy_graph(&series, 16, 16)?;
        let family = families.binary_search(&s.program.family).unwrap();
        let item = TrainItem {
            image: binary_to_image(&bytes, 256)?,
            task_feature: encoder.encode(&graph),
            family,
        };
        // Last 4 samples of each family are never seen during training.
        seen[family] += 1;
        if seen[family] > spec.samples_per_family - 4 {
            held_out.push(item);
        } else {
            train_items.push(item);
        }
    }
    println!(
        "{} training items, {} held-out items across {} families",
        train_items.len(),
        held_out.len(),
        families.len()
    );

    // Short training run on a small architecture.
    let config = ModelConfig {
        conv_channels: vec![4, 8],
        fc_hidden: 32,
        task_input_dim: 16,
        embedding_dim: 16,
        n_families: 6,
        generated_layers: 2,
        beta: 0.8,
        center_loss_weight: 0.5,
        center_update_rate: 0.5,
    };
    let mut trainer = Trainer::new(
        &config,
        TrainOptions {
            epochs: 6,
            batch_size: 12,
            lr_main: 1e-3,
            lr_meta: 1e-4,
            seed: 7,
            augment: None,
            max_task_shots: 3,
        },
    )?;
    let history = trainer.train(&train_items, &[])?;
    println!(
        "trained {} epochs, loss {:.4} -> {:.4}\n",
        history.len(),
        history.first().unwrap().train_total,
        history.last().unwrap().train_total
    );

    // The pool precomputes conv features once; episodes index into it.
    let pool = EvalPool::build(&trainer.params, &held_out)?;

    // Anatomy of one 3-way 2-shot episode.
    let ep = sample_episode(&pool, 3, 2, 99)?;
    println!("one 3-way 2-shot episode:");
    println!("  class slots -> families {:?}", ep.classes);
    println!(
        "  support: {} classes x {} shots; queries: {} (anchor slot {})",
        ep.support.len(),
        ep.support[0].len(),
        ep.query.len(),
        ep.anchor
    );
    let pred = predict_episode(&pool, &trainer.params, &ep)?;
    let q = ep.anchor_query();
    println!(
        "  anchor query true slot {} -> predicted slot {} (scores {:?})",
        ep.query_labels[q],
        pred.predicted[q],
        pred.scores[q]
            .iter()
            .map(|s| (s * 100.0).round() / 100.0)
            .collect::<Vec<_>>()
    );

    // Aggregate over many episodes, increasing the difficulty.
    println!("\n{:>6} {:>6} {:>9} {:>9} {:>7}", "n_way", "k_shot", "episodes", "accuracy", "auc");
    for (n_way, k_shot) in [(2usize, 1usize), (3, 1), (5, 1), (3, 2), (5, 2)] {
        let cell_seed = 1000 + (100 * n_way + k_shot) as u64;
        let report = run_eval(&pool, &trainer.params, n_way, k_shot, 40, cell_seed)?;
        println!(
            "{:>6} {:>6} {:>9} {:>8.1}% {:>7.3}",
            report.n_way, report.k_shot, report.episodes, report.accuracy, report.auc
        );
        if (n_way, k_shot) == (5, 2) {
            let c = &report.confusion;
            println!(
                "\n5-way 2-shot pair confusion at p > 0.5: tp={} fp={} tn={} fn={}",
                c.tp, c.fp, c.tn, c.fn_
            );
            println!(
                "roc curve: {} points from (0,0) to (1,1); pca cloud: {} pair points",
                report.roc_points.len(),
                report.pca_coords.len()
            );
        }
    }

    // Evaluation is deterministic: same pool, model, and seed give the
    // same report.
    let a = run_eval(&pool, &trainer.params, 3, 1, 20, 5)?;
    let b = run_eval(&pool, &trainer.params, 3, 1, 20, 5)?;
    println!("\nsame seed reproduces the report exactly: {}", a == b);
    Ok(())
}
