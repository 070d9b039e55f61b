//! Train a small task-aware Siamese model on an in-memory corpus, watch the
//! hybrid loss decrease, and resume the run from a checkpoint.
//!
//! Run with: `cargo run --example train_and_resume`

use malsiam::corpus::{build_corpus, CorpusSpec, TransformMix};
use malsiam::features::{
    binary_to_image, entropy_graph, entropy_series, FrozenEncoder, TaskEncoder,
};
use malsiam::model::{Checkpoint, ModelConfig, TrainItem, TrainOptions, Trainer};

/// Map every corpus sample to a training item: 105x105 image, encoded
/// entropy-graph task feature, and a numeric family label.
fn prepare_items(spec: &CorpusSpec, encoder: &FrozenEncoder) -> malsiam::Result<Vec<TrainItem>> {
    let samples = build_corpus(spec)?;
    let mut families: Vec<String> = samples.iter().map(|s| s.program.family.clone()).collect();
    families.sort();
    families.dedup();
    samples
        .iter()
        .map(|s| {
            let bytes = s.program.serialize_bytes();
            let series = entropy_series(&bytes, 256)?;
            let graph = entropy_graph(&series, 16, 16)?;
            Ok(TrainItem {
                image: binary_to_image(&bytes, 256)?,
                task_feature: encoder.encode(&graph),
                family: families.binary_search(&s.program.family).unwrap(),
            })
        })
        .collect()
}

fn main() -> malsiam::Result<()> {
    let spec = CorpusSpec {
        n_families: 3,
        samples_per_family: 8,
        originals_per_family: 4,
        mix: TransformMix::default(),
        seed: 7,
    };
    let encoder = FrozenEncoder::new(7, 16);
    let items = prepare_items(&spec, &encoder)?;
    // Items arrive grouped by family, so stride the validation split to
    // cover every family.
    let (train, val): (Vec<TrainItem>, Vec<TrainItem>) = {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (i, item) in items.into_iter().enumerate() {
            if i % 4 == 3 {
                val.push(item);
            } else {
                train.push(item);
            }
        }
        (train, val)
    };
    println!(
        "{} training items, {} validation items, {} families\n",
        train.len(),
        val.len(),
        spec.n_families
    );

    // A deliberately small architecture so the example runs in seconds.
    let config = ModelConfig {
        conv_channels: vec![4, 8],
        fc_hidden: 32,
        task_input_dim: 16,
        embedding_dim: 16,
        n_families: 3,
        generated_layers: 2,
        beta: 0.8,
        center_loss_weight: 0.5,
        center_update_rate: 0.5,
    };
    let options = TrainOptions {
        epochs: 4,
        batch_size: 8,
        lr_main: 1e-3,
        lr_meta: 1e-4,
        seed: 7,
        augment: None,
        max_task_shots: 3,
    };

    let mut trainer = Trainer::new(&config, options.clone())?;
    println!("epoch   total      bce   center   embed      val");
    let history = trainer.train(&train, &val)?;
    for e in &history {
        println!(
            "{:>5} {:>7.4} {:>8.4} {:>8.4} {:>7.4} {:>8.4}",
            e.epoch,
            e.train_total,
            e.train_bce,
            e.train_center,
            e.train_embedding,
            e.val_total.unwrap()
        );
    }
    let first = history.first().unwrap().train_total;
    let last = history.last().unwrap().train_total;
    println!("\ntraining loss {first:.4} -> {last:.4} (decreased: {})", last < first);

    // Checkpoint the full training state (parameters, optimizer moments,
    // class centers, sampler RNG) and resume toward a higher epoch target.
    let dir = std::env::temp_dir().join("malsiam-example-ckpt");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");
    trainer.to_checkpoint().write(&path)?;
    println!("\ncheckpoint written: {} ({} bytes)", path.display(), std::fs::metadata(&path)?.len());

    let resumed_opts = TrainOptions { epochs: 6, ..options.clone() };
    let mut resumed = Trainer::from_checkpoint(Checkpoint::read(&path)?, resumed_opts)?;
    println!("resumed at epoch {} -> target 6", resumed.epochs_done);
    for e in resumed.train(&train, &val)? {
        println!(
            "{:>5} {:>7.4} {:>8.4} {:>8.4} {:>7.4} {:>8.4}",
            e.epoch,
            e.train_total,
            e.train_bce,
            e.train_center,
            e.train_embedding,
            e.val_total.unwrap()
        );
    }

    // Resuming is exact: a fresh 6-epoch run from scratch matches the
    // checkpoint-resumed run parameter for parameter.
    let mut straight = Trainer::new(
        &config,
        TrainOptions { epochs: 6, ..options },
    )?;
    straight.train(&train, &val)?;
    let a = resumed.to_checkpoint().to_bytes();
    let b = straight.to_checkpoint().to_bytes();
    println!("\nresume(4+2) equals a straight 6-epoch run byte-for-byte: {}", a == b);

    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
