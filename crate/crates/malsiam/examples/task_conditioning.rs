//! The task-aware weight factorization on its own: a meta-learner maps a
//! task feature to non-negative scale vectors, and each generated FC layer
//! uses the effective weights `W = W_shared ⊙ scale` (column-wise product).
//! Different tasks therefore get different effective networks while sharing
//! one set of trained parameters.
//!
//! Run with: `cargo run --example task_conditioning`

use malsiam::model::{
    compose_weights, generate_task_weights, head_embed, ModelConfig, ModelParams,
};
use malsiam::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> malsiam::Result<()> {
    // --- the composition rule itself -----------------------------------
    let shared = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
    let composed = compose_weights(&shared, &[2.0, 10.0]);
    println!("shared [[1,2],[3,4]] with task scale [2,10]:");
    println!("  composed = [[{}, {}], [{}, {}]]", composed.data[0], composed.data[1], composed.data[2], composed.data[3]);

    // An all-ones scale is the identity: the shared weights pass through
    // bit-exactly, which is what reduces the model to a plain Siamese net.
    let identity = compose_weights(&shared, &[1.0, 1.0]);
    println!("  all-ones scale is the identity: {}", identity.data == shared.data);

    // --- the meta-learner ------------------------------------------------
    let config = ModelConfig {
        conv_channels: vec![4, 8],
        fc_hidden: 16,
        task_input_dim: 8,
        embedding_dim: 8,
        n_families: 4,
        generated_layers: 2,
        ..ModelConfig::default()
    };
    let params = ModelParams::init(&config, 7)?;
    println!("\ngenerated layers: {:?}", config.generated_layer_names());

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let task_a: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let task_b: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let w_a = generate_task_weights(&params, &task_a)?.unwrap();
    let w_b = generate_task_weights(&params, &task_b)?.unwrap();
    for (i, name) in config.generated_layer_names().iter().enumerate() {
        let nonneg = w_a[i].iter().all(|&v| v >= 0.0);
        let differ = w_a[i] != w_b[i];
        println!(
            "  scale for {:<4}: {} dims, all >= 0: {}, task A != task B: {}",
            name,
            w_a[i].len(),
            nonneg,
            differ
        );
    }

    // --- effect on embeddings -------------------------------------------
    // The same conv features embed differently under different tasks, and
    // identically under the same task (the Siamese twin property).
    let feats: Vec<f64> = (0..config.flat_dim()).map(|_| rng.gen_range(0.0..1.0)).collect();
    let emb_a = head_embed(&params, &feats, Some(&w_a));
    let emb_a2 = head_embed(&params, &feats, Some(&w_a));
    let emb_b = head_embed(&params, &feats, Some(&w_b));
    let emb_plain = head_embed(&params, &feats, None);
    let l2 = |x: &[f64], y: &[f64]| -> f64 {
        x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    };
    println!("\nembedding of one input ({} dims):", emb_a.len());
    println!("  same task twice:      distance {:.6}", l2(&emb_a, &emb_a2));
    println!("  task A vs task B:     distance {:.6}", l2(&emb_a, &emb_b));
    println!("  task A vs no task:    distance {:.6}", l2(&emb_a, &emb_plain));

    // Modulating the layer input (v ⊙ x) before the shared weights equals
    // multiplying by the composed matrix — the two views of factorization.
    let w1 = params.get("fc1.w");
    let composed_full = compose_weights(w1, &w_a[0]);
    let via_input: Vec<f64> = {
        let xm: Vec<f64> = feats.iter().zip(&w_a[0]).map(|(x, v)| x * v).collect();
        (0..w1.shape[0])
            .map(|r| {
                (0..w1.shape[1])
                    .map(|c| w1.data[r * w1.shape[1] + c] * xm[c])
                    .sum::<f64>()
            })
            .collect()
    };
    let via_weights: Vec<f64> = (0..w1.shape[0])
        .map(|r| {
            (0..w1.shape[1])
                .map(|c| composed_full.data[r * w1.shape[1] + c] * feats[c])
                .sum::<f64>()
        })
        .collect();
    let max_diff = via_input
        .iter()
        .zip(&via_weights)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("\n(W ⊙ scale)·x == W·(scale ⊙ x): max |diff| = {max_diff:e}");
    Ok(())
}
