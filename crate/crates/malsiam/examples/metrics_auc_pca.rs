//! The evaluation metrics on their own: exact AUC-ROC with tie handling,
//! ROC curve points, and the 2-D PCA projection used for embedding plots.
//!
//! Run with: `cargo run --example metrics_auc_pca`

use malsiam::episodes::{auc_roc, pca_projection};
use malsiam::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> malsiam::Result<()> {
    // --- AUC-ROC ----------------------------------------------------------
    // A perfect ranking scores 1.0, a perfectly inverted one 0.0.
    let (auc, _) = auc_roc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0])?;
    println!("perfect ranking:  AUC = {auc}");
    let (auc, _) = auc_roc(&[0.1, 0.2, 0.8, 0.9], &[1, 1, 0, 0])?;
    println!("inverted ranking: AUC = {auc}");

    // Ties get half credit. Scores [.9 .5 .5 .1], labels [1 1 0 0] give
    // four positive/negative pairs: (.9,.5) and (.9,.1) and (.5,.1) are
    // ranked correctly, (.5,.5) is tied => (3 + 0.5) / 4 = 0.875.
    let scores = [0.9, 0.5, 0.5, 0.1];
    let labels = [1usize, 1, 0, 0];
    let (auc, roc) = auc_roc(&scores, &labels)?;
    println!("tied ranking:     AUC = {auc} (3 concordant + half credit for 1 tie, of 4 pairs)");
    println!("  roc points (fpr, tpr): {roc:?}");

    // The implementation is an integer-exact rank sweep: it equals the
    // brute-force pair count without floating-point accumulation error.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 400;
    let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..20) as f64) / 19.0).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
    let (fast, _) = auc_roc(&scores, &labels)?;
    let mut num = 0.0f64;
    let mut den = 0u64;
    for i in 0..n {
        for j in 0..n {
            if labels[i] == 1 && labels[j] == 0 {
                den += 1;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    let brute = num / den as f64;
    println!("\n400 heavily tied random scores:");
    println!("  rank-sweep AUC  = {fast}");
    println!("  brute-force AUC = {brute}");
    println!("  bitwise equal   = {}", fast == brute);

    // --- PCA projection -----------------------------------------------------
    // Two Gaussian-ish clusters in 10 dimensions, offset along a random
    // direction; the top-2 principal components recover the separation.
    let dims = 10;
    let per_cluster = 30;
    let offset: Vec<f64> = (0..dims).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for c in 0..2 {
        for _ in 0..per_cluster {
            for d in 0..dims {
                let noise: f64 = rng.gen_range(-0.3..0.3);
                rows.push(noise + offset[d] * c as f64 * 2.0);
            }
            labels.push(c);
        }
    }
    let features = Tensor::from_vec(rows, &[2 * per_cluster, dims]);
    let points = pca_projection(&features, &labels)?;

    let mean_x = |want: bool| {
        let sel: Vec<f64> = points
            .iter()
            .filter(|p| p.positive_pair == want)
            .map(|p| p.x)
            .collect();
        sel.iter().sum::<f64>() / sel.len() as f64
    };
    println!("\npca of two 10-d clusters ({} points):", points.len());
    println!("  cluster-0 mean pc1 = {:>8.3}", mean_x(false));
    println!("  cluster-1 mean pc1 = {:>8.3}", mean_x(true));

    // Crude scatter on the first component.
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut bins = [[0usize; 2]; 24];
    for p in &points {
        let b = (((p.x - lo) / (hi - lo)) * 23.0).round() as usize;
        bins[b.min(23)][p.positive_pair as usize] += 1;
    }
    println!("  pc1 histogram ('o' = cluster 0, 'x' = cluster 1):");
    for (which, glyph) in [(0usize, 'o'), (1, 'x')] {
        let line: String = bins
            .iter()
            .map(|b| {
                let c = b[which];
                if c == 0 {
                    ' '
                } else if c < 4 {
                    glyph
                } else {
                    glyph.to_ascii_uppercase()
                }
            })
            .collect();
        println!("    |{line}|");
    }
    Ok(())
}
