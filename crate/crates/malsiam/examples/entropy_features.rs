//! Turn a program's bytes into an entropy series, arrange it as a 2-D
//! entropy graph, and encode the graph into a fixed-size task feature with
//! the frozen random-weight encoder.
//!
//! Run with: `cargo run --example entropy_features`

use malsiam::corpus::FamilySignature;
use malsiam::features::{entropy_graph, entropy_series, FrozenEncoder, TaskEncoder};

fn main() -> malsiam::Result<()> {
    let signature = FamilySignature::derive("F02", 9);
    let program = signature.generate_sample(0);
    let bytes = program.serialize_bytes();

    // Slide a 256-byte window (non-overlapping) over the file.
    let series = entropy_series(&bytes, 256)?;
    let min = series.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = series.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = series.values.iter().sum::<f64>() / series.values.len() as f64;
    println!(
        "{} bytes -> {} segments of {} bytes",
        bytes.len(),
        series.values.len(),
        series.segment_length
    );
    println!("segment entropy: min {min:.3}  mean {mean:.3}  max {max:.3}  (bits/byte, range [0,8])\n");

    // Coarse ASCII sparkline of the first 72 segments: each family mixes
    // low-, mid-, and high-entropy block kinds, visible as banded structure.
    let glyphs = [' ', '.', ':', '-', '=', '+', '*', '#', '@'];
    let line: String = series
        .values
        .iter()
        .take(72)
        .map(|&v| glyphs[(v / 8.0 * 8.0).round().clamp(0.0, 8.0) as usize])
        .collect();
    println!("first 72 segments (' '=0 bits .. '@'=8 bits):\n  {line}\n");

    // Arrange the series row-major into a fixed 16x16 grid (zero-padded or
    // truncated), the 2-D form consumed by the task encoder.
    let graph = entropy_graph(&series, 16, 16)?;
    println!(
        "entropy graph: {}x{} grid from {} source segments",
        graph.height(),
        graph.width(),
        graph.source_length
    );
    for r in 0..4 {
        let row: Vec<String> = (0..8)
            .map(|c| format!("{:.2}", graph.matrix.data[r * graph.width() + c]))
            .collect();
        println!("  row {r}: [{} ...]", row.join(" "));
    }

    // The frozen encoder projects any graph to a fixed dimension. Its
    // weights are drawn once from the seed and never trained.
    let encoder = FrozenEncoder::new(7, 32);
    let feature = encoder.encode(&graph);
    println!("\ntask feature: {} dims, first 6 = {:?}", feature.len(), &feature[..6].iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>());

    // Same seed => same weights => same feature; new seed => different.
    let encoder_again = FrozenEncoder::new(7, 32);
    println!(
        "same encoder seed reproduces the feature exactly: {}",
        encoder_again.encode(&graph) == feature
    );
    println!(
        "fingerprint stable across constructions: {}",
        encoder.parameter_fingerprint() == encoder_again.parameter_fingerprint()
    );
    let encoder_other = FrozenEncoder::new(8, 32);
    println!(
        "different seed changes the feature: {}",
        encoder_other.encode(&graph) != feature
    );

    // In training and evaluation the task feature is averaged over several
    // same-family samples; the per-family means separate much more cleanly
    // than individual samples do.
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    };
    // Family f of a corpus built at seed 7 uses signature seed 7 + f.
    let feat_of = |family_index: u64, sample: u64| -> malsiam::Result<Vec<f64>> {
        let name = format!("F{family_index:02}");
        let p = FamilySignature::derive(&name, 7 + family_index).generate_sample(sample);
        let s = entropy_series(&p.serialize_bytes(), 256)?;
        Ok(encoder.encode(&entropy_graph(&s, 16, 16)?))
    };
    let n_fams = 4u64;
    let n_samp = 4u64;
    let mut means = Vec::new();
    let mut within = 0.0;
    for f in 0..n_fams {
        let feats: Vec<Vec<f64>> =
            (0..n_samp).map(|i| feat_of(f, i)).collect::<malsiam::Result<_>>()?;
        let mut mean = vec![0.0; feats[0].len()];
        for x in &feats {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v / n_samp as f64;
            }
        }
        within += feats.iter().map(|x| dist(x, &mean)).sum::<f64>() / n_samp as f64;
        means.push(mean);
    }
    within /= n_fams as f64;
    let mut between = 0.0;
    let mut n_pairs = 0.0;
    for a in 0..means.len() {
        for b in a + 1..means.len() {
            between += dist(&means[a], &means[b]);
            n_pairs += 1.0;
        }
    }
    between /= n_pairs;
    println!("\nmean task features over {n_samp} samples, {n_fams} families:");
    println!("  mean within-family spread:         {within:.4}");
    println!("  mean distance between family means: {between:.4}");
    Ok(())
}
