//! Convert program bytes into a 105x105 grayscale image and apply the
//! random augmentation pipeline (rescale, ZCA whitening, rotation, vertical
//! shift with wrap fill, horizontal flip).
//!
//! Run with: `cargo run --example images_and_augmentation`

use malsiam::corpus::FamilySignature;
use malsiam::features::{augment, binary_to_image, AugmentationConfig, IMAGE_SIDE};

fn stats(data: &[f64]) -> (f64, f64, f64) {
    let min = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    (min, mean, max)
}

fn main() -> malsiam::Result<()> {
    let program = FamilySignature::derive("F01", 7).generate_sample(0);
    let bytes = program.serialize_bytes();

    // Bytes fill a fixed-width 2-D layout (one byte = one pixel), then the
    // layout is bilinearly resized to the model's square input.
    let image = binary_to_image(&bytes, 256)?;
    let (min, mean, max) = stats(&image.pixels.data);
    println!(
        "{} bytes at width 256 -> {}x{} image (side = {})",
        bytes.len(),
        image.pixels.shape[0],
        image.pixels.shape[1],
        IMAGE_SIDE
    );
    println!("raw pixels:        min {min:>8.3}  mean {mean:>8.3}  max {max:>8.3}  (byte scale 0..255)");

    // The identity config is a no-op (no geometry, rescale 1.0); the
    // trainer's default rescales to [0, 1].
    let plain = augment(&image, &AugmentationConfig::identity(), 0);
    let (min, mean, max) = stats(&plain.pixels.data);
    println!("identity augment:  min {min:>8.3}  mean {mean:>8.3}  max {max:>8.3}  (no-op: {})", plain.pixels.data == image.pixels.data);

    // The full pipeline adds ZCA whitening and random geometry.
    let cfg = AugmentationConfig::default();
    println!(
        "\naugmentation config: rescale {:.6}, zca_epsilon {:e}, rotation ±{}°,",
        cfg.rescale, cfg.zca_epsilon, cfg.rotation_range
    );
    println!(
        "  vertical shift ±{} of height, horizontal_flip {}, fill {:?}",
        cfg.height_shift_range, cfg.horizontal_flip, cfg.fill_mode
    );

    for seed in [1u64, 2, 3] {
        let out = augment(&image, &cfg, seed);
        let (min, mean, max) = stats(&out.pixels.data);
        println!("seed {seed}: min {min:>8.3}  mean {mean:>8.3}  max {max:>8.3}");
    }

    // Augmentation is a pure function of (image, config, seed).
    let a = augment(&image, &cfg, 42);
    let b = augment(&image, &cfg, 42);
    let c = augment(&image, &cfg, 43);
    println!("\nsame seed reproduces the exact pixels: {}", a.pixels.data == b.pixels.data);
    println!("different seed changes them:           {}", a.pixels.data != c.pixels.data);

    // Coarse render of the raw image: the program's block structure shows
    // up as horizontal texture bands.
    println!("\n35x35 preview (downsampled 3x, ' '=dark .. '@'=bright):");
    let glyphs = [' ', '.', ':', '-', '=', '+', '*', '%', '@'];
    for r in (0..IMAGE_SIDE).step_by(3) {
        let line: String = (0..IMAGE_SIDE)
            .step_by(3)
            .map(|cidx| {
                let v = image.pixels.data[r * IMAGE_SIDE + cidx] / 255.0;
                glyphs[((v * 8.0).round() as usize).min(8)]
            })
            .collect();
        println!("  {line}");
    }
    Ok(())
}
