//! Apply the three control-flow obfuscation transforms to one program and
//! verify the properties each one is supposed to preserve.
//!
//! - function shuffle: same blocks in a new order — the whole-file byte
//!   histogram (hence whole-file entropy) is untouched,
//! - junk insertion: one new never-executed block — executable bytes are
//!   untouched,
//! - function splitting: one block becomes scattered fragments that
//!   concatenate back to the original body.
//!
//! Run with: `cargo run --example obfuscation_transforms`

use malsiam::corpus::{
    generate_junk_body, insert_junk, shuffle_functions, split_function, FamilySignature,
};
use malsiam::features::shannon_entropy;

fn main() -> malsiam::Result<()> {
    let signature = FamilySignature::derive("F00", 7);
    let original = signature.generate_sample(0);
    let bytes = original.serialize_bytes();
    println!(
        "original: {} blocks, {} bytes, entropy {:.4} bits/byte\n",
        original.blocks.len(),
        bytes.len(),
        shannon_entropy(&bytes)
    );

    // --- 1. function shuffle -------------------------------------------
    let shuffled = shuffle_functions(&original, 11)?;
    let order_changed = original
        .blocks
        .iter()
        .zip(&shuffled.blocks)
        .any(|(a, b)| a.id != b.id);
    println!("shuffle: provenance={} order_changed={}", shuffled.provenance, order_changed);
    println!(
        "  histogram identical: {}",
        original.byte_histogram() == shuffled.byte_histogram()
    );
    println!(
        "  whole-file entropy:  {:.10} -> {:.10} (exactly equal: {})",
        shannon_entropy(&bytes),
        shannon_entropy(&shuffled.serialize_bytes()),
        shannon_entropy(&bytes) == shannon_entropy(&shuffled.serialize_bytes())
    );

    // --- 2. junk insertion ----------------------------------------------
    let junk = generate_junk_body(23, 2048);
    let junked = insert_junk(&original, &junk, 3, 23)?;
    println!(
        "\njunk: provenance={} blocks {} -> {}",
        junked.provenance,
        original.blocks.len(),
        junked.blocks.len()
    );
    let inserted = &junked.blocks[3];
    println!(
        "  inserted block '{}': {} bytes, executable={}, entropy {:.4}",
        inserted.id,
        inserted.body.len(),
        inserted.executable,
        shannon_entropy(&inserted.body)
    );
    println!(
        "  executable bytes unchanged: {}",
        original.executable_bytes() == junked.executable_bytes()
    );
    println!(
        "  whole-file entropy shifts: {:.4} -> {:.4}",
        shannon_entropy(&bytes),
        shannon_entropy(&junked.serialize_bytes())
    );

    // --- 3. function splitting ------------------------------------------
    let target = original.blocks[0].id.clone();
    let split = split_function(&original, &target, 4, 31)?;
    let mut fragments: Vec<_> = split
        .blocks
        .iter()
        .filter(|b| b.id.starts_with(&format!("{target}#")))
        .collect();
    fragments.sort_by_key(|b| b.id.clone());
    println!(
        "\nsplit: provenance={} target '{}' ({} bytes) -> {} fragments",
        split.provenance,
        target,
        original.blocks[0].body.len(),
        fragments.len()
    );
    for f in &fragments {
        let pos = split.blocks.iter().position(|b| b.id == f.id).unwrap();
        println!("  {:<10} {:>5} bytes at block position {:>2}", f.id, f.body.len(), pos);
    }
    let reassembled: Vec<u8> = fragments.iter().flat_map(|b| b.body.clone()).collect();
    println!(
        "  fragments concatenate back to the original body: {}",
        reassembled == original.blocks[0].body
    );
    println!(
        "  total bytes unchanged: {}",
        split.serialize_bytes().len() == bytes.len()
    );

    // All three variants still satisfy the structural invariants.
    println!();
    for (name, p) in [("shuffle", &shuffled), ("junk", &junked), ("split", &split)] {
        p.validate()?;
        println!("{name} variant validates: true");
    }
    Ok(())
}
