//! Synthetic program corpus: family-signature generation plus the three
//! control-flow obfuscation transforms (function shuffling, junk insertion,
//! function splitting).
//!
//! Programs are modeled as ordered function blocks rather than real
//! executables. The block model preserves exactly the structural properties
//! the transforms manipulate — block order, dead-code presence, and body
//! fragmentation — while keeping everything safe, verifiable, and
//! reproducible. All operations are pure functions of `(inputs, seed)`.

mod generate;

pub use generate::{
    build_corpus, generate_family, generate_junk_body, CorpusSample, CorpusSpec, FamilySignature,
    TransformMix,
};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MalsiamError, Result};
use crate::rng::derive;

/// How a program variant was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Shuffle,
    Junk,
    Split,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Provenance::Original => "original",
            Provenance::Shuffle => "shuffle",
            Provenance::Junk => "junk",
            Provenance::Split => "split",
        };
        f.write_str(s)
    }
}

/// One function-sized unit of a synthetic program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionBlock {
    /// Identifier, unique within its program.
    pub id: String,
    /// Raw body bytes; never empty.
    pub body: Vec<u8>,
    /// `false` marks junk (never-executed) code.
    pub executable: bool,
}

/// A synthetic program: an ordered list of function blocks with a family
/// label and an obfuscation tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticProgram {
    pub family: String,
    pub blocks: Vec<FunctionBlock>,
    pub provenance: Provenance,
}

impl SyntheticProgram {
    /// Concatenation of block bodies in order — the program's on-disk form.
    pub fn serialize_bytes(&self) -> Vec<u8> {
        let total: usize = self.blocks.iter().map(|b| b.body.len()).sum();
        let mut out = Vec::with_capacity(total);
        for b in &self.blocks {
            out.extend_from_slice(&b.body);
        }
        out
    }

    /// Bytes of executable blocks only, in order.
    pub fn executable_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for b in self.blocks.iter().filter(|b| b.executable) {
            out.extend_from_slice(&b.body);
        }
        out
    }

    /// Check the structural invariants: non-empty bodies, unique ids, at
    /// least one executable block.
    pub fn validate(&self) -> Result<()> {
        if !self.blocks.iter().any(|b| b.executable) {
            return Err(MalsiamError::Data(format!(
                "program in family '{}' has no executable block",
                self.family
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for b in &self.blocks {
            if b.body.is_empty() {
                return Err(MalsiamError::Data(format!(
                    "block '{}' has an empty body",
                    b.id
                )));
            }
            if !seen.insert(b.id.as_str()) {
                return Err(MalsiamError::Data(format!("duplicate block id '{}'", b.id)));
            }
        }
        Ok(())
    }

    /// 256-bin byte histogram of the serialized program.
    pub fn byte_histogram(&self) -> [u64; 256] {
        let mut hist = [0u64; 256];
        for b in &self.blocks {
            for &byte in &b.body {
                hist[byte as usize] += 1;
            }
        }
        hist
    }
}

/// Per-family summary stored in the corpus manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilySummary {
    pub name: String,
    /// Total samples on disk for this family (originals + variants).
    pub n_samples: usize,
    /// How many of those are obfuscated variants.
    pub n_variants: usize,
}

/// One corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the corpus directory.
    pub path: String,
    pub family: String,
    pub provenance: Provenance,
    /// For variants, the `path` of the original they were derived from.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
}

/// Index of a generated corpus, written as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub families: Vec<FamilySummary>,
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    /// Check that per-family counts agree with the entry list.
    pub fn validate(&self) -> Result<()> {
        for fam in &self.families {
            let total = self.entries.iter().filter(|e| e.family == fam.name).count();
            let variants = self
                .entries
                .iter()
                .filter(|e| e.family == fam.name && e.provenance != Provenance::Original)
                .count();
            if total != fam.n_samples || variants != fam.n_variants {
                return Err(MalsiamError::Data(format!(
                    "manifest counts for family '{}' ({} samples, {} variants) \
                     do not match entries ({total} samples, {variants} variants)",
                    fam.name, fam.n_samples, fam.n_variants
                )));
            }
        }
        Ok(())
    }
}

/// Reorder a program's blocks with a seed-drawn permutation.
///
/// If the drawn permutation happens to be the identity it is re-drawn, so
/// the output is guaranteed to differ in appearance from the input. The
/// multiset of block bodies — and therefore the serialized byte histogram —
/// is unchanged.
pub fn shuffle_functions(p: &SyntheticProgram, seed: u64) -> Result<SyntheticProgram> {
    if p.blocks.len() < 2 {
        return Err(MalsiamError::Data(format!(
            "shuffle needs at least 2 blocks, program has {}",
            p.blocks.len()
        )));
    }
    let mut rng = derive(seed, "transform/shuffle", 0);
    let n = p.blocks.len();
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        perm.shuffle(&mut rng);
        if perm.iter().enumerate().any(|(i, &j)| i != j) {
            break;
        }
    }
    let blocks = perm.iter().map(|&j| p.blocks[j].clone()).collect();
    Ok(SyntheticProgram {
        family: p.family.clone(),
        blocks,
        provenance: Provenance::Shuffle,
    })
}

/// Insert a never-executed junk block at `position` (an insertion index,
/// so `position == block count` appends). Original blocks keep their order.
///
/// The seed only namespaces the junk block's id so repeated insertions get
/// distinct ids; the inserted bytes are exactly `junk_body`.
pub fn insert_junk(
    p: &SyntheticProgram,
    junk_body: &[u8],
    position: usize,
    seed: u64,
) -> Result<SyntheticProgram> {
    if junk_body.is_empty() {
        return Err(MalsiamError::Data("junk body must be non-empty".into()));
    }
    if position > p.blocks.len() {
        return Err(MalsiamError::Config(format!(
            "junk position {position} out of range 0..={}",
            p.blocks.len()
        )));
    }
    let mut rng = derive(seed, "transform/junk-id", 0);
    let mut id = format!("junk{:08x}", rng.gen::<u32>());
    while p.blocks.iter().any(|b| b.id == id) {
        id = format!("junk{:08x}", rng.gen::<u32>());
    }
    let mut blocks = p.blocks.clone();
    blocks.insert(
        position,
        FunctionBlock {
            id,
            body: junk_body.to_vec(),
            executable: false,
        },
    );
    Ok(SyntheticProgram {
        family: p.family.clone(),
        blocks,
        provenance: Provenance::Junk,
    })
}

/// Split the block named `target` into `n_fragments` pieces and scatter them
/// at seed-chosen positions.
///
/// Fragment ids are `"{target}#0" .. "{target}#k"`; concatenating the
/// fragment bodies in fragment-index order reconstructs the original body
/// exactly, wherever the fragments landed.
pub fn split_function(
    p: &SyntheticProgram,
    target: &str,
    n_fragments: usize,
    seed: u64,
) -> Result<SyntheticProgram> {
    let idx = p
        .blocks
        .iter()
        .position(|b| b.id == target)
        .ok_or_else(|| MalsiamError::Data(format!("no block with id '{target}'")))?;
    let body_len = p.blocks[idx].body.len();
    if n_fragments < 2 || n_fragments > body_len {
        return Err(MalsiamError::Config(format!(
            "n_fragments must be in 2..={body_len}, got {n_fragments}"
        )));
    }
    let mut rng = derive(seed, "transform/split", 0);

    // n_fragments - 1 distinct interior cut points keep every fragment
    // non-empty.
    let mut cuts: Vec<usize> = (1..body_len).collect();
    cuts.shuffle(&mut rng);
    cuts.truncate(n_fragments - 1);
    cuts.sort_unstable();

    let body = &p.blocks[idx].body;
    let executable = p.blocks[idx].executable;
    let mut fragments = Vec::with_capacity(n_fragments);
    let mut start = 0usize;
    for (k, end) in cuts.iter().copied().chain(std::iter::once(body_len)).enumerate() {
        fragments.push(FunctionBlock {
            id: format!("{target}#{k}"),
            body: body[start..end].to_vec(),
            executable,
        });
        start = end;
    }

    let mut blocks: Vec<FunctionBlock> = p
        .blocks
        .iter()
        .filter(|b| b.id != target)
        .cloned()
        .collect();
    for frag in fragments {
        let pos = rng.gen_range(0..=blocks.len());
        blocks.insert(pos, frag);
    }
    Ok(SyntheticProgram {
        family: p.family.clone(),
        blocks,
        provenance: Provenance::Split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn program(bodies: &[&[u8]]) -> SyntheticProgram {
        SyntheticProgram {
            family: "F00".into(),
            blocks: bodies
                .iter()
                .enumerate()
                .map(|(i, b)| FunctionBlock {
                    id: format!("f{i:02}"),
                    body: b.to_vec(),
                    executable: true,
                })
                .collect(),
            provenance: Provenance::Original,
        }
    }

    #[test]
    fn shuffle_two_blocks_swaps_them() {
        // With exactly two blocks the only non-identity permutation is the
        // swap, so any seed must produce it.
        let p = program(&[&[1, 2], &[3, 4]]);
        let out = shuffle_functions(&p, 0).unwrap();
        assert_eq!(out.blocks[0].body, vec![3, 4]);
        assert_eq!(out.blocks[1].body, vec![1, 2]);
        assert_eq!(out.provenance, Provenance::Shuffle);
    }

    #[test]
    fn shuffle_rejects_single_block() {
        let p = program(&[&[1]]);
        assert!(shuffle_functions(&p, 0).is_err());
    }

    #[test]
    fn shuffle_never_returns_identity_order() {
        let p = program(&[&[1], &[2], &[3], &[4]]);
        for seed in 0..200 {
            let out = shuffle_functions(&p, seed).unwrap();
            let order: Vec<&str> = out.blocks.iter().map(|b| b.id.as_str()).collect();
            assert_ne!(order, vec!["f00", "f01", "f02", "f03"], "seed {seed}");
        }
    }

    #[test]
    fn junk_inserted_between_two_calls() {
        let p = program(&[&[1, 2], &[3, 4]]);
        let out = insert_junk(&p, &[9, 9, 9], 1, 5).unwrap();
        assert_eq!(out.blocks.len(), 3);
        assert!(!out.blocks[1].executable);
        assert_eq!(out.blocks[1].body, vec![9, 9, 9]);
        assert_eq!(out.blocks[0].id, "f00");
        assert_eq!(out.blocks[2].id, "f01");
        assert_eq!(out.provenance, Provenance::Junk);
    }

    #[test]
    fn junk_rejects_empty_body_and_bad_position() {
        let p = program(&[&[1, 2], &[3, 4]]);
        assert!(insert_junk(&p, &[], 0, 0).is_err());
        assert!(insert_junk(&p, &[1], 3, 0).is_err());
        // position == len appends.
        let out = insert_junk(&p, &[1], 2, 0).unwrap();
        assert!(!out.blocks[2].executable);
    }

    #[test]
    fn removing_junk_blocks_recovers_input() {
        let p = program(&[&[1, 2], &[3, 4], &[5]]);
        let out = insert_junk(&p, &[7, 7], 1, 3).unwrap();
        let kept: Vec<&FunctionBlock> = out.blocks.iter().filter(|b| b.executable).collect();
        assert_eq!(kept.len(), p.blocks.len());
        for (a, b) in kept.iter().zip(&p.blocks) {
            assert_eq!(**a, *b);
        }
    }

    #[test]
    fn split_midpoint_example() {
        let p = program(&[&[1, 2, 3, 4]]);
        // Try seeds until the midpoint cut appears; the reconstruction
        // property must hold for every seed regardless.
        let mut saw_midpoint = false;
        for seed in 0..50 {
            let out = split_function(&p, "f00", 2, seed).unwrap();
            let mut frags: Vec<&FunctionBlock> = out
                .blocks
                .iter()
                .filter(|b| b.id.starts_with("f00#"))
                .collect();
            frags.sort_by_key(|b| b.id.clone());
            let rebuilt: Vec<u8> = frags.iter().flat_map(|b| b.body.clone()).collect();
            assert_eq!(rebuilt, vec![1, 2, 3, 4], "seed {seed}");
            if frags[0].body == vec![1, 2] {
                saw_midpoint = true;
            }
        }
        assert!(saw_midpoint, "no seed in 0..50 produced the midpoint cut");
    }

    #[test]
    fn split_boundary_cases() {
        let p = program(&[&[1, 2, 3, 4]]);
        // n_fragments == body length → every fragment is a single byte.
        let out = split_function(&p, "f00", 4, 9).unwrap();
        let frags: Vec<&FunctionBlock> = out
            .blocks
            .iter()
            .filter(|b| b.id.starts_with("f00#"))
            .collect();
        assert_eq!(frags.len(), 4);
        assert!(frags.iter().all(|b| b.body.len() == 1));

        assert!(split_function(&p, "f00", 1, 0).is_err());
        assert!(split_function(&p, "f00", 5, 0).is_err());
        assert!(split_function(&p, "nope", 2, 0).is_err());
    }

    #[test]
    fn manifest_validation_checks_counts() {
        let manifest = CorpusManifest {
            seed: 1,
            families: vec![FamilySummary {
                name: "F00".into(),
                n_samples: 2,
                n_variants: 1,
            }],
            entries: vec![
                ManifestEntry {
                    path: "F00/a.bin".into(),
                    family: "F00".into(),
                    provenance: Provenance::Original,
                    origin: None,
                },
                ManifestEntry {
                    path: "F00/b.bin".into(),
                    family: "F00".into(),
                    provenance: Provenance::Shuffle,
                    origin: Some("F00/a.bin".into()),
                },
            ],
        };
        assert!(manifest.validate().is_ok());

        let mut bad = manifest.clone();
        bad.families[0].n_variants = 2;
        assert!(bad.validate().is_err());
    }

    fn histogram_entropy(hist: &[u64; 256]) -> f64 {
        let total: u64 = hist.iter().sum();
        let mut h = 0.0;
        for &c in hist {
            if c > 0 {
                let p = c as f64 / total as f64;
                h -= p * p.log2();
            }
        }
        h
    }

    proptest! {
        /// All three transforms preserve the multiset of executable bytes,
        /// keep programs valid, and are deterministic in their seed.
        #[test]
        fn transforms_preserve_executable_bytes(
            seed in 0u64..1000,
            n_blocks in 2usize..6,
            block_len in 2usize..12,
        ) {
            let mut rng = crate::rng::derive(seed, "test/prog", 0);
            let blocks: Vec<FunctionBlock> = (0..n_blocks)
                .map(|i| FunctionBlock {
                    id: format!("f{i:02}"),
                    body: (0..block_len).map(|_| rand::Rng::gen(&mut rng)).collect(),
                    executable: true,
                })
                .collect();
            let p = SyntheticProgram {
                family: "F00".into(),
                blocks,
                provenance: Provenance::Original,
            };
            let mut expected = p.executable_bytes();
            expected.sort_unstable();

            let outputs = [
                shuffle_functions(&p, seed).unwrap(),
                insert_junk(&p, &[0xAA, 0xBB], seed as usize % (n_blocks + 1), seed).unwrap(),
                split_function(&p, "f00", 2, seed).unwrap(),
            ];
            for out in &outputs {
                out.validate().unwrap();
                let mut got = out.executable_bytes();
                got.sort_unstable();
                prop_assert_eq!(&got, &expected);
            }

            // Shuffling cannot change the serialized byte histogram, so the
            // histogram entropy matches exactly (identical f64 bit patterns).
            let shuffled_entropy = histogram_entropy(&outputs[0].byte_histogram());
            let original_entropy = histogram_entropy(&p.byte_histogram());
            prop_assert_eq!(shuffled_entropy.to_bits(), original_entropy.to_bits());

            // Determinism: same (input, seed) → same output.
            prop_assert_eq!(&shuffle_functions(&p, seed).unwrap(), &outputs[0]);
            prop_assert_eq!(
                &split_function(&p, "f00", 2, seed).unwrap(),
                &outputs[2]
            );
        }
    }
}
