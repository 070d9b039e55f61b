//! Family-signature derivation and corpus building.
//!
//! A family signature is a parameterized byte-value distribution: three
//! "region kinds" (low / mid / high entropy) with per-family symbol subsets
//! and per-family entropy targets inside fixed bands, mixed in per-family
//! proportions and arranged in a fixed per-family block layout. Samples of a
//! family share the signature; per-sample jitter (block lengths, a small
//! uniform-noise admixture, fresh body draws) keeps samples distinct.
//!
//! Family separation by entropy statistics is engineered, not hoped for:
//! each signature seed maps through a golden-ratio Weyl sequence to a target
//! full-file entropy ("anchor"), so nearby seeds land far apart on the
//! entropy axis, and the mixing proportions are chosen so the analytic
//! mixture entropy tracks that anchor.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{
    insert_junk, shuffle_functions, split_function, FunctionBlock, Provenance, SyntheticProgram,
};
use crate::error::{MalsiamError, Result};
use crate::rng::derive;

/// Entropy bands (bits/byte) and per-family alphabet sizes for the three
/// region kinds. Band tops stay below `log2(alphabet size)` so every target
/// is reachable.
const KIND_BANDS: [(f64, f64); 3] = [(0.8, 2.2), (3.5, 5.2), (6.2, 7.25)];
const KIND_ALPHABET: [usize; 3] = [8, 40, 160];
/// Global pool sizes the per-family alphabets are drawn from; pools
/// partition the byte space so the three kinds never share byte values.
const KIND_POOL: [usize; 3] = [12, 60, 184];

/// Achievable full-file entropy range for the anchor sequence.
const ANCHOR_LO: f64 = 2.8;
const ANCHOR_SPAN: f64 = 3.8;

/// Mean of the per-sample uniform-noise admixture `U[0, 0.08]`.
const MEAN_NOISE: f64 = 0.04;

/// Per-sample block length range (bytes).
const BLOCK_LEN: std::ops::RangeInclusive<usize> = 1024..=3072;
/// Per-family block count range.
const TEMPLATE_LEN: std::ops::RangeInclusive<usize> = 28..=36;

/// One region kind of a family: a symbol distribution with a known entropy.
#[derive(Debug, Clone)]
pub struct KindProfile {
    /// Byte values this kind emits.
    pub alphabet: Vec<u8>,
    /// Sampling weights (sum to 1) over `alphabet`.
    pub weights: Vec<f64>,
    /// Entropy of `weights` in bits; lies inside the kind's band.
    pub target_entropy: f64,
}

/// Everything that characterises a family's byte distribution.
#[derive(Debug, Clone)]
pub struct FamilySignature {
    pub name: String,
    pub seed: u64,
    pub kinds: Vec<KindProfile>,
    /// Target share of blocks per kind.
    pub proportions: [f64; 3],
    /// Target full-file entropy this signature was steered towards.
    pub anchor: f64,
    /// Fixed block layout: kind index for each block position; every sample
    /// of the family uses this order.
    pub template: Vec<usize>,
}

/// splitmix64-style finalizer used for the anchor Weyl sequence.
fn weyl_fraction(seed: u64) -> f64 {
    // Golden-ratio Weyl sequence: consecutive seeds differ by ~0.618 (mod
    // 1), so they can never land close together on the anchor axis.
    (seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 11) as f64 / (1u64 << 53) as f64
}

/// Entropy in bits of a normalised weight vector.
fn entropy_of(weights: &[f64]) -> f64 {
    weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| -w * w.log2())
        .sum()
}

/// Geometric weight vector `w_i ∝ r^i` over `m` symbols whose entropy equals
/// `target` bits, found by bisection on `r ∈ (0, 1]` (entropy is strictly
/// increasing in `r`, from 0 up to `log2 m`).
fn geometric_weights(m: usize, target: f64) -> Vec<f64> {
    assert!(target > 0.0 && target < (m as f64).log2());
    let weights_for = |r: f64| -> Vec<f64> {
        let mut w: Vec<f64> = (0..m).map(|i| r.powi(i as i32)).collect();
        let s: f64 = w.iter().sum();
        for x in &mut w {
            *x /= s;
        }
        w
    };
    let (mut lo, mut hi) = (1e-9, 1.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if entropy_of(&weights_for(mid)) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    weights_for(0.5 * (lo + hi))
}

/// The fixed partition of the byte space into the three kind pools. Drawn
/// once from a constant seed so every family shares the same pool geometry.
fn kind_pools() -> [Vec<u8>; 3] {
    let mut all: Vec<u8> = (0..=255).collect();
    all.shuffle(&mut derive(0x706f_6f6c, "corpus/kind-pools", 0));
    let low = all[..KIND_POOL[0]].to_vec();
    let mid = all[KIND_POOL[0]..KIND_POOL[0] + KIND_POOL[1]].to_vec();
    let high = all[KIND_POOL[0] + KIND_POOL[1]..].to_vec();
    [low, mid, high]
}

/// Analytic entropy of a whole file drawn from this signature: the mixture
/// of kind distributions (weighted by `proportions`) blended with the mean
/// uniform-noise admixture.
fn mixture_entropy(kinds: &[KindProfile], proportions: &[f64; 3]) -> f64 {
    let mut q = [MEAN_NOISE / 256.0; 256];
    for (kind, &p) in kinds.iter().zip(proportions) {
        for (&sym, &w) in kind.alphabet.iter().zip(&kind.weights) {
            q[sym as usize] += p * (1.0 - MEAN_NOISE) * w;
        }
    }
    entropy_of(&q)
}

/// Largest-remainder apportionment of `total` items to `weights`.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let wsum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / wsum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for i in 0..(total - assigned) {
        counts[order[i % weights.len()]] += 1;
    }
    counts
}

impl FamilySignature {
    /// Derive the signature for `signature_seed`. The family name is a label
    /// only; all byte-level structure is a function of the seed.
    pub fn derive(name: &str, signature_seed: u64) -> Self {
        let pools = kind_pools();
        let mut rng = derive(signature_seed, "corpus/signature", 0);

        let kinds: Vec<KindProfile> = (0..3)
            .map(|k| {
                let mut pool = pools[k].clone();
                pool.shuffle(&mut rng);
                pool.truncate(KIND_ALPHABET[k]);
                let (lo, hi) = KIND_BANDS[k];
                let target_entropy = rng.gen_range(lo..hi);
                KindProfile {
                    weights: geometric_weights(pool.len(), target_entropy),
                    alphabet: pool,
                    target_entropy,
                }
            })
            .collect();

        // Choose mixing proportions whose analytic file entropy lands
        // closest to the seed's anchor: draw uniform-simplex candidates and
        // keep the best.
        let anchor = ANCHOR_LO + ANCHOR_SPAN * weyl_fraction(signature_seed);
        let mut best: ([f64; 3], f64) = ([1.0 / 3.0; 3], f64::INFINITY);
        for _ in 0..96 {
            let e: Vec<f64> = (0..3).map(|_| -rng.gen::<f64>().max(1e-12).ln()).collect();
            let s: f64 = e.iter().sum();
            let cand = [e[0] / s, e[1] / s, e[2] / s];
            let err = (mixture_entropy(&kinds, &cand) - anchor).abs();
            if err < best.1 {
                best = (cand, err);
            }
        }
        let proportions = best.0;

        let template_len = rng.gen_range(TEMPLATE_LEN);
        let counts = apportion(template_len, &proportions);
        let mut template: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(k, &c)| std::iter::repeat(k).take(c))
            .collect();
        template.shuffle(&mut rng);

        FamilySignature {
            name: name.to_string(),
            seed: signature_seed,
            kinds,
            proportions,
            anchor,
            template,
        }
    }

    /// Analytic expectation of the full-file byte-histogram entropy for
    /// samples of this family.
    pub fn expected_file_entropy(&self) -> f64 {
        // Weight kinds by their realized template share rather than the
        // target proportions.
        let mut realized = [0.0f64; 3];
        for &k in &self.template {
            realized[k] += 1.0 / self.template.len() as f64;
        }
        mixture_entropy(&self.kinds, &realized)
    }

    /// Generate sample `index` of this family.
    pub fn generate_sample(&self, index: u64) -> SyntheticProgram {
        let mut rng = derive(self.seed, "corpus/sample", index);
        let noise: f64 = rng.gen_range(0.0..0.08);
        let samplers: Vec<WeightedIndex<f64>> = self
            .kinds
            .iter()
            .map(|k| WeightedIndex::new(&k.weights).expect("weights are positive"))
            .collect();

        let blocks = self
            .template
            .iter()
            .enumerate()
            .map(|(pos, &kind)| {
                let len = rng.gen_range(BLOCK_LEN);
                let profile = &self.kinds[kind];
                let body = (0..len)
                    .map(|_| {
                        if rng.gen::<f64>() < noise {
                            rng.gen::<u8>()
                        } else {
                            profile.alphabet[samplers[kind].sample(&mut rng)]
                        }
                    })
                    .collect();
                FunctionBlock {
                    id: format!("f{pos:02}"),
                    body,
                    executable: true,
                }
            })
            .collect();

        SyntheticProgram {
            family: self.name.clone(),
            blocks,
            provenance: Provenance::Original,
        }
    }
}

/// Generate `n_samples` original programs for one family.
///
/// All samples share the family-characteristic byte distribution derived
/// from `signature_seed`; output is fully deterministic, and sample `i` does
/// not depend on `n_samples`.
pub fn generate_family(
    name: &str,
    n_samples: usize,
    signature_seed: u64,
) -> Result<Vec<SyntheticProgram>> {
    if n_samples == 0 {
        return Err(MalsiamError::Config("n_samples must be at least 1".into()));
    }
    let signature = FamilySignature::derive(name, signature_seed);
    Ok((0..n_samples as u64)
        .map(|i| signature.generate_sample(i))
        .collect())
}

/// Low-entropy junk: a short repeated pattern over two or three byte values,
/// mimicking dead padding code. Panics if `len == 0`.
pub fn generate_junk_body(seed: u64, len: usize) -> Vec<u8> {
    assert!(len > 0, "junk body length must be positive");
    let mut rng = derive(seed, "corpus/junk-body", 0);
    let n_symbols = rng.gen_range(2..=3usize);
    let symbols: Vec<u8> = (0..n_symbols).map(|_| rng.gen()).collect();
    let pat_len = rng.gen_range(4..=16usize);
    let pattern: Vec<u8> = (0..pat_len)
        .map(|_| symbols[rng.gen_range(0..n_symbols)])
        .collect();
    (0..len).map(|i| pattern[i % pat_len]).collect()
}

/// Relative weights for allocating variants to the three transforms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformMix {
    pub shuffle: f64,
    pub junk: f64,
    pub split: f64,
}

impl Default for TransformMix {
    fn default() -> Self {
        TransformMix {
            shuffle: 1.0,
            junk: 1.0,
            split: 1.0,
        }
    }
}

/// Corpus-level generation parameters.
#[derive(Debug, Clone)]
pub struct CorpusSpec {
    pub n_families: usize,
    /// Total samples per family, originals plus variants.
    pub samples_per_family: usize,
    /// How many of those are unobfuscated originals.
    pub originals_per_family: usize,
    pub mix: TransformMix,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        // 13 families x 30 samples mirrors a corpus with a 30-sample floor
        // per family after variant augmentation.
        CorpusSpec {
            n_families: 13,
            samples_per_family: 30,
            originals_per_family: 12,
            mix: TransformMix::default(),
            seed: 7,
        }
    }
}

/// One generated corpus member, ready to be written to disk.
#[derive(Debug, Clone)]
pub struct CorpusSample {
    /// Stable identifier, e.g. `F03_v02_shuffle`; doubles as the file stem.
    pub id: String,
    pub program: SyntheticProgram,
    /// For variants, the id of the original they were derived from.
    pub origin: Option<String>,
}

/// Build the full corpus in memory: originals for every family, then
/// obfuscated variants allocated over the three transforms per `mix`.
pub fn build_corpus(spec: &CorpusSpec) -> Result<Vec<CorpusSample>> {
    if spec.n_families == 0 {
        return Err(MalsiamError::Config("n_families must be at least 1".into()));
    }
    if spec.originals_per_family == 0 || spec.originals_per_family > spec.samples_per_family {
        return Err(MalsiamError::Config(format!(
            "originals_per_family must be in 1..={}, got {}",
            spec.samples_per_family, spec.originals_per_family
        )));
    }
    let weights = [spec.mix.shuffle, spec.mix.junk, spec.mix.split];
    if weights.iter().any(|w| *w < 0.0) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(MalsiamError::Config(
            "transform mix weights must be non-negative and not all zero".into(),
        ));
    }

    let n_variants = spec.samples_per_family - spec.originals_per_family;
    let mut out = Vec::with_capacity(spec.n_families * spec.samples_per_family);

    for fam_idx in 0..spec.n_families {
        let name = format!("F{fam_idx:02}");
        // Consecutive signature seeds ride the golden-ratio anchor sequence,
        // spreading the families across the entropy axis.
        let sig_seed = spec.seed.wrapping_add(fam_idx as u64);
        let originals = generate_family(&name, spec.originals_per_family, sig_seed)?;

        let ids: Vec<String> = (0..originals.len())
            .map(|j| format!("{name}_o{j:02}"))
            .collect();
        for (id, program) in ids.iter().zip(originals.iter()) {
            out.push(CorpusSample {
                id: id.clone(),
                program: program.clone(),
                origin: None,
            });
        }

        let counts = apportion(n_variants, &weights);
        let tags: Vec<Provenance> = [Provenance::Shuffle, Provenance::Junk, Provenance::Split]
            .iter()
            .zip(&counts)
            .flat_map(|(&t, &c)| std::iter::repeat(t).take(c))
            .collect();

        for (v, &tag) in tags.iter().enumerate() {
            let base_idx = v % originals.len();
            let base = &originals[base_idx];
            let key = ((fam_idx as u64) << 32) | v as u64;
            let mut vrng: ChaCha8Rng = derive(spec.seed, "corpus/variant", key);
            let tseed: u64 = vrng.gen();
            let program = match tag {
                Provenance::Shuffle => shuffle_functions(base, tseed)?,
                Provenance::Junk => {
                    let len = vrng.gen_range(BLOCK_LEN);
                    let body = generate_junk_body(tseed, len);
                    let pos = vrng.gen_range(0..=base.blocks.len());
                    insert_junk(base, &body, pos, tseed)?
                }
                Provenance::Split => {
                    let target = base.blocks[vrng.gen_range(0..base.blocks.len())].id.clone();
                    let n_fragments = vrng.gen_range(2..=5usize);
                    split_function(base, &target, n_fragments, tseed)?
                }
                Provenance::Original => unreachable!(),
            };
            out.push(CorpusSample {
                id: format!("{name}_v{v:02}_{tag}"),
                program,
                origin: Some(ids[base_idx].clone()),
            });
        }
    }
    Ok(out)
}
