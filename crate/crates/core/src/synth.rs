//! Synthetic drug-like corpora and the planted-motif task.
//!
//! Molecules are strings of building blocks (rings, linkers, carbonyls,
//! halogen caps) written directly as SMILES, so every output parses. The
//! planted-motif task labels a molecule positive when its tokenization
//! contains one chosen fragment token.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tokenizer::{EntryKind, TokenSeq, Vocab};

const STARTS: &[&str] = &[
    "C", "CC", "O", "N", "F", "Cl", "N#C", "OC(=O)", "FC(F)(F)", "CC(C)", "CO",
];

/// Blocks with one entry atom; the next block bonds to the last atom of the
/// main chain.
const LINKS: &[&str] = &[
    "C",
    "CC",
    "CCC",
    "N",
    "O",
    "C(=O)",
    "C(=O)N",
    "C(=O)O",
    "c1ccc(cc1)",
    "c1ccc(nc1)",
    "c1cc(ccc1)",
    "C1CCC(CC1)",
    "N1CCN(CC1)",
    "C1CC(OC1)",
    "C(F)",
    "C(Cl)",
    "C(C)",
    "N(C)",
    "S(=O)(=O)",
    "C=C",
    "C#C",
    "c1ccc(s1)",
];

const ENDS: &[&str] = &[
    "C",
    "O",
    "N",
    "F",
    "Cl",
    "Br",
    "C#N",
    "C(=O)O",
    "C(F)(F)F",
    "[N+](=O)[O-]",
    "OC",
    "C(N)=O",
];

/// One random molecule of `2..=max_links` linker blocks between caps.
pub fn random_smiles(rng: &mut ChaCha8Rng, max_links: usize) -> String {
    let mut s = String::from(*STARTS.choose(rng).expect("non-empty"));
    let n = rng.random_range(2..=max_links.max(2));
    for _ in 0..n {
        s.push_str(LINKS.choose(rng).expect("non-empty"));
    }
    s.push_str(ENDS.choose(rng).expect("non-empty"));
    s
}

/// `n` molecules from a seeded generator.
pub fn generate_corpus(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_smiles(&mut rng, 5)).collect()
}

/// Fragment token (at least `min_atoms` atoms) whose per-molecule presence
/// rate is closest to `target_rate`; ties go to the smaller id.
pub fn choose_motif(seqs: &[TokenSeq], vocab: &Vocab, min_atoms: usize, target_rate: f64) -> Option<u32> {
    let n = seqs.len().max(1) as f64;
    let mut best: Option<(f64, u32)> = None;
    for e in vocab.entries() {
        if e.kind != EntryKind::Fragment || !e.valid || e.n_atoms < min_atoms {
            continue;
        }
        let present = seqs.iter().filter(|s| s.token_ids.contains(&e.id)).count() as f64;
        if present == 0.0 {
            continue;
        }
        let gap = (present / n - target_rate).abs();
        if best.is_none_or(|(g, _)| gap < g) {
            best = Some((gap, e.id));
        }
    }
    best.map(|(_, id)| id)
}

/// 1.0 when the sequence contains `motif`, else 0.0.
pub fn motif_labels(seqs: &[TokenSeq], motif: u32) -> Vec<f64> {
    seqs.iter()
        .map(|s| if s.token_ids.contains(&motif) { 1.0 } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;

    #[test]
    fn every_generated_molecule_parses() {
        for s in generate_corpus(500, 11) {
            let m = parse_smiles(&s).unwrap_or_else(|e| panic!("{s}: {e}"));
            assert!(m.n_atoms() >= 3);
        }
    }

    #[test]
    fn seeded() {
        assert_eq!(generate_corpus(20, 4), generate_corpus(20, 4));
        assert_ne!(generate_corpus(20, 4), generate_corpus(20, 5));
    }
}
