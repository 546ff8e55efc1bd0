//! Hash-guided graph BPE vocabulary construction.
//!
//! Every molecule starts as single-atom fragments. Each round counts the WL
//! hash of every adjacent fragment pair (overlapping instances included),
//! selects the most frequent hash (ties to the smallest hash), and merges its
//! instances greedily in ascending pair-key order, skipping fragments already
//! consumed in the round. New hashes become vocabulary entries with a merge
//! rule taken from their first instance in corpus order.

use std::collections::{BTreeMap, HashMap, HashSet};

use log::warn;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::encode::Tokenizer;
use super::filter::{check_validity, PatternTable};
use super::repr;
use super::state::{atoms_hash, MolState};
use super::vocab::{EntryKind, MergeHistory, MergeRule, Vocab, VocabMeta};
use crate::chem::MolGraph;
use crate::par::Exec;
use crate::wlhash::{Fragment, FragmentHash, LabeledGraph};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BuildError {
    #[error("corpus is empty")]
    CorpusEmpty,
    #[error("target size {target} must exceed the {atoms} distinct atom tokens")]
    TargetTooSmall { target: usize, atoms: usize },
}

#[derive(Debug, Clone, Default)]
pub struct BuildOptions {
    pub exec: Exec,
    pub patterns: PatternTable,
}

/// One construction round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Round {
    pub hash: FragmentHash,
    pub count: u64,
    /// Instances merged this round.
    pub applied: usize,
    /// Whether the hash was new and added to the vocabulary.
    pub added: bool,
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub vocab: Vocab,
    pub history: MergeHistory,
    pub rounds: Vec<Round>,
    /// Construction partitions per molecule, blocks sorted by min atom.
    pub partitions: Vec<Vec<Vec<usize>>>,
}

/// Builds a vocabulary with default options.
pub fn build_vocab(corpus: &[MolGraph], target_size: usize) -> Result<(Vocab, MergeHistory), BuildError> {
    build_vocab_with(corpus, target_size, &BuildOptions::default()).map(|o| (o.vocab, o.history))
}

/// Hex digest identifying a corpus by its written SMILES.
pub fn corpus_fingerprint(corpus: &[MolGraph]) -> String {
    let mut hasher = Sha256::new();
    for mol in corpus {
        hasher.update(mol.to_smiles().as_bytes());
        hasher.update(b"\n");
    }
    hasher.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// First merged instance in a molecule during one round.
struct Instance {
    atoms: Vec<usize>,
    left: FragmentHash,
    right: FragmentHash,
}

pub fn build_vocab_with(
    corpus: &[MolGraph],
    target_size: usize,
    opts: &BuildOptions,
) -> Result<BuildOutput, BuildError> {
    if corpus.is_empty() {
        return Err(BuildError::CorpusEmpty);
    }

    // Distinct atom tokens, ordered by (atomic number, aromatic).
    let mut atom_sites: BTreeMap<(u8, bool), (usize, usize)> = BTreeMap::new();
    for (m, mol) in corpus.iter().enumerate() {
        for (i, a) in mol.atoms().iter().enumerate() {
            atom_sites.entry((a.atomic_number, a.aromatic)).or_insert((m, i));
        }
    }
    if target_size <= atom_sites.len() {
        return Err(BuildError::TargetTooSmall {
            target: target_size,
            atoms: atom_sites.len(),
        });
    }

    let mut vocab = Vocab::with_specials(VocabMeta {
        corpus_fingerprint: corpus_fingerprint(corpus),
        target_size,
        truncated: false,
        provenance: Vec::new(),
    });
    for &(m, i) in atom_sites.values() {
        let graph = LabeledGraph::induced(&corpus[m], &[i]);
        vocab.push(
            EntryKind::Atom,
            atoms_hash(&corpus[m], &[i]),
            repr::serialize(&graph),
            1,
            0,
        );
    }

    let mut states: Vec<MolState<'_>> = opts.exec.map_range(corpus.len(), |i| MolState::new(&corpus[i]));
    let mut history = MergeHistory::default();
    let mut rounds = Vec::new();
    let mut representatives: Vec<(FragmentHash, usize, Vec<usize>)> = Vec::new();

    while vocab.n_fragment_entries() < target_size {
        let Some((hash, count)) = select(&states) else {
            vocab.meta.truncated = true;
            warn!(
                "merge candidates exhausted at {} of {} entries",
                vocab.n_fragment_entries(),
                target_size
            );
            break;
        };
        let results = opts.exec.map_mut(&mut states, |_, s| apply_round(s, hash));
        let applied = results.iter().map(|(n, _)| n).sum();
        let added = vocab.id_of(hash).is_none();
        if added {
            let (m, inst) = results
                .into_iter()
                .enumerate()
                .find_map(|(m, (_, inst))| inst.map(|i| (m, i)))
                .expect("selected hash has an instance");
            let graph = LabeledGraph::induced(&corpus[m], &inst.atoms);
            vocab.push(
                EntryKind::Fragment,
                hash,
                repr::serialize(&graph),
                inst.atoms.len(),
                count,
            );
            history.push(MergeRule {
                left: inst.left,
                right: inst.right,
                parent: hash,
            });
            representatives.push((hash, m, inst.atoms));
        }
        rounds.push(Round {
            hash,
            count,
            applied,
            added,
        });
    }

    for (hash, m, atoms) in &representatives {
        let frag = Fragment::new(&corpus[*m], atoms.clone()).expect("representative atoms in range");
        let valid = check_validity(&frag, &opts.patterns).is_ok();
        let id = vocab.id_of(*hash).expect("representative has an entry");
        vocab.entry_mut(id).valid = valid;
    }

    let partitions = states.iter().map(MolState::partition).collect();
    drop(states);

    let tokenizer = Tokenizer::new(vocab, history);
    let seqs = tokenizer.tokenize_batch(corpus, opts.exec);
    let (mut vocab, history) = tokenizer.into_parts();
    let mut freq: HashMap<u32, u64> = HashMap::new();
    for seq in &seqs {
        for &id in &seq.token_ids {
            *freq.entry(id).or_default() += 1;
        }
    }
    for (id, f) in freq {
        vocab.entry_mut(id).frequency = f;
    }

    Ok(BuildOutput {
        vocab,
        history,
        rounds,
        partitions,
    })
}

/// Most frequent candidate hash over all pair instances; ties go to the
/// smallest hash.
fn select(states: &[MolState<'_>]) -> Option<(FragmentHash, u64)> {
    let mut counts: HashMap<FragmentHash, u64> = HashMap::new();
    for s in states {
        for &h in s.pairs().values() {
            *counts.entry(h).or_default() += 1;
        }
    }
    counts.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
}

/// Merges every non-conflicting instance of `hash` in ascending pair-key
/// order. Returns the number merged and the first instance.
fn apply_round(state: &mut MolState<'_>, hash: FragmentHash) -> (usize, Option<Instance>) {
    let candidates: Vec<(usize, usize)> = state
        .pairs()
        .iter()
        .filter(|&(_, &h)| h == hash)
        .map(|(&k, _)| k)
        .collect();
    let mut consumed = HashSet::new();
    let mut first = None;
    let mut applied = 0;
    for (x, y) in candidates {
        if consumed.contains(&x) || consumed.contains(&y) {
            continue;
        }
        let left = state.fragment(x).1;
        let right = state.fragment(y).1;
        let key = state.merge(x, y);
        if first.is_none() {
            first = Some(Instance {
                atoms: state.fragment(key).0.to_vec(),
                left,
                right,
            });
        }
        consumed.insert(x);
        consumed.insert(y);
        applied += 1;
    }
    (applied, first)
}
