//! Tokenization of molecules against a learned vocabulary.
//!
//! Merging starts from single atoms and repeatedly joins the adjacent pair
//! whose union hash has the highest learned merge count, until no adjacent
//! pair forms a learned fragment. Fragments that are not valid entries are
//! split along their merge rule, recursively, and every piece produced that
//! way is flagged as fallback.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use super::state::{atoms_hash, MolState};
use super::vocab::{EntryKind, MergeHistory, Vocab, UNK_ID};
use crate::chem::MolGraph;
use crate::par::Exec;
use crate::wlhash::{FragmentHash, LabeledGraph};

/// Upper bound on candidate subsets examined when locating a rule's split.
const SPLIT_SEARCH_LIMIT: usize = 20_000;

/// A molecule as a sequence of fragment tokens, ordered by smallest atom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub token_ids: Vec<u32>,
    pub partition: Vec<Vec<usize>>,
    pub fallback_flags: Vec<bool>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn n_fallback(&self) -> usize {
        self.fallback_flags.iter().filter(|&&f| f).count()
    }

    pub fn n_unk(&self) -> usize {
        self.token_ids.iter().filter(|&&t| t == UNK_ID).count()
    }

    /// Token index owning each atom.
    pub fn atom_owner(&self, n_atoms: usize) -> Vec<usize> {
        let mut owner = vec![usize::MAX; n_atoms];
        for (t, block) in self.partition.iter().enumerate() {
            for &a in block {
                owner[a] = t;
            }
        }
        owner
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("no token sequences")]
    EmptyInput,
}

/// Fraction of tokens produced by fallback decomposition.
pub fn fallback_rate(seqs: &[TokenSeq]) -> Result<f64, StatsError> {
    ratio(seqs, TokenSeq::n_fallback)
}

/// Fraction of tokens that are `[UNK]`.
pub fn unk_rate(seqs: &[TokenSeq]) -> Result<f64, StatsError> {
    ratio(seqs, TokenSeq::n_unk)
}

fn ratio(seqs: &[TokenSeq], count: fn(&TokenSeq) -> usize) -> Result<f64, StatsError> {
    let total: usize = seqs.iter().map(TokenSeq::len).sum();
    if seqs.is_empty() || total == 0 {
        return Err(StatsError::EmptyInput);
    }
    Ok(seqs.iter().map(count).sum::<usize>() as f64 / total as f64)
}

/// One row of the tokenizer statistics table.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsRow {
    pub dataset: String,
    pub n_molecules: usize,
    pub n_tokens: usize,
    pub fallback_rate: f64,
    pub unk_rate: f64,
}

impl StatsRow {
    pub fn from_seqs(dataset: &str, seqs: &[TokenSeq]) -> Result<Self, StatsError> {
        Ok(StatsRow {
            dataset: dataset.to_string(),
            n_molecules: seqs.len(),
            n_tokens: seqs.iter().map(TokenSeq::len).sum(),
            fallback_rate: fallback_rate(seqs)?,
            unk_rate: unk_rate(seqs)?,
        })
    }
}

pub fn stats_csv(rows: &[StatsRow]) -> String {
    let mut out = String::from("dataset,n_molecules,n_tokens,fallback_rate,unk_rate\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.4},{:.4}",
            r.dataset, r.n_molecules, r.n_tokens, r.fallback_rate, r.unk_rate
        );
    }
    out
}

/// Node of the merge tree built while tokenizing one molecule.
struct Node {
    atoms: Vec<usize>,
    hash: FragmentHash,
    children: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: Vocab,
    history: MergeHistory,
    priority: HashMap<FragmentHash, u64>,
}

impl Tokenizer {
    pub fn new(vocab: Vocab, history: MergeHistory) -> Self {
        let priority = vocab
            .entries()
            .iter()
            .filter(|e| e.kind == EntryKind::Fragment)
            .filter_map(|e| e.hash.map(|h| (h, e.merge_count)))
            .collect();
        Tokenizer {
            vocab,
            history,
            priority,
        }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn history(&self) -> &MergeHistory {
        &self.history
    }

    pub fn into_parts(self) -> (Vocab, MergeHistory) {
        (self.vocab, self.history)
    }

    pub fn tokenize_batch(&self, mols: &[MolGraph], exec: Exec) -> Vec<TokenSeq> {
        exec.map(mols, |m| self.tokenize(m))
    }

    pub fn tokenize(&self, mol: &MolGraph) -> TokenSeq {
        let mut state = MolState::new(mol);
        let mut nodes: Vec<Node> = (0..mol.n_atoms())
            .map(|a| Node {
                atoms: vec![a],
                hash: state.fragment(a).1,
                children: None,
            })
            .collect();
        let mut node_of: BTreeMap<usize, usize> = (0..mol.n_atoms()).map(|a| (a, a)).collect();

        loop {
            let best = state
                .pairs()
                .iter()
                .filter_map(|(&k, h)| self.priority.get(h).map(|&p| (p, *h, k)))
                .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)).then(b.2.cmp(&a.2)));
            let Some((_, hash, (x, y))) = best else { break };
            let children = (node_of[&x], node_of[&y]);
            let key = state.merge(x, y);
            node_of.remove(&x.max(y));
            nodes.push(Node {
                atoms: state.fragment(key).0.to_vec(),
                hash,
                children: Some(children),
            });
            node_of.insert(key, nodes.len() - 1);
        }

        let mut pieces: Vec<(Vec<usize>, u32, bool)> = Vec::new();
        for &root in node_of.values() {
            self.emit(mol, &nodes, root, false, &mut pieces);
        }
        pieces.sort_by_key(|(atoms, _, _)| atoms[0]);
        TokenSeq {
            token_ids: pieces.iter().map(|p| p.1).collect(),
            fallback_flags: pieces.iter().map(|p| p.2).collect(),
            partition: pieces.into_iter().map(|p| p.0).collect(),
        }
    }

    fn valid_id(&self, hash: FragmentHash) -> Option<u32> {
        self.vocab.get(hash).filter(|e| e.valid).map(|e| e.id)
    }

    fn emit(&self, mol: &MolGraph, nodes: &[Node], idx: usize, fallback: bool, out: &mut Vec<(Vec<usize>, u32, bool)>) {
        let node = &nodes[idx];
        self.emit_atoms(mol, &node.atoms, node.hash, Some(idx), nodes, fallback, out);
    }

    /// Emits `atoms` (a connected block) as one token or splits it.
    #[allow(clippy::too_many_arguments)]
    fn emit_atoms(
        &self,
        mol: &MolGraph,
        atoms: &[usize],
        hash: FragmentHash,
        node: Option<usize>,
        nodes: &[Node],
        fallback: bool,
        out: &mut Vec<(Vec<usize>, u32, bool)>,
    ) {
        if let Some(id) = self.valid_id(hash) {
            out.push((atoms.to_vec(), id, fallback));
            return;
        }
        if atoms.len() == 1 {
            out.push((atoms.to_vec(), UNK_ID, fallback));
            return;
        }
        let tree_children = node.and_then(|i| nodes[i].children);
        if let Some(rule) = self.history.rule_for(hash) {
            // Prefer the actual merge children when they realize the rule.
            if let Some((l, r)) = tree_children {
                let pair = (nodes[l].hash, nodes[r].hash);
                if pair == (rule.left, rule.right) || pair == (rule.right, rule.left) {
                    self.emit(mol, nodes, l, true, out);
                    self.emit(mol, nodes, r, true, out);
                    return;
                }
            }
            if let Some((a, b)) = split_by_rule(mol, atoms, rule.left, rule.right, &self.vocab) {
                let (ha, hb) = (atoms_hash(mol, &a), atoms_hash(mol, &b));
                self.emit_atoms(mol, &a, ha, None, nodes, true, out);
                self.emit_atoms(mol, &b, hb, None, nodes, true, out);
                return;
            }
        }
        if let Some((l, r)) = tree_children {
            self.emit(mol, nodes, l, true, out);
            self.emit(mol, nodes, r, true, out);
            return;
        }
        for &a in atoms {
            let h = atoms_hash(mol, &[a]);
            let id = self.valid_id(h).unwrap_or(UNK_ID);
            out.push((vec![a], id, true));
        }
    }
}

/// Finds a bipartition of the connected block `atoms` into connected parts
/// hashing to `left` and `right`, scanning subsets in lexicographic order.
fn split_by_rule(
    mol: &MolGraph,
    atoms: &[usize],
    left: FragmentHash,
    right: FragmentHash,
    vocab: &Vocab,
) -> Option<(Vec<usize>, Vec<usize>)> {
    let k = vocab.get(left)?.n_atoms;
    if k == 0 || k >= atoms.len() || vocab.get(right)?.n_atoms != atoms.len() - k {
        return None;
    }
    let n = atoms.len();
    let mut idx: Vec<usize> = (0..k).collect();
    let mut examined = 0;
    loop {
        examined += 1;
        if examined > SPLIT_SEARCH_LIMIT {
            return None;
        }
        let a: Vec<usize> = idx.iter().map(|&i| atoms[i]).collect();
        let b: Vec<usize> = atoms.iter().copied().filter(|x| !a.contains(x)).collect();
        let ga = LabeledGraph::induced(mol, &a);
        let gb = LabeledGraph::induced(mol, &b);
        if ga.is_connected() && gb.is_connected() && atoms_hash(mol, &a) == left && atoms_hash(mol, &b) == right {
            return Some((a, b));
        }
        // Next k-combination of 0..n.
        let mut i = k;
        while i > 0 && idx[i - 1] == i - 1 + n - k {
            i -= 1;
        }
        if i == 0 {
            return None;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}
