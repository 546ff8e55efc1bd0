//! Independent reference implementations used as test oracles.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use molfrag::chem::{parse_smiles, MolGraph};
use molfrag::synth::random_smiles;
use molfrag::wlhash::{wl_hash, Fragment, FragmentHash, LabeledGraph};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn frag_hash(mol: &MolGraph, atoms: &[usize]) -> FragmentHash {
    wl_hash(&Fragment::new(mol, atoms.to_vec()).unwrap()).unwrap()
}

fn adjacent(mol: &MolGraph, a: &[usize], b: &[usize]) -> bool {
    a.iter().any(|&x| b.iter().any(|&y| mol.bond_between(x, y).is_some()))
}

/// Straight transcription of hash-guided graph BPE: each round recomputes
/// every adjacent pair from scratch, picks the most frequent union hash
/// (smallest on ties) and merges instances in ascending (min atom, min atom)
/// order, skipping fragments already used in the round. Returns the
/// selected hash of every round and the final partitions.
pub fn bpe_oracle(corpus: &[MolGraph], target: usize) -> (Vec<FragmentHash>, Vec<Vec<Vec<usize>>>) {
    let mut known: BTreeSet<FragmentHash> = BTreeSet::new();
    let mut kinds: BTreeSet<(u8, bool)> = BTreeSet::new();
    let mut parts: Vec<Vec<Vec<usize>>> = corpus
        .iter()
        .map(|m| (0..m.n_atoms()).map(|i| vec![i]).collect())
        .collect();
    for m in corpus {
        for (i, a) in m.atoms().iter().enumerate() {
            if kinds.insert((a.atomic_number, a.aromatic)) {
                known.insert(frag_hash(m, &[i]));
            }
        }
    }
    let mut selected = Vec::new();
    while known.len() < target {
        let mut counts: BTreeMap<FragmentHash, usize> = BTreeMap::new();
        let mut instances: Vec<Vec<(usize, usize, FragmentHash)>> = Vec::new();
        for (mol, blocks) in corpus.iter().zip(&parts) {
            let mut inst = Vec::new();
            for i in 0..blocks.len() {
                for j in i + 1..blocks.len() {
                    if adjacent(mol, &blocks[i], &blocks[j]) {
                        let mut u = blocks[i].clone();
                        u.extend(&blocks[j]);
                        u.sort_unstable();
                        let h = frag_hash(mol, &u);
                        *counts.entry(h).or_default() += 1;
                        inst.push((i, j, h));
                    }
                }
            }
            instances.push(inst);
        }
        let Some(best) = counts.values().max().copied() else {
            break;
        };
        let hash = *counts.iter().find(|&(_, &c)| c == best).unwrap().0;
        selected.push(hash);
        known.insert(hash);
        for (blocks, inst) in parts.iter_mut().zip(&instances) {
            let mut order: Vec<(usize, usize)> = inst.iter().filter(|t| t.2 == hash).map(|&(i, j, _)| (i, j)).collect();
            order.sort_by_key(|&(i, j)| {
                let (a, b) = (blocks[i][0], blocks[j][0]);
                (a.min(b), a.max(b))
            });
            let mut used = HashSet::new();
            let mut merged: Vec<Vec<usize>> = Vec::new();
            for (i, j) in order {
                if used.contains(&i) || used.contains(&j) {
                    continue;
                }
                used.insert(i);
                used.insert(j);
                let mut u = blocks[i].clone();
                u.extend(&blocks[j]);
                u.sort_unstable();
                merged.push(u);
            }
            let mut next: Vec<Vec<usize>> = (0..blocks.len())
                .filter(|k| !used.contains(k))
                .map(|k| blocks[k].clone())
                .collect();
            next.extend(merged);
            next.sort_by_key(|b| b[0]);
            *blocks = next;
        }
    }
    (selected, parts)
}

/// Exact labeled-graph isomorphism by backtracking with label, degree and
/// edge-code consistency checks.
pub fn isomorphic(a: &LabeledGraph, b: &LabeledGraph) -> bool {
    let n = a.nodes.len();
    if n != b.nodes.len() || a.edges.len() != b.edges.len() {
        return false;
    }
    let code = |g: &LabeledGraph| {
        let mut m = vec![vec![0u8; g.nodes.len()]; g.nodes.len()];
        for &(x, y, c) in &g.edges {
            m[x][y] = c;
            m[y][x] = c;
        }
        m
    };
    let (ca, cb) = (code(a), code(b));
    let degree = |m: &[Vec<u8>]| -> Vec<usize> { m.iter().map(|r| r.iter().filter(|&&c| c != 0).count()).collect() };
    let (da, db) = (degree(&ca), degree(&cb));
    let mut map = vec![usize::MAX; n];
    let mut used = vec![false; n];
    let ctx = Ctx {
        a,
        b,
        ca: &ca,
        cb: &cb,
        da: &da,
        db: &db,
    };
    ctx.extend(0, &mut map, &mut used)
}

struct Ctx<'g> {
    a: &'g LabeledGraph,
    b: &'g LabeledGraph,
    ca: &'g [Vec<u8>],
    cb: &'g [Vec<u8>],
    da: &'g [usize],
    db: &'g [usize],
}

impl Ctx<'_> {
    fn extend(&self, i: usize, map: &mut [usize], used: &mut [bool]) -> bool {
        let n = self.a.nodes.len();
        if i == n {
            return true;
        }
        for j in 0..n {
            if used[j] || self.a.nodes[i] != self.b.nodes[j] || self.da[i] != self.db[j] {
                continue;
            }
            if (0..i).any(|k| self.ca[i][k] != self.cb[j][map[k]]) {
                continue;
            }
            map[i] = j;
            used[j] = true;
            if self.extend(i + 1, map, used) {
                return true;
            }
            used[j] = false;
        }
        false
    }
}

/// ROC-AUC as the fraction of (positive, negative) pairs ranked correctly,
/// ties counting one half.
pub fn auc_pairs(y: &[bool], s: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..y.len() {
        for j in 0..y.len() {
            if y[i] && !y[j] {
                den += 1.0;
                num += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

/// Average precision as the mean, over positives, of precision among items
/// scored at least as high.
pub fn ap_definition(y: &[bool], s: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut n_pos = 0;
    for i in 0..y.len() {
        if !y[i] {
            continue;
        }
        n_pos += 1;
        let above: Vec<usize> = (0..y.len()).filter(|&j| s[j] >= s[i]).collect();
        let tp = above.iter().filter(|&&j| y[j]).count();
        total += tp as f64 / above.len() as f64;
    }
    total / n_pos as f64
}

/// A seeded random corpus of `n` molecules with at most `max_atoms` atoms.
pub fn random_corpus(n: usize, max_atoms: usize, seed: u64) -> Vec<MolGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let m = parse_smiles(&random_smiles(&mut rng, 4)).unwrap();
        if m.n_atoms() <= max_atoms {
            out.push(m);
        }
    }
    out
}

/// All connected induced atom sets of size `1..=max_size`.
pub fn connected_subsets(mol: &MolGraph, max_size: usize) -> Vec<Vec<usize>> {
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut frontier: Vec<Vec<usize>> = (0..mol.n_atoms()).map(|i| vec![i]).collect();
    seen.extend(frontier.iter().cloned());
    while let Some(set) = frontier.pop() {
        if set.len() == max_size {
            continue;
        }
        for &a in &set {
            for &(b, _) in mol.neighbors(a) {
                if set.contains(&b) {
                    continue;
                }
                let mut next = set.clone();
                next.push(b);
                next.sort_unstable();
                if seen.insert(next.clone()) {
                    frontier.push(next);
                }
            }
        }
    }
    let mut all: Vec<Vec<usize>> = seen.into_iter().collect();
    all.sort();
    all
}
