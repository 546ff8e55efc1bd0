//! Mutable partition of one molecule into connected fragments.
//!
//! Fragments are keyed by their smallest atom index. Adjacent fragment pairs
//! are cached together with the WL hash of their union, so a merge only
//! rehashes pairs touching the new fragment.

use std::collections::BTreeMap;

use crate::chem::MolGraph;
use crate::wlhash::{hash_unchecked, FragmentHash, LabeledGraph};

#[derive(Debug, Clone)]
pub(crate) struct MolState<'m> {
    mol: &'m MolGraph,
    owner: Vec<usize>,
    frags: BTreeMap<usize, (Vec<usize>, FragmentHash)>,
    pairs: BTreeMap<(usize, usize), FragmentHash>,
}

pub(crate) fn atoms_hash(mol: &MolGraph, atoms: &[usize]) -> FragmentHash {
    hash_unchecked(&LabeledGraph::induced(mol, atoms))
}

impl<'m> MolState<'m> {
    pub fn new(mol: &'m MolGraph) -> Self {
        let frags = (0..mol.n_atoms())
            .map(|a| (a, (vec![a], atoms_hash(mol, &[a]))))
            .collect();
        let mut state = MolState {
            mol,
            owner: (0..mol.n_atoms()).collect(),
            frags,
            pairs: BTreeMap::new(),
        };
        for b in mol.bonds() {
            state.insert_pair(b.a, b.b);
        }
        state
    }

    fn insert_pair(&mut self, x: usize, y: usize) {
        let key = (x.min(y), x.max(y));
        if self.pairs.contains_key(&key) {
            return;
        }
        let mut union = self.frags[&x].0.clone();
        union.extend_from_slice(&self.frags[&y].0);
        union.sort_unstable();
        let h = atoms_hash(self.mol, &union);
        self.pairs.insert(key, h);
    }

    /// Adjacent fragment pairs in ascending key order with their union hash.
    pub fn pairs(&self) -> &BTreeMap<(usize, usize), FragmentHash> {
        &self.pairs
    }

    pub fn fragment(&self, key: usize) -> (&[usize], FragmentHash) {
        let (atoms, h) = &self.frags[&key];
        (atoms, *h)
    }

    pub fn partition(&self) -> Vec<Vec<usize>> {
        self.frags.values().map(|(atoms, _)| atoms.clone()).collect()
    }

    /// Merges the fragments keyed `x` and `y` (which must be adjacent) and
    /// returns the new key.
    pub fn merge(&mut self, x: usize, y: usize) -> usize {
        let (lo, hi) = (x.min(y), x.max(y));
        let h = self.pairs[&(lo, hi)];
        let (hi_atoms, _) = self.frags.remove(&hi).expect("fragment exists");
        let entry = self.frags.get_mut(&lo).expect("fragment exists");
        entry.0.extend_from_slice(&hi_atoms);
        entry.0.sort_unstable();
        entry.1 = h;
        for &a in &hi_atoms {
            self.owner[a] = lo;
        }
        self.pairs.retain(|&(p, q), _| p != lo && p != hi && q != lo && q != hi);
        let mut neighbors: Vec<usize> = self.frags[&lo]
            .0
            .iter()
            .flat_map(|&a| self.mol.neighbors(a).iter().map(|&(nb, _)| self.owner[nb]))
            .filter(|&k| k != lo)
            .collect();
        neighbors.sort_unstable();
        neighbors.dedup();
        for k in neighbors {
            self.insert_pair(lo, k);
        }
        lo
    }
}
