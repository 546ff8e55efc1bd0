//! Ring perception.
//!
//! Candidate cycles are generated from shortest-path trees (one tree per
//! root atom, closed by every non-tree edge), sorted by length and filtered
//! for GF(2) independence over bond incidence vectors. The greedy selection
//! over this candidate set yields a minimum cycle basis.

use std::collections::{BTreeSet, VecDeque};

use super::MolGraph;

/// Returns the ring cycles of `mol`; equivalent to [`MolGraph::rings`].
pub fn perceive_rings(mol: &MolGraph) -> Vec<Vec<usize>> {
    mol.rings().to_vec()
}

struct BitRow(Vec<u64>);

impl BitRow {
    fn new(n: usize) -> Self {
        BitRow(vec![0; n.div_ceil(64)])
    }
    fn set(&mut self, i: usize) {
        self.0[i / 64] ^= 1 << (i % 64);
    }
    fn xor(&mut self, other: &BitRow) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a ^= b;
        }
    }
    fn lowest(&self) -> Option<usize> {
        self.0
            .iter()
            .enumerate()
            .find(|(_, w)| **w != 0)
            .map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
    }
}

/// Incremental GF(2) row-echelon basis keyed by pivot column.
struct Gf2Basis {
    rows: Vec<(usize, BitRow)>,
}

impl Gf2Basis {
    fn insert(&mut self, mut row: BitRow) -> bool {
        loop {
            let Some(pivot) = row.lowest() else {
                return false;
            };
            match self.rows.iter().find(|(p, _)| *p == pivot) {
                Some((_, r)) => row.xor(r),
                None => {
                    self.rows.push((pivot, row));
                    return true;
                }
            }
        }
    }
}

pub(super) fn minimum_cycle_basis(mol: &MolGraph) -> Vec<Vec<usize>> {
    let n = mol.n_atoms();
    let m = mol.n_bonds();
    if m < n {
        return Vec::new();
    }
    let target = m + 1 - n;

    let mut candidates: BTreeSet<(usize, Vec<usize>, Vec<usize>)> = BTreeSet::new();
    for root in 0..n {
        let (parent, parent_bond) = bfs_tree(mol, root);
        for (bi, bond) in mol.bonds().iter().enumerate() {
            let (x, y) = (bond.a, bond.b);
            if parent_bond[x] == Some(bi) || parent_bond[y] == Some(bi) {
                continue;
            }
            if parent[x].is_none() && x != root || parent[y].is_none() && y != root {
                continue;
            }
            let px = path_to_root(&parent, x);
            let py = path_to_root(&parent, y);
            // The two tree paths may share only the root.
            let sx: BTreeSet<_> = px.iter().copied().collect();
            if py.iter().filter(|a| sx.contains(a)).count() != 1 {
                continue;
            }
            let mut cycle = px.clone();
            cycle.extend(py[1..].iter().rev());
            let walk = normalize_walk(&cycle);
            let mut sorted = walk.clone();
            sorted.sort_unstable();
            candidates.insert((walk.len(), sorted, walk));
        }
    }

    let mut basis = Gf2Basis { rows: Vec::new() };
    let mut rings = Vec::with_capacity(target);
    for (_, _, walk) in candidates {
        let mut row = BitRow::new(m);
        for k in 0..walk.len() {
            let (a, b) = (walk[k], walk[(k + 1) % walk.len()]);
            let &(_, bi) = mol
                .neighbors(a)
                .iter()
                .find(|&&(nb, _)| nb == b)
                .expect("cycle edges are bonds");
            row.set(bi);
        }
        if basis.insert(row) {
            rings.push(walk);
            if rings.len() == target {
                break;
            }
        }
    }
    rings.sort_by(|a, b| {
        let mut sa = a.clone();
        let mut sb = b.clone();
        sa.sort_unstable();
        sb.sort_unstable();
        sa.cmp(&sb)
    });
    rings
}

fn bfs_tree(mol: &MolGraph, root: usize) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
    let n = mol.n_atoms();
    let mut parent = vec![None; n];
    let mut parent_bond = vec![None; n];
    let mut seen = vec![false; n];
    seen[root] = true;
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for &(v, bi) in mol.neighbors(u) {
            if !seen[v] {
                seen[v] = true;
                parent[v] = Some(u);
                parent_bond[v] = Some(bi);
                queue.push_back(v);
            }
        }
    }
    (parent, parent_bond)
}

/// Path from the root down to `x` (root first).
fn path_to_root(parent: &[Option<usize>], x: usize) -> Vec<usize> {
    let mut path = vec![x];
    let mut cur = x;
    while let Some(p) = parent[cur] {
        path.push(p);
        cur = p;
    }
    path.reverse();
    path
}

/// Rotates a cycle walk to start at its smallest atom and to continue toward
/// the smaller of that atom's two cycle neighbors.
fn normalize_walk(cycle: &[usize]) -> Vec<usize> {
    let len = cycle.len();
    let start = (0..len).min_by_key(|&i| cycle[i]).unwrap();
    let next = cycle[(start + 1) % len];
    let prev = cycle[(start + len - 1) % len];
    if next <= prev {
        (0..len).map(|k| cycle[(start + k) % len]).collect()
    } else {
        (0..len).map(|k| cycle[(start + len - k) % len]).collect()
    }
}
