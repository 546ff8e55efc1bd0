//! Fragment-level graph of a tokenized molecule.

use std::collections::VecDeque;

use super::encode::TokenSeq;
use crate::chem::MolGraph;

/// Distances at or beyond this value share one bucket.
pub const DIST_CAP: u8 = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FragGraph {
    pub n: usize,
    pub adjacency: Vec<Vec<bool>>,
    /// (bond order index, bond direction index) for adjacent pairs.
    pub bond_attr: Vec<Vec<Option<(usize, usize)>>>,
    pub dist: Vec<Vec<u8>>,
}

pub fn build_frag_graph(mol: &MolGraph, seq: &TokenSeq) -> FragGraph {
    let n = seq.len();
    let owner = seq.atom_owner(mol.n_atoms());
    let mut adjacency = vec![vec![false; n]; n];
    let mut bond_attr = vec![vec![None; n]; n];
    let mut best_key: Vec<Vec<Option<(usize, usize)>>> = vec![vec![None; n]; n];
    for bond in mol.bonds() {
        let (i, j) = (owner[bond.a], owner[bond.b]);
        if i == j {
            continue;
        }
        let key = bond.key();
        if best_key[i][j].is_none_or(|k| key < k) {
            let attr = Some((bond.order.index(), bond.direction.index()));
            for (p, q) in [(i, j), (j, i)] {
                adjacency[p][q] = true;
                best_key[p][q] = Some(key);
                bond_attr[p][q] = attr;
            }
        }
    }
    let dist = distances(&adjacency);
    FragGraph {
        n,
        adjacency,
        bond_attr,
        dist,
    }
}

/// All-pairs BFS distances capped at [`DIST_CAP`]; unreachable pairs also
/// land in the cap bucket.
pub fn distances(adjacency: &[Vec<bool>]) -> Vec<Vec<u8>> {
    let n = adjacency.len();
    let mut dist = vec![vec![DIST_CAP; n]; n];
    for (s, row) in dist.iter_mut().enumerate() {
        row[s] = 0;
        let mut queue = VecDeque::from([s]);
        let mut seen = vec![false; n];
        seen[s] = true;
        while let Some(u) = queue.pop_front() {
            let d = row[u];
            for v in 0..n {
                if adjacency[u][v] && !seen[v] {
                    seen[v] = true;
                    row[v] = (d + 1).min(DIST_CAP);
                    queue.push_back(v);
                }
            }
        }
    }
    dist
}

impl FragGraph {
    /// Graph on the fragments in `keep` (in that order), with distances
    /// recomputed after the other fragments are deleted.
    pub fn subgraph(&self, keep: &[usize]) -> FragGraph {
        let adjacency: Vec<Vec<bool>> = keep
            .iter()
            .map(|&i| keep.iter().map(|&j| self.adjacency[i][j]).collect())
            .collect();
        let bond_attr = keep
            .iter()
            .map(|&i| keep.iter().map(|&j| self.bond_attr[i][j]).collect())
            .collect();
        let dist = distances(&adjacency);
        FragGraph {
            n: keep.len(),
            adjacency,
            bond_attr,
            dist,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;

    fn atoms_seq(n: usize) -> TokenSeq {
        TokenSeq {
            token_ids: vec![4; n],
            partition: (0..n).map(|i| vec![i]).collect(),
            fallback_flags: vec![false; n],
        }
    }

    #[test]
    fn chain_distances() {
        let mol = parse_smiles("CCCCCCCCCC").unwrap();
        let g = build_frag_graph(&mol, &atoms_seq(10));
        assert_eq!(g.dist[0][9], 8);
        assert_eq!(g.dist[0][2], 2);
        assert_eq!(g.dist[0][1], 1);
        assert!(g.adjacency[0][1] && !g.adjacency[0][2]);
    }

    #[test]
    fn first_crossing_bond_wins() {
        // Fragments {0,1} and {2}: bonds 1-2 (double) and 0-2 (single) in a ring.
        let mol = parse_smiles("C1C=C1").unwrap();
        let seq = TokenSeq {
            token_ids: vec![4, 5],
            partition: vec![vec![0, 1], vec![2]],
            fallback_flags: vec![false; 2],
        };
        let g = build_frag_graph(&mol, &seq);
        assert_eq!(g.bond_attr[0][1], Some((0, 0)));
        assert_eq!(g.bond_attr[1][0], Some((0, 0)));
    }

    #[test]
    fn deletion_disconnects() {
        let mol = parse_smiles("CCC").unwrap();
        let g = build_frag_graph(&mol, &atoms_seq(3)).subgraph(&[0, 2]);
        assert_eq!(g.dist[0][1], DIST_CAP);
        assert!(!g.adjacency[0][1]);
    }
}
