//! Weisfeiler–Lehman identities for connected labeled graphs.
//!
//! Node labels start from (atomic number, aromatic flag); every refinement
//! step digests a node's own label together with the sorted multiset of
//! (bond code, neighbor label). After [`WL_ITERATIONS`] steps the graph
//! identity is the digest of the sorted node labels followed by the sorted
//! (label, label, bond code) edge triples. All digests are SHA-256 truncated
//! to 64 bits, so identities are stable across platforms.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chem::MolGraph;

pub const WL_ITERATIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WlError {
    #[error("fragment is not connected")]
    DisconnectedFragment,
    #[error("fragment is empty")]
    EmptyFragment,
    #[error("atom index {0} out of range")]
    AtomOutOfRange(usize),
    #[error("invalid hash `{0}`")]
    BadHash(String),
}

/// First 8 bytes of SHA-256, big-endian.
pub fn digest64(bytes: &[u8]) -> u64 {
    let out = Sha256::digest(bytes);
    let mut first = [0u8; 8];
    first.copy_from_slice(&out[..8]);
    u64::from_be_bytes(first)
}

/// 64-bit WL identity, displayed as 16 lowercase hex characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FragmentHash(pub u64);

impl fmt::Display for FragmentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for FragmentHash {
    type Err = WlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 16 || !s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
            return Err(WlError::BadHash(s.to_string()));
        }
        u64::from_str_radix(s, 16)
            .map(FragmentHash)
            .map_err(|_| WlError::BadHash(s.to_string()))
    }
}

/// Node label used for hashing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeLabel {
    pub atomic_number: u8,
    pub aromatic: bool,
}

/// A small labeled graph: nodes carry [`NodeLabel`]s and edges carry bond
/// codes (1 single, 2 double, 3 triple, 4 aromatic).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledGraph {
    pub nodes: Vec<NodeLabel>,
    pub edges: Vec<(usize, usize, u8)>,
}

impl LabeledGraph {
    pub fn adjacency(&self) -> Vec<Vec<(usize, u8)>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(a, b, code) in &self.edges {
            adj[a].push((b, code));
            adj[b].push((a, code));
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let adj = self.adjacency();
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &(v, _) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.nodes.len()
    }

    /// Induced subgraph of `mol` on `atoms` (node i is `atoms[i]`).
    pub fn induced(mol: &MolGraph, atoms: &[usize]) -> Self {
        let mut local = std::collections::HashMap::with_capacity(atoms.len());
        for (i, &a) in atoms.iter().enumerate() {
            local.insert(a, i);
        }
        let nodes = atoms
            .iter()
            .map(|&a| NodeLabel {
                atomic_number: mol.atom(a).atomic_number,
                aromatic: mol.atom(a).aromatic,
            })
            .collect();
        let mut edges = Vec::new();
        for (i, &a) in atoms.iter().enumerate() {
            for &(nb, bi) in mol.neighbors(a) {
                if let Some(&j) = local.get(&nb) {
                    if i < j {
                        edges.push((i, j, mol.bonds()[bi].order.code()));
                    }
                }
            }
        }
        LabeledGraph { nodes, edges }
    }
}

fn initial_label(label: NodeLabel) -> u64 {
    digest64(&[b'n', label.atomic_number, label.aromatic as u8])
}

/// Node labels after `iterations` refinement steps.
pub fn refine_labels(graph: &LabeledGraph, iterations: usize) -> Vec<u64> {
    let adj = graph.adjacency();
    let mut labels: Vec<u64> = graph.nodes.iter().map(|&l| initial_label(l)).collect();
    let mut buf = Vec::new();
    let mut neigh: Vec<(u8, u64)> = Vec::new();
    for _ in 0..iterations {
        let next: Vec<u64> = (0..labels.len())
            .map(|i| {
                neigh.clear();
                neigh.extend(adj[i].iter().map(|&(j, code)| (code, labels[j])));
                neigh.sort_unstable();
                buf.clear();
                buf.push(b'r');
                buf.extend_from_slice(&labels[i].to_le_bytes());
                for &(code, l) in &neigh {
                    buf.push(code);
                    buf.extend_from_slice(&l.to_le_bytes());
                }
                digest64(&buf)
            })
            .collect();
        labels = next;
    }
    labels
}

/// WL identity of a connected labeled graph.
pub fn wl_hash_graph(graph: &LabeledGraph) -> Result<FragmentHash, WlError> {
    if graph.nodes.is_empty() {
        return Err(WlError::EmptyFragment);
    }
    if !graph.is_connected() {
        return Err(WlError::DisconnectedFragment);
    }
    Ok(hash_unchecked(graph))
}

pub(crate) fn hash_unchecked(graph: &LabeledGraph) -> FragmentHash {
    let labels = refine_labels(graph, WL_ITERATIONS);
    let mut sorted = labels.clone();
    sorted.sort_unstable();
    let mut triples: Vec<(u64, u64, u8)> = graph
        .edges
        .iter()
        .map(|&(a, b, code)| {
            let (x, y) = (labels[a].min(labels[b]), labels[a].max(labels[b]));
            (x, y, code)
        })
        .collect();
    triples.sort_unstable();
    let mut buf = Vec::with_capacity(16 + 8 * sorted.len() + 17 * triples.len());
    buf.push(b'f');
    buf.extend_from_slice(&(sorted.len() as u32).to_le_bytes());
    for l in &sorted {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    buf.push(b'e');
    buf.extend_from_slice(&(triples.len() as u32).to_le_bytes());
    for (x, y, code) in &triples {
        buf.extend_from_slice(&x.to_le_bytes());
        buf.extend_from_slice(&y.to_le_bytes());
        buf.push(*code);
    }
    FragmentHash(digest64(&buf))
}

/// A connected induced subgraph of a molecule.
#[derive(Debug, Clone)]
pub struct Fragment<'a> {
    mol: &'a MolGraph,
    atoms: Vec<usize>,
}

impl<'a> Fragment<'a> {
    /// Sorts and deduplicates `atoms`; checks range and non-emptiness.
    /// Connectivity is checked when hashing.
    pub fn new(mol: &'a MolGraph, mut atoms: Vec<usize>) -> Result<Self, WlError> {
        atoms.sort_unstable();
        atoms.dedup();
        if atoms.is_empty() {
            return Err(WlError::EmptyFragment);
        }
        if let Some(&bad) = atoms.iter().find(|&&a| a >= mol.n_atoms()) {
            return Err(WlError::AtomOutOfRange(bad));
        }
        Ok(Fragment { mol, atoms })
    }

    pub fn mol(&self) -> &'a MolGraph {
        self.mol
    }

    pub fn atoms(&self) -> &[usize] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn contains(&self, atom: usize) -> bool {
        self.atoms.binary_search(&atom).is_ok()
    }

    pub fn graph(&self) -> LabeledGraph {
        LabeledGraph::induced(self.mol, &self.atoms)
    }

    pub fn is_connected(&self) -> bool {
        self.graph().is_connected()
    }
}

/// WL identity of a fragment; fails on disconnected fragments.
pub fn wl_hash(frag: &Fragment<'_>) -> Result<FragmentHash, WlError> {
    wl_hash_graph(&frag.graph())
}
