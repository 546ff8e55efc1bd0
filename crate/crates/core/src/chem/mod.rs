//! Molecular graphs: a SMILES-subset parser, ring perception, valence
//! bookkeeping and atom-level constraint features.
//!
//! Hydrogens are never materialized as atoms. Bracket atoms keep their
//! hydrogen count in [`Atom::explicit_h`]; organic-subset atoms carry zero.

pub mod element;
mod rings;
mod smiles;
mod writer;

use std::sync::OnceLock;

use thiserror::Error;

pub use rings::perceive_rings;
pub use smiles::parse_smiles;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChemError {
    #[error("unsupported element `{0}`")]
    UnsupportedElement(String),
    #[error("unbalanced ring closure {0}")]
    UnbalancedRingClosure(u32),
    #[error("unbalanced parenthesis at byte {0}")]
    UnbalancedParenthesis(usize),
    #[error("multiple components are not supported")]
    MultipleComponents,
    #[error("valence violation on atom {atom}: bond order sum {sum} exceeds {limit}")]
    ValenceViolation { atom: usize, sum: f64, limit: f64 },
    #[error("aromatic atom {0} is not in a ring")]
    AromaticOutsideRing(usize),
    #[error("aromatic bond between non-aromatic atoms {0} and {1}")]
    AromaticBondMismatch(usize, usize),
    #[error("duplicate bond between atoms {0} and {1}")]
    DuplicateBond(usize, usize),
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("empty input")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Chirality {
    #[default]
    None,
    /// `@@`
    Cw,
    /// `@`
    Ccw,
}

impl Chirality {
    pub fn index(self) -> usize {
        match self {
            Chirality::None => 0,
            Chirality::Cw => 1,
            Chirality::Ccw => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub fn value(self) -> f64 {
        match self {
            BondOrder::Single => 1.0,
            BondOrder::Double => 2.0,
            BondOrder::Triple => 3.0,
            BondOrder::Aromatic => 1.5,
        }
    }

    /// Edge label used by WL hashing and fragment serialization.
    pub fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => BondOrder::Single,
            2 => BondOrder::Double,
            3 => BondOrder::Triple,
            4 => BondOrder::Aromatic,
            _ => return None,
        })
    }

    /// Dense index for embedding tables (0..4).
    pub fn index(self) -> usize {
        self.code() as usize - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BondDirection {
    #[default]
    None,
    Up,
    Down,
}

impl BondDirection {
    pub fn index(self) -> usize {
        match self {
            BondDirection::None => 0,
            BondDirection::Up => 1,
            BondDirection::Down => 2,
        }
    }
}

pub const N_BOND_ORDERS: usize = 4;
pub const N_BOND_DIRECTIONS: usize = 3;
pub const N_CHIRALITIES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Atom {
    pub atomic_number: u8,
    pub aromatic: bool,
    pub formal_charge: i8,
    pub chirality: Chirality,
    pub explicit_h: u8,
}

impl Atom {
    pub fn new(atomic_number: u8) -> Self {
        Atom {
            atomic_number,
            aromatic: false,
            formal_charge: 0,
            chirality: Chirality::None,
            explicit_h: 0,
        }
    }

    pub fn max_valence(&self) -> u8 {
        element::max_valence(self.atomic_number)
    }

    /// Relaxed upper bound on the bond-order sum: max valence + |charge| + 1.
    pub fn relaxed_valence(&self) -> f64 {
        self.max_valence() as f64 + (self.formal_charge as f64).abs() + 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
    pub direction: BondDirection,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }

    /// Endpoints as (min, max).
    pub fn key(&self) -> (usize, usize) {
        (self.a.min(self.b), self.a.max(self.b))
    }
}

/// A connected, simple molecular graph over heavy atoms.
#[derive(Debug, Clone)]
pub struct MolGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    /// Per atom: (neighbor, bond index), sorted by neighbor.
    adjacency: Vec<Vec<(usize, usize)>>,
    rings: OnceLock<Vec<Vec<usize>>>,
}

impl MolGraph {
    /// Builds a graph from atoms and bonds, checking the structural invariants
    /// (valid distinct endpoints, no duplicate bonds, single component,
    /// valence bound, aromatic consistency).
    pub fn from_parts(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Self, ChemError> {
        if atoms.is_empty() {
            return Err(ChemError::Empty);
        }
        let mut adjacency = vec![Vec::new(); atoms.len()];
        for (i, bond) in bonds.iter().enumerate() {
            if bond.a >= atoms.len() || bond.b >= atoms.len() || bond.a == bond.b {
                return Err(ChemError::Syntax {
                    pos: 0,
                    msg: format!("bad bond endpoints {}-{}", bond.a, bond.b),
                });
            }
            if adjacency[bond.a].iter().any(|&(n, _)| n == bond.b) {
                return Err(ChemError::DuplicateBond(bond.a, bond.b));
            }
            adjacency[bond.a].push((bond.b, i));
            adjacency[bond.b].push((bond.a, i));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let mol = MolGraph {
            atoms,
            bonds,
            adjacency,
            rings: OnceLock::new(),
        };
        if !mol.is_connected() {
            return Err(ChemError::MultipleComponents);
        }
        for (i, atom) in mol.atoms.iter().enumerate() {
            let sum = mol.bond_order_sum(i) + atom.explicit_h as f64;
            let limit = atom.relaxed_valence();
            if sum > limit {
                return Err(ChemError::ValenceViolation { atom: i, sum, limit });
            }
        }
        for bond in &mol.bonds {
            if bond.order == BondOrder::Aromatic && !(mol.atoms[bond.a].aromatic && mol.atoms[bond.b].aromatic) {
                return Err(ChemError::AromaticBondMismatch(bond.a, bond.b));
            }
        }
        let ring_atoms = mol.ring_membership();
        if let Some(i) = (0..mol.atoms.len()).find(|&i| mol.atoms[i].aromatic && !ring_atoms[i]) {
            return Err(ChemError::AromaticOutsideRing(i));
        }
        Ok(mol)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn atom(&self, i: usize) -> &Atom {
        &self.atoms[i]
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn n_bonds(&self) -> usize {
        self.bonds.len()
    }

    /// (neighbor, bond index) pairs, sorted by neighbor index.
    pub fn neighbors(&self, atom: usize) -> &[(usize, usize)] {
        &self.adjacency[atom]
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.adjacency[atom].len()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<&Bond> {
        self.adjacency[a]
            .iter()
            .find(|&&(n, _)| n == b)
            .map(|&(_, bi)| &self.bonds[bi])
    }

    /// Sum of bond orders over heavy-atom bonds; aromatic bonds count 1.5.
    pub fn bond_order_sum(&self, atom: usize) -> f64 {
        self.adjacency[atom]
            .iter()
            .map(|&(_, bi)| self.bonds[bi].order.value())
            .sum()
    }

    /// Ring cycles (minimum cycle basis), computed on first use.
    pub fn rings(&self) -> &[Vec<usize>] {
        self.rings.get_or_init(|| rings::minimum_cycle_basis(self))
    }

    /// Rings whose atoms are all aromatic.
    pub fn aromatic_rings(&self) -> impl Iterator<Item = &Vec<usize>> {
        self.rings()
            .iter()
            .filter(|ring| ring.iter().all(|&a| self.atoms[a].aromatic))
    }

    fn ring_membership(&self) -> Vec<bool> {
        let mut member = vec![false; self.atoms.len()];
        for ring in self.rings() {
            for &a in ring {
                member[a] = true;
            }
        }
        member
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.atoms.len()];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &(v, _) in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.atoms.len()
    }

    /// Deterministic SMILES-like serialization. Re-parsing it yields an
    /// isomorphic graph; it is not canonical across atom orderings.
    pub fn to_smiles(&self) -> String {
        writer::write_smiles(self)
    }
}

/// Per-atom constraint vector: (max valence, bond-order sum, remaining
/// valence, aromatic flag).
pub fn atom_constraint_features(mol: &MolGraph, atom_index: usize) -> [f64; 4] {
    let atom = mol.atom(atom_index);
    let max_valence = atom.max_valence() as f64;
    let sum = mol.bond_order_sum(atom_index);
    [
        max_valence,
        sum,
        max_valence - sum,
        if atom.aromatic { 1.0 } else { 0.0 },
    ]
}
