//! Chemical validity filtering of candidate fragments.
//!
//! A fragment survives when it is connected, its within-fragment bond-order
//! sums respect the relaxed valence bound, it contains every aromatic ring of
//! its source molecule fully or not at all, and it does not partially overlap
//! any functional-group match from the pattern table.

use crate::chem::{BondOrder, MolGraph};
use crate::wlhash::Fragment;

/// One atom of a functional-group pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternAtom {
    pub atomic_number: u8,
    pub aromatic: Option<bool>,
    /// Heavy-atom degree in the molecule.
    pub degree: Option<usize>,
}

impl PatternAtom {
    fn matches(&self, mol: &MolGraph, atom: usize) -> bool {
        let a = mol.atom(atom);
        a.atomic_number == self.atomic_number
            && self.aromatic.is_none_or(|x| x == a.aromatic)
            && self.degree.is_none_or(|d| d == mol.degree(atom))
    }
}

/// Pattern bond; `order: None` matches any order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternBond {
    pub a: usize,
    pub b: usize,
    pub order: Option<BondOrder>,
}

/// A labeled subgraph pattern. Every atom after the first must be bonded to
/// an earlier atom of the pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionalGroup {
    pub name: String,
    pub atoms: Vec<PatternAtom>,
    pub bonds: Vec<PatternBond>,
}

fn atom(z: u8) -> PatternAtom {
    PatternAtom {
        atomic_number: z,
        aromatic: Some(false),
        degree: None,
    }
}

fn terminal(z: u8) -> PatternAtom {
    PatternAtom {
        degree: Some(1),
        ..atom(z)
    }
}

fn bond(a: usize, b: usize, order: Option<BondOrder>) -> PatternBond {
    PatternBond { a, b, order }
}

impl FunctionalGroup {
    pub fn new(name: &str, atoms: Vec<PatternAtom>, bonds: Vec<PatternBond>) -> Self {
        FunctionalGroup {
            name: name.to_string(),
            atoms,
            bonds,
        }
    }

    /// All matches in `mol`, as sorted atom sets, deduplicated.
    pub fn find_matches(&self, mol: &MolGraph) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut assignment = Vec::with_capacity(self.atoms.len());
        self.extend(mol, &mut assignment, &mut out);
        out.sort();
        out.dedup();
        out
    }

    fn extend(&self, mol: &MolGraph, assignment: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let k = assignment.len();
        if k == self.atoms.len() {
            let mut set = assignment.clone();
            set.sort_unstable();
            out.push(set);
            return;
        }
        for cand in 0..mol.n_atoms() {
            if assignment.contains(&cand) || !self.atoms[k].matches(mol, cand) {
                continue;
            }
            let consistent = self.bonds.iter().all(|pb| {
                let (x, y) = if pb.a == k {
                    (pb.b, cand)
                } else if pb.b == k {
                    (pb.a, cand)
                } else {
                    return true;
                };
                if x > k {
                    return true;
                }
                match mol.bond_between(assignment[x], y) {
                    Some(b) => pb.order.is_none_or(|o| o == b.order),
                    None => false,
                }
            });
            if consistent {
                assignment.push(cand);
                self.extend(mol, assignment, out);
                assignment.pop();
            }
        }
    }
}

/// Functional-group patterns used by the filter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternTable {
    pub groups: Vec<FunctionalGroup>,
}

impl Default for PatternTable {
    /// Carboxylic acid, ester, amide, nitro, sulfonamide, nitrile,
    /// ketone/aldehyde carbonyl and azo.
    fn default() -> Self {
        use BondOrder::*;
        let groups = vec![
            FunctionalGroup::new(
                "carboxylic_acid",
                vec![atom(6), terminal(8), terminal(8)],
                vec![bond(0, 1, Some(Double)), bond(0, 2, Some(Single))],
            ),
            FunctionalGroup::new(
                "ester",
                vec![
                    atom(6),
                    terminal(8),
                    PatternAtom {
                        degree: Some(2),
                        ..atom(8)
                    },
                ],
                vec![bond(0, 1, Some(Double)), bond(0, 2, Some(Single))],
            ),
            FunctionalGroup::new(
                "amide",
                vec![atom(6), terminal(8), atom(7)],
                vec![bond(0, 1, Some(Double)), bond(0, 2, Some(Single))],
            ),
            FunctionalGroup::new(
                "nitro",
                vec![
                    PatternAtom {
                        degree: Some(3),
                        ..atom(7)
                    },
                    terminal(8),
                    terminal(8),
                ],
                vec![bond(0, 1, None), bond(0, 2, None)],
            ),
            FunctionalGroup::new(
                "sulfonamide",
                vec![atom(16), terminal(8), terminal(8), atom(7)],
                vec![
                    bond(0, 1, Some(Double)),
                    bond(0, 2, Some(Double)),
                    bond(0, 3, Some(Single)),
                ],
            ),
            FunctionalGroup::new("nitrile", vec![atom(6), terminal(7)], vec![bond(0, 1, Some(Triple))]),
            FunctionalGroup::new("carbonyl", vec![atom(6), terminal(8)], vec![bond(0, 1, Some(Double))]),
            FunctionalGroup::new(
                "azo",
                vec![
                    PatternAtom {
                        degree: Some(2),
                        ..atom(7)
                    },
                    PatternAtom {
                        degree: Some(2),
                        ..atom(7)
                    },
                ],
                vec![bond(0, 1, Some(Double))],
            ),
        ];
        PatternTable { groups }
    }
}

impl PatternTable {
    /// All matches of all groups in `mol`: (group index, atom set).
    pub fn matches(&self, mol: &MolGraph) -> Vec<(usize, Vec<usize>)> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(g, group)| group.find_matches(mol).into_iter().map(move |m| (g, m)))
            .collect()
    }
}

/// Why a fragment was rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rejection {
    Disconnected,
    Valence { atom: usize },
    BrokenAromaticRing { ring: Vec<usize> },
    BrokenFunctionalGroup { group: String },
}

/// Runs every check and reports the first failure.
pub fn check_validity(frag: &Fragment<'_>, patterns: &PatternTable) -> Result<(), Rejection> {
    let mol = frag.mol();
    if !frag.is_connected() {
        return Err(Rejection::Disconnected);
    }
    for &a in frag.atoms() {
        let sum: f64 = mol
            .neighbors(a)
            .iter()
            .filter(|(nb, _)| frag.contains(*nb))
            .map(|&(_, bi)| mol.bonds()[bi].order.value())
            .sum();
        if sum > mol.atom(a).relaxed_valence() {
            return Err(Rejection::Valence { atom: a });
        }
    }
    for ring in mol.aromatic_rings() {
        if partial_overlap(frag, ring) {
            return Err(Rejection::BrokenAromaticRing { ring: ring.clone() });
        }
    }
    for (g, m) in patterns.matches(mol) {
        if partial_overlap(frag, &m) {
            return Err(Rejection::BrokenFunctionalGroup {
                group: patterns.groups[g].name.clone(),
            });
        }
    }
    Ok(())
}

/// Validity predicate with the default pattern table.
pub fn validity_filter(frag: &Fragment<'_>) -> bool {
    check_validity(frag, &PatternTable::default()).is_ok()
}

fn partial_overlap(frag: &Fragment<'_>, set: &[usize]) -> bool {
    let inside = set.iter().filter(|&&a| frag.contains(a)).count();
    inside != 0 && inside != set.len()
}
