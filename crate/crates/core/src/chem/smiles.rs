use std::collections::BTreeMap;

use super::element;
use super::{Atom, Bond, BondDirection, BondOrder, ChemError, Chirality, MolGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BondSym {
    Single,
    Double,
    Triple,
    Aromatic,
    Up,
    Down,
}

struct PendingRing {
    atom: usize,
    bond: Option<BondSym>,
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    /// Bonds whose order was inferred from two aromatic endpoints.
    implicit_aromatic: Vec<bool>,
    rings: BTreeMap<u32, PendingRing>,
}

/// Parses a SMILES string from the supported subset into a [`MolGraph`].
///
/// Supported: organic-subset and bracket atoms (isotope ignored, chirality,
/// hydrogen count, charge, atom class ignored), branches, ring closures
/// (`0-9`, `%nn`), bond symbols `- = # : / \` and lowercase aromatics.
pub fn parse_smiles(text: &str) -> Result<MolGraph, ChemError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(ChemError::Empty);
    }
    let mut parser = Parser {
        bytes: text.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        implicit_aromatic: Vec::new(),
        rings: BTreeMap::new(),
    };
    parser.run()?;
    let Parser {
        atoms,
        mut bonds,
        implicit_aromatic,
        ..
    } = parser;

    let mol = MolGraph::from_parts(atoms.clone(), bonds.clone())?;
    // An implicit bond between two aromatic atoms that lies on no ring
    // (biphenyl written without `-`) is a single bond.
    if implicit_aromatic.iter().any(|&f| f) {
        let mut on_ring = vec![false; bonds.len()];
        for ring in mol.rings() {
            for k in 0..ring.len() {
                let (a, b) = (ring[k], ring[(k + 1) % ring.len()]);
                if let Some(&(_, bi)) = mol.neighbors(a).iter().find(|&&(n, _)| n == b) {
                    on_ring[bi] = true;
                }
            }
        }
        let mut changed = false;
        for (i, bond) in bonds.iter_mut().enumerate() {
            if implicit_aromatic[i] && !on_ring[i] {
                bond.order = BondOrder::Single;
                changed = true;
            }
        }
        if changed {
            return MolGraph::from_parts(atoms, bonds);
        }
    }
    Ok(mol)
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn syntax(&self, msg: impl Into<String>) -> ChemError {
        ChemError::Syntax {
            pos: self.pos,
            msg: msg.into(),
        }
    }

    fn run(&mut self) -> Result<(), ChemError> {
        let mut prev: Option<usize> = None;
        let mut branch_stack: Vec<(Option<usize>, usize)> = Vec::new();
        let mut pending_bond: Option<BondSym> = None;

        while let Some(c) = self.peek() {
            match c {
                b'(' => {
                    if prev.is_none() || pending_bond.is_some() {
                        return Err(self.syntax("branch without preceding atom"));
                    }
                    branch_stack.push((prev, self.pos));
                    self.pos += 1;
                }
                b')' => {
                    let Some((p, _)) = branch_stack.pop() else {
                        return Err(ChemError::UnbalancedParenthesis(self.pos));
                    };
                    if pending_bond.is_some() {
                        return Err(self.syntax("dangling bond before `)`"));
                    }
                    prev = p;
                    self.pos += 1;
                }
                b'.' => return Err(ChemError::MultipleComponents),
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if pending_bond.is_some() {
                        return Err(self.syntax("consecutive bond symbols"));
                    }
                    pending_bond = Some(match c {
                        b'-' => BondSym::Single,
                        b'=' => BondSym::Double,
                        b'#' => BondSym::Triple,
                        b':' => BondSym::Aromatic,
                        b'/' => BondSym::Up,
                        _ => BondSym::Down,
                    });
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => {
                    let Some(atom) = prev else {
                        return Err(self.syntax("ring closure without atom"));
                    };
                    let label = self.ring_label()?;
                    let bond = pending_bond.take();
                    self.ring_closure(atom, label, bond)?;
                }
                _ => {
                    let atom = self.atom()?;
                    let index = self.atoms.len();
                    self.atoms.push(atom);
                    if let Some(p) = prev {
                        self.add_bond(p, index, pending_bond.take())?;
                    } else if pending_bond.is_some() {
                        return Err(self.syntax("bond without preceding atom"));
                    }
                    prev = Some(index);
                }
            }
        }
        if let Some(&(_, pos)) = branch_stack.last() {
            return Err(ChemError::UnbalancedParenthesis(pos));
        }
        if pending_bond.is_some() {
            return Err(self.syntax("dangling bond at end of input"));
        }
        if let Some((&label, _)) = self.rings.iter().next() {
            return Err(ChemError::UnbalancedRingClosure(label));
        }
        if self.atoms.is_empty() {
            return Err(ChemError::Empty);
        }
        Ok(())
    }

    fn ring_label(&mut self) -> Result<u32, ChemError> {
        let c = self.peek().unwrap();
        if c == b'%' {
            let digits = self.bytes.get(self.pos + 1..self.pos + 3);
            match digits {
                Some(d) if d.iter().all(u8::is_ascii_digit) => {
                    self.pos += 3;
                    Ok(((d[0] - b'0') * 10 + (d[1] - b'0')) as u32)
                }
                _ => Err(self.syntax("`%` must be followed by two digits")),
            }
        } else {
            self.pos += 1;
            Ok((c - b'0') as u32)
        }
    }

    fn ring_closure(&mut self, atom: usize, label: u32, bond: Option<BondSym>) -> Result<(), ChemError> {
        match self.rings.remove(&label) {
            None => {
                self.rings.insert(label, PendingRing { atom, bond });
                Ok(())
            }
            Some(open) => {
                let sym = match (open.bond, bond) {
                    (Some(a), Some(b)) if a != b && !is_direction(a) && !is_direction(b) => {
                        return Err(self.syntax("conflicting ring-closure bonds"));
                    }
                    (Some(a), _) => Some(a),
                    (None, b) => b,
                };
                if open.atom == atom {
                    return Err(self.syntax("ring closure onto the same atom"));
                }
                self.add_bond(open.atom, atom, sym)
            }
        }
    }

    fn add_bond(&mut self, a: usize, b: usize, sym: Option<BondSym>) -> Result<(), ChemError> {
        if self.bonds.iter().any(|bd| bd.key() == (a.min(b), a.max(b))) {
            return Err(ChemError::DuplicateBond(a.min(b), a.max(b)));
        }
        let both_aromatic = self.atoms[a].aromatic && self.atoms[b].aromatic;
        let (order, direction, implicit) = match sym {
            None if both_aromatic => (BondOrder::Aromatic, BondDirection::None, true),
            None => (BondOrder::Single, BondDirection::None, false),
            Some(BondSym::Single) => (BondOrder::Single, BondDirection::None, false),
            Some(BondSym::Double) => (BondOrder::Double, BondDirection::None, false),
            Some(BondSym::Triple) => (BondOrder::Triple, BondDirection::None, false),
            Some(BondSym::Aromatic) => (BondOrder::Aromatic, BondDirection::None, false),
            Some(BondSym::Up) => (BondOrder::Single, BondDirection::Up, false),
            Some(BondSym::Down) => (BondOrder::Single, BondDirection::Down, false),
        };
        self.bonds.push(Bond { a, b, order, direction });
        self.implicit_aromatic.push(implicit);
        Ok(())
    }

    fn atom(&mut self) -> Result<Atom, ChemError> {
        let c = self.peek().unwrap();
        if c == b'[' {
            return self.bracket_atom();
        }
        let rest = &self.bytes[self.pos..];
        let (symbol, aromatic, len) = if rest.starts_with(b"Cl") {
            ("Cl", false, 2)
        } else if rest.starts_with(b"Br") {
            ("Br", false, 2)
        } else {
            match c {
                b'B' => ("B", false, 1),
                b'C' => ("C", false, 1),
                b'N' => ("N", false, 1),
                b'O' => ("O", false, 1),
                b'P' => ("P", false, 1),
                b'S' => ("S", false, 1),
                b'F' => ("F", false, 1),
                b'I' => ("I", false, 1),
                b'b' => ("B", true, 1),
                b'c' => ("C", true, 1),
                b'n' => ("N", true, 1),
                b'o' => ("O", true, 1),
                b'p' => ("P", true, 1),
                b's' => ("S", true, 1),
                c if c.is_ascii_alphabetic() || c == b'*' => {
                    let end = rest
                        .iter()
                        .skip(1)
                        .position(|b| !b.is_ascii_lowercase())
                        .map_or(rest.len(), |p| p + 1);
                    let sym = String::from_utf8_lossy(&rest[..end.min(2)]).into_owned();
                    return Err(ChemError::UnsupportedElement(sym));
                }
                _ => return Err(self.syntax(format!("unexpected `{}`", c as char))),
            }
        };
        self.pos += len;
        let el = element::by_symbol(symbol).expect("organic subset is in the table");
        Ok(Atom {
            aromatic,
            ..Atom::new(el.atomic_number)
        })
    }

    fn bracket_atom(&mut self) -> Result<Atom, ChemError> {
        let start = self.pos;
        let end = self.bytes[start..]
            .iter()
            .position(|&b| b == b']')
            .map(|p| start + p)
            .ok_or_else(|| self.syntax("unterminated bracket atom"))?;
        let body = &self.bytes[start + 1..end];
        let mut i = 0;
        // Isotope: parsed and dropped.
        while i < body.len() && body[i].is_ascii_digit() {
            i += 1;
        }
        let sym_start = i;
        if i >= body.len() {
            return Err(self.syntax("bracket atom without element"));
        }
        let (z, aromatic) = if body[i].is_ascii_uppercase() {
            i += 1;
            if i < body.len() && body[i].is_ascii_lowercase() {
                let two = std::str::from_utf8(&body[sym_start..i + 1]).unwrap_or("");
                if element::by_symbol(two).is_some() {
                    i += 1;
                }
            }
            let sym = std::str::from_utf8(&body[sym_start..i]).unwrap_or("");
            // A trailing lowercase letter that did not form a known element is
            // an unknown two-letter symbol such as `Se` or `Na`.
            if i < body.len() && body[i].is_ascii_lowercase() {
                let unknown = std::str::from_utf8(&body[sym_start..i + 1]).unwrap_or("?");
                return Err(ChemError::UnsupportedElement(unknown.to_string()));
            }
            let el = element::by_symbol(sym).ok_or_else(|| ChemError::UnsupportedElement(sym.to_string()))?;
            (el.atomic_number, false)
        } else if body[i].is_ascii_lowercase() {
            let rest = &body[i..];
            let (sym, len) = if rest.starts_with(b"se") {
                ("Se", 2)
            } else if rest.starts_with(b"as") {
                ("As", 2)
            } else {
                match rest[0] {
                    b'b' => ("B", 1),
                    b'c' => ("C", 1),
                    b'n' => ("N", 1),
                    b'o' => ("O", 1),
                    b'p' => ("P", 1),
                    b's' => ("S", 1),
                    other => return Err(ChemError::UnsupportedElement((other as char).to_string())),
                }
            };
            i += len;
            let el = element::by_symbol(sym).ok_or_else(|| ChemError::UnsupportedElement(sym.to_string()))?;
            (el.atomic_number, true)
        } else if body[i] == b'*' {
            return Err(ChemError::UnsupportedElement("*".into()));
        } else {
            return Err(self.syntax("bad bracket atom"));
        };

        let mut atom = Atom {
            aromatic,
            ..Atom::new(z)
        };
        if i < body.len() && body[i] == b'@' {
            i += 1;
            if i < body.len() && body[i] == b'@' {
                i += 1;
                atom.chirality = Chirality::Cw;
            } else {
                atom.chirality = Chirality::Ccw;
            }
        }
        if i < body.len() && body[i] == b'H' {
            i += 1;
            let mut n = 0u32;
            let mut any = false;
            while i < body.len() && body[i].is_ascii_digit() {
                n = n * 10 + (body[i] - b'0') as u32;
                i += 1;
                any = true;
            }
            atom.explicit_h = if any { n.min(255) as u8 } else { 1 };
        }
        if i < body.len() && (body[i] == b'+' || body[i] == b'-') {
            let sign: i32 = if body[i] == b'+' { 1 } else { -1 };
            let ch = body[i];
            i += 1;
            let mut magnitude = 1i32;
            if i < body.len() && body[i].is_ascii_digit() {
                magnitude = 0;
                while i < body.len() && body[i].is_ascii_digit() {
                    magnitude = magnitude * 10 + (body[i] - b'0') as i32;
                    i += 1;
                }
            } else {
                while i < body.len() && body[i] == ch {
                    magnitude += 1;
                    i += 1;
                }
            }
            atom.formal_charge = (sign * magnitude).clamp(-8, 8) as i8;
        }
        if i < body.len() && body[i] == b':' {
            i += 1;
            while i < body.len() && body[i].is_ascii_digit() {
                i += 1;
            }
        }
        if i != body.len() {
            self.pos = start + 1 + i;
            return Err(self.syntax("unsupported bracket-atom content"));
        }
        self.pos = end + 1;
        Ok(atom)
    }
}

fn is_direction(s: BondSym) -> bool {
    matches!(s, BondSym::Up | BondSym::Down)
}
