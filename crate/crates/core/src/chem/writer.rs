use std::fmt::Write;

use super::element;
use super::{Atom, Bond, BondDirection, BondOrder, Chirality, MolGraph};

struct Plan {
    children: Vec<Vec<(usize, usize)>>,
    /// Ring bonds opened at an atom: (bond index).
    opens: Vec<Vec<usize>>,
    /// Ring bonds closed at an atom.
    closes: Vec<Vec<usize>>,
}

pub(super) fn write_smiles(mol: &MolGraph) -> String {
    let n = mol.n_atoms();
    let mut plan = Plan {
        children: vec![Vec::new(); n],
        opens: vec![Vec::new(); n],
        closes: vec![Vec::new(); n],
    };
    let mut visited = vec![false; n];
    let mut seen_bond = vec![false; mol.n_bonds()];
    dfs(mol, 0, &mut visited, &mut seen_bond, &mut plan);

    let mut out = String::new();
    let mut labels: Vec<Option<usize>> = vec![None; mol.n_bonds()];
    let mut in_use: Vec<bool> = Vec::new();
    emit(mol, 0, &plan, &mut labels, &mut in_use, &mut out);
    out
}

fn dfs(mol: &MolGraph, u: usize, visited: &mut [bool], seen_bond: &mut [bool], plan: &mut Plan) {
    visited[u] = true;
    for &(v, bi) in mol.neighbors(u) {
        if seen_bond[bi] {
            continue;
        }
        seen_bond[bi] = true;
        if visited[v] {
            plan.opens[v].push(bi);
            plan.closes[u].push(bi);
        } else {
            plan.children[u].push((v, bi));
            dfs(mol, v, visited, seen_bond, plan);
        }
    }
}

fn emit(mol: &MolGraph, u: usize, plan: &Plan, labels: &mut [Option<usize>], in_use: &mut Vec<bool>, out: &mut String) {
    write_atom(mol.atom(u), out);
    for &bi in &plan.closes[u] {
        let label = labels[bi].take().expect("ring bond opened before closing");
        in_use[label] = false;
        write_label(label, out);
    }
    for &bi in &plan.opens[u] {
        let label = match (1..in_use.len()).find(|&l| !in_use[l]) {
            Some(l) => l,
            None => {
                in_use.resize(in_use.len().max(1) + 1, false);
                in_use.len() - 1
            }
        };
        in_use[label] = true;
        labels[bi] = Some(label);
        let bond = &mol.bonds()[bi];
        write_bond(mol, bond, out);
        write_label(label, out);
    }
    let children = &plan.children[u];
    for (k, &(v, bi)) in children.iter().enumerate() {
        let last = k + 1 == children.len();
        if !last {
            out.push('(');
        }
        write_bond(mol, &mol.bonds()[bi], out);
        emit(mol, v, plan, labels, in_use, out);
        if !last {
            out.push(')');
        }
    }
}

fn write_label(label: usize, out: &mut String) {
    if label < 10 {
        let _ = write!(out, "{label}");
    } else {
        let _ = write!(out, "%{label:02}");
    }
}

fn write_bond(mol: &MolGraph, bond: &Bond, out: &mut String) {
    let both_aromatic = mol.atom(bond.a).aromatic && mol.atom(bond.b).aromatic;
    match (bond.order, bond.direction) {
        (BondOrder::Single, BondDirection::Up) => out.push('/'),
        (BondOrder::Single, BondDirection::Down) => out.push('\\'),
        (BondOrder::Single, _) if both_aromatic => out.push('-'),
        (BondOrder::Single, _) => {}
        (BondOrder::Double, _) => out.push('='),
        (BondOrder::Triple, _) => out.push('#'),
        (BondOrder::Aromatic, _) => {}
    }
}

fn write_atom(atom: &Atom, out: &mut String) {
    let symbol = element::symbol(atom.atomic_number);
    let organic = element::is_organic_subset(atom.atomic_number)
        && atom.formal_charge == 0
        && atom.explicit_h == 0
        && atom.chirality == Chirality::None;
    let sym = if atom.aromatic {
        symbol.to_ascii_lowercase()
    } else {
        symbol.to_string()
    };
    if organic {
        out.push_str(&sym);
        return;
    }
    out.push('[');
    out.push_str(&sym);
    match atom.chirality {
        Chirality::None => {}
        Chirality::Ccw => out.push('@'),
        Chirality::Cw => out.push_str("@@"),
    }
    match atom.explicit_h {
        0 => {}
        1 => out.push('H'),
        h => {
            let _ = write!(out, "H{h}");
        }
    }
    match atom.formal_charge {
        0 => {}
        1 => out.push('+'),
        -1 => out.push('-'),
        c if c > 0 => {
            let _ = write!(out, "+{c}");
        }
        c => {
            let _ = write!(out, "-{}", -c);
        }
    }
    out.push(']');
}
