//! Text form of a fragment, stored in vocabulary files.
//!
//! `c.c.c.c.c.c|0:1,0:5,1:2,2:3,3:4,4:5`: atoms separated by `.` (lowercase
//! symbol for aromatic atoms), then edges `i<bond>j` with bond one of
//! `- = # :`. Atoms are ordered by (final WL label, atomic number, degree,
//! source index); edges by their endpoint ranks.

use crate::chem::{element, BondOrder};
use crate::wlhash::{refine_labels, LabeledGraph, NodeLabel, WL_ITERATIONS};

pub fn serialize(graph: &LabeledGraph) -> String {
    let labels = refine_labels(graph, WL_ITERATIONS);
    let adj = graph.adjacency();
    let mut order: Vec<usize> = (0..graph.nodes.len()).collect();
    order.sort_by_key(|&i| (labels[i], graph.nodes[i].atomic_number, adj[i].len(), i));
    let mut rank = vec![0; order.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let atoms: Vec<String> = order
        .iter()
        .map(|&i| {
            let node = graph.nodes[i];
            let sym = element::symbol(node.atomic_number);
            if node.aromatic {
                sym.to_ascii_lowercase()
            } else {
                sym.to_string()
            }
        })
        .collect();
    let mut edges: Vec<(usize, usize, u8)> = graph
        .edges
        .iter()
        .map(|&(a, b, code)| (rank[a].min(rank[b]), rank[a].max(rank[b]), code))
        .collect();
    edges.sort_unstable();
    let edges: Vec<String> = edges
        .iter()
        .map(|&(a, b, code)| format!("{a}{}{b}", bond_symbol(code)))
        .collect();
    if edges.is_empty() {
        atoms.join(".")
    } else {
        format!("{}|{}", atoms.join("."), edges.join(","))
    }
}

pub fn parse(text: &str) -> Option<LabeledGraph> {
    let (atoms, edges) = match text.split_once('|') {
        Some((a, e)) => (a, Some(e)),
        None => (text, None),
    };
    let mut nodes = Vec::new();
    for sym in atoms.split('.') {
        let aromatic = sym.chars().next()?.is_ascii_lowercase();
        let mut canonical = String::new();
        let mut chars = sym.chars();
        canonical.push(chars.next()?.to_ascii_uppercase());
        canonical.extend(chars);
        let el = element::by_symbol(&canonical)?;
        nodes.push(NodeLabel {
            atomic_number: el.atomic_number,
            aromatic,
        });
    }
    let mut out_edges = Vec::new();
    if let Some(edges) = edges {
        for e in edges.split(',') {
            let pos = e.find(['-', '=', '#', ':'])?;
            let a: usize = e[..pos].parse().ok()?;
            let code = match &e[pos..pos + 1] {
                "-" => 1,
                "=" => 2,
                "#" => 3,
                _ => 4,
            };
            let b: usize = e[pos + 1..].parse().ok()?;
            if a >= nodes.len() || b >= nodes.len() || a == b {
                return None;
            }
            out_edges.push((a, b, code));
        }
    }
    Some(LabeledGraph {
        nodes,
        edges: out_edges,
    })
}

fn bond_symbol(code: u8) -> char {
    match BondOrder::from_code(code) {
        Some(BondOrder::Single) => '-',
        Some(BondOrder::Double) => '=',
        Some(BondOrder::Triple) => '#',
        _ => ':',
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;
    use crate::wlhash::wl_hash_graph;

    #[test]
    fn roundtrip_rehashes() {
        for smi in ["c1ccccc1", "CC(=O)O", "C#N", "Cl", "c1ccncc1CBr"] {
            let mol = parse_smiles(smi).unwrap();
            let g = LabeledGraph::induced(&mol, &(0..mol.n_atoms()).collect::<Vec<_>>());
            let text = serialize(&g);
            let back = parse(&text).unwrap();
            assert_eq!(wl_hash_graph(&g).unwrap(), wl_hash_graph(&back).unwrap(), "{text}");
            assert_eq!(serialize(&back), text);
        }
    }

    #[test]
    fn benzene_text() {
        let mol = parse_smiles("c1ccccc1").unwrap();
        let g = LabeledGraph::induced(&mol, &[0, 1, 2, 3, 4, 5]);
        assert_eq!(serialize(&g), "c.c.c.c.c.c|0:1,0:5,1:2,2:3,3:4,4:5");
        assert!(parse("c.x").is_none());
        assert!(parse("C.C|0-5").is_none());
    }
}
