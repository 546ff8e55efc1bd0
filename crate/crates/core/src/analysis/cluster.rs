//! Circular fingerprints, k-means and normalized mutual information.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::AnalysisError;
use crate::chem::MolGraph;
use crate::wlhash::digest64;

/// Morgan-style fingerprint over `atoms` of `mol` (bonds leaving the set
/// are ignored). Atom invariants are (atomic number, degree within the set,
/// formal charge, aromatic); each round hashes an identifier with its
/// sorted (bond order, neighbor identifier) pairs. Every identifier from
/// radius 0 to `radius` sets bit `id mod n_bits`.
pub fn circular_fingerprint_atoms(mol: &MolGraph, atoms: &[usize], radius: usize, n_bits: usize) -> Vec<bool> {
    let mut local = vec![usize::MAX; mol.n_atoms()];
    for (i, &a) in atoms.iter().enumerate() {
        local[a] = i;
    }
    let neigh: Vec<Vec<(usize, u8)>> = atoms
        .iter()
        .map(|&a| {
            mol.neighbors(a)
                .iter()
                .filter(|&&(b, _)| local[b] != usize::MAX)
                .map(|&(b, bond)| (local[b], mol.bonds()[bond].order.code()))
                .collect()
        })
        .collect();
    let mut ids: Vec<u64> = atoms
        .iter()
        .zip(&neigh)
        .map(|(&a, nb)| {
            let at = mol.atom(a);
            let bytes = [
                at.atomic_number,
                nb.len() as u8,
                at.formal_charge as u8,
                u8::from(at.aromatic),
            ];
            digest64(&bytes)
        })
        .collect();
    let mut bits = vec![false; n_bits];
    let mut set = |ids: &[u64]| ids.iter().for_each(|&id| bits[(id % n_bits as u64) as usize] = true);
    set(&ids);
    for round in 1..=radius {
        let next: Vec<u64> = (0..ids.len())
            .map(|i| {
                let mut env: Vec<(u8, u64)> = neigh[i].iter().map(|&(j, o)| (o, ids[j])).collect();
                env.sort_unstable();
                let mut bytes = Vec::with_capacity(16 + env.len() * 9);
                bytes.extend_from_slice(&(round as u64).to_le_bytes());
                bytes.extend_from_slice(&ids[i].to_le_bytes());
                for (o, id) in env {
                    bytes.push(o);
                    bytes.extend_from_slice(&id.to_le_bytes());
                }
                digest64(&bytes)
            })
            .collect();
        ids = next;
        set(&ids);
    }
    bits
}

/// Fingerprint of a whole molecule.
pub fn circular_fingerprint(mol: &MolGraph, radius: usize, n_bits: usize) -> Vec<bool> {
    let all: Vec<usize> = (0..mol.n_atoms()).collect();
    circular_fingerprint_atoms(mol, &all, radius, n_bits)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's k-means with k-means++ seeding. Returns one cluster label per
/// point; ties go to the lower cluster index.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, iterations: usize) -> Result<Vec<usize>, AnalysisError> {
    let n = points.len();
    if k == 0 || n < k {
        return Err(AnalysisError::TooFewItems {
            needed: k.max(1),
            found: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centers.last().expect("just pushed")));
        }
    }
    let dim = points[0].len();
    let mut labels = vec![0usize; n];
    for it in 0..iterations {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(p, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if it > 0 && !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    Ok(labels)
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `2 I(X;Y) / (H(X) + H(Y))`, defined as 0 when either entropy is 0.
pub fn nmi(x: &[usize], y: &[usize]) -> Result<f64, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::ShapeMismatch(format!(
            "{} vs {} labels",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let n = x.len() as f64;
    let mut cx: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cy: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cxy: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&a, &b) in x.iter().zip(y) {
        *cx.entry(a).or_default() += 1;
        *cy.entry(b).or_default() += 1;
        *cxy.entry((a, b)).or_default() += 1;
    }
    let hx = entropy(cx.values().copied(), n);
    let hy = entropy(cy.values().copied(), n);
    if hx <= 0.0 || hy <= 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (&(a, b), &c) in &cxy {
        let pxy = c as f64 / n;
        mi += pxy * (pxy * n * n / (cx[&a] as f64 * cy[&b] as f64)).ln();
    }
    Ok((2.0 * mi / (hx + hy)).clamp(0.0, 1.0))
}

/// Agreement between clusterings of embeddings and of fingerprints.
#[derive(Debug, Clone, PartialEq)]
pub struct NmiReport {
    pub nmi: f64,
    pub embedding_clusters: Vec<usize>,
    pub fingerprint_clusters: Vec<usize>,
    /// Set when either clustering used fewer than `k` clusters.
    pub degenerate: bool,
}

pub fn cluster_and_nmi(
    embeddings: &[Vec<f64>],
    fingerprints: &[Vec<bool>],
    k: usize,
    seed: u64,
) -> Result<NmiReport, AnalysisError> {
    if embeddings.len() != fingerprints.len() {
        return Err(AnalysisError::ShapeMismatch(format!(
            "{} embeddings vs {} fingerprints",
            embeddings.len(),
            fingerprints.len()
        )));
    }
    let fp: Vec<Vec<f64>> = fingerprints
        .iter()
        .map(|b| b.iter().map(|&x| f64::from(u8::from(x))).collect())
        .collect();
    let x = kmeans(embeddings, k, seed, 50)?;
    let y = kmeans(&fp, k, seed, 50)?;
    let used = |l: &[usize]| l.iter().collect::<std::collections::BTreeSet<_>>().len();
    let degenerate = used(&x) < k || used(&y) < k;
    if degenerate {
        log::warn!(
            "degenerate clustering: {} and {} of {k} clusters used",
            used(&x),
            used(&y)
        );
    }
    Ok(NmiReport {
        nmi: nmi(&x, &y)?,
        embedding_clusters: x,
        fingerprint_clusters: y,
        degenerate,
    })
}
