//! Token-space geometry of contextual fragment embeddings.

use std::collections::BTreeMap;

use super::AnalysisError;
use crate::model::{ForwardOpts, Model, MolInput};
use crate::par::Exec;
use crate::tensor::Graph;

/// `1 − cos(a, b)`; a zero vector is treated as orthogonal to everything.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - (dot / (na * nb)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenSpaceStats {
    /// Mean cosine distance of occurrences to their token centroid,
    /// averaged over tokens seen at least twice (0 if there are none).
    pub within_spread: f64,
    /// Mean cosine distance over unordered pairs of token centroids.
    pub centroid_separation: f64,
    pub n_tokens: usize,
    pub n_repeated: usize,
}

pub fn token_space_stats(occurrences: &[(u32, Vec<f64>)]) -> Result<TokenSpaceStats, AnalysisError> {
    let mut groups: BTreeMap<u32, Vec<&[f64]>> = BTreeMap::new();
    for (t, v) in occurrences {
        groups.entry(*t).or_default().push(v);
    }
    if groups.len() < 2 {
        return Err(AnalysisError::InsufficientTokens(groups.len()));
    }
    let centroid = |vs: &[&[f64]]| -> Vec<f64> {
        let mut c = vec![0.0; vs[0].len()];
        for v in vs {
            c.iter_mut().zip(*v).for_each(|(s, x)| *s += x);
        }
        c.iter_mut().for_each(|s| *s /= vs.len() as f64);
        c
    };
    let centroids: Vec<Vec<f64>> = groups.values().map(|vs| centroid(vs)).collect();
    let mut spreads = Vec::new();
    for (vs, c) in groups.values().zip(&centroids) {
        if vs.len() >= 2 {
            spreads.push(vs.iter().map(|v| cosine_distance(v, c)).sum::<f64>() / vs.len() as f64);
        }
    }
    let mut sep = 0.0;
    let mut pairs = 0usize;
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            sep += cosine_distance(&centroids[i], &centroids[j]);
            pairs += 1;
        }
    }
    Ok(TokenSpaceStats {
        within_spread: if spreads.is_empty() {
            0.0
        } else {
            spreads.iter().sum::<f64>() / spreads.len() as f64
        },
        centroid_separation: sep / pairs as f64,
        n_tokens: groups.len(),
        n_repeated: spreads.len(),
    })
}

/// Final-layer states of every token occurrence, in molecule order.
pub fn token_states(model: &Model, inputs: &[MolInput], exec: Exec) -> Result<Vec<(u32, Vec<f64>)>, AnalysisError> {
    let per_mol = exec.map(inputs, |input| {
        let mut g = Graph::new(&model.params);
        let masked = vec![false; input.n_tokens()];
        let out = model.forward(
            &mut g,
            input,
            ForwardOpts {
                masked: &masked,
                dropout_rng: None,
            },
        )?;
        let states = g.value(out.states);
        Ok::<_, AnalysisError>(
            input
                .token_ids
                .iter()
                .enumerate()
                .map(|(i, &t)| (t, states.row(i + 1).to_vec()))
                .collect::<Vec<_>>(),
        )
    });
    let mut out = Vec::new();
    for r in per_mol {
        out.extend(r?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_occurrences_and_orthogonal_centroids() {
        let occ = vec![
            (5, vec![1.0, 0.0]),
            (5, vec![1.0, 0.0]),
            (7, vec![0.0, 2.0]),
            (7, vec![0.0, 2.0]),
        ];
        let s = token_space_stats(&occ).unwrap();
        assert!(s.within_spread.abs() < 1e-15);
        assert!((s.centroid_separation - 1.0).abs() < 1e-15);
        assert_eq!(s.n_repeated, 2);
        assert_eq!(token_space_stats(&occ[..2]), Err(AnalysisError::InsufficientTokens(1)));
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine_distance(&[1.0, 1.0], &[2.0, 2.0])).abs() < 1e-15);
        assert!((cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]) - 2.0).abs() < 1e-15);
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]), 1.0);
    }
}
