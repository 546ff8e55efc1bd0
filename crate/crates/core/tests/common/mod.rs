//! Shared fixtures for integration tests.
#![allow(dead_code)]

pub mod oracle;

use molfrag::chem::{parse_smiles, MolGraph};
use molfrag::model::{encode, GateKind, Model, ModelConfig, MolInput, Regime};
use molfrag::tensor::Tensor;
use molfrag::tokenizer::{build_vocab, Tokenizer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SMALL_CORPUS: &[&str] = &[
    "CC(=O)Oc1ccccc1C(=O)O",
    "CCN(CC)CCOC(=O)c1ccc(N)cc1",
    "c1ccc2ccccc2c1",
    "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
    "OCC(O)CO",
    "C1CCNCC1",
    "CC#N",
    "O=C(N)c1ccncc1",
    "CCOC(=O)C",
    "ClCCCl",
    "FC(F)(F)c1ccccc1",
    "CS(=O)(=O)N",
];

pub fn mols(smiles: &[&str]) -> Vec<MolGraph> {
    smiles.iter().map(|s| parse_smiles(s).unwrap()).collect()
}

pub fn small_tokenizer(target: usize) -> Tokenizer {
    let (v, h) = build_vocab(&mols(SMALL_CORPUS), target).unwrap();
    Tokenizer::new(v, h)
}

pub fn tiny_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        hidden_dim: 8,
        gin_layers: 2,
        transformer_layers: 2,
        heads: 2,
        ffn_dim: 16,
        dropout: 0.0,
        regime: Regime::Fragment,
        gate: GateKind::Elementwise,
        mask_ratio: 0.2,
        vocab_size,
    }
}

/// Adds noise to every parameter so zero-initialized tables (structural
/// biases, masked-token head) are exercised.
pub fn perturb(model: &mut Model, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<usize> = model.params.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        for x in &mut model.params.get_mut(id).data {
            *x += rng.random_range(-scale..scale);
        }
    }
}

pub fn set_param(model: &mut Model, name: &str, value: Tensor) {
    let id = model.params.id(name).unwrap_or_else(|| panic!("no parameter {name}"));
    assert_eq!(model.params.get(id).shape(), value.shape(), "{name}");
    *model.params.get_mut(id) = value;
}

pub fn encode_all(smiles: &[&str], tok: &Tokenizer, regime: Regime) -> Vec<MolInput> {
    mols(smiles).iter().map(|m| encode(m, tok, regime)).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
