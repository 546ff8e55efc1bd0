//! Fragment-level molecular modeling.
//!
//! The crate is organized bottom-up:
//!
//! * [`chem`]: SMILES-subset parsing, ring perception and valence features.
//! * [`wlhash`]: Weisfeiler–Lehman identities for fragments.
//! * [`tokenizer`]: graph BPE vocabulary learning, validity filtering and
//!   fallback tokenization.
//! * [`tensor`]: a small reverse-mode autodiff tape, AdamW and checkpoints.
//! * [`model`]: GIN atom encoder, attention pooling, gated fusion and the
//!   structure-biased fragment Transformer with pretraining/fine-tuning.
//! * [`analysis`]: attention rollout, fidelity, token-space geometry,
//!   circular fingerprints with k-means/NMI, and prediction metrics.
//!
//! Batch work (vocabulary candidate counting, tokenization, per-molecule
//! gradients, evaluation) goes through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise.

pub mod analysis;
pub mod chem;
pub mod dataset;
pub mod model;
pub mod par;
pub mod synth;
pub mod tensor;
pub mod tokenizer;
pub mod wlhash;
