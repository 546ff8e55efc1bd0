//! The two-scale network and its training procedures.

pub mod config;
mod net;
mod train;

pub use config::{parse_kv, ConfigError, GateKind, ModelConfig, Regime, RunConfig, TrainConfig, DISTANCE_CAP};
pub use net::{encode, encode_batch, ForwardOpts, ForwardOut, Model, MolInput, N_ELEMENT_SLOTS};
pub use train::{
    cls_embeddings, finetune, masked_loss, n_masked, pos_weights, predict, pretrain, pretrain_step,
    sample_mask_positions, sample_positions_by_frequency, stream, sum_gradients, FinetuneError, FinetuneReport,
    MaskedExample, StepLog, TaskData, TaskKind,
};
