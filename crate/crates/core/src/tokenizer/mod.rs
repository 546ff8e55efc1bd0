//! Fragment vocabulary learning, validity filtering and tokenization.

pub mod bpe;
pub mod encode;
pub mod filter;
pub mod fraggraph;
pub mod repr;
mod state;
pub mod vocab;

pub use bpe::{build_vocab, build_vocab_with, BuildError, BuildOptions, BuildOutput, Round};
pub use encode::{fallback_rate, stats_csv, unk_rate, StatsError, StatsRow, TokenSeq, Tokenizer};
pub use filter::{check_validity, validity_filter, FunctionalGroup, PatternTable, Rejection};
pub use fraggraph::{build_frag_graph, FragGraph, DIST_CAP};
pub use vocab::{
    EntryKind, MergeHistory, MergeRule, Vocab, VocabEntry, VocabIoError, VocabMeta, CLS_ID, MASK_ID, N_SPECIAL, PAD_ID,
    UNK_ID,
};
