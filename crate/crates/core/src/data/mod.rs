//! Dataset ingestion: SQuAD v1.1 JSON, GloVe-style embedding files, the
//! synthetic key–value task, exploratory statistics and padded batching.

mod batch;
pub mod chars;
mod example;
mod squad;
mod stats;
mod synthetic;
mod tokenize;
mod vocab;

pub use batch::{batch, batch_in_order, ItemView, PaddedBatch, SequenceView};
pub use example::{read_jsonl, write_jsonl, Example};
pub use squad::{load_squad, parse_squad, LoadedSquad};
pub use stats::{compute_stats, question_type, DatasetStats, OTHER_TYPE, QUESTION_TYPES};
pub use synthetic::{make_synthetic, synthetic_tokens, SyntheticSpec};
pub use tokenize::{is_punctuation, tokenize, Token};
pub use vocab::{load_embeddings, parse_embeddings, EmbeddingLoad, Vocab, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};
