//! Text side of the pipeline: vocabulary, WordPiece tokenization, and
//! whole-word masking for MLM target construction.

pub mod masking;
pub mod tokenize;
pub mod vocab;

pub use masking::{subword_mask, whole_word_mask, word_outcomes, WordOutcome};
pub use tokenize::{detokenize, split_words, tokenize, TokenBatch, TokenRow, IGNORE_LABEL, NO_WORD};
pub use vocab::{SpecialTokens, Vocabulary};
