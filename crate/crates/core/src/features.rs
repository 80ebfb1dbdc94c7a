//! Per-token indicator features appended to the subword embeddings.

use crate::tokenizer::TokenSequence;

pub const FEATURE_DIM: usize = 5;
pub const LENGTH_CLAMP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenFeatures {
    pub is_alphanumeric: bool,
    pub is_numeric: bool,
    pub is_word_start: bool,
    pub char_length: usize,
    pub slot_requested: bool,
}

impl TokenFeatures {
    /// `[alnum, numeric, word_start, min(len, 20) / 20, requested]`
    pub fn to_vector(&self) -> [f64; FEATURE_DIM] {
        let b = |x: bool| if x { 1.0 } else { 0.0 };
        [
            b(self.is_alphanumeric),
            b(self.is_numeric),
            b(self.is_word_start),
            self.char_length.min(LENGTH_CLAMP) as f64 / LENGTH_CLAMP as f64,
            b(self.slot_requested),
        ]
    }
}

pub fn featurize(tokens: &TokenSequence, slot_requested: bool) -> Vec<TokenFeatures> {
    tokens
        .tokens
        .iter()
        .map(|t| {
            let surface = t.surface();
            let nonempty = !surface.is_empty();
            TokenFeatures {
                is_alphanumeric: nonempty && surface.chars().all(char::is_alphanumeric),
                is_numeric: nonempty && surface.chars().all(char::is_numeric),
                is_word_start: t.word_start,
                char_length: t.char_len(),
                slot_requested,
            }
        })
        .collect()
}
