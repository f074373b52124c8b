//! Synthetic potentially-idiomatic-expression corpus: lexicon generation,
//! sentence synthesis with sense-correlated context cues, and the train/test
//! containment guarantee.

pub mod generate;
pub mod lexicon;
pub mod vocab;

pub use generate::{generate_corpus, generate_pie_free_sentences, Corpus, CorpusParams};
pub use lexicon::{generate_lexicon, PieLexiconEntry};
pub use vocab::VocabLayout;

use alloc::vec::Vec;

/// Whether the PIE of a sentence is used figuratively or literally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Sense {
    Idiomatic,
    Literal,
}

impl Sense {
    pub fn as_str(self) -> &'static str {
        match self {
            Sense::Idiomatic => "idiomatic",
            Sense::Literal => "literal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "idiomatic" => Some(Sense::Idiomatic),
            "literal" => Some(Sense::Literal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// One training or evaluation sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceRecord {
    pub sentence_id: u64,
    pub tokens: Vec<u32>,
    pub pie_id: u32,
    /// Half-open token interval of the PIE surface.
    pub span: (usize, usize),
    pub sense: Sense,
    pub split: Split,
}

impl SentenceRecord {
    pub fn span_tokens(&self) -> &[u32] {
        &self.tokens[self.span.0..self.span.1]
    }
}

/// Generation parameters echoed into the manifest; regeneration from these
/// fields reproduces the corpus bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub n_pies: usize,
    pub n_groups: usize,
    pub vocab_size: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub idiomatic_fraction_target: f64,
    pub idiomatic_fraction_achieved: f64,
}

pub const SCHEMA_VERSION: u32 = 1;
