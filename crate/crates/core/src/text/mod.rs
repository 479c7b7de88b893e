//! Tokenization, vocabulary, corpus I/O and the synthetic corpus.

pub mod corpus;
pub mod synth;
pub mod tokenizer;
pub mod vocab;

pub use corpus::{ControlledExample, Corpus};
pub use synth::{synth_corpus, SynthSpec};
pub use tokenizer::{detokenize, tokenize};
pub use vocab::{Vocabulary, BOS, EOS, PAD, UNK};
