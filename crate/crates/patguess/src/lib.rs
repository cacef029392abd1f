//! Pattern-guided password guessing toolkit.
//!
//! Pipeline: clean a leaked-password corpus, split it deterministically,
//! extract character-class patterns, train a next-token model (n-gram or
//! transformer), generate guesses (free, pattern-guided, or via the
//! divide-and-conquer scheduler), and evaluate hit rate, repeat rate, and
//! distribution distances.

pub mod apportion;
pub mod corpus;
pub mod eval;
pub mod generator;
pub mod model;
pub mod pcfg;
pub mod tokenizer;

pub use corpus::{clean, split, CleanPolicy, CleanReport, Corpus, SplitSpec};
pub use eval::{hit_rate, pattern_distance, repeat_rate, DistanceReport, HitReport};
pub use generator::{dcgen, sample_free, sample_guided, DcgenReport, GenConfig};
pub use model::{load_model, save_model, AnyModel, NextTokenModel};
pub use pcfg::{CharClass, Pattern, PatternDistribution};
pub use tokenizer::{TokenId, Vocabulary, DEFAULT_WINDOW, VOCAB_SIZE};
