//! Unsupervised extractive sentence compression.
//!
//! A sentence is compressed by walking a deletion path: starting from the
//! full sentence, each step removes one contiguous span of up to
//! `max_lookahead` tokens, chosen by a progressive lookahead greedy search
//! that scores every candidate with an average-perplexity objective from a
//! pluggable masked-LM [`TokenScorer`].
//!
//! ```
//! use delpath_core::{compress, RootSentence, SearchConfig};
//! use delpath_core::scoring::fixture::HashContextScorer;
//!
//! let root = RootSentence::from_text("s1", "i work work at a company .", true).unwrap();
//! let path = compress(&root, &SearchConfig::default(), &HashContextScorer).unwrap();
//! assert!(path.selected_node().len() <= root.len());
//! ```

pub mod client;
pub mod error;
pub mod eval;
pub mod records;
pub mod scoring;
pub mod search;
pub mod sentence;

pub use error::{Error, Result, ScorerError};
pub use eval::{compression_ratio, token_f1, CompressionPair, EvalReport, F1Mode};
pub use records::{NodeRecord, PathRecord};
pub use scoring::{avgppl, ScoreCache, TokenScorer};
pub use search::{
    compress, compress_batch, compress_with, probe_step, Job, SearchFailure, Searcher,
};
pub use sentence::{
    make_root, DeletionPath, DeletionStep, PathNode, PenaltyMode, RootSentence, ScoreBreakdown,
    SearchConfig, Termination, TerminationMode,
};
