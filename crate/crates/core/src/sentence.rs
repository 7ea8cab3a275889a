//! Sentences, deletion-path records and search configuration.
//!
//! A sentence in the deletion graph is never stored as text. Every node is a
//! strictly increasing list of indices into an immutable [`RootSentence`], so
//! subsequence and conservation properties can be checked by integer
//! arithmetic alone.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The original, whitespace-pretokenized sentence. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RootSentence {
    id: String,
    tokens: Vec<String>,
}

impl RootSentence {
    pub fn new(id: impl Into<String>, tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptySentence);
        }
        for (index, token) in tokens.iter().enumerate() {
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(Error::InvalidToken {
                    index,
                    token: token.clone(),
                });
            }
        }
        Ok(Self {
            id: id.into(),
            tokens,
        })
    }

    /// Splits `text` on whitespace, optionally lowercasing every token.
    pub fn from_text(id: impl Into<String>, text: &str, lowercase: bool) -> Result<Self> {
        Self::new(id, tokenize(text, lowercase))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token texts at the given root indices.
    pub fn select<'a>(&'a self, indices: &[usize]) -> Vec<&'a str> {
        indices.iter().map(|&i| self.tokens[i].as_str()).collect()
    }
}

pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            if lowercase {
                t.to_lowercase()
            } else {
                t.to_string()
            }
        })
        .collect()
}

/// Root sentence plus the frozen index set resolved against it.
#[derive(Debug)]
pub struct ResolvedRoot {
    pub root: RootSentence,
    pub frozen: BTreeSet<usize>,
    /// Non-fatal problems, e.g. a frozen word that does not occur.
    pub warnings: Vec<Error>,
}

/// Builds a root and resolves frozen tokens.
///
/// Text entries freeze every occurrence of that token; index entries freeze
/// exactly that position. A text entry that matches nothing is a warning
/// unless `strict` is set.
pub fn make_root(
    id: impl Into<String>,
    tokens: Vec<String>,
    frozen_texts: &[String],
    frozen_indices: &[usize],
    strict: bool,
) -> Result<ResolvedRoot> {
    let root = RootSentence::new(id, tokens)?;
    let mut frozen = BTreeSet::new();
    let mut warnings = Vec::new();

    for text in frozen_texts {
        let mut matched = false;
        for (i, token) in root.tokens.iter().enumerate() {
            if token == text {
                frozen.insert(i);
                matched = true;
            }
        }
        if !matched {
            let err = Error::FrozenNotFound(text.clone());
            if strict {
                return Err(err);
            }
            warnings.push(err);
        }
    }
    for &index in frozen_indices {
        if index >= root.len() {
            return Err(Error::FrozenOutOfRange {
                index,
                len: root.len(),
            });
        }
        frozen.insert(index);
    }
    Ok(ResolvedRoot {
        root,
        frozen,
        warnings,
    })
}

/// NLL totals behind a node's AvgPPL.
///
/// `kept_nll_sum` is scored in the current sentence, `deleted_nll_sum` in the
/// root sentence. The exponent is always normalized by the root length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub kept_nll_sum: f64,
    pub deleted_nll_sum: f64,
    pub kept_len: usize,
    pub root_len: usize,
    pub avgppl: f64,
}

impl ScoreBreakdown {
    pub fn from_sums(
        kept_nll_sum: f64,
        deleted_nll_sum: f64,
        kept_len: usize,
        root_len: usize,
    ) -> Self {
        assert!(kept_len <= root_len && root_len > 0);
        let avgppl = ((kept_nll_sum + deleted_nll_sum) / root_len as f64).exp();
        Self {
            kept_nll_sum,
            deleted_nll_sum,
            kept_len,
            root_len,
            avgppl,
        }
    }

    pub fn deleted_len(&self) -> usize {
        self.root_len - self.kept_len
    }
}

/// A node of the deletion DAG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathNode {
    /// Strictly increasing root indices still present.
    pub kept: Vec<usize>,
    pub score: ScoreBreakdown,
}

impl PathNode {
    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    pub fn tokens<'a>(&self, root: &'a RootSentence) -> Vec<&'a str> {
        root.select(&self.kept)
    }

    /// Root indices no longer present, ascending.
    pub fn deleted(&self, root_len: usize) -> Vec<usize> {
        complement(&self.kept, root_len)
    }
}

/// Ascending indices in `0..len` that are absent from the sorted `kept`.
pub fn complement(kept: &[usize], len: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(len.saturating_sub(kept.len()));
    let mut it = kept.iter().peekable();
    for i in 0..len {
        if it.peek() == Some(&&i) {
            it.next();
        } else {
            out.push(i);
        }
    }
    out
}

/// One edge of a deletion path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionStep {
    /// Position of the span in the parent's kept sequence.
    pub span_start: usize,
    pub span_len: usize,
    pub removed_root_indices: Vec<usize>,
    pub lookahead_used: usize,
    pub result: PathNode,
    pub penalized_score: f64,
    pub passed_threshold: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Termination {
    /// No candidate at any lookahead level passed the threshold.
    ThresholdExhausted,
    TokenFloor,
    CrBound,
    StepLimit,
    /// No legal candidate remained (everything left is frozen).
    Exhausted,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::ThresholdExhausted => "ThresholdExhausted",
            Termination::TokenFloor => "TokenFloor",
            Termination::CrBound => "CrBound",
            Termination::StepLimit => "StepLimit",
            Termination::Exhausted => "Exhausted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionPath {
    pub root: RootSentence,
    pub frozen: BTreeSet<usize>,
    pub root_node: PathNode,
    pub steps: Vec<DeletionStep>,
    pub terminated_by: Termination,
    /// Index into [`DeletionPath::nodes`] of the selected compression.
    pub selected: usize,
    /// Set when `max_cr` was configured and no node on the path met it.
    pub max_cr_unmet: bool,
}

impl DeletionPath {
    /// Root followed by every step's result.
    pub fn nodes(&self) -> impl Iterator<Item = &PathNode> {
        std::iter::once(&self.root_node).chain(self.steps.iter().map(|s| &s.result))
    }

    pub fn node(&self, index: usize) -> &PathNode {
        if index == 0 {
            &self.root_node
        } else {
            &self.steps[index - 1].result
        }
    }

    pub fn last_node(&self) -> &PathNode {
        self.node(self.steps.len())
    }

    pub fn selected_node(&self) -> &PathNode {
        self.node(self.selected)
    }

    pub fn selected_tokens(&self) -> Vec<&str> {
        self.selected_node().tokens(&self.root)
    }

    /// Checks the structural invariants: subsequence chain, conservation,
    /// contiguity of removed spans, and step replay.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let root_len = self.root.len();
        if self.root_node.kept != (0..root_len).collect::<Vec<_>>() {
            return Err("root node does not keep every token".into());
        }
        if self.root_node.score.deleted_nll_sum != 0.0 {
            return Err("root node has a non-zero deleted term".into());
        }
        let mut replay: Vec<usize> = self.root_node.kept.clone();
        for (i, step) in self.steps.iter().enumerate() {
            if step.span_len == 0 || step.span_start + step.span_len > replay.len() {
                return Err(format!("step {i}: span out of range"));
            }
            if replay[step.span_start..step.span_start + step.span_len]
                != step.removed_root_indices[..]
            {
                return Err(format!("step {i}: removed indices are not the parent span"));
            }
            if step
                .removed_root_indices
                .iter()
                .any(|r| self.frozen.contains(r))
            {
                return Err(format!("step {i}: removes a frozen index"));
            }
            let before = replay.len();
            replay.drain(step.span_start..step.span_start + step.span_len);
            if replay != step.result.kept {
                return Err(format!("step {i}: replay differs from recorded node"));
            }
            if step.result.len() != before - step.span_len {
                return Err(format!("step {i}: length did not shrink by span_len"));
            }
            let s = &step.result.score;
            if s.kept_len != step.result.len() || s.root_len != root_len {
                return Err(format!("step {i}: score breakdown counts disagree"));
            }
        }
        if self.selected > self.steps.len() {
            return Err("selected index past end of path".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyMode {
    /// Multiply by `span_len^beta`.
    #[default]
    SpanLength,
    /// Multiply by `parent_len^beta`, uniform across a step.
    CurrentLength,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationMode {
    /// Stop once no candidate passes the threshold.
    #[default]
    Terminate,
    /// Keep deleting down to the token floor.
    FullPath,
}

/// Search hyperparameters and constraints. Logarithms are natural.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub alpha: f64,
    pub beta: f64,
    pub max_lookahead: usize,
    pub penalty_mode: PenaltyMode,
    pub termination_mode: TerminationMode,
    pub frozen_root_indices: BTreeSet<usize>,
    pub min_cr: Option<f64>,
    pub max_cr: Option<f64>,
    pub min_tokens: usize,
    pub step_limit: Option<usize>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            alpha: 0.04,
            beta: 0.04,
            max_lookahead: 3,
            penalty_mode: PenaltyMode::SpanLength,
            termination_mode: TerminationMode::Terminate,
            frozen_root_indices: BTreeSet::new(),
            min_cr: None,
            max_cr: None,
            min_tokens: 1,
            step_limit: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad(format!("beta must be finite and >= 0, got {}", self.beta));
        }
        if self.max_lookahead == 0 {
            return bad("max_lookahead must be >= 1".into());
        }
        if self.min_tokens == 0 {
            return bad("min_tokens must be >= 1".into());
        }
        for (name, value) in [("min_cr", self.min_cr), ("max_cr", self.max_cr)] {
            if let Some(v) = value {
                if !(v > 0.0 && v <= 1.0) {
                    return bad(format!("{name} must lie in (0, 1], got {v}"));
                }
            }
        }
        if let (Some(lo), Some(hi)) = (self.min_cr, self.max_cr) {
            if lo > hi {
                return bad(format!("min_cr {lo} exceeds max_cr {hi}"));
            }
        }
        Ok(())
    }

    /// Smallest token count allowed by `min_cr` alone.
    pub fn cr_floor(&self, root_len: usize) -> usize {
        self.min_cr
            .map(|cr| (cr * root_len as f64).ceil() as usize)
            .unwrap_or(0)
    }

    /// Smallest token count any node may have.
    pub fn length_floor(&self, root_len: usize) -> usize {
        self.min_tokens.max(self.cr_floor(root_len))
    }

    pub fn fits_max_cr(&self, len: usize, root_len: usize) -> bool {
        self.max_cr
            .is_none_or(|cr| len as f64 <= cr * root_len as f64)
    }
}
