//! Progressive lookahead greedy search over the deletion DAG.
//!
//! Each step probes contiguous deletions of one token first. A candidate
//! passes when its penalized AvgPPL is at most `1 + alpha * ln(L_root)` times
//! the parent's AvgPPL. Only when no candidate of length `l` passes are spans
//! of length `l + 1` scored, up to `max_lookahead`. The passing candidate with
//! the lowest penalized score wins; ties go to the shorter, then leftmost,
//! span.
//!
//! The penalty multiplier is used for ranking and the threshold test only.
//! Nodes store the unpenalized AvgPPL, which is what the next step's ratio is
//! taken against.

use std::cmp::Ordering;

use rayon::prelude::*;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::scoring::{breakdown, ScoreCache, TokenScorer};
use crate::sentence::{
    complement, DeletionPath, DeletionStep, PathNode, PenaltyMode, RootSentence, SearchConfig,
    Termination, TerminationMode,
};

/// Maximum allowed ratio of candidate to parent AvgPPL.
pub fn threshold(alpha: f64, root_len: usize) -> f64 {
    1.0 + alpha * (root_len as f64).ln()
}

/// True when the candidate is not above the threshold. The boundary passes.
pub fn passes(parent_avgppl: f64, candidate_penalized: f64, threshold: f64) -> bool {
    candidate_penalized / parent_avgppl <= threshold
}

pub fn penalty_multiplier(span_len: usize, parent_len: usize, beta: f64, mode: PenaltyMode) -> f64 {
    match mode {
        PenaltyMode::SpanLength => (span_len as f64).powf(beta),
        PenaltyMode::CurrentLength => (parent_len as f64).powf(beta),
        PenaltyMode::Off => 1.0,
    }
}

pub fn penalize(
    candidate_avgppl: f64,
    span_len: usize,
    parent_len: usize,
    beta: f64,
    mode: PenaltyMode,
) -> f64 {
    candidate_avgppl * penalty_multiplier(span_len, parent_len, beta, mode)
}

/// Relative difference below which two scores count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Compares scores, treating values within [`TIE_TOLERANCE`] as equal.
/// Summing the same NLLs in a different order can differ in the last bit.
pub fn score_cmp(a: f64, b: f64) -> Ordering {
    if (a - b).abs() <= TIE_TOLERANCE * a.abs().max(b.abs()) {
        Ordering::Equal
    } else {
        a.total_cmp(&b)
    }
}

/// Ordering used to pick a winner: penalized score, then span length, then
/// span start.
pub fn candidate_order(a: &DeletionStep, b: &DeletionStep) -> Ordering {
    score_cmp(a.penalized_score, b.penalized_score)
        .then(a.span_len.cmp(&b.span_len))
        .then(a.span_start.cmp(&b.span_start))
}

/// All candidates probed at one lookahead length.
#[derive(Debug, Clone)]
pub struct StepProbe {
    pub parent: PathNode,
    pub lookahead: usize,
    pub candidates: Vec<DeletionStep>,
}

#[derive(Debug, Clone)]
pub struct ProbeOutcome {
    pub chosen: Option<DeletionStep>,
    pub probes: Vec<StepProbe>,
}

impl ProbeOutcome {
    /// No legal candidate existed at any lookahead length.
    pub fn exhausted(&self) -> bool {
        self.probes.iter().all(|p| p.candidates.is_empty())
    }
}

/// A search that failed part-way, with whatever path had been built.
#[derive(Debug, Error)]
#[error("search failed after {} step(s): {error}", steps.len())]
pub struct SearchFailure {
    pub root_node: Option<Box<PathNode>>,
    pub steps: Vec<DeletionStep>,
    #[source]
    pub error: Error,
}

impl From<Error> for SearchFailure {
    fn from(error: Error) -> Self {
        Self {
            root_node: None,
            steps: Vec::new(),
            error,
        }
    }
}

/// Search state for one root sentence.
pub struct Searcher<'a> {
    root: &'a RootSentence,
    config: &'a SearchConfig,
    scorer: &'a dyn TokenScorer,
    cache: &'a ScoreCache,
    root_nlls: Vec<f64>,
    threshold: f64,
    floor: usize,
    parallel: bool,
}

impl<'a> Searcher<'a> {
    /// Validates the configuration and scores the root once.
    pub fn new(
        root: &'a RootSentence,
        config: &'a SearchConfig,
        scorer: &'a dyn TokenScorer,
        cache: &'a ScoreCache,
        parallel: bool,
    ) -> Result<Self> {
        let tokens: Vec<&str> = root.tokens().iter().map(String::as_str).collect();
        let root_nlls = cache.score(&tokens, scorer)?;
        Self::with_root_nlls(root, config, scorer, cache, root_nlls, parallel)
    }

    pub fn with_root_nlls(
        root: &'a RootSentence,
        config: &'a SearchConfig,
        scorer: &'a dyn TokenScorer,
        cache: &'a ScoreCache,
        root_nlls: Vec<f64>,
        parallel: bool,
    ) -> Result<Self> {
        config.validate()?;
        if let Some(&index) = config
            .frozen_root_indices
            .iter()
            .find(|&&i| i >= root.len())
        {
            return Err(Error::FrozenOutOfRange {
                index,
                len: root.len(),
            });
        }
        if root_nlls.len() != root.len() {
            return Err(Error::InvalidConfig(format!(
                "{} root NLLs for a {}-token root",
                root_nlls.len(),
                root.len()
            )));
        }
        Ok(Self {
            root,
            config,
            scorer,
            cache,
            threshold: threshold(config.alpha, root.len()),
            floor: config.length_floor(root.len()),
            root_nlls,
            parallel,
        })
    }

    pub fn root_nlls(&self) -> &[f64] {
        &self.root_nlls
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn root_node(&self) -> PathNode {
        let kept: Vec<usize> = (0..self.root.len()).collect();
        PathNode {
            kept,
            score: breakdown(&self.root_nlls, &[], &self.root_nlls),
        }
    }

    /// Probes for the next deletion. Without a passing candidate, returns
    /// `None` in terminate mode and the best candidate overall in full-path
    /// mode.
    pub fn probe_step(&self, parent: &PathNode) -> Result<ProbeOutcome> {
        self.probe(
            parent,
            self.config.termination_mode == TerminationMode::FullPath,
        )
    }

    fn probe(&self, parent: &PathNode, take_best_failing: bool) -> Result<ProbeOutcome> {
        let mut probes = Vec::new();
        let parent_len = parent.len();
        for lookahead in 1..=self.config.max_lookahead {
            if parent_len < lookahead + self.floor {
                break;
            }
            let candidates = self.score_level(parent, lookahead)?;
            if candidates.is_empty() {
                // every longer span contains an illegal shorter one
                break;
            }
            let best_passing = candidates
                .iter()
                .filter(|c| c.passed_threshold)
                .min_by(|a, b| candidate_order(a, b))
                .cloned();
            probes.push(StepProbe {
                parent: parent.clone(),
                lookahead,
                candidates,
            });
            if best_passing.is_some() {
                return Ok(ProbeOutcome {
                    chosen: best_passing,
                    probes,
                });
            }
        }
        let chosen = if take_best_failing {
            probes
                .iter()
                .flat_map(|p| p.candidates.iter())
                .min_by(|a, b| candidate_order(a, b))
                .cloned()
        } else {
            None
        };
        Ok(ProbeOutcome { chosen, probes })
    }

    fn score_level(&self, parent: &PathNode, lookahead: usize) -> Result<Vec<DeletionStep>> {
        let frozen = &self.config.frozen_root_indices;
        let starts: Vec<usize> = (0..=parent.len() - lookahead)
            .filter(|&s| {
                !parent.kept[s..s + lookahead]
                    .iter()
                    .any(|i| frozen.contains(i))
            })
            .collect();
        if starts.is_empty() {
            return Ok(Vec::new());
        }
        let kept_sets: Vec<Vec<usize>> = starts
            .iter()
            .map(|&s| {
                let mut k = Vec::with_capacity(parent.len() - lookahead);
                k.extend_from_slice(&parent.kept[..s]);
                k.extend_from_slice(&parent.kept[s + lookahead..]);
                k
            })
            .collect();
        let seqs: Vec<Vec<&str>> = kept_sets.iter().map(|k| self.root.select(k)).collect();
        let nlls = self.cache.score_many(&seqs, self.scorer, self.parallel)?;

        let build = |((&start, kept), nll): ((&usize, Vec<usize>), &std::sync::Arc<[f64]>)| {
            let deleted = complement(&kept, self.root.len());
            let score = breakdown(nll, &deleted, &self.root_nlls);
            let penalized = penalize(
                score.avgppl,
                lookahead,
                parent.len(),
                self.config.beta,
                self.config.penalty_mode,
            );
            DeletionStep {
                span_start: start,
                span_len: lookahead,
                removed_root_indices: parent.kept[start..start + lookahead].to_vec(),
                lookahead_used: lookahead,
                passed_threshold: passes(parent.score.avgppl, penalized, self.threshold),
                penalized_score: penalized,
                result: PathNode { kept, score },
            }
        };
        Ok(starts
            .iter()
            .zip(kept_sets)
            .zip(nlls.iter())
            .map(build)
            .collect())
    }

    /// Runs the search to termination.
    pub fn run(&self) -> std::result::Result<DeletionPath, SearchFailure> {
        let root_len = self.root.len();
        let root_node = self.root_node();
        let mut steps: Vec<DeletionStep> = Vec::new();
        let full_path = self.config.termination_mode == TerminationMode::FullPath;

        let terminated_by = loop {
            let current = steps.last().map_or(&root_node, |s| &s.result);
            if self
                .config
                .step_limit
                .is_some_and(|limit| steps.len() >= limit)
            {
                break Termination::StepLimit;
            }
            if current.len() <= self.floor {
                break if current.len() <= self.config.min_tokens {
                    Termination::TokenFloor
                } else {
                    Termination::CrBound
                };
            }
            // a node still longer than max_cr keeps deleting past the threshold
            let force = full_path || !self.config.fits_max_cr(current.len(), root_len);
            let outcome = match self.probe(current, force) {
                Ok(o) => o,
                Err(error) => {
                    return Err(SearchFailure {
                        root_node: Some(Box::new(root_node)),
                        steps,
                        error,
                    })
                }
            };
            match outcome.chosen {
                Some(step) => steps.push(step),
                None if outcome.exhausted() => break Termination::Exhausted,
                None => break Termination::ThresholdExhausted,
            }
        };

        let (selected, max_cr_unmet) = select_final(self.config, root_len, &root_node, &steps);
        Ok(DeletionPath {
            root: self.root.clone(),
            frozen: self.config.frozen_root_indices.clone(),
            root_node,
            steps,
            terminated_by,
            selected,
            max_cr_unmet,
        })
    }
}

/// Picks the node terminate mode would stop at.
///
/// Walks the path taking each step that passed the threshold, or any step
/// while the current node is still longer than `max_cr` allows. For a path
/// built in terminate mode this is the last node; for a full path it is the
/// node where terminate mode would have stopped.
pub fn select_final(
    config: &SearchConfig,
    root_len: usize,
    root_node: &PathNode,
    steps: &[DeletionStep],
) -> (usize, bool) {
    let mut index = 0;
    let mut len = root_node.len();
    for step in steps {
        if step.passed_threshold || !config.fits_max_cr(len, root_len) {
            index += 1;
            len = step.result.len();
        } else {
            break;
        }
    }
    (index, !config.fits_max_cr(len, root_len))
}

/// Single-node probe with caller-supplied root NLLs.
pub fn probe_step(
    root: &RootSentence,
    parent: &PathNode,
    config: &SearchConfig,
    scorer: &dyn TokenScorer,
    cache: &ScoreCache,
    root_nlls: Vec<f64>,
) -> Result<ProbeOutcome> {
    Searcher::with_root_nlls(root, config, scorer, cache, root_nlls, false)?.probe_step(parent)
}

/// Compresses one sentence with a fresh cache, sequentially.
pub fn compress(
    root: &RootSentence,
    config: &SearchConfig,
    scorer: &dyn TokenScorer,
) -> std::result::Result<DeletionPath, SearchFailure> {
    let cache = ScoreCache::new();
    compress_with(root, config, scorer, &cache, false)
}

pub fn compress_with(
    root: &RootSentence,
    config: &SearchConfig,
    scorer: &dyn TokenScorer,
    cache: &ScoreCache,
    parallel: bool,
) -> std::result::Result<DeletionPath, SearchFailure> {
    Searcher::new(root, config, scorer, cache, parallel)?.run()
}

/// One sentence to compress with its own (already frozen-resolved) config.
#[derive(Debug, Clone)]
pub struct Job {
    pub root: RootSentence,
    pub config: SearchConfig,
}

/// Compresses every job on a pool of `workers` threads sharing one cache.
/// Results come back in input order and do not depend on `workers`.
pub fn compress_batch(
    jobs: &[Job],
    scorer: &dyn TokenScorer,
    cache: &ScoreCache,
    workers: usize,
) -> Vec<std::result::Result<DeletionPath, SearchFailure>> {
    if workers <= 1 {
        return jobs
            .iter()
            .map(|j| compress_with(&j.root, &j.config, scorer, cache, false))
            .collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    pool.install(|| {
        jobs.par_iter()
            .map(|j| compress_with(&j.root, &j.config, scorer, cache, true))
            .collect()
    })
}
