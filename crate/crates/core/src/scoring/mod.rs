//! AvgPPL objective, the token-scorer contract and a shared score cache.
//!
//! A node's score covers the whole root multiset: tokens still present are
//! scored in the current sentence, deleted tokens keep the NLL they had in
//! the root sentence. The exponent is divided by the root length, so a
//! context-free scorer gives every node of a path the same AvgPPL.

pub mod fixture;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use rayon::prelude::*;

use crate::error::{Error, Result, ScorerError};
use crate::sentence::ScoreBreakdown;

/// Maps a token sequence to per-token negative log-likelihoods in nats.
///
/// Implementations must be deterministic and safe to call concurrently.
pub trait TokenScorer: Send + Sync {
    fn score(&self, tokens: &[&str]) -> Result<Vec<f64>, ScorerError>;

    /// Scores several sentences. The default scores them one by one.
    fn score_batch(&self, batch: &[Vec<&str>]) -> Result<Vec<Vec<f64>>, BatchError> {
        batch
            .iter()
            .enumerate()
            .map(|(index, s)| self.score(s).map_err(|source| BatchError { index, source }))
            .collect()
    }
}

/// A batch failure attributed to the sentence at `index` within the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchError {
    pub index: usize,
    pub source: ScorerError,
}

impl<T: TokenScorer + ?Sized> TokenScorer for &T {
    fn score(&self, tokens: &[&str]) -> Result<Vec<f64>, ScorerError> {
        (**self).score(tokens)
    }
    fn score_batch(&self, batch: &[Vec<&str>]) -> Result<Vec<Vec<f64>>, BatchError> {
        (**self).score_batch(batch)
    }
}

impl<T: TokenScorer + ?Sized> TokenScorer for Arc<T> {
    fn score(&self, tokens: &[&str]) -> Result<Vec<f64>, ScorerError> {
        (**self).score(tokens)
    }
    fn score_batch(&self, batch: &[Vec<&str>]) -> Result<Vec<Vec<f64>>, BatchError> {
        (**self).score_batch(batch)
    }
}

impl<T: TokenScorer + ?Sized> TokenScorer for Box<T> {
    fn score(&self, tokens: &[&str]) -> Result<Vec<f64>, ScorerError> {
        (**self).score(tokens)
    }
    fn score_batch(&self, batch: &[Vec<&str>]) -> Result<Vec<Vec<f64>>, BatchError> {
        (**self).score_batch(batch)
    }
}

/// Checks a scorer's output for one sentence: one finite, non-negative value per token.
pub fn validate_nlls(token_count: usize, nlls: &[f64]) -> Result<(), ScorerError> {
    if nlls.len() != token_count {
        return Err(ScorerError::LengthMismatch {
            expected: token_count,
            got: nlls.len(),
        });
    }
    for (position, &value) in nlls.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(ScorerError::InvalidValue { position, value });
        }
    }
    Ok(())
}

fn scorer_error(tokens: &[&str], source: ScorerError) -> Error {
    Error::Scorer {
        tokens: tokens.iter().map(|t| t.to_string()).collect(),
        source,
    }
}

/// Combines already-validated NLLs into a [`ScoreBreakdown`].
///
/// `kept_nlls` come from scoring the current sentence; the deleted term sums
/// `root_nlls` over `deleted_root_indices`.
pub fn breakdown(
    kept_nlls: &[f64],
    deleted_root_indices: &[usize],
    root_nlls: &[f64],
) -> ScoreBreakdown {
    // fold from +0.0: an empty f64 sum is -0.0
    let kept_sum = kept_nlls.iter().fold(0.0, |acc, x| acc + x);
    let deleted_sum = deleted_root_indices
        .iter()
        .fold(0.0, |acc, &i| acc + root_nlls[i]);
    ScoreBreakdown::from_sums(kept_sum, deleted_sum, kept_nlls.len(), root_nlls.len())
}

/// Scores `node_tokens` and returns its AvgPPL breakdown against the root.
pub fn avgppl(
    node_tokens: &[&str],
    deleted_root_indices: &[usize],
    root_nlls: &[f64],
    scorer: &dyn TokenScorer,
) -> Result<ScoreBreakdown> {
    if node_tokens.len() + deleted_root_indices.len() != root_nlls.len() {
        return Err(Error::InvalidConfig(format!(
            "{} kept + {} deleted tokens do not cover a root of {}",
            node_tokens.len(),
            deleted_root_indices.len(),
            root_nlls.len()
        )));
    }
    let nlls = scorer
        .score(node_tokens)
        .and_then(|v| validate_nlls(node_tokens.len(), &v).map(|_| v))
        .map_err(|e| scorer_error(node_tokens, e))?;
    Ok(breakdown(&nlls, deleted_root_indices, root_nlls))
}

/// Exact-sequence cache of scorer outputs with hit/miss counters.
///
/// Values for a key are deterministic, so concurrent writers racing on the
/// same key store identical vectors.
#[derive(Debug, Default)]
pub struct ScoreCache {
    entries: RwLock<HashMap<String, Arc<[f64]>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

/// Length-prefixed encoding, unambiguous for any token contents.
fn cache_key(tokens: &[&str]) -> String {
    let mut key = String::with_capacity(tokens.iter().map(|t| t.len() + 4).sum());
    for t in tokens {
        key.push_str(&t.len().to_string());
        key.push(':');
        key.push_str(t);
    }
    key
}

impl ScoreCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    /// Number of sequences sent to the delegate scorer.
    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn lookup(&self, key: &str) -> Option<Arc<[f64]>> {
        self.entries.read().unwrap().get(key).cloned()
    }

    fn store(&self, key: String, value: Arc<[f64]>) {
        self.entries.write().unwrap().insert(key, value);
    }

    /// Returns the NLL vector for `tokens`, delegating on a miss.
    /// Failed delegate calls are not cached.
    pub fn score(&self, tokens: &[&str], scorer: &dyn TokenScorer) -> Result<Vec<f64>> {
        let key = cache_key(tokens);
        if let Some(v) = self.lookup(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(v.to_vec());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let v = scorer
            .score(tokens)
            .and_then(|v| validate_nlls(tokens.len(), &v).map(|_| v))
            .map_err(|e| scorer_error(tokens, e))?;
        self.store(key, v.clone().into());
        Ok(v)
    }

    /// Scores many sequences, sending only the misses to the scorer.
    ///
    /// With `parallel` set, misses are split into chunks scored on the
    /// current rayon pool. Results are returned in input order.
    pub fn score_many(
        &self,
        seqs: &[Vec<&str>],
        scorer: &dyn TokenScorer,
        parallel: bool,
    ) -> Result<Vec<Arc<[f64]>>> {
        let keys: Vec<String> = seqs.iter().map(|s| cache_key(s)).collect();
        let mut out: Vec<Option<Arc<[f64]>>> = Vec::with_capacity(seqs.len());
        let mut pending: Vec<usize> = Vec::new();
        // a sequence repeated within one batch is delegated once
        let mut first_seen: HashMap<&str, usize> = HashMap::new();
        let mut duplicates: Vec<(usize, usize)> = Vec::new();
        {
            let entries = self.entries.read().unwrap();
            for (i, key) in keys.iter().enumerate() {
                if let Some(v) = entries.get(key) {
                    out.push(Some(v.clone()));
                } else if let Some(&j) = first_seen.get(key.as_str()) {
                    out.push(None);
                    duplicates.push((i, j));
                } else {
                    first_seen.insert(key, i);
                    out.push(None);
                    pending.push(i);
                }
            }
        }
        self.hits
            .fetch_add((seqs.len() - pending.len()) as u64, Ordering::Relaxed);
        self.misses
            .fetch_add(pending.len() as u64, Ordering::Relaxed);

        if !pending.is_empty() {
            let batch: Vec<Vec<&str>> = pending.iter().map(|&i| seqs[i].clone()).collect();
            let scored = if parallel && batch.len() > 1 {
                let chunk = batch.len().div_ceil(rayon::current_num_threads().max(1));
                let parts: Vec<Result<Vec<Vec<f64>>>> = batch
                    .par_chunks(chunk.max(1))
                    .map(|c| score_chunk(c, scorer))
                    .collect();
                let mut all = Vec::with_capacity(batch.len());
                for p in parts {
                    all.extend(p?);
                }
                all
            } else {
                score_chunk(&batch, scorer)?
            };
            for (&i, v) in pending.iter().zip(scored) {
                let v: Arc<[f64]> = v.into();
                self.store(keys[i].clone(), v.clone());
                out[i] = Some(v);
            }
        }
        for (i, j) in duplicates {
            out[i] = out[j].clone();
        }
        Ok(out
            .into_iter()
            .map(|v| v.expect("every slot filled"))
            .collect())
    }
}

fn score_chunk(batch: &[Vec<&str>], scorer: &dyn TokenScorer) -> Result<Vec<Vec<f64>>> {
    let scored = scorer
        .score_batch(batch)
        .map_err(|e| scorer_error(batch.get(e.index).map_or(&[][..], |s| &s[..]), e.source))?;
    if scored.len() != batch.len() {
        return Err(scorer_error(
            batch.first().map_or(&[][..], |s| &s[..]),
            ScorerError::BatchMismatch {
                expected: batch.len(),
                got: scored.len(),
            },
        ));
    }
    for (s, v) in batch.iter().zip(&scored) {
        validate_nlls(s.len(), v).map_err(|e| scorer_error(s, e))?;
    }
    Ok(scored)
}

/// Cached scoring of one sequence.
pub fn score_with_cache(
    tokens: &[&str],
    scorer: &dyn TokenScorer,
    cache: &ScoreCache,
) -> Result<Vec<f64>> {
    cache.score(tokens, scorer)
}
