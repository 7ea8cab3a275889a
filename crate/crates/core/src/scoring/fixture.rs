//! Deterministic scorers for tests, benchmarks and offline runs.

use std::collections::HashMap;
use std::io::Read;
use std::sync::Mutex;

use serde::Deserialize;

use super::{BatchError, TokenScorer};
use crate::error::{Error, Result, ScorerError};

/// Previous-token symbol seen by the first token of a sentence.
pub const BOUNDARY: &str = "<s>";

/// Strict lookup table: unknown sequences are an error, so a test cannot
/// silently score a candidate it did not anticipate.
#[derive(Debug, Clone, Default)]
pub struct FixtureScorer {
    table: HashMap<Vec<String>, Vec<f64>>,
}

impl FixtureScorer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (Vec<S>, Vec<f64>)>,
        S: Into<String>,
    {
        let mut f = Self::new();
        for (k, v) in pairs {
            f.insert(k.into_iter().map(Into::into).collect(), v);
        }
        f
    }

    pub fn insert(&mut self, tokens: Vec<String>, nlls: Vec<f64>) {
        self.table.insert(tokens, nlls);
    }
}

impl TokenScorer for FixtureScorer {
    fn score(&self, tokens: &[&str]) -> Result<Vec<f64>, ScorerError> {
        let key: Vec<String> = tokens.iter().map(|t| t.to_string()).collect();
        self.table
            .get(&key)
            .cloned()
            .ok_or(ScorerError::UnknownSequence(key))
    }
}

/// `NLL(t_i) = unigram[t_i] + bonus(t_{i-1}, t_i)`, clamped at zero, with
/// [`BOUNDARY`] standing in for the token before position 0.
#[derive(Debug, Clone, Default)]
pub struct BigramScorer {
    unigram: HashMap<String, f64>,
    // prev -> token -> delta
    bonus: HashMap<String, HashMap<String, f64>>,
    fallback: Option<f64>,
}

fn nest(
    flat: impl IntoIterator<Item = ((String, String), f64)>,
) -> HashMap<String, HashMap<String, f64>> {
    let mut out: HashMap<String, HashMap<String, f64>> = HashMap::new();
    for ((prev, tok), delta) in flat {
        out.entry(prev).or_default().insert(tok, delta);
    }
    out
}

#[derive(Deserialize)]
struct BigramTable {
    unigram: HashMap<String, f64>,
    #[serde(default)]
    bigram: Vec<(String, String, f64)>,
    #[serde(default)]
    default_unigram: Option<f64>,
}

impl BigramScorer {
    pub fn new(unigram: HashMap<String, f64>, bonus: HashMap<(String, String), f64>) -> Self {
        Self {
            unigram,
            bonus: nest(bonus),
            fallback: None,
        }
    }

    /// NLL used for tokens absent from the unigram table.
    pub fn with_fallback(mut self, nll: f64) -> Self {
        self.fallback = Some(nll);
        self
    }

    /// Reads `{"unigram": {tok: nll}, "bigram": [[prev, tok, delta], ...], "default_unigram": nll?}`.
    pub fn from_json_reader(reader: impl Read) -> Result<Self> {
        let table: BigramTable = serde_json::from_reader(reader)?;
        let values = table
            .unigram
            .values()
            .chain(table.bigram.iter().map(|b| &b.2))
            .chain(table.default_unigram.iter());
        if let Some(v) = values.into_iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "non-finite value {v} in bigram table"
            )));
        }
        let bonus = nest(table.bigram.into_iter().map(|(a, b, d)| ((a, b), d)));
        Ok(Self {
            unigram: table.unigram,
            bonus,
            fallback: table.default_unigram,
        })
    }
}

impl TokenScorer for BigramScorer {
    fn score(&self, tokens: &[&str]) -> Result<Vec<f64>, ScorerError> {
        let mut out = Vec::with_capacity(tokens.len());
        let mut prev = BOUNDARY;
        for &t in tokens {
            let base = match self.unigram.get(t) {
                Some(&v) => v,
                None => self
                    .fallback
                    .ok_or_else(|| ScorerError::UnknownToken(t.to_string()))?,
            };
            let delta = self
                .bonus
                .get(prev)
                .and_then(|m| m.get(t))
                .copied()
                .unwrap_or(0.0);
            out.push((base + delta).max(0.0));
            prev = t;
        }
        Ok(out)
    }
}

/// Every token gets the same NLL.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer(pub f64);

impl TokenScorer for ConstantScorer {
    fn score(&self, tokens: &[&str]) -> Result<Vec<f64>, ScorerError> {
        Ok(vec![self.0; tokens.len()])
    }
}

/// Context-sensitive pseudo language model over an open vocabulary.
///
/// Each NLL is a fixed function of `(previous, token, next)` derived from a
/// 64-bit FNV-1a hash and spread over `[0.5, 6.5)` nats, with [`BOUNDARY`]
/// on both sides of the sentence. Stable across platforms and releases, so it
/// can drive reproducible end-to-end runs without a model.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashContextScorer;

fn fnv1a(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for b in p.bytes().chain(std::iter::once(0xff)) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

impl TokenScorer for HashContextScorer {
    fn score(&self, tokens: &[&str]) -> Result<Vec<f64>, ScorerError> {
        Ok((0..tokens.len())
            .map(|i| {
                let prev = if i == 0 { BOUNDARY } else { tokens[i - 1] };
                let next = tokens.get(i + 1).copied().unwrap_or(BOUNDARY);
                let t = tokens[i];
                0.5 + 3.0 * unit(fnv1a(&[prev, t])) + 3.0 * unit(fnv1a(&[t, next, "r"]))
            })
            .collect())
    }
}

/// Adapts a closure into a scorer.
pub struct FnScorer<F>(pub F);

impl<F> TokenScorer for FnScorer<F>
where
    F: Fn(&[&str]) -> Vec<f64> + Send + Sync,
{
    fn score(&self, tokens: &[&str]) -> Result<Vec<f64>, ScorerError> {
        Ok((self.0)(tokens))
    }
}

/// Wraps a scorer and records every sequence it is asked to score, in order.
#[derive(Debug, Default)]
pub struct CallRecorder<S> {
    inner: S,
    calls: Mutex<Vec<Vec<String>>>,
}

impl<S> CallRecorder<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<Vec<String>> {
        self.calls.lock().unwrap().clone()
    }

    pub fn clear(&self) {
        self.calls.lock().unwrap().clear();
    }
}

impl<S: TokenScorer> TokenScorer for CallRecorder<S> {
    fn score(&self, tokens: &[&str]) -> Result<Vec<f64>, ScorerError> {
        self.calls
            .lock()
            .unwrap()
            .push(tokens.iter().map(|t| t.to_string()).collect());
        self.inner.score(tokens)
    }

    fn score_batch(&self, batch: &[Vec<&str>]) -> Result<Vec<Vec<f64>>, BatchError> {
        self.calls.lock().unwrap().extend(
            batch
                .iter()
                .map(|s| s.iter().map(|t| t.to_string()).collect()),
        );
        self.inner.score_batch(batch)
    }
}

/// Built-in scorers selectable by name from the command line.
pub fn named(name: &str) -> Option<Box<dyn TokenScorer>> {
    match name {
        "hash-context" => Some(Box::new(HashContextScorer)),
        "zero" => Some(Box::new(ConstantScorer(0.0))),
        _ => None,
    }
}

pub const NAMED: &[&str] = &["hash-context", "zero"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_lookup_and_strictness() {
        let f = FixtureScorer::from_pairs([(vec!["a", "b"], vec![0.5, 0.5])]);
        assert_eq!(f.score(&["a", "b"]).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(
            f.score(&["b", "a"]),
            Err(ScorerError::UnknownSequence(_))
        ));
    }

    #[test]
    fn bigram_without_bonus_is_context_free() {
        let s = BigramScorer::new(HashMap::from([("a".into(), 1.0)]), HashMap::new());
        assert_eq!(s.score(&["a", "a"]).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn bigram_bonus_applies_after_prev() {
        let s = BigramScorer::new(
            HashMap::from([("a".into(), 1.0), ("b".into(), 1.0)]),
            HashMap::from([(("a".into(), "b".into()), -0.5)]),
        );
        assert_eq!(s.score(&["a", "b"]).unwrap(), vec![1.0, 0.5]);
        assert_eq!(s.score(&["b", "a"]).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn bigram_clamps_at_zero() {
        let s = BigramScorer::new(
            HashMap::from([("a".into(), 1.0), ("b".into(), 0.2)]),
            HashMap::from([(("a".into(), "b".into()), -0.5)]),
        );
        assert_eq!(s.score(&["a", "b"]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn bigram_unknown_token() {
        let s = BigramScorer::new(HashMap::from([("a".into(), 1.0)]), HashMap::new());
        assert_eq!(s.score(&["q"]), Err(ScorerError::UnknownToken("q".into())));
        assert_eq!(s.with_fallback(3.0).score(&["q"]).unwrap(), vec![3.0]);
    }

    #[test]
    fn bigram_boundary_symbol() {
        let s = BigramScorer::new(
            HashMap::from([("a".into(), 1.0)]),
            HashMap::from([((BOUNDARY.into(), "a".into()), -0.25)]),
        );
        assert_eq!(s.score(&["a", "a"]).unwrap(), vec![0.75, 1.0]);
    }

    #[test]
    fn bigram_table_from_json() {
        let json = r#"{"unigram": {"a": 1.0, "b": 1.0}, "bigram": [["a", "b", -0.5]]}"#;
        let s = BigramScorer::from_json_reader(json.as_bytes()).unwrap();
        assert_eq!(s.score(&["a", "b"]).unwrap(), vec![1.0, 0.5]);
    }

    #[test]
    fn hash_scorer_is_stable_and_bounded() {
        let a = HashContextScorer.score(&["i", "think", "so", "."]).unwrap();
        let b = HashContextScorer.score(&["i", "think", "so", "."]).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&v| (0.5..6.5).contains(&v)));
        // both neighbours matter
        let left = HashContextScorer.score(&["i", "so", "."]).unwrap();
        let right = HashContextScorer.score(&["i", "think", "so"]).unwrap();
        assert_ne!(a[2], left[1]);
        assert_ne!(a[2], right[2]);
    }
}
