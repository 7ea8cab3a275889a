//! Brute-force reference routines for checking the search.
//!
//! Nothing here goes through the cache, `breakdown` or `Searcher`: every
//! score is recomputed from raw scorer output, and candidate selection is
//! written declaratively over the full span set instead of level by level.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use delpath_core::scoring::fixture::BigramScorer;
use delpath_core::{DeletionPath, PenaltyMode, SearchConfig, TerminationMode, TokenScorer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ALPHABET: [&str; 5] = ["a", "b", "c", "d", "e"];

/// Random unigram NLLs in [0.2, 4) and bigram deltas in [-1.5, 1.5) for
/// every ordered pair including the start boundary.
pub fn random_bigram(seed: u64, alphabet: &[&str]) -> BigramScorer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unigram: HashMap<String, f64> = alphabet
        .iter()
        .map(|t| (t.to_string(), rng.gen_range(0.2..4.0)))
        .collect();
    let mut bonus = HashMap::new();
    for prev in std::iter::once("<s>").chain(alphabet.iter().copied()) {
        for t in alphabet {
            bonus.insert((prev.to_string(), t.to_string()), rng.gen_range(-1.5..1.5));
        }
    }
    BigramScorer::new(unigram, bonus)
}

/// Random context-free scorer over `alphabet`.
pub fn random_unigram(rng: &mut impl Rng, alphabet: &[String]) -> BigramScorer {
    let unigram = alphabet
        .iter()
        .map(|t| (t.clone(), rng.gen_range(0.01..8.0)))
        .collect();
    BigramScorer::new(unigram, HashMap::new())
}

/// Every sentence of length 1..=max_len over `alphabet`.
pub fn all_sentences(alphabet: &[&str], max_len: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<String>> = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for t in alphabet {
                let mut v = s.clone();
                v.push(t.to_string());
                next.push(v);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// AvgPPL of the sentence `kept` (root indices) computed from scratch.
pub fn brute_avgppl(root: &[String], kept: &[usize], scorer: &dyn TokenScorer) -> f64 {
    avgppl_given_root(root, &root_scores(root, scorer), kept, scorer)
}

pub fn root_scores(root: &[String], scorer: &dyn TokenScorer) -> Vec<f64> {
    let refs: Vec<&str> = root.iter().map(String::as_str).collect();
    scorer.score(&refs).unwrap()
}

fn avgppl_given_root(
    root: &[String],
    root_nlls: &[f64],
    kept: &[usize],
    scorer: &dyn TokenScorer,
) -> f64 {
    let kept_refs: Vec<&str> = kept.iter().map(|&i| root[i].as_str()).collect();
    let kept_nlls = scorer.score(&kept_refs).unwrap();
    let kept_set: BTreeSet<usize> = kept.iter().copied().collect();
    let mut total: f64 = kept_nlls.iter().sum();
    for (i, nll) in root_nlls.iter().enumerate() {
        if !kept_set.contains(&i) {
            total += nll;
        }
    }
    (total / root.len() as f64).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleChoice {
    pub start: usize,
    pub len: usize,
    pub avgppl: f64,
    pub penalized: f64,
    pub passed: bool,
}

/// The deletion the search should pick from `parent_kept`, or `None`.
///
/// `take_best_failing` selects the global minimum when nothing passes, as
/// full-path mode (or an unmet `max_cr`) does.
pub fn oracle_choice(
    root: &[String],
    parent_kept: &[usize],
    cfg: &SearchConfig,
    scorer: &dyn TokenScorer,
    take_best_failing: bool,
) -> Option<OracleChoice> {
    let l_root = root.len();
    let m = parent_kept.len();
    let threshold = 1.0 + cfg.alpha * (l_root as f64).ln();
    let cr_floor = cfg
        .min_cr
        .map_or(0, |c| (c * l_root as f64).ceil() as usize);
    let floor = cfg.min_tokens.max(cr_floor);
    let root_nlls = root_scores(root, scorer);
    let parent_score = avgppl_given_root(root, &root_nlls, parent_kept, scorer);

    let mut all = Vec::new();
    for len in 1..=cfg.max_lookahead {
        for start in 0..m {
            if start + len > m || m - len < floor {
                continue;
            }
            let span = &parent_kept[start..start + len];
            if span.iter().any(|i| cfg.frozen_root_indices.contains(i)) {
                continue;
            }
            let kept: Vec<usize> = parent_kept
                .iter()
                .copied()
                .filter(|i| !span.contains(i))
                .collect();
            let avgppl = avgppl_given_root(root, &root_nlls, &kept, scorer);
            let mult = match cfg.penalty_mode {
                PenaltyMode::SpanLength => (len as f64).powf(cfg.beta),
                PenaltyMode::CurrentLength => (m as f64).powf(cfg.beta),
                PenaltyMode::Off => 1.0,
            };
            let penalized = avgppl * mult;
            all.push(OracleChoice {
                start,
                len,
                avgppl,
                penalized,
                passed: penalized / parent_score <= threshold,
            });
        }
    }
    let key = |c: &OracleChoice| (c.penalized, c.len, c.start);
    let best = |v: Vec<&OracleChoice>| {
        v.into_iter()
            .min_by(|a, b| {
                let (ka, kb) = (key(a), key(b));
                tie_cmp(ka.0, kb.0)
                    .then(ka.1.cmp(&kb.1))
                    .then(ka.2.cmp(&kb.2))
            })
            .cloned()
    };
    // shortest span length that has any passing candidate
    let passing_len = all.iter().filter(|c| c.passed).map(|c| c.len).min();
    match passing_len {
        Some(l) => best(all.iter().filter(|c| c.passed && c.len == l).collect()),
        None if take_best_failing => best(all.iter().collect()),
        None => None,
    }
}

/// Scores within a relative 1e-12 are a tie.
fn tie_cmp(a: f64, b: f64) -> std::cmp::Ordering {
    if close(a, b, 1e-12) {
        std::cmp::Ordering::Equal
    } else {
        a.partial_cmp(&b).unwrap()
    }
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs())
}

/// Replays `path` and checks every step against the oracle, including the
/// final step's absence.
pub fn check_against_oracle(
    path: &DeletionPath,
    cfg: &SearchConfig,
    scorer: &dyn TokenScorer,
) -> Result<(), String> {
    let root = path.root.tokens();
    let l_root = root.len();
    let full = cfg.termination_mode == TerminationMode::FullPath;
    for (i, step) in path.steps.iter().enumerate() {
        let parent = path.node(i);
        let force = full || !cfg.fits_max_cr(parent.len(), l_root);
        let want = oracle_choice(root, &parent.kept, cfg, scorer, force)
            .ok_or_else(|| format!("step {i}: oracle found no deletion"))?;
        if (want.start, want.len) != (step.span_start, step.span_len) {
            return Err(format!(
                "step {i} of {:?}: search chose ({}, {}), oracle ({}, {})",
                root, step.span_start, step.span_len, want.start, want.len
            ));
        }
        if !close(want.avgppl, step.result.score.avgppl, 1e-12)
            || want.passed != step.passed_threshold
        {
            return Err(format!(
                "step {i}: score mismatch {want:?} vs {:?}",
                step.result.score
            ));
        }
    }
    // the search stopped: either a floor/limit, or the oracle agrees there is nothing to take
    let last = path.last_node();
    if matches!(
        path.terminated_by,
        delpath_core::Termination::ThresholdExhausted | delpath_core::Termination::Exhausted
    ) {
        let force = full || !cfg.fits_max_cr(last.len(), l_root);
        if let Some(c) = oracle_choice(root, &last.kept, cfg, scorer, force) {
            return Err(format!("search stopped but oracle would take {c:?}"));
        }
    }
    Ok(())
}
