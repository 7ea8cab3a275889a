//! Reference-based evaluation: token F1 and compression ratio, plus dataset
//! loaders for generic JSONL pairs and the Google compression release.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::sentence::tokenize;

/// A source sentence with one or more reference compressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionPair {
    pub id: String,
    pub source: Vec<String>,
    pub references: Vec<Vec<String>>,
}

fn multiset_overlap(a: &[String], b: &[String]) -> usize {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in a {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0;
    for t in b {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    overlap
}

fn f1_from_counts(overlap: usize, system_len: usize, reference_len: usize) -> f64 {
    if overlap == 0 || system_len == 0 || reference_len == 0 {
        return 0.0;
    }
    let p = overlap as f64 / system_len as f64;
    let r = overlap as f64 / reference_len as f64;
    2.0 * p * r / (p + r)
}

/// F1 over token multisets.
pub fn token_f1(system: &[String], reference: &[String]) -> f64 {
    f1_from_counts(
        multiset_overlap(system, reference),
        system.len(),
        reference.len(),
    )
}

/// F1 over source positions, for outputs aligned to the same source.
pub fn positional_f1(system: &[usize], reference: &[usize]) -> f64 {
    let r: HashSet<usize> = reference.iter().copied().collect();
    let overlap = system.iter().filter(|i| r.contains(i)).count();
    f1_from_counts(overlap, system.len(), reference.len())
}

/// Leftmost greedy alignment of `compressed` as a subsequence of `source`.
pub fn align_subsequence(source: &[String], compressed: &[String]) -> Option<Vec<usize>> {
    let mut out = Vec::with_capacity(compressed.len());
    let mut pos = 0;
    for t in compressed {
        let found = source[pos..].iter().position(|s| s == t)?;
        out.push(pos + found);
        pos += found + 1;
    }
    Some(out)
}

pub fn compression_ratio(system: &[String], source: &[String]) -> f64 {
    system.len() as f64 / source.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum F1Mode {
    #[default]
    Multiset,
    /// Positional F1 after aligning outputs to the source; falls back to
    /// multiset F1 for an example whose tokens do not align.
    Positional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub id: String,
    pub f1: Vec<f64>,
    pub cr: f64,
    pub system_len: usize,
    pub source_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Macro-averaged F1 per reference slot, keyed `ref_0`, `ref_1`, ...
    pub f1: BTreeMap<String, f64>,
    /// Micro-averaged compression ratio (total output / total source tokens).
    pub cr: f64,
    pub n: usize,
    pub per_example: Vec<ExampleScore>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub unaligned: usize,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

impl EvalReport {
    /// Aligned plain-text summary.
    pub fn render_table(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![("n".into(), self.n.to_string())];
        for (k, v) in &self.f1 {
            rows.push((format!("f1 {k}"), format!("{:.4}", v)));
        }
        rows.push(("cr".into(), format!("{:.4}", self.cr)));
        if self.unaligned > 0 {
            rows.push(("unaligned".into(), self.unaligned.to_string()));
        }
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(&format!("{k:<width$}  {v:>10}\n"));
        }
        out
    }
}

/// Scores `predictions` (id -> tokens) against every pair.
///
/// Totals are summed in id order, so the report does not depend on the
/// order of `pairs`.
pub fn evaluate(
    pairs: &[CompressionPair],
    predictions: &HashMap<String, Vec<String>>,
    mode: F1Mode,
) -> Result<EvalReport> {
    let missing: Vec<&str> = pairs
        .iter()
        .filter(|p| !predictions.contains_key(&p.id))
        .map(|p| p.id.as_str())
        .take(5)
        .collect();
    if !missing.is_empty() {
        return Err(Error::IdMismatch(format!(
            "no prediction for id(s) {missing:?}"
        )));
    }
    let mut unaligned = 0;
    let mut per_example = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let system = &predictions[&pair.id];
        let f1 = pair
            .references
            .iter()
            .map(|reference| match mode {
                F1Mode::Multiset => token_f1(system, reference),
                F1Mode::Positional => match (
                    align_subsequence(&pair.source, system),
                    align_subsequence(&pair.source, reference),
                ) {
                    (Some(s), Some(r)) => positional_f1(&s, &r),
                    _ => {
                        unaligned += 1;
                        token_f1(system, reference)
                    }
                },
            })
            .collect();
        per_example.push(ExampleScore {
            id: pair.id.clone(),
            f1,
            cr: compression_ratio(system, &pair.source),
            system_len: system.len(),
            source_len: pair.source.len(),
        });
    }
    Ok(summarize(per_example, unaligned))
}

fn summarize(per_example: Vec<ExampleScore>, unaligned: usize) -> EvalReport {
    let mut order: Vec<&ExampleScore> = per_example.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));

    let slots = order.iter().map(|e| e.f1.len()).max().unwrap_or(0);
    let mut f1 = BTreeMap::new();
    for k in 0..slots {
        let vals: Vec<f64> = order.iter().filter_map(|e| e.f1.get(k).copied()).collect();
        f1.insert(
            format!("ref_{k}"),
            vals.iter().sum::<f64>() / vals.len() as f64,
        );
    }
    let system: usize = order.iter().map(|e| e.system_len).sum();
    let source: usize = order.iter().map(|e| e.source_len).sum();
    EvalReport {
        f1,
        cr: if source == 0 {
            0.0
        } else {
            system as f64 / source as f64
        },
        n: per_example.len(),
        per_example,
        unaligned,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub lowercase: bool,
    /// Fail on the first bad line instead of collecting errors.
    pub strict: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            lowercase: true,
            strict: false,
        }
    }
}

#[derive(Debug, Default)]
pub struct Loaded {
    pub pairs: Vec<CompressionPair>,
    pub errors: Vec<Error>,
}

/// A string is whitespace-tokenized; a list of strings is taken verbatim.
fn tokens_of(v: &Value, lowercase: bool) -> std::result::Result<Vec<String>, String> {
    match v {
        Value::String(s) => Ok(tokenize(s, lowercase)),
        Value::Array(items) => items
            .iter()
            .map(|t| {
                t.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| "token list holds a non-string".to_string())
            })
            .collect(),
        _ => Err("expected a string or a list of strings".into()),
    }
}

fn id_of(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_pair(line: &str, opts: &LoadOptions) -> std::result::Result<CompressionPair, String> {
    let v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let id = v
        .get("id")
        .and_then(id_of)
        .ok_or("missing or invalid \"id\"")?;
    let source = tokens_of(v.get("source").ok_or("missing \"source\"")?, opts.lowercase)?;
    if source.is_empty() {
        return Err("empty source".into());
    }
    let refs = v
        .get("references")
        .and_then(Value::as_array)
        .ok_or("missing \"references\" list")?;
    let references = refs
        .iter()
        .map(|r| tokens_of(r, opts.lowercase))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if references.is_empty() || references.iter().any(Vec::is_empty) {
        return Err("references must be non-empty".into());
    }
    Ok(CompressionPair {
        id,
        source,
        references,
    })
}

/// Reads one `{"id", "source", "references"}` object per line.
pub fn load_jsonl(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Loaded> {
    read_jsonl(BufReader::new(File::open(path)?), opts)
}

pub fn read_jsonl(reader: impl BufRead, opts: &LoadOptions) -> Result<Loaded> {
    let mut out = Loaded::default();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = match parse_pair(&line, opts) {
            Ok(pair) if seen.insert(pair.id.clone()) => {
                out.pairs.push(pair);
                continue;
            }
            Ok(pair) => Error::DuplicateId {
                line: lineno,
                id: pair.id,
            },
            Err(message) => Error::Parse {
                line: lineno,
                message,
            },
        };
        if opts.strict {
            return Err(err);
        }
        out.errors.push(err);
    }
    Ok(out)
}

/// Reads system outputs, one JSON object per line with an `id` and one of
/// `prediction`, `final` or `tokens`. Compress output can be fed back in
/// directly.
pub fn read_predictions(
    reader: impl BufRead,
    lowercase: bool,
) -> Result<HashMap<String, Vec<String>>> {
    let mut out = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            line: i + 1,
            message,
        };
        let v: Value = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let id = v
            .get("id")
            .and_then(id_of)
            .ok_or_else(|| bad("missing \"id\"".into()))?;
        let toks = ["prediction", "final", "tokens"]
            .iter()
            .find_map(|k| v.get(*k))
            .ok_or_else(|| bad("missing \"prediction\"".into()))?;
        let toks = tokens_of(toks, lowercase).map_err(bad)?;
        if out.insert(id.clone(), toks).is_some() {
            return Err(Error::DuplicateId { line: i + 1, id });
        }
    }
    Ok(out)
}

/// Loads the Google sentence-compression release: a stream of JSON records,
/// each with `graph.sentence` and `compression.text`. Parse-tree, POS and
/// headline fields are ignored. `first_n` keeps only the leading records.
pub fn load_google_dataset(
    path: impl AsRef<Path>,
    first_n: Option<usize>,
    lowercase: bool,
) -> Result<Vec<CompressionPair>> {
    read_google(BufReader::new(File::open(path)?), first_n, lowercase)
}

pub fn read_google(
    reader: impl std::io::Read,
    first_n: Option<usize>,
    lowercase: bool,
) -> Result<Vec<CompressionPair>> {
    let mut out = Vec::new();
    let stream = serde_json::Deserializer::from_reader(reader).into_iter::<Value>();
    let mut record = 0;
    for value in stream {
        let value = value?;
        let items = match value {
            Value::Array(items) => items,
            v => vec![v],
        };
        for v in items {
            if first_n.is_some_and(|n| out.len() >= n) {
                return Ok(out);
            }
            let missing = |field: &str| Error::SchemaMismatch {
                record,
                field: field.into(),
            };
            let graph = v.get("graph").ok_or_else(|| missing("graph"))?;
            let sentence = graph
                .get("sentence")
                .and_then(Value::as_str)
                .ok_or_else(|| missing("graph.sentence"))?;
            let compression = v
                .get("compression")
                .and_then(|c| c.get("text"))
                .and_then(Value::as_str)
                .ok_or_else(|| missing("compression.text"))?;
            let id = graph
                .get("id")
                .and_then(id_of)
                .unwrap_or_else(|| record.to_string());
            let source = tokenize(sentence, lowercase);
            let reference = tokenize(compression, lowercase);
            if source.is_empty() || reference.is_empty() {
                return Err(missing("non-empty sentence and compression"));
            }
            out.push(CompressionPair {
                id,
                source,
                references: vec![reference],
            });
            record += 1;
        }
    }
    Ok(out)
}
