//! Serialized deletion paths.
//!
//! One [`PathRecord`] per input sentence, one JSON object per line. A record
//! is self-contained: node tokens, removed indices, NLL sums and the echoed
//! run configuration are enough to recompute every printed score.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::search::SearchFailure;
use crate::sentence::{DeletionPath, Termination};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub tokens: Vec<String>,
    pub kept: Vec<usize>,
    /// Tokens removed by the step that produced this node.
    pub deleted: Vec<String>,
    pub deleted_indices: Vec<usize>,
    pub avgppl: f64,
    pub kept_nll_sum: f64,
    pub deleted_nll_sum: f64,
    /// Span length of the producing step; 0 for the root.
    pub lookahead: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalized: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passed_threshold: Option<bool>,
}

impl NodeRecord {
    /// `exp((kept + deleted) / root_len)` from the stored sums.
    pub fn recompute_avgppl(&self, root_len: usize) -> f64 {
        ((self.kept_nll_sum + self.deleted_nll_sum) / root_len as f64).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub id: String,
    pub config: Value,
    pub root_len: usize,
    pub frozen: Vec<usize>,
    pub path: Vec<NodeRecord>,
    #[serde(rename = "final")]
    pub final_tokens: Vec<String>,
    pub final_index: usize,
    pub max_cr_unmet: bool,
    pub terminated_by: Termination,
}

impl PathRecord {
    pub fn from_path(path: &DeletionPath, config: Value) -> Self {
        let root = &path.root;
        let root_node = &path.root_node;
        let mut nodes = vec![NodeRecord {
            tokens: root.tokens().to_vec(),
            kept: root_node.kept.clone(),
            deleted: Vec::new(),
            deleted_indices: Vec::new(),
            avgppl: root_node.score.avgppl,
            kept_nll_sum: root_node.score.kept_nll_sum,
            deleted_nll_sum: root_node.score.deleted_nll_sum,
            lookahead: 0,
            penalized: None,
            passed_threshold: None,
        }];
        for step in &path.steps {
            let n = &step.result;
            nodes.push(NodeRecord {
                tokens: n.tokens(root).into_iter().map(String::from).collect(),
                kept: n.kept.clone(),
                deleted: root
                    .select(&step.removed_root_indices)
                    .into_iter()
                    .map(String::from)
                    .collect(),
                deleted_indices: step.removed_root_indices.clone(),
                avgppl: n.score.avgppl,
                kept_nll_sum: n.score.kept_nll_sum,
                deleted_nll_sum: n.score.deleted_nll_sum,
                lookahead: step.lookahead_used,
                penalized: Some(step.penalized_score),
                passed_threshold: Some(step.passed_threshold),
            });
        }
        Self {
            id: root.id().to_string(),
            config,
            root_len: root.len(),
            frozen: path.frozen.iter().copied().collect(),
            final_tokens: nodes[path.selected].tokens.clone(),
            final_index: path.selected,
            max_cr_unmet: path.max_cr_unmet,
            terminated_by: path.terminated_by,
            path: nodes,
        }
    }
}

/// Emitted instead of a [`PathRecord`] when a sentence fails.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub id: String,
    pub error: String,
    /// Steps completed before the failure.
    pub completed_steps: usize,
}

impl ErrorRecord {
    pub fn new(id: impl Into<String>, failure: &SearchFailure) -> Self {
        Self {
            id: id.into(),
            error: failure.error.to_string(),
            completed_steps: failure.steps.len(),
        }
    }
}

/// Three-column table: Sentence, Deleted Tokens, AvgPPL. The selected node
/// is marked with `*`.
pub fn render_table(record: &PathRecord) -> String {
    let rows: Vec<[String; 3]> = record
        .path
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let mark = if i == record.final_index { "* " } else { "  " };
            [
                format!("{mark}{}", n.tokens.join(" ")),
                if n.deleted.is_empty() {
                    "-".to_string()
                } else {
                    n.deleted.join(" ")
                },
                format!("{:.2}", n.avgppl),
            ]
        })
        .collect();
    let header = [
        "  Sentence".to_string(),
        "Deleted Tokens".to_string(),
        "AvgPPL".to_string(),
    ];
    let w0 = rows
        .iter()
        .chain([&header])
        .map(|r| r[0].chars().count())
        .max()
        .unwrap_or(0);
    let w1 = rows
        .iter()
        .chain([&header])
        .map(|r| r[1].chars().count())
        .max()
        .unwrap_or(0);
    let w2 = rows
        .iter()
        .chain([&header])
        .map(|r| r[2].chars().count())
        .max()
        .unwrap_or(0);
    let line = |r: &[String; 3]| format!("{:>w0$} | {:^w1$} | {:>w2$}\n", r[0], r[1], r[2]);
    let mut out = line(&header);
    out.push_str(&format!(
        "{}-+-{}-+-{}\n",
        "-".repeat(w0),
        "-".repeat(w1),
        "-".repeat(w2)
    ));
    for r in &rows {
        out.push_str(&line(r));
    }
    out.push_str(&format!(
        "terminated by {}\n",
        record.terminated_by.as_str()
    ));
    out
}
