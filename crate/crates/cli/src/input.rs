use std::io::BufRead;

use delpath_core::sentence::tokenize;
use serde::Deserialize;
use serde_json::Value;

/// One sentence to compress, before frozen-token resolution.
#[derive(Debug, Clone)]
pub struct InputSentence {
    pub id: String,
    pub tokens: Vec<String>,
    pub freeze: Vec<String>,
    pub freeze_index: Vec<usize>,
}

#[derive(Debug, Deserialize)]
struct JsonInput {
    id: Option<Value>,
    text: Option<String>,
    tokens: Option<Vec<String>>,
    #[serde(default)]
    freeze: Vec<String>,
    #[serde(default)]
    freeze_index: Vec<usize>,
}

/// A bad input line keeps its id so it can be reported in order.
pub type InputLine = Result<InputSentence, (String, String)>;

/// Plain lines are sentences; lines starting with `{` are JSON objects with
/// `text` or `tokens` and optional `id`, `freeze`, `freeze_index`. Ids
/// default to the 1-based line number. Blank lines are skipped.
pub fn read_sentences(reader: impl BufRead, lowercase: bool) -> std::io::Result<Vec<InputLine>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let default_id = (i + 1).to_string();
        if !trimmed.starts_with('{') {
            out.push(Ok(InputSentence {
                id: default_id,
                tokens: tokenize(trimmed, lowercase),
                freeze: Vec::new(),
                freeze_index: Vec::new(),
            }));
            continue;
        }
        out.push(parse_json_line(trimmed, default_id, lowercase));
    }
    Ok(out)
}

fn parse_json_line(line: &str, default_id: String, lowercase: bool) -> InputLine {
    let rec: JsonInput = serde_json::from_str(line)
        .map_err(|e| (default_id.clone(), format!("line {default_id}: {e}")))?;
    let id = match rec.id {
        None => default_id,
        Some(Value::String(s)) => s,
        Some(Value::Number(n)) => n.to_string(),
        Some(other) => return Err((default_id, format!("invalid id {other}"))),
    };
    let tokens = match (rec.tokens, rec.text) {
        (Some(t), _) => {
            if lowercase {
                t.into_iter().map(|s| s.to_lowercase()).collect()
            } else {
                t
            }
        }
        (None, Some(text)) => tokenize(&text, lowercase),
        (None, None) => return Err((id, "record has neither \"text\" nor \"tokens\"".into())),
    };
    let freeze = if lowercase {
        rec.freeze.into_iter().map(|s| s.to_lowercase()).collect()
    } else {
        rec.freeze
    };
    Ok(InputSentence {
        id,
        tokens,
        freeze,
        freeze_index: rec.freeze_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_lines() {
        let src = "I Work work .\n\n{\"id\": \"x\", \"tokens\": [\"A\", \"b\"], \"freeze\": [\"B\"]}\n{\"id\": 7}\n";
        let got = read_sentences(src.as_bytes(), true).unwrap();
        assert_eq!(got.len(), 3);
        let first = got[0].as_ref().unwrap();
        assert_eq!(first.id, "1");
        assert_eq!(first.tokens, ["i", "work", "work", "."]);
        let second = got[1].as_ref().unwrap();
        assert_eq!(second.id, "x");
        assert_eq!(second.tokens, ["a", "b"]);
        assert_eq!(second.freeze, ["b"]);
        assert_eq!(got[2].as_ref().unwrap_err().0, "7");
    }
}
