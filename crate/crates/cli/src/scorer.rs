use std::fs::File;
use std::io::BufReader;
use std::time::Duration;

use delpath_core::client::{RemoteScorer, RetryPolicy, ScorerEndpoint, ENDPOINT_ENV};
use delpath_core::scoring::fixture::{self, BigramScorer};
use delpath_core::TokenScorer;
use serde::Serialize;

use crate::args::ScorerArgs;
use crate::UsageError;

/// Which scorer a run used, echoed into every output record.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerSource {
    Endpoint { url: String, max_batch: usize },
    Fixture(String),
    BigramTable(String),
}

pub enum Scorer {
    Remote(RemoteScorer),
    Local(Box<dyn TokenScorer>),
}

impl Scorer {
    pub fn as_dyn(&self) -> &dyn TokenScorer {
        match self {
            Scorer::Remote(r) => r,
            Scorer::Local(b) => b.as_ref(),
        }
    }

    pub fn remote(&self) -> Option<&RemoteScorer> {
        match self {
            Scorer::Remote(r) => Some(r),
            Scorer::Local(_) => None,
        }
    }
}

/// Resolves the one scorer source. The endpoint variable is consulted only
/// when no source flag is given.
pub fn build(args: &ScorerArgs) -> anyhow::Result<(Scorer, ScorerSource)> {
    let given = [
        args.endpoint.is_some(),
        args.fixture.is_some(),
        args.bigram_table.is_some(),
    ]
    .iter()
    .filter(|b| **b)
    .count();
    if given > 1 {
        return Err(
            UsageError::new("choose exactly one of --endpoint, --fixture, --bigram-table").into(),
        );
    }
    if let Some(name) = &args.fixture {
        let scorer = fixture::named(name).ok_or_else(|| {
            UsageError::new(format!(
                "unknown fixture {name:?}; available: {}",
                fixture::NAMED.join(", ")
            ))
        })?;
        return Ok((Scorer::Local(scorer), ScorerSource::Fixture(name.clone())));
    }
    if let Some(path) = &args.bigram_table {
        let file =
            File::open(path).map_err(|e| UsageError::new(format!("{}: {e}", path.display())))?;
        let table = BigramScorer::from_json_reader(BufReader::new(file))
            .map_err(|e| UsageError::new(format!("{}: {e}", path.display())))?;
        return Ok((
            Scorer::Local(Box::new(table)),
            ScorerSource::BigramTable(path.display().to_string()),
        ));
    }
    let url = match &args.endpoint {
        Some(u) => u.clone(),
        None => std::env::var(ENDPOINT_ENV)
            .ok()
            .filter(|u| !u.is_empty())
            .ok_or_else(|| {
                UsageError::new(format!(
                "no scorer: pass --endpoint, --fixture or --bigram-table, or set {ENDPOINT_ENV}"
            ))
            })?,
    };
    if args.max_batch == 0 {
        return Err(UsageError::new("--max-batch must be at least 1").into());
    }
    let mut endpoint = ScorerEndpoint::new(url);
    endpoint.max_batch = args.max_batch;
    endpoint.timeout = Duration::from_secs(args.timeout);
    endpoint.retry = RetryPolicy {
        max_attempts: args.retries.max(1),
        ..RetryPolicy::default()
    };
    let source = ScorerSource::Endpoint {
        url: endpoint.base_url.clone(),
        max_batch: endpoint.max_batch,
    };
    Ok((Scorer::Remote(RemoteScorer::new(endpoint)?), source))
}
