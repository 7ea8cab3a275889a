use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use delpath_core::client::Aggregation;
use delpath_core::eval::{self, LoadOptions};
use delpath_core::records::{render_table, ErrorRecord};
use delpath_core::scoring::{breakdown, validate_nlls};
use delpath_core::search::{compress_batch, Job, SearchFailure};
use delpath_core::sentence::tokenize;
use delpath_core::{
    make_root, CompressionPair, DeletionPath, Error, F1Mode, PathRecord, ScoreCache, SearchConfig,
    TerminationMode,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{
    AggArg, CompressArgs, DatasetFormat, EvalArgs, F1ModeArg, OutputFormat, ReportFormat,
    ScoreArgs, SearchArgs,
};
use crate::input::{read_sentences, InputLine, InputSentence};
use crate::scorer::{self, Scorer, ScorerSource};
use crate::UsageError;

/// Everything that determines a run's results. Embedded in every record.
#[derive(Debug, Clone, Serialize)]
struct RunConfig<'a> {
    search: &'a SearchConfig,
    scorer: &'a ScorerSource,
    lowercase: bool,
    format: &'static str,
    input: Option<String>,
    output: Option<String>,
}

fn base_config(args: &SearchArgs) -> anyhow::Result<SearchConfig> {
    let cfg = args.config();
    cfg.validate().map_err(|e| UsageError::new(e.to_string()))?;
    Ok(cfg)
}

fn workers(n: usize) -> usize {
    if n > 0 {
        n
    } else {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    }
}

fn open_output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Result of compressing one input sentence.
struct Outcome {
    id: String,
    config: SearchConfig,
    result: Result<DeletionPath, SearchFailure>,
}

/// Resolves frozen tokens per sentence, then compresses everything on one
/// shared cache. Outcomes come back in input order.
fn compress_all(
    inputs: Vec<InputLine>,
    base: &SearchConfig,
    search: &SearchArgs,
    lowercase: bool,
    scorer: &Scorer,
    n_workers: usize,
) -> Vec<Outcome> {
    let global_freeze: Vec<String> = search
        .freeze
        .iter()
        .map(|t| {
            if lowercase {
                t.to_lowercase()
            } else {
                t.clone()
            }
        })
        .collect();

    let mut slots: Vec<Option<Outcome>> = Vec::with_capacity(inputs.len());
    let mut jobs = Vec::new();
    let mut job_slot = Vec::new();
    for line in inputs {
        let sentence = match line {
            Ok(s) => s,
            Err((id, message)) => {
                slots.push(Some(Outcome {
                    id,
                    config: base.clone(),
                    result: Err(Error::InvalidConfig(message).into()),
                }));
                continue;
            }
        };
        let InputSentence {
            id,
            tokens,
            freeze,
            freeze_index,
        } = sentence;
        let texts: Vec<String> = global_freeze.iter().cloned().chain(freeze).collect();
        let indices: Vec<usize> = search
            .freeze_index
            .iter()
            .copied()
            .chain(freeze_index)
            .collect();
        match make_root(id.clone(), tokens, &texts, &indices, search.strict_freeze) {
            Ok(resolved) => {
                for w in &resolved.warnings {
                    eprintln!("warning: sentence {id}: {w}");
                }
                let mut config = base.clone();
                config.frozen_root_indices = resolved.frozen;
                job_slot.push(slots.len());
                slots.push(None);
                jobs.push(Job {
                    root: resolved.root,
                    config,
                });
            }
            Err(e) => slots.push(Some(Outcome {
                id,
                config: base.clone(),
                result: Err(e.into()),
            })),
        }
    }

    let cache = ScoreCache::new();
    let results = compress_batch(&jobs, scorer.as_dyn(), &cache, n_workers);
    for ((job, result), slot) in jobs.into_iter().zip(results).zip(job_slot) {
        slots[slot] = Some(Outcome {
            id: job.root.id().to_string(),
            config: job.config,
            result,
        });
    }
    slots
        .into_iter()
        .map(|s| s.expect("every slot filled"))
        .collect()
}

fn echo(run: &RunConfig<'_>, search: &SearchConfig) -> Value {
    let mut v = serde_json::to_value(RunConfig {
        search,
        ..run.clone()
    })
    .expect("config serializes");
    // frozen indices are per sentence; the record's own "frozen" field carries them too
    v["search"]["frozen_root_indices"] = json!(search.frozen_root_indices);
    v
}

fn write_outcomes(
    out: &mut dyn Write,
    outcomes: &[Outcome],
    run: &RunConfig<'_>,
    format: OutputFormat,
) -> anyhow::Result<usize> {
    let mut failed = 0;
    for o in outcomes {
        match (&o.result, format) {
            (Ok(path), OutputFormat::Jsonl) => {
                let rec = PathRecord::from_path(path, echo(run, &o.config));
                writeln!(out, "{}", serde_json::to_string(&rec)?)?;
            }
            (Ok(path), OutputFormat::Table) => {
                let rec = PathRecord::from_path(path, Value::Null);
                writeln!(out, "# {}", o.id)?;
                write!(out, "{}", render_table(&rec))?;
                if rec.max_cr_unmet {
                    writeln!(out, "max_cr not reached")?;
                }
                writeln!(out)?;
            }
            (Err(failure), _) => {
                failed += 1;
                eprintln!("error: sentence {}: {failure}", o.id);
                if format == OutputFormat::Jsonl {
                    writeln!(
                        out,
                        "{}",
                        serde_json::to_string(&ErrorRecord::new(o.id.clone(), failure))?
                    )?;
                }
            }
        }
    }
    out.flush()?;
    Ok(failed)
}

pub fn compress(args: CompressArgs) -> anyhow::Result<i32> {
    let base = base_config(&args.search)?;
    let lowercase = !args.tokens.no_lowercase;
    let inputs = match (&args.text, &args.input) {
        (Some(text), _) => {
            let tokens = tokenize(text, lowercase);
            if tokens.is_empty() {
                return Err(UsageError::new("--text is empty").into());
            }
            vec![Ok(InputSentence {
                id: "1".into(),
                tokens,
                freeze: Vec::new(),
                freeze_index: Vec::new(),
            })]
        }
        (None, Some(path)) => {
            let f = File::open(path)
                .map_err(|e| UsageError::new(format!("{}: {e}", path.display())))?;
            read_sentences(BufReader::new(f), lowercase)?
        }
        (None, None) => return Err(UsageError::new("give --text or --input").into()),
    };
    let (scorer, source) = scorer::build(&args.scorer)?;
    let run = RunConfig {
        search: &base,
        scorer: &source,
        lowercase,
        format: match args.format {
            OutputFormat::Jsonl => "jsonl",
            OutputFormat::Table => "table",
        },
        input: args.input.as_ref().map(|p| p.display().to_string()),
        output: args.output.as_ref().map(|p| p.display().to_string()),
    };
    let outcomes = compress_all(
        inputs,
        &base,
        &args.search,
        lowercase,
        &scorer,
        workers(args.workers),
    );
    let mut out = open_output(args.output.as_deref())?;
    let failed = write_outcomes(out.as_mut(), &outcomes, &run, args.format)?;
    Ok(if failed > 0 { 1 } else { 0 })
}

pub fn score(args: ScoreArgs) -> anyhow::Result<i32> {
    let lowercase = !args.tokens.no_lowercase;
    let tokens = tokenize(&args.text, lowercase);
    if tokens.is_empty() {
        return Err(UsageError::new("--text is empty").into());
    }
    let (scorer, _) = scorer::build(&args.scorer)?;
    let refs: Vec<&str> = tokens.iter().map(String::as_str).collect();
    let nll = scorer.as_dyn().score(&refs)?;
    validate_nlls(tokens.len(), &nll)?;
    let avgppl = breakdown(&nll, &[], &nll).avgppl;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    if args.json {
        writeln!(
            out,
            "{}",
            json!({ "tokens": tokens, "nll": nll, "avgppl": avgppl })
        )?;
    } else {
        let w = tokens
            .iter()
            .map(|t| t.chars().count())
            .max()
            .unwrap_or(0)
            .max(5);
        for (t, n) in tokens.iter().zip(&nll) {
            writeln!(out, "{t:<w$}  {n:.6}")?;
        }
        writeln!(out, "{:<w$}  {avgppl:.6}", "AvgPPL")?;
    }
    Ok(0)
}

pub fn eval(args: EvalArgs) -> anyhow::Result<i32> {
    let lowercase = !args.tokens.no_lowercase;
    let mode = match args.f1_mode {
        F1ModeArg::Multiset => F1Mode::Multiset,
        F1ModeArg::Positional => F1Mode::Positional,
    };
    let opts = LoadOptions {
        lowercase,
        strict: false,
    };
    let mut partial = false;

    let (pairs, predictions, config) = if let Some(pred_path) = &args.predictions {
        let ref_path = args
            .references
            .as_ref()
            .expect("clap requires --references");
        let loaded = eval::load_jsonl(ref_path, &opts)
            .with_context(|| format!("reading {}", ref_path.display()))?;
        for e in &loaded.errors {
            eprintln!("warning: {}: {e}", ref_path.display());
            partial = true;
        }
        let f =
            File::open(pred_path).with_context(|| format!("reading {}", pred_path.display()))?;
        let predictions = eval::read_predictions(BufReader::new(f), lowercase)?;
        let config = json!({
            "predictions": pred_path.display().to_string(),
            "references": ref_path.display().to_string(),
            "lowercase": lowercase,
        });
        (loaded.pairs, predictions, config)
    } else if let Some(data_path) = &args.dataset {
        let pairs = match args.dataset_format {
            DatasetFormat::Jsonl => {
                let mut loaded = eval::load_jsonl(data_path, &opts)?;
                for e in &loaded.errors {
                    eprintln!("warning: {}: {e}", data_path.display());
                    partial = true;
                }
                if let Some(n) = args.first_n {
                    loaded.pairs.truncate(n);
                }
                loaded.pairs
            }
            DatasetFormat::Google => eval::load_google_dataset(data_path, args.first_n, lowercase)?,
        };
        let (predictions, config, failed) = end_to_end(&args, &pairs, lowercase)?;
        partial |= failed > 0;
        (pairs, predictions, config)
    } else {
        return Err(UsageError::new("give --predictions with --references, or --dataset").into());
    };

    // sentences that failed to compress are reported, not scored
    let scored: Vec<CompressionPair> = if args.dataset.is_some() {
        pairs
            .into_iter()
            .filter(|p| predictions.contains_key(&p.id))
            .collect()
    } else {
        pairs
    };
    let report = eval::evaluate(&scored, &predictions, mode)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match args.format {
        ReportFormat::Json => writeln!(out, "{}", json!({ "config": config, "report": report }))?,
        ReportFormat::Table => write!(out, "{}", report.render_table())?,
    }
    Ok(if partial { 1 } else { 0 })
}

fn end_to_end(
    args: &EvalArgs,
    pairs: &[CompressionPair],
    lowercase: bool,
) -> anyhow::Result<(HashMap<String, Vec<String>>, Value, usize)> {
    let mut base = base_config(&args.search)?;
    base.termination_mode = TerminationMode::Terminate;
    let (scorer, source) = scorer::build(&args.scorer)?;
    if let Some(expected) = args.expect_agg {
        let expected = match expected {
            AggArg::JointMaskSum => Aggregation::JointMaskSum,
            AggArg::IndependentMaskSum => Aggregation::IndependentMaskSum,
        };
        let remote = scorer
            .remote()
            .ok_or_else(|| UsageError::new("--expect-agg needs a scoring server"))?;
        let health = remote.health().context("scorer health check")?;
        if health.agg != expected {
            anyhow::bail!(
                "scorer {} aggregates word pieces with {}, expected {expected}; restart the server with the matching mode or change --expect-agg",
                health.model,
                health.agg
            );
        }
    }
    let inputs: Vec<InputLine> = pairs
        .iter()
        .map(|p| {
            Ok(InputSentence {
                id: p.id.clone(),
                tokens: p.source.clone(),
                freeze: Vec::new(),
                freeze_index: Vec::new(),
            })
        })
        .collect();
    let outcomes = compress_all(
        inputs,
        &base,
        &args.search,
        lowercase,
        &scorer,
        workers(args.workers),
    );
    let run = RunConfig {
        search: &base,
        scorer: &source,
        lowercase,
        format: "jsonl",
        input: args.dataset.as_ref().map(|p| p.display().to_string()),
        output: args.paths_out.as_ref().map(|p| p.display().to_string()),
    };
    let failed = match &args.paths_out {
        Some(p) => write_outcomes(
            open_output(Some(p))?.as_mut(),
            &outcomes,
            &run,
            OutputFormat::Jsonl,
        )?,
        None => {
            let n = outcomes.iter().filter(|o| o.result.is_err()).count();
            for o in outcomes
                .iter()
                .filter_map(|o| o.result.as_ref().err().map(|e| (&o.id, e)))
            {
                eprintln!("error: sentence {}: {}", o.0, o.1);
            }
            n
        }
    };
    let predictions = outcomes
        .iter()
        .filter_map(|o| {
            o.result.as_ref().ok().map(|p| {
                (
                    o.id.clone(),
                    p.selected_tokens().into_iter().map(String::from).collect(),
                )
            })
        })
        .collect();
    let mut config = serde_json::to_value(&run)?;
    config["dataset_format"] = json!(match args.dataset_format {
        DatasetFormat::Jsonl => "jsonl",
        DatasetFormat::Google => "google",
    });
    config["first_n"] = json!(args.first_n);
    Ok((predictions, config, failed))
}
