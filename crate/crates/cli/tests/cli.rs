use std::path::Path;
use std::process::{Command, Output};
use std::thread;

use serde_json::{json, Value};

const EXAMPLE: &str = "i think america is still a fairly crowded country by the way .";

fn delpath(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_delpath"))
        .args(args)
        .env_remove("DELPATH_SCORER_URL")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn records(o: &Output) -> Vec<Value> {
    stdout(o)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

#[test]
fn full_path_table_has_three_columns() {
    let o = delpath(&[
        "compress",
        "--text",
        EXAMPLE,
        "--mode",
        "full-path",
        "--fixture",
        "hash-context",
        "--format",
        "table",
    ]);
    assert!(o.status.success());
    let out = stdout(&o);
    let header = out.lines().nth(1).unwrap();
    let cols: Vec<&str> = header.split('|').map(str::trim).collect();
    assert_eq!(cols, ["Sentence", "Deleted Tokens", "AvgPPL"]);
    // full path ends at one token: 13 nodes, header, rule, id line, footer, blank line
    assert_eq!(out.lines().count(), 13 + 5);
    assert_eq!(
        out.lines()
            .filter(|l| l.trim_start().starts_with("* "))
            .count(),
        1
    );
}

#[test]
fn frozen_token_never_deleted() {
    let o = delpath(&[
        "compress",
        "--text",
        EXAMPLE,
        "--mode",
        "full-path",
        "--fixture",
        "hash-context",
        "--freeze",
        "america",
    ]);
    assert!(o.status.success());
    let rec = &records(&o)[0];
    for node in rec["path"].as_array().unwrap() {
        assert!(!node["deleted"]
            .as_array()
            .unwrap()
            .contains(&json!("america")));
        assert!(node["tokens"]
            .as_array()
            .unwrap()
            .contains(&json!("america")));
    }
    assert_eq!(rec["frozen"], json!([2]));
}

#[test]
fn max_cr_half_of_thirteen_keeps_at_most_six() {
    for fixture in ["hash-context", "zero"] {
        let o = delpath(&[
            "compress",
            "--text",
            EXAMPLE,
            "--fixture",
            fixture,
            "--max-cr",
            "0.5",
        ]);
        assert!(o.status.success());
        let rec = &records(&o)[0];
        assert_eq!(rec["root_len"], 13);
        assert!(rec["final"].as_array().unwrap().len() <= 6);
        assert_eq!(rec["max_cr_unmet"], false);
    }
}

#[test]
fn records_are_self_contained() {
    let o = delpath(&[
        "compress",
        "--text",
        EXAMPLE,
        "--mode",
        "full-path",
        "--fixture",
        "hash-context",
        "--alpha",
        "0.1",
    ]);
    let rec = &records(&o)[0];
    let root: Vec<Value> = rec["path"][0]["tokens"].as_array().unwrap().clone();
    let l = rec["root_len"].as_f64().unwrap();
    for node in rec["path"].as_array().unwrap() {
        let sum =
            node["kept_nll_sum"].as_f64().unwrap() + node["deleted_nll_sum"].as_f64().unwrap();
        assert_eq!((sum / l).exp(), node["avgppl"].as_f64().unwrap());
        let kept: Vec<Value> = node["kept"]
            .as_array()
            .unwrap()
            .iter()
            .map(|i| root[i.as_u64().unwrap() as usize].clone())
            .collect();
        assert_eq!(&kept, node["tokens"].as_array().unwrap());
    }
    let cfg = &rec["config"];
    assert_eq!(cfg["search"]["alpha"], 0.1);
    assert_eq!(cfg["search"]["beta"], 0.04);
    assert_eq!(cfg["search"]["max_lookahead"], 3);
    assert_eq!(cfg["search"]["termination_mode"], "full-path");
    assert_eq!(cfg["scorer"], json!({"fixture": "hash-context"}));
    assert_eq!(rec["terminated_by"], "TokenFloor");
}

#[test]
fn score_passes_bigram_values_through() {
    let dir = tempfile::tempdir().unwrap();
    let table = write(
        dir.path(),
        "t.json",
        r#"{"unigram": {"america": 2.5, ".": 0.75}, "bigram": [["america", ".", -0.25]]}"#,
    );
    let o = delpath(&[
        "score",
        "--text",
        "America .",
        "--bigram-table",
        &table,
        "--json",
    ]);
    assert!(o.status.success());
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["tokens"], json!(["america", "."]));
    assert_eq!(v["nll"], json!([2.5, 0.5]));
    assert_eq!(v["avgppl"].as_f64().unwrap(), (3.0f64 / 2.0).exp());

    let o = delpath(&["score", "--text", "America .", "--bigram-table", &table]);
    assert!(stdout(&o).contains("2.500000"));
    assert!(stdout(&o).contains("AvgPPL"));
}

#[test]
fn usage_errors_exit_two() {
    let cases: &[&[&str]] = &[
        &["score", "--text", "", "--fixture", "zero"],
        &["score", "--text", "   ", "--fixture", "zero"],
        &["compress", "--text", "", "--fixture", "zero"],
        &[
            "compress",
            "--text",
            "a b c",
            "--fixture",
            "zero",
            "--min-cr",
            "0.8",
            "--max-cr",
            "0.5",
        ],
        &[
            "compress",
            "--text",
            "a b c",
            "--fixture",
            "zero",
            "--endpoint",
            "http://127.0.0.1:9",
        ],
        &["compress", "--text", "a b c"],
        &["compress", "--text", "a b c", "--fixture", "nope"],
        &[
            "compress",
            "--text",
            "a b c",
            "--fixture",
            "zero",
            "--max-lookahead",
            "0",
        ],
        &[
            "compress",
            "--text",
            "a b c",
            "--fixture",
            "zero",
            "--mode",
            "sideways",
        ],
    ];
    for args in cases {
        let o = delpath(args);
        assert_eq!(
            o.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn partial_failure_exits_one_and_keeps_order() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(
        dir.path(),
        "in.txt",
        "a b c d\n{\"id\": \"bad\", \"text\": \"a b\", \"freeze_index\": [9]}\n{not json\n{\"id\": \"ok\", \"tokens\": [\"x\", \"y\", \"z\"]}\n",
    );
    let o = delpath(&["compress", "--input", &input, "--fixture", "hash-context"]);
    assert_eq!(o.status.code(), Some(1));
    let recs = records(&o);
    let ids: Vec<&str> = recs.iter().map(|r| r["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["1", "bad", "3", "ok"]);
    assert!(recs[1]["error"].as_str().unwrap().contains('9'));
    assert!(recs[2].get("error").is_some());
    assert!(recs[3].get("path").is_some());
}

#[test]
fn unreachable_scorer_is_a_sentence_failure() {
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let url = format!("http://127.0.0.1:{port}");
    let o = delpath(&[
        "compress",
        "--text",
        "a b c",
        "--endpoint",
        &url,
        "--retries",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("transport"));
}

fn pairs_file(dir: &Path) -> String {
    let lines = [
        json!({"id": "p1", "source": "the cat sat on the mat .", "references": ["the cat sat .", "cat sat on the mat ."]}),
        json!({"id": "p2", "source": "i work work at a company .", "references": ["i work at a company .", "i work ."]}),
        json!({"id": "p3", "source": "america is still a fairly crowded country", "references": ["america is crowded", "america is a crowded country"]}),
        json!({"id": "p4", "source": "she sings with me .", "references": ["she sings .", "she sings ."]}),
        json!({"id": "p5", "source": "by the way it rained all day", "references": ["it rained all day", "it rained"]}),
    ];
    write(
        dir,
        "pairs.jsonl",
        &lines
            .iter()
            .map(Value::to_string)
            .collect::<Vec<_>>()
            .join("\n"),
    )
}

#[test]
fn identical_predictions_score_one_per_reference() {
    let dir = tempfile::tempdir().unwrap();
    let refs = write(
        dir.path(),
        "r.jsonl",
        &json!({"id": 1, "source": "a b c d", "references": ["a b", "a c d"]}).to_string(),
    );
    let preds = write(
        dir.path(),
        "p.jsonl",
        &json!({"id": "1", "prediction": "a b"}).to_string(),
    );
    let o = delpath(&["eval", "--predictions", &preds, "--references", &refs]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["report"]["f1"]["ref_0"], 1.0);
    assert_eq!(v["report"]["f1"].as_object().unwrap().len(), 2);
    assert_eq!(v["report"]["cr"], 0.5);

    let o = delpath(&[
        "eval",
        "--predictions",
        &preds,
        "--references",
        &refs,
        "--format",
        "table",
    ]);
    assert!(stdout(&o).contains("f1 ref_0"));
    assert!(stdout(&o).contains("f1 ref_1"));
}

#[test]
fn missing_prediction_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let refs = pairs_file(dir.path());
    let preds = write(
        dir.path(),
        "p.jsonl",
        &json!({"id": "p1", "prediction": "the cat"}).to_string(),
    );
    let o = delpath(&["eval", "--predictions", &preds, "--references", &refs]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("p2"));
}

#[test]
fn end_to_end_eval_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = pairs_file(dir.path());
    let run = || {
        delpath(&[
            "eval",
            "--dataset",
            &data,
            "--fixture",
            "hash-context",
            "--workers",
            "2",
        ])
    };
    let a = run();
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, run().stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["report"]["n"], 5);
    assert_eq!(v["config"]["search"]["termination_mode"], "terminate");
    assert_eq!(v["report"]["f1"].as_object().unwrap().len(), 2);

    // compress output fed back as predictions gives the same report
    let paths = dir.path().join("paths.jsonl").display().to_string();
    delpath(&[
        "eval",
        "--dataset",
        &data,
        "--fixture",
        "hash-context",
        "--paths-out",
        &paths,
    ]);
    let o = delpath(&["eval", "--predictions", &paths, "--references", &data]);
    let w: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(w["report"], v["report"]);
}

fn health_stub(agg: &'static str) -> String {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    thread::spawn(move || {
        for req in server.incoming_requests() {
            let body = json!({"model": "stub", "agg": agg, "version": 1}).to_string();
            let _ = req.respond(tiny_http::Response::from_string(body));
        }
    });
    url
}

#[test]
fn eval_refuses_mismatched_aggregation() {
    let dir = tempfile::tempdir().unwrap();
    let data = pairs_file(dir.path());
    let url = health_stub("independent-mask-sum");
    let o = delpath(&[
        "eval",
        "--dataset",
        &data,
        "--endpoint",
        &url,
        "--expect-agg",
        "joint-mask-sum",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("independent-mask-sum") && err.contains("joint-mask-sum"),
        "{err}"
    );
    assert!(o.stdout.is_empty());

    let o = delpath(&[
        "eval",
        "--dataset",
        &data,
        "--fixture",
        "zero",
        "--expect-agg",
        "joint-mask-sum",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn endpoint_comes_from_environment() {
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let o = Command::new(env!("CARGO_BIN_EXE_delpath"))
        .args(["compress", "--text", "a b", "--retries", "1"])
        .env("DELPATH_SCORER_URL", format!("http://127.0.0.1:{port}"))
        .output()
        .unwrap();
    // a scorer was found (not a usage error) but it is unreachable
    assert_eq!(o.status.code(), Some(1));
}
