use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn echo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_echo-study"))
        .args(args)
        .env_remove("ECHO_LLM_API_KEY")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Value {
    let out = echo(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap_or(Value::Null)
}

fn err(args: &[&str]) -> Value {
    let out = echo(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    serde_json::from_slice(&out.stderr).unwrap()
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn run_all_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let v = ok(&["--study", dir.to_str().unwrap(), "--seed", "9", "run-all", "--template", "diagnosis"]);
        assert_eq!(v["vignettes"], 20);
    }
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (k, v) in &fa {
        assert!(fb[k] == *v, "{k} differs");
    }
    for f in ["report/dem.md", "report/iem.md", "report/omnibus.md", "report/residuals.md", "report/discrepancies.md", "report/radar/patient.json"] {
        assert!(fa.contains_key(f), "{f} missing");
    }
    let omnibus = String::from_utf8(fa["report/omnibus.md"].clone()).unwrap();
    assert!(omnibus.contains("| 44.328 | 32 | 0.072 | 0.258 |"), "{omnibus}");
}

#[test]
fn step_by_step_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    let e = err(&["--study", dir, "aggregate"]);
    assert_eq!(e["error"]["kind"], "missing-artifact");
    assert_eq!(e["error"]["step"], "init");

    ok(&["--study", dir, "init", "hiring"]);
    let v = ok(&["--study", dir, "stakeholders", "generate"]);
    assert!(v["candidates"].as_array().unwrap().len() >= 4);
    ok(&["--study", dir, "stakeholders", "curate", "--keep", "applicant,marginalized-applicants,developer,company"]);
    let e = err(&["--study", dir, "stakeholders", "curate", "--keep", "nobody"]);
    assert_eq!(e["error"]["kind"], "unknown-id");

    let e = err(&["--study", dir, "analyze"]);
    assert_eq!(e["error"]["step"], "vignettes build");
    let v = ok(&["--study", dir, "vignettes", "build"]);
    assert_eq!(v["vignettes"], 20);
    let vignette_files = std::fs::read_dir(tmp.path().join("corpus"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("hiring."))
        .count();
    assert_eq!(vignette_files, 20);

    ok(&["--study", dir, "annotate", "fixtures"]);
    let e = err(&["--study", dir, "analyze"]);
    assert_eq!(e["error"]["kind"], "missing-artifact");
    assert_eq!(e["error"]["step"], "aggregate");
    ok(&["--study", dir, "aggregate"]);

    let csv = tmp.path().join("extra.csv");
    std::fs::write(
        &csv,
        "annotator_id,annotator_kind,vignette_id,harm_1,harm_2,rep_harm_1,rep_harm_2,submitted_at\n\
         late-1,human,hiring.applicant.evaluation,economic-loss,,,,2025-02-01T00:00:00Z\n\
         late-2,human,hiring.applicant.evaluation,made-up,,,,2025-02-01T00:00:00Z\n",
    )
    .unwrap();
    let v = ok(&["--study", dir, "annotate", "import", csv.to_str().unwrap()]);
    assert_eq!(v["accepted"], 1);
    assert_eq!(v["rejected"][0]["row"], 3);
    let v = ok(&["--study", dir, "annotate", "import", csv.to_str().unwrap()]);
    assert_eq!(v["skipped"], true);

    let e = err(&["--study", dir, "analyze"]);
    assert_eq!(e["error"]["kind"], "snapshot-mismatch");
    let v = ok(&["--study", dir, "analyze", "--refresh"]);
    assert_eq!(v["omnibus"].as_array().unwrap().len(), 4);

    let v = ok(&["--study", dir, "report", "--format", "csv"]);
    assert!(v["files"].as_array().unwrap().iter().any(|f| f == "iem.csv"));
    let e = err(&["--study", dir, "report", "--format", "pdf"]);
    assert_eq!(e["error"]["kind"], "unknown-format");

    let export = tmp.path().join("export.csv");
    ok(&["--study", dir, "annotate", "export", "--out", export.to_str().unwrap()]);
    let text = std::fs::read_to_string(&export).unwrap();
    assert!(text.contains("late-1,human,hiring.applicant.evaluation,economic-loss"));

    ok(&["--study", dir, "analyze", "--alpha", "0.05"]);
    let study: Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("study.json")).unwrap()).unwrap();
    assert_eq!(study["params"]["alpha_omnibus"], 0.05);
}

#[test]
fn remote_provider_without_key_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    ok(&["--study", dir, "init", "diagnosis"]);
    let e = err(&["--study", dir, "--provider", "remote", "stakeholders", "generate"]);
    assert_eq!(e["error"]["kind"], "invalid");

    let path = tmp.path().join("study.json");
    let mut study: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    study["provider"] = serde_json::json!({ "endpoint": "http://127.0.0.1:9/v1/chat/completions", "model": "m" });
    std::fs::write(&path, study.to_string()).unwrap();
    let e = err(&["--study", dir, "--provider", "remote", "stakeholders", "generate"]);
    assert_eq!(e["error"]["kind"], "credential");
    assert!(e["error"]["message"].as_str().unwrap().contains("ECHO_LLM_API_KEY"));
}
