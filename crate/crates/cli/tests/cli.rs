use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_wrapsmith"));
    for (k, _) in std::env::vars() {
        if k.starts_with("WRAPSMITH_") {
            c.env_remove(k);
        }
    }
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_record(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("{e}: {text}"))
}

fn write_case(dir: &Path, website: &str, pages: &[(&str, &[&str])]) {
    let case = json!({
        "domain": "book",
        "website": website,
        "attribute": "author",
        "instruction": "Please extract the author of the book.",
        "root": "corpus",
        "pages": pages.iter().map(|(id, gold)| json!({
            "id": id, "html_path": format!("{id}.html"), "gold": gold,
        })).collect::<Vec<_>>(),
    });
    fs::write(
        dir.join(format!("book-{website}-author.json")),
        case.to_string(),
    )
    .unwrap();
}

fn write_results(dir: &Path, website: &str, pages: &[(&str, &[&str])]) {
    let res = json!({
        "case_id": format!("book-{website}-author"),
        "pages": pages.iter().map(|(id, values)| json!({
            "page": id,
            "result": {"values": values, "status": if values.is_empty() { "no_match" } else { "ok" }},
        })).collect::<Vec<_>>(),
    });
    fs::write(
        dir.join(format!("book-{website}-author.json")),
        res.to_string(),
    )
    .unwrap();
}

type Pages<'a> = &'a [(&'a str, &'a [&'a str])];

#[test]
fn eval_on_hand_written_results() {
    let tmp = tempfile::tempdir().unwrap();
    let (cases, results) = (tmp.path().join("cases"), tmp.path().join("results"));
    fs::create_dir_all(&cases).unwrap();
    fs::create_dir_all(&results).unwrap();
    // (website, gold per page, extracted per page); one case per label.
    let table: &[(&str, Pages, Pages)] = &[
        (
            "a",
            &[("1", &["x"]), ("2", &["y"])],
            &[("1", &["x"]), ("2", &["y"])],
        ),
        ("b", &[("1", &["a", "b"])], &[("1", &["a"])]),
        ("c", &[("1", &["a"])], &[("1", &[])]),
        ("d", &[("1", &[])], &[("1", &["z"])]),
        ("e", &[("1", &["a", "b"])], &[("1", &["a", "c"])]),
        ("f", &[("1", &["a"])], &[("1", &["a", "c"])]),
    ];
    for (site, gold, extracted) in table {
        write_case(&cases, site, gold);
        write_results(&results, site, extracted);
    }
    let stdout = ok(
        tmp.path(),
        &[
            "eval",
            "--results",
            "results",
            "--cases",
            "cases",
            "--out",
            "report.tsv",
            "--model",
            "m",
            "--method",
            "x",
        ],
    );
    // Labels: Correct, Prec, Unex, Over, Else, Reca, one each.
    // Macro P over defined cases: (1 + 1 + 0 + .5 + .5) / 5.
    // Macro R: (1 + .5 + 0 + .5 + 1) / 5.
    // Macro F1: (1 + 2/3 + 0 + 0 + .5 + 2/3) / 6 = 0.47222.
    let expected = "model\tmethod\tCorrect\tPrec\tReca\tUnex\tOver\tElse\tP\tR\tF1\n\
                    m\tx\t16.67\t16.67\t16.67\t16.67\t16.67\t16.67\t60.00\t60.00\t47.22\n";
    assert_eq!(
        fs::read_to_string(tmp.path().join("report.tsv")).unwrap(),
        expected
    );
    assert!(stdout.contains("Correct ratio: 0.1667 over 6 cases"));
}

#[test]
fn unreachable_http_backend_is_a_backend_error() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &["fixture", "--out", "fx", "--websites", "1", "--pages", "3"],
    );
    ok(
        d,
        &[
            "prepare",
            "--manifest",
            "fx/manifest.json",
            "--out",
            "cases",
        ],
    );
    fs::write(
        d.join("http.json"),
        json!({
            "kind": "http",
            "endpoint": "http://127.0.0.1:9/v1/chat/completions",
            "credential_env": "WRAPSMITH_TEST_CREDENTIAL",
            "timeout_secs": 2,
        })
        .to_string(),
    )
    .unwrap();
    let args = [
        "generate",
        "--cases",
        "cases",
        "--backend",
        "http.json",
        "--out",
        "cand",
    ];
    let out = bin()
        .current_dir(d)
        .args(args)
        .env("WRAPSMITH_TEST_CREDENTIAL", "not-a-real-key")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["error"]["kind"], "backend");
    let emitted = fs::read_dir(d.join("cand")).map_or(0, |r| {
        r.filter(|e| {
            e.as_ref()
                .is_ok_and(|e| e.path().extension().is_some_and(|x| x == "json"))
        })
        .count()
    });
    assert_eq!(emitted, 0);

    // Without the credential variable the backend cannot be built.
    let out = run(d, &args);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_record(&out)["error"]["message"]
        .as_str()
        .unwrap()
        .contains("WRAPSMITH_TEST_CREDENTIAL"));
}

#[test]
fn usage_and_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = run(d, &["generate", "--cases"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_record(&out)["error"]["kind"], "usage");
    let out = run(d, &["prepare", "--manifest", "missing.json", "--out", "c"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_record(&out)["error"]["kind"], "data");
    assert!(run(d, &["--help"]).status.success());
}

fn pipeline(d: &Path, out: &str, extra: &[&str]) -> String {
    let p = |s: &str| format!("{out}/{s}");
    let mut generate = vec![
        "generate",
        "--cases",
        "cases",
        "--backend",
        "fx/backend.json",
        "--jobs",
        "3",
    ];
    let cand = p("cand");
    generate.extend(["--out", &cand]);
    generate.extend(extra);
    ok(d, &generate);
    ok(
        d,
        &["synthesize", "--candidates", &cand, "--out", &p("seq")],
    );
    ok(
        d,
        &[
            "run",
            "--sequences",
            &p("seq"),
            "--cases",
            "cases",
            "--out",
            &p("res"),
        ],
    );
    let report = ok(
        d,
        &[
            "eval",
            "--results",
            &p("res"),
            "--cases",
            "cases",
            "--out",
            &p("report.tsv"),
        ],
    );
    ok(
        d,
        &[
            "analyze",
            "--traces",
            &cand,
            "--sequences",
            &p("seq"),
            "--out",
            &p("stats"),
        ],
    );
    report
}

fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn full_pipeline_on_fixture_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("settings.json"), r#"{"seed": 4}"#).unwrap();
    ok(
        d,
        &[
            "fixture",
            "--out",
            "fx",
            "--websites",
            "4",
            "--pages",
            "6",
            "--config",
            "settings.json",
        ],
    );
    ok(
        d,
        &[
            "prepare",
            "--manifest",
            "fx/manifest.json",
            "--out",
            "cases",
            "--config",
            "settings.json",
        ],
    );

    let report = pipeline(d, "a", &["--config", "settings.json"]);
    assert!(
        report.contains("Correct ratio: 1.0000 over 8 cases"),
        "{report}"
    );
    pipeline(d, "b", &["--config", "settings.json"]);
    assert_eq!(tree_bytes(&d.join("a")), tree_bytes(&d.join("b")));

    // A second run over the same output skips every case and changes nothing.
    let before = tree_bytes(&d.join("a"));
    let again = ok(
        d,
        &[
            "generate",
            "--cases",
            "cases",
            "--backend",
            "fx/backend.json",
            "--out",
            "a/cand",
            "--config",
            "settings.json",
        ],
    );
    assert!(again.contains("generated 0 cases, skipped 8"));
    let forced = bin()
        .current_dir(d)
        .args([
            "generate",
            "--cases",
            "cases",
            "--backend",
            "fx/backend.json",
            "--out",
            "a/cand",
            "--force",
        ])
        .env("WRAPSMITH_SEED", "4")
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&forced.stdout).contains("generated 8 cases"));
    assert_eq!(before, tree_bytes(&d.join("a")));

    let trace_dir = d.join("a/cand/traces/book-harbor-title");
    let first = fs::read_dir(&trace_dir)
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let replay = ok(d, &["replay", "--trace", first.to_str().unwrap()]);
    assert!(replay.contains("all match"));
}
