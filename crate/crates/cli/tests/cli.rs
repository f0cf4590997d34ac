use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::mpsc;
use std::thread;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures/synthetic60")
        .join(name)
}

fn flare(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flare"))
        .args(args)
        .env_remove("FLARE_LLM_URL")
        .env_remove("FLARE_LLM_TOKEN")
        .output()
        .expect("spawn flare")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn pipeline(out: &Path) -> Output {
    flare(&[
        "pipeline",
        "--corpus",
        s(&fixture("corpus.jsonl")),
        "--qa",
        s(&fixture("qa.jsonl")),
        "--oracle",
        s(&fixture("oracle.jsonl")),
        "--out-dir",
        s(out),
    ])
}

#[test]
fn pipeline_writes_sweep_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = pipeline(dir.path());
    assert!(out.status.success(), "{}", stderr(&out));

    let sweep = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<_> = sweep.lines().collect();
    assert_eq!(lines[0], "policy,alpha,accuracy,mean_steps,total_steps,n");
    assert_eq!(lines.len(), 7);
    for (line, alpha) in lines[1..].iter().zip(["0.0", "0.2", "0.4", "0.6", "0.8", "1.0"]) {
        assert!(line.starts_with(&format!("flare:alpha={alpha},{alpha},")), "{line}");
    }

    let baselines = fs::read_to_string(dir.path().join("baselines.csv")).unwrap();
    assert!(baselines.contains("\nstatic:multi,,1.000,3.0,90,30\n"), "{baselines}");
    assert!(baselines.contains("\nadaptive_rag,,"));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["settings"]["seed"], 42);
    assert_eq!(manifest["settings"]["hash_seed"], 42);
    assert_eq!(manifest["inputs"]["oracle"]["sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["artifacts"]["sweep.csv"].is_string());
    assert_eq!(manifest["counts"]["eval_questions"], 30);

    let log = fs::read_to_string(dir.path().join("query_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 30 * 10);
}

#[test]
fn pipeline_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(pipeline(a.path()).status.success());
    assert!(pipeline(b.path()).status.success());
    for name in ["sweep.csv", "baselines.csv", "coc.weights", "roc.weights", "query_log.jsonl"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn pipeline_reads_config_file_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let config = serde_json::json!({
        "corpus": fixture("corpus.jsonl"),
        "qa": fixture("qa.jsonl"),
        "oracle": fixture("oracle.jsonl"),
        "out_dir": "out",
        "alphas": [0.0, 1.0],
        "epochs": 5,
    });
    fs::write(&cfg, config.to_string()).unwrap();
    let out = flare(&["pipeline", "--config", s(&cfg), "--alphas", "0,0.5,1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let sweep = fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 4);
    let manifest = fs::read_to_string(dir.path().join("out/manifest.json")).unwrap();
    assert!(manifest.contains("\"epochs\": 5"));
}

#[test]
fn bundled_fixture_matches_generator() {
    let dir = tempfile::tempdir().unwrap();
    let out = flare(&["synth", "--out", s(dir.path()), "--n", "60", "--seed", "42"]);
    assert!(out.status.success(), "{}", stderr(&out));
    for name in ["corpus.jsonl", "qa.jsonl", "oracle.jsonl"] {
        assert_eq!(
            fs::read(dir.path().join(name)).unwrap(),
            fs::read(fixture(name)).unwrap(),
            "{name} drifted from the generator"
        );
    }
}

#[test]
fn mock_answerer_without_oracle_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = flare(&[
        "pipeline",
        "--corpus",
        s(&fixture("corpus.jsonl")),
        "--qa",
        s(&fixture("qa.jsonl")),
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("oracle required for mock answerer"), "{}", stderr(&out));
}

#[test]
fn exit_codes() {
    let out = flare(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("pipeline"));
    assert_eq!(flare(&["--version"]).status.code(), Some(0));
    assert_eq!(flare(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(flare(&["index", "search", "--index", "/nonexistent/index.json", "--query", "x"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("qa.jsonl");
    fs::write(&bad, "{\"id\":\"q1\",\"question\":\"?\",\"answers\":[],\"origin\":\"single_hop\",\"dataset\":\"x\"}\n").unwrap();
    let out = flare(&["ingest", "--qa", s(&bad), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("q1: empty answers"), "{}", stderr(&out));
}

#[test]
fn index_build_and_search() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    fs::write(
        &corpus,
        concat!(
            "{\"id\":\"d1\",\"title\":\"Cats\",\"text\":\"the cat sat\"}\n",
            "{\"id\":\"d2\",\"title\":\"Dogs\",\"text\":\"the dog ran\"}\n",
            "{\"id\":\"d3\",\"title\":\"Pets\",\"text\":\"a cat and a dog\"}\n",
        ),
    )
    .unwrap();
    let index = dir.path().join("index.json");
    let out = flare(&["index", "build", "--corpus", s(&corpus), "--out", s(&index)]);
    assert!(out.status.success(), "{}", stderr(&out));

    let out = flare(&["index", "search", "--index", s(&index), "--query", "cat", "--k", "5"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let rows: Vec<(&str, f64)> = text
        .lines()
        .map(|l| {
            let (id, score) = l.split_once('\t').unwrap();
            assert_eq!(score.split('.').nth(1).unwrap().len(), 6, "{l}");
            (id, score.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), ["d1", "d3"]);
    assert!(rows[0].1 > rows[1].1 && rows[1].1 > 0.0);
}

#[test]
fn label_train_route_execute() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let (qa, corpus, oracle) = (fixture("qa.jsonl"), fixture("corpus.jsonl"), fixture("oracle.jsonl"));
    let (coc, roc, roc_json) = (p("coc.weights"), p("roc.weights"), p("roc.json"));
    let common = ["--qa", s(&qa), "--corpus", s(&corpus), "--oracle", s(&oracle)];
    for (kind, out) in [("cost", p("cost.jsonl")), ("reliability", p("rel.jsonl"))] {
        let mut args = vec!["label", kind, "--out", s(&out)];
        args.extend(common);
        let o = flare(&args);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert!(p("cost.exclusions.jsonl").exists());
    let cost = fs::read_to_string(p("cost.jsonl")).unwrap();
    assert_eq!(cost.lines().count(), 60);

    for (mode, labels, out) in [
        ("cost", p("cost.jsonl"), coc.clone()),
        ("reliability", p("rel.jsonl"), roc.clone()),
    ] {
        let o = flare(&[
            "train", "--labels", s(&labels), "--qa", s(&fixture("qa.jsonl")), "--mode", mode,
            "--out", s(&out), "--dim", "4096", "--json", s(&out.with_extension("json")),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }

    let qa = fs::read_to_string(fixture("qa.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(qa.lines().next().unwrap()).unwrap();
    let question = first["question"].as_str().unwrap();

    let mut args = vec![
        "route", "--coc", s(&coc), "--roc", s(&roc_json), "--alpha", "0.5",
        "--query", question, "--execute",
    ];
    args.extend(common);
    let o = flare(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("strategy\t"), "{text}");
    assert_eq!(text.matches("logit=").count(), 3);
    let answer = text.lines().find_map(|l| l.strip_prefix("answer\t")).unwrap();
    let gold = first["answers"][0].as_str().unwrap();
    assert!(!answer.is_empty() && !gold.is_empty());
    assert!(text.contains("\nsteps\t"));

    let o = flare(&[
        "route", "--coc", s(&p("coc.weights")), "--roc", s(&p("roc.weights")), "--alpha", "1.5",
        "--query", question,
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("alpha must be in [0,1]"), "{}", stderr(&o));

    let o = flare(&[
        "eval", "sweep", "--coc", s(&p("coc.weights")), "--roc", s(&p("roc.weights")),
        "--alphas", "1,0", "--out", s(&p("sweep.csv")), "--qa", s(&fixture("qa.jsonl")),
        "--corpus", s(&fixture("corpus.jsonl")), "--oracle", s(&fixture("oracle.jsonl")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let sweep = fs::read_to_string(p("sweep.csv")).unwrap();
    let alphas: Vec<_> = sweep.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(alphas, ["0.0", "1.0"]);
    assert!(p("sweep.log.jsonl").exists());
}

/// Serve `responses` in order, one per connection, and report request bodies
/// and authorization headers back to the test.
fn stub_server(responses: Vec<String>) -> (String, mpsc::Receiver<(String, Option<String>)>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/complete", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (stream, text) in listener.incoming().zip(responses) {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0;
            let mut auth = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap_or((line, ""));
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap(),
                    "authorization" => auth = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            let reply = serde_json::json!({ "text": text }).to_string();
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
            let _ = tx.send((String::from_utf8(body).unwrap(), auth));
        }
    });
    (url, rx)
}

#[test]
fn http_answerer_against_stub() {
    let dir = tempfile::tempdir().unwrap();
    let qa = dir.path().join("qa.jsonl");
    fs::write(
        &qa,
        "{\"id\":\"q1\",\"question\":\"What is the capital of France?\",\"answers\":[\"Paris\"],\"origin\":\"single_hop\",\"dataset\":\"custom\"}\n",
    )
    .unwrap();
    let (url, rx) = stub_server(vec!["Paris".to_string()]);
    let out = Command::new(env!("CARGO_BIN_EXE_flare"))
        .args([
            "eval", "run", "--policy", "static:single", "--answerer", "http", "--endpoint", &url,
            "--qa", s(&qa), "--corpus", s(&fixture("corpus.jsonl")), "--out",
            s(&dir.path().join("run.csv")),
        ])
        .env("FLARE_LLM_TOKEN", "sekret")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let (body, auth) = rx.recv().unwrap();
    let body: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert!(body["prompt"].as_str().unwrap().contains("What is the capital of France?"));
    assert_eq!(auth.as_deref(), Some("Bearer sekret"));
    let csv = fs::read_to_string(dir.path().join("run.csv")).unwrap();
    assert!(csv.contains("\nstatic:single,,1.000,1.0,1,1\n"), "{csv}");
}

#[test]
fn unreachable_endpoint_is_transport_error() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let dir = tempfile::tempdir().unwrap();
    let out = flare(&[
        "eval", "run", "--policy", "static:no", "--answerer", "http", "--endpoint",
        &format!("http://127.0.0.1:{port}/"), "--qa", s(&fixture("qa.jsonl")), "--corpus",
        s(&fixture("corpus.jsonl")), "--out", s(&dir.path().join("run.csv")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}
