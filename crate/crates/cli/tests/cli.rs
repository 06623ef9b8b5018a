use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "synthetic.train_queries=10",
    "synthetic.test_queries=5",
    "synthetic.docs_per_query=5",
    "list_size=5",
    "seeds=1",
    "iterations=20",
    "randomization_sessions=2000",
    "logging_fraction=0.2",
    "ranker.steps=20",
    "sessions_per_query=10",
];

fn cuolr(args: &[&str], extra: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cuolr"));
    cmd.args(args);
    for s in extra {
        cmd.args(["--set", s]);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn keys_lists_every_setting() {
    let o = cuolr(&["keys"], &[]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("cql_alpha = 0.1"));
    assert!(text.contains("click_model = pbm"));
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(code(&cuolr(&["experiment", "--out", arg(&out)], &["no_such_key=1"])), 1);
    assert_eq!(code(&cuolr(&["experiment", "--out", arg(&out)], &["tau=2"])), 1);
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "seeds = 1\nthis line has no separator\n").unwrap();
    let o = cuolr(&["experiment", "--config", arg(&cfg), "--out", arg(&out)], &[]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    assert_eq!(code(&cuolr(&["experiment"], &[])), 1, "missing --out");
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = cuolr(
        &["experiment", "--out", arg(&dir.path().join("x"))],
        &["data=/definitely/not/here"],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn generate_simulate_train_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&cuolr(&["gen-data", "--out", arg(&data)], SMALL)), 0);
    for f in ["train.txt", "vali.txt", "test.txt"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let sessions = dir.path().join("sessions.csv");
    assert_eq!(code(&cuolr(&["simulate", "--out", arg(&sessions)], SMALL)), 0);
    let text = fs::read_to_string(&sessions).unwrap();
    assert!(text.starts_with("query_id,rank,doc_id,click\n"));
    let rows = text.lines().count() - 1;
    assert!(rows > 0 && rows % 5 == 0, "{rows} rows");

    let randomized = dir.path().join("random.csv");
    assert_eq!(code(&cuolr(&["simulate", "--randomize", "--out", arg(&randomized)], SMALL)), 0);

    let prefix = dir.path().join("agent");
    let o = cuolr(&["train", "--sessions", arg(&sessions), "--out", arg(&prefix)], SMALL);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(dir.path().join("agent.trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 21);

    let o = cuolr(&["evaluate", "--agent", arg(&prefix)], SMALL);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stdout).unwrap().contains("ndcg"));
    let json = dir.path().join("report.json");
    assert_eq!(code(&cuolr(&["evaluate", "--agent", arg(&prefix), "--json", arg(&json)], SMALL)), 0);
    assert!(fs::read_to_string(json).unwrap().contains("mean_ndcg"));
}

#[test]
fn config_file_and_overrides_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let mut text = String::from("# small run\nmethods = logging, oracle\n");
    for s in SMALL {
        let (k, v) = s.split_once('=').unwrap();
        text.push_str(&format!("{k} = {v}\n"));
    }
    fs::write(&cfg, text).unwrap();
    let out = dir.path().join("run");
    let o = cuolr(&["experiment", "-c", arg(&cfg), "--out", arg(&out)], &["click_model=dcm"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(results.lines().skip(1).all(|l| l.contains(",dcm,")));
    assert_eq!(results.lines().count(), 1 + 2 * 2 * 3);
    let echoed = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echoed.contains("click_model = dcm"));
}

#[test]
fn experiment_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = cuolr(&["experiment", "--out", arg(&out)], SMALL);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push((
            fs::read(out.join("results.csv")).unwrap(),
            fs::read(out.join("summary.json")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn sweep_writes_plot_ready_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = cuolr(&["sweep-alpha", "--alphas", "0,0.1", "--out", arg(&out)], SMALL);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(csv.starts_with("alpha,metric,k,mean,std\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 3);
}
