mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{MockService, Reply};
use rtscope_core::pipeline::report_files;

const TWEETS: &str = r#"{"tweet_id":"1","author_id":"a","timestamp":1,"urls":["https://fake.example/x"]}
{"tweet_id":"2","author_id":"b","timestamp":2,"retweeted_author_id":"a","retweeted_tweet_id":"1","urls":["https://fake.example/x"]}
{"tweet_id":"3","author_id":"c","timestamp":3,"retweeted_author_id":"a","retweeted_tweet_id":"1","urls":["https://fake.example/x"]}
{"tweet_id":"4","author_id":"c","timestamp":4,"urls":["https://www.news.example/y?utm_source=t"]}
{"tweet_id":"5","author_id":"d","timestamp":5,"retweeted_author_id":"c","retweeted_tweet_id":"4","urls":["https://news.example/y"]}
{"tweet_id":"6","author_id":"d","timestamp":6,"retweeted_author_id":"d","retweeted_tweet_id":"5","urls":[]}
{"tweet_id":"7","author_id":"b","timestamp":7,"urls":["https://fake.example/z"]}
{"tweet_id":"8","author_id":"a","timestamp":8,"retweeted_author_id":"b","retweeted_tweet_id":"7","urls":["https://fake.example/z"]}
{"tweet_id":"9","author_id":"d","timestamp":9,"urls":["https://other.example/w"]}

not json
{"tweet_id":"1","author_id":"e","timestamp":9,"urls":[]}
"#;

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new(tweets: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("tweets.jsonl"), tweets).unwrap();
        std::fs::write(dir.path().join("unreliable.txt"), "fake.example\n").unwrap();
        std::fs::write(dir.path().join("reliable.txt"), "news.example\n").unwrap();
        std::fs::write(dir.path().join("bs.csv"), "user_id,bot_score\na,0.9\nb,0.1\nc,0.2\nd,1.5\n").unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn inputs(&self) -> Vec<String> {
        let p = |n: &str| self.path(n).display().to_string();
        vec![
            "--tweets".into(),
            p("tweets.jsonl"),
            "--unreliable-sources".into(),
            p("unreliable.txt"),
            "--reliable-sources".into(),
            p("reliable.txt"),
            "--bot-scores".into(),
            p("bs.csv"),
            "--min-shares".into(),
            "0".into(),
        ]
    }

    fn run(&self, sub: &str, out: &str, extra: &[&str]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_rtscope"));
        cmd.arg(sub)
            .args(self.inputs())
            .arg("--output-dir")
            .arg(self.path(out))
            .args(extra)
            .env_remove("RTSCOPE_CONFIG")
            .env_remove("RTSCOPE_CACHE_DIR")
            .env_remove("RTSCOPE_SERVICE_TOKEN");
        cmd.output().unwrap()
    }
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn manifest_records_stage_counts() {
    let fx = Fixture::new(TWEETS);
    let out = fx.run("all", "out", &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let m = manifest(&fx.path("out"));
    let ingest = &m["stages"]["ingest"];
    assert_eq!(ingest["lines"], 12);
    assert_eq!(ingest["records"], 9);
    assert_eq!(ingest["blank"], 1);
    assert_eq!(ingest["malformed"], 1);
    assert_eq!(ingest["duplicate_ids"], 1);
    let graph = &m["stages"]["graph"];
    assert_eq!(graph["retweets_accepted"], 4);
    assert_eq!(graph["self_retweets"], 1);
    assert_eq!(graph["nodes"], 4);
    assert_eq!(graph["edges"], 4);
    let scores = &m["stages"]["scores"];
    assert_eq!(scores["file_scores"], 3);
    assert_eq!(scores["file_out_of_range"], 1);
    assert_eq!(m["stages"]["urls"]["distinct_urls"], 4);
    assert_eq!(m["seeds"]["louvain"], 0);
    assert_eq!(m["parameters"]["min_shares"], 0);
    assert_eq!(m["inputs"]["tweets"]["bytes"], TWEETS.len());
    for name in report_files() {
        let bytes = std::fs::read(fx.path("out").join(&name)).unwrap();
        assert_eq!(m["outputs"][&name].as_str().unwrap().len(), 64, "{name}");
        assert!(!bytes.is_empty(), "{name}");
    }
    let urls = std::fs::read_to_string(fx.path("out/urls.csv")).unwrap();
    assert!(urls.lines().any(|l| l.starts_with("news.example/y,")), "{urls}");
    assert!(!urls.contains("utm_source"));
}

#[test]
fn runs_are_reproducible_across_directories() {
    let fx = Fixture::new(TWEETS);
    assert!(fx.run("all", "one", &[]).status.success());
    assert!(fx.run("all", "two", &[]).status.success());
    for name in report_files() {
        let a = std::fs::read(fx.path("one").join(&name)).unwrap();
        let b = std::fs::read(fx.path("two").join(&name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    assert_eq!(manifest(&fx.path("one"))["outputs"], manifest(&fx.path("two"))["outputs"]);
}

#[test]
fn staged_runs_match_the_full_run() {
    let fx = Fixture::new(TWEETS);
    assert!(fx.run("all", "full", &[]).status.success());
    for sub in ["ingest", "graph", "communities", "scores", "urls", "curves", "nulltest"] {
        let out = fx.run(sub, "staged", &[]);
        assert!(out.status.success(), "{sub}: {}", stderr(&out));
        let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert!(summary.is_object(), "{sub}");
    }
    for name in report_files() {
        let a = std::fs::read(fx.path("full").join(&name)).unwrap();
        let b = std::fs::read(fx.path("staged").join(&name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn stages_need_their_predecessors() {
    let fx = Fixture::new(TWEETS);
    let out = fx.run("communities", "fresh", &[]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("run `graph` first"));
}

#[test]
fn empty_tweet_file_aborts_at_graph_stage() {
    let fx = Fixture::new("");
    for sub in ["graph", "all"] {
        let out = fx.run(sub, "out", &[]);
        assert_eq!(out.status.code(), Some(3), "{sub}");
        let msg = stderr(&out);
        assert!(msg.contains("graph stage") && msg.contains("edgeless graph"), "{msg}");
    }
    assert!(!fx.path("out/manifest.json").exists());
}

#[test]
fn exit_codes() {
    let fx = Fixture::new(TWEETS);
    assert_eq!(fx.run("all", "o", &["--entropy-low", "2", "--entropy-medium", "1"]).status.code(), Some(1));
    assert_eq!(fx.run("all", "o", &["--no-such-flag"]).status.code(), Some(1));
    assert_eq!(fx.run("all", "o", &["--alternative", "sideways"]).status.code(), Some(1));
    std::fs::remove_file(fx.path("tweets.jsonl")).unwrap();
    let missing = fx.run("all", "o", &[]);
    assert_eq!(missing.status.code(), Some(2), "{}", stderr(&missing));
    let help = Command::new(env!("CARGO_BIN_EXE_rtscope")).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
    let no_input = Command::new(env!("CARGO_BIN_EXE_rtscope"))
        .args(["ingest", "--output-dir"])
        .arg(fx.path("x"))
        .env_remove("RTSCOPE_CONFIG")
        .output()
        .unwrap();
    assert_eq!(no_input.status.code(), Some(1));
    assert!(stderr(&no_input).contains("tweets is required"));
}

#[test]
fn config_file_is_layered_under_flags() {
    let fx = Fixture::new(TWEETS);
    let cfg = fx.path("run.toml");
    std::fs::write(&cfg, "min_shares = 1000\nlouvain_seed = 9\n").unwrap();
    let cfg_arg = cfg.display().to_string();
    let out = fx.run("all", "out", &["--config", &cfg_arg]);
    assert!(out.status.success(), "{}", stderr(&out));
    let m = manifest(&fx.path("out"));
    assert_eq!(m["parameters"]["min_shares"], 0);
    assert_eq!(m["seeds"]["louvain"], 9);

    std::fs::write(&cfg, "service_token = \"abc\"\n").unwrap();
    let out = fx.run("all", "out", &["--config", &cfg_arg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("environment"));
}

#[test]
fn service_fills_missing_scores_using_env_token() {
    let svc = MockService::start(|req, _| match req.user_id.as_str() {
        "d" => Reply::ok(r#"{"score": 0.6}"#),
        _ => Reply::status(404),
    });
    let fx = Fixture::new(TWEETS);
    let out = Command::new(env!("CARGO_BIN_EXE_rtscope"))
        .arg("all")
        .args(fx.inputs())
        .arg("--output-dir")
        .arg(fx.path("out"))
        .args(["--service-endpoint", &svc.url, "--service-token-env", "FIXTURE_TOKEN"])
        .env("FIXTURE_TOKEN", "t0ken")
        .env_remove("RTSCOPE_CACHE_DIR")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let seen = svc.requests();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].user_id, "d");
    assert_eq!(seen[0].authorization.as_deref(), Some("Bearer t0ken"));
    let m = manifest(&fx.path("out"));
    assert_eq!(m["stages"]["scores"]["users_with_bot_score"], 4);
    let text = std::fs::read_to_string(fx.path("out/manifest.json")).unwrap();
    assert!(!text.contains("t0ken"));
    let users = std::fs::read_to_string(fx.path("out/users.csv")).unwrap();
    assert!(users.lines().any(|l| l.starts_with("d,") && l.ends_with(",0.6")), "{users}");
}

#[test]
fn rejected_service_credentials_exit_4() {
    let svc = MockService::start(|_, _| Reply::status(401));
    let fx = Fixture::new(TWEETS);
    let out = fx.run("all", "out", &["--service-endpoint", &svc.url]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

#[test]
fn synth_writes_a_runnable_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let bin = env!("CARGO_BIN_EXE_rtscope");
    let out = Command::new(bin).args(["synth", "--seed", "4", "--out"]).arg(&data).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let spec = Command::new(bin).args(["synth", "--print-spec"]).output().unwrap();
    assert!(String::from_utf8_lossy(&spec.stdout).contains("p_intra"));
    let out = Command::new(bin)
        .arg("all")
        .arg("--tweets")
        .arg(data.join("tweets.jsonl"))
        .arg("--unreliable-sources")
        .arg(data.join("unreliable.txt"))
        .arg("--reliable-sources")
        .arg(data.join("reliable.txt"))
        .arg("--bot-scores")
        .arg(data.join("bot_scores.csv"))
        .arg("--output-dir")
        .arg(dir.path().join("out"))
        .args(["--min-shares", "3"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let stages: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stages["communities"]["top_sizes"], serde_json::json!([60, 60]));
}
