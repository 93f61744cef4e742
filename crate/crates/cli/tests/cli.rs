//! End-to-end runs of the `seam` binary on a small synthetic world.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

const SMALL: &str = "format_version = 1\n[world]\nn_sft = 200\nn_pref = 150\nn_rl = 60\n[sampler.attack]\nn = 6\nrestarts = 12\n[sampler.degrade]\nn = 6\n[sampler.contrast]\nk = 6\n";

fn seam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seam"))
        .args(args)
        .env_remove("SEAM_POLICY_ENDPOINT")
        .env_remove("SEAM_REWARD_ENDPOINT")
        .env_remove("SEAM_EMBEDDING_ENDPOINT")
        .env_remove("SEAM_GENERATOR_ENDPOINT")
        .env_remove("SEAM_CACHE_DIR")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let o = seam(args);
    assert!(
        o.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A world with trained models, built once; tests write into their own dirs.
struct Fixture {
    _dir: tempfile::TempDir,
    config: PathBuf,
    world: PathBuf,
    policy: PathBuf,
    reward: PathBuf,
}

impl Fixture {
    /// Common flags pointing at the shared world and models.
    fn args<'a>(&'a self, out: &'a Path, rest: &[&'a str]) -> Vec<&'a str> {
        let mut v = vec![
            "--config",
            s(&self.config),
            "--out",
            s(out),
            "--world",
            s(&self.world),
            "--policy-model",
            s(&self.policy),
            "--reward-model",
            s(&self.reward),
        ];
        v.extend_from_slice(rest);
        v
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("small.toml");
        std::fs::write(&config, SMALL).unwrap();
        for cmd in [&["synth"][..], &["train", "policy"], &["train", "reward"]] {
            let mut a = vec!["--config", s(&config), "--out", s(&root)];
            a.extend_from_slice(cmd);
            ok(&a);
        }
        Fixture {
            _dir: dir,
            config,
            world: root.join("world"),
            policy: root.join("models/policy.json"),
            reward: root.join("models/reward.json"),
        }
    })
}

/// First `n` records of the world's RL corpus.
fn rl_subset(dir: &Path, n: usize) -> PathBuf {
    let text = std::fs::read_to_string(fixture().world.join("d_rl.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().take(n).collect();
    let p = dir.join(format!("rl{n}.jsonl"));
    std::fs::write(&p, lines.join("\n") + "\n").unwrap();
    p
}

fn lines(p: &Path) -> usize {
    std::fs::read_to_string(p).unwrap().lines().count()
}

fn error_json(o: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&o.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|_| panic!("stderr is not JSON: {text}"))
}

#[test]
fn score_all_on_three_samples_gives_nine_records() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let rl = rl_subset(tmp.path(), 3);
    let out = tmp.path().join("o");
    ok(&f.args(&out, &["--rl", s(&rl), "score", "all"]));
    assert_eq!(lines(&out.join("score/report.jsonl")), 9);
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("score/report.summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["per_variant"]["adversarial"]["count"], 3);
}

#[test]
fn filter_removes_two_of_ten() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let rl = rl_subset(tmp.path(), 10);
    let out = tmp.path().join("o");
    ok(&f.args(&out, &["--rl", s(&rl), "--fraction", "0.2", "filter"]));
    assert_eq!(lines(&out.join("filter/d_rl.filtered.jsonl")), 8);
    let sel: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("filter/selection.json")).unwrap())
            .unwrap();
    assert_eq!(sel["removed"].as_array().unwrap().len(), 2);
    assert_eq!(sel["kept"].as_array().unwrap().len(), 8);
}

#[test]
fn filter_reuses_an_existing_report() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let rl = rl_subset(tmp.path(), 10);
    let out = tmp.path().join("o");
    ok(&f.args(&out, &["--rl", s(&rl), "score", "adv"]));
    let report = out.join("score/report.jsonl");
    let out2 = tmp.path().join("o2");
    ok(&f.args(&out2, &["--rl", s(&rl), "filter", "--report", s(&report)]));
    let a = std::fs::read(out.join("score/report.jsonl")).unwrap();
    let out3 = tmp.path().join("o3");
    ok(&f.args(&out3, &["--rl", s(&rl), "filter"]));
    assert_eq!(a, std::fs::read(out3.join("filter/report.jsonl")).unwrap());
    assert_eq!(
        std::fs::read(out2.join("filter/d_rl.filtered.jsonl")).unwrap(),
        std::fs::read(out3.join("filter/d_rl.filtered.jsonl")).unwrap()
    );
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn reruns_are_byte_identical_and_leave_no_temp_files() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let rl = rl_subset(tmp.path(), 8);
    let out = tmp.path().join("o");
    let run = || {
        for cmd in [&["score", "all"][..], &["filter"], &["augment"], &["probe"]] {
            let mut a = f.args(&out, &["--rl", s(&rl)]);
            a.extend_from_slice(cmd);
            ok(&a);
        }
    };
    run();
    let first = tree(&out);
    run();
    assert_eq!(first, tree(&out));
    assert!(first.iter().all(|(p, _)| !p.contains(".tmp")));
}

#[test]
fn effective_config_reproduces_the_run() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let rl = rl_subset(tmp.path(), 5);
    let out = tmp.path().join("o");
    ok(&f.args(
        &out,
        &[
            "--rl",
            s(&rl),
            "--k",
            "4",
            "--mode",
            "prob",
            "score",
            "contrast",
        ],
    ));
    let saved = out.join("score/run_config.score.toml");
    let copy = tmp.path().join("saved.toml");
    std::fs::copy(&saved, &copy).unwrap();
    let before = std::fs::read(out.join("score/report.jsonl")).unwrap();
    std::fs::remove_file(out.join("score/report.jsonl")).unwrap();
    ok(&["--config", s(&copy), "score", "contrast"]);
    let again = std::fs::read(out.join("score/report.jsonl")).unwrap();
    assert!(String::from_utf8_lossy(&again).contains("\"mode\":\"prob\""));
    assert_eq!(before, again);
    assert_eq!(
        std::fs::read(&saved).unwrap(),
        std::fs::read(&copy).unwrap()
    );
}

#[test]
fn outputs_embed_the_config_fingerprint() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let rl = rl_subset(tmp.path(), 4);
    let out = tmp.path().join("o");
    ok(&f.args(&out, &["--rl", s(&rl), "probe"]));
    let m: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("probe/manifest.probe.json")).unwrap(),
    )
    .unwrap();
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("probe/report.json")).unwrap())
            .unwrap();
    let fp = m["config_fingerprint"].as_str().unwrap();
    assert_eq!(fp.len(), 64);
    assert_eq!(r["config_fingerprint"], fp);
    assert!(m["outputs"]["report.json"].is_string());
    assert_eq!(r["per_sample"].as_array().unwrap().len(), 4);
}

#[test]
fn config_errors_exit_2_with_json() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "format_version = 1\nunknown_key = true\n").unwrap();
    let o = seam(&["--config", s(&bad), "synth"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"]["kind"], "config");
    let o = seam(&["score", "sideways"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"]["exit_code"], 2);
}

#[test]
fn missing_inputs_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = seam(&["--out", s(&out), "train", "policy"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_json(&o)["error"]["kind"], "data");
}

#[test]
fn backend_failures_exit_4_when_strict_and_are_recorded_when_lenient() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let rl = rl_subset(tmp.path(), 3);
    let out = tmp.path().join("o");
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let url = format!("http://127.0.0.1:{port}");
    let cfg = tmp.path().join("remote.toml");
    std::fs::write(
        &cfg,
        format!("{SMALL}[backends]\nattempts = 1\nretry_backoff_ms = 1\n"),
    )
    .unwrap();
    let mut a = f.args(
        &out,
        &[
            "--rl",
            s(&rl),
            "--reward-endpoint",
            &url,
            "--strict",
            "score",
            "degrade",
        ],
    );
    a[1] = s(&cfg);
    let o = seam(&a);
    assert_eq!(
        o.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert_eq!(error_json(&o)["error"]["kind"], "backend");

    let mut a = f.args(
        &out,
        &[
            "--rl",
            s(&rl),
            "--reward-endpoint",
            &url,
            "score",
            "degrade",
        ],
    );
    a[1] = s(&cfg);
    ok(&a);
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("score/report.summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["failures"].as_array().unwrap().len(), 3);
}

#[test]
fn lab_refuses_lenient_mode() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let o = seam(&f.args(tmp.path(), &["--lenient", "lab", "crossval"]));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_renders_csv_and_svg_for_score_and_lab_outputs() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let rl = rl_subset(tmp.path(), 4);
    let out = tmp.path().join("o");
    ok(&f.args(&out, &["--rl", s(&rl), "score", "all"]));
    ok(&f.args(&out, &["lab", "mismatch"]));
    let inputs = [
        out.join("score/report.jsonl"),
        out.join("lab/mismatch/results.json"),
    ];
    ok(&f.args(&out, &["report", s(&inputs[0]), s(&inputs[1])]));
    let dir = out.join("report");
    let csv = std::fs::read_to_string(dir.join("00-seam-report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 12);
    let svg = std::fs::read_to_string(dir.join("00-seam-report.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.matches("<circle").count() == 12);
    assert!(std::fs::read_to_string(dir.join("01-lab-mismatch.csv"))
        .unwrap()
        .starts_with("seed,rate,counted"));
    let o = seam(&f.args(&out, &["report", s(&rl)]));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn cache_serves_identical_reports() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let rl = rl_subset(tmp.path(), 4);
    let cache = tmp.path().join("cache");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&f.args(&a, &["--rl", s(&rl), "score", "all"]));
    ok(&f.args(
        &b,
        &["--rl", s(&rl), "--cache-dir", s(&cache), "score", "all"],
    ));
    assert!(cache.join("records").is_dir());
    let c = tmp.path().join("c");
    let o = Command::new(env!("CARGO_BIN_EXE_seam"))
        .args(f.args(&c, &["--rl", s(&rl), "score", "all"]))
        .env("SEAM_CACHE_DIR", &cache)
        .output()
        .unwrap();
    assert!(o.status.success());
    let read = |d: &Path| std::fs::read(d.join("score/report.jsonl")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(read(&a), read(&c));
}
