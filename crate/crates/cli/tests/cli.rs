use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use signkit::keypoint::{format_frame_record, read_sequence, GestureSequence};
use signkit::model::{Model, ModelSpec};
use signkit::preprocess::PipelineConfig;
use tokio_tungstenite::tungstenite::Message;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_signkit"))
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, classes: usize, per_class: usize) -> PathBuf {
    let data = dir.join("data");
    run(&[
        "synth",
        "--out",
        p(&data),
        "--classes",
        &classes.to_string(),
        "--per-class",
        &per_class.to_string(),
        "--layout",
        "compact63",
    ]);
    data.join("manifest.json")
}

#[test]
fn usage_errors_exit_2() {
    let out = bin().arg("--no-such-flag").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["verify-arch", "--format", "yaml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["--jobs", "0", "verify-arch"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_1() {
    let out = bin()
        .args([
            "eval",
            "--model",
            "/nonexistent.sgkp",
            "--manifest",
            "/nonexistent.json",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn verify_arch_reports_both_totals() {
    let out = String::from_utf8(run(&["verify-arch"]).stdout).unwrap();
    assert!(out.contains("3057876"), "{out}");
    assert!(out.contains("3060948"), "{out}");
    let json: serde_json::Value = serde_json::from_slice(&run(&["verify-arch", "--format", "json"]).stdout).unwrap();
    assert!(json["rows"].as_array().unwrap().len() > 5);
}

fn train_into(manifest: &Path, cfg: &Path, out: &Path, jobs: &str) {
    run(&[
        "--jobs",
        jobs,
        "--config",
        p(cfg),
        "train",
        "--manifest",
        p(manifest),
        "--out",
        p(out),
    ]);
}

const OUTPUTS: [&str; 6] = [
    "history.csv",
    "best.sgkp",
    "report.json",
    "confusion.csv",
    "split.json",
    "config.json",
];

#[test]
fn train_outputs_are_byte_identical_across_runs_and_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 3, 10);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"train":{"max_epochs":3,"seed":7},"augment":{"copies_per_sequence":1}}"#,
    )
    .unwrap();
    let runs = [("a", "1"), ("b", "1"), ("c", "4")];
    for (name, jobs) in runs {
        train_into(&manifest, &cfg, &dir.path().join(name), jobs);
    }
    for f in OUTPUTS {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        for (name, _) in &runs[1..] {
            assert_eq!(
                a,
                std::fs::read(dir.path().join(name).join(f)).unwrap(),
                "{f} in {name}"
            );
        }
    }
    let history = std::fs::read_to_string(dir.path().join("a/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);
    let config: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a/config.json")).unwrap()).unwrap();
    assert_eq!(config["train"]["seed"], 7);

    // The flag beats the file.
    run(&[
        "--seed",
        "8",
        "--config",
        p(&cfg),
        "train",
        "--manifest",
        p(&manifest),
        "--out",
        p(&dir.path().join("d")),
        "--epochs",
        "2",
    ]);
    let config: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("d/config.json")).unwrap()).unwrap();
    assert_eq!(
        (config["train"]["seed"].as_u64(), config["train"]["max_epochs"].as_u64()),
        (Some(8), Some(2))
    );

    let eval = run(&[
        "--format",
        "csv",
        "eval",
        "--model",
        p(&dir.path().join("a/best.sgkp")),
        "--manifest",
        p(&manifest),
    ]);
    let text = String::from_utf8(eval.stdout).unwrap();
    assert!(text.starts_with("class,precision,recall,f1,support\n"));
    assert!(text.contains("\naccuracy,,,"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 2, 5);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"trian":{}}"#).unwrap();
    let out = bin()
        .args([
            "--config",
            p(&cfg),
            "train",
            "--manifest",
            p(&manifest),
            "--out",
            p(dir.path()),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn cv_and_grid_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 2, 6);
    let cv = dir.path().join("cv");
    run(&[
        "cv",
        "--manifest",
        p(&manifest),
        "--out",
        p(&cv),
        "--k",
        "3",
        "--epochs",
        "2",
    ]);
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(cv.join("cv.json")).unwrap()).unwrap();
    assert_eq!(r["folds"].as_array().unwrap().len(), 3);
    let grid = dir.path().join("grid");
    let out = run(&[
        "--format",
        "csv",
        "grid",
        "--manifest",
        p(&manifest),
        "--out",
        p(&grid),
        "--epochs",
        "1",
        "--lr-grid",
        "0.001,0.003",
        "--units",
        "8,16",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text
        .lines()
        .skip(1)
        .enumerate()
        .all(|(i, l)| l.starts_with(&format!("{},", i + 1))));
    assert!(grid.join("grid.json").exists());
}

#[test]
fn preprocess_and_augment() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 2, 3);
    let x = dir.path().join("x.sgkp");
    let out = run(&["preprocess", "--manifest", p(&manifest), "--out", p(&x)]);
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["shape"], serde_json::json!([6, 30, 63, 3]));
    let aug = dir.path().join("aug");
    run(&["augment", "--manifest", p(&manifest), "--out", p(&aug), "--copies", "2"]);
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(aug.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["sequences"].as_array().unwrap().len(), 18);
}

/// A compact63 model with its pipeline, saved to disk, plus a raw recording.
fn fixture(dir: &Path) -> (PathBuf, GestureSequence) {
    let manifest = synth(dir, 3, 2);
    let pipeline = PipelineConfig {
        layout: Some("compact63".into()),
        ..PipelineConfig::default()
    };
    let model = Model::build(ModelSpec::scaled(3), 11).unwrap().with_pipeline(pipeline);
    let path = dir.join("m.sgkp");
    model.save(&path).unwrap();
    let seq = (0..6)
        .map(|i| {
            read_sequence(
                manifest
                    .parent()
                    .unwrap()
                    .join(format!("g{:02}_{:03}.kpjl", i / 2, i % 2)),
            )
            .unwrap()
        })
        .max_by_key(|s| s.len())
        .unwrap();
    (path, seq)
}

struct Server(Child, String);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start_server(model: &Path) -> Server {
    let mut child = bin()
        .args(["serve", "--model", p(model), "--addr", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .expect("listening line")
        .to_string();
    Server(child, format!("ws://{addr}"))
}

fn frame_msg(f: &signkit::keypoint::KeypointFrame) -> String {
    let rec = format_frame_record(f);
    format!("{{\"type\":\"frame\",{}", &rec[1..])
}

#[tokio::test(flavor = "multi_thread")]
async fn websocket_replay_matches_infer() {
    let dir = tempfile::tempdir().unwrap();
    let (model, seq) = fixture(dir.path());
    let rec = dir.path().join("rec.kpjl");
    signkit::keypoint::write_sequence(&seq, &rec).unwrap();
    let offline = run(&["infer", "--model", p(&model), "--input", p(&rec), "--stride", "4"]);
    let offline: Vec<serde_json::Value> = String::from_utf8(offline.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(seq.len() >= 34 && !offline.is_empty());

    let server = start_server(&model);
    let (mut ws, _) = tokio_tungstenite::connect_async(server.1.as_str()).await.unwrap();
    let hello = format!(r#"{{"type":"hello","layout":"{}","stride":4}}"#, seq.layout().name());
    ws.send(Message::text(hello)).await.unwrap();
    let ready: serde_json::Value = serde_json::from_str(ws.next().await.unwrap().unwrap().to_text().unwrap()).unwrap();
    assert_eq!(ready["type"], "ready");
    for f in seq.frames() {
        ws.send(Message::text(frame_msg(f))).await.unwrap();
    }
    let mut online = Vec::new();
    while online.len() < offline.len() {
        let next = tokio::time::timeout(Duration::from_secs(20), ws.next()).await;
        match next.expect("server stalled").unwrap().unwrap() {
            Message::Text(t) => online.push(serde_json::from_str::<serde_json::Value>(t.as_str()).unwrap()),
            _ => continue,
        }
    }
    ws.close(None).await.unwrap();
    for (a, b) in online.iter().zip(&offline) {
        assert_eq!(a["type"], "prediction");
        assert_eq!(a["window_end"], b["window_end"]);
        assert_eq!(a["label"], b["label"]);
        let bits = |v: &serde_json::Value| {
            v.as_array()
                .unwrap()
                .iter()
                .map(|x| x.as_f64().unwrap().to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a["probs"]), bits(&b["probs"]));
    }
}

async fn close_code(url: &str, msgs: &[String]) -> u16 {
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    for m in msgs {
        ws.send(Message::text(m.clone())).await.unwrap();
    }
    while let Some(m) = ws.next().await {
        if let Message::Close(Some(frame)) = m.unwrap() {
            return frame.code.into();
        }
    }
    panic!("no close frame");
}

#[tokio::test(flavor = "multi_thread")]
async fn close_codes_over_the_wire() {
    let dir = tempfile::tempdir().unwrap();
    let (model, seq) = fixture(dir.path());
    let server = start_server(&model);
    let url = server.1.as_str();
    let hello = format!(r#"{{"type":"hello","layout":"{}"}}"#, seq.layout().name());
    let first = frame_msg(&seq.frames()[0]);
    let second = frame_msg(&seq.frames()[1]);
    assert_eq!(close_code(url, std::slice::from_ref(&first)).await, 4003);
    assert_eq!(close_code(url, &["{".into()]).await, 4003);
    assert_eq!(
        close_code(url, &[r#"{"type":"hello","layout":"nope"}"#.into()]).await,
        4001
    );
    assert_eq!(close_code(url, &[hello.clone(), second, first]).await, 4002);

    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    ws.send(Message::binary(vec![1u8, 2, 3])).await.unwrap();
    let mut code = None;
    while let Some(m) = ws.next().await {
        if let Message::Close(Some(f)) = m.unwrap() {
            code = Some(u16::from(f.code));
            break;
        }
    }
    assert_eq!(code, Some(4003));
}
