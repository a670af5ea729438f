use std::path::Path;
use std::process::{Command, Output};

fn dvd(args: &[&str], config_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dvd"));
    cmd.args(args).env_remove("DVD_CONFIG").env("RUST_LOG", "warn");
    if let Some(p) = config_env {
        cmd.env("DVD_CONFIG", p);
    }
    cmd.output().expect("spawn dvd")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const LIGHT: &str = "[profile]\nvision_work_per_tile = 1\nprefill_work_per_token = 1\ndecode_work_per_token = 1\n";

#[test]
fn check_losses_passes() {
    let o = dvd(&["check-losses", "--per-loss", "2"], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    for loss in ["ntp", "dpo", "bco", "mpo", "gspo", "vico"] {
        assert!(text.contains(&format!("pass {loss}")), "{text}");
    }
}

#[test]
fn train_router_writes_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.jsonl");
    let rows: Vec<String> = (0..20)
        .map(|i| {
            let x = i as f64 / 10.0 - 1.0;
            format!("{{\"features\":[{x},{}],\"label\":{}}}", 0.5 - x, u8::from(x > 0.05))
        })
        .collect();
    std::fs::write(&data, rows.join("\n")).unwrap();
    let ckpt = dir.path().join("router.ckpt");
    let o = dvd(
        &["train-router", "--data", data.to_str().unwrap(), "--out", ckpt.to_str().unwrap()],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("accuracy 1.000"), "{}", stdout(&o));
    let params = dvd_core::vico::load_checkpoint(&ckpt).unwrap();
    assert_eq!(params.dim(), 2);
}

#[test]
fn malformed_training_data_fails() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.jsonl");
    std::fs::write(&data, "{\"features\":[1.0],\"label\":7}\n").unwrap();
    let out = dir.path().join("x.ckpt");
    let o = dvd(&["train-router", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn bench_writes_report_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("light.toml");
    std::fs::write(&config, LIGHT).unwrap();
    let (csv, trace) = (dir.path().join("report.csv"), dir.path().join("trace.jsonl"));
    let o = dvd(
        &[
            "--config",
            config.to_str().unwrap(),
            "bench",
            "--topology",
            "monolith,dvd",
            "--tier",
            "448",
            "--rate",
            "10",
            "--duration",
            "1",
            "--out",
            csv.to_str().unwrap(),
            "--trace",
            trace.to_str().unwrap(),
        ],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = dvd_core::bench::read_report_csv(&std::fs::read_to_string(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0].topology.as_str(), rows[1].topology.as_str()), ("monolith", "dvd"));
    let spans = dvd_core::serving::read_trace(std::io::BufReader::new(std::fs::File::open(&trace).unwrap())).unwrap();
    assert!(!spans.is_empty());
}

#[test]
fn env_config_wins_over_flag() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    std::fs::write(&good, LIGHT).unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[model]\nvocab = 0\n").unwrap();
    let args = ["--config", good.to_str().unwrap(), "check-losses", "--per-loss", "1"];
    assert!(dvd(&args, None).status.success());
    let o = dvd(&args, Some(&bad));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("vocab"));
}

#[test]
fn rejects_unknown_tier() {
    let o = dvd(&["bench", "--tier", "500", "--rate", "1", "--duration", "1"], None);
    assert_eq!(o.status.code(), Some(1));
}
