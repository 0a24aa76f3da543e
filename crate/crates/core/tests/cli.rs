use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn declab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_declab"))
        .args(args)
        .env_remove("DECLAB_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// The count-solutions preset cut down to four small N.
fn small_config(dir: &Path) -> std::path::PathBuf {
    let o = declab(&["config", "count-solutions"]);
    assert!(o.status.success());
    let mut cfg: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    cfg["grid"]["N"] = serde_json::json!([256, 512, 1024, 2048]);
    let path = dir.join("small.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn presets_are_listed_and_printable() {
    let o = declab(&["presets"]);
    assert!(o.status.success());
    let names: Vec<String> = stdout(&o).lines().map(str::to_owned).collect();
    assert_eq!(names, declab::scenario::PRESETS);
    for n in &names {
        let o = declab(&["config", n]);
        assert!(o.status.success(), "config {n}");
        let cfg = declab::scenario::ScenarioConfig::from_json(&stdout(&o)).unwrap();
        assert_eq!(&cfg.scenario, n);
    }
}

#[test]
fn run_then_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("a");
    let o = declab(&[
        "run",
        "--preset",
        "count-solutions",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary.is_object());

    let o = declab(&[
        "fit",
        "--in",
        out.join("results.csv").to_str().unwrap(),
        "--y",
        "lhs",
        "--group",
        "scenario",
    ]);
    assert!(o.status.success());
    let lines: Vec<String> = stdout(&o).lines().map(str::to_owned).collect();
    assert_eq!(lines.len(), 1);
    let g: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    let slope = g["fit"]["slope"].as_f64().unwrap();
    // Counts sit between the diagonal (M³ ~ N^{3/2}) and the trivial M⁶.
    assert!((1.4..3.0).contains(&slope), "slope {slope}");
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let mut outputs = Vec::new();
    for (d, threads) in [("a", "1"), ("b", "3")] {
        let out = tmp.path().join(d);
        let o = Command::new(env!("CARGO_BIN_EXE_declab"))
            .args([
                "run",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ])
            .env("DECLAB_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success());
        outputs.push(fs::read(out.join("results.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let out = out.to_str().unwrap();

    let o = declab(&["run", "--preset", "no-such", "--out", out]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("declab: "));

    assert!(!declab(&["run", "--out", out]).status.success());
    assert!(!declab(&["config", "nope"]).status.success());
    assert!(!declab(&[
        "fit",
        "--in",
        tmp.path().join("missing.csv").to_str().unwrap()
    ])
    .status
    .success());

    let cfg = small_config(tmp.path());
    let o = declab(&[
        "run",
        "--preset",
        "canonical",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out,
    ]);
    assert!(
        !o.status.success(),
        "mismatched preset and config must be rejected"
    );

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{\"scenario\": \"canonical\", \"bogus\": 1}").unwrap();
    assert!(
        !declab(&["run", "--config", bad.to_str().unwrap(), "--out", out])
            .status
            .success()
    );

    let o = Command::new(env!("CARGO_BIN_EXE_declab"))
        .args(["run", "--config", cfg.to_str().unwrap(), "--out", out])
        .env("DECLAB_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!o.status.success());
}
