//! End-to-end smoke tests driving the built binary.

use std::fs;
use std::path::Path;
use std::process::Command;

fn cogfit() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cogfit"))
}

fn write_inputs(dir: &Path) {
    // 20 words, 4-dim vectors, linear targets.
    let mut vec_text = String::new();
    let mut et_text = String::from("word,FFD,TRT\n");
    let mut eeg_text = String::from("word,e1,e2,e3\n");
    for i in 0..20 {
        let word = format!("w{i:02}");
        let x = i as f64 / 20.0;
        vec_text.push_str(&format!("{word} {x} {} {} {}\n", 1.0 - x, x * x, 0.5 - x));
        et_text.push_str(&format!("{word},{},{}\n", x, 1.0 - x));
        eeg_text.push_str(&format!("{word},{x},{},{}\n", x * 0.5, 1.0 - x * 0.5));
    }
    fs::write(dir.join("emb.vec"), vec_text).unwrap();
    fs::write(dir.join("et.csv"), et_text).unwrap();
    fs::write(dir.join("eeg.csv"), eeg_text).unwrap();
    fs::write(
        dir.join("manifest.toml"),
        r#"[experiment]
master_seed = 3
alpha = 0.05

[train]
epochs = 2
batch_size = 8

[baseline]
count = 1

[[embedding]]
name = "emb"
path = "emb.vec"
candidates = [2]

[[dataset]]
name = "et"
modality = "eye_tracking"
path = "et.csv"

[[dataset]]
name = "eeg"
modality = "eeg"
path = "eeg.csv"
"#,
    )
    .unwrap();
    fs::write(dir.join("scores.csv"), "embedding,score\nemb,90.0\n").unwrap();
}

#[test]
fn validate_then_run_then_downstream_commands() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    let manifest = dir.path().join("manifest.toml");
    let out = dir.path().join("out");

    let status = cogfit()
        .args(["validate", "--manifest"])
        .arg(&manifest)
        .status()
        .unwrap();
    assert!(status.success());

    let status = cogfit()
        .args(["run", "--manifest"])
        .arg(&manifest)
        .arg("--out")
        .arg(&out)
        .args(["--jobs", "2"])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("results.jsonl").is_file());
    // 2 et features + 1 eeg unit, 1 embedding + 1 baseline each.
    let lines = fs::read_to_string(out.join("results.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 6);

    let status = cogfit()
        .args(["significance", "--manifest"])
        .arg(&manifest)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let significance = fs::read_to_string(out.join("significance.csv")).unwrap();
    assert!(significance.starts_with("hypothesis_id,modality,W,n,p,method,threshold,significant"));
    assert_eq!(significance.lines().count(), 4); // header + 3 hypotheses

    let status = cogfit()
        .args(["report", "--manifest"])
        .arg(&manifest)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("report").join("report.json").is_file());
    assert!(out.join("report").join("mse_by_dataset.csv").is_file());
    assert!(out
        .join("correlation")
        .join("modality_correlations.json")
        .is_file());
    assert!(out.join("word-errors").is_dir());

    let status = cogfit()
        .args(["correlate", "--manifest"])
        .arg(&manifest)
        .arg("--out")
        .arg(&out)
        .arg("--scores")
        .arg(dir.path().join("scores.csv"))
        .args(["--task", "demo"])
        .status()
        .unwrap();
    // Only one embedding overlaps, so the correlation must fail cleanly.
    assert!(!status.success());

    let status = cogfit()
        .args(["baseline-gen", "--manifest"])
        .arg(&manifest)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("baselines").join("baseline-4d-0.vec").is_file());
}

#[test]
fn run_is_resumable_and_reports_progress() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    let manifest = dir.path().join("manifest.toml");
    let out = dir.path().join("out");

    let output = cogfit()
        .args(["run", "--manifest"])
        .arg(&manifest)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("completed 6 jobs"), "{stdout}");

    let output = cogfit()
        .args(["run", "--manifest"])
        .arg(&manifest)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("skipped 6"), "{stdout}");
}

#[test]
fn missing_manifest_fails_with_message() {
    let output = cogfit()
        .args(["validate", "--manifest", "/nonexistent/m.toml"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("error"), "{stderr}");
}

#[test]
fn seed_override_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    let manifest = dir.path().join("manifest.toml");
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let out_c = dir.path().join("c");

    for (out, seed) in [(&out_a, "3"), (&out_b, "4"), (&out_c, "3")] {
        let status = cogfit()
            .args(["run", "--manifest"])
            .arg(&manifest)
            .arg("--out")
            .arg(out)
            .args(["--seed", seed])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = fs::read(out_a.join("results.jsonl")).unwrap();
    let b = fs::read(out_b.join("results.jsonl")).unwrap();
    let c = fs::read(out_c.join("results.jsonl")).unwrap();
    assert_ne!(a, b);
    assert_eq!(a, c);
}
