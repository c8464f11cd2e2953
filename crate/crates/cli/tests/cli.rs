//! Black-box tests of the `romda` binary: the synth/train/assimilate/
//! evaluate/inspect pipeline, rerun determinism, and exit codes.

use std::process::{Command, Output};

fn romda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_romda"))
        .args(args)
        .output()
        .expect("binary must launch")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_code(out: &Output, want: i32, what: &str) {
    assert_eq!(
        out.status.code(),
        Some(want),
        "{what}: stdout={} stderr={}",
        stdout(out),
        stderr(out)
    );
}

#[test]
fn full_pipeline_runs_and_repeats_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let path = |name: &str| root.join(name).to_string_lossy().into_owned();

    let synth = romda(&["synth", "--out", &path(""), "--hours", "24"]);
    assert_code(&synth, 0, "synth");
    for name in ["snapshots.rdx1", "drivers.csv", "sat_a.csv", "sat_b.csv", "sat_c.csv", "train.json", "experiment.json"] {
        assert!(root.join(name).is_file(), "{name} missing after synth");
    }
    assert!(stdout(&synth).contains("train.json"));

    let train = romda(&["train", "--config", &path("train.json")]);
    assert_code(&train, 0, "train");
    assert!(root.join("basis.rdx1").is_file());
    assert!(root.join("model.rdx1").is_file());

    let first = romda(&["assimilate", "--config", &path("experiment.json"), "--out-dir", &path("r1")]);
    assert_code(&first, 0, "assimilate (first)");
    let text = stdout(&first);
    assert!(text.contains("sat_a"));
    assert!(text.contains("withheld"));

    let second = romda(&["assimilate", "--config", &path("experiment.json"), "--out-dir", &path("r2")]);
    assert_code(&second, 0, "assimilate (second)");
    for name in ["mape_summary.csv", "innovations.csv", "residuals_sat_c.csv"] {
        let a = std::fs::read(root.join("r1").join(name)).unwrap();
        let b = std::fs::read(root.join("r2").join(name)).unwrap();
        assert_eq!(a, b, "{name} must be byte-identical across reruns");
    }

    let eval = romda(&["evaluate", "--dir", &path("r1")]);
    assert_code(&eval, 0, "evaluate");
    let text = stdout(&eval);
    assert!(text.contains("sat_a") && text.contains("sat_c"));
    assert!(text.contains("open loop"));

    let inspect = romda(&["inspect", "--file", &path("model.rdx1")]);
    assert_code(&inspect, 0, "inspect");
    let text = stdout(&inspect);
    assert!(text.contains("array A"), "describe output: {text}");
    assert!(text.contains("attr kind"), "describe output: {text}");
}

#[test]
fn config_problems_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.json");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"snapshots": "{0}/absent.rdx1", "drivers": "{0}/absent.csv", "out_basis": "b", "out_model": "m"}}"#,
            dir.path().display()
        ),
    )
    .unwrap();
    let out = romda(&["train", "--config", &cfg.to_string_lossy()]);
    assert_code(&out, 2, "train with missing inputs");
    assert!(stderr(&out).contains("error:"));

    let bad = dir.path().join("synth");
    let out = romda(&["synth", "--out", &bad.to_string_lossy(), "--t2", "7"]);
    assert_code(&out, 2, "synth with a step that does not divide an hour");
}

#[test]
fn data_problems_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.rdx1");
    std::fs::write(&junk, b"not a container").unwrap();
    let out = romda(&["inspect", "--file", &junk.to_string_lossy()]);
    assert_code(&out, 3, "inspect on junk bytes");
    assert!(stderr(&out).contains("error:"));

    let out = romda(&["evaluate", "--dir", &dir.path().to_string_lossy()]);
    assert_code(&out, 3, "evaluate on an empty directory");
}
