use std::process::{Command, Output};

fn posecal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posecal")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn help_documents_the_csv_columns() {
    let o = posecal(&["correlation", "--help"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("layout, camera, frame, group, parameter, value,"));
    let o = posecal(&["compactness", "--help"]);
    assert!(stdout(&o).contains("seed, guided_frames, guided_error"));
}

#[test]
fn usage_errors_exit_with_two() {
    for args in [
        &["frobnicate"][..],
        &["calibrate", "--noise", "abc"],
        &["calibrate", "--threshold", "1.5"],
        &["correlation", "--layout", "sideways"],
        &["correlation", "--cameras", "0"],
        &["calibrate", "--config", "/definitely/not/here.json"],
    ] {
        let o = posecal(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn unknown_config_keys_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"seed": 1, "colour": "red"}"#).unwrap();
    let o = posecal(&["calibrate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"seed": 3, "noise": 0.5}"#).unwrap();
    let cfg = cfg.to_str().unwrap();
    let from_file = posecal(&["calibrate", "--config", cfg]);
    let from_flags = posecal(&["calibrate", "--seed", "3", "--noise", "0.5"]);
    assert!(from_file.status.success());
    assert_eq!(stdout(&from_file), stdout(&from_flags));

    let overridden = posecal(&["calibrate", "--config", cfg, "--seed", "4"]);
    let direct = posecal(&["calibrate", "--seed", "4", "--noise", "0.5"]);
    assert_eq!(stdout(&overridden), stdout(&direct));
    let v: serde_json::Value = serde_json::from_str(&stdout(&overridden)).unwrap();
    assert_eq!(v["seed"], 4);
    assert_eq!(v["converged"], true);
}

#[test]
fn correlation_writes_one_row_per_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("corr.csv");
    let o = posecal(&[
        "correlation",
        "--cameras",
        "2",
        "--layout",
        "both",
        "--seed",
        "9",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let mut r = csv::Reader::from_path(&out).unwrap();
    assert_eq!(
        r.headers().unwrap().iter().collect::<Vec<_>>(),
        ["layout", "camera", "frame", "group", "parameter", "value", "sigma", "iod"]
    );
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    // 2 layouts x 2 cameras x frames 2..=20 x 9 parameters
    assert_eq!(rows.len(), 2 * 2 * 19 * 9);
    assert!(rows.iter().any(|r| &r[0] == "dist-first"));
    assert!(rows.iter().all(|r| r[6].parse::<f64>().unwrap() > 0.0));
}

#[test]
fn compactness_reports_each_seed() {
    let o = posecal(&["compactness", "--seeds", "2", "--seed", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<posecal_cli::CompactnessRow> = r.deserialize().map(Result::unwrap).collect();
    assert_eq!(rows.iter().map(|r| r.seed).collect::<Vec<_>>(), [5, 6]);
    for row in rows {
        assert!(row.compact_frames <= row.guided_frames);
        assert!(row.compact_frames >= 2);
    }
}
