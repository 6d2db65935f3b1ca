use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const CANTOR: &str = r#"{"dimension":1,"ambient":{"lo":[0],"hi":[1]},"provider":"explicit",
  "cycle":[[{"kind":"similarity","ratio":"1/3","translation":[0]},
            {"kind":"similarity","ratio":"1/3","translation":[2]}]]}"#;

const SIERPINSKI: &str = r#"{"dimension":2,"ambient":{"lo":[0,0],"hi":[1,1]},"provider":"explicit",
  "cycle":[[{"kind":"similarity","ratio":0.5,"translation":[0,0]},
            {"kind":"similarity","ratio":0.5,"translation":[1,0]},
            {"kind":"similarity","ratio":0.5,"translation":[0,1]}]]}"#;

fn moran(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moran")).args(args).output().expect("spawn moran")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn repro_ex55_zero_measure() {
    let out = moran(&["repro", "ex55-zero"]);
    let v = stdout_json(&out);
    assert_eq!(v["command"], "repro");
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["result"]["quantities"]["measure_class"], "zero");
    assert_eq!(v["result"]["passed"], true);
}

#[test]
fn repro_ex57_box_dimensions() {
    let v = stdout_json(&moran(&["repro", "ex57"]));
    let q = &v["result"]["quantities"];
    let lower = q["lower_box"].as_f64().unwrap();
    let upper = q["upper_box"].as_f64().unwrap();
    assert!((lower - 0.7194373997043942).abs() <= 0.01, "{lower}");
    assert!((upper - 0.8368288369533894).abs() <= 0.01, "{upper}");
}

#[test]
fn repro_lists_targets() {
    let out = moran(&["repro", "--list"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("ex57\t")));
}

#[test]
fn expanding_ratio_is_rejected_with_its_location() {
    let dir = TempDir::new().unwrap();
    let bad = CANTOR.replacen("\"1/3\"", "1.2", 1);
    let path = write(dir.path(), "bad.json", &bad);
    let out = moran(&["dim", &path]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/cycle/0/0/ratio"), "{err}");
}

#[test]
fn unknown_fields_are_rejected() {
    let dir = TempDir::new().unwrap();
    let path = write(dir.path(), "typo.json", &CANTOR.replacen("\"ambient\"", "\"ambeint\"", 1));
    let out = moran(&["info", &path]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ambeint"));
}

#[test]
fn cutset_reports_counts_and_words() {
    let dir = TempDir::new().unwrap();
    let path = write(dir.path(), "cantor.json", CANTOR);
    let v = stdout_json(&moran(&["cutset", &path, "--b", "0.05", "--words"]));
    let r = &v["result"];
    // 3^-3 is the first power of 1/3 at or below 0.05.
    assert_eq!(r["count_words"], 8);
    assert_eq!(r["count_maps"], 8);
    assert_eq!(r["min_len"], 3);
    assert_eq!(r["max_len"], 3);
    assert_eq!(r["words"].as_array().unwrap().len(), 8);
    assert_eq!(v["run"]["limit"], 1 << 20);
    let counts = stdout_json(&moran(&["cutset", &path, "--b", "0.05"]));
    assert_eq!(counts["result"]["count_words"], 8);
    assert_eq!(counts["result"]["method"], "enumerated");
}

#[test]
fn deep_cutsets_are_counted_in_closed_form() {
    let dir = TempDir::new().unwrap();
    let path = write(dir.path(), "cantor.json", CANTOR);
    let v = stdout_json(&moran(&["cutset", &path, "--log-b", "-2000"]));
    let r = &v["result"];
    assert_eq!(r["method"], "uniform_layers");
    assert!(r["count_words"].is_null());
    // ceil(2000 / ln 3) = 1821 layers of two maps each.
    assert!((r["log_words"].as_f64().unwrap() - 1821.0 * 2f64.ln()).abs() < 1e-9);
    let out = moran(&["cutset", &path, "--log-b", "-2000", "--words"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("digits"));
}

#[test]
fn dim_of_cantor_set() {
    let dir = TempDir::new().unwrap();
    let path = write(dir.path(), "cantor.json", CANTOR);
    let v = stdout_json(&moran(&["dim", &path, "--kmax", "64"]));
    let h = v["result"]["hausdorff"]["dim_h_est"].as_f64().unwrap();
    assert!((h - 2f64.ln() / 3f64.ln()).abs() < 1e-12, "{h}");
}

#[test]
fn outputs_are_identical_across_runs_and_thread_counts() {
    let dir = TempDir::new().unwrap();
    let sys = write(dir.path(), "sierpinski.json", SIERPINSKI);
    let pts = dir.path().join("pts.csv").to_str().unwrap().to_owned();
    let report = dir.path().join("report.json").to_str().unwrap().to_owned();
    let mut seen: Vec<(Vec<u8>, Vec<u8>, Vec<u8>)> = Vec::new();
    for threads in ["1", "1", "3"] {
        let s = moran(&["--threads", threads, "sample", &sys, "--count", "20000", "--seed", "7", "--out", &pts, "--json", &report]);
        assert!(s.status.success(), "{}", String::from_utf8_lossy(&s.stderr));
        let d = moran(&["--threads", threads, "dim", &sys, "--kmax", "256"]);
        assert!(d.status.success());
        seen.push((std::fs::read(&pts).unwrap(), std::fs::read(&report).unwrap(), d.stdout));
    }
    assert!(seen.windows(2).all(|w| w[0] == w[1]));
    let text = String::from_utf8(seen[0].0.clone()).unwrap();
    assert!(text.starts_with("x,y\r\n"));
    assert_eq!(text.lines().count(), 20001);
}

#[test]
fn render_writes_ppm_and_svg() {
    let dir = TempDir::new().unwrap();
    let sys = write(dir.path(), "cantor.json", CANTOR);
    let pts = dir.path().join("cover.csv").to_str().unwrap().to_owned();
    let c = moran(&["cover", &sys, "--b", "0.001", "--out", &pts]);
    assert!(c.status.success(), "{}", String::from_utf8_lossy(&c.stderr));

    let ppm = dir.path().join("img.ppm");
    let r = moran(&["render", &pts, "--out", ppm.to_str().unwrap(), "--width", "64", "--height", "8"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let bytes = std::fs::read(&ppm).unwrap();
    let header = b"P6\n64 8\n255\n";
    assert!(bytes.starts_with(header));
    assert_eq!(bytes.len(), header.len() + 64 * 8 * 3);

    let svg = dir.path().join("img.svg");
    let r = moran(&["render", &pts, "--out", svg.to_str().unwrap(), "--width", "64", "--height", "8"]);
    assert!(r.status.success());
    let text = std::fs::read_to_string(&svg).unwrap();
    assert!(text.contains("<svg") && text.contains("<circle"));
}

#[test]
fn separation_check_on_overlapping_system_fails_with_a_witness() {
    let dir = TempDir::new().unwrap();
    let sys = write(
        dir.path(),
        "overlap.json",
        r#"{"dimension":1,"ambient":{"lo":[0],"hi":[1]},"provider":"explicit",
            "cycle":[[{"kind":"similarity","ratio":0.5,"translation":[0]},
                      {"kind":"similarity","ratio":0.5,"translation":[0.5]},
                      {"kind":"similarity","ratio":0.5,"translation":[1]}]]}"#,
    );
    let v_path = write(dir.path(), "v.json", r#"{"kind":"constant","boxes":[{"lo":[0],"hi":[1]}]}"#);
    let v = stdout_json(&moran(&["check-sep", &sys, "--cond", "mosc", "--V", &v_path, "--depth", "4"]));
    assert_eq!(v["result"]["verdict"]["verdict"], "fails_at");
}
