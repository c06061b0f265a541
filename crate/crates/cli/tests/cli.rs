use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TWO_UNIT: &str = r#"{
  "horizon": {"t1": 0, "t2": 2},
  "load": {"kind": "samples", "times": [0, 1, 2], "values": [3, 3, 3]},
  "units": [
    {"id": "half", "p_min": 0, "p_max": 10, "r_min": -100, "r_max": 100, "z_max": null,
     "cost": {"a0": 0, "a1": 0, "a2": 0.5, "b1": 0, "b2": 0, "b_abs": 0, "e1": 0, "e2": 0}},
    {"id": "full", "p_min": 0, "p_max": 10, "r_min": -100, "r_max": 100, "z_max": null,
     "cost": {"a0": 0, "a1": 0, "a2": 1, "b1": 0, "b2": 0, "b_abs": 0, "e1": 0, "e2": 0}}
  ],
  "slack": {"enabled": false, "price": 10000}
}"#;

fn ctprice(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctprice"))
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn scenario(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn solve_two_unit_prices_at_two() {
    let dir = TempDir::new().unwrap();
    let sc = scenario(&dir, "two.json", TWO_UNIT);
    let out = dir.path().join("two.csv");
    for scheme in ["uniform", "spline"] {
        let o = ctprice(&[
            "solve",
            "--scenario",
            s(&sc),
            "--scheme",
            scheme,
            "--intervals",
            "4",
            "--out",
            s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let (header, rows) = csv(&out);
        assert_eq!(header.len(), 3 + 6 * 2);
        assert_eq!(&header[..4], ["t", "y", "lambda", "x_half"]);
        assert_eq!(header[14], "beta_full");
        assert_eq!(rows.len(), 5);
        for r in &rows {
            assert_eq!(r.len(), header.len());
            assert!((r[2] - 2.0).abs() < 1e-6, "{scheme}: lambda {}", r[2]);
            assert!((r[3] - 2.0).abs() < 1e-6);
            assert!((r[9] - 1.0).abs() < 1e-6);
        }
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("two.report.json")).unwrap())
            .unwrap();
    assert_eq!(report["status"], "OPTIMAL");
    assert_eq!(report["marginal"][0], serde_json::json!(["half", "full"]));
    let (hdr, hourly) = csv(&dir.path().join("two_hourly.csv"));
    assert_eq!(hdr, ["hour", "half", "full"]);
    assert_eq!(hourly.len(), 2);
    assert!((hourly[0][1] - 2.0).abs() < 1e-6 && (hourly[1][2] - 1.0).abs() < 1e-6);
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let sc = dir.path().join("duck.json");
    assert_eq!(code(&ctprice(&["duckgen", "--out", s(&sc)])), 0);
    let mut seen: Vec<Vec<Vec<u8>>> = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}.csv"));
        let rep = dir.path().join(format!("run{k}.report.json"));
        let hourly = dir.path().join(format!("run{k}.hourly.csv"));
        let o = ctprice(&[
            "solve",
            "--scenario",
            s(&sc),
            "--intervals",
            "48",
            "--out",
            s(&out),
            "--report",
            s(&rep),
            "--out-hourly",
            s(&hourly),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        seen.push(
            [out, rep, hourly]
                .iter()
                .map(|p| fs::read(p).unwrap())
                .collect(),
        );
    }
    assert_eq!(seen[0], seen[1]);
    let text = String::from_utf8(seen[0][0].clone()).unwrap();
    assert!(!text.contains('\r'));
    assert!(text
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("0.0000000000000000e0,"));
}

#[test]
fn duckgen_without_bumps_is_flat() {
    let dir = TempDir::new().unwrap();
    let sc = dir.path().join("flat.json");
    let o = ctprice(&[
        "duckgen",
        "--out",
        s(&sc),
        "--base",
        "150",
        "--morning-peak",
        "0",
        "--evening-peak",
        "0",
        "--solar-depth",
        "0",
        "--step-minutes",
        "60",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&sc).unwrap()).unwrap();
    let values = doc["load"]["values"].as_array().unwrap();
    assert_eq!(values.len(), 25);
    assert!(values.iter().all(|v| v.as_f64() == Some(150.0)));
    assert_eq!(doc["units"].as_array().unwrap().len(), 3);
}

#[test]
fn theorem1_on_analytic_case_passes() {
    let dir = TempDir::new().unwrap();
    let sc = scenario(&dir, "two.json", TWO_UNIT);
    let out = dir.path().join("t1.json");
    let o = ctprice(&[
        "verify",
        "--scenario",
        s(&sc),
        "--mode",
        "theorem1",
        "--intervals",
        "20",
        "--epsilon",
        "0.001",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(rep["relative_error"].as_f64().unwrap() <= 0.01);
    assert_eq!(rep["passed"], true);
}

#[test]
fn custom_perturbation_shape_is_read() {
    let dir = TempDir::new().unwrap();
    let sc = scenario(&dir, "two.json", TWO_UNIT);
    let eta = scenario(
        &dir,
        "eta.json",
        r#"{"times": [0, 0.5, 1, 1.5, 2], "values": [0, 1, 1.5, 1, 0]}"#,
    );
    let out = dir.path().join("t1.json");
    let o = ctprice(&[
        "verify",
        "--scenario",
        s(&sc),
        "--mode",
        "theorem1",
        "--eta",
        s(&eta),
        "--epsilon",
        "0.01",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn other_verify_modes_run() {
    let dir = TempDir::new().unwrap();
    let sc = scenario(&dir, "two.json", TWO_UNIT);
    for mode in ["kkt", "cross", "refine"] {
        let out = dir.path().join(format!("{mode}.json"));
        let o = ctprice(&[
            "verify",
            "--scenario",
            s(&sc),
            "--mode",
            mode,
            "--intervals",
            "8",
            "--out",
            s(&out),
        ]);
        assert_eq!(code(&o), 0, "{mode}: {}", stderr(&o));
        let rep: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(rep["mode"], mode);
    }
}

#[test]
fn failed_verification_exits_four() {
    let dir = TempDir::new().unwrap();
    let sc = dir.path().join("duck.json");
    assert_eq!(code(&ctprice(&["duckgen", "--out", s(&sc)])), 0);
    let out = dir.path().join("refine.json");
    // an order of 50 is out of reach
    let o = ctprice(&[
        "verify",
        "--scenario",
        s(&sc),
        "--mode",
        "refine",
        "--scheme",
        "spline",
        "--intervals",
        "24",
        "--levels",
        "3",
        "--min-order",
        "50",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("order"));
    assert!(out.exists());
}

#[test]
fn ingestion_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let bad = scenario(
        &dir,
        "bad.json",
        &TWO_UNIT.replacen(r#""p_min": 0, "p_max": 10"#, r#""p_min": 5, "p_max": 3"#, 1),
    );
    let out = dir.path().join("x.csv");
    let o = ctprice(&["solve", "--scenario", s(&bad), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("p_min > p_max"), "{}", stderr(&o));

    let extra = scenario(
        &dir,
        "extra.json",
        &TWO_UNIT.replacen(r#""horizon""#, r#""colour": 1, "horizon""#, 1),
    );
    let o = ctprice(&["solve", "--scenario", s(&extra), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));

    let o = ctprice(&[
        "solve",
        "--scenario",
        s(&dir.path().join("missing.json")),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

#[test]
fn bad_flags_are_rejected() {
    let o = ctprice(&[
        "solve",
        "--scenario",
        "x.json",
        "--out",
        "x.csv",
        "--intervals",
        "1",
    ]);
    assert_eq!(code(&o), 2);
    let o = ctprice(&[
        "solve",
        "--scenario",
        "x.json",
        "--out",
        "x.csv",
        "--tol",
        "0",
    ]);
    assert_eq!(code(&o), 2);
    let o = ctprice(&[
        "verify",
        "--scenario",
        "x.json",
        "--out",
        "x.csv",
        "--mode",
        "theorem9",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn shortfall_without_slack_exits_three() {
    let dir = TempDir::new().unwrap();
    let short = scenario(
        &dir,
        "short.json",
        &TWO_UNIT.replace(r#""values": [3, 3, 3]"#, r#""values": [3, 30, 3]"#),
    );
    let out = dir.path().join("x.csv");
    let o = ctprice(&["solve", "--scenario", s(&short), "--out", s(&out)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    let slack = scenario(
        &dir,
        "slack.json",
        &fs::read_to_string(&short)
            .unwrap()
            .replace(r#""enabled": false"#, r#""enabled": true"#),
    );
    let o = ctprice(&[
        "solve",
        "--scenario",
        s(&slack),
        "--intervals",
        "4",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (hdr, _) = csv(&dir.path().join("x_hourly.csv"));
    assert_eq!(hdr.last().unwrap(), "slack");
}

#[test]
fn fractional_horizon_skips_hourly_unless_requested() {
    let dir = TempDir::new().unwrap();
    let sc = scenario(
        &dir,
        "frac.json",
        &TWO_UNIT
            .replace(r#""t2": 2"#, r#""t2": 1.5"#)
            .replace(r#""times": [0, 1, 2]"#, r#""times": [0, 1, 1.5]"#),
    );
    let out = dir.path().join("f.csv");
    let o = ctprice(&["solve", "--scenario", s(&sc), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(!dir.path().join("f_hourly.csv").exists());

    let o = ctprice(&[
        "solve",
        "--scenario",
        s(&sc),
        "--out",
        s(&out),
        "--out-hourly",
        s(&dir.path().join("h.csv")),
    ]);
    assert_ne!(code(&o), 0);
}

#[test]
fn scenario_file_is_never_overwritten() {
    let dir = TempDir::new().unwrap();
    let sc = scenario(&dir, "two.json", TWO_UNIT);
    let out = dir.path().join("two.csv");
    let o = ctprice(&[
        "solve",
        "--scenario",
        s(&sc),
        "--out",
        s(&out),
        "--report",
        s(&sc),
    ]);
    assert_ne!(code(&o), 0);
    assert!(stderr(&o).contains("overwrite"));
    assert_eq!(fs::read_to_string(&sc).unwrap(), TWO_UNIT);
}
