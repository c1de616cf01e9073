//! The binary end to end: exit codes, report blocks and output placement.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_polykin");

fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// Small, fast transport run; `m` and `x_max` are the knobs the tests turn.
fn transport_toml(m: f64, x_max: f64) -> String {
    format!(
        r#"name = "small"
regime = "increasing"

[model.depoly]
kind = "linear_increasing"
d0 = 0.5
alpha = 1.0

[model.frag.rate]
kind = "none"

[model.nucleation]
epsilon = 0
i0 = 1

[initial]
m = {m}
u0 = {{ kind = "gaussian", center = 1.0, width = 0.15, number = 1.0 }}

[grid]
x_max = {x_max}
n_cells = 256

[options]
t_end = 2.0
output_stride = 0.5
"#
    )
}

fn polykin(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("POLYKIN_OUT").output().expect("binary runs")
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).expect("report.json")).unwrap()
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    names
}

#[test]
fn malformed_config_exits_1_with_report_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "name = \"x\"\n[grid\nx_max = 1").unwrap();
    let out = tmp.path().join("out");
    let run = polykin(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1));
    assert_eq!(listing(&out), vec!["report.json"]);
    let r = report(&out);
    assert_eq!(r["status"], "error");
    assert_eq!(r["error"]["kind"], "parse");
    assert_eq!(r["error"]["exit_code"], 1);
}

#[test]
fn steady_with_increasing_d_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("inc.toml");
    fs::write(&cfg, transport_toml(2.0, 4.0)).unwrap();
    let run = polykin(&["steady", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));
    assert_eq!(report(tmp.path())["error"]["kind"], "validation");
}

#[test]
fn leak_exits_3_with_grid_hint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("leak.toml");
    // V stays far above d on the whole grid, so polymers run off the end
    fs::write(&cfg, transport_toml(30.0, 1.6)).unwrap();
    let run = polykin(&["simulate", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(3));
    let r = report(tmp.path());
    assert_eq!(r["error"]["kind"], "runtime");
    assert!(r["error"]["grid_hint"]["x_max_suggested"].as_f64().unwrap() > 1.6);
    assert!(!tmp.path().join("series.csv").exists());
}

#[test]
fn empty_sweep_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("s.toml");
    fs::write(&cfg, transport_toml(2.0, 4.0)).unwrap();
    let run = polykin(&["sweep", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap(), "--axis", "initial.m"]);
    assert_eq!(run.status.code(), Some(2));
    assert_eq!(report(tmp.path())["error"]["kind"], "validation");
}

#[test]
fn sweep_writes_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("s.toml");
    fs::write(&cfg, transport_toml(2.0, 4.0)).unwrap();
    let out = tmp.path().join("out");
    let run = polykin(&[
        "sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--axis", "initial.m", "--values", "1.5,2.5",
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("initial.m,V_end"));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("s.toml");
    fs::write(&cfg, transport_toml(2.0, 4.0)).unwrap();
    let mut texts = Vec::new();
    for k in 0..2 {
        let out = tmp.path().join(format!("run{k}"));
        let run = polykin(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(run.status.code(), Some(0));
        texts.push(fs::read(out.join("series.csv")).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
    assert!(String::from_utf8_lossy(&texts[0]).starts_with("# polykin "));
}

#[test]
fn environment_overrides_out_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("s.toml");
    fs::write(&cfg, transport_toml(2.0, 4.0)).unwrap();
    let flagged = tmp.path().join("flag");
    let env = tmp.path().join("env");
    let run = Command::new(BIN)
        .args(["simulate", "--config", cfg.to_str().unwrap(), "--out", flagged.to_str().unwrap()])
        .env("POLYKIN_OUT", &env)
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(0));
    assert!(env.join("series.csv").exists());
    assert!(!flagged.exists());
}

#[test]
fn bundled_steady_scenario_solves_on_both_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scenario_dir().join("steady.toml");
    let mut v_bar = Vec::new();
    for path in ["direct", "faithful"] {
        let out = tmp.path().join(path);
        let run = polykin(&[
            "steady", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--path", path, "--resolution", "1000",
        ]);
        assert_eq!(run.status.code(), Some(0), "{path}: {}", String::from_utf8_lossy(&run.stderr));
        let r = report(&out);
        assert_eq!(r["status"], "ok");
        v_bar.push(r["v_bar"].as_f64().unwrap());
        assert!(out.join("steady_u.csv").exists());
    }
    assert!((v_bar[0] - v_bar[1]).abs() < 1e-2, "{v_bar:?}");
}

#[test]
fn unknown_suite_is_a_parse_error() {
    let tmp = tempfile::tempdir().unwrap();
    let run = polykin(&["verify", "--suite", "nope", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1));
}
