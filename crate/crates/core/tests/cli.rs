use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn tyc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tyc")).args(args).env_remove("TYC_OUT_DIR").output().expect("spawn tyc")
}

fn run_cmd(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"];
    args.extend_from_slice(extra);
    tyc(&args)
}

const BLOWUP: &str = r#"
model = "original"
t_max = 50.0
dt = 0.5
output_interval = 0.5
[params]
beta = 16.0
K = 1.0
death = [1.0, 1.0, 1.0, 1.0]
[grid]
extents = [1.0]
cells = [4]
[initial]
kind = "constant"
values = [0.9, 0.9, 0.0, 0.0]
"#;

#[test]
fn simulate_is_reproducible_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("simulate.toml");
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (out, seed) in [(&a, "11"), (&b, "11"), (&c, "12")] {
        let o = run_cmd("simulate", &cfg, out, &["--seed", seed]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["timeseries.csv", "final_fields.csv", "summary.json"] {
        let x = std::fs::read(a.join(name)).unwrap();
        assert_eq!(x, std::fs::read(b.join(name)).unwrap(), "{name} differs between identical runs");
        assert_ne!(x, std::fs::read(c.join(name)).unwrap(), "{name} ignores the seed");
    }
    let header = std::fs::read_to_string(a.join("final_fields.csv")).unwrap();
    assert!(header.starts_with("i,j,x,y,f,m,s,r\n"));
    let rows = header.lines().count();
    assert_eq!(rows, 32 * 32 + 1);
}

#[test]
fn every_shipped_config_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("steady-states", "steady_states.toml", vec!["steady_states.json"]),
        ("compare-models", "compare_models.toml", vec!["compare.json", "original_timeseries.csv", "modified_timeseries.csv"]),
        ("probe-dependence", "probe_dependence.toml", vec!["probe.json", "probe.csv"]),
        ("bifurcate", "bifurcate.toml", vec!["bifurcation.csv", "transition.json"]),
    ];
    for (sub, file, outputs) in cases {
        let out = dir.path().join(sub);
        let o = run_cmd(sub, &configs().join(file), &out, &[]);
        assert!(o.status.success(), "{sub}: {}", String::from_utf8_lossy(&o.stderr));
        for name in outputs {
            assert!(out.join(name).is_file(), "{sub} did not write {name}");
        }
    }
    let compare: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("compare-models/compare.json")).unwrap()).unwrap();
    assert_eq!(compare["negativity_only_in_original"], true);
    let transition: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("bifurcate/transition.json")).unwrap()).unwrap();
    assert_eq!(transition["transition"]["beta_star"], 16.4);
    let csv = std::fs::read_to_string(dir.path().join("bifurcate/bifurcation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 32);
}

#[test]
fn validate_accepts_shipped_configs() {
    for file in ["simulate.toml", "steady_states.toml", "bifurcate.toml", "compare_models.toml", "probe_dependence.toml"] {
        let o = tyc(&["validate", "--config", configs().join(file).to_str().unwrap(), "--out", "unused"]);
        assert!(o.status.success(), "{file}");
        assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "configuration is valid");
    }
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, BLOWUP.replace("beta = 16.0", "beta = -1.0")).unwrap();
    let out = dir.path().join("out");
    let o = run_cmd("simulate", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(err["error"], "config");
    assert!(err["message"].as_str().unwrap().contains("beta"));

    let missing = run_cmd("simulate", &dir.path().join("nope.toml"), &out, &[]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn numerical_blowup_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("blow.toml");
    std::fs::write(&cfg, BLOWUP).unwrap();
    let o = run_cmd("simulate", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(3));
    let stderr: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(stderr["error"], "numerical");
}

#[test]
fn modified_bounds_violation_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("viol.toml");
    std::fs::write(&cfg, BLOWUP.replace("model = \"original\"", "model = \"modified\"")).unwrap();
    let out = dir.path().join("out");
    let o = run_cmd("simulate", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(4));
    let err: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(err["event"]["species"], "f");
    assert_eq!(err["event"]["kind"], "below");
    assert_eq!(err["event"]["t"], 0.5);
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_tyc"))
        .args(["steady-states", "--config", configs().join("steady_states.toml").to_str().unwrap()])
        .env("TYC_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("steady_states.json").is_file());
}
