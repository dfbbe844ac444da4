use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "\
[cell]
period_t = 1.0
period_x = 2.0
n_t = 64
n_x = 32

[kernel]
name = \"biweight\"
radius = 1.0

[a0]
constant = 1.0
[[a0.modes]]
m = 0
n = 1
amp = 0.3

[b]
constant = 1.0

[wave]
n_t = 16
n_x = 16
";

fn nlkpp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlkpp")).args(args).output().expect("binary runs")
}

fn setup(text: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("problem.toml");
    fs::write(&cfg, text).unwrap();
    (dir, cfg)
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn speed_writes_summary_csv_and_manifest() {
    let (dir, cfg) = setup(SMALL);
    let out = dir.path().join("out");
    let o = nlkpp(&["speed", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = json(&out.join("speed_plus.json"));
    let c = summary["c_star"].as_f64().unwrap();
    assert!(c > 0.5 && c < 0.7, "{c}");
    assert!(summary["mu_star"].as_f64().unwrap() > 0.0);
    let csv = fs::read_to_string(out.join("speed_plus.csv")).unwrap();
    assert!(csv.starts_with("mu,lambda,quotient"));
    let manifest = json(&out.join("speed.manifest.json"));
    assert_eq!(manifest["config_sha256"], summary["config_sha256"]);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["grid"]["n_x"], 32);
}

#[test]
fn summaries_are_deterministic() {
    let (dir, cfg) = setup(SMALL);
    let runs: Vec<String> = ["a", "b"]
        .iter()
        .map(|sub| {
            let out = dir.path().join(sub);
            let o = nlkpp(&["eigen", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--mu", "0.7", "--xi", "-1"]);
            assert!(o.status.success());
            fs::read_to_string(out.join("eigen_minus.json")).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn wave_at_minimal_speed_is_rejected() {
    let (dir, cfg) = setup(SMALL);
    let out = dir.path().join("out");
    let o = nlkpp(&["wave", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--speed-multiple", "1.0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no wave below the minimal speed"));
}

#[test]
fn wave_above_minimal_speed_passes_checks() {
    let (dir, cfg) = setup(SMALL);
    let out = dir.path().join("out");
    let o = nlkpp(&["wave", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--xi", "-1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = json(&out.join("wave_minus.json"));
    assert_eq!(summary["report"]["passed"], true);
    let csv = fs::read_to_string(out.join("wave_minus.csv")).unwrap();
    assert!(csv.starts_with("eta,t,z,psi_upper,psi_lower"));
}

#[test]
fn invalid_config_exits_with_validation_code() {
    let (dir, cfg) = setup(&SMALL.replace("[b]\nconstant = 1.0", "[b]\nconstant = 0.0"));
    let out = dir.path().join("out");
    let o = nlkpp(&["steady", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("saturation must be strictly positive") && err.contains("line 19"), "{err}");
}

#[test]
fn verify_passes_on_minimal_config() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/minimal.toml");
    let dir = tempfile::tempdir().unwrap();
    let o = nlkpp(&["verify", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(json(&dir.path().join("verify.json"))["passed"], true);
}
