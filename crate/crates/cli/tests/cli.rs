use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sofic"));
    c.env_remove("SOFIC_CACHE_DIR");
    c
}

const BERNOULLI: &str =
    "name = \"b\"\ngroup = \"Z\"\nalphabet = [\"0\", \"1\"]\nmeasure = \"bernoulli\"\nprobabilities = [0.5, 0.5]\n";
const ROTATION: &str =
    "group = \"Z\"\nalphabet = [\"0\", \"1\"]\nmeasure = \"orbit\"\norbit_configs = [[0, 1], [1, 0]]\nwindow_radius = 1\n";

fn setup(dir: &Path, system: &str, config: &str) -> PathBuf {
    std::fs::write(dir.join("system.toml"), system).unwrap();
    let p = dir.join("experiment.toml");
    std::fs::write(&p, config).unwrap();
    p
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg("--config")
        .arg(config)
        .arg("--output")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn summary(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    (1..=k).map(|i| ((n - k + i) as f64).ln() - (i as f64).ln()).sum()
}

#[test]
fn bernoulli_estimate_near_ln2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(
        dir.path(),
        BERNOULLI,
        "system = \"system.toml\"\nd = [100, 400, 1000]\nepsilon = [0.01, 0.05, 0.1]\ndelta = [0.05, 0.01]\nmethod = \"metric\"\nstrategy = \"type-class\"\n",
    );
    let out = dir.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&out);
    let est = s["estimate"].as_f64().unwrap();
    // admissible type classes at d = 1000, δ = 0.01: 491..=509 ones
    let terms: Vec<f64> = (491..=509).map(|k| ln_binomial(1000, k)).collect();
    let m = terms.iter().cloned().fold(f64::MIN, f64::max);
    let oracle = (m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()) / 1000.0;
    assert!((est - std::f64::consts::LN_2).abs() <= 0.02, "{est}");
    assert!((est - oracle).abs() < 1e-9, "{est} vs {oracle}");
    assert_eq!(s["direction"], "exact");
    assert_eq!(s["config_hash"].as_str().unwrap().len(), 64);
    let csv = std::fs::read_to_string(out.join("metric.csv")).unwrap();
    assert!(csv.starts_with("d,epsilon,F_radius,delta,L_id,mode,direction,log_count,normalized_value\n"));
    assert_eq!(csv.lines().count(), 1 + 3 * 3 * 2);
}

#[test]
fn rotation_counts_two_microstates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(
        dir.path(),
        ROTATION,
        "system = \"system.toml\"\nd = [4, 6, 10, 50, 200, 1000]\nepsilon = [0.3]\ndelta = [0.01]\nf_radius = [1]\nl_preset = [\"cyl1\"]\nmethod = \"metric\"\n",
    );
    let out = dir.path().join("out");
    assert!(run(&cfg, &out, &[]).status.success());
    let s = summary(&out);
    assert!(s["estimate"].as_f64().unwrap() <= 0.01);
    let counts = s["microstate_count"].as_object().unwrap();
    assert_eq!(counts.len(), 6);
    assert!(counts.values().all(|c| c == 2));
    assert!(s["cells"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| c["microstate_count"] == 2));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(
        dir.path(),
        BERNOULLI,
        "system = \"system.toml\"\nd = [12, 14, 200]\nepsilon = [0.2, 0.6]\ndelta = [0.1]\nmethod = \"both\"\nstrategy = \"auto\"\nseed = 7\n",
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    let cache = dir.path().join("cache");
    assert!(run(&cfg, &a, &[]).status.success());
    assert!(run(&cfg, &b, &["--jobs", "1"]).status.success());
    // first run fills the cache, second run reads from it
    assert!(run(&cfg, &c, &["--cache", cache.to_str().unwrap()]).status.success());
    assert!(std::fs::read_dir(&cache).unwrap().next().is_some());
    let d = dir.path().join("d");
    assert!(run(&cfg, &d, &["--cache", cache.to_str().unwrap()]).status.success());
    for f in ["metric.csv", "observable.csv", "summary.json"] {
        let x = std::fs::read(a.join(f)).unwrap();
        for other in [&b, &c, &d] {
            assert_eq!(x, std::fs::read(other.join(f)).unwrap(), "{f} differs");
        }
    }
}

#[test]
fn monte_carlo_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(
        dir.path(),
        BERNOULLI,
        "system = \"system.toml\"\nd = [24]\nepsilon = [0.5]\ndelta = [0.2]\nmethod = \"metric\"\nstrategy = \"monte-carlo\"\nsamples = 4096\n",
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    assert!(run(&cfg, &a, &["--seed", "3"]).status.success());
    assert!(run(&cfg, &b, &["--seed", "3", "--jobs", "2"]).status.success());
    assert!(run(&cfg, &c, &["--seed", "4"]).status.success());
    let csv = |p: &Path| std::fs::read_to_string(p.join("metric.csv")).unwrap();
    assert_eq!(csv(&a), csv(&b));
    assert_ne!(summary(&a)["config_hash"], summary(&c)["config_hash"]);
}

#[test]
fn config_hash_ignores_key_order() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("system.toml"), BERNOULLI).unwrap();
    let one = dir.path().join("one.toml");
    let two = dir.path().join("two.toml");
    std::fs::write(
        &one,
        "system = \"system.toml\"\nd = [10]\nepsilon = [0.5]\ndelta = [0.2]\nmethod = \"metric\"\n",
    )
    .unwrap();
    std::fs::write(
        &two,
        "method = \"metric\"\ndelta = [0.2]\nepsilon = [0.5]\nd = [10]\nsystem = \"system.toml\"\n",
    )
    .unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&one, &a, &[]).status.success());
    assert!(run(&two, &b, &[]).status.success());
    assert_eq!(summary(&a)["config_hash"], summary(&b)["config_hash"]);
    // editing the referenced system changes the hash
    std::fs::write(
        dir.path().join("system.toml"),
        BERNOULLI.replace("name = \"b\"", "name = \"c\""),
    )
    .unwrap();
    let c = dir.path().join("c");
    assert!(run(&one, &c, &[]).status.success());
    assert_ne!(summary(&a)["config_hash"], summary(&c)["config_hash"]);
}

#[test]
fn empty_microstate_space_reports_negative_infinity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(
        dir.path(),
        "group = \"Z\"\nalphabet = [\"0\", \"1\"]\nmeasure = \"orbit\"\norbit_configs = [[0], [1]]\n",
        "system = \"system.toml\"\nd = [16, 32]\nepsilon = [0.1]\ndelta = [0.05]\nf_radius = [1]\nmethod = \"metric\"\n",
    );
    let out = dir.path().join("out");
    assert!(run(&cfg, &out, &[]).status.success());
    let s = summary(&out);
    assert_eq!(s["estimate"], "-inf");
    for c in s["cells"].as_array().unwrap() {
        let v = c["violated_constraints"].as_array().unwrap();
        assert!(v.contains(&"equivariance".into()) && v.contains(&"empirical".into()));
    }
}

#[test]
fn spectral_certificate_bounds_rotation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cert.toml");
    std::fs::write(
        &cfg,
        "support_radius = 127\nd = [256]\nepsilon = [0.01]\nmethod = \"spectral-certificate\"\nwitness_length = 128\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    assert!(run(&cfg, &out, &[]).status.success());
    let s = summary(&out);
    let bound = s["estimate"].as_f64().unwrap();
    // 2·(1/256)·ln(301)
    let expected = 2.0 / 256.0 * (3.01f64 / 0.01).ln();
    assert!((bound - expected).abs() < 1e-9, "{bound}");
    assert!(bound >= std::f64::consts::LN_2 / 256.0);
    assert_eq!(s["cells"][0]["trace_ok"], true);
}

#[test]
fn strict_fails_on_cell_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(
        dir.path(),
        BERNOULLI,
        "system = \"system.toml\"\nd = [10, 40]\nepsilon = [0.5]\ndelta = [0.2]\nmethod = \"metric\"\nstrategy = \"exact\"\n",
    );
    let out = dir.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert!(o.status.success());
    assert!(summary(&out)["cells"][1]["error"].is_string());
    let o = run(&cfg, &out, &["--strict"]);
    assert!(!o.status.success());
}

#[test]
fn malformed_configs_are_diagnosed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = setup(
        dir.path(),
        BERNOULLI,
        "system = \"system.toml\"\nd = [10]\nepsilon = [0.5]\ndelta = [0.2]\nmethod = \"metric\"\ncolour = 1\n",
    );
    let o = run(&cfg, &out, &[]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
    let cfg = setup(
        dir.path(),
        BERNOULLI,
        "system = \"system.toml\"\nd = [10\nmethod = \"metric\"\n",
    );
    let o = run(&cfg, &out, &[]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));
    let cfg = setup(
        dir.path(),
        BERNOULLI,
        "system = \"system.toml\"\nd = [10]\nepsilon = []\ndelta = [0.2]\nmethod = \"metric\"\n",
    );
    let o = run(&cfg, &out, &[]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("epsilon"));
}

#[test]
fn unwritable_output_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(
        dir.path(),
        BERNOULLI,
        "system = \"system.toml\"\nd = [10]\nepsilon = [0.5]\ndelta = [0.2]\nmethod = \"metric\"\n",
    );
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let o = run(&cfg, &blocker.join("out"), &[]);
    assert!(!o.status.success());
}

fn verify(suite: &str) -> Output {
    bin().args(["--verify", suite]).output().unwrap()
}

#[test]
fn verify_suites_pass() {
    for suite in ["packing", "chain", "schur", "witness"] {
        let o = verify(suite);
        assert!(o.status.success(), "{suite}: {}", String::from_utf8_lossy(&o.stdout));
        let v: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(v[0]["suite"], suite);
        assert_eq!(v[0]["pass"], true);
        assert!(v[0]["properties"]
            .as_array()
            .unwrap()
            .iter()
            .all(|p| p["violations"] == 0));
    }
    let v: Value = serde_json::from_slice(&verify("packing").stdout).unwrap();
    assert_eq!(v[0]["properties"][0]["checked"], 200);
}

#[test]
fn verify_rejects_empty_and_unknown_suites() {
    let o = verify("");
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("suite"));
    let o = verify("nope");
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown suite"));
}
