use serde_json::Value;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_singcurv"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn report(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn identities_pass_and_self_test_locates_term() {
    let o = run(&["verify-identities", "--dims", "2,4"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["result"]["passed"], Value::Bool(true));
    assert_eq!(v["tool"], "singcurv");

    let o = run(&["verify-identities", "--dims", "4", "--self-test"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("G0"));
}

#[test]
fn usage_and_config_errors_exit_2() {
    assert_eq!(run(&["verify-identities"]).status.code(), Some(2));
    assert_eq!(run(&["verify-identities", "--dims", "9"]).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", "[curvature.metric]\nfamily = \"flat\"\nn = 2\nextra = 1\n");
    assert_eq!(run(&["curvature", "--config", &bad]).status.code(), Some(2));
    let bad_top = write_config(dir.path(), "top.toml", "sede = 3\n");
    assert_eq!(run(&["curvature", "--config", &bad_top]).status.code(), Some(2));
    assert_eq!(run(&["curvature"]).status.code(), Some(2));
}

#[test]
fn curvature_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cone.json");
    let cfg = configs().join("cone_atom.toml");
    let o = run(&["curvature", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let v = report(&out);
    let w = v["result"]["atoms"][0]["weight"].as_f64().unwrap();
    assert!((w - 2.0 * std::f64::consts::PI).abs() < 1e-6 * w);
    assert_eq!(v["config_sha256"].as_str().unwrap().len(), 64);

    let out = dir.path().join("flat.json");
    let cfg = configs().join("flat.toml");
    assert_eq!(run(&["curvature", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.code(), Some(0));
    let v = report(&out);
    assert!(v["result"]["atoms"].as_array().unwrap().is_empty());
    assert!(v["result"]["strata"].as_array().unwrap().is_empty());

    let out = dir.path().join("disk.json");
    let cfg = configs().join("doubled_disk.toml");
    assert_eq!(run(&["curvature", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.code(), Some(0));
    let d = report(&out)["result"]["strata"][0]["density"].as_f64().unwrap();
    assert!((d - 4.0).abs() < 1e-6);
}

#[test]
fn integrability_cone_dirac_square() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "int.toml",
        "[integrability]\naudits = [\"dirac_square\"]\nexpect_all_integrable = true\n[integrability.metric]\nfamily = \"cone\"\nc = 0.5\nn = 2\n",
    );
    let out = dir.path().join("int.json");
    let o = run(&["integrability", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(report(&out)["result"]["all_integrable"], Value::Bool(true));
}

#[test]
fn dirac_sweep_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "d.toml", "[dirac]\ncs = [0.0, 0.25]\nns = [16]\nchecks = [\"adjointness\"]\n");
    let out = dir.path().join("d.csv");
    let o = run(&["dirac", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "9"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    let idx = headers.iter().position(|h| h == "index").unwrap();
    let rows: Vec<_> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| &r[idx] == "0"));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["seed"], 9);
    assert!(summary["result"]["checks"]["adjointness"]["residual"].as_f64().unwrap() < 1e-12);

    let bad = write_config(dir.path(), "b.toml", "[dirac]\nspins = [\"PX\"]\n");
    assert_eq!(run(&["dirac", "--config", &bad]).status.code(), Some(2));
}

#[test]
fn harmonic_verdicts_by_dimension() {
    for (name, want) in [("harmonic_n2.toml", "not_met"), ("harmonic_n3.toml", "met")] {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("h.json");
        let cfg = configs().join(name);
        let o = run(&["harmonic", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(report(&out)["result"]["report"]["verdict"], want);
    }
    // wrong expectation is an assertion failure
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "h.toml", "[harmonic]\nexpect = \"met\"\n[harmonic.metric]\nfamily = \"harmonic_cone\"\nc = 0.5\nn = 2\n");
    assert_eq!(run(&["harmonic", "--config", &cfg]).status.code(), Some(1));
    // a non-harmonic chart is refused
    let cfg = write_config(dir.path(), "s.toml", "[harmonic.metric]\nfamily = \"stereographic_sphere\"\nn = 3\nradius = 1.0\n");
    assert_eq!(run(&["harmonic", "--config", &cfg]).status.code(), Some(1));
}

#[test]
fn runs_are_deterministic() {
    let a = run(&["verify-identities", "--dims", "6", "--seed", "4"]);
    let b = run(&["verify-identities", "--dims", "6", "--seed", "4"]);
    assert_eq!(a.stdout, b.stdout);
}
