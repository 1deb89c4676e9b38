use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use utilab::{prepare, CliError, Overrides, RunConfig};

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn config(name: &str) -> PathBuf {
    crate_dir().join("configs").join(name)
}

fn utilab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_utilab")).args(args).output().unwrap()
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn bundled_configs_round_trip() {
    for name in ["duality.toml", "trinomial.toml", "bs_crra.toml"] {
        let c = RunConfig::load(&config(name)).unwrap();
        let again = RunConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(again, c, "{name}");
        assert_eq!(again.to_toml(), c.to_toml());
        c.prepare(&crate_dir().join("configs")).unwrap();
    }
}

#[test]
fn duality_check_matches_golden_certificates() {
    let out = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let o = utilab(&[
        "duality-check",
        "--config",
        config("duality.toml").to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(start.elapsed().as_secs_f64() < 2.0);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let golden = crate_dir().join("tests/golden/duality");
    let mut n = 0;
    for e in fs::read_dir(&golden).unwrap() {
        let p = e.unwrap().path();
        let name = p.file_name().unwrap();
        assert_eq!(read(&out.path().join(name)), read(&p), "{name:?}");
        n += 1;
    }
    assert_eq!(n, 4);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("PASS weak_duality"));
}

#[test]
fn sensitivity_matches_golden_csv() {
    let out = tempfile::tempdir().unwrap();
    let o = utilab(&[
        "sensitivity",
        "--config",
        config("bs_crra.toml").to_str().unwrap(),
        "--seed",
        "42",
        "--check",
        "sensitivity",
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["sensitivity.csv", "derivative.csv"] {
        assert_eq!(read(&out.path().join(f)), read(&crate_dir().join("tests/golden").join(f)), "{f}");
    }
}

#[test]
fn empty_selection_writes_an_empty_manifest() {
    let out = tempfile::tempdir().unwrap();
    let o = utilab(&[
        "all",
        "--config",
        config("duality.toml").to_str().unwrap(),
        "--check",
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let manifest = read(&out.path().join("manifest.jsonl"));
    let lines: Vec<serde_json::Value> = manifest.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["record"], "run");
    assert_eq!(lines[0]["checks"], 0);
    assert_eq!(lines[0]["passed"], true);
    assert_eq!(fs::read_dir(out.path()).unwrap().count(), 1);
}

#[test]
fn manifest_records_every_check() {
    let out = tempfile::tempdir().unwrap();
    let o =
        utilab(&["all", "--config", config("trinomial.toml").to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let lines: Vec<serde_json::Value> =
        read(&out.path().join("manifest.jsonl")).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let run = lines.last().unwrap();
    assert_eq!(run["checks"], 8);
    assert_eq!(run["seed"], 42);
    assert_eq!(run["version"], env!("CARGO_PKG_VERSION"));
    let tree_bytes = fs::read(config("trinomial2.tree.toml")).unwrap();
    use sha2::Digest;
    assert_eq!(run["input_hash"], hex::encode(sha2::Sha256::digest(&tree_bytes)));
    // the embedded configuration reproduces the hash
    let embedded = RunConfig::parse(run["config"].as_str().unwrap()).unwrap();
    assert_eq!(run["config_hash"], embedded.hash());
    for rec in &lines[..lines.len() - 1] {
        assert_eq!(rec["record"], "check");
        assert_eq!(rec["passed"], true);
        for f in rec["files"].as_array().unwrap() {
            assert!(out.path().join(f.as_str().unwrap()).exists());
        }
    }
    // a certificate per check, each parseable
    let cert = read(&out.path().join("sensitivity.cert"));
    let c = utilab_core::duality::Certificate::parse(&cert).unwrap();
    assert!(c.passed);
    assert!(c.get("max_gap").is_some());
    // one continuity table per evaluation time, grid indices 0 and 1
    for t in [0, 1] {
        let table = read(&out.path().join(format!("continuity_t{t}.csv")));
        assert!(table.starts_with("eps,value\n"));
        assert_eq!(table.lines().count(), 8);
    }
}

#[test]
fn failing_check_exits_nonzero_with_a_report() {
    let dir = tempfile::tempdir().unwrap();
    // the coarse binomial tree carries an O(Δt) formula bias above 1e-4
    let text = read(&config("duality.toml"))
        .replace("checks = [", "checks = [\"sensitivity\", ")
        .replace("binomial2.tree.toml", config("binomial2.tree.toml").to_str().unwrap());
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, text).unwrap();
    let out = dir.path().join("out");
    let o = utilab(&["sensitivity", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("FAIL sensitivity"), "{stdout}");
    assert!(stdout.contains("max_gap="));
    assert!(read(&out.join("derivative.csv")).contains("false"));
}

fn expected_key(text: &str) -> String {
    text.lines()
        .next()
        .and_then(|l| l.strip_prefix("# expect: "))
        .expect("corpus file starts with `# expect:`")
        .to_string()
}

#[test]
fn invalid_configs_name_the_offending_key() {
    let dir = crate_dir().join("tests/invalid");
    let mut n = 0;
    for e in fs::read_dir(&dir).unwrap() {
        let p = e.unwrap().path();
        let key = expected_key(&read(&p));
        match prepare(&p, &Overrides::default()) {
            Ok(_) => panic!("{} was accepted", p.display()),
            Err(CliError::Config { key: k, msg }) => assert_eq!(k, key, "{}: {msg}", p.display()),
            Err(CliError::Parse(msg)) => assert!(msg.contains(&key), "{}: {msg}", p.display()),
            Err(other) => panic!("{}: unexpected {other}", p.display()),
        }
        n += 1;
    }
    assert!(n >= 20);
}

#[test]
fn invalid_config_exits_nonzero_with_a_diagnostic() {
    let p = crate_dir().join("tests/invalid/negative_sigma.toml");
    let o = utilab(&["all", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("model.sigma"), "{stderr}");
}

#[test]
fn duality_check_needs_a_tree() {
    let o = utilab(&["duality-check", "--config", config("bs_crra.toml").to_str().unwrap(), "--out", "/nonexistent/x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.kind"));
}

#[test]
fn worker_count_does_not_change_tables() {
    let dir = tempfile::tempdir().unwrap();
    let text = read(&config("bs_crra.toml")).replace("paths = 100000", "paths = 2000");
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, text).unwrap();
    let mut outs = Vec::new();
    for jobs in ["1", "3"] {
        let out = dir.path().join(format!("j{jobs}"));
        let o = utilab(&[
            "perturb-check",
            "--config",
            cfg.to_str().unwrap(),
            "--jobs",
            jobs,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
        outs.push(out);
    }
    for f in ["deflator.csv", "probe.csv"] {
        assert_eq!(read(&outs[0].join(f)), read(&outs[1].join(f)), "{f}");
    }
}
