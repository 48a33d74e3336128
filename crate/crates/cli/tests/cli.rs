use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(name: &str) -> PathBuf {
    root().join("configs").join(name)
}

fn slowfast(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slowfast"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn read(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn check_schema(value: &Value, schema: &str) {
    let schema: Value = read(&root().join("schemas").join(format!("{schema}.schema.json")));
    let v = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = v.iter_errors(value).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{schema}: {errors:?}");
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn chemostat_without_verify() -> String {
    let text = std::fs::read_to_string(config("chemostat.toml")).unwrap();
    text.split("[verify]").next().unwrap().to_string()
}

#[test]
fn chemostat_analyze_is_deterministic_and_schema_valid() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = slowfast(&["analyze"], &config("chemostat.toml"), out);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["manifest.json", "candidates.json", "verification.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
        check_schema(&read(&a.join(f)), f.trim_end_matches(".json"));
    }
    let c = read(&a.join("candidates.json"));
    let cands = c["candidates"].as_array().unwrap();
    assert_eq!(cands.len(), 1);
    assert_eq!(cands[0]["stability"], "stable");
    assert!((cands[0]["s0"].as_f64().unwrap() - 6.92).abs() < 0.05);
    assert!(a.join(cands[0]["orbit_file"].as_str().unwrap()).exists());
    assert!(a.join("scan.csv").exists());

    let m = read(&a.join("manifest.json"));
    assert_eq!(m["config"]["scan"]["parameterization"], "peak_height");
    assert_eq!(m["config"]["tolerances"]["lambda_tol"], 1e-4);

    let v = read(&a.join("verification.json"));
    let reports = v["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 3);
    for r in reports {
        assert_eq!(r["report"]["converged"], true, "{r}");
        assert!(a.join(r["orbit_file"].as_str().unwrap()).exists());
    }
}

#[test]
fn empty_epsilon_list_skips_verification() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &chemostat_without_verify());
    let out = tmp.path().join("out");
    let o = slowfast(&["analyze"], &cfg, &out);
    assert!(o.status.success());
    assert!(out.join("candidates.json").exists());
    assert!(!out.join("verification.json").exists());
    assert!(!out.join("orbits/periodic_0_0.csv").exists());
}

#[test]
fn exit_codes_and_error_json() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");

    let bad = write_config(tmp.path(), &chemostat_without_verify().replace("rho = 1.0", "rho = \"one\""));
    let o = slowfast(&["analyze"], &bad, &out);
    assert_eq!(o.status.code(), Some(2));
    let e: Value = serde_json::from_slice(&o.stderr).unwrap();
    check_schema(&e, "error");
    assert_eq!(e["error"]["path"], "model.chemostat.rho");

    let unknown = write_config(tmp.path(), &format!("{}\n[extra]\nx = 1\n", chemostat_without_verify()));
    assert_eq!(slowfast(&["analyze"], &unknown, &out).status.code(), Some(2));

    let nowhere = write_config(tmp.path(), &chemostat_without_verify().replace("[5.0, 9.5]", "[20.0, 30.0]"));
    let o = slowfast(&["analyze"], &nowhere, &out);
    assert_eq!(o.status.code(), Some(3));
    check_schema(&serde_json::from_slice(&o.stderr).unwrap(), "error");

    let o = slowfast(&["analyze"], &config("symmetric_toy.toml"), &out);
    assert_eq!(o.status.code(), Some(4));
    let c = read(&out.join("candidates.json"));
    assert!(!c["warnings"].as_array().unwrap().is_empty());
    assert!(c["candidates"].as_array().unwrap().iter().all(|c| c["stability"] == "degenerate"));

    let o = slowfast(&["verify", "--candidates", "missing.json"], &config("chemostat.toml"), &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("slowfast analyze"));
    let o = slowfast(&["chi", "--orbit", "missing.json"], &config("chemostat.toml"), &out);
    assert!(String::from_utf8_lossy(&o.stderr).contains("slowfast orbit"));
}

#[test]
fn stage_subcommands_reproduce_analyze() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("chemostat.toml");
    let full = tmp.path().join("full");
    assert!(slowfast(&["analyze"], &cfg, &full).status.success());

    // chi on a stored orbit against the scan row at the same s
    let scan = std::fs::read_to_string(full.join("scan.csv")).unwrap();
    let row: Vec<&str> = scan.lines().nth(5).unwrap().split(',').collect();
    let stage = tmp.path().join("stage");
    assert!(slowfast(&["orbit", "--s", row[0]], &cfg, &stage).status.success());
    let orbit = stage.join("orbit.json").to_string_lossy().into_owned();
    assert!(slowfast(&["chi", "--orbit", &orbit], &cfg, &stage).status.success());
    assert!(slowfast(&["lambda", "--orbit", &orbit], &cfg, &stage).status.success());
    let chi = read(&stage.join("chi.json"));
    let lam = read(&stage.join("lambda.json"));
    check_schema(&read(&stage.join("orbit.json")), "orbit");
    check_schema(&chi, "chi");
    check_schema(&lam, "lambda");
    let scan_chi: f64 = row[2].parse().unwrap();
    let scan_lambda: f64 = row[4].parse().unwrap();
    assert_eq!(chi["chi"].as_f64().unwrap(), scan_chi);
    assert_eq!(lam["lambda"].as_f64().unwrap(), scan_lambda);

    let cands = full.join("candidates.json").to_string_lossy().into_owned();
    let o = slowfast(&["verify", "--candidates", &cands], &cfg, &stage);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(stage.join("verification.json")).unwrap(), std::fs::read(full.join("verification.json")).unwrap());
}

#[test]
fn sweep_matches_independent_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let base = write_config(tmp.path(), &chemostat_without_verify());
    let out = tmp.path().join("sweep");
    let o = slowfast(&["sweep", "--param", "model.chemostat.response.a", "--values", "1.0,1.5,2.0"], &base, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sweep = read(&out.join("sweep.json"));
    check_schema(&sweep, "sweep");
    let rows = sweep["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for (k, a) in ["1.0", "1.5", "2.0"].iter().enumerate() {
        let text = chemostat_without_verify().replace("a = 1.5", &format!("a = {a}"));
        let dir = tmp.path().join(format!("single_{k}"));
        std::fs::create_dir_all(&dir).unwrap();
        let cfg = write_config(&dir, &text);
        assert!(slowfast(&["analyze"], &cfg, &dir.join("out")).status.success());
        let single = read(&dir.join("out/candidates.json"));
        let expect: Vec<Value> = single["candidates"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.as_object_mut().unwrap().remove("orbit_file");
                c
            })
            .collect();
        assert_eq!(rows[k]["candidates"].as_array().unwrap(), &expect, "a = {a}");
        assert_eq!(rows[k]["candidates"].as_array().unwrap().len(), 1);
    }
}

#[test]
fn epidemic_case2_two_candidates() {
    let tmp = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("epidemic_case2.toml")).unwrap();
    let cfg = write_config(tmp.path(), text.split("[verify]").next().unwrap());
    let out = tmp.path().join("out");
    let o = slowfast(&["analyze"], &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let c = read(&out.join("candidates.json"));
    check_schema(&c, "candidates");
    let st: Vec<&str> = c["candidates"].as_array().unwrap().iter().map(|c| c["stability"].as_str().unwrap()).collect();
    assert_eq!(st, ["unstable", "stable"]);
    assert!(out.join("table.csv").exists());
}

#[test]
fn worker_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("chemostat.toml");
    let mut outs = Vec::new();
    for w in ["1", "4"] {
        let out = tmp.path().join(w);
        let o = Command::new(env!("CARGO_BIN_EXE_slowfast"))
            .env("SLOWFAST_WORKERS", w)
            .args(["analyze", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(o.status.success());
        outs.push(out);
    }
    for f in ["candidates.json", "verification.json"] {
        assert_eq!(std::fs::read(outs[0].join(f)).unwrap(), std::fs::read(outs[1].join(f)).unwrap());
    }
    let o = Command::new(env!("CARGO_BIN_EXE_slowfast"))
        .env("SLOWFAST_WORKERS", "many")
        .args(["analyze", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
