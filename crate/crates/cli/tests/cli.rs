use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_solitonlab"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(sub: &str, cfg: &Path, out: &Path) -> Output {
    bin()
        .args([sub, "--config"])
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let (h, rows) = table(path);
    let i = h.iter().position(|c| c == name).unwrap();
    rows.into_iter().map(|r| r[i].clone()).collect()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn thresholds_for_the_unit_symmetric_case() {
    let tmp = TempDir::new().unwrap();
    let out = run("thresholds", &config("thresholds.json"), tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let path = tmp.path().join("thresholds.csv");
    let bop: f64 = column(&path, "beta_omega_p")[0].parse().unwrap();
    let c10: f64 = column(&path, "c10")[0].parse().unwrap();
    let omega: f64 = column(&path, "omega")[0].parse().unwrap();
    assert!((bop - 1.0).abs() < 1e-12);
    assert!((omega - 1.0).abs() < 1e-12);
    assert!((c10 - 4.0 / 3.0).abs() < 1e-4, "{c10}");
    let m = manifest(tmp.path());
    assert_eq!(m["status"], "ok");
    assert_eq!(m["exit_code"], 0);
}

#[test]
fn malformed_config_exits_2_without_tables() {
    let tmp = TempDir::new().unwrap();
    let cases = [
        (
            "unknown.json",
            r#"{"params":{"n":1,"p":2,"beta":1},"levels":{"m1":1,"m2":1},"bogus":1}"#,
        ),
        ("syntax.json", r#"{"params":{"n":1,"p":2"#),
        (
            "range.json",
            r#"{"params":{"n":1,"p":0.5,"beta":1},"levels":{"m1":1,"m2":1}}"#,
        ),
        ("missing.json", r#"{"params":{"n":1,"p":2,"beta":1}}"#),
    ];
    for (name, text) in cases {
        let cfg = tmp.path().join(name);
        fs::write(&cfg, text).unwrap();
        let dir = tmp.path().join(name.trim_end_matches(".json"));
        let out = run("thresholds", &cfg, &dir);
        assert_eq!(out.status.code(), Some(2), "{name}");
        let csvs = fs::read_dir(&dir)
            .map(|d| {
                d.filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv"))
                    .count()
            })
            .unwrap_or(0);
        assert_eq!(csvs, 0, "{name}");
        assert_eq!(manifest(&dir)["exit_code"], 2, "{name}");
    }
}

#[test]
fn run_kind_mismatch_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let out = run("sweep", &config("thresholds.json"), tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_writes_one_row_per_epsilon_and_is_reproducible() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for d in [&a, &b] {
        let out = run("sweep", &config("sweep.json"), d.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let conc = a.path().join("concentration.csv");
    let eps: Vec<f64> = column(&conc, "epsilon").iter().map(|s| s.parse().unwrap()).collect();
    assert_eq!(eps, vec![0.4, 0.2, 0.1]);
    let hash = manifest(a.path())["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 16);
    for name in ["concentration.csv", "energies.csv", "decay.csv"] {
        let pa = a.path().join(name);
        assert_eq!(fs::read(&pa).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
        assert!(column(&pa, "config_hash").iter().all(|h| *h == hash), "{name}");
    }
    let violations = column(&conc, "violations");
    assert!(violations.iter().all(|v| v == "0"));
}

#[test]
fn seed_changes_the_hash_only() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    run("thresholds", &config("thresholds.json"), a.path());
    bin()
        .args(["thresholds", "--seed", "99", "--config"])
        .arg(config("thresholds.json"))
        .arg("--out")
        .arg(b.path())
        .output()
        .unwrap();
    let (ma, mb) = (manifest(a.path()), manifest(b.path()));
    assert_ne!(ma["config_hash"], mb["config_hash"]);
    assert_eq!(mb["seed"], 99);
    let (ha, ra) = table(&a.path().join("thresholds.csv"));
    let (hb, rb) = table(&b.path().join("thresholds.csv"));
    assert_eq!(ha, hb);
    assert_eq!(ra[0][1..], rb[0][1..]);
}

#[test]
fn limit_and_coupled_ground_tables() {
    let tmp = TempDir::new().unwrap();
    let out = run("limit_ground", &config("limit_ground.json"), &tmp.path().join("l"));
    assert!(out.status.success());
    let e = column(&tmp.path().join("l/energies.csv"), "energy");
    let first: f64 = e[0].parse().unwrap();
    assert!((first - 4.0 / 3.0).abs() < 1e-4);
    let out = run("coupled_ground", &config("coupled_ground.json"), &tmp.path().join("c"));
    assert!(out.status.success());
    let kinds = column(&tmp.path().join("c/energies.csv"), "kind");
    assert_eq!(kinds[0], "coupled_ground");
}

#[test]
fn pohozaev_rows_per_epsilon() {
    let tmp = TempDir::new().unwrap();
    let out = run("pohozaev", &config("pohozaev.json"), tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let path = tmp.path().join("pohozaev.csv");
    let res: Vec<f64> = column(&path, "residual").iter().map(|s| s.parse().unwrap()).collect();
    let mag: Vec<f64> = column(&path, "surface_magnitude")
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    assert_eq!(res.len(), 2);
    assert!(res.iter().zip(&mag).all(|(r, m)| r.abs() < 0.05 * m));
}

#[test]
fn verify_fast_case_has_no_violations() {
    let tmp = TempDir::new().unwrap();
    let out = run("verify", &config("verify_fast.json"), tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let conc = tmp.path().join("concentration.csv");
    assert!(column(&conc, "violations").iter().all(|v| v == "0"));
    assert!(!tmp.path().join("decay.csv").exists());
}

#[test]
fn presets_listing_and_filter() {
    let out = bin().arg("presets").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let names: Vec<&str> = text.lines().filter(|l| !l.starts_with(' ')).collect();
    assert_eq!(names.len(), 4);
    let out = bin().args(["presets", "inverse", "--json"]).output().unwrap();
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 1);
    assert_eq!(v[0]["name"], "inverse-power");
}

#[test]
fn plot_is_deterministic_and_rejects_empty_dirs() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    assert!(run("sweep", &config("sweep.json"), &data).status.success());
    let svgs: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|d| {
            let o = tmp.path().join(d);
            let out = bin().arg("plot").arg(&data).arg("--out").arg(&o).output().unwrap();
            assert!(out.status.success());
            fs::read(o.join("decay.svg")).unwrap()
        })
        .collect();
    assert_eq!(svgs[0], svgs[1]);
    assert!(String::from_utf8_lossy(&svgs[0]).starts_with("<svg"));
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = bin().arg("plot").arg(&empty).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solver_failure_keeps_partial_tables() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("stall.json");
    let text = fs::read_to_string(config("verify_fast.json"))
        .unwrap()
        .replace("\"lambda_radius\": 2.0", "\"lambda_radius\": 1.0")
        .replace("\"u_radius\": 3.0", "\"u_radius\": 1.5")
        .replace("\"r_max\": 6.0, \"points\": 1201", "\"r_max\": 12.0, \"points\": 1200")
        .replace("[0.4, 0.2, 0.1]", "[0.2, 0.1]");
    fs::write(&cfg, text).unwrap();
    let dir = tmp.path().join("out");
    let out = run("verify", &cfg, &dir);
    assert_eq!(out.status.code(), Some(3));
    let m = manifest(&dir);
    assert_eq!(m["status"], "solver_error");
    assert_eq!(m["exit_code"], 3);
    assert_eq!(column(&dir.join("concentration.csv"), "epsilon"), vec!["0.2"]);
}
