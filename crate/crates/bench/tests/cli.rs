use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_saddle-scale"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const MINIMAL: &str = r#"{
  "name": "mini",
  "problems": [{"kind": "quadratic", "name": "q", "dx": 3, "dy": 2, "mu": 0.5, "lipschitz": 2.0}],
  "optimizers": [{"name": "eg", "method": "extragrad", "gamma": 0.00125,
                  "scaling": {"preset": "oasis"}, "iterations": 10, "gap_radius": 1.0}]
}"#;

fn only_dir(root: &Path) -> std::path::PathBuf {
    let mut dirs: Vec<_> = std::fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.pop().unwrap()
}

#[test]
fn minimal_run_writes_one_csv_with_ten_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", MINIMAL);
    let out = run_in(tmp.path(), &["run", &cfg]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("master_seed 42"), "{stdout}");
    let dir = only_dir(&tmp.path().join("results"));
    let csv = std::fs::read_to_string(dir.join("q__eg__r0.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "t,r2_weighted,dist2,grad_norm2,gap,dhat_min,dhat_max,grad_calls"
    );
    assert_eq!(lines.len(), 11);
    assert!(lines[10].ends_with(",20"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
    assert_eq!(summary["config"]["optimizers"][0]["scaling"]["beta"], 0.999);
    let digest = summary["digest"].as_str().unwrap();
    assert!(dir
        .file_name()
        .unwrap()
        .to_string_lossy()
        .ends_with(&digest[..12]));
}

#[test]
fn expected_divergence_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let body = r#"{
      "name": "div",
      "problems": [{"kind": "bilinear", "name": "b", "d": 2, "lipschitz": 1.0}],
      "optimizers": [{"name": "gda", "method": "sgda", "gamma": 1.0, "scaling": {"preset": "identity"},
                      "iterations": 5000, "expect_divergence": true}]
    }"#;
    let cfg = write_config(tmp.path(), "c.json", body);
    let out = run_in(tmp.path(), &["run", &cfg, "--serial"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let dir = only_dir(&tmp.path().join("results"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["cells"][0]["diverged"], true);
    // the prefix before the abort is on disk
    let rows = std::fs::read_to_string(dir.join("b__gda__r0.csv"))
        .unwrap()
        .lines()
        .count()
        - 1;
    assert_eq!(
        rows as u64,
        summary["cells"][0]["diverged_at"].as_u64().unwrap()
    );

    let unexpected = write_config(
        tmp.path(),
        "u.json",
        &body.replace(", \"expect_divergence\": true", ""),
    );
    assert_eq!(
        run_in(tmp.path(), &["run", &unexpected]).status.code(),
        Some(1)
    );
}

#[test]
fn missing_gamma_exits_2_and_names_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &MINIMAL.replace(r#""gamma": 0.00125,"#, ""),
    );
    let out = run_in(tmp.path(), &["run", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));
}

#[test]
fn failing_embedded_check_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let body = MINIMAL.replace(
        r#""optimizers""#,
        r#""checks": [{"kind": "final-dist2-below", "value": 1e-30}], "optimizers""#,
    );
    let cfg = write_config(tmp.path(), "c.json", &body);
    assert_eq!(run_in(tmp.path(), &["run", &cfg]).status.code(), Some(1));
}

#[test]
fn serial_and_parallel_outputs_match() {
    let tmp = tempfile::tempdir().unwrap();
    let body = r#"{
      "name": "par",
      "repeats": 3,
      "problems": [{"kind": "quadratic", "name": "q", "dx": 4, "dy": 4, "mu": 0.5, "lipschitz": 2.0, "sigma": 0.5},
                   {"kind": "minty", "name": "m", "sigma": 0.01}],
      "optimizers": [{"name": "eg", "method": "extragrad", "gamma": 0.002, "scaling": {"preset": "adahessian"}, "iterations": 300},
                     {"name": "sc", "method": "single-call-momentum", "gamma": 0.001, "eta": 0.001, "anchor_prob": 0.25,
                      "scaling": {"preset": "oasis", "update_prob": 0.5}, "iterations": 300}]
    }"#;
    let serial = tmp.path().join("s");
    let parallel = tmp.path().join("p");
    std::fs::create_dir_all(&serial).unwrap();
    std::fs::create_dir_all(&parallel).unwrap();
    let cfg = write_config(tmp.path(), "c.json", body);
    assert!(run_in(&serial, &["run", &cfg, "--serial"]).status.success());
    let out = bin()
        .current_dir(&parallel)
        .args(["run", &cfg])
        .env("SADDLE_SCALE_THREADS", "4")
        .output()
        .unwrap();
    assert!(out.status.success());
    let (ds, dp) = (
        only_dir(&serial.join("results")),
        only_dir(&parallel.join("results")),
    );
    let mut names: Vec<_> = std::fs::read_dir(&ds)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 13);
    for n in names {
        assert_eq!(
            std::fs::read(ds.join(&n)).unwrap(),
            std::fs::read(dp.join(&n)).unwrap(),
            "{n:?}"
        );
    }
}

#[test]
fn plotdata_stride_transform_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let body = MINIMAL
        .replace(
            r#""iterations": 10, "gap_radius": 1.0"#,
            r#""iterations": 100"#,
        )
        .replace("0.00125", "0.0025");
    let cfg = write_config(tmp.path(), "c.json", &body);
    assert!(run_in(tmp.path(), &["run", &cfg]).status.success());
    let csv = only_dir(&tmp.path().join("results")).join("q__eg__r0.csv");
    let csv = csv.to_str().unwrap();

    let out = run_in(
        tmp.path(),
        &["plotdata", csv, "dist2", "--transform", "log10"],
    );
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let vals: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(vals.len(), 100);
    assert!(
        vals.windows(2).all(|w| w[1] < w[0]),
        "log10 dist2 must decrease"
    );

    let out = run_in(tmp.path(), &["plotdata", csv, "dist2", "--stride", "10"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 11);

    let out = run_in(tmp.path(), &["plotdata", csv, "gap"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run_in(tmp.path(), &["plotdata", csv, "nope"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grad_norm2"));
}

#[test]
fn verify_only_filters_and_reports_json() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &["verify", "--only", "lemma1", "--json"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let keys: Vec<_> = doc["checks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["key"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(keys, ["range", "growth"]);
    assert_eq!(
        run_in(tmp.path(), &["verify", "--only", "bogus"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn statistical_checks_pass_for_other_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    for seed in ["123", "456"] {
        for only in ["hutchinson", "noise-floor"] {
            let out = run_in(tmp.path(), &["verify", "--only", only, "--seed", seed]);
            assert!(
                out.status.success(),
                "{only} seed {seed}: {}",
                String::from_utf8_lossy(&out.stdout)
            );
        }
    }
}

#[test]
fn print_schema_is_json() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &["print-schema"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v.to_string().contains("optimizers"));
}
