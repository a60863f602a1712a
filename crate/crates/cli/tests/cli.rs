use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_seqsel");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("SEQSEL_SEED").output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

/// Rows of a CSV as string fields, header dropped.
fn rows(text: &str) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

fn toy(dir: &Path) -> String {
    write(dir, "toy.csv", "y,a,b\n2.9,1,0\n2.5,0,1\n")
}

#[test]
fn identity_toy_pvalues() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy(dir.path());

    let sat = rows(&stdout(&run(&["pvalues", &data, "--method", "saturated", "--sigma2", "1"])));
    assert_eq!(sat[0][1], "a");
    let p1: f64 = sat[0][2].parse().unwrap();
    assert!((p1 - 0.3005).abs() < 1e-3, "{p1}");

    let mz = rows(&stdout(&run(&["pvalues", &data, "--method", "max-z", "--sigma2", "1", "--samples", "9999"])));
    let p1: f64 = mz[0][2].parse().unwrap();
    assert!((p1 - 0.0075).abs() < 0.004, "{p1}");
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy(dir.path());
    let args = ["pvalues", &data, "--method", "max-z", "--sigma2", "1", "--seed", "11"];
    let a = stdout(&run(&args));
    let b = stdout(&run(&args));
    let c = stdout(&Command::new(BIN).args(&args).arg("--workers").arg("1").output().unwrap());
    assert_eq!(a, b);
    assert_eq!(a, c);
    let other = stdout(&run(&["pvalues", &data, "--method", "max-z", "--sigma2", "1", "--seed", "12"]));
    assert_ne!(a, other);
}

#[test]
fn identity_path_orders_by_magnitude() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "three.csv", "y,a,b,c\n0.4,1,0,0\n-3,0,1,0\n1.7,0,0,1\n");
    let out = rows(&stdout(&run(&["path", &data, "--sigma2", "1"])));
    let order: Vec<&str> = out.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(order, ["b", "c", "a"]);
}

#[test]
fn diabetes_path_order() {
    let expected = [
        "bmi", "ltg", "map", "age:sex", "bmi:map", "hdl", "sex", "glu^2", "age^2", "map:glu", "tc", "ldl", "ltg^2", "age:ldl", "age:tc",
        "sex:map", "glu", "tch", "sex:tch", "sex:bmi",
    ];
    let data = fixture("diabetes.csv");
    let out = rows(&stdout(&run(&["path", data.to_str().unwrap(), "--intercept", "--steps", "20"])));
    let order: Vec<&str> = out.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(order, expected);
}

#[test]
fn stop_rules_on_fixed_columns() {
    let dir = tempfile::tempdir().unwrap();
    let column = |name: &str, ps: &[f64]| {
        let body: String = std::iter::once("p".to_string()).chain(ps.iter().map(|p| p.to_string())).collect::<Vec<_>>().join("\n");
        write(dir.path(), name, &body)
    };
    let max_t = column(
        "maxt.csv",
        &[0.0, 0.0, 0.0, 0.02, 0.08, 0.06, 0.0, 0.32, 0.94, 0.91, 0.25, 0.01, 0.04, 0.85, 0.03, 0.40, 0.58, 0.82, 0.51, 0.44],
    );
    let sat = column(
        "sat.csv",
        &[0.0, 0.0, 0.05, 0.33, 0.76, 0.25, 0.0, 0.03, 0.55, 0.91, 0.37, 0.15, 0.07, 0.97, 0.15, 0.05, 0.45, 0.71, 0.40, 0.60],
    );
    let nominal = column(
        "nominal.csv",
        &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.02, 0.11, 0.17, 0.15, 0.06, 0.0, 0.19, 0.08, 0.18, 0.23, 0.31, 0.22, 0.27],
    );
    let ones = column("ones.csv", &[1.0; 5]);
    let k_hat = |file: &str, rule: &str| {
        let out = stdout(&run(&["stop", file, "--rule", rule, "--alpha", "0.1"]));
        out.lines().next().unwrap().to_string()
    };
    assert_eq!(k_hat(&max_t, "forward"), "k_hat=8");
    assert_eq!(k_hat(&sat, "forward"), "k_hat=3");
    assert_eq!(k_hat(&nominal, "forward"), "k_hat=18");
    assert_eq!(k_hat(&ones, "forward"), "k_hat=0");
    assert_eq!(k_hat(&ones, "basic"), "k_hat=0");
    assert_eq!(k_hat(&max_t, "accumulation"), "k_hat=8");
}

#[test]
fn annotated_stop_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "p.csv", "step,variable,p\n1,x1,0.001\n2,x2,0.5\n");
    let out_path = dir.path().join("stop.csv");
    let out = stdout(&run(&["stop", &input, "--rule", "basic", "--alpha", "0.05", "--out", out_path.to_str().unwrap()]));
    assert_eq!(out.trim(), "k_hat=1");
    let body = std::fs::read_to_string(&out_path).unwrap();
    assert_eq!(rows(&body), [["1", "x1", "0.001", "true", "*"], ["2", "x2", "0.5", "false", ""]]);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("stop.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "stop");
    assert_eq!(manifest["outputs"][0], out_path.to_str().unwrap());
}

#[test]
fn input_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy(dir.path());
    let missing = run(&["path", &data, "--response", "nope"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope"));

    let bad = write(dir.path(), "bad.csv", "y,a\n1,2\n3,oops\n");
    let out = run(&["path", &bad]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[input]"));

    let ragged = write(dir.path(), "ragged.csv", "y,a\n1,2\n3\n");
    assert_eq!(run(&["path", &ragged]).status.code(), Some(2));

    let no_sigma = run(&["pvalues", &data, "--method", "max-z"]);
    assert_eq!(no_sigma.status.code(), Some(2));
    assert_eq!(run(&["pvalues", &data, "--method", "bogus"]).status.code(), Some(2));
}

#[test]
fn experiments_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for (name, extra) in [
        ("bivariate", vec!["--reps", "200"]),
        ("counterexample", vec!["--reps", "200"]),
        ("sparse", vec!["--reps", "4", "--samples", "99"]),
        ("changepoint-null", vec!["--reps", "5", "--length", "20"]),
    ] {
        let mut args = vec!["experiment", name, "--out", out, "--seed", "3"];
        args.extend(extra);
        stdout(&run(&args));
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(format!("{name}.manifest.json"))).unwrap()).unwrap();
        assert_eq!(manifest["seed"], 3);
        for f in manifest["outputs"].as_array().unwrap() {
            assert!(Path::new(f.as_str().unwrap()).exists(), "{f}");
        }
    }
    let metrics = std::fs::read_to_string(dir.path().join("sparse_metrics.csv")).unwrap();
    // six methods, two rules, two levels
    assert_eq!(rows(&metrics).len(), 24);
}
