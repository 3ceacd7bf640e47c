use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fwat(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fwat"))
        .current_dir(dir)
        .env_remove("FWAT_OUT_DIR")
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let o = fwat(
        dir.path(),
        &[
            "run",
            "example1",
            "--out",
            "res",
            "--emit-plots",
            "--strict",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["example1.csv", "example1.json", "example1_plot.py"] {
        assert!(dir.path().join("res").join(f).exists(), "{f}");
    }
    let o = fwat(dir.path(), &["verify", "res/example1.csv"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("[fwat] passed"));
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fwat"))
        .current_dir(dir.path())
        .env("FWAT_OUT_DIR", "from_env")
        .args(["run", "path2"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("from_env/path2.csv").exists());
}

#[test]
fn corrupted_average_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    assert!(fwat(dir.path(), &["run", "example1", "--out", "."])
        .status
        .success());
    let path = dir.path().join("example1.csv");
    let text = fs::read_to_string(&path).unwrap();
    let avg = text
        .lines()
        .next()
        .unwrap()
        .split(',')
        .position(|h| h == "avg")
        .unwrap();
    let out: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(k, line)| {
            if k == 10 {
                let mut cells: Vec<String> = line.split(',').map(String::from).collect();
                cells[avg] = "0.125".into();
                cells.join(",")
            } else {
                line.to_string()
            }
        })
        .collect();
    fs::write(&path, out.join("\n") + "\n").unwrap();
    let o = fwat(
        dir.path(),
        &["verify", "example1.csv", "--sidecar", "example1.json"],
    );
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains("AverageConservation: FAILED"));
}

#[test]
fn baseline_output_reports_drift() {
    let dir = tempfile::tempdir().unwrap();
    assert!(fwat(dir.path(), &["run", "pal_comparison", "--out", "."])
        .status
        .success());
    let o = fwat(dir.path(), &["verify", "pal_comparison_pal.csv"]);
    let text = stdout(&o);
    assert!(text.contains("(info) Consensus: ok"), "{text}");
    assert!(
        text.contains("(info) AverageConservation: FAILED"),
        "{text}"
    );
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        fwat(dir.path(), &["run", "no_such_builtin"]).status.code(),
        Some(2)
    );
    assert_eq!(
        fwat(dir.path(), &["run", "--config", "missing.toml"])
            .status
            .code(),
        Some(2)
    );
    fs::write(
        dir.path().join("bad.toml"),
        "name = \"x\"\nmode = \"single\"\nbogus = 1\n",
    )
    .unwrap();
    assert_eq!(
        fwat(dir.path(), &["run", "--config", "bad.toml"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        fwat(dir.path(), &["run", "path2", "--guard", "-1"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(fwat(dir.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_3() {
    // Integrating the unicycle states directly is too stiff for this seed:
    // the initial tracking error is about e^{100}.
    let dir = tempfile::tempdir().unwrap();
    let toml = r#"
name = "stiff"
mode = "formation"
seed = 2

[graph]
family = "ring"
n = 4

[params]
eta = 2.0
eta2 = 2.0
t1 = 4.0
tf = 8.0

[integrator]
eps_guard = 0.001

[formation]
scheme = "unicycle"
"#;
    fs::write(dir.path().join("stiff.toml"), toml).unwrap();
    let o = fwat(dir.path(), &["run", "--config", "stiff.toml", "--out", "."]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    // The default scheme handles the same start.
    fs::write(
        dir.path().join("stiff.toml"),
        toml.replace("scheme = \"unicycle\"", ""),
    )
    .unwrap();
    let o = fwat(
        dir.path(),
        &["run", "--config", "stiff.toml", "--out", ".", "--strict"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn strict_certificate_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    // Far too tight a tolerance for the default integrator.
    let o = fwat(
        dir.path(),
        &[
            "run", "example1", "--tol", "1e-300", "--strict", "--out", ".",
        ],
    );
    assert_eq!(o.status.code(), Some(4));
    let o = fwat(
        dir.path(),
        &["run", "example1", "--tol", "1e-300", "--out", "."],
    );
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn sweep_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = fwat(
        dir.path(),
        &[
            "sweep", "example1", "--tf", "1,4,16", "--seeds", "0..3", "--out", ".", "--strict",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("example1_sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 10);
    assert!(stdout(&o).contains("9 cells, 9 settled before tf"));
}

#[test]
fn sweep_warns_on_weak_gain() {
    let dir = tempfile::tempdir().unwrap();
    let toml = r#"
name = "ring4"
mode = "single"
seed = 0

[graph]
family = "ring"
n = 4

[params]
eta = 1.0
tf = 4.0

[init]
x_range = [0.0, 1.0]
"#;
    fs::write(dir.path().join("ring4.toml"), toml).unwrap();
    let o = fwat(
        dir.path(),
        &[
            "sweep",
            "--config",
            "ring4.toml",
            "--eta",
            "0.1,0.3,1,3",
            "--out",
            ".",
        ],
    );
    assert!(o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.matches("gain condition violated").count(), 1, "{err}");
}

#[test]
fn seed_override_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        assert!(fwat(
            dir.path(),
            &["run", "example2", "--seed", "9", "--out", out]
        )
        .status
        .success());
    }
    let a = fs::read(dir.path().join("a/example2.csv")).unwrap();
    let b = fs::read(dir.path().join("b/example2.csv")).unwrap();
    assert_eq!(a, b);
    let o = fwat(dir.path(), &["list-builtins"]);
    assert!(stdout(&o).lines().count() >= 7);
}
