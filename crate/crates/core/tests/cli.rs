use std::fs;
use std::path::Path;
use std::process::{Command, Stdio};

use mcnm::cli::{run, EXIT_DATA, EXIT_OK, EXIT_USAGE};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mcnm"))
}

fn call(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["mcnm"];
    argv.extend_from_slice(args);
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, seed: &str) -> std::path::PathBuf {
    let data = dir.join("data.csv");
    let (code, _, err) = call(&["simulate", "--family", "mcn", "--n", "100", "--out", s(&data), "--seed", seed]);
    assert_eq!(code, EXIT_OK, "{err}");
    data
}

fn count_na(path: &Path) -> usize {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .filter(|l| l.split(',').any(|c| c == "NA"))
        .count()
}

#[test]
fn simulate_then_ampute_gives_requested_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "4");
    assert!(dir.path().join("data.csv.truth.json").exists());
    let amp = dir.path().join("amp.csv");
    let (code, _, err) = call(&["ampute", "--data", s(&data), "--prop", "0.5", "--out", s(&amp), "--seed", "1"]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert_eq!(count_na(&amp), 50);
}

#[test]
fn repeated_runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let root = dir.path().join(format!("run{k}"));
        fs::create_dir(&root).unwrap();
        let data = simulate(&root, "7");
        let amp = root.join("amp.csv");
        assert_eq!(call(&["ampute", "--data", s(&data), "--prop", "0.3", "--out", s(&amp), "--seed", "7"]).0, EXIT_OK);
        let fit = root.join("fit");
        let (code, _, err) = call(&["fit", "--data", s(&amp), "--g", "2", "--out", s(&fit), "--seed", "7", "--n-starts", "3"]);
        assert_eq!(code, EXIT_OK, "{err}");
        let imp = root.join("imputed_again.csv");
        let (code, _, err) = call(&["impute", "--data", s(&amp), "--fit", s(&fit.join("result.json")), "--out", s(&imp)]);
        assert_eq!(code, EXIT_OK, "{err}");
        let files = ["data.csv", "data.csv.truth.json", "amp.csv", "fit/result.json", "fit/labels.csv", "fit/outliers.csv", "fit/imputed.csv", "imputed_again.csv"];
        outputs.push(files.map(|f| fs::read(root.join(f)).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn fit_leaves_input_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "2");
    let before = fs::read(&data).unwrap();
    let fit = dir.path().join("fit");
    assert_eq!(call(&["fit", "--data", s(&data), "--out", s(&fit), "--n-starts", "1"]).0, EXIT_OK);
    assert_eq!(fs::read(&data).unwrap(), before);
    // Imputing complete data returns it unchanged.
    let imp = dir.path().join("imp.csv");
    assert_eq!(call(&["impute", "--data", s(&data), "--fit", s(&fit.join("result.json")), "--out", s(&imp)]).0, EXIT_OK);
    assert_eq!(fs::read(&imp).unwrap(), before);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(call(&["--help"]).0, EXIT_OK);
    assert_eq!(call(&["fit"]).0, EXIT_USAGE);
    let data = simulate(dir.path(), "1");
    let out = dir.path().join("o");
    assert_eq!(call(&["fit", "--data", s(&data), "--g", "0", "--out", s(&out)]).0, EXIT_USAGE);

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "x1,x2\n1,2\nNA,NA\n3,4\n").unwrap();
    assert_eq!(call(&["fit", "--data", s(&bad), "--out", s(&out)]).0, EXIT_DATA);
    let missing = dir.path().join("nope.csv");
    assert_ne!(call(&["fit", "--data", s(&missing), "--out", s(&out)]).0, EXIT_OK);

    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "bogus_key = 1\n").unwrap();
    assert_eq!(call(&["fit", "--data", s(&data), "--out", s(&out), "--config", s(&cfg)]).0, EXIT_USAGE);
}

#[test]
fn seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let st = bin()
            .args(["simulate", "--n", "50", "--out", s(p)])
            .env("MCNM_SEED", "99")
            .stdout(Stdio::null())
            .status()
            .unwrap();
        assert!(st.success());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn binary_reports_failures_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["fit", "--data", s(&dir.path().join("absent.csv")), "--out", s(dir.path())])
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(!o.stderr.is_empty());
}

#[test]
fn one_cell_bench() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.toml");
    fs::write(
        &grid,
        "n_values = [100]\noverlaps = [\"far\"]\nfamilies = [\"mn_atypical\"]\nmissing_props = [0.1]\nreplicates = 2\n",
    )
    .unwrap();
    let out = dir.path().join("bench");
    let (code, _, err) = call(&["bench", "--grid", s(&grid), "--out", s(&out), "--seed", "3", "--n-starts", "2"]);
    assert_eq!(code, EXIT_OK, "{err}");
    let runs = fs::read_to_string(out.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 2 * 2);
    for f in ["summary.csv", "summary.json", "summary.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }
}
