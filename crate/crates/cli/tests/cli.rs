use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BASE: &str = r#"
seed = 11

[data]
path = "sim.csv"
schema = { truth = "truth" }

[kernel]
rho = 0.1

[neighbors]
k = 20

[batch]
size = 150

[simulate]
rows = 20
cols = 20
sigma_sq = 2.5
rho = 0.1
nu = 0.8
output = "sim.csv"

[output]
truth = "truth.csv"
"#;

fn muygps(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_muygps"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = muygps(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    muygps(dir, args).status.code().expect("exit code")
}

fn setup(extra: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), format!("{BASE}\n{extra}")).unwrap();
    ok(dir.path(), &["simulate", "-c", "run.toml"]);
    dir
}

fn rows(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

#[test]
fn simulate_train_predict_eval_round_trip() {
    let dir = setup("");
    let d = dir.path();
    let train = ok(d, &["train", "-c", "run.toml"]);
    assert!(train.contains("converged = true"), "{train}");
    let model = std::fs::read_to_string(d.join("model.toml")).unwrap();
    assert!(model.starts_with("# MuyGPs model"));
    assert!(model.contains("[config]"));

    ok(d, &["predict", "-c", "run.toml"]);
    let preds = rows(&d.join("predictions.csv"));
    assert_eq!(preds[0], "lon,lat,mean,variance,lo,hi");
    assert_eq!(preds.len() - 1, rows(&d.join("truth.csv")).len() - 1);
    assert!(std::fs::read_to_string(d.join("predictions.csv")).unwrap().contains("# seed = 11"));

    let report = ok(d, &["eval", "-c", "run.toml", "--truth", "truth.csv"]);
    assert!(report.starts_with("MAE,RMSE,CRPS,INT,COV,Time (min)\n"), "{report}");
    let saved = rows(&d.join("report.csv"));
    assert_eq!(saved[0], "MAE,RMSE,CRPS,INT,COV,Time (min)");
    let cov: f64 = saved[1].split(',').nth(4).unwrap().parse().unwrap();
    assert!(cov > 0.8, "coverage {cov}");
}

#[test]
fn predictions_are_byte_identical_across_runs() {
    let dir = setup("");
    let d = dir.path();
    ok(d, &["train", "-c", "run.toml"]);
    ok(d, &["predict", "-c", "run.toml"]);
    let first = std::fs::read(d.join("predictions.csv")).unwrap();
    ok(d, &["train", "-c", "run.toml"]);
    ok(d, &["predict", "-c", "run.toml"]);
    assert_eq!(first, std::fs::read(d.join("predictions.csv")).unwrap());

    // Only the echoed worker count may differ when running sequentially.
    let parallel = rows(&d.join("predictions.csv"));
    ok(d, &["train", "-c", "run.toml", "--workers", "1"]);
    ok(d, &["predict", "-c", "run.toml", "--workers", "1"]);
    assert_eq!(parallel, rows(&d.join("predictions.csv")));
}

#[test]
fn k_larger_than_training_set_is_a_config_error() {
    let dir = setup("");
    assert_eq!(code(dir.path(), &["train", "-c", "run.toml", "--k", "100000"]), 2);
}

#[test]
fn invalid_overrides_and_unknown_keys_are_config_errors() {
    let dir = setup("");
    let d = dir.path();
    assert_eq!(code(d, &["train", "-c", "run.toml", "--kernel.nu", "-1"]), 2);
    std::fs::write(d.join("bad.toml"), "sead = 3\n").unwrap();
    assert_eq!(code(d, &["train", "-c", "bad.toml"]), 2);
    assert_eq!(code(d, &["train", "-c", "missing.toml"]), 2);
}

#[test]
fn model_from_a_different_configuration_is_rejected() {
    let dir = setup("");
    let d = dir.path();
    ok(d, &["train", "-c", "run.toml"]);
    assert_eq!(code(d, &["predict", "-c", "run.toml", "--mean", "linear"]), 2);
    assert_eq!(code(d, &["predict", "-c", "run.toml", "--seed", "12"]), 2);
}

#[test]
fn empty_test_set_writes_only_the_header() {
    let dir = setup("");
    let d = dir.path();
    let text = std::fs::read_to_string(d.join("sim.csv")).unwrap();
    let all_train: String = text
        .lines()
        .map(|l| {
            if l.starts_with('#') || l.starts_with("lon") {
                l.to_string()
            } else {
                let f: Vec<&str> = l.split(',').collect();
                format!("{},{},{},{}", f[0], f[1], f[3], f[3])
            }
        })
        .map(|l| l + "\n")
        .collect();
    std::fs::write(d.join("sim.csv"), all_train).unwrap();
    ok(d, &["train", "-c", "run.toml"]);
    ok(d, &["predict", "-c", "run.toml"]);
    assert_eq!(rows(&d.join("predictions.csv")), vec!["lon,lat,mean,variance,lo,hi"]);
}

#[test]
fn misaligned_truth_is_a_data_error() {
    let dir = setup("");
    let d = dir.path();
    ok(d, &["train", "-c", "run.toml"]);
    ok(d, &["predict", "-c", "run.toml"]);
    let mut truth = rows(&d.join("truth.csv"));
    let header = truth.remove(0);
    truth.reverse();
    std::fs::write(d.join("shuffled.csv"), format!("{header}\n{}\n", truth.join("\n"))).unwrap();
    assert_eq!(code(d, &["eval", "-c", "run.toml", "--truth", "shuffled.csv"]), 3);

    truth.pop();
    std::fs::write(d.join("short.csv"), format!("{header}\n{}\n", truth.join("\n"))).unwrap();
    assert_eq!(code(d, &["eval", "-c", "run.toml", "--truth", "short.csv"]), 3);
}

#[test]
fn perfect_predictions_score_zero_error_and_full_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("p.csv"),
        "lon,lat,mean,variance,lo,hi\n0,0,1.5,0.01,1.4,1.6\n1,0,-2,0.01,-2.1,-1.9\n",
    )
    .unwrap();
    std::fs::write(d.join("t.csv"), "lon,lat,truth\n0,0,1.5\n1,0,-2\n").unwrap();
    let out = ok(d, &["eval", "--predictions", "p.csv", "--truth", "t.csv"]);
    assert!(out.contains("mae = 0\n"), "{out}");
    assert!(out.contains("cov = 1\n"), "{out}");
}

#[test]
fn study_with_one_value_reports_one_row() {
    let dir = setup("[study]\naxis = \"batch_size\"\nvalues = [50]\nreps = 3\n");
    let d = dir.path();
    let out = ok(d, &["study", "-c", "run.toml"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2, "{out}");
    assert!(lines[0].starts_with("axis,value,reps,rmse_mean,rmse_std"));
    assert!(lines[1].starts_with("batch_size,50,3,"));
    assert_eq!(rows(&d.join("study.csv")).len(), 2);
}

#[test]
fn study_rejects_unknown_axis() {
    let dir = setup("[study]\naxis = \"rho\"\nvalues = [1]\n");
    assert_eq!(code(dir.path(), &["study", "-c", "run.toml"]), 2);
}
