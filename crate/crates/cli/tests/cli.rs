use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn jplrdl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jplrdl"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn assert_schema_valid(report: &Value) {
    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/reports.schema.json");
    let validator = jsonschema::validator_for(&read_json(&schema_path)).expect("schema compiles");
    let errors: Vec<String> = validator
        .iter_errors(report)
        .map(|e| e.to_string())
        .collect();
    assert!(errors.is_empty(), "schema violations: {errors:?}");
}

fn write_matrix(path: &Path, rows: &[Vec<f64>]) {
    let mut s = format!("{} {}\n", rows.len(), rows[0].len());
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&cells.join(" "));
        s.push('\n');
    }
    fs::write(path, s).unwrap();
}

fn write_labels(path: &Path, labels: &[usize]) {
    let s: String = labels.iter().map(|l| format!("{l}\n")).collect();
    fs::write(path, s).unwrap();
}

fn load_matrix(path: &Path) -> Vec<Vec<f64>> {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| l.split_whitespace().map(|t| t.parse().unwrap()).collect())
        .collect()
}

/// The planted five-class suite with a well-posed training configuration.
fn planted_config(dir: &Path) {
    let cfg = json!({
        "synthetic": {"classes": 5, "ambient": 30, "sub_dim": 5, "train_per_class": 10, "test_per_class": 20},
        "out": "run",
        "train": {"d": 12, "beta": 5.0, "lambda2": 0.01, "outer_max_iter": 4}
    });
    fs::write(dir.join("run.json"), cfg.to_string()).unwrap();
}

fn trained() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    planted_config(dir.path());
    let out = jplrdl(dir.path(), &["train", "--config", "run.json", "-q"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(out.stdout.is_empty());
    dir
}

#[test]
fn train_writes_model_and_schema_valid_metrics() {
    let dir = trained();
    let run = dir.path().join("run");
    assert!(run.join("model.bin").is_file());
    let metrics = read_json(&run.join("metrics.json"));
    assert_schema_valid(&metrics);
    assert_eq!(metrics["data"]["source"], "synthetic");
    assert_eq!(metrics["data"]["classes"], 5);
    assert_eq!(metrics["projected_dim"], 12);
    let trace = metrics["objective_trace"].as_array().unwrap();
    assert_eq!(trace.len(), 4);
    assert_eq!(
        metrics["timings"]["iterations"].as_array().unwrap().len(),
        4
    );
}

#[test]
fn eval_on_training_data_is_perfect() {
    let dir = trained();
    let out = jplrdl(
        dir.path(),
        &[
            "eval",
            "--config",
            "run.json",
            "--matrix",
            "run/train_matrix.txt",
            "--labels",
            "run/train_labels.txt",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let printed: Value = serde_json::from_slice(&out.stdout).unwrap();
    let report = read_json(&dir.path().join("run/eval.json"));
    assert_eq!(printed["accuracy"], report["accuracy"]);
    assert_schema_valid(&report);
    assert_eq!(report["accuracy"], 1.0);
    assert_eq!(report["mean_per_class_accuracy"], 1.0);
    assert_eq!(report["confusion"][2], json!([0, 0, 10, 0, 0]));
}

#[test]
fn eval_defaults_to_the_synthetic_test_split() {
    let dir = trained();
    let out = jplrdl(dir.path(), &["eval", "--config", "run.json", "-q"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read_json(&dir.path().join("run/eval.json"));
    assert_eq!(report["samples"], 100);
    assert!(report["accuracy"].as_f64().unwrap() >= 0.9);
}

#[test]
fn eval_rejects_dimension_mismatch_and_empty_files() {
    let dir = trained();
    let p = dir.path();
    write_matrix(&p.join("small.txt"), &vec![vec![1.0, 2.0]; 5]);
    write_labels(&p.join("small_labels.txt"), &[1, 2]);
    let out = jplrdl(
        p,
        &[
            "eval",
            "--config",
            "run.json",
            "--matrix",
            "small.txt",
            "--labels",
            "small_labels.txt",
        ],
    );
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("dimension 5"), "{}", stderr(&out));

    fs::write(p.join("empty.txt"), "").unwrap();
    fs::write(p.join("empty_labels.txt"), "").unwrap();
    let out = jplrdl(
        p,
        &[
            "eval",
            "--config",
            "run.json",
            "--matrix",
            "empty.txt",
            "--labels",
            "empty_labels.txt",
        ],
    );
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn single_class_eval_is_trivially_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "synthetic": {"classes": 1, "ambient": 10, "sub_dim": 3, "train_per_class": 6, "test_per_class": 4},
        "out": "one",
        "train": {"d": 2, "beta": 5.0, "outer_max_iter": 2}
    });
    fs::write(dir.path().join("one.json"), cfg.to_string()).unwrap();
    let out = jplrdl(dir.path(), &["train", "--config", "one.json", "-q"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = jplrdl(dir.path(), &["eval", "--config", "one.json", "-q"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        read_json(&dir.path().join("one/eval.json"))["accuracy"],
        1.0
    );
}

#[test]
fn classify_writes_labels_in_input_order() {
    let dir = trained();
    let p = dir.path();
    let out = jplrdl(
        p,
        &[
            "classify",
            "--config",
            "run.json",
            "--matrix",
            "run/train_matrix.txt",
            "-q",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        fs::read_to_string(p.join("run/predictions.txt")).unwrap(),
        fs::read_to_string(p.join("run/train_labels.txt")).unwrap()
    );
    let report = read_json(&p.join("run/predictions.json"));
    assert_schema_valid(&report);
    assert_eq!(report["residuals"][0].as_array().unwrap().len(), 5);
}

#[test]
fn training_is_deterministic() {
    let dir = trained();
    let first = fs::read(dir.path().join("run/model.bin")).unwrap();
    let out = jplrdl(
        dir.path(),
        &["train", "--config", "run.json", "--out", "again", "-q"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(first, fs::read(dir.path().join("again/model.bin")).unwrap());
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = trained();
    let out = jplrdl(
        dir.path(),
        &[
            "train", "--config", "run.json", "--out", "s7", "--seed", "7", "-q",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        read_json(&dir.path().join("s7/metrics.json"))["config"]["seed"],
        7
    );
    assert_eq!(
        read_json(&dir.path().join("run/metrics.json"))["config"]["seed"],
        0
    );
}

#[test]
fn missing_labels_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    write_matrix(
        &dir.path().join("x.txt"),
        &vec![vec![1.0, 2.0, 3.0, 4.0]; 6],
    );
    let out = jplrdl(
        dir.path(),
        &[
            "train",
            "--matrix",
            "x.txt",
            "--labels",
            "nowhere/labels.txt",
        ],
    );
    assert_eq!(code(&out), 1);
    assert!(
        stderr(&out).contains("nowhere/labels.txt"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn projected_dimension_must_stay_below_input_dimension() {
    let dir = trained();
    let out = jplrdl(
        dir.path(),
        &["train", "--config", "run.json", "--set", "d=30"],
    );
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("d < m"), "{}", stderr(&out));
}

#[test]
fn unknown_training_keys_are_usage_errors() {
    let dir = trained();
    let out = jplrdl(
        dir.path(),
        &["train", "--config", "run.json", "--set", "lamda1=0.2"],
    );
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("lamda1"), "{}", stderr(&out));
}

#[test]
fn divergent_training_exits_with_numeric_failure() {
    // The default weights make the coding problem unbounded on this data.
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.json"),
        r#"{"synthetic": {}, "out": "o"}"#,
    )
    .unwrap();
    let out = jplrdl(dir.path(), &["train", "--config", "c.json"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("iteration"), "{}", stderr(&out));
}

#[test]
fn zero_fraction_corruption_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let rows: Vec<Vec<f64>> = (0..20)
        .map(|r| (0..3).map(|c| (r * 7 + c * 3) as f64 / 3.0).collect())
        .collect();
    write_matrix(&p.join("x.txt"), &rows);
    let out = jplrdl(
        p,
        &[
            "corrupt",
            "--matrix",
            "x.txt",
            "--kind",
            "pixel",
            "--fraction",
            "0",
            "--output",
            "y.txt",
            "-q",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        fs::read(p.join("x.txt")).unwrap(),
        fs::read(p.join("y.txt")).unwrap()
    );
}

#[test]
fn pixel_corruption_sets_exact_counts_and_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let rows: Vec<Vec<f64>> = (0..100)
        .map(|r| (0..4).map(|c| ((r + c) % 200) as f64).collect())
        .collect();
    write_matrix(&p.join("x.txt"), &rows);
    let args = [
        "corrupt",
        "--matrix",
        "x.txt",
        "--kind",
        "pixel",
        "--fraction",
        "0.5",
        "--seed",
        "3",
        "-q",
    ];
    let out = jplrdl(p, &[&args[..], &["--output", "a.txt"]].concat());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let a = load_matrix(&p.join("a.txt"));
    for c in 0..4 {
        assert_eq!(a.iter().filter(|r| r[c] == 255.0).count(), 50);
    }
    assert_schema_valid(&read_json(&p.join("jplrdl-out/corrupt.json")));
    jplrdl(p, &[&args[..], &["--output", "b.txt"]].concat());
    assert_eq!(
        fs::read(p.join("a.txt")).unwrap(),
        fs::read(p.join("b.txt")).unwrap()
    );
}

#[test]
fn block_corruption_needs_an_image_shape() {
    let dir = tempfile::tempdir().unwrap();
    write_matrix(&dir.path().join("x.txt"), &vec![vec![1.0; 2]; 16]);
    let base = [
        "corrupt",
        "--matrix",
        "x.txt",
        "--kind",
        "block",
        "--fraction",
        "0.25",
        "-q",
    ];
    assert_eq!(code(&jplrdl(dir.path(), &base)), 1);
    let out = jplrdl(dir.path(), &[&base[..], &["--image-shape", "4x4"]].concat());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read_json(&dir.path().join("jplrdl-out/corrupt.json"));
    assert!(report["entries_changed"].as_u64().unwrap() <= 8);
}

#[test]
fn split_is_seeded_and_keeps_per_class_counts() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let rows: Vec<Vec<f64>> = (0..3)
        .map(|r| (0..12).map(|c| (r * 12 + c) as f64).collect())
        .collect();
    write_matrix(&p.join("x.txt"), &rows);
    write_labels(&p.join("y.txt"), &[1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3]);
    let split = |seed: &str, out: &str| {
        let o = jplrdl(
            p,
            &[
                "split",
                "--matrix",
                "x.txt",
                "--labels",
                "y.txt",
                "--per-class",
                "3",
                "--seed",
                seed,
                "--out",
                out,
                "-q",
            ],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        read_json(&p.join(out).join("split.json"))
    };
    let a = split("1", "a");
    let b = split("1", "b");
    assert_schema_valid(&a);
    assert_eq!(a["train_columns"], b["train_columns"]);
    assert_eq!(
        fs::read_to_string(p.join("a/test_labels.txt")).unwrap(),
        "1\n2\n3\n"
    );
    let any_differs =
        (2..8).any(|s| split(&s.to_string(), "c")["train_columns"] != a["train_columns"]);
    assert!(any_differs);
    let o = jplrdl(
        p,
        &[
            "split",
            "--matrix",
            "x.txt",
            "--labels",
            "y.txt",
            "--per-class",
            "4",
        ],
    );
    assert_eq!(code(&o), 1);
}

#[test]
fn diag_rpca_recovers_a_rank_one_class() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let u: Vec<f64> = (0..20)
        .map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0)
        .collect();
    let v: Vec<f64> = (0..10).map(|j| 1.0 + (j * 13 % 7) as f64).collect();
    let rows: Vec<Vec<f64>> = u
        .iter()
        .map(|a| v.iter().map(|b| a * b).collect())
        .collect();
    write_matrix(&p.join("x.txt"), &rows);
    write_labels(&p.join("y.txt"), &[1; 10]);
    let out = jplrdl(
        p,
        &[
            "diag",
            "rpca",
            "--matrix",
            "x.txt",
            "--labels",
            "y.txt",
            "--set",
            "normalize_samples=false",
            "-q",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let l = load_matrix(&p.join("jplrdl-out/L_class1.txt"));
    let err = l
        .iter()
        .flatten()
        .zip(rows.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-3, "max error {err}");
    let report = read_json(&p.join("jplrdl-out/diag.json"));
    assert_schema_valid(&report);
    assert_eq!(report["which"], "rpca");
}

#[test]
fn diag_graphs_links_two_same_class_samples() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write_matrix(
        &p.join("x.txt"),
        &[vec![1.0, 2.0], vec![0.5, -1.0], vec![3.0, 0.0]],
    );
    write_labels(&p.join("y.txt"), &[1, 1]);
    let out = jplrdl(
        p,
        &[
            "diag", "graphs", "--matrix", "x.txt", "--labels", "y.txt", "-q",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        load_matrix(&p.join("jplrdl-out/Wc.txt")),
        vec![vec![0.0, 1.0], vec![1.0, 0.0]]
    );
    assert_schema_valid(&read_json(&p.join("jplrdl-out/diag.json")));
}

#[test]
fn bad_arguments_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&jplrdl(dir.path(), &["diag", "spectra"])), 1);
    assert_eq!(code(&jplrdl(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&jplrdl(dir.path(), &["--help"])), 0);
    let out = jplrdl(dir.path(), &["train"]);
    assert_eq!(code(&out), 1);
    assert!(
        stderr(&out).contains("no training data"),
        "{}",
        stderr(&out)
    );
}
