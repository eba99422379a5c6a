use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vggfer::evalkit::Scheme;
use vggfer::report::{Provenance, Report, LIBRARY_VERSION};
use vggfer::{EvalResult, ImageSample, TapPoint, WeightBundle};
use vggfer_cli::{cmd_pipeline, load_trained, RunConfig, MANIFEST_FILE, REPORT_FILE, RESULTS_CSV, SUMMARY_CSV};

fn vggfer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vggfer"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        stdout(&o),
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A 42-image synthetic corpus and micro weights under `root`.
fn fixture(root: &Path) -> (PathBuf, PathBuf) {
    let corpus = root.join("corpus");
    let weights = root.join("micro.bundle");
    ok(vggfer(&["gen-synthetic", "--out", s(&corpus), "--seed", "5", "--per-class", "6", "--size", "64x64"]));
    ok(vggfer(&["gen-weights", "--out", s(&weights), "--arch", "micro", "--seed", "3"]));
    (corpus, weights)
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(vggfer(&[]).status.code(), Some(2));
    assert_eq!(vggfer(&["evaluate", "--n-pca", "0"]).status.code(), Some(2));
    let missing = vggfer(&["extract", "--corpus", s(dir.path()), "--weights", s(&dir.path().join("nope"))]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope"));

    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"n_pca": [5]}"#).unwrap();
    assert_eq!(vggfer(&["evaluate", "--config", s(&cfg)]).status.code(), Some(2));
    assert_eq!(vggfer(&["select", s(&dir.path().join("absent.json"))]).status.code(), Some(2));
}

#[test]
fn selection_on_one_row_is_a_computational_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let row = EvalResult {
        a_jk: Some(0.5),
        a_test: Some(0.5),
        ..EvalResult::new(TapPoint::Fc1, 10)
    };
    Report::new(Provenance::default(), serde_json::Value::Null, vec![row]).write(&path).unwrap();
    assert_eq!(vggfer(&["select", s(&path)]).status.code(), Some(1));
}

fn reference_report(a_jk: [f64; 6], a_test: [f64; 6], n_pca: usize) -> Report {
    let results = TapPoint::ALL
        .iter()
        .zip(a_jk.iter().zip(a_test))
        .map(|(&layer, (&jk, t))| EvalResult {
            a_jk: Some(jk / 100.0),
            a_test: Some(t / 100.0),
            ..EvalResult::new(layer, n_pca)
        })
        .collect();
    Report::new(
        Provenance {
            library_version: LIBRARY_VERSION.into(),
            ..Provenance::default()
        },
        serde_json::json!({ "n_pca_grid": [n_pca] }),
        results,
    )
}

#[test]
fn select_echoes_reference_accuracies() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (
            "ckplus",
            reference_report(
                [88.69, 90.48, 93.45, 92.26, 90.48, 89.88],
                [85.71, 85.71, 90.48, 92.86, 90.48, 92.86],
                100,
            ),
            "selected: block4_pool n_pca 100  A_JK 92.26  A_T 92.86",
        ),
        (
            "jaffe",
            reference_report(
                [79.52, 83.73, 89.76, 92.77, 82.53, 76.51],
                [88.10, 88.10, 92.86, 92.86, 85.71, 88.10],
                200,
            ),
            "selected: block4_pool n_pca 200  A_JK 92.77  A_T 92.86",
        ),
    ];
    for (name, report, expected) in cases {
        let path = dir.path().join(format!("{name}.json"));
        report.write(&path).unwrap();
        let out = ok(vggfer(&["select", s(&path)]));
        assert!(out.lines().any(|l| l == expected), "{name}:\n{out}");
        let stored = Report::read(&path).unwrap();
        let sel = stored.selection.expect("selection written back");
        assert_eq!(sel.chosen_layer, TapPoint::Block4Pool);
        assert_eq!(stored.results, report.results);
    }
}

#[test]
fn extract_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, weights) = fixture(dir.path());
    let cache = dir.path().join("cache");
    let common = [
        "--corpus",
        s(&corpus),
        "--weights",
        s(&weights),
        "--cache-dir",
        s(&cache),
        "--taps",
        "block4_pool,fc1",
    ];
    let first = ok(vggfer(&[&["extract"][..], &common].concat()));
    assert!(first.contains("block4_pool: 42 x 1024 (computed)"), "{first}");
    let second = ok(vggfer(&[&["extract"][..], &common].concat()));
    assert!(second.contains("block4_pool: 42 x 1024 (cache hit)"), "{second}");
    assert!(second.contains("fc1: 42 x 512 (cache hit)"), "{second}");

    let mut texts = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let eval_args = [&["evaluate"][..], &common, &["--n-pca", "5,10", "--output-dir", s(&out)]].concat();
        ok(vggfer(&eval_args));
        texts.push(
            [REPORT_FILE, RESULTS_CSV, SUMMARY_CSV]
                .map(|f| fs::read(out.join(f)).unwrap())
                .to_vec(),
        );
    }
    assert_eq!(texts[0], texts[1], "evaluate output is byte-identical across runs");

    let csv = String::from_utf8(texts[0][1].clone()).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("layer,n_pca,scheme,accuracy"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2 * 2 * 3);
    for scheme in Scheme::ALL {
        assert_eq!(rows.iter().filter(|r| r.contains(scheme.name())).count(), 4);
    }
    let report = Report::read(&dir.path().join("a").join(REPORT_FILE)).unwrap();
    assert_eq!(report.results.len(), 4);
    assert!(report.provenance.weights_hash.is_some() && report.provenance.corpus_hash.is_some());
    assert!(report.config.get("output_dir").is_none());
}

#[test]
fn predict_matches_in_process_model() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, weights) = fixture(dir.path());
    let out = dir.path().join("run");
    let cfg = RunConfig {
        corpus_root: Some(corpus.clone()),
        weights_path: Some(weights.clone()),
        cache_dir: Some(dir.path().join("cache")),
        output_dir: Some(out.clone()),
        taps: vec![TapPoint::Block3Pool, TapPoint::Block4Pool],
        n_pca_grid: vec![8, 16],
        ..RunConfig::default()
    }
    .validated()
    .unwrap();
    let outcome = cmd_pipeline(&cfg).unwrap();
    assert!(out.join(MANIFEST_FILE).is_file());
    for file in outcome.manifest.files.keys() {
        assert!(out.join(file).is_file(), "{file}");
    }

    let images: Vec<PathBuf> = ["anger/anger_000.pgm", "happy/happy_003.pgm", "surprise/surprise_005.pgm"]
        .iter()
        .map(|p| corpus.join(p))
        .collect();
    let mut args = vec!["predict", "--model", s(&out), "--weights", s(&weights)];
    args.extend(images.iter().map(|p| s(p)));
    let text = ok(vggfer(&args));
    let predicted: Vec<&str> = text.lines().map(|l| l.rsplit('\t').next().unwrap()).collect();

    let w = WeightBundle::load(&weights).unwrap();
    let reloaded = load_trained(&out, &w).unwrap();
    for (path, label) in images.iter().zip(&predicted) {
        let sample = ImageSample::from_file(path, "probe", None).unwrap();
        let direct = outcome.model.predict(&w, &sample).unwrap();
        assert_eq!(direct.name(), *label, "{}", path.display());
        assert_eq!(
            reloaded.decision_values(&w, &sample).unwrap(),
            outcome.model.decision_values(&w, &sample).unwrap()
        );
    }

    // a different bundle is refused
    let other = dir.path().join("other.bundle");
    ok(vggfer(&["gen-weights", "--out", s(&other), "--seed", "4"]));
    let refused = vggfer(&["predict", "--model", s(&out), "--weights", s(&other), s(&images[0])]);
    assert_eq!(refused.status.code(), Some(2));
}

#[test]
fn verify_passes_with_a_shape_trace() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("micro.bundle");
    ok(vggfer(&["gen-weights", "--out", s(&weights)]));
    let out = ok(vggfer(&["verify", "--weights", s(&weights)]));
    assert!(!out.contains("FAIL") && !out.contains("MISMATCH"), "{out}");
    assert!(out.contains("PASS conv2d"));
    assert!(out.contains("ok fc1: [512]"));
    assert!(out.contains("total parameters: 1220912"));
}
