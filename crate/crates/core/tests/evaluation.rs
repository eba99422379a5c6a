use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vggfer::evalkit::{run_config, FoldObserver, Phase};
use vggfer::verify::spread_features;
use vggfer::{
    make_split, run_grid, select_parameters, EvalOptions, EvalResult, Expression, FeatureMatrix, RowSource, Scheme, SplitPlan,
    TapPoint,
};

fn labelled(n_per_class: usize, dim: usize, seed: u64) -> (FeatureMatrix, Vec<Expression>) {
    let n = 7 * n_per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = spread_features(&mut rng, n, dim);
    let labels: Vec<Expression> = (0..n).map(|i| Expression::ALL[i % 7]).collect();
    // shift each class along its own axis so the problem is learnable
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n {
        let mut row = base.row(i).to_vec();
        row[labels[i].index() % dim] += 200.0;
        data.extend(row);
    }
    let ids = (0..n).map(|i| format!("{}/s{i:03}", labels[i])).collect();
    (
        FeatureMatrix::new(TapPoint::Block4Pool, ids, Some(labels.clone()), dim, data).unwrap(),
        labels,
    )
}

#[test]
fn splits_partition_the_population() {
    let (f, labels) = labelled(12, 4, 1);
    let ids = f.sample_ids.clone();
    for scheme in Scheme::ALL {
        let plan = make_split(&ids, &labels, scheme, 17).unwrap();
        for fold in &plan.folds {
            let train: BTreeSet<usize> = fold.train.iter().copied().collect();
            let test: BTreeSet<usize> = fold.test.iter().copied().collect();
            assert!(train.is_disjoint(&test), "{scheme}");
            assert_eq!(train.len() + test.len(), ids.len(), "{scheme}");
            assert!(!test.is_empty());
        }
        let tested: usize = plan.folds.iter().map(|f| f.test.len()).sum();
        match scheme {
            Scheme::Holdout8020 => {
                assert_eq!(plan.folds.len(), 1);
                // 84 samples: 12 per class, 2 of each class held out, plus 3 remainders
                assert_eq!(tested, 17);
                let per_class: Vec<usize> = Expression::ALL
                    .iter()
                    .map(|c| plan.folds[0].test.iter().filter(|&&i| labels[i] == *c).count())
                    .collect();
                assert!(per_class.iter().all(|&k| k == 2 || k == 3), "{per_class:?}");
            }
            Scheme::Kfold10 => {
                assert_eq!(plan.folds.len(), 10);
                assert_eq!(tested, ids.len());
            }
            Scheme::Jackknife => {
                assert_eq!(plan.folds.len(), ids.len());
                assert!(plan.folds.iter().all(|f| f.test.len() == 1));
            }
        }
    }
}

#[test]
fn different_seeds_give_different_holdouts() {
    let (f, labels) = labelled(12, 4, 1);
    let a = make_split(&f.sample_ids, &labels, Scheme::Holdout8020, 1).unwrap();
    let b = make_split(&f.sample_ids, &labels, Scheme::Holdout8020, 2).unwrap();
    assert_ne!(a.folds, b.folds);
    assert_eq!(a, make_split(&f.sample_ids, &labels, Scheme::Holdout8020, 1).unwrap());
}

#[test]
fn grid_truncation_equals_separate_fits() {
    let (f, labels) = labelled(6, 10, 2);
    let plan = make_split(&f.sample_ids, &labels, Scheme::Kfold10, 4).unwrap();
    let opts = EvalOptions::default();
    let grid = run_grid(&f, &labels, &plan, &[2, 5, 8], &opts, &()).unwrap();
    for outcome in &grid {
        let alone = run_config(&f, &labels, &plan, outcome.n_pca, &opts).unwrap();
        assert_eq!(alone.correct, outcome.correct, "n_pca {}", outcome.n_pca);
        assert_eq!(alone.fold_accuracies, outcome.fold_accuracies);
    }
}

#[test]
fn jackknife_pools_every_sample_once() {
    let (f, labels) = labelled(5, 8, 3);
    let plan = make_split(&f.sample_ids, &labels, Scheme::Jackknife, 0).unwrap();
    let out = run_grid(&f, &labels, &plan, &[7], &EvalOptions::default(), &()).unwrap().remove(0);
    assert_eq!(out.total, 35);
    assert_eq!(out.accuracy, out.correct as f64 / 35.0);
    let confusion_total: u32 = out.confusion.iter().flatten().sum();
    assert_eq!(confusion_total, 35);
    assert!(out.accuracy > 0.9, "separated classes should be easy: {}", out.accuracy);
}

/// Records which rows are read while each phase is active.
struct RowRecorder<'a> {
    inner: &'a FeatureMatrix,
    phase: Mutex<Option<Phase>>,
    reads: Mutex<BTreeMap<String, BTreeSet<usize>>>,
}

fn phase_key(p: Option<Phase>) -> String {
    match p {
        None => "outside".into(),
        Some(Phase::GlobalFit) => "global".into(),
        Some(Phase::Fit { fold }) => format!("fit {fold}"),
        Some(Phase::Predict { fold }) => format!("predict {fold}"),
    }
}

impl<'a> RowRecorder<'a> {
    fn new(inner: &'a FeatureMatrix) -> Self {
        Self {
            inner,
            phase: Mutex::new(None),
            reads: Mutex::new(BTreeMap::new()),
        }
    }

    fn rows(&self, key: &str) -> BTreeSet<usize> {
        self.reads.lock().unwrap().get(key).cloned().unwrap_or_default()
    }
}

impl RowSource for RowRecorder<'_> {
    fn n_rows(&self) -> usize {
        self.inner.n_rows()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn row(&self, i: usize) -> &[f32] {
        let key = phase_key(*self.phase.lock().unwrap());
        self.reads.lock().unwrap().entry(key).or_default().insert(i);
        self.inner.row(i)
    }
}

impl FoldObserver for RowRecorder<'_> {
    fn enter(&self, phase: Phase) {
        *self.phase.lock().unwrap() = Some(phase);
    }
}

fn check_no_leak(plan: &SplitPlan, rec: &RowRecorder) {
    for (fi, fold) in plan.folds.iter().enumerate() {
        let fit = rec.rows(&format!("fit {fi}"));
        let test: BTreeSet<usize> = fold.test.iter().copied().collect();
        let train: BTreeSet<usize> = fold.train.iter().copied().collect();
        assert!(!fit.is_empty(), "fold {fi} fitted on nothing");
        assert!(fit.is_disjoint(&test), "fold {fi} read test rows while fitting");
        assert!(fit.is_subset(&train));
        assert_eq!(rec.rows(&format!("predict {fi}")), test, "fold {fi} predicted on other rows");
    }
    assert!(rec.rows("outside").is_empty());
}

#[test]
fn fitting_never_reads_held_out_rows() {
    let (f, labels) = labelled(6, 8, 5);
    for scheme in Scheme::ALL {
        let plan = make_split(&f.sample_ids, &labels, scheme, 9).unwrap();
        let rec = RowRecorder::new(&f);
        run_grid(&rec, &labels, &plan, &[3, 6], &EvalOptions::default(), &rec).unwrap();
        check_no_leak(&plan, &rec);
    }
}

#[test]
fn recorder_detects_population_pca() {
    let (f, labels) = labelled(6, 8, 5);
    let plan = make_split(&f.sample_ids, &labels, Scheme::Holdout8020, 9).unwrap();
    let rec = RowRecorder::new(&f);
    let opts = EvalOptions {
        pca_per_fold: false,
        ..EvalOptions::default()
    };
    run_grid(&rec, &labels, &plan, &[3], &opts, &rec).unwrap();
    let global = rec.rows("global");
    assert!(plan.folds[0].test.iter().all(|i| global.contains(i)));
}

fn table(a_jk: [f64; 6], a_test: [f64; 6], n_pca: usize) -> Vec<EvalResult> {
    TapPoint::ALL
        .iter()
        .zip(a_jk.iter().zip(a_test))
        .map(|(&layer, (&jk, t))| EvalResult {
            a_jk: Some(jk / 100.0),
            a_test: Some(t / 100.0),
            ..EvalResult::new(layer, n_pca)
        })
        .collect()
}

#[test]
fn reference_tables_select_block4() {
    let ckplus = table(
        [88.69, 90.48, 93.45, 92.26, 90.48, 89.88],
        [85.71, 85.71, 90.48, 92.86, 90.48, 92.86],
        100,
    );
    let jaffe = table(
        [79.52, 83.73, 89.76, 92.77, 82.53, 76.51],
        [88.10, 88.10, 92.86, 92.86, 85.71, 88.10],
        200,
    );
    for (rows, n_pca, jk, test) in [(ckplus, 100, "92.26", "92.86"), (jaffe, 200, "92.77", "92.86")] {
        let sel = select_parameters(&rows).unwrap();
        assert_eq!(sel.chosen_layer, TapPoint::Block4Pool);
        assert_eq!(sel.chosen_n_pca, n_pca);
        assert_eq!(format!("{:.2}", 100.0 * sel.chosen().a_jk), jk);
        assert_eq!(format!("{:.2}", 100.0 * sel.chosen().a_test), test);
        assert_eq!(sel.candidates.len(), 2);
    }
}

#[test]
fn selection_is_order_independent() {
    let mut rows = table(
        [88.69, 90.48, 93.45, 92.26, 90.48, 89.88],
        [85.71, 85.71, 90.48, 92.86, 90.48, 92.86],
        100,
    );
    let forward = select_parameters(&rows).unwrap();
    rows.reverse();
    assert_eq!(select_parameters(&rows).unwrap(), forward);
}
