//! Validation protocols, accuracy metrics and two-step parameter selection.
//!
//! Three schemes are supported: a stratified 80/20 hold-out, stratified
//! 10-fold cross-validation and jackknife (leave-one-out). Within every fold
//! PCA and the SVM are fitted on the training rows only; test rows are read
//! after fitting, for projection and prediction.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::warn;
use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::EigenSolver;
use crate::pca::{pca_fit_with, PcaModel, PcaOptions, RowSource, RowSubset};
use crate::preprocess::Expression;
use crate::svm::{svm_train_ovr, SvmParams};
use crate::vgg::TapPoint;

pub const N_CLASSES: usize = 7;
pub const KFOLD_FOLDS: usize = 10;
/// Hold-out test fraction, in fifths.
const HOLDOUT_TEST_FIFTHS: usize = 1;

pub type Confusion = [[u32; N_CLASSES]; N_CLASSES];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "holdout_80_20")]
    Holdout8020,
    #[serde(rename = "kfold_10")]
    Kfold10,
    #[serde(rename = "jackknife")]
    Jackknife,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Holdout8020, Scheme::Kfold10, Scheme::Jackknife];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Holdout8020 => "holdout_80_20",
            Scheme::Kfold10 => "kfold_10",
            Scheme::Jackknife => "jackknife",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scheme `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Row-index folds over a sample population.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub scheme: Scheme,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

impl SplitPlan {
    /// Re-expresses the plan in terms of `population[i]` instead of `i`.
    pub fn mapped(&self, population: &[usize]) -> SplitPlan {
        let map = |v: &Vec<usize>| v.iter().map(|&i| population[i]).collect();
        SplitPlan {
            scheme: self.scheme,
            seed: self.seed,
            folds: self
                .folds
                .iter()
                .map(|f| Fold {
                    train: map(&f.train),
                    test: map(&f.test),
                })
                .collect(),
        }
    }

    pub fn test_ids<'a>(&self, fold: usize, ids: &'a [String]) -> Vec<&'a str> {
        self.folds[fold].test.iter().map(|&i| ids[i].as_str()).collect()
    }
}

fn members_by_class(labels: &[Expression]) -> BTreeMap<Expression, Vec<usize>> {
    let mut by_class: BTreeMap<Expression, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(*l).or_default().push(i);
    }
    by_class
}

fn complement(n: usize, test: &[usize]) -> Vec<usize> {
    let mut is_test = vec![false; n];
    for &i in test {
        is_test[i] = true;
    }
    (0..n).filter(|&i| !is_test[i]).collect()
}

pub fn make_split(ids: &[String], labels: &[Expression], scheme: Scheme, seed: u64) -> Result<SplitPlan> {
    let n = ids.len();
    if labels.len() != n {
        return Err(Error::DimMismatch {
            op: "make_split",
            expected: n,
            got: labels.len(),
        });
    }
    let needed = if scheme == Scheme::Kfold10 { KFOLD_FOLDS } else { 2 };
    if n < needed {
        return Err(Error::TooFewSamples {
            op: "make_split",
            needed,
            got: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let folds = match scheme {
        Scheme::Holdout8020 => vec![holdout(labels, &mut rng)],
        Scheme::Kfold10 => kfold(labels, KFOLD_FOLDS, &mut rng),
        Scheme::Jackknife => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| ids[a].as_bytes().cmp(ids[b].as_bytes()));
            order
                .into_iter()
                .map(|i| Fold {
                    train: complement(n, &[i]),
                    test: vec![i],
                })
                .collect()
        }
    };
    Ok(SplitPlan { scheme, seed, folds })
}

fn holdout(labels: &[Expression], rng: &mut ChaCha8Rng) -> Fold {
    let n = labels.len();
    let by_class = members_by_class(labels);
    // round(n/5), at least one test sample
    let total = ((2 * n * HOLDOUT_TEST_FIFTHS + 5) / 10).max(1);
    let mut quota: BTreeMap<Expression, usize> = by_class
        .iter()
        .map(|(c, m)| (*c, m.len() * HOLDOUT_TEST_FIFTHS / 5))
        .collect();
    let assigned: usize = quota.values().sum();
    let mut eligible: Vec<(Expression, usize)> = by_class
        .iter()
        .filter(|(c, m)| m.len() > 1 + quota[*c] && (m.len() * HOLDOUT_TEST_FIFTHS) % 5 != 0)
        .map(|(c, m)| (*c, (m.len() * HOLDOUT_TEST_FIFTHS) % 5))
        .collect();
    eligible.shuffle(rng);
    eligible.sort_by(|a, b| b.1.cmp(&a.1));
    for (c, _) in eligible.iter().take(total.saturating_sub(assigned)) {
        *quota.get_mut(c).expect("class present") += 1;
    }
    let mut test = Vec::new();
    for (c, members) in &by_class {
        let mut shuffled = members.clone();
        shuffled.shuffle(rng);
        test.extend_from_slice(&shuffled[..quota[c]]);
    }
    if test.is_empty() {
        // every class is a singleton or too small for a proportional share
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(rng);
        test.push(all[0]);
    }
    test.sort_unstable();
    Fold {
        train: complement(n, &test),
        test,
    }
}

fn kfold(labels: &[Expression], k: usize, rng: &mut ChaCha8Rng) -> Vec<Fold> {
    let n = labels.len();
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut next = 0;
    for (class, members) in members_by_class(labels) {
        if members.len() < k {
            warn!(
                "class {class} has {} samples for {k} folds; some folds will not contain it",
                members.len()
            );
        }
        let mut shuffled = members;
        shuffled.shuffle(rng);
        for i in shuffled {
            buckets[next % k].push(i);
            next += 1;
        }
    }
    buckets
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            Fold {
                train: complement(n, &test),
                test,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub confusion: Confusion,
}

pub fn metrics(predictions: &[Expression], truth: &[Expression]) -> Result<Metrics> {
    if predictions.len() != truth.len() {
        return Err(Error::DimMismatch {
            op: "metrics",
            expected: truth.len(),
            got: predictions.len(),
        });
    }
    let mut confusion = [[0u32; N_CLASSES]; N_CLASSES];
    let mut correct = 0;
    for (p, t) in predictions.iter().zip(truth) {
        confusion[t.index()][p.index()] += 1;
        if p == t {
            correct += 1;
        }
    }
    let total = truth.len();
    Ok(Metrics {
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        correct,
        total,
        confusion,
    })
}

/// Marks the start of each fold stage. Used to verify that fitting never
/// reads held-out rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// PCA fitted once on the whole population (leaky comparison mode).
    GlobalFit,
    Fit { fold: usize },
    Predict { fold: usize },
}

pub trait FoldObserver: Sync {
    fn enter(&self, _phase: Phase) {}
}

impl FoldObserver for () {}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub svm: SvmParams,
    pub seed: u64,
    /// Refit PCA inside every fold; `false` fits once on the population.
    pub pca_per_fold: bool,
    pub eigen_solver: EigenSolver,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            svm: SvmParams::default(),
            seed: 0,
            pca_per_fold: true,
            eigen_solver: EigenSolver::default(),
        }
    }
}

/// Accuracy of one scheme for one `n_pca` value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeOutcome {
    pub scheme: Scheme,
    pub n_pca: usize,
    /// Smallest component count actually used across folds (after clamping).
    pub k_used: usize,
    pub accuracy: f64,
    pub fold_accuracies: Vec<f64>,
    pub correct: usize,
    pub total: usize,
    pub confusion: Confusion,
    /// Binary SVM fits that stopped at `max_epochs` before reaching `tol`.
    pub svm_unconverged: usize,
}

/// Runs every fold of `plan` once per `n_pca` value. PCA is fitted a single
/// time per fold with the largest grid value and truncated for the others,
/// which yields the same components as separate fits.
pub fn run_grid<S: RowSource + ?Sized, O: FoldObserver>(
    features: &S,
    labels: &[Expression],
    plan: &SplitPlan,
    n_pca_grid: &[usize],
    opts: &EvalOptions,
    observer: &O,
) -> Result<Vec<SchemeOutcome>> {
    if labels.len() != features.n_rows() {
        return Err(Error::DimMismatch {
            op: "run_grid labels",
            expected: features.n_rows(),
            got: labels.len(),
        });
    }
    let max_pca = *n_pca_grid
        .iter()
        .max()
        .ok_or_else(|| Error::InvalidArgument("empty n_pca grid".into()))?;
    if n_pca_grid.contains(&0) {
        return Err(Error::InvalidArgument("n_pca values must be positive".into()));
    }
    let pca_opts = PcaOptions {
        solver: opts.eigen_solver,
        route: None,
    };

    let global: Option<PcaModel> = if opts.pca_per_fold {
        None
    } else {
        observer.enter(Phase::GlobalFit);
        let mut population: Vec<usize> = plan.folds.iter().flat_map(|f| f.train.iter().chain(&f.test)).copied().collect();
        population.sort_unstable();
        population.dedup();
        Some(pca_fit_with(&RowSubset::new(features, &population), max_pca, pca_opts)?)
    };

    let g = n_pca_grid.len();
    let mut fold_acc = vec![Vec::with_capacity(plan.folds.len()); g];
    let mut correct = vec![0usize; g];
    let mut total = vec![0usize; g];
    let mut confusion = vec![[[0u32; N_CLASSES]; N_CLASSES]; g];
    let mut k_used = vec![usize::MAX; g];
    let mut unconverged = vec![0usize; g];

    for (fi, fold) in plan.folds.iter().enumerate() {
        observer.enter(Phase::Fit { fold: fi });
        let train = RowSubset::new(features, &fold.train);
        let train_labels: Vec<Expression> = fold.train.iter().map(|&i| labels[i]).collect();
        let fitted;
        let pca = match &global {
            Some(m) => m,
            None => {
                fitted = pca_fit_with(&train, max_pca, pca_opts)?;
                &fitted
            }
        };
        let z_train = pca.transform(&train)?;
        let mut models = Vec::with_capacity(g);
        for &n_pca in n_pca_grid {
            let k = n_pca.min(pca.k());
            let x = z_train.slice(s![.., ..k]);
            models.push((k, svm_train_ovr(x, &train_labels, &opts.svm, opts.seed)?));
        }

        observer.enter(Phase::Predict { fold: fi });
        let test = RowSubset::new(features, &fold.test);
        let z_test: Array2<f64> = pca.transform(&test)?;
        let truth: Vec<Expression> = fold.test.iter().map(|&i| labels[i]).collect();
        for (gi, (k, model)) in models.iter().enumerate() {
            let preds = model.predict(z_test.slice(s![.., ..*k]))?;
            let m = metrics(&preds, &truth)?;
            fold_acc[gi].push(m.accuracy);
            correct[gi] += m.correct;
            total[gi] += m.total;
            for (acc_row, row) in confusion[gi].iter_mut().zip(&m.confusion) {
                for (a, v) in acc_row.iter_mut().zip(row) {
                    *a += v;
                }
            }
            k_used[gi] = k_used[gi].min(*k);
            unconverged[gi] += model.training().iter().filter(|t| !t.converged).count();
        }
    }

    Ok((0..g)
        .map(|gi| {
            let accuracy = match plan.scheme {
                Scheme::Kfold10 => fold_acc[gi].iter().sum::<f64>() / fold_acc[gi].len() as f64,
                Scheme::Holdout8020 | Scheme::Jackknife => correct[gi] as f64 / total[gi] as f64,
            };
            SchemeOutcome {
                scheme: plan.scheme,
                n_pca: n_pca_grid[gi],
                k_used: k_used[gi],
                accuracy,
                fold_accuracies: fold_acc[gi].clone(),
                correct: correct[gi],
                total: total[gi],
                confusion: confusion[gi],
                svm_unconverged: unconverged[gi],
            }
        })
        .collect())
}

/// Single-configuration form of [`run_grid`].
pub fn run_config<S: RowSource + ?Sized>(
    features: &S,
    labels: &[Expression],
    plan: &SplitPlan,
    n_pca: usize,
    opts: &EvalOptions,
) -> Result<SchemeOutcome> {
    Ok(run_grid(features, labels, plan, &[n_pca], opts, &())?.remove(0))
}

/// Accuracies of one (layer, n_pca) configuration across schemes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub layer: TapPoint,
    pub n_pca: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_used: Option<usize>,
    pub a_jk: Option<f64>,
    pub a_10fold: Option<f64>,
    pub a_test: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub confusion: BTreeMap<Scheme, Confusion>,
}

impl EvalResult {
    pub fn new(layer: TapPoint, n_pca: usize) -> Self {
        Self {
            layer,
            n_pca,
            k_used: None,
            a_jk: None,
            a_10fold: None,
            a_test: None,
            confusion: BTreeMap::new(),
        }
    }

    pub fn absorb(&mut self, outcome: &SchemeOutcome) {
        match outcome.scheme {
            Scheme::Holdout8020 => self.a_test = Some(outcome.accuracy),
            Scheme::Kfold10 => self.a_10fold = Some(outcome.accuracy),
            Scheme::Jackknife => self.a_jk = Some(outcome.accuracy),
        }
        self.k_used = Some(self.k_used.map_or(outcome.k_used, |k| k.min(outcome.k_used)));
        self.confusion.insert(outcome.scheme, outcome.confusion);
    }

    pub fn accuracy(&self, scheme: Scheme) -> Option<f64> {
        match scheme {
            Scheme::Holdout8020 => self.a_test,
            Scheme::Kfold10 => self.a_10fold,
            Scheme::Jackknife => self.a_jk,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub layer: TapPoint,
    pub n_pca: usize,
    pub a_jk: f64,
    pub a_test: f64,
    /// `|a_jk - a_test|`
    pub difference: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub chosen_layer: TapPoint,
    pub chosen_n_pca: usize,
    pub candidates: Vec<Candidate>,
    pub rationale: String,
}

impl SelectionResult {
    pub fn chosen(&self) -> &Candidate {
        self.candidates
            .iter()
            .find(|c| c.layer == self.chosen_layer && c.n_pca == self.chosen_n_pca)
            .expect("chosen is a candidate")
    }
}

/// Step 1 keeps the two configurations with the highest jackknife accuracy
/// (ties: shallower layer, then fewer components). Step 2 picks the one
/// whose jackknife and hold-out test accuracies differ least (ties: higher
/// test accuracy, then shortlist order).
pub fn select_parameters(results: &[EvalResult]) -> Result<SelectionResult> {
    let mut usable: Vec<Candidate> = results
        .iter()
        .filter_map(|r| match (r.a_jk, r.a_test) {
            (Some(a_jk), Some(a_test)) => Some(Candidate {
                layer: r.layer,
                n_pca: r.n_pca,
                a_jk,
                a_test,
                difference: (a_jk - a_test).abs(),
            }),
            _ => None,
        })
        .collect();
    if usable.len() < 2 {
        return Err(Error::TooFewResults {
            op: "select_parameters",
            needed: 2,
            got: usable.len(),
        });
    }
    if usable.iter().any(|c| !c.a_jk.is_finite() || !c.a_test.is_finite()) {
        return Err(Error::NonFinite("select_parameters accuracies"));
    }
    usable.sort_by(|a, b| {
        b.a_jk
            .total_cmp(&a.a_jk)
            .then(a.layer.cmp(&b.layer))
            .then(a.n_pca.cmp(&b.n_pca))
    });
    usable.truncate(2);
    let pick = if usable[1].difference < usable[0].difference
        || (usable[1].difference == usable[0].difference && usable[1].a_test > usable[0].a_test)
    {
        1
    } else {
        0
    };
    let chosen = &usable[pick];
    let rationale = format!(
        "shortlist by jackknife accuracy: {}; chose {} (n_pca {}) with the smaller |A_JK - A_T| = {:.2} points",
        usable
            .iter()
            .map(|c| format!(
                "{}/{} (A_JK {:.2}, A_T {:.2}, diff {:.2})",
                c.layer,
                c.n_pca,
                100.0 * c.a_jk,
                100.0 * c.a_test,
                100.0 * c.difference
            ))
            .collect::<Vec<_>>()
            .join(", "),
        chosen.layer,
        chosen.n_pca,
        100.0 * chosen.difference
    );
    Ok(SelectionResult {
        chosen_layer: chosen.layer,
        chosen_n_pca: chosen.n_pca,
        candidates: usable.clone(),
        rationale,
    })
}
