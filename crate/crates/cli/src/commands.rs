use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use vggfer::bundle::file_sha256;
use vggfer::corpus::{extract_features_hashed, Extraction, FeatureCache};
use vggfer::evalkit::{make_split, run_grid, EvalOptions, EvalResult, Scheme, SelectionResult, SplitPlan};
use vggfer::pca::{pca_fit_with, PcaOptions};
use vggfer::report::{results_csv, summary_csv, Provenance, Report, LIBRARY_VERSION};
use vggfer::verify::{verify_all, Check};
use vggfer::{
    generate_synthetic_corpus, load_corpus, preprocess, select_parameters, svm_train_ovr, Corpus, Expression,
    FeatureMatrix, ImageSample, PcaModel, RowSource, SvmModel, TapPoint, VggConfig, WeightBundle,
};

use crate::config::{CvBase, RunConfig};
use crate::{CliError, CliResult};

pub const REPORT_FILE: &str = "report.json";
pub const RESULTS_CSV: &str = "results.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PCA_BUNDLE: &str = "model/pca.bundle";
pub const SVM_BUNDLE: &str = "model/svm.bundle";

pub struct Inputs {
    pub corpus: Corpus,
    pub weights: WeightBundle,
    pub corpus_hash: String,
    pub weights_hash: String,
}

pub fn load_inputs(cfg: &RunConfig) -> CliResult<Inputs> {
    let weights_path = cfg.weights_path()?;
    let weights = WeightBundle::load(weights_path)?;
    let corpus = load_corpus(cfg.corpus_root()?, cfg.load_policy)?;
    info!(
        "corpus: {} samples {:?}; weights: {} parameters",
        corpus.len(),
        corpus.class_counts,
        weights.total_params()
    );
    let corpus_hash = corpus.content_hash();
    let weights_hash = weights.content_hash();
    Ok(Inputs {
        corpus,
        weights,
        corpus_hash,
        weights_hash,
    })
}

pub fn extract(cfg: &RunConfig, inputs: &Inputs) -> CliResult<Extraction> {
    let cache = FeatureCache::new(cfg.cache_dir());
    let taps: BTreeSet<TapPoint> = cfg.taps.iter().copied().collect();
    Ok(extract_features_hashed(
        &inputs.corpus,
        &inputs.weights,
        &taps,
        Some(&cache),
        inputs.corpus_hash.clone(),
        inputs.weights_hash.clone(),
    )?)
}

/// Populates the feature cache and returns one status line per layer.
pub fn cmd_extract(cfg: &RunConfig) -> CliResult<Vec<String>> {
    let inputs = load_inputs(cfg)?;
    let ex = extract(cfg, &inputs)?;
    Ok(ex
        .features
        .iter()
        .map(|(tap, m)| {
            format!(
                "{tap}: {} x {} ({})",
                m.n_samples(),
                m.dim(),
                if ex.cache_hits.contains(tap) { "cache hit" } else { "computed" }
            )
        })
        .collect())
}

/// Split plans for every configured scheme, honouring `cv_base`.
pub fn split_plans(cfg: &RunConfig, ids: &[String], labels: &[Expression]) -> CliResult<Vec<SplitPlan>> {
    let holdout = make_split(ids, labels, Scheme::Holdout8020, cfg.seed)?;
    let mut plans = Vec::new();
    for &scheme in &cfg.schemes {
        let plan = match (scheme, cfg.cv_base) {
            (Scheme::Holdout8020, _) => holdout.clone(),
            (_, CvBase::FullCorpus) => make_split(ids, labels, scheme, cfg.seed)?,
            (_, CvBase::TrainSplit) => {
                let base = &holdout.folds[0].train;
                let sub_ids: Vec<String> = base.iter().map(|&i| ids[i].clone()).collect();
                let sub_labels: Vec<Expression> = base.iter().map(|&i| labels[i]).collect();
                make_split(&sub_ids, &sub_labels, scheme, cfg.seed)?.mapped(base)
            }
        };
        plans.push(plan);
    }
    Ok(plans)
}

pub fn eval_options(cfg: &RunConfig) -> EvalOptions {
    EvalOptions {
        svm: cfg.svm,
        seed: cfg.seed,
        pca_per_fold: cfg.pca_per_fold,
        eigen_solver: cfg.eigen_solver,
    }
}

/// One result per (layer, n_pca), ordered by layer depth then n_pca.
pub fn evaluate_features(cfg: &RunConfig, features: &BTreeMap<TapPoint, FeatureMatrix>) -> CliResult<Vec<EvalResult>> {
    let first = features
        .values()
        .next()
        .ok_or_else(|| CliError::Usage("no feature layers to evaluate".into()))?;
    let ids = first.sample_ids.clone();
    let labels = first
        .labels
        .clone()
        .ok_or_else(|| CliError::Usage("features carry no labels".into()))?;
    let plans = split_plans(cfg, &ids, &labels)?;
    let opts = eval_options(cfg);
    let mut results = Vec::new();
    for (&tap, m) in features {
        let mut row: Vec<EvalResult> = cfg.n_pca_grid.iter().map(|&n| EvalResult::new(tap, n)).collect();
        for plan in &plans {
            let outcomes = run_grid(m, &labels, plan, &cfg.n_pca_grid, &opts, &())?;
            for (r, o) in row.iter_mut().zip(&outcomes) {
                r.absorb(o);
            }
            let clamped: Vec<String> = outcomes
                .iter()
                .filter(|o| o.k_used < o.n_pca)
                .map(|o| format!("{} -> {}", o.n_pca, o.k_used))
                .collect();
            if !clamped.is_empty() {
                warn!(
                    "{tap} {}: n_pca above the training rank bound in some folds ({})",
                    plan.scheme,
                    clamped.join(", ")
                );
            }
            let unconverged: usize = outcomes.iter().map(|o| o.svm_unconverged).sum();
            if unconverged > 0 {
                warn!(
                    "{tap} {}: {unconverged} binary SVM fits stopped at max_epochs ({}) above tol ({})",
                    plan.scheme, cfg.svm.max_epochs, cfg.svm.tol
                );
            }
            info!(
                "{tap} {}: {}",
                plan.scheme,
                outcomes
                    .iter()
                    .map(|o| format!("{}={:.4}", o.n_pca, o.accuracy))
                    .collect::<Vec<_>>()
                    .join(" ")
            );
        }
        results.extend(row);
    }
    Ok(results)
}

fn provenance(cfg: &RunConfig, inputs: &Inputs) -> Provenance {
    Provenance {
        library_version: LIBRARY_VERSION.to_string(),
        weights_hash: Some(inputs.weights_hash.clone()),
        corpus_hash: Some(inputs.corpus_hash.clone()),
        seed: Some(cfg.seed),
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn write_report_files(dir: &Path, report: &Report) -> CliResult<()> {
    report.write(&dir.join(REPORT_FILE))?;
    write_text(&dir.join(RESULTS_CSV), &results_csv(&report.results))?;
    write_text(&dir.join(SUMMARY_CSV), &summary_csv(&report.results))
}

fn evaluate_inputs(cfg: &RunConfig, inputs: &Inputs) -> CliResult<(Report, Extraction)> {
    let ex = extract(cfg, inputs)?;
    let results = evaluate_features(cfg, &ex.features)?;
    Ok((Report::new(provenance(cfg, inputs), cfg.recorded(), results), ex))
}

/// Evaluates the full (layer x n_pca) grid and writes the report and CSVs
/// into the output directory.
pub fn cmd_evaluate(cfg: &RunConfig) -> CliResult<Report> {
    let inputs = load_inputs(cfg)?;
    let (report, _) = evaluate_inputs(cfg, &inputs)?;
    write_report_files(&cfg.output_dir(), &report)?;
    Ok(report)
}

pub fn describe_selection(sel: &SelectionResult) -> Vec<String> {
    let mut lines = Vec::new();
    for (i, c) in sel.candidates.iter().enumerate() {
        lines.push(format!(
            "candidate {}: {} n_pca {}  A_JK {:.2}  A_T {:.2}  |diff| {:.2}",
            i + 1,
            c.layer,
            c.n_pca,
            100.0 * c.a_jk,
            100.0 * c.a_test,
            100.0 * c.difference
        ));
    }
    let chosen = sel.chosen();
    lines.push(format!(
        "selected: {} n_pca {}  A_JK {:.2}  A_T {:.2}",
        chosen.layer,
        chosen.n_pca,
        100.0 * chosen.a_jk,
        100.0 * chosen.a_test
    ));
    lines
}

/// Applies two-step selection to a stored report and writes the selection
/// back into it.
pub fn cmd_select(report_path: &Path) -> CliResult<SelectionResult> {
    let mut report = Report::read(report_path)?;
    let selection = select_parameters(&report.results)?;
    report.set_selection(selection.clone());
    report.write(report_path)?;
    Ok(selection)
}

/// A trained classifier for one tapped layer.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub layer: TapPoint,
    pub input_size: usize,
    pub pca: PcaModel,
    pub svm: SvmModel,
}

impl TrainedModel {
    pub fn features(&self, weights: &WeightBundle, sample: &ImageSample) -> CliResult<Vec<f32>> {
        let image = preprocess(sample, self.input_size)?;
        let mut taps = weights.forward_with_taps(&image, &BTreeSet::from([self.layer]))?;
        Ok(taps.remove(&self.layer).expect("requested tap is returned"))
    }

    pub fn decision_values(&self, weights: &WeightBundle, sample: &ImageSample) -> CliResult<Vec<f64>> {
        let z = self.pca.transform_row(&self.features(weights, sample)?)?;
        Ok(self.svm.decision_values(&z)?)
    }

    pub fn predict(&self, weights: &WeightBundle, sample: &ImageSample) -> CliResult<Expression> {
        let z = self.pca.transform_row(&self.features(weights, sample)?)?;
        Ok(self.svm.predict_row(&z)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChosenModel {
    pub layer: TapPoint,
    pub n_pca: usize,
    pub k: usize,
    pub input_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub library_version: String,
    pub corpus_hash: String,
    pub weights_hash: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub chosen: ChosenModel,
    /// SHA-256 of every artifact, keyed by path relative to the output directory.
    pub files: BTreeMap<String, String>,
}

pub struct PipelineOutcome {
    pub output_dir: PathBuf,
    pub report: Report,
    pub manifest: RunManifest,
    pub model: TrainedModel,
    pub cache_hits: BTreeSet<TapPoint>,
}

fn hash_tree(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> CliResult<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Usage(format!("cannot list {}: {e}", dir.display())))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("cannot list {}: {e}", dir.display())))?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            hash_tree(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("under root");
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            out.insert(key, file_sha256(&path)?);
        }
    }
    Ok(())
}

/// Extract, evaluate, select, then fit PCA and the SVM on the whole corpus
/// for the selected configuration and write every artifact.
pub fn cmd_pipeline(cfg: &RunConfig) -> CliResult<PipelineOutcome> {
    if !cfg.schemes.contains(&Scheme::Jackknife) || !cfg.schemes.contains(&Scheme::Holdout8020) {
        return Err(CliError::Usage(
            "pipeline selection needs both the jackknife and holdout_80_20 schemes".into(),
        ));
    }
    let inputs = load_inputs(cfg)?;
    let (mut report, ex) = evaluate_inputs(cfg, &inputs)?;
    let selection = select_parameters(&report.results)?;
    for line in describe_selection(&selection) {
        info!("{line}");
    }
    report.set_selection(selection.clone());

    let features = &ex.features[&selection.chosen_layer];
    let labels = features.labels.clone().expect("extracted features are labelled");
    let pca = pca_fit_with(
        features,
        selection.chosen_n_pca,
        PcaOptions {
            solver: cfg.eigen_solver,
            route: None,
        },
    )?;
    let z = pca.transform(features)?;
    let svm = svm_train_ovr(z.view(), &labels, &cfg.svm, cfg.seed)?;

    let out = cfg.output_dir();
    write_report_files(&out, &report)?;
    pca.save(&out.join(PCA_BUNDLE))?;
    svm.save(&out.join(SVM_BUNDLE))?;

    let mut files = BTreeMap::new();
    for name in [REPORT_FILE, RESULTS_CSV, SUMMARY_CSV] {
        files.insert(name.to_string(), file_sha256(&out.join(name))?);
    }
    hash_tree(&out, &out.join("model"), &mut files)?;
    let manifest = RunManifest {
        library_version: LIBRARY_VERSION.to_string(),
        corpus_hash: inputs.corpus_hash.clone(),
        weights_hash: inputs.weights_hash.clone(),
        seed: cfg.seed,
        config: cfg.recorded(),
        chosen: ChosenModel {
            layer: selection.chosen_layer,
            n_pca: selection.chosen_n_pca,
            k: pca.k(),
            input_size: inputs.weights.config().input_size,
        },
        files,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_text(&out.join(MANIFEST_FILE), &text)?;

    Ok(PipelineOutcome {
        output_dir: out,
        report,
        model: TrainedModel {
            layer: selection.chosen_layer,
            input_size: manifest.chosen.input_size,
            pca,
            svm,
        },
        manifest,
        cache_hits: ex.cache_hits,
    })
}

pub fn read_manifest(model_dir: &Path) -> CliResult<RunManifest> {
    let path = model_dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid {}: {e}", path.display())))
}

/// Loads the model a pipeline run wrote, checking that `weights` are the
/// ones it was trained with.
pub fn load_trained(model_dir: &Path, weights: &WeightBundle) -> CliResult<TrainedModel> {
    let manifest = read_manifest(model_dir)?;
    let hash = weights.content_hash();
    if hash != manifest.weights_hash {
        return Err(CliError::Usage(format!(
            "weight bundle hash {hash} differs from the one the model was trained with ({})",
            manifest.weights_hash
        )));
    }
    Ok(TrainedModel {
        layer: manifest.chosen.layer,
        input_size: manifest.chosen.input_size,
        pca: PcaModel::load(&model_dir.join(PCA_BUNDLE))?,
        svm: SvmModel::load(&model_dir.join(SVM_BUNDLE))?,
    })
}

/// Classifies image files with a pipeline output directory.
pub fn cmd_predict(model_dir: &Path, weights_path: &Path, images: &[PathBuf]) -> CliResult<Vec<(PathBuf, Expression)>> {
    if images.is_empty() {
        return Err(CliError::Usage("no images given".into()));
    }
    let weights = WeightBundle::load(weights_path)?;
    let model = load_trained(model_dir, &weights)?;
    images
        .iter()
        .map(|path| {
            let sample = ImageSample::from_file(path, path.display().to_string(), None)?;
            Ok((path.clone(), model.predict(&weights, &sample)?))
        })
        .collect()
}

pub fn cmd_gen_synthetic(out: &Path, seed: u64, per_class: usize, size: (usize, usize)) -> CliResult<Corpus> {
    Ok(generate_synthetic_corpus(out, seed, per_class, size)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    Vgg19,
    Micro,
}

impl Arch {
    pub fn config(self) -> VggConfig {
        match self {
            Arch::Vgg19 => VggConfig::vgg19(),
            Arch::Micro => VggConfig::micro(),
        }
    }
}

/// Writes a seeded random weight bundle (He-normal kernels).
pub fn cmd_gen_weights(out: &Path, arch: Arch, seed: u64) -> CliResult<WeightBundle> {
    let w = WeightBundle::random(arch.config(), seed)?;
    w.save(out)?;
    Ok(w)
}

/// Oracle cross-checks, plus a shape trace when a bundle is given.
pub fn cmd_verify(seed: u64, weights_path: Option<&Path>) -> CliResult<(Vec<Check>, Vec<String>)> {
    let checks = verify_all(seed)?;
    let mut notes = Vec::new();
    if let Some(path) = weights_path {
        let w = WeightBundle::load(path)?;
        let cfg = *w.config();
        let expected: BTreeMap<String, Vec<usize>> =
            cfg.layers().into_iter().map(|l| (l.name, l.output_shape)).collect();
        let s = cfg.input_size;
        let image = vggfer::Tensor::zeros(vec![3, s, s])?;
        let mut mismatches = 0;
        w.forward_traced(&image, &TapPoint::ALL.into_iter().collect(), |name, shape| {
            let ok = expected.get(name).is_some_and(|e| e == shape);
            if !ok {
                mismatches += 1;
            }
            notes.push(format!("{} {name}: {shape:?}", if ok { "ok" } else { "MISMATCH" }));
        })?;
        notes.push(format!("total parameters: {}", w.total_params()));
        if mismatches > 0 {
            for n in &notes {
                log::error!("{n}");
            }
            return Err(CliError::ChecksFailed(mismatches));
        }
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    if failed > 0 {
        for c in &checks {
            log::error!("{c}");
        }
        return Err(CliError::ChecksFailed(failed));
    }
    Ok((checks, notes))
}
