use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vggfer::corpus::LoadPolicy;
use vggfer::evalkit::Scheme;
use vggfer::linalg::EigenSolver;
use vggfer::{SvmParams, TapPoint};

use crate::{CliError, CliResult};

pub const DEFAULT_N_PCA: [usize; 4] = [50, 100, 150, 200];
pub const DEFAULT_CACHE_DIR: &str = ".vggfer-cache";
pub const DEFAULT_OUTPUT_DIR: &str = "vggfer-out";

/// Population that k-fold and jackknife run over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvBase {
    #[default]
    FullCorpus,
    /// The training rows of the hold-out split.
    TrainSplit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus_root: Option<PathBuf>,
    pub weights_path: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub taps: Vec<TapPoint>,
    pub n_pca_grid: Vec<usize>,
    pub svm: SvmParams,
    pub schemes: Vec<Scheme>,
    pub seed: u64,
    pub pca_per_fold: bool,
    pub cv_base: CvBase,
    pub load_policy: LoadPolicy,
    pub eigen_solver: EigenSolver,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus_root: None,
            weights_path: None,
            cache_dir: None,
            output_dir: None,
            taps: TapPoint::ALL.to_vec(),
            n_pca_grid: DEFAULT_N_PCA.to_vec(),
            svm: SvmParams::default(),
            schemes: Scheme::ALL.to_vec(),
            seed: 0,
            pca_per_fold: true,
            cv_base: CvBase::default(),
            load_policy: LoadPolicy::default(),
            eigen_solver: EigenSolver::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    /// Checks invariants and puts list fields in canonical order.
    pub fn validated(mut self) -> CliResult<Self> {
        if self.n_pca_grid.is_empty() || self.n_pca_grid.contains(&0) {
            return Err(CliError::Usage("n_pca_grid must be a non-empty list of positive integers".into()));
        }
        if self.schemes.is_empty() {
            return Err(CliError::Usage("schemes must not be empty".into()));
        }
        if self.taps.is_empty() {
            return Err(CliError::Usage("taps must not be empty".into()));
        }
        if !(self.svm.c > 0.0 && self.svm.c.is_finite()) || !(self.svm.tol > 0.0) || self.svm.max_epochs == 0 {
            return Err(CliError::Usage(format!("invalid svm parameters {:?}", self.svm)));
        }
        self.n_pca_grid.sort_unstable();
        self.n_pca_grid.dedup();
        self.schemes.sort();
        self.schemes.dedup();
        self.taps.sort();
        self.taps.dedup();
        Ok(self)
    }

    pub fn corpus_root(&self) -> CliResult<&Path> {
        self.corpus_root
            .as_deref()
            .ok_or_else(|| CliError::Usage("no corpus root given (--corpus or corpus_root)".into()))
    }

    pub fn weights_path(&self) -> CliResult<&Path> {
        self.weights_path
            .as_deref()
            .ok_or_else(|| CliError::Usage("no weight bundle given (--weights or weights_path)".into()))
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }

    /// The configuration as recorded in reports: everything that can affect
    /// results, without the cache and output locations.
    pub fn recorded(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("cache_dir");
            map.remove("output_dir");
        }
        v
    }
}
