//! JSON and CSV serialization of evaluation results.
//!
//! Accuracies are stored as fractions in `[0, 1]`. The JSON report carries
//! no timestamps, so identical runs produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{EvalResult, Scheme, SelectionResult};

pub const SCHEMA_VERSION: u32 = 1;
pub const LIBRARY_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Attached to every report that carries a selection.
pub const SELECTION_NOTE: &str =
    "parameter selection compares jackknife accuracy with hold-out test accuracy; \
     the hold-out set therefore informs model choice and A_T is not an unbiased estimate";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub library_version: String,
    pub weights_hash: Option<String>,
    pub corpus_hash: Option<String>,
    pub seed: Option<u64>,
}

impl Default for Provenance {
    fn default() -> Self {
        Self {
            library_version: LIBRARY_VERSION.to_string(),
            weights_hash: None,
            corpus_hash: None,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub provenance: Provenance,
    #[serde(default)]
    pub config: serde_json::Value,
    pub results: Vec<EvalResult>,
    #[serde(default)]
    pub selection: Option<SelectionResult>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl Report {
    pub fn new(provenance: Provenance, config: serde_json::Value, results: Vec<EvalResult>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            provenance,
            config,
            results,
            selection: None,
            notes: Vec::new(),
        }
    }

    pub fn set_selection(&mut self, selection: SelectionResult) {
        self.selection = Some(selection);
        if !self.notes.iter().any(|n| n == SELECTION_NOTE) {
            self.notes.push(SELECTION_NOTE.to_string());
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::json("report", e))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Report = serde_json::from_str(text).map_err(|e| Error::MalformedReport(e.to_string()))?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(Error::MalformedReport(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                report.schema_version
            )));
        }
        for r in &report.results {
            for a in [r.a_jk, r.a_10fold, r.a_test].into_iter().flatten() {
                if !(0.0..=1.0).contains(&a) {
                    return Err(Error::MalformedReport(format!(
                        "accuracy {a} for {}/{} is outside [0, 1]",
                        r.layer, r.n_pca
                    )));
                }
            }
        }
        Ok(report)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |a| a.to_string())
}

/// Long form: `layer,n_pca,scheme,accuracy`, one row per available accuracy.
pub fn results_csv(results: &[EvalResult]) -> String {
    let mut out = String::from("layer,n_pca,scheme,accuracy\n");
    for r in results {
        for scheme in [Scheme::Jackknife, Scheme::Kfold10, Scheme::Holdout8020] {
            if let Some(a) = r.accuracy(scheme) {
                writeln!(out, "{},{},{},{}", r.layer, r.n_pca, scheme, a).expect("string write");
            }
        }
    }
    out
}

/// Wide form: `layer,n_pca,a_jk,a_10fold,a_test`; missing values are empty.
pub fn summary_csv(results: &[EvalResult]) -> String {
    let mut out = String::from("layer,n_pca,a_jk,a_10fold,a_test\n");
    for r in results {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.layer,
            r.n_pca,
            cell(r.a_jk),
            cell(r.a_10fold),
            cell(r.a_test)
        )
        .expect("string write");
    }
    out
}
