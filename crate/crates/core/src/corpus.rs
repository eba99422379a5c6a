//! Directory-per-class corpora, the on-disk feature cache and the synthetic
//! surrogate corpus.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bundle::{read_sidecar, TensorBundle};
use crate::error::{Error, Result};
use crate::pca::{FeatureMatrix, RowSource};
use crate::preprocess::{preprocess, Expression, ImageSample};
use crate::tensor::Tensor;
use crate::vgg::{TapPoint, WeightBundle};

/// What to do when a file inside a label directory cannot be decoded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadPolicy {
    #[default]
    Abort,
    Skip,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub root: PathBuf,
    pub samples: Vec<ImageSample>,
    pub class_counts: BTreeMap<Expression, usize>,
    /// Files passed over under [`LoadPolicy::Skip`], with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

impl Corpus {
    pub fn from_samples(root: PathBuf, samples: Vec<ImageSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyCorpus(root));
        }
        let mut class_counts = BTreeMap::new();
        let mut ids = BTreeSet::new();
        for s in &samples {
            let label = s
                .label
                .ok_or_else(|| Error::InvalidArgument(format!("sample {} has no label", s.id)))?;
            *class_counts.entry(label).or_insert(0) += 1;
            if !ids.insert(s.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(Self {
            root,
            samples,
            class_counts,
            skipped: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.id.clone()).collect()
    }

    pub fn labels(&self) -> Vec<Expression> {
        self.samples
            .iter()
            .map(|s| s.label.expect("corpus samples are labelled"))
            .collect()
    }

    /// SHA-256 over ids, labels, image sizes and pixels in corpus order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.samples.len() as u64).to_le_bytes());
        for s in &self.samples {
            h.update((s.id.len() as u64).to_le_bytes());
            h.update(s.id.as_bytes());
            h.update([s.label.map_or(u8::MAX, |l| l.index() as u8)]);
            h.update((s.height as u64).to_le_bytes());
            h.update((s.width as u64).to_le_bytes());
            h.update(&s.pixels);
        }
        hex::encode(h.finalize())
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<(String, PathBuf, bool)>> {
    let mut out = Vec::new();
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir.display().to_string(), e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') {
            continue;
        }
        let path = entry.path();
        let is_dir = path.is_dir();
        out.push((name, path, is_dir));
    }
    out.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
    Ok(out)
}

/// Loads `<root>/<label>/<image>`. Samples are ordered by label, then by
/// file name bytes; ids are `<label>/<file stem>`.
pub fn load_corpus(root: &Path, policy: LoadPolicy) -> Result<Corpus> {
    if !root.is_dir() {
        return Err(Error::io(
            root.display().to_string(),
            std::io::Error::new(std::io::ErrorKind::NotFound, "corpus root is not a directory"),
        ));
    }
    let mut by_label: BTreeMap<Expression, PathBuf> = BTreeMap::new();
    for (name, path, is_dir) in sorted_entries(root)? {
        if !is_dir {
            continue;
        }
        let label: Expression = name.parse()?;
        by_label.insert(label, path);
    }

    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for (label, dir) in by_label {
        for (name, path, is_dir) in sorted_entries(&dir)? {
            if is_dir {
                continue;
            }
            let stem = Path::new(&name)
                .file_stem()
                .map_or(name.clone(), |s| s.to_string_lossy().into_owned());
            let id = format!("{label}/{stem}");
            match ImageSample::from_file(&path, id, Some(label)) {
                Ok(s) => samples.push(s),
                Err(e) if policy == LoadPolicy::Skip => {
                    warn!("skipping {}: {e}", path.display());
                    skipped.push((path, e.to_string()));
                }
                Err(e) => return Err(e),
            }
        }
    }
    let mut corpus = Corpus::from_samples(root.to_path_buf(), samples)?;
    corpus.skipped = skipped;
    Ok(corpus)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CacheMeta {
    corpus_hash: String,
    weights_hash: String,
    layer: TapPoint,
    sample_ids: Vec<String>,
    labels: Option<Vec<Expression>>,
}

/// Feature matrices on disk under `<root>/<corpus-hash>/<weights-hash>/<layer>.bundle`.
#[derive(Clone, Debug)]
pub struct FeatureCache {
    root: PathBuf,
}

impl FeatureCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_path(&self, corpus_hash: &str, weights_hash: &str, layer: TapPoint) -> PathBuf {
        self.root
            .join(corpus_hash)
            .join(weights_hash)
            .join(format!("{layer}.bundle"))
    }

    /// Returns `None` when nothing is stored or the stored hashes differ.
    pub fn get(&self, corpus_hash: &str, weights_hash: &str, layer: TapPoint) -> Result<Option<FeatureMatrix>> {
        let dir = self.entry_path(corpus_hash, weights_hash, layer);
        if !dir.is_dir() {
            return Ok(None);
        }
        let meta: CacheMeta = serde_json::from_value(read_sidecar(&dir)?)
            .map_err(|e| Error::json(dir.display().to_string(), e))?;
        if meta.corpus_hash != corpus_hash || meta.weights_hash != weights_hash || meta.layer != layer {
            return Ok(None);
        }
        let mut bundle = TensorBundle::read(&dir)?;
        let t = bundle
            .remove("features")
            .ok_or_else(|| Error::MissingEntry("features".into()))?;
        let [_, dim] = t.shape()[..] else {
            return Err(Error::InvalidTensor(format!("cached features have shape {:?}", t.shape())));
        };
        FeatureMatrix::new(layer, meta.sample_ids, meta.labels, dim, t.into_data()).map(Some)
    }

    pub fn put(&self, corpus_hash: &str, weights_hash: &str, features: &FeatureMatrix) -> Result<()> {
        let dir = self.entry_path(corpus_hash, weights_hash, features.layer);
        let mut bundle = TensorBundle::new(None);
        bundle.insert(
            "features",
            Tensor::new(vec![features.n_samples(), features.dim()], features.data().to_vec())?,
        );
        let meta = CacheMeta {
            corpus_hash: corpus_hash.to_string(),
            weights_hash: weights_hash.to_string(),
            layer: features.layer,
            sample_ids: features.sample_ids.clone(),
            labels: features.labels.clone(),
        };
        let meta = serde_json::to_value(&meta).map_err(|e| Error::json("cache sidecar", e))?;
        bundle.write_with_sidecar(&dir, Some(&meta))
    }
}

#[derive(Clone, Debug)]
pub struct Extraction {
    pub features: BTreeMap<TapPoint, FeatureMatrix>,
    pub cache_hits: BTreeSet<TapPoint>,
    pub corpus_hash: String,
    pub weights_hash: String,
}

/// Preprocesses every sample and records the requested taps. Layers found in
/// `cache` are read back instead of recomputed; fresh layers are stored.
pub fn extract_features(
    corpus: &Corpus,
    weights: &WeightBundle,
    taps: &BTreeSet<TapPoint>,
    cache: Option<&FeatureCache>,
) -> Result<Extraction> {
    let corpus_hash = corpus.content_hash();
    let weights_hash = weights.content_hash();
    extract_features_hashed(corpus, weights, taps, cache, corpus_hash, weights_hash)
}

/// As [`extract_features`] with precomputed content hashes.
pub fn extract_features_hashed(
    corpus: &Corpus,
    weights: &WeightBundle,
    taps: &BTreeSet<TapPoint>,
    cache: Option<&FeatureCache>,
    corpus_hash: String,
    weights_hash: String,
) -> Result<Extraction> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus(corpus.root.clone()));
    }
    let mut features = BTreeMap::new();
    let mut cache_hits = BTreeSet::new();
    let mut missing = BTreeSet::new();
    for &tap in taps {
        match cache.map(|c| c.get(&corpus_hash, &weights_hash, tap)).transpose()?.flatten() {
            Some(m) if m.sample_ids == corpus.ids() => {
                info!("cache hit for {tap}");
                cache_hits.insert(tap);
                features.insert(tap, m);
            }
            _ => {
                missing.insert(tap);
            }
        }
    }

    if !missing.is_empty() {
        let size = weights.config().input_size;
        let rows: Vec<BTreeMap<TapPoint, Vec<f32>>> = corpus
            .samples
            .par_iter()
            .map(|s| weights.forward_with_taps(&preprocess(s, size)?, &missing))
            .collect::<Result<_>>()?;
        let ids = corpus.ids();
        let labels = corpus.labels();
        for &tap in &missing {
            let dim = weights.config().tap_len(tap);
            let mut data = Vec::with_capacity(dim * rows.len());
            for r in &rows {
                data.extend_from_slice(&r[&tap]);
            }
            let m = FeatureMatrix::new(tap, ids.clone(), Some(labels.clone()), dim, data)?;
            if let Some(c) = cache {
                c.put(&corpus_hash, &weights_hash, &m)?;
            }
            features.insert(tap, m);
        }
    }
    Ok(Extraction {
        features,
        cache_hits,
        corpus_hash,
        weights_hash,
    })
}

/// Per-image jitter of a class pattern.
struct Pattern {
    freq: f64,
    phase: f64,
    cx: f64,
    cy: f64,
    angle_jitter: f64,
}

/// Pattern intensity in [-1, 1] at `(u, v)` in the unit square.
fn pattern_value(class: Expression, p: &Pattern, u: f64, v: f64) -> f64 {
    let grating = |deg: f64| {
        let a = (deg + p.angle_jitter).to_radians();
        (2.0 * PI * p.freq * (u * a.cos() + v * a.sin()) + p.phase).sin()
    };
    match class {
        Expression::Anger => grating(0.0),
        Expression::Disgust => grating(90.0),
        Expression::Fear => grating(45.0),
        Expression::Happy => grating(135.0),
        Expression::Neutral => {
            let r = ((u - p.cx).powi(2) + (v - p.cy).powi(2)).sqrt();
            (2.0 * PI * p.freq * r + p.phase).sin()
        }
        Expression::Sad => {
            let a = (2.0 * PI * p.freq * 0.5 * (u - p.cx) + p.phase).sin();
            let b = (2.0 * PI * p.freq * 0.5 * (v - p.cy)).sin();
            (a * b).signum()
        }
        Expression::Surprise => {
            // three gaussian blobs in a jittered triangle
            let mut s = 0.0;
            for k in 0..3 {
                let t = p.phase + k as f64 * 2.0 * PI / 3.0;
                let bx = p.cx + 0.25 * t.cos();
                let by = p.cy + 0.25 * t.sin();
                s += (-((u - bx).powi(2) + (v - by).powi(2)) / 0.006).exp();
            }
            2.0 * s.min(1.0) - 1.0
        }
    }
}

/// Writes `per_class` binary PGM files per expression into
/// `<root>/<label>/<label>_NNN.pgm`. Each class has its own geometric
/// signature (oriented gratings, rings, a checkerboard, blobs) with seeded
/// jitter and pixel noise. Output is a pure function of the arguments.
pub fn generate_synthetic_corpus(root: &Path, seed: u64, per_class: usize, size: (usize, usize)) -> Result<Corpus> {
    let (h, w) = size;
    if per_class == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidArgument(
            "synthetic corpus needs per_class >= 1 and a non-empty image size".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 12.0).expect("valid sigma");
    let mut samples = Vec::with_capacity(per_class * Expression::ALL.len());
    for class in Expression::ALL {
        let dir = root.join(class.name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        for i in 0..per_class {
            let p = Pattern {
                freq: rng.random_range(5.0..7.0),
                phase: rng.random_range(0.0..2.0 * PI),
                cx: rng.random_range(0.4..0.6),
                cy: rng.random_range(0.4..0.6),
                angle_jitter: rng.random_range(-6.0..6.0),
            };
            let contrast: f64 = rng.random_range(70.0..100.0);
            let base: f64 = rng.random_range(110.0..145.0);
            let mut pixels = Vec::with_capacity(h * w);
            for y in 0..h {
                for x in 0..w {
                    let u = (x as f64 + 0.5) / w as f64;
                    let v = (y as f64 + 0.5) / h as f64;
                    let val = base + contrast * pattern_value(class, &p, u, v) + noise.sample(&mut rng);
                    pixels.push(val.round().clamp(0.0, 255.0) as u8);
                }
            }
            let stem = format!("{}_{i:03}", class.name());
            let path = dir.join(format!("{stem}.pgm"));
            let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
            bytes.extend_from_slice(&pixels);
            fs::write(&path, &bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
            samples.push(ImageSample::new(format!("{class}/{stem}"), h, w, pixels, Some(class))?);
        }
    }
    Corpus::from_samples(root.to_path_buf(), samples)
}
