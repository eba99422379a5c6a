//! Portable on-disk container for named tensors.
//!
//! A bundle is a directory holding `manifest.json` plus raw blob files of
//! little-endian `f32` values in row-major order:
//!
//! ```json
//! {"version": 1, "tensors": [{"name": "mean", "shape": [4096], "file": "data.bin", "offset_bytes": 0}]}
//! ```
//!
//! Weight bundles, fitted PCA/SVM models and the feature cache all use this
//! one format. An optional `meta.json` sidecar carries non-tensor metadata.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u64 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SIDECAR_FILE: &str = "meta.json";
const BLOB_FILE: &str = "data.bin";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
    pub offset_bytes: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub tensors: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.is_file() {
            return Err(Error::MissingManifest(dir.to_path_buf()));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::MalformedManifest {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        // check the version before the rest so a future layout reports as such
        let version = raw
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::MalformedManifest {
                path: path.clone(),
                reason: "missing integer `version`".into(),
            })?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        serde_json::from_value(raw).map_err(|e| Error::MalformedManifest {
            path,
            reason: e.to_string(),
        })
    }

    pub fn entry(&self, name: &str) -> Option<&ManifestEntry> {
        self.tensors.iter().find(|e| e.name == name)
    }
}

/// Ordered collection of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorBundle {
    pub source: Option<String>,
    entries: Vec<(String, Tensor)>,
}

impl TensorBundle {
    pub fn new(source: Option<String>) -> Self {
        Self {
            source,
            entries: Vec::new(),
        }
    }

    /// Inserts or replaces `name`, keeping first-insertion order.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = tensor,
            None => self.entries.push((name, tensor)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::MissingEntry(name.to_string()))
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        let pos = self.entries.iter().position(|(n, _)| n == name)?;
        Some(self.entries.remove(pos).1)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// SHA-256 over names, shapes and little-endian payloads in entry order.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, tensor) in &self.entries {
            hasher.update((name.len() as u64).to_le_bytes());
            hasher.update(name.as_bytes());
            hasher.update((tensor.shape().len() as u64).to_le_bytes());
            for d in tensor.shape() {
                hasher.update((*d as u64).to_le_bytes());
            }
            for chunk in tensor.data().chunks(1 << 16) {
                hasher.update(f32_le_bytes(chunk));
            }
        }
        hex::encode(hasher.finalize())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let manifest = Manifest::read(dir)?;
        let mut bundle = TensorBundle::new(manifest.source.clone());
        for entry in &manifest.tensors {
            let tensor = read_entry(dir, entry)?;
            bundle.insert(entry.name.clone(), tensor);
        }
        Ok(bundle)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        self.write_with_sidecar(dir, None)
    }

    /// Writes into a temporary sibling directory and renames it into place.
    pub fn write_with_sidecar(&self, dir: &Path, sidecar: Option<&serde_json::Value>) -> Result<()> {
        let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
        let file_name = dir
            .file_name()
            .ok_or_else(|| Error::InvalidArgument(format!("bundle path {} has no name", dir.display())))?;
        let tmp = parent.join(format!(".{}.tmp-{}", file_name.to_string_lossy(), std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(tmp.display().to_string(), e))?;
        }
        fs::create_dir_all(&tmp).map_err(|e| Error::io(tmp.display().to_string(), e))?;

        let blob_path = tmp.join(BLOB_FILE);
        let blob = File::create(&blob_path).map_err(|e| Error::io(blob_path.display().to_string(), e))?;
        let mut blob = BufWriter::new(blob);
        let mut offset = 0u64;
        let mut tensors = Vec::with_capacity(self.entries.len());
        for (name, tensor) in &self.entries {
            tensors.push(ManifestEntry {
                name: name.clone(),
                shape: tensor.shape().to_vec(),
                file: BLOB_FILE.to_string(),
                offset_bytes: offset,
            });
            for chunk in tensor.data().chunks(1 << 16) {
                blob.write_all(&f32_le_bytes(chunk))
                    .map_err(|e| Error::io(blob_path.display().to_string(), e))?;
            }
            offset += 4 * tensor.len() as u64;
        }
        blob.flush().map_err(|e| Error::io(blob_path.display().to_string(), e))?;
        drop(blob);

        let manifest = Manifest {
            version: FORMAT_VERSION,
            source: self.source.clone(),
            tensors,
        };
        write_json(&tmp.join(MANIFEST_FILE), &manifest)?;
        if let Some(meta) = sidecar {
            write_json(&tmp.join(SIDECAR_FILE), meta)?;
        }

        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        }
        fs::rename(&tmp, dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        Ok(())
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let got = file.read(&mut buf).map_err(|e| Error::io(path.display().to_string(), e))?;
        if got == 0 {
            break;
        }
        hasher.update(&buf[..got]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn read_sidecar(dir: &Path) -> Result<serde_json::Value> {
    let path = dir.join(SIDECAR_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

/// Reads one tensor named by a manifest entry, checking the blob length.
pub fn read_entry(dir: &Path, entry: &ManifestEntry) -> Result<Tensor> {
    let path: PathBuf = dir.join(&entry.file);
    let mut file = File::open(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let available = file
        .metadata()
        .map_err(|e| Error::io(path.display().to_string(), e))?
        .len();
    let count: usize = entry.shape.iter().product();
    let needed = 4 * count as u64;
    if entry.offset_bytes.checked_add(needed).is_none_or(|end| end > available) {
        return Err(Error::TruncatedBlob {
            name: entry.name.clone(),
            file: path,
            offset: entry.offset_bytes,
            needed,
            available,
        });
    }
    file.seek(SeekFrom::Start(entry.offset_bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut bytes = vec![0u8; needed as usize];
    file.read_exact(&mut bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Tensor::new(entry.shape.clone(), data)
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn f32_le_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TensorBundle {
        let mut b = TensorBundle::new(Some("unit test".into()));
        b.insert("a", Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, f32::MIN_POSITIVE, 7.0]).unwrap());
        b.insert("b", Tensor::new(vec![1], vec![42.0]).unwrap());
        b
    }

    #[test]
    fn write_then_read_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bundle");
        let b = sample();
        b.write(&path).unwrap();
        let back = TensorBundle::read(&path).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.content_hash(), b.content_hash());
    }

    #[test]
    fn blob_is_little_endian_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bundle");
        sample().write(&path).unwrap();
        let bytes = fs::read(path.join(BLOB_FILE)).unwrap();
        assert_eq!(bytes.len(), 7 * 4);
        assert_eq!(&bytes[4..8], &(-2.0f32).to_le_bytes());
        let manifest = Manifest::read(&path).unwrap();
        assert_eq!(manifest.entry("b").unwrap().offset_bytes, 24);
    }

    #[test]
    fn empty_dir_is_missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(TensorBundle::read(dir.path()), Err(Error::MissingManifest(_))));
    }

    #[test]
    fn future_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), r#"{"version": 2, "tensors": []}"#).unwrap();
        assert!(matches!(
            TensorBundle::read(dir.path()),
            Err(Error::UnsupportedVersion { found: 2, .. })
        ));
    }

    #[test]
    fn truncated_blob_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bundle");
        sample().write(&path).unwrap();
        let blob = path.join(BLOB_FILE);
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(TensorBundle::read(&path), Err(Error::TruncatedBlob { .. })));
    }

    #[test]
    fn hash_changes_with_payload() {
        let a = sample();
        let mut b = sample();
        b.insert("b", Tensor::new(vec![1], vec![42.5]).unwrap());
        assert_ne!(a.content_hash(), b.content_hash());
    }
}
