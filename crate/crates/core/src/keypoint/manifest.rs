use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::KeypointError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub label: String,
}

/// Labelled list of sequence files. Class order defines label indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub seed: u64,
    pub sequences: Vec<ManifestEntry>,
    /// Directory relative paths resolve against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(classes: Vec<String>, seed: u64, sequences: Vec<ManifestEntry>) -> Self {
        Self {
            classes,
            seed,
            sequences,
            base_dir: PathBuf::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KeypointError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| KeypointError::Parse(format!("manifest: {e}")))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), KeypointError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    /// Label index of every entry, in entry order.
    pub fn label_indices(&self) -> Result<Vec<usize>, KeypointError> {
        self.sequences
            .iter()
            .map(|e| {
                self.label_index(&e.label)
                    .ok_or_else(|| KeypointError::Label(e.label.clone()))
            })
            .collect()
    }

    /// Copy keeping only the entries at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            classes: self.classes.clone(),
            seed: self.seed,
            sequences: indices.iter().map(|&i| self.sequences[i].clone()).collect(),
            base_dir: self.base_dir.clone(),
        }
    }
}

/// Checks the manifest invariants and returns the per-class sample counts
/// in class order.
pub fn validate_manifest(manifest: &DatasetManifest) -> Result<Vec<(String, usize)>, KeypointError> {
    if manifest.classes.len() < 2 {
        return Err(KeypointError::TooFewClasses(manifest.classes.len()));
    }
    let mut seen_classes = HashSet::new();
    for c in &manifest.classes {
        if !seen_classes.insert(c.as_str()) {
            return Err(KeypointError::Duplicate(format!("class {c}")));
        }
    }
    let mut counts = vec![0usize; manifest.classes.len()];
    let mut paths = HashSet::new();
    for e in &manifest.sequences {
        let idx = manifest
            .label_index(&e.label)
            .ok_or_else(|| KeypointError::Label(e.label.clone()))?;
        if !paths.insert(e.path.as_str()) {
            return Err(KeypointError::Duplicate(e.path.clone()));
        }
        counts[idx] += 1;
    }
    Ok(manifest.classes.iter().cloned().zip(counts).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(classes: usize, per: usize) -> DatasetManifest {
        let classes: Vec<String> = (0..classes).map(|c| format!("c{}", c + 1)).collect();
        let mut seqs = Vec::new();
        for c in &classes {
            for i in 0..per {
                seqs.push(ManifestEntry {
                    path: format!("{c}_{i}.kpjl"),
                    label: c.clone(),
                });
            }
        }
        DatasetManifest::new(classes, 1, seqs)
    }

    #[test]
    fn counts_per_class() {
        let counts = validate_manifest(&manifest(2, 10)).unwrap();
        assert_eq!(counts, vec![("c1".to_string(), 10), ("c2".to_string(), 10)]);
        let counts = validate_manifest(&manifest(20, 5)).unwrap();
        assert_eq!(counts.len(), 20);
        assert_eq!(counts.iter().map(|c| c.1).sum::<usize>(), 100);
    }

    #[test]
    fn rejects_bad_manifests() {
        let mut m = manifest(2, 2);
        m.sequences[0].label = "zz".into();
        assert!(matches!(validate_manifest(&m), Err(KeypointError::Label(l)) if l == "zz"));
        let mut m = manifest(2, 2);
        m.sequences[1].path = m.sequences[0].path.clone();
        assert!(matches!(validate_manifest(&m), Err(KeypointError::Duplicate(_))));
        assert!(matches!(
            validate_manifest(&manifest(1, 3)),
            Err(KeypointError::TooFewClasses(1))
        ));
    }

    #[test]
    fn json_shape() {
        let m = manifest(2, 1);
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        assert!(v["classes"].is_array());
        assert_eq!(v["seed"], 1);
        assert_eq!(v["sequences"][0]["path"], "c1_0.kpjl");
        assert_eq!(v["sequences"][0]["label"], "c1");
        assert!(v.get("base_dir").is_none());
    }
}
