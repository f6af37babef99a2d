use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tensor::{self, RecordHeader};
use super::{read_file, IoError};
use crate::embedding::{EmbeddingRecord, EmbeddingStore, Stage};
use crate::probe::{BongardSample, PredictionSet};

/// On-disk description of a dataset. File references are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub dataset_name: String,
    pub dim: usize,
    pub stages: Vec<Stage>,
    /// LSCE files per stage.
    pub embeddings: BTreeMap<Stage, Vec<String>>,
    pub samples: Vec<BongardSample>,
    /// Method name to prediction file.
    #[serde(default)]
    pub predictions: BTreeMap<String, String>,
    /// JSON object mapping sample id to next-token loss.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nt_loss: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_strategy: Option<String>,
}

/// A fully validated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub store: EmbeddingStore,
    pub samples: Vec<BongardSample>,
    pub predictions: BTreeMap<String, PredictionSet>,
    pub nt_loss: Option<BTreeMap<String, f64>>,
}

fn invalid(path: &Path, message: impl Into<String>) -> IoError {
    IoError::InvalidManifest {
        path: path.to_owned(),
        message: message.into(),
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, bytes: &[u8]) -> Result<T, IoError> {
    serde_json::from_slice(bytes).map_err(|e| IoError::Json {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

fn resolve(base: &Path, manifest_path: &Path, reference: &str) -> Result<PathBuf, IoError> {
    let p = base.join(reference);
    if !p.is_file() {
        return Err(IoError::MissingFile {
            path: p,
            referenced_by: manifest_path.to_owned(),
        });
    }
    Ok(p)
}

fn check_structure(m: &Manifest, path: &Path) -> Result<(), IoError> {
    if m.dataset_name.is_empty() {
        return Err(invalid(path, "dataset_name is empty"));
    }
    if m.dim == 0 {
        return Err(invalid(path, "dim must be positive"));
    }
    let stages: BTreeSet<Stage> = m.stages.iter().copied().collect();
    if stages.is_empty() || stages.len() != m.stages.len() {
        return Err(invalid(path, "stages must be a non-empty list without repeats"));
    }
    let with_files: BTreeSet<Stage> = m.embeddings.keys().copied().collect();
    if with_files != stages {
        return Err(invalid(path, "embeddings must list files for exactly the declared stages"));
    }
    if let Some((stage, _)) = m.embeddings.iter().find(|(_, f)| f.is_empty()) {
        return Err(invalid(path, format!("no embedding files for stage {stage}")));
    }
    if m.samples.is_empty() {
        return Err(invalid(path, "no samples"));
    }
    let mut ids = BTreeSet::new();
    for s in &m.samples {
        if !ids.insert(s.sample_id.as_str()) {
            return Err(IoError::DuplicateId {
                path: path.to_owned(),
                kind: "sample",
                id: s.sample_id.clone(),
            });
        }
        if s.positives.is_empty() || s.positives.len() != s.negatives.len() {
            return Err(invalid(
                path,
                format!("sample {} needs equally many positive and negative examples", s.sample_id),
            ));
        }
    }
    Ok(())
}

/// Loads and validates a manifest and everything it references.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset, IoError> {
    let manifest_path = manifest_path.as_ref();
    let manifest: Manifest = parse_json(manifest_path, &read_file(manifest_path)?)?;
    check_structure(&manifest, manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));

    let mut jobs = Vec::new();
    for stage in &manifest.stages {
        for f in &manifest.embeddings[stage] {
            jobs.push((*stage, resolve(base, manifest_path, f)?));
        }
    }
    let parsed: Vec<(PathBuf, Vec<(RecordHeader, EmbeddingRecord)>)> = jobs
        .into_par_iter()
        .map(|(stage, path)| {
            let bytes = read_file(&path)?;
            let records = tensor::read_records(&bytes, stage).map_err(|source| IoError::Parse {
                path: path.clone(),
                source,
            })?;
            Ok((path, records))
        })
        .collect::<Result<_, IoError>>()?;

    let mut store = EmbeddingStore::new();
    for (path, records) in parsed {
        for (header, record) in records {
            if header.dim != manifest.dim {
                return Err(IoError::DimMismatch {
                    path,
                    offset: header.offset,
                    image_id: header.image_id,
                    manifest_dim: manifest.dim,
                    header_dim: header.dim,
                });
            }
            let stage = record.stage();
            if store.insert(record).expect("dimension checked against manifest").is_some() {
                return Err(IoError::DuplicateId {
                    path,
                    kind: "image",
                    id: format!("{}@{stage}", header.image_id),
                });
            }
        }
    }

    for stage in &manifest.stages {
        for s in &manifest.samples {
            if let Some(missing) = s.image_ids().find(|id| !store.contains(*stage, id)) {
                return Err(IoError::UnresolvedReference {
                    sample_id: s.sample_id.clone(),
                    image_id: missing.to_owned(),
                    stage: *stage,
                });
            }
        }
    }

    let sample_ids: BTreeSet<&str> = manifest.samples.iter().map(|s| s.sample_id.as_str()).collect();
    let mut predictions = BTreeMap::new();
    for (method, file) in &manifest.predictions {
        let path = resolve(base, manifest_path, file)?;
        let set: PredictionSet = parse_json(&path, &read_file(&path)?)?;
        if &set.method != method {
            return Err(invalid(
                &path,
                format!("file declares method `{}` but the manifest calls it `{method}`", set.method),
            ));
        }
        let covered: BTreeSet<&str> = set.predictions.keys().map(String::as_str).collect();
        if let Some(id) = sample_ids.symmetric_difference(&covered).next() {
            return Err(invalid(
                &path,
                format!("predictions for `{method}` do not match the samples (first difference: `{id}`)"),
            ));
        }
        predictions.insert(method.clone(), set);
    }

    let nt_loss = match &manifest.nt_loss {
        None => None,
        Some(file) => {
            let path = resolve(base, manifest_path, file)?;
            let losses: BTreeMap<String, f64> = parse_json(&path, &read_file(&path)?)?;
            for (id, v) in &losses {
                if !sample_ids.contains(id.as_str()) {
                    return Err(invalid(&path, format!("loss for unknown sample `{id}`")));
                }
                if !(v.is_finite() && *v >= 0.0) {
                    return Err(invalid(&path, format!("loss for `{id}` must be finite and non-negative")));
                }
            }
            Some(losses)
        }
    };

    Ok(Dataset {
        samples: manifest.samples.clone(),
        manifest,
        store,
        predictions,
        nt_loss,
    })
}

/// What to write alongside the embeddings.
#[derive(Debug, Clone, Default)]
pub struct DatasetContents<'a> {
    pub dataset_name: &'a str,
    pub model: Option<&'a str>,
    pub prompt_strategy: Option<&'a str>,
    pub predictions: Vec<&'a PredictionSet>,
    pub nt_loss: Option<&'a BTreeMap<String, f64>>,
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    fs::write(path, bytes).map_err(|e| IoError::Io {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

pub(crate) fn pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

/// Writes one LSCE file per stage, prediction files and `manifest.json` into
/// `dir`, creating it if needed. Returns the manifest path.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    store: &EmbeddingStore,
    samples: &[BongardSample],
    contents: &DatasetContents<'_>,
) -> Result<PathBuf, IoError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| IoError::Io {
        path: dir.to_owned(),
        message: e.to_string(),
    })?;
    let dim = store.dim().ok_or_else(|| invalid(dir, "no embeddings to write"))?;

    let mut embeddings = BTreeMap::new();
    let stages: Vec<Stage> = store.stages().collect();
    for &stage in &stages {
        let name = format!("{stage}.lsce");
        let path = dir.join(&name);
        let mut buf = Vec::new();
        tensor::write_records(&mut buf, store.records(stage)).map_err(|e| IoError::Io {
            path: path.clone(),
            message: e.to_string(),
        })?;
        write_bytes(&path, &buf)?;
        embeddings.insert(stage, vec![name]);
    }

    let mut predictions = BTreeMap::new();
    let mut used = BTreeSet::new();
    for (i, set) in contents.predictions.iter().enumerate() {
        let mut name = format!("predictions_{}.json", sanitize(&set.method));
        if !used.insert(name.clone()) {
            name = format!("predictions_{}_{i}.json", sanitize(&set.method));
            used.insert(name.clone());
        }
        write_bytes(&dir.join(&name), pretty_json(set).as_bytes())?;
        predictions.insert(set.method.clone(), name);
    }

    let nt_loss = match contents.nt_loss {
        Some(losses) => {
            let name = "nt_loss.json".to_owned();
            write_bytes(&dir.join(&name), pretty_json(losses).as_bytes())?;
            Some(name)
        }
        None => None,
    };

    let manifest = Manifest {
        dataset_name: contents.dataset_name.to_owned(),
        dim,
        stages,
        embeddings,
        samples: samples.to_vec(),
        predictions,
        nt_loss,
        model: contents.model.map(str::to_owned),
        prompt_strategy: contents.prompt_strategy.map(str::to_owned),
    };
    let path = dir.join("manifest.json");
    write_bytes(&path, pretty_json(&manifest).as_bytes())?;
    Ok(path)
}

fn sanitize(method: &str) -> String {
    method
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}
