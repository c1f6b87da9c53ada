//! Dataset manifest: a JSON index of patch files with their split
//! assignment, quality class, and domain tag.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{load_patch, ContainerError};
use crate::patch::QualityClass;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Path of the patch file, relative to the manifest's directory.
    pub path: String,
    pub quality: QualityClass,
    pub domain_tag: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed manifest json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported manifest version {0}")]
    UnsupportedVersion(u32),
    #[error("duplicate patch path {0}")]
    DuplicatePath(String),
    #[error("entry {path}: {reason}")]
    EntryMismatch { path: String, reason: String },
    #[error("entry {path}: {source}")]
    BadPatch {
        path: String,
        source: ContainerError,
    },
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        DatasetManifest {
            format_version: MANIFEST_VERSION,
            entries,
        }
    }
}

pub fn save_manifest(manifest: &DatasetManifest, dir: &Path) -> Result<(), ManifestError> {
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(manifest)?;
    std::fs::write(&path, json).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest, ManifestError> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = std::fs::read(&path).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let manifest: DatasetManifest = serde_json::from_slice(&bytes)?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(ManifestError::UnsupportedVersion(manifest.format_version));
    }
    Ok(manifest)
}

/// Verifies that every manifest entry names a unique, loadable patch file
/// whose stored quality and domain tag agree with the manifest.
pub fn validate_dataset(dir: &Path, manifest: &DatasetManifest) -> Result<(), ManifestError> {
    let mut seen = BTreeSet::new();
    for entry in &manifest.entries {
        if !seen.insert(entry.path.as_str()) {
            return Err(ManifestError::DuplicatePath(entry.path.clone()));
        }
        let patch =
            load_patch(&dir.join(&entry.path)).map_err(|source| ManifestError::BadPatch {
                path: entry.path.clone(),
                source,
            })?;
        if patch.quality != entry.quality {
            return Err(ManifestError::EntryMismatch {
                path: entry.path.clone(),
                reason: format!(
                    "manifest says quality {} but file stores {}",
                    entry.quality, patch.quality
                ),
            });
        }
        if patch.domain_tag != entry.domain_tag {
            return Err(ManifestError::EntryMismatch {
                path: entry.path.clone(),
                reason: format!(
                    "manifest says domain {} but file stores {}",
                    entry.domain_tag, patch.domain_tag
                ),
            });
        }
    }
    Ok(())
}
