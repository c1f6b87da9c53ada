//! In-memory dataset: all patches of a manifest loaded and grouped by split.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::manifest::{
    load_manifest, save_manifest, DatasetManifest, ManifestEntry, ManifestError, Split,
};
use crate::patch::{Patch, QualityClass};

/// All patches of one dataset, eagerly loaded. Patch counts in this toolkit
/// are desk-scale, so holding everything in memory keeps training simple
/// and deterministic.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub train: Vec<Patch>,
    pub val: Vec<Patch>,
    pub test: Vec<Patch>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Patch] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn push(&mut self, split: Split, patch: Patch) {
        match split {
            Split::Train => self.train.push(patch),
            Split::Val => self.val.push(patch),
            Split::Test => self.test.push(patch),
        }
    }

    /// Groups a split's patches by domain tag, in sorted tag order.
    pub fn sets_of(&self, split: Split) -> BTreeMap<&str, Vec<&Patch>> {
        let mut out: BTreeMap<&str, Vec<&Patch>> = BTreeMap::new();
        for p in self.split(split) {
            out.entry(p.domain_tag.as_str()).or_default().push(p);
        }
        out
    }

    /// Domain tags considered in-domain for evaluation: tags that appear in
    /// the train split with high-quality labels. Test sets from any other
    /// tag are treated as out-of-domain.
    pub fn in_domain_tags(&self) -> BTreeSet<String> {
        self.train
            .iter()
            .filter(|p| p.quality == QualityClass::High)
            .map(|p| p.domain_tag.clone())
            .collect()
    }
}

/// Writes every patch to `dir` as container files plus a manifest describing
/// them. File names are deterministic (`{split}-{index:04}-{tag}.wkh1`), so
/// saving the same dataset twice produces identical directories.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<DatasetManifest, ManifestError> {
    std::fs::create_dir_all(dir).map_err(|source| ManifestError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut entries = Vec::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        for (i, patch) in dataset.split(split).iter().enumerate() {
            let path = format!("{split}-{i:04}-{}.wkh1", patch.domain_tag);
            crate::container::save_patch(patch, &dir.join(&path)).map_err(|source| {
                ManifestError::BadPatch {
                    path: path.clone(),
                    source,
                }
            })?;
            entries.push(ManifestEntry {
                path,
                quality: patch.quality,
                domain_tag: patch.domain_tag.clone(),
                split,
            });
        }
    }
    let manifest = DatasetManifest::new(entries);
    save_manifest(&manifest, dir)?;
    Ok(manifest)
}

/// Loads every patch referenced by the manifest in `dir`.
pub fn load_dataset(dir: &Path) -> Result<Dataset, ManifestError> {
    let manifest = load_manifest(dir)?;
    let mut out = Dataset::default();
    for entry in &manifest.entries {
        let patch = crate::container::load_patch(&dir.join(&entry.path)).map_err(|source| {
            ManifestError::BadPatch {
                path: entry.path.clone(),
                source,
            }
        })?;
        out.push(entry.split, patch);
    }
    Ok(out)
}
