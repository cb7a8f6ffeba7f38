use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::image::{BinaryMask, Image};
use super::io::{self, GrayConversion};
use crate::error::{Result, SpeError};

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPair {
    pub id: String,
    pub image: Image,
    pub label: BinaryMask,
}

impl LabeledPair {
    pub fn new(id: impl Into<String>, image: Image, label: BinaryMask) -> Result<Self> {
        let id = id.into();
        if image.shape() != label.shape() {
            return Err(SpeError::validation(format!(
                "pair {id}: image is {:?} but label is {:?}",
                image.shape(),
                label.shape()
            )));
        }
        Ok(Self { id, image, label })
    }
}

/// Member of the extra-test cohort; the label is absent for unlabeled data.
#[derive(Clone, Debug, PartialEq)]
pub struct CohortImage {
    pub id: String,
    pub image: Image,
    pub label: Option<BinaryMask>,
}

impl From<LabeledPair> for CohortImage {
    fn from(p: LabeledPair) -> Self {
        CohortImage {
            id: p.id,
            image: p.image,
            label: Some(p.label),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<LabeledPair>,
    pub validation: Vec<LabeledPair>,
    pub test: Vec<LabeledPair>,
    pub extra_test: Vec<CohortImage>,
}

impl DatasetSplit {
    pub fn sizes(&self) -> (usize, usize, usize, usize) {
        (
            self.train.len(),
            self.validation.len(),
            self.test.len(),
            self.extra_test.len(),
        )
    }

    /// Ids must be unique across all four partitions.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let ids = self
            .train
            .iter()
            .chain(&self.validation)
            .chain(&self.test)
            .map(|p| &p.id)
            .chain(self.extra_test.iter().map(|c| &c.id));
        for id in ids {
            if !seen.insert(id.as_str()) {
                return Err(SpeError::validation(format!("duplicate pair id {id}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_path: Option<PathBuf>,
}

/// On-disk split listing; paths are relative to the dataset root.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub train: Vec<ManifestEntry>,
    #[serde(default)]
    pub validation: Vec<ManifestEntry>,
    #[serde(default)]
    pub test: Vec<ManifestEntry>,
    #[serde(default)]
    pub extra_test: Vec<ManifestEntry>,
}

/// Where the manifest lives under the root and how to read its rasters.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetLayout {
    pub manifest: PathBuf,
    pub gray: GrayConversion,
}

impl Default for DatasetLayout {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("manifest.json"),
            gray: GrayConversion::Luma,
        }
    }
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| SpeError::ingestion(path, e))?;
        serde_json::from_str(&text).map_err(|e| SpeError::Parse {
            what: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

pub fn load_dataset(root: &Path, layout: &DatasetLayout) -> Result<DatasetSplit> {
    let manifest = Manifest::read(&root.join(&layout.manifest))?;
    let labeled = |entries: &[ManifestEntry]| -> Result<Vec<LabeledPair>> {
        entries
            .par_iter()
            .map(|e| load_labeled(root, e, layout.gray))
            .collect()
    };
    let split = DatasetSplit {
        train: labeled(&manifest.train)?,
        validation: labeled(&manifest.validation)?,
        test: labeled(&manifest.test)?,
        extra_test: manifest
            .extra_test
            .par_iter()
            .map(|e| load_cohort(root, e, layout.gray))
            .collect::<Result<_>>()?,
    };
    split.validate()?;
    Ok(split)
}

fn load_cohort(root: &Path, entry: &ManifestEntry, gray: GrayConversion) -> Result<CohortImage> {
    let image = io::read_image(&root.join(&entry.image_path), gray)?;
    let label = match &entry.label_path {
        Some(p) => {
            let label = io::read_mask(&root.join(p))?;
            Some(LabeledPair::new(entry.id.clone(), image.clone(), label)?.label)
        }
        None => None,
    };
    Ok(CohortImage {
        id: entry.id.clone(),
        image,
        label,
    })
}

fn load_labeled(root: &Path, entry: &ManifestEntry, gray: GrayConversion) -> Result<LabeledPair> {
    let label_path = entry.label_path.as_ref().ok_or_else(|| {
        SpeError::validation(format!("pair {} has no label_path", entry.id))
    })?;
    let image = io::read_image(&root.join(&entry.image_path), gray)?;
    let label = io::read_mask(&root.join(label_path))?;
    LabeledPair::new(entry.id.clone(), image, label)
}

/// Writes every pair as `images/<id>.png` + `labels/<id>.png` and a matching manifest.
pub fn write_dataset(root: &Path, split: &DatasetSplit) -> Result<Manifest> {
    let write_pair = |id: &str, image: &Image, label: Option<&BinaryMask>| -> Result<ManifestEntry> {
        let image_path = PathBuf::from("images").join(format!("{id}.png"));
        io::write_image(&root.join(&image_path), image)?;
        let label_path = match label {
            Some(l) => {
                let p = PathBuf::from("labels").join(format!("{id}.png"));
                io::write_mask(&root.join(&p), l)?;
                Some(p)
            }
            None => None,
        };
        Ok(ManifestEntry {
            id: id.to_string(),
            image_path,
            label_path,
        })
    };
    let labeled = |pairs: &[LabeledPair]| -> Result<Vec<ManifestEntry>> {
        pairs
            .iter()
            .map(|p| write_pair(&p.id, &p.image, Some(&p.label)))
            .collect()
    };
    let manifest = Manifest {
        train: labeled(&split.train)?,
        validation: labeled(&split.validation)?,
        test: labeled(&split.test)?,
        extra_test: split
            .extra_test
            .iter()
            .map(|c| write_pair(&c.id, &c.image, c.label.as_ref()))
            .collect::<Result<_>>()?,
    };
    manifest.write(&root.join("manifest.json"))?;
    Ok(manifest)
}
