//! Dataset manifests: per-label train and test image lists with capture
//! flags.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{read_json, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageFlags {
    #[serde(default)]
    pub cluttered: bool,
    #[serde(default = "yes")]
    pub sighted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flash: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lit: Option<bool>,
}

fn yes() -> bool {
    true
}

impl Default for ImageFlags {
    fn default() -> Self {
        Self {
            cluttered: false,
            sighted: true,
            flash: None,
            lit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub path: String,
    #[serde(default)]
    pub flags: ImageFlags,
}

impl ImageRecord {
    pub fn new(path: impl Into<String>, flags: ImageFlags) -> Self {
        Self {
            path: path.into(),
            flags,
        }
    }

    /// Captured by a sighted person against a plain background.
    pub fn is_clean(&self) -> bool {
        !self.flags.cluttered && self.flags.sighted
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectImages {
    pub train: Vec<ImageRecord>,
    pub test: Vec<ImageRecord>,
}

/// Label order is the order of the file and drives every sampling step.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub objects: IndexMap<String, ObjectImages>,
}

impl DatasetManifest {
    pub fn labels(&self) -> Vec<&str> {
        self.objects.keys().map(String::as_str).collect()
    }

    pub fn num_labels(&self) -> usize {
        self.objects.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() {
            return Err(Error::InvalidConfig("manifest has no objects".into()));
        }
        for (label, o) in &self.objects {
            if o.train.is_empty() {
                return Err(Error::EmptyTrainSet(label.clone()));
            }
            if o.test.is_empty() {
                return Err(Error::InvalidConfig(format!("object `{label}` has no test images")));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: Self = read_json(path.as_ref())?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    /// Test records with the label of their object, in manifest order.
    pub fn test_records(&self) -> impl Iterator<Item = (&str, &ImageRecord)> {
        self.objects
            .iter()
            .flat_map(|(l, o)| o.test.iter().map(move |r| (l.as_str(), r)))
    }
}

/// Keeps only clean training images; test lists are untouched.
pub fn filter_train_images(manifest: &DatasetManifest) -> Result<DatasetManifest> {
    let mut out = manifest.clone();
    for (label, o) in out.objects.iter_mut() {
        o.train.retain(ImageRecord::is_clean);
        if o.train.is_empty() {
            return Err(Error::EmptyTrainSet(label.clone()));
        }
    }
    Ok(out)
}

pub const MOCK_TRAIN_PER_CLASS: usize = 24;
pub const MOCK_TEST_PER_CLASS: usize = 12;

/// Path of a mock render: `mock:<class>:<instance>`.
pub fn mock_path(class: usize, instance: u64) -> String {
    format!("mock:{class}:{instance}")
}

pub fn parse_mock_path(path: &str) -> Result<(usize, u64)> {
    let bad = || Error::format(format!("`{path}` is not a mock image path"));
    let rest = path.strip_prefix("mock:").ok_or_else(bad)?;
    let (c, i) = rest.split_once(':').ok_or_else(bad)?;
    Ok((c.parse().map_err(|_| bad())?, i.parse().map_err(|_| bad())?))
}

/// Manifest over mock renders. Labels are `class00`, `class01`, ... Train
/// image `i` is flagged cluttered when `i % 4 == 3` and blind when
/// `i % 3 == 2`, leaving half of each train list clean.
pub fn mock_manifest(num_classes: usize, train_per_class: usize, test_per_class: usize) -> DatasetManifest {
    let mut objects = IndexMap::with_capacity(num_classes);
    for c in 0..num_classes {
        let train = (0..train_per_class)
            .map(|i| {
                let flags = ImageFlags {
                    cluttered: i % 4 == 3,
                    sighted: i % 3 != 2,
                    ..ImageFlags::default()
                };
                ImageRecord::new(mock_path(c, i as u64), flags)
            })
            .collect();
        let test = (0..test_per_class)
            .map(|j| ImageRecord::new(mock_path(c, (train_per_class + j) as u64), ImageFlags::default()))
            .collect();
        objects.insert(mock_label(c), ObjectImages { train, test });
    }
    DatasetManifest { objects }
}

pub fn mock_label(class: usize) -> String {
    format!("class{class:02}")
}

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

fn collect_images(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_images(&path, out)?;
        } else if path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        {
            out.push(path);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Split {
    Train,
    Test,
}

/// Maps a `<split>/.../<label>/<image>` directory tree onto a manifest.
///
/// Each image's label is its parent directory name. The split comes from a
/// path component named `train`/`training` or `test`/`testing`. Flags are
/// read from lowercase path tokens (split on non-alphanumerics):
/// `wild`/`clutter`/`cluttered` set cluttered, `blind` clears sighted,
/// `flash`/`noflash` and `lit`/`dark` set the optional flags. Labels and
/// records are sorted by path.
pub fn manifest_from_directory(root: impl AsRef<Path>) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let mut files = Vec::new();
    collect_images(root, &mut files)?;
    files.sort();
    let mut objects: IndexMap<String, ObjectImages> = IndexMap::new();
    for file in files {
        let rel = file.strip_prefix(root).unwrap_or(&file);
        let comps: Vec<String> = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().to_ascii_lowercase())
            .collect();
        let split = comps.iter().find_map(|c| match c.as_str() {
            "train" | "training" => Some(Split::Train),
            "test" | "testing" => Some(Split::Test),
            _ => None,
        });
        let Some(split) = split else {
            log::warn!("skipping {}: no train/test directory in its path", rel.display());
            continue;
        };
        let label = match rel.parent().and_then(|p| p.file_name()) {
            Some(l) => l.to_string_lossy().into_owned(),
            None => continue,
        };
        if matches!(
            label.to_ascii_lowercase().as_str(),
            "train" | "training" | "test" | "testing"
        ) {
            log::warn!("skipping {}: image sits directly in a split directory", rel.display());
            continue;
        }
        let mut flags = ImageFlags::default();
        for comp in &comps {
            for tok in comp.split(|ch: char| !ch.is_ascii_alphanumeric()) {
                match tok {
                    "wild" | "clutter" | "cluttered" => flags.cluttered = true,
                    "blind" => flags.sighted = false,
                    "flash" => flags.flash = Some(true),
                    "noflash" => flags.flash = Some(false),
                    "lit" => flags.lit = Some(true),
                    "dark" => flags.lit = Some(false),
                    _ => {}
                }
            }
        }
        let rec = ImageRecord::new(rel.to_string_lossy().into_owned(), flags);
        let entry = objects.entry(label).or_default();
        match split {
            Split::Train => entry.train.push(rec),
            Split::Test => entry.test.push(rec),
        }
    }
    objects.sort_keys();
    let m = DatasetManifest { objects };
    m.validate()?;
    Ok(m)
}
