use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roi::CameraGeometry;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Inlier,
    Outlier,
    Unlabeled,
}

impl Label {
    /// `Some(true)` for outliers, `None` when unlabeled.
    pub fn is_outlier(self) -> Option<bool> {
        match self {
            Label::Inlier => Some(false),
            Label::Outlier => Some(true),
            Label::Unlabeled => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Inlier => "inlier",
            Label::Outlier => "outlier",
            Label::Unlabeled => "unlabeled",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inlier" => Ok(Label::Inlier),
            "outlier" => Ok(Label::Outlier),
            "unlabeled" | "" => Ok(Label::Unlabeled),
            other => Err(Error::invalid(format!(
                "unknown label {other:?} (expected inlier, outlier or unlabeled)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Ingested,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    /// Relative to the manifest's directory.
    pub path: String,
    pub label: Label,
    pub altitude_m: f64,
    pub split: Split,
    /// Ground-truth object box `[top, left, bottom, right]`, inclusive.
    pub bbox: Option<[usize; 4]>,
    pub operator_label: Option<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub version: u32,
    pub source: Source,
    pub seed: u64,
    pub geometry: CameraGeometry,
    /// `[channels, height, width]` of every stored image.
    pub image_shape: [usize; 3],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Line {
    Header(ManifestHeader),
    Image(ImageRecord),
    Skip(SkippedFile),
}

/// Dataset description persisted as newline-delimited JSON: one header line,
/// then one line per image or skipped file.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub images: Vec<ImageRecord>,
    pub skipped: Vec<SkippedFile>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.header.version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported manifest version {}",
                self.header.version
            )));
        }
        let mut seen = HashSet::new();
        for r in &self.images {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate image id {:?}", r.id)));
            }
            if r.split != Split::Test && r.label == Label::Outlier {
                return Err(Error::Manifest(format!(
                    "outlier {:?} placed in the {:?} split",
                    r.id, r.split
                )));
            }
            if !(r.altitude_m > 0.0 && r.altitude_m.is_finite()) {
                return Err(Error::Manifest(format!(
                    "image {:?} has altitude {}",
                    r.id, r.altitude_m
                )));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.images.iter().filter(move |r| r.split == split)
    }

    pub fn find(&self, id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|r| r.id == id)
    }

    pub fn find_mut(&mut self, id: &str) -> Option<&mut ImageRecord> {
        self.images.iter_mut().find(|r| r.id == id)
    }

    pub fn to_ndjson(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let mut line = |l: &Line| -> Result<()> {
            serde_json::to_writer(&mut out, l)?;
            out.push(b'\n');
            Ok(())
        };
        line(&Line::Header(self.header.clone()))?;
        for r in &self.images {
            line(&Line::Image(r.clone()))?;
        }
        for s in &self.skipped {
            line(&Line::Skip(s.clone()))?;
        }
        Ok(out)
    }

    pub fn from_ndjson(reader: impl BufRead) -> Result<Self> {
        let mut header = None;
        let mut images = Vec::new();
        let mut skipped = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line)
                .map_err(|e| Error::Manifest(format!("line {}: {e}", n + 1)))?;
            match parsed {
                Line::Header(h) if header.is_none() && n == 0 => header = Some(h),
                Line::Header(_) => {
                    return Err(Error::Manifest(format!(
                        "line {}: unexpected header",
                        n + 1
                    )))
                }
                Line::Image(r) => images.push(r),
                Line::Skip(s) => skipped.push(s),
            }
        }
        let header = header.ok_or_else(|| Error::Manifest("missing header line".into()))?;
        let m = Self {
            header,
            images,
            skipped,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_ndjson(BufReader::new(fs::File::open(path)?))
    }

    /// Writes through a temporary file and renames, so readers never see a
    /// partial manifest.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("ndjson.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_ndjson()?)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

/// Absolute path of a record's image given the manifest location.
pub fn resolve(manifest_path: &Path, record: &ImageRecord) -> PathBuf {
    manifest_path
        .parent()
        .unwrap_or(Path::new("."))
        .join(&record.path)
}
