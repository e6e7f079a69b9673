//! Detection dumps and groundtruth annotations on disk.
//!
//! Both formats are JSON lines, one object per line:
//!
//! ```text
//! {"image_id":"000001","category":"car","bbox":[x1,y1,x2,y2],"score":0.93}
//! {"image_id":"000001","category":"car","bbox":[x1,y1,x2,y2],"ignore":true}
//! ```
//!
//! Scores keep the detector's native scale. Unknown keys are accepted and
//! reported with a warning.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

const DETECTION_KEYS: &[&str] = &["image_id", "category", "bbox", "score"];
const GROUNDTRUTH_KEYS: &[&str] = &["image_id", "category", "bbox", "ignore"];

/// One (image, category) pair; every per-image computation is scoped by it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Scope {
    pub image_id: String,
    pub category: String,
}

impl Scope {
    pub fn new(image_id: impl Into<String>, category: impl Into<String>) -> Self {
        Scope {
            image_id: image_id.into(),
            category: category.into(),
        }
    }
}

/// One scored detector output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub category: String,
    pub bbox: BBox,
    pub score: f64,
}

impl DetectionRecord {
    pub fn new(
        image_id: impl Into<String>,
        category: impl Into<String>,
        bbox: BBox,
        score: f64,
    ) -> Result<Self> {
        let record = DetectionRecord {
            image_id: image_id.into(),
            category: category.into(),
            bbox,
            score,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn scope(&self) -> Scope {
        Scope::new(&self.image_id, &self.category)
    }

    fn validate(&self) -> Result<()> {
        if self.image_id.is_empty() {
            return Err(Error::InvalidArgument("empty image_id".into()));
        }
        if !self.score.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "non-finite score {}",
                self.score
            )));
        }
        Ok(())
    }
}

/// One annotated object. `ignore` marks objects that neither count as
/// targets nor penalize detections that hit them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub image_id: String,
    pub category: String,
    pub bbox: BBox,
    #[serde(default)]
    pub ignore: bool,
}

impl GroundTruthRecord {
    pub fn new(image_id: impl Into<String>, category: impl Into<String>, bbox: BBox) -> Self {
        GroundTruthRecord {
            image_id: image_id.into(),
            category: category.into(),
            bbox,
            ignore: false,
        }
    }

    pub fn ignored(mut self) -> Self {
        self.ignore = true;
        self
    }

    pub fn scope(&self) -> Scope {
        Scope::new(&self.image_id, &self.category)
    }
}

/// All detections of one detector, grouped by scope. Order within a scope
/// is the order in which records were added.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectorDump {
    detector_id: String,
    groups: BTreeMap<Scope, Vec<DetectionRecord>>,
}

impl DetectorDump {
    pub fn new(detector_id: impl Into<String>) -> Self {
        DetectorDump {
            detector_id: detector_id.into(),
            groups: BTreeMap::new(),
        }
    }

    pub fn from_records(
        detector_id: impl Into<String>,
        records: impl IntoIterator<Item = DetectionRecord>,
    ) -> Self {
        let mut dump = DetectorDump::new(detector_id);
        for r in records {
            dump.push(r);
        }
        dump
    }

    pub fn push(&mut self, record: DetectionRecord) {
        self.groups.entry(record.scope()).or_default().push(record);
    }

    pub fn detector_id(&self) -> &str {
        &self.detector_id
    }

    pub fn len(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.values().all(Vec::is_empty)
    }

    /// Detections in one scope, empty when the detector produced none.
    pub fn scope(&self, scope: &Scope) -> &[DetectionRecord] {
        self.groups.get(scope).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn scopes(&self) -> impl Iterator<Item = &Scope> {
        self.groups.keys()
    }

    pub fn groups(&self) -> impl Iterator<Item = (&Scope, &[DetectionRecord])> {
        self.groups.iter().map(|(k, v)| (k, v.as_slice()))
    }

    /// All records, scope by scope in canonical order.
    pub fn records(&self) -> impl Iterator<Item = &DetectionRecord> + Clone {
        self.groups.values().flatten()
    }

    pub fn categories(&self) -> BTreeSet<&str> {
        self.groups.keys().map(|s| s.category.as_str()).collect()
    }

    pub fn images(&self) -> BTreeSet<&str> {
        self.groups.keys().map(|s| s.image_id.as_str()).collect()
    }

    /// Copy restricted to the given images.
    pub fn filter_images(&self, images: &BTreeSet<String>) -> DetectorDump {
        DetectorDump {
            detector_id: self.detector_id.clone(),
            groups: self
                .groups
                .iter()
                .filter(|(k, _)| images.contains(&k.image_id))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Copy keeping only the given category.
    pub fn filter_category(&self, category: &str) -> DetectorDump {
        DetectorDump {
            detector_id: self.detector_id.clone(),
            groups: self
                .groups
                .iter()
                .filter(|(k, _)| k.category == category)
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn with_id(mut self, detector_id: impl Into<String>) -> Self {
        self.detector_id = detector_id.into();
        self
    }
}

fn parse_lines<T: DeserializeOwned>(
    path: &Path,
    reader: impl BufRead,
    known: &[&str],
    mut check: impl FnMut(&T) -> Result<()>,
) -> Result<Vec<T>> {
    let mut out = Vec::new();
    let mut warned = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if let Some(obj) = value.as_object() {
            for key in obj.keys() {
                if !known.contains(&key.as_str()) && warned.insert(key.clone()) {
                    log::warn!(
                        "{}:{}: ignoring unknown key `{}`",
                        path.display(),
                        lineno,
                        key
                    );
                }
            }
        }
        let record: T = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
        check(&record).map_err(|e| parse_err(e.to_string()))?;
        out.push(record);
    }
    Ok(out)
}

/// Parses a detection stream. `NaN`/`Infinity` are not JSON numbers, so a
/// quoted or bare non-finite score fails here with the line number.
pub fn read_detections(
    detector_id: &str,
    path: &Path,
    reader: impl BufRead,
) -> Result<DetectorDump> {
    let records: Vec<DetectionRecord> =
        parse_lines(path, reader, DETECTION_KEYS, DetectionRecord::validate)?;
    Ok(DetectorDump::from_records(detector_id, records))
}

pub fn load_detections(detector_id: &str, path: impl AsRef<Path>) -> Result<DetectorDump> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_detections(detector_id, path, BufReader::new(file))
}

pub fn read_groundtruth(path: &Path, reader: impl BufRead) -> Result<Vec<GroundTruthRecord>> {
    parse_lines(path, reader, GROUNDTRUTH_KEYS, |g: &GroundTruthRecord| {
        if g.image_id.is_empty() {
            Err(Error::InvalidArgument("empty image_id".into()))
        } else {
            Ok(())
        }
    })
}

pub fn load_groundtruth(path: impl AsRef<Path>) -> Result<Vec<GroundTruthRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_groundtruth(path, BufReader::new(file))
}

/// Writes any serializable records as JSON lines.
pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::json(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_detections(path: impl AsRef<Path>, dump: &DetectorDump) -> Result<()> {
    write_jsonl(path, dump.records())
}

pub fn write_groundtruth(path: impl AsRef<Path>, gts: &[GroundTruthRecord]) -> Result<()> {
    write_jsonl(path, gts)
}

/// Distinct categories present in the groundtruth.
pub fn groundtruth_categories(gts: &[GroundTruthRecord]) -> BTreeSet<String> {
    gts.iter().map(|g| g.category.clone()).collect()
}

/// Per-detector summary in a [`RunReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSummary {
    pub detector_id: String,
    pub n_detections: usize,
    pub n_images: usize,
    pub per_category: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub detectors: Vec<DetectorSummary>,
    pub gt_objects: BTreeMap<String, usize>,
    pub gt_images: usize,
    pub warnings: Vec<String>,
}

/// Checks that detector ids are unique and summarizes coverage.
pub fn validate_run(dumps: &[DetectorDump], gts: &[GroundTruthRecord]) -> Result<RunReport> {
    let mut seen = BTreeSet::new();
    for d in dumps {
        if !seen.insert(d.detector_id()) {
            return Err(Error::DuplicateDetector(d.detector_id().to_string()));
        }
    }

    let mut gt_objects: BTreeMap<String, usize> = BTreeMap::new();
    for g in gts {
        *gt_objects.entry(g.category.clone()).or_default() += 1;
    }
    let gt_images = gts
        .iter()
        .map(|g| g.image_id.as_str())
        .collect::<BTreeSet<_>>()
        .len();

    let mut warnings = Vec::new();
    let detectors = dumps
        .iter()
        .map(|d| {
            let mut per_category: BTreeMap<String, usize> = BTreeMap::new();
            for (scope, recs) in d.groups() {
                *per_category.entry(scope.category.clone()).or_default() += recs.len();
            }
            let missing: Vec<&str> = gt_objects
                .keys()
                .filter(|c| per_category.get(*c).copied().unwrap_or(0) == 0)
                .map(String::as_str)
                .collect();
            if !missing.is_empty() {
                let msg = format!(
                    "detector `{}` has no detections for groundtruth categories: {}",
                    d.detector_id(),
                    missing.join(", ")
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
            DetectorSummary {
                detector_id: d.detector_id().to_string(),
                n_detections: d.len(),
                n_images: d.images().len(),
                per_category,
            }
        })
        .collect();

    Ok(RunReport {
        detectors,
        gt_objects,
        gt_images,
        warnings,
    })
}
