//! Synthetic groundtruth and detector dumps with controllable quality.
//!
//! True detections are jittered copies of groundtruth boxes; false
//! positives are uniform random boxes that never reach IoU 0.5 with a
//! same-category object. Scores are Gaussian per class.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    write_detections, write_groundtruth, DetectionRecord, DetectorDump, GroundTruthRecord,
};
use crate::error::{Error, Result};
use crate::geometry::BBox;

/// False positives must stay below this IoU with every same-category object.
const FP_MAX_IOU: f64 = 0.5;
const FP_RESAMPLE_LIMIT: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDetectorProfile {
    pub id: String,
    /// Probability that a groundtruth object is detected.
    pub recall_rate: f64,
    /// Per-corner localization noise in pixels.
    pub loc_sigma: f64,
    /// Mean false positives per image (Poisson).
    pub fp_per_image: f64,
    pub tp_score_mean: f64,
    pub fp_score_mean: f64,
    pub score_sigma: f64,
}

impl SynthDetectorProfile {
    fn validate(&self) -> Result<()> {
        let bad = |what: &str| {
            Err(Error::InvalidArgument(format!(
                "detector profile `{}`: {what}",
                self.id
            )))
        };
        if self.id.is_empty() {
            return bad("empty id");
        }
        if !(0.0..=1.0).contains(&self.recall_rate) {
            return bad("recall_rate must lie in [0, 1]");
        }
        if !(self.loc_sigma >= 0.0 && self.score_sigma >= 0.0) {
            return bad("sigmas must be non-negative");
        }
        if !(self.fp_per_image >= 0.0 && self.fp_per_image.is_finite()) {
            return bad("fp_per_image must be non-negative");
        }
        if !(self.tp_score_mean.is_finite() && self.fp_score_mean.is_finite()) {
            return bad("score means must be finite");
        }
        Ok(())
    }
}

/// Number of objects placed in each image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectCount {
    Fixed { count: usize },
    Uniform { min: usize, max: usize },
    Poisson { mean: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthWorldConfig {
    pub n_images: usize,
    pub objects_per_image: ObjectCount,
    #[serde(default = "default_width")]
    pub image_width: f64,
    #[serde(default = "default_height")]
    pub image_height: f64,
    #[serde(default = "default_min_size")]
    pub min_box_size: f64,
    #[serde(default = "default_max_size")]
    pub max_box_size: f64,
    pub categories: Vec<String>,
    pub detectors: Vec<SynthDetectorProfile>,
    pub seed: u64,
}

fn default_width() -> f64 {
    640.0
}
fn default_height() -> f64 {
    480.0
}
fn default_min_size() -> f64 {
    32.0
}
fn default_max_size() -> f64 {
    128.0
}

impl SynthWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.image_width > 0.0 && self.image_height > 0.0)
            || !self.image_width.is_finite()
            || !self.image_height.is_finite()
        {
            return Err(Error::InvalidArgument(format!(
                "invalid image size {}x{}",
                self.image_width, self.image_height
            )));
        }
        if !(self.min_box_size > 0.0 && self.min_box_size <= self.max_box_size)
            || self.max_box_size > self.image_width.min(self.image_height)
        {
            return Err(Error::InvalidArgument(format!(
                "box sizes [{}, {}] do not fit a {}x{} image",
                self.min_box_size, self.max_box_size, self.image_width, self.image_height
            )));
        }
        if self.categories.is_empty() {
            return Err(Error::InvalidArgument("no categories".into()));
        }
        match self.objects_per_image {
            ObjectCount::Uniform { min, max } if min > max => {
                return Err(Error::InvalidArgument(format!(
                    "objects_per_image range [{min}, {max}] is empty"
                )))
            }
            ObjectCount::Poisson { mean } if !(mean >= 0.0 && mean.is_finite()) => {
                return Err(Error::InvalidArgument(format!(
                    "objects_per_image mean {mean} is invalid"
                )))
            }
            _ => {}
        }
        let mut ids = BTreeSet::new();
        for d in &self.detectors {
            d.validate()?;
            if !ids.insert(d.id.as_str()) {
                return Err(Error::DuplicateDetector(d.id.clone()));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthWorld {
    pub groundtruth: Vec<GroundTruthRecord>,
    pub dumps: Vec<DetectorDump>,
}

impl SynthWorld {
    /// Writes `gt.jsonl` and one `<detector>.jsonl` per detector into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        write_groundtruth(dir.join("gt.jsonl"), &self.groundtruth)?;
        for d in &self.dumps {
            write_detections(dir.join(format!("{}.jsonl", d.detector_id())), d)?;
        }
        Ok(())
    }
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map_or(0, |p| p.sample(rng) as usize)
}

fn gaussian(rng: &mut ChaCha8Rng, mean: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return mean;
    }
    Normal::new(mean, sigma).map_or(mean, |n| n.sample(rng))
}

fn random_box(rng: &mut ChaCha8Rng, cfg: &SynthWorldConfig) -> BBox {
    let w = rng.random_range(cfg.min_box_size..=cfg.max_box_size);
    let h = rng.random_range(cfg.min_box_size..=cfg.max_box_size);
    let x = rng.random_range(0.0..=cfg.image_width - w);
    let y = rng.random_range(0.0..=cfg.image_height - h);
    BBox::new(x, y, x + w, y + h).expect("box inside image")
}

fn jitter(rng: &mut ChaCha8Rng, b: &BBox, sigma: f64, cfg: &SynthWorldConfig) -> BBox {
    let c = b.to_array().map(|v| gaussian(rng, v, sigma));
    let clip_x = |v: f64| v.clamp(0.0, cfg.image_width);
    let clip_y = |v: f64| v.clamp(0.0, cfg.image_height);
    let (x1, x2) = (clip_x(c[0].min(c[2])), clip_x(c[0].max(c[2])));
    let (y1, y2) = (clip_y(c[1].min(c[3])), clip_y(c[1].max(c[3])));
    BBox::new(x1, y1, x2, y2).expect("ordered, clipped corners")
}

/// Generates a world. The same config always produces the same output.
pub fn generate_world(cfg: &SynthWorldConfig) -> Result<SynthWorld> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let width = cfg.n_images.max(1).to_string().len();
    let mut groundtruth = Vec::new();
    let mut dumps: Vec<DetectorDump> = cfg
        .detectors
        .iter()
        .map(|d| DetectorDump::new(&d.id))
        .collect();

    for img in 0..cfg.n_images {
        let image_id = format!("img{img:0width$}");
        let n_obj = match cfg.objects_per_image {
            ObjectCount::Fixed { count } => count,
            ObjectCount::Uniform { min, max } => rng.random_range(min..=max),
            ObjectCount::Poisson { mean } => poisson(&mut rng, mean),
        };
        let objects: Vec<GroundTruthRecord> = (0..n_obj)
            .map(|_| {
                let cat = &cfg.categories[rng.random_range(0..cfg.categories.len())];
                GroundTruthRecord::new(&image_id, cat, random_box(&mut rng, cfg))
            })
            .collect();

        for (profile, dump) in cfg.detectors.iter().zip(dumps.iter_mut()) {
            for obj in &objects {
                if rng.random_bool(profile.recall_rate) {
                    let bbox = jitter(&mut rng, &obj.bbox, profile.loc_sigma, cfg);
                    let score = gaussian(&mut rng, profile.tp_score_mean, profile.score_sigma);
                    dump.push(DetectionRecord::new(&image_id, &obj.category, bbox, score)?);
                }
            }
            for _ in 0..poisson(&mut rng, profile.fp_per_image) {
                let cat = &cfg.categories[rng.random_range(0..cfg.categories.len())];
                let mut bbox = random_box(&mut rng, cfg);
                for _ in 0..FP_RESAMPLE_LIMIT {
                    let hits = objects
                        .iter()
                        .any(|o| &o.category == cat && o.bbox.iou(&bbox) >= FP_MAX_IOU);
                    if !hits {
                        break;
                    }
                    bbox = random_box(&mut rng, cfg);
                }
                let score = gaussian(&mut rng, profile.fp_score_mean, profile.score_sigma);
                dump.push(DetectionRecord::new(&image_id, cat, bbox, score)?);
            }
        }
        groundtruth.extend(objects);
    }
    Ok(SynthWorld { groundtruth, dumps })
}

fn benchmark_profile(
    id: &str,
    recall_rate: f64,
    loc_sigma: f64,
    fp_per_image: f64,
    tp_score_mean: f64,
) -> SynthDetectorProfile {
    SynthDetectorProfile {
        id: id.into(),
        recall_rate,
        loc_sigma,
        fp_per_image,
        tp_score_mean,
        fp_score_mean: 0.0,
        score_sigma: 1.0,
    }
}

/// Four detectors in decreasing quality: strong, medium, weak with many
/// false positives, and a second weak one.
pub fn benchmark_profiles() -> Vec<SynthDetectorProfile> {
    vec![
        benchmark_profile("strong", 0.98, 6.0, 1.0, 2.5),
        benchmark_profile("medium", 0.98, 8.0, 2.0, 1.8),
        benchmark_profile("weak", 0.98, 10.0, 8.0, 1.2),
        benchmark_profile("weak2", 0.98, 10.0, 6.0, 1.0),
    ]
}

/// A 500-image, two-category world with the first `n_detectors`
/// benchmark profiles.
pub fn benchmark_config(n_detectors: usize, seed: u64) -> SynthWorldConfig {
    SynthWorldConfig {
        n_images: 500,
        objects_per_image: ObjectCount::Uniform { min: 1, max: 4 },
        image_width: default_width(),
        image_height: default_height(),
        min_box_size: default_min_size(),
        max_box_size: default_max_size(),
        categories: vec!["car".into(), "person".into()],
        detectors: benchmark_profiles().into_iter().take(n_detectors).collect(),
        seed,
    }
}
