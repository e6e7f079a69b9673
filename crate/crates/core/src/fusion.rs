//! Test-time fusion: detection clustering, Dempster combination, fused
//! scoring, box refinement and non-maximum suppression.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::confidence::{ConfidenceModel, MassFunction, Observation, StaticAssignment};
use crate::dataset::{DetectionRecord, DetectorDump, Scope};
use crate::error::{check_ratio, Error, Result};
use crate::evaluation::descending_order;
use crate::geometry::BBox;

const CONFLICT_EPS: f64 = 1e-12;

/// Dempster's rule on the frame {T, ¬T} with `I = {T, ¬T}`.
pub fn combine_two(a: &MassFunction, b: &MassFunction) -> Result<MassFunction> {
    let (at, af, ai) = (a.target(), a.non_target(), a.uncertain());
    let (bt, bf, bi) = (b.target(), b.non_target(), b.uncertain());
    let t = at * bt + at * bi + ai * bt;
    let f = af * bf + af * bi + ai * bf;
    let i = ai * bi;
    let normalizer = t + f + i;
    if normalizer < CONFLICT_EPS {
        return Err(Error::TotalConflict { normalizer });
    }
    MassFunction::from_weights(t, f, i)
}

/// Left fold of [`combine_two`] over `masses`.
pub fn combine_all(masses: &[MassFunction]) -> Result<MassFunction> {
    let (first, rest) = masses
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("nothing to combine".into()))?;
    rest.iter().try_fold(*first, |acc, m| combine_two(&acc, m))
}

/// One anchor detection together with the best overlapping detection of
/// every other detector. Slots follow the order of the input dumps.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionCluster {
    pub scope: Scope,
    pub anchor_slot: usize,
    /// Position of the anchor within its detector's detections for this scope.
    pub anchor_index: usize,
    pub slots: Vec<Option<DetectionRecord>>,
}

impl DetectionCluster {
    pub fn anchor(&self) -> &DetectionRecord {
        self.slots[self.anchor_slot]
            .as_ref()
            .expect("anchor slot is always occupied")
    }

    pub fn observations(&self) -> impl Iterator<Item = Observation> + '_ {
        self.slots
            .iter()
            .map(|s| s.as_ref().map(|d| d.score).into())
    }

    pub fn present(&self) -> impl Iterator<Item = (usize, &DetectionRecord)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(k, s)| s.as_ref().map(|d| (k, d)))
    }
}

/// One cluster per detection in `scope`. Each other detector contributes its
/// highest-scoring detection with IoU above `cluster_iou` against the anchor
/// (first in input order on ties), or nothing.
pub fn cluster_detections(
    dumps: &[DetectorDump],
    scope: &Scope,
    cluster_iou: f64,
) -> Vec<DetectionCluster> {
    let per_detector: Vec<&[DetectionRecord]> = dumps.iter().map(|d| d.scope(scope)).collect();
    let mut clusters = Vec::new();
    for (anchor_slot, anchors) in per_detector.iter().enumerate() {
        for (anchor_index, anchor) in anchors.iter().enumerate() {
            let slots = per_detector
                .iter()
                .enumerate()
                .map(|(k, dets)| {
                    if k == anchor_slot {
                        return Some(anchor.clone());
                    }
                    let mut best: Option<&DetectionRecord> = None;
                    for d in dets.iter() {
                        if d.bbox.iou(&anchor.bbox) > cluster_iou
                            && best.is_none_or(|b| d.score > b.score)
                        {
                            best = Some(d);
                        }
                    }
                    best.cloned()
                })
                .collect();
            clusters.push(DetectionCluster {
                scope: scope.clone(),
                anchor_slot,
                anchor_index,
                slots,
            });
        }
    }
    clusters
}

/// Precision-weighted mean of the present boxes. `models` is slot-aligned;
/// a present slot without a model gets weight 0. Falls back to the anchor
/// box when every weight is 0.
pub fn refine_bbox(cluster: &DetectionCluster, models: &[Option<&ConfidenceModel>]) -> BBox {
    let mut acc = [0.0f64; 4];
    let mut total = 0.0;
    for (k, det) in cluster.present() {
        let w = models
            .get(k)
            .copied()
            .flatten()
            .map_or(0.0, |m| m.precision(det.score).max(0.0));
        if w == 0.0 {
            continue;
        }
        for (a, c) in acc.iter_mut().zip(det.bbox.to_array()) {
            *a += w * c;
        }
        total += w;
    }
    if total <= 0.0 {
        return cluster.anchor().bbox;
    }
    let [x1, y1, x2, y2] = acc.map(|a| a / total);
    // a weighted mean of valid boxes is valid up to rounding
    BBox::new(x1, y1, x2.max(x1), y2.max(y1)).unwrap_or(cluster.anchor().bbox)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedDetection {
    pub image_id: String,
    pub category: String,
    pub bbox: BBox,
    pub score: f64,
    /// Combined mass for belief-based fusers; `score = m(T) - m(¬T)`.
    pub mass: Option<MassFunction>,
}

impl FusedDetection {
    /// Same JSON-lines shape as any detector output.
    pub fn to_record(&self) -> DetectionRecord {
        DetectionRecord {
            image_id: self.image_id.clone(),
            category: self.category.clone(),
            bbox: self.bbox,
            score: self.score,
        }
    }
}

/// Greedy suppression by descending score (input order on ties). Output is
/// sorted by descending score.
pub fn nms(fused: Vec<FusedDetection>, iou_thresh: f64) -> Vec<FusedDetection> {
    let order = descending_order(fused.iter().map(|f| f.score));
    let mut slots: Vec<Option<FusedDetection>> = fused.into_iter().map(Some).collect();
    let mut kept: Vec<FusedDetection> = Vec::new();
    for i in order {
        let cand = slots[i].take().expect("each index visited once");
        if kept.iter().all(|k| k.bbox.iou(&cand.bbox) <= iou_thresh) {
            kept.push(cand);
        }
    }
    kept
}

/// Overlap thresholds used at test time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub cluster_iou: f64,
    pub nms_iou: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams {
            cluster_iou: 0.3,
            nms_iou: 0.3,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        check_ratio("cluster IoU threshold", self.cluster_iou)?;
        check_ratio("NMS IoU threshold", self.nms_iou)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCluster {
    pub score: f64,
    pub bbox: BBox,
    pub mass: Option<MassFunction>,
}

/// Anything that turns a detection cluster into one fused score.
pub trait ClusterScorer {
    fn score(&self, cluster: &DetectionCluster) -> Result<ScoredCluster>;
}

/// Scopes of the given categories covered by at least one dump.
pub fn fusion_scopes(dumps: &[DetectorDump], categories: &BTreeSet<String>) -> BTreeSet<Scope> {
    dumps
        .iter()
        .flat_map(|d| d.scopes())
        .filter(|s| categories.contains(&s.category))
        .cloned()
        .collect()
}

pub fn fuse_scope<S: ClusterScorer + ?Sized>(
    dumps: &[DetectorDump],
    scope: &Scope,
    scorer: &S,
    params: &FusionParams,
) -> Result<Vec<FusedDetection>> {
    let fused = cluster_detections(dumps, scope, params.cluster_iou)
        .iter()
        .map(|c| {
            let s = scorer.score(c)?;
            Ok(FusedDetection {
                image_id: scope.image_id.clone(),
                category: scope.category.clone(),
                bbox: s.bbox,
                score: s.score,
                mass: s.mass,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(nms(fused, params.nms_iou))
}

/// Runs `scorer` over every scope. Output is ordered by image, category and
/// then descending score.
pub fn fuse_with<S: ClusterScorer + ?Sized>(
    dumps: &[DetectorDump],
    scorer: &S,
    categories: &BTreeSet<String>,
    params: &FusionParams,
) -> Result<BTreeMap<Scope, Vec<FusedDetection>>> {
    params.validate()?;
    fusion_scopes(dumps, categories)
        .into_iter()
        .map(|scope| {
            let fused = fuse_scope(dumps, &scope, scorer, params)?;
            Ok((scope, fused))
        })
        .collect()
}

/// Confidence models keyed by detector and category.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfidenceModelSet {
    models: BTreeMap<(String, String), ConfidenceModel>,
}

impl ConfidenceModelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, model: ConfidenceModel) {
        self.models
            .insert((model.detector_id.clone(), model.category.clone()), model);
    }

    pub fn get(&self, detector: &str, category: &str) -> Option<&ConfidenceModel> {
        self.models
            .get(&(detector.to_string(), category.to_string()))
    }

    pub fn require(&self, detector: &str, category: &str) -> Result<&ConfidenceModel> {
        self.get(detector, category)
            .ok_or_else(|| Error::MissingModel {
                detector: detector.to_string(),
                category: category.to_string(),
            })
    }

    pub fn iter(&self) -> impl Iterator<Item = &ConfidenceModel> {
        self.models.values()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Slot-aligned models for the present detections of `cluster`.
    fn for_cluster(
        &self,
        detector_ids: &[String],
        cluster: &DetectionCluster,
    ) -> Result<Vec<Option<&ConfidenceModel>>> {
        cluster
            .slots
            .iter()
            .zip(detector_ids)
            .map(|(slot, id)| match slot {
                Some(_) => self.require(id, &cluster.scope.category).map(Some),
                None => Ok(None),
            })
            .collect()
    }
}

impl FromIterator<ConfidenceModel> for ConfidenceModelSet {
    fn from_iter<I: IntoIterator<Item = ConfidenceModel>>(iter: I) -> Self {
        let mut set = ConfidenceModelSet::new();
        for m in iter {
            set.insert(m);
        }
        set
    }
}

/// Dynamic belief fusion: per-slot dynamic assignment, Dempster
/// combination, `c_f = m(T) - m(¬T)` and precision-weighted boxes.
pub struct DbfScorer<'a> {
    models: &'a ConfidenceModelSet,
    detector_ids: Vec<String>,
}

impl<'a> DbfScorer<'a> {
    pub fn new(models: &'a ConfidenceModelSet, dumps: &[DetectorDump]) -> Self {
        DbfScorer {
            models,
            detector_ids: dumps.iter().map(|d| d.detector_id().to_string()).collect(),
        }
    }
}

impl ClusterScorer for DbfScorer<'_> {
    fn score(&self, cluster: &DetectionCluster) -> Result<ScoredCluster> {
        let models = self.models.for_cluster(&self.detector_ids, cluster)?;
        let masses: Vec<MassFunction> = models
            .iter()
            .zip(cluster.observations())
            .map(|(m, obs)| m.map_or(MassFunction::vacuous(), |m| m.assign(obs)))
            .collect();
        let mass = combine_all(&masses)?;
        Ok(ScoredCluster {
            score: mass.fused_score(),
            bbox: refine_bbox(cluster, &models),
            mass: Some(mass),
        })
    }
}

/// Fuses with the dynamic belief pipeline.
pub fn dbf_fuse(
    dumps: &[DetectorDump],
    models: &ConfidenceModelSet,
    categories: &BTreeSet<String>,
    params: &FusionParams,
) -> Result<BTreeMap<Scope, Vec<FusedDetection>>> {
    fuse_with(dumps, &DbfScorer::new(models, dumps), categories, params)
}

/// Dempster combination of static (single operating point) assignments.
/// Boxes are refined with the dynamic confidence models so that only the
/// assignment differs from [`DbfScorer`].
pub struct StaticDstScorer<'a> {
    models: &'a ConfidenceModelSet,
    assignments: BTreeMap<(String, String), StaticAssignment>,
    detector_ids: Vec<String>,
}

impl<'a> StaticDstScorer<'a> {
    pub fn new(
        models: &'a ConfidenceModelSet,
        assignments: BTreeMap<(String, String), StaticAssignment>,
        dumps: &[DetectorDump],
    ) -> Self {
        StaticDstScorer {
            models,
            assignments,
            detector_ids: dumps.iter().map(|d| d.detector_id().to_string()).collect(),
        }
    }
}

impl ClusterScorer for StaticDstScorer<'_> {
    fn score(&self, cluster: &DetectionCluster) -> Result<ScoredCluster> {
        let models = self.models.for_cluster(&self.detector_ids, cluster)?;
        let masses = cluster
            .observations()
            .zip(&self.detector_ids)
            .map(|(obs, id)| match obs {
                Observation::Absent => Ok(MassFunction::vacuous()),
                Observation::Score(_) => self
                    .assignments
                    .get(&(id.clone(), cluster.scope.category.clone()))
                    .map(|a| a.assign(obs))
                    .ok_or_else(|| Error::MissingModel {
                        detector: id.clone(),
                        category: cluster.scope.category.clone(),
                    }),
            })
            .collect::<Result<Vec<_>>>()?;
        let mass = combine_all(&masses)?;
        Ok(ScoredCluster {
            score: mass.fused_score(),
            bbox: refine_bbox(cluster, &models),
            mass: Some(mass),
        })
    }
}

/// Flattens per-scope output into canonical order.
pub fn flatten(fused: &BTreeMap<Scope, Vec<FusedDetection>>) -> Vec<DetectionRecord> {
    fused
        .values()
        .flat_map(|v| v.iter().map(FusedDetection::to_record))
        .collect()
}
