//! True/false positive labeling, precision-recall sweeps and average precision.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataset::{DetectionRecord, GroundTruthRecord, Scope};
use crate::error::{check_ratio, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    TruePositive,
    FalsePositive,
    /// Hit only an ignore-flagged object; excluded from PR accumulation.
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDetection {
    pub record: DetectionRecord,
    pub label: Label,
}

/// Indices sorted by descending score; equal scores keep input order.
pub(crate) fn descending_order(scores: impl ExactSizeIterator<Item = f64>) -> Vec<usize> {
    let scores: Vec<f64> = scores.collect();
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Greedy matching of one scope's detections against its groundtruth.
///
/// Detections are visited by descending score. Each detection claims the
/// unmatched, non-ignored object it overlaps most; it is a true positive if
/// that overlap reaches `iou_thresh`. Otherwise a qualifying overlap with an
/// already claimed object makes it a duplicate (false positive), and a
/// qualifying overlap with only ignored objects makes it [`Label::Ignored`].
///
/// The returned labels are in input order.
pub fn match_detections(
    dets: &[DetectionRecord],
    gts: &[GroundTruthRecord],
    iou_thresh: f64,
) -> Result<Vec<LabeledDetection>> {
    check_ratio("match IoU threshold", iou_thresh)?;
    let mut claimed = vec![false; gts.len()];
    let mut labels = vec![Label::FalsePositive; dets.len()];

    for i in descending_order(dets.iter().map(|d| d.score)) {
        let bbox = &dets[i].bbox;
        let mut best: Option<(usize, f64)> = None;
        let mut duplicate = false;
        let mut hits_ignored = false;
        for (g, gt) in gts.iter().enumerate() {
            let overlap = bbox.iou(&gt.bbox);
            if gt.ignore {
                hits_ignored |= overlap >= iou_thresh;
            } else if claimed[g] {
                duplicate |= overlap >= iou_thresh;
            } else if best.is_none_or(|(_, b)| overlap > b) {
                best = Some((g, overlap));
            }
        }
        labels[i] = match best {
            Some((g, overlap)) if overlap >= iou_thresh => {
                claimed[g] = true;
                Label::TruePositive
            }
            _ if duplicate => Label::FalsePositive,
            _ if hits_ignored => Label::Ignored,
            _ => Label::FalsePositive,
        };
    }

    Ok(dets
        .iter()
        .zip(labels)
        .map(|(record, label)| LabeledDetection {
            record: record.clone(),
            label,
        })
        .collect())
}

/// Number of non-ignored objects, the recall denominator.
pub fn count_targets<'a>(gts: impl IntoIterator<Item = &'a GroundTruthRecord>) -> usize {
    gts.into_iter().filter(|g| !g.ignore).count()
}

/// Labels every detection of `category` across all images.
///
/// Images are visited in sorted order and detections keep their order within
/// an image. Returns the labels together with the number of target objects.
pub fn label_category<'a>(
    dets: impl IntoIterator<Item = &'a DetectionRecord>,
    gts: &[GroundTruthRecord],
    category: &str,
    iou_thresh: f64,
) -> Result<(Vec<LabeledDetection>, usize)> {
    let mut det_by_image: BTreeMap<&str, Vec<DetectionRecord>> = BTreeMap::new();
    for d in dets.into_iter().filter(|d| d.category == category) {
        det_by_image.entry(&d.image_id).or_default().push(d.clone());
    }
    let mut gt_by_image: BTreeMap<&str, Vec<GroundTruthRecord>> = BTreeMap::new();
    for g in gts.iter().filter(|g| g.category == category) {
        gt_by_image.entry(&g.image_id).or_default().push(g.clone());
    }
    let n_tobj = count_targets(gt_by_image.values().flatten());

    let mut labeled = Vec::new();
    for (image, dets) in &det_by_image {
        let gts = gt_by_image.get(image).map(Vec::as_slice).unwrap_or(&[]);
        labeled.extend(match_detections(dets, gts, iou_thresh)?);
    }
    Ok((labeled, n_tobj))
}

/// Groups groundtruth by scope.
pub fn groundtruth_by_scope(gts: &[GroundTruthRecord]) -> BTreeMap<Scope, Vec<GroundTruthRecord>> {
    let mut map: BTreeMap<Scope, Vec<GroundTruthRecord>> = BTreeMap::new();
    for g in gts {
        map.entry(g.scope()).or_default().push(g.clone());
    }
    map
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub score: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Raw (non-enveloped) precision-recall sweep, one point per counted
/// detection in descending score order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub n_tobj: usize,
}

impl PrCurve {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn max_recall(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.recall)
    }

    /// One point per distinct score, taken at the last occurrence so that a
    /// threshold at that score admits every tied detection.
    pub fn collapsed(&self) -> Vec<PrPoint> {
        let mut out: Vec<PrPoint> = Vec::with_capacity(self.points.len());
        for p in &self.points {
            match out.last_mut() {
                Some(last) if last.score == p.score => *last = *p,
                _ => out.push(*p),
            }
        }
        out
    }
}

pub fn compute_pr_curve(labeled: &[LabeledDetection], n_tobj: usize) -> Result<PrCurve> {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut points = Vec::with_capacity(labeled.len());
    for i in descending_order(labeled.iter().map(|l| l.record.score)) {
        match labeled[i].label {
            Label::TruePositive => tp += 1,
            Label::FalsePositive => fp += 1,
            Label::Ignored => continue,
        }
        if tp > n_tobj {
            return Err(Error::Inconsistent(format!(
                "{tp} true positives but only {n_tobj} target objects"
            )));
        }
        let recall = if n_tobj == 0 {
            0.0
        } else {
            tp as f64 / n_tobj as f64
        };
        points.push(PrPoint {
            score: labeled[i].record.score,
            precision: tp as f64 / (tp + fp) as f64,
            recall,
        });
    }
    Ok(PrCurve { points, n_tobj })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ApMode {
    /// Area under the precision envelope over every recall increment.
    #[default]
    #[serde(rename = "all")]
    AllPoint,
    /// Mean envelope precision at recall 0, 0.1, ..., 1.
    #[serde(rename = "11pt")]
    ElevenPoint,
}

impl std::str::FromStr for ApMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" | "allpoint" => Ok(ApMode::AllPoint),
            "11pt" | "11" | "elevenpoint" => Ok(ApMode::ElevenPoint),
            _ => Err(Error::InvalidArgument(format!(
                "unknown AP mode `{s}` (expected `all` or `11pt`)"
            ))),
        }
    }
}

impl std::fmt::Display for ApMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ApMode::AllPoint => "all",
            ApMode::ElevenPoint => "11pt",
        })
    }
}

pub fn average_precision(curve: &PrCurve, mode: ApMode) -> f64 {
    if curve.points.is_empty() {
        return 0.0;
    }
    // envelope[i] = max precision over points i.. (recall is non-decreasing)
    let mut envelope: Vec<f64> = curve.points.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    match mode {
        ApMode::AllPoint => {
            let mut prev_recall = 0.0;
            let mut ap = 0.0;
            for (p, env) in curve.points.iter().zip(&envelope) {
                ap += (p.recall - prev_recall) * env;
                prev_recall = p.recall;
            }
            ap
        }
        ApMode::ElevenPoint => {
            let total: f64 = (0..=10)
                .map(|k| {
                    let level = k as f64 / 10.0;
                    curve
                        .points
                        .iter()
                        .position(|p| p.recall >= level)
                        .map_or(0.0, |i| envelope[i])
                })
                .sum();
            total / 11.0
        }
    }
}

pub fn mean_ap(per_category: &BTreeMap<String, f64>) -> Result<f64> {
    if per_category.is_empty() {
        return Err(Error::InvalidArgument(
            "mean AP needs at least one category".into(),
        ));
    }
    Ok(per_category.values().sum::<f64>() / per_category.len() as f64)
}

/// Per-category evaluation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryEval {
    pub ap: f64,
    pub n_tobj: usize,
    pub n_detections: usize,
    pub n_tp: usize,
    pub n_fp: usize,
    pub n_ignored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub per_category: BTreeMap<String, CategoryEval>,
    pub map: f64,
}

impl EvalSummary {
    pub fn ap_table(&self) -> BTreeMap<String, f64> {
        self.per_category
            .iter()
            .map(|(k, v)| (k.clone(), v.ap))
            .collect()
    }
}

pub fn evaluate_category<'a>(
    dets: impl IntoIterator<Item = &'a DetectionRecord>,
    gts: &[GroundTruthRecord],
    category: &str,
    iou_thresh: f64,
    mode: ApMode,
) -> Result<CategoryEval> {
    let (labeled, n_tobj) = label_category(dets, gts, category, iou_thresh)?;
    let count = |l: Label| labeled.iter().filter(|d| d.label == l).count();
    let curve = compute_pr_curve(&labeled, n_tobj)?;
    Ok(CategoryEval {
        ap: average_precision(&curve, mode),
        n_tobj,
        n_detections: labeled.len(),
        n_tp: count(Label::TruePositive),
        n_fp: count(Label::FalsePositive),
        n_ignored: count(Label::Ignored),
    })
}

/// Evaluates one set of detections over the requested categories.
pub fn evaluate<'a>(
    dets: impl IntoIterator<Item = &'a DetectionRecord> + Clone,
    gts: &[GroundTruthRecord],
    categories: &BTreeSet<String>,
    iou_thresh: f64,
    mode: ApMode,
) -> Result<EvalSummary> {
    let mut per_category = BTreeMap::new();
    for cat in categories {
        per_category.insert(
            cat.clone(),
            evaluate_category(dets.clone(), gts, cat, iou_thresh, mode)?,
        );
    }
    let map = mean_ap(
        &per_category
            .iter()
            .map(|(k, v): (&String, &CategoryEval)| (k.clone(), v.ap))
            .collect(),
    )?;
    Ok(EvalSummary { per_category, map })
}
