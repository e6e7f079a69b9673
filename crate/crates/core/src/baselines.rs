//! Comparison fusers over the same detection clusters: Platt-calibrated
//! max, weighted sum learned by a linear SVM, and naive Bayes over score
//! histograms.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DetectorDump, GroundTruthRecord};
use crate::error::{Error, Result};
use crate::evaluation::{groundtruth_by_scope, label_category, match_detections, Label};
use crate::fusion::{
    cluster_detections, fusion_scopes, ClusterScorer, DetectionCluster, ScoredCluster,
};

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Logistic calibration `f(x) = 1 / (1 + exp(-alpha * (x + beta)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattModel {
    pub alpha: f64,
    pub beta: f64,
}

impl PlattModel {
    pub fn calibrate(&self, score: f64) -> f64 {
        sigmoid(self.alpha * (score + self.beta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlattOptions {
    /// L2 penalty on alpha.
    pub l2: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Platt's smoothed targets `(N+ + 1) / (N+ + 2)` and `1 / (N- + 2)`
    /// instead of hard 0/1 labels.
    pub smooth_targets: bool,
}

impl Default for PlattOptions {
    fn default() -> Self {
        PlattOptions {
            l2: 1e-6,
            max_iter: 500,
            grad_tol: 1e-8,
            smooth_targets: false,
        }
    }
}

/// Fits a Platt model on `(score, is_true_positive)` pairs with a damped
/// Newton method.
pub fn fit_platt(scores: &[f64], labels: &[bool], opts: &PlattOptions) -> Result<PlattModel> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InsufficientData {
            detector: String::new(),
            category: String::new(),
            reason: "Platt scaling needs both true and false positives".into(),
        });
    }
    let (hi, lo) = if opts.smooth_targets {
        (
            (n_pos as f64 + 1.0) / (n_pos as f64 + 2.0),
            1.0 / (n_neg as f64 + 2.0),
        )
    } else {
        (1.0, 0.0)
    };
    let targets: Vec<f64> = labels.iter().map(|&l| if l { hi } else { lo }).collect();

    let objective = |a: f64, b: f64| -> f64 {
        scores
            .iter()
            .zip(&targets)
            .map(|(&x, &t)| {
                let z = a * x + b;
                t * softplus(-z) + (1.0 - t) * softplus(z)
            })
            .sum::<f64>()
            + opts.l2 * a * a
    };

    let mut a = 0.0;
    let mut b = ((n_pos as f64 + 1.0) / (n_neg as f64 + 1.0)).ln();
    let mut value = objective(a, b);
    for _ in 0..opts.max_iter {
        let (mut ga, mut gb) = (2.0 * opts.l2 * a, 0.0);
        let (mut haa, mut hab, mut hbb) = (2.0 * opts.l2, 0.0, 1e-12);
        for (&x, &t) in scores.iter().zip(&targets) {
            let p = sigmoid(a * x + b);
            let d = p - t;
            ga += d * x;
            gb += d;
            let w = (p * (1.0 - p)).max(1e-15);
            haa += w * x * x;
            hab += w * x;
            hbb += w;
        }
        if ga.hypot(gb) < opts.grad_tol {
            break;
        }
        let det = haa * hbb - hab * hab;
        let (mut da, mut db) = if det > 0.0 {
            (-(hbb * ga - hab * gb) / det, -(haa * gb - hab * ga) / det)
        } else {
            (-ga, -gb)
        };
        // backtracking on the objective
        let slope = ga * da + gb * db;
        if slope >= 0.0 {
            da = -ga;
            db = -gb;
        }
        let slope = ga * da + gb * db;
        let mut step = 1.0;
        let mut moved = false;
        while step > 1e-12 {
            let (na, nb) = (a + step * da, b + step * db);
            let nv = objective(na, nb);
            if nv <= value + 1e-4 * step * slope {
                a = na;
                b = nb;
                value = nv;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    if a == 0.0 {
        return Err(Error::Inconsistent(
            "Platt fit produced a zero slope; scores carry no ordering".into(),
        ));
    }
    Ok(PlattModel {
        alpha: a,
        beta: b / a,
    })
}

/// Linear weights over Platt-calibrated cluster vectors, slot-aligned with
/// `detector_ids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WsModel {
    pub detector_ids: Vec<String>,
    pub weights: Vec<f64>,
}

impl WsModel {
    pub fn apply(&self, features: &[f64]) -> f64 {
        self.weights.iter().zip(features).map(|(w, c)| w * c).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WsOptions {
    /// Hinge-loss weight; the regularizer is `1 / (C * m)` for `m` samples.
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for WsOptions {
    fn default() -> Self {
        WsOptions {
            c: 1.0,
            epochs: 1000,
            seed: 0,
        }
    }
}

/// L2-regularized hinge loss minimized by stochastic subgradient descent
/// with step `1 / (lambda * t)`.
///
/// Training appends a constant feature so the separating hyperplane need
/// not pass through the origin; its weight is an intercept that does not
/// affect ranking and is dropped from the result.
const WS_BIAS_FEATURE: f64 = 1.0;

pub fn fit_ws_weights(
    features: &[Vec<f64>],
    labels: &[bool],
    opts: &WsOptions,
) -> Result<Vec<f64>> {
    let m = features.len();
    if m != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{m} feature vectors but {} labels",
            labels.len()
        )));
    }
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(Error::InsufficientData {
            detector: String::new(),
            category: String::new(),
            reason: "weighted-sum training needs both classes".into(),
        });
    }
    if !(opts.c > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "SVM C must be positive, got {}",
            opts.c
        )));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::InvalidArgument("ragged feature vectors".into()));
    }
    let features: Vec<Vec<f64>> = features
        .iter()
        .map(|f| f.iter().copied().chain([WS_BIAS_FEATURE]).collect())
        .collect();
    let dim = dim + 1;
    let lambda = 1.0 / (opts.c * m as f64);
    let radius = 1.0 / lambda.sqrt();
    let mut w = vec![0.0; dim];
    let mut order: Vec<usize> = (0..m).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut t = 0u64;
    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let y = if labels[i] { 1.0 } else { -1.0 };
            let margin = y * w.iter().zip(&features[i]).map(|(a, b)| a * b).sum::<f64>();
            let shrink = 1.0 - eta * lambda;
            for v in w.iter_mut() {
                *v *= shrink;
            }
            if margin < 1.0 {
                for (v, x) in w.iter_mut().zip(&features[i]) {
                    *v += eta * y * x;
                }
            }
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > radius {
                for v in w.iter_mut() {
                    *v *= radius / norm;
                }
            }
        }
    }
    w.pop();
    Ok(w)
}

/// Score histogram likelihoods for one detector, Laplace smoothed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesHistogram {
    pub min: f64,
    pub max: f64,
    pub target: Vec<f64>,
    pub non_target: Vec<f64>,
}

pub const BAYES_BINS: usize = 20;

impl BayesHistogram {
    /// Bin of `score`; scores outside the validation range land in the edge bins.
    pub fn bin(&self, score: f64) -> usize {
        let bins = self.target.len();
        let pos = (score - self.min) / (self.max - self.min) * bins as f64;
        if pos.is_nan() || pos < 0.0 {
            0
        } else {
            (pos.floor() as usize).min(bins - 1)
        }
    }

    pub fn likelihoods(&self, score: f64) -> (f64, f64) {
        let b = self.bin(score);
        (self.target[b], self.non_target[b])
    }
}

pub fn fit_bayes(scores: &[f64], labels: &[bool]) -> Result<BayesHistogram> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(
            "scores and labels differ in length".into(),
        ));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::InsufficientData {
            detector: String::new(),
            category: String::new(),
            reason: "Bayes fusion needs both true and false positives".into(),
        });
    }
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return Err(Error::InsufficientData {
            detector: String::new(),
            category: String::new(),
            reason: format!("zero-width score range [{min}, {max}]"),
        });
    }
    let mut hist = BayesHistogram {
        min,
        max,
        target: vec![1.0; BAYES_BINS],
        non_target: vec![1.0; BAYES_BINS],
    };
    for (&s, &l) in scores.iter().zip(labels) {
        let b = hist.bin(s);
        if l {
            hist.target[b] += 1.0;
        } else {
            hist.non_target[b] += 1.0;
        }
    }
    for v in [&mut hist.target, &mut hist.non_target] {
        let total: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= total);
    }
    Ok(hist)
}

/// Maximum calibrated score over present slots; absent slots count as 0.
pub fn platt_fuse(cluster: &DetectionCluster, models: &[Option<&PlattModel>]) -> Result<f64> {
    let mut best = 0.0f64;
    for (k, det) in cluster.present() {
        let model = models
            .get(k)
            .copied()
            .flatten()
            .ok_or_else(|| missing(k, cluster))?;
        best = best.max(model.calibrate(det.score));
    }
    Ok(best)
}

/// Platt-calibrated cluster vector, 0 for absent slots.
pub fn calibrated_vector(
    cluster: &DetectionCluster,
    models: &[Option<&PlattModel>],
) -> Result<Vec<f64>> {
    cluster
        .slots
        .iter()
        .enumerate()
        .map(|(k, slot)| match slot {
            None => Ok(0.0),
            Some(d) => models
                .get(k)
                .copied()
                .flatten()
                .map(|m| m.calibrate(d.score))
                .ok_or_else(|| missing(k, cluster)),
        })
        .collect()
}

pub fn ws_fuse(
    cluster: &DetectionCluster,
    ws: &WsModel,
    platt: &[Option<&PlattModel>],
) -> Result<f64> {
    Ok(ws.apply(&calibrated_vector(cluster, platt)?))
}

/// `½ ∏ l(c|T) - ½ ∏ l(c|¬T)` over present slots.
pub fn bayes_fuse(cluster: &DetectionCluster, models: &[Option<&BayesHistogram>]) -> Result<f64> {
    let (mut pt, mut pf) = (1.0, 1.0);
    for (k, det) in cluster.present() {
        let h = models
            .get(k)
            .copied()
            .flatten()
            .ok_or_else(|| missing(k, cluster))?;
        let (lt, lf) = h.likelihoods(det.score);
        pt *= lt;
        pf *= lf;
    }
    Ok(0.5 * pt - 0.5 * pf)
}

fn missing(slot: usize, cluster: &DetectionCluster) -> Error {
    Error::MissingModel {
        detector: format!("slot {slot}"),
        category: cluster.scope.category.clone(),
    }
}

/// Fitted baseline models for a set of detectors, keyed by category and
/// then detector id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineModels {
    pub platt: BTreeMap<String, BTreeMap<String, PlattModel>>,
    pub ws: BTreeMap<String, WsModel>,
    pub bayes: BTreeMap<String, BTreeMap<String, BayesHistogram>>,
}

/// Which fuser a [`BaselineScorer`] applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Platt,
    WeightedSum,
    Bayes,
}

pub struct BaselineScorer<'a> {
    kind: Baseline,
    models: &'a BaselineModels,
    detector_ids: Vec<String>,
}

impl<'a> BaselineScorer<'a> {
    pub fn new(kind: Baseline, models: &'a BaselineModels, dumps: &[DetectorDump]) -> Self {
        BaselineScorer {
            kind,
            models,
            detector_ids: dumps.iter().map(|d| d.detector_id().to_string()).collect(),
        }
    }

    fn slot_models<'m, T>(
        &self,
        table: &'m BTreeMap<String, BTreeMap<String, T>>,
        cluster: &DetectionCluster,
    ) -> Result<Vec<Option<&'m T>>> {
        let cat = &cluster.scope.category;
        let per_det = table.get(cat);
        cluster
            .slots
            .iter()
            .zip(&self.detector_ids)
            .map(|(slot, id)| {
                let m = per_det.and_then(|t| t.get(id));
                match (slot, m) {
                    (Some(_), None) => Err(Error::MissingModel {
                        detector: id.clone(),
                        category: cat.clone(),
                    }),
                    _ => Ok(m),
                }
            })
            .collect()
    }
}

impl ClusterScorer for BaselineScorer<'_> {
    fn score(&self, cluster: &DetectionCluster) -> Result<ScoredCluster> {
        let score = match self.kind {
            Baseline::Platt => {
                platt_fuse(cluster, &self.slot_models(&self.models.platt, cluster)?)?
            }
            Baseline::WeightedSum => {
                let cat = &cluster.scope.category;
                let ws = self.models.ws.get(cat).ok_or_else(|| Error::MissingModel {
                    detector: "weighted-sum".into(),
                    category: cat.clone(),
                })?;
                if ws.detector_ids != self.detector_ids {
                    return Err(Error::Inconsistent(format!(
                        "weighted-sum model trained on detectors {:?}, fusing {:?}",
                        ws.detector_ids, self.detector_ids
                    )));
                }
                ws_fuse(cluster, ws, &self.slot_models(&self.models.platt, cluster)?)?
            }
            Baseline::Bayes => {
                bayes_fuse(cluster, &self.slot_models(&self.models.bayes, cluster)?)?
            }
        };
        Ok(ScoredCluster {
            score,
            bbox: cluster.anchor().bbox,
            mass: None,
        })
    }
}

/// Validation clusters of one category, each labeled by matching its anchor
/// against groundtruth. Ignored anchors are dropped.
pub fn labeled_clusters(
    dumps: &[DetectorDump],
    gts: &[GroundTruthRecord],
    category: &str,
    match_iou: f64,
    cluster_iou: f64,
) -> Result<Vec<(DetectionCluster, bool)>> {
    let gt_scopes = groundtruth_by_scope(gts);
    let cats = BTreeSet::from([category.to_string()]);
    let mut out = Vec::new();
    for scope in fusion_scopes(dumps, &cats) {
        let scope_gts = gt_scopes.get(&scope).map(Vec::as_slice).unwrap_or(&[]);
        let labels = dumps
            .iter()
            .map(|d| match_detections(d.scope(&scope), scope_gts, match_iou))
            .collect::<Result<Vec<_>>>()?;
        for cluster in cluster_detections(dumps, &scope, cluster_iou) {
            match labels[cluster.anchor_slot][cluster.anchor_index].label {
                Label::TruePositive => out.push((cluster, true)),
                Label::FalsePositive => out.push((cluster, false)),
                Label::Ignored => {}
            }
        }
    }
    Ok(out)
}

/// Validation scores and TP flags of one detector for one category.
pub fn labeled_scores(
    dump: &DetectorDump,
    gts: &[GroundTruthRecord],
    category: &str,
    match_iou: f64,
) -> Result<(Vec<f64>, Vec<bool>)> {
    let (labeled, _) = label_category(dump.records(), gts, category, match_iou)?;
    Ok(labeled
        .iter()
        .filter(|l| l.label != Label::Ignored)
        .map(|l| (l.record.score, l.label == Label::TruePositive))
        .unzip())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineFitOptions {
    pub match_iou: f64,
    pub cluster_iou: f64,
    pub platt: PlattOptions,
    pub ws: WsOptions,
}

impl Default for BaselineFitOptions {
    fn default() -> Self {
        BaselineFitOptions {
            match_iou: 0.5,
            cluster_iou: 0.3,
            platt: PlattOptions::default(),
            ws: WsOptions::default(),
        }
    }
}

fn tag(e: Error, detector: &str, category: &str) -> Error {
    match e {
        Error::InsufficientData { reason, .. } => Error::InsufficientData {
            detector: detector.to_string(),
            category: category.to_string(),
            reason,
        },
        other => other,
    }
}

/// Fits every baseline for every detector and category.
///
/// Fits that lack data (e.g. a detector without false positives) are
/// skipped and reported in the returned warnings; any other error aborts.
pub fn fit_baselines(
    dumps: &[DetectorDump],
    gts: &[GroundTruthRecord],
    categories: &BTreeSet<String>,
    opts: &BaselineFitOptions,
) -> Result<(BaselineModels, Vec<String>)> {
    let mut models = BaselineModels::default();
    let mut warnings = Vec::new();
    let soft = |r: Result<()>, warnings: &mut Vec<String>| -> Result<()> {
        match r {
            Err(e @ Error::InsufficientData { .. }) => {
                log::warn!("{e}");
                warnings.push(e.to_string());
                Ok(())
            }
            other => other,
        }
    };
    for cat in categories {
        for dump in dumps {
            let id = dump.detector_id();
            let (scores, labels) = labeled_scores(dump, gts, cat, opts.match_iou)?;
            let r = fit_platt(&scores, &labels, &opts.platt).map(|m| {
                models
                    .platt
                    .entry(cat.clone())
                    .or_default()
                    .insert(id.to_string(), m);
            });
            soft(r.map_err(|e| tag(e, id, cat)), &mut warnings)?;
            let r = fit_bayes(&scores, &labels).map(|h| {
                models
                    .bayes
                    .entry(cat.clone())
                    .or_default()
                    .insert(id.to_string(), h);
            });
            soft(r.map_err(|e| tag(e, id, cat)), &mut warnings)?;
        }

        let platt = models.platt.get(cat);
        let have_all = platt.is_some_and(|p| dumps.iter().all(|d| p.contains_key(d.detector_id())));
        if !have_all {
            let msg =
                format!("skipping weighted-sum for `{cat}`: not every detector has a Platt model");
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        let platt = platt.expect("checked above");
        let slot_models: Vec<Option<&PlattModel>> =
            dumps.iter().map(|d| platt.get(d.detector_id())).collect();
        let clusters = labeled_clusters(dumps, gts, cat, opts.match_iou, opts.cluster_iou)?;
        let mut features = Vec::with_capacity(clusters.len());
        let mut labels = Vec::with_capacity(clusters.len());
        for (c, l) in &clusters {
            features.push(calibrated_vector(c, &slot_models)?);
            labels.push(*l);
        }
        let r = fit_ws_weights(&features, &labels, &opts.ws).map(|w| {
            models.ws.insert(
                cat.clone(),
                WsModel {
                    detector_ids: dumps.iter().map(|d| d.detector_id().to_string()).collect(),
                    weights: w,
                },
            );
        });
        soft(r.map_err(|e| tag(e, "weighted-sum", cat)), &mut warnings)?;
    }
    Ok((models, warnings))
}
