//! End-to-end commands: evaluation, confidence-model building, exponent
//! selection, fusion and reporting.
//!
//! The binary is a thin argument parser over the `cmd_*` functions here;
//! the lower-level helpers are public for experiments that drive the
//! pipeline in memory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    fit_baselines, Baseline, BaselineFitOptions, BaselineModels, BaselineScorer, WsOptions,
};
use crate::confidence::{ConfidenceModel, Exponent, StaticAssignment};
use crate::dataset::{
    groundtruth_categories, load_detections, load_groundtruth, validate_run, write_jsonl,
    DetectionRecord, DetectorDump, GroundTruthRecord, Scope,
};
use crate::error::{check_ratio, Error, Result};
use crate::evaluation::{compute_pr_curve, evaluate, label_category, ApMode, EvalSummary, PrCurve};
use crate::fusion::{
    flatten, fuse_with, ClusterScorer, ConfidenceModelSet, DbfScorer, FusedDetection, FusionParams,
    StaticDstScorer,
};
use crate::synth::{generate_world, SynthWorldConfig};

/// Overlap thresholds for matching, clustering and suppression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub match_iou: f64,
    pub cluster_iou: f64,
    pub nms_iou: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            match_iou: 0.5,
            cluster_iou: 0.3,
            nms_iou: 0.3,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        check_ratio("match IoU threshold", self.match_iou)?;
        self.fusion().validate()
    }

    pub fn fusion(&self) -> FusionParams {
        FusionParams {
            cluster_iou: self.cluster_iou,
            nms_iou: self.nms_iou,
        }
    }
}

/// `<id>=<path>` pair naming one detector dump.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectorSource {
    pub id: String,
    pub path: PathBuf,
}

impl FromStr for DetectorSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('=') {
            Some((id, path)) if !id.is_empty() && !path.is_empty() => Ok(DetectorSource {
                id: id.to_string(),
                path: PathBuf::from(path),
            }),
            _ => Err(Error::InvalidArgument(format!(
                "expected <id>=<path>, got `{s}`"
            ))),
        }
    }
}

/// Inputs shared by every command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub gt: PathBuf,
    pub detectors: Vec<DetectorSource>,
    /// Defaults to every category present in the groundtruth.
    pub categories: Option<Vec<String>>,
    pub ap_mode: ApMode,
    pub thresholds: Thresholds,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(gt: impl Into<PathBuf>, detectors: Vec<DetectorSource>) -> Self {
        RunConfig {
            gt: gt.into(),
            detectors,
            categories: None,
            ap_mode: ApMode::default(),
            thresholds: Thresholds::default(),
            seed: 0,
            out: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        for p in std::iter::once(&self.gt).chain(self.detectors.iter().map(|d| &d.path)) {
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
                ));
            }
        }
        Ok(())
    }

    /// Loads groundtruth and dumps and resolves the category set.
    pub fn load(&self) -> Result<LoadedRun> {
        self.validate()?;
        let gts = load_groundtruth(&self.gt)?;
        let dumps = self
            .detectors
            .iter()
            .map(|d| load_detections(&d.id, &d.path))
            .collect::<Result<Vec<_>>>()?;
        validate_run(&dumps, &gts)?;
        let categories = resolve_categories(&gts, self.categories.as_deref())?;
        Ok(LoadedRun {
            gts,
            dumps,
            categories,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub gts: Vec<GroundTruthRecord>,
    pub dumps: Vec<DetectorDump>,
    pub categories: BTreeSet<String>,
}

/// Requested categories, each of which must have groundtruth.
pub fn resolve_categories(
    gts: &[GroundTruthRecord],
    requested: Option<&[String]>,
) -> Result<BTreeSet<String>> {
    let present = groundtruth_categories(gts);
    let cats: BTreeSet<String> = match requested {
        Some(r) => r.iter().cloned().collect(),
        None => present.clone(),
    };
    if cats.is_empty() {
        return Err(Error::Inconsistent("no categories to process".into()));
    }
    if let Some(missing) = cats.iter().find(|c| !present.contains(*c)) {
        return Err(Error::Inconsistent(format!(
            "category `{missing}` has no groundtruth objects"
        )));
    }
    Ok(cats)
}

/// Validation sweeps keyed by category, then detector id.
pub type Sweeps = BTreeMap<String, BTreeMap<String, PrCurve>>;

pub fn validation_sweeps(
    dumps: &[DetectorDump],
    gts: &[GroundTruthRecord],
    categories: &BTreeSet<String>,
    match_iou: f64,
) -> Result<Sweeps> {
    let mut sweeps = Sweeps::new();
    for cat in categories {
        for dump in dumps {
            let (labeled, n_tobj) = label_category(dump.records(), gts, cat, match_iou)?;
            sweeps.entry(cat.clone()).or_default().insert(
                dump.detector_id().to_string(),
                compute_pr_curve(&labeled, n_tobj)?,
            );
        }
    }
    Ok(sweeps)
}

/// One confidence model per swept (detector, category), with the exponent
/// chosen per category.
pub fn models_from_sweeps(
    sweeps: &Sweeps,
    exponent: impl Fn(&str) -> Exponent,
) -> Result<ConfidenceModelSet> {
    let mut set = ConfidenceModelSet::new();
    for (cat, per_det) in sweeps {
        let n = exponent(cat);
        for (det, curve) in per_det {
            set.insert(ConfidenceModel::from_curve(det, cat, curve, n)?);
        }
    }
    Ok(set)
}

/// A fusion method selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dbf,
    Platt,
    Ws,
    Bayes,
    Dst,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dbf" => Ok(Method::Dbf),
            "platt" => Ok(Method::Platt),
            "ws" => Ok(Method::Ws),
            "bayes" => Ok(Method::Bayes),
            "dst" => Ok(Method::Dst),
            _ => Err(Error::InvalidArgument(format!(
                "unknown fusion method `{s}` (expected dbf, platt, ws, bayes or dst)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Dbf => "dbf",
            Method::Platt => "platt",
            Method::Ws => "ws",
            Method::Bayes => "bayes",
            Method::Dst => "dst",
        })
    }
}

/// Everything learned from the validation split.
#[derive(Debug, Clone, Default)]
pub struct TrainedModels {
    pub confidence: ConfidenceModelSet,
    pub sweeps: Sweeps,
    pub baselines: BaselineModels,
}

/// Static assignments at `operating_recall` for every swept pair, using
/// each pair's confidence-model exponent.
pub fn static_assignments(
    trained: &TrainedModels,
    operating_recall: f64,
) -> Result<BTreeMap<(String, String), StaticAssignment>> {
    let mut out = BTreeMap::new();
    for (cat, per_det) in &trained.sweeps {
        for (det, curve) in per_det {
            let n = trained.confidence.require(det, cat)?.n;
            out.insert(
                (det.clone(), cat.clone()),
                StaticAssignment::new(curve, n, operating_recall)?,
            );
        }
    }
    Ok(out)
}

/// Runs one fusion method over the test dumps.
pub fn fuse_method(
    method: Method,
    dumps: &[DetectorDump],
    trained: &TrainedModels,
    categories: &BTreeSet<String>,
    params: &FusionParams,
    operating_recall: f64,
) -> Result<BTreeMap<Scope, Vec<FusedDetection>>> {
    let scorer: Box<dyn ClusterScorer + '_> = match method {
        Method::Dbf => Box::new(DbfScorer::new(&trained.confidence, dumps)),
        Method::Dst => Box::new(StaticDstScorer::new(
            &trained.confidence,
            static_assignments(trained, operating_recall)?,
            dumps,
        )),
        Method::Platt => Box::new(BaselineScorer::new(
            Baseline::Platt,
            &trained.baselines,
            dumps,
        )),
        Method::Ws => Box::new(BaselineScorer::new(
            Baseline::WeightedSum,
            &trained.baselines,
            dumps,
        )),
        Method::Bayes => Box::new(BaselineScorer::new(
            Baseline::Bayes,
            &trained.baselines,
            dumps,
        )),
    };
    fuse_with(dumps, scorer.as_ref(), categories, params)
}

/// Per-category mean AP of fused output against groundtruth.
pub fn evaluate_fused(
    fused: &BTreeMap<Scope, Vec<FusedDetection>>,
    gts: &[GroundTruthRecord],
    categories: &BTreeSet<String>,
    match_iou: f64,
    mode: ApMode,
) -> Result<EvalSummary> {
    let records = flatten(fused);
    evaluate(records.iter(), gts, categories, match_iou, mode)
}

/// Deterministic two-fold split of the images seen in `gts` and `dumps`.
pub fn split_images(
    gts: &[GroundTruthRecord],
    dumps: &[DetectorDump],
    seed: u64,
) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut images: Vec<String> = gts
        .iter()
        .map(|g| g.image_id.clone())
        .chain(
            dumps
                .iter()
                .flat_map(|d| d.images().into_iter().map(str::to_string)),
        )
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    images.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let half = images.len() / 2;
    let second = images.split_off(half);
    (images.into_iter().collect(), second.into_iter().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub n: Exponent,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryTuning {
    pub selected: Exponent,
    pub scores: Vec<GridScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub grid: Vec<Exponent>,
    pub per_category: BTreeMap<String, CategoryTuning>,
}

impl TuneReport {
    pub fn selected(&self, category: &str) -> Option<Exponent> {
        self.per_category.get(category).map(|t| t.selected)
    }
}

/// Picks the exponent per category by two-fold cross-validation on the
/// validation split: models are built on one half, fused AP is measured on
/// the other, and the two assignments are averaged. Ties go to the smaller
/// exponent.
pub fn tune_n(
    dumps: &[DetectorDump],
    gts: &[GroundTruthRecord],
    categories: &BTreeSet<String>,
    grid: &[Exponent],
    thresholds: &Thresholds,
    mode: ApMode,
    seed: u64,
) -> Result<TuneReport> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("exponent grid is empty".into()));
    }
    if dumps.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "exponent tuning needs at least 2 detectors, got {}",
            dumps.len()
        )));
    }
    thresholds.validate()?;
    let mut grid = grid.to_vec();
    grid.sort_by(|a, b| a.as_f64().total_cmp(&b.as_f64()));
    grid.dedup();

    let (fold_a, fold_b) = split_images(gts, dumps, seed);
    let mut totals: BTreeMap<String, Vec<f64>> = categories
        .iter()
        .map(|c| (c.clone(), vec![0.0; grid.len()]))
        .collect();

    for (train, test) in [(&fold_a, &fold_b), (&fold_b, &fold_a)] {
        let subset_gt = |imgs: &BTreeSet<String>| -> Vec<GroundTruthRecord> {
            gts.iter()
                .filter(|g| imgs.contains(&g.image_id))
                .cloned()
                .collect()
        };
        let train_gt = subset_gt(train);
        let test_gt = subset_gt(test);
        let train_dumps: Vec<DetectorDump> = dumps.iter().map(|d| d.filter_images(train)).collect();
        let test_dumps: Vec<DetectorDump> = dumps.iter().map(|d| d.filter_images(test)).collect();
        let sweeps = validation_sweeps(&train_dumps, &train_gt, categories, thresholds.match_iou)?;
        for cat in categories {
            let one = BTreeSet::from([cat.clone()]);
            let cat_sweeps: Sweeps = sweeps
                .get(cat)
                .map(|s| BTreeMap::from([(cat.clone(), s.clone())]))
                .unwrap_or_default();
            for (k, &n) in grid.iter().enumerate() {
                let models = models_from_sweeps(&cat_sweeps, |_| n)?;
                let trained = TrainedModels {
                    confidence: models,
                    ..Default::default()
                };
                let fused = fuse_method(
                    Method::Dbf,
                    &test_dumps,
                    &trained,
                    &one,
                    &thresholds.fusion(),
                    0.0,
                )?;
                let summary = evaluate_fused(&fused, &test_gt, &one, thresholds.match_iou, mode)?;
                totals.get_mut(cat).expect("category seeded")[k] += summary.map / 2.0;
            }
        }
    }

    let per_category = totals
        .into_iter()
        .map(|(cat, aps)| {
            let mut best = 0;
            for (k, &ap) in aps.iter().enumerate() {
                if ap > aps[best] {
                    best = k;
                }
            }
            let scores = grid
                .iter()
                .zip(&aps)
                .map(|(&n, &ap)| GridScore { n, ap })
                .collect();
            (
                cat,
                CategoryTuning {
                    selected: grid[best],
                    scores,
                },
            )
        })
        .collect();
    Ok(TuneReport { grid, per_category })
}

/// Exponent handling for `build-model`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExponentChoice {
    Fixed(Exponent),
    Auto,
}

impl FromStr for ExponentChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            Ok(ExponentChoice::Auto)
        } else {
            s.parse().map(ExponentChoice::Fixed)
        }
    }
}

/// Trains confidence models (and, best-effort, the baselines) on a
/// validation split.
pub fn train(
    dumps: &[DetectorDump],
    gts: &[GroundTruthRecord],
    categories: &BTreeSet<String>,
    exponent: impl Fn(&str) -> Exponent,
    thresholds: &Thresholds,
    ws: &WsOptions,
) -> Result<(TrainedModels, Vec<String>)> {
    let sweeps = validation_sweeps(dumps, gts, categories, thresholds.match_iou)?;
    let confidence = models_from_sweeps(&sweeps, exponent)?;
    let opts = BaselineFitOptions {
        match_iou: thresholds.match_iou,
        cluster_iou: thresholds.cluster_iou,
        ws: *ws,
        ..Default::default()
    };
    let (baselines, warnings) = fit_baselines(dumps, gts, categories, &opts)?;
    Ok((
        TrainedModels {
            confidence,
            sweeps,
            baselines,
        },
        warnings,
    ))
}

const CONFIDENCE_DIR: &str = "confidence";
const SWEEPS_FILE: &str = "sweeps.json";
const BASELINES_FILE: &str = "baselines.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes confidence models (one file per detector and category), the
/// validation sweeps and the baseline models under `dir`.
pub fn save_models(dir: &Path, trained: &TrainedModels) -> Result<()> {
    let conf_dir = dir.join(CONFIDENCE_DIR);
    if conf_dir.exists() {
        fs::remove_dir_all(&conf_dir).map_err(|e| Error::io(&conf_dir, e))?;
    }
    for (i, model) in trained.confidence.iter().enumerate() {
        let name = format!(
            "{i:04}-{}-{}.json",
            file_stem(&model.detector_id),
            file_stem(&model.category)
        );
        write_json(&conf_dir.join(name), model)?;
    }
    write_json(&dir.join(SWEEPS_FILE), &trained.sweeps)?;
    write_json(&dir.join(BASELINES_FILE), &trained.baselines)
}

/// Loads what [`save_models`] wrote. Sweeps and baselines are optional.
pub fn load_models(dir: &Path) -> Result<TrainedModels> {
    let conf_dir = dir.join(CONFIDENCE_DIR);
    let mut paths: Vec<PathBuf> = fs::read_dir(&conf_dir)
        .map_err(|e| Error::io(&conf_dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(&conf_dir, err)))
        .collect::<Result<Vec<_>>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
    paths.sort();
    let mut confidence = ConfidenceModelSet::new();
    for p in &paths {
        let model: ConfidenceModel = read_json(p)?;
        confidence.insert(model);
    }
    let sweeps_path = dir.join(SWEEPS_FILE);
    let sweeps = if sweeps_path.is_file() {
        read_json(&sweeps_path)?
    } else {
        Sweeps::new()
    };
    let base_path = dir.join(BASELINES_FILE);
    let baselines = if base_path.is_file() {
        read_json(&base_path)?
    } else {
        BaselineModels::default()
    };
    Ok(TrainedModels {
        confidence,
        sweeps,
        baselines,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorEval {
    pub detector_id: String,
    #[serde(flatten)]
    pub summary: EvalSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEval {
    pub method: Method,
    #[serde(flatten)]
    pub summary: EvalSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub models: Vec<ModelInfo>,
    pub tuning: Option<TuneReport>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub detector_id: String,
    pub category: String,
    pub n: Exponent,
    pub entries: usize,
}

/// Every report the command line writes, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Report {
    Eval {
        ap_mode: ApMode,
        detectors: Vec<DetectorEval>,
    },
    BuildModel(BuildReport),
    TuneN(TuneReport),
    Fuse {
        ap_mode: ApMode,
        individual: Vec<DetectorEval>,
        fused: Vec<MethodEval>,
    },
}

fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| -> String {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(
        &widths
            .iter()
            .take(cols)
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .join("  "),
    );
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

fn ap_table(rows: &[(String, &EvalSummary)]) -> String {
    let cats: BTreeSet<&String> = rows
        .iter()
        .flat_map(|(_, s)| s.per_category.keys())
        .collect();
    let mut header = vec!["".to_string()];
    header.extend(cats.iter().map(|c| c.to_string()));
    header.push("mAP".into());
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, s)| {
            let mut r = vec![name.clone()];
            r.extend(cats.iter().map(|c| {
                s.per_category
                    .get(*c)
                    .map_or("-".to_string(), |e| format!("{:.4}", e.ap))
            }));
            r.push(format!("{:.4}", s.map));
            r
        })
        .collect();
    table(&header, &body)
}

impl Report {
    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        match self {
            Report::Eval { ap_mode, detectors } => {
                let rows: Vec<(String, &EvalSummary)> = detectors
                    .iter()
                    .map(|d| (d.detector_id.clone(), &d.summary))
                    .collect();
                format!("AP ({ap_mode})\n{}", ap_table(&rows))
            }
            Report::Fuse {
                ap_mode,
                individual,
                fused,
            } => {
                let rows: Vec<(String, &EvalSummary)> = individual
                    .iter()
                    .map(|d| (d.detector_id.clone(), &d.summary))
                    .chain(
                        fused
                            .iter()
                            .map(|m| (format!("[{}]", m.method), &m.summary)),
                    )
                    .collect();
                format!("AP ({ap_mode})\n{}", ap_table(&rows))
            }
            Report::TuneN(t) => tune_text(t),
            Report::BuildModel(b) => {
                let rows: Vec<Vec<String>> = b
                    .models
                    .iter()
                    .map(|m| {
                        vec![
                            m.detector_id.clone(),
                            m.category.clone(),
                            m.n.to_string(),
                            m.entries.to_string(),
                        ]
                    })
                    .collect();
                let header = ["detector", "category", "n", "entries"].map(String::from);
                let mut out = table(&header, &rows);
                if let Some(t) = &b.tuning {
                    out.push('\n');
                    out.push_str(&tune_text(t));
                }
                for w in &b.warnings {
                    out.push_str(&format!("warning: {w}\n"));
                }
                out
            }
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }
}

fn tune_text(t: &TuneReport) -> String {
    let mut header = vec!["category".to_string()];
    header.extend(t.grid.iter().map(|n| format!("n={n}")));
    header.push("selected".into());
    let rows: Vec<Vec<String>> = t
        .per_category
        .iter()
        .map(|(cat, ct)| {
            let mut r = vec![cat.clone()];
            r.extend(ct.scores.iter().map(|s| format!("{:.4}", s.ap)));
            r.push(ct.selected.to_string());
            r
        })
        .collect();
    table(&header, &rows)
}

/// Writes `<stem>.json` and `<stem>.txt` into `dir`.
pub fn write_report(dir: &Path, stem: &str, report: &Report) -> Result<()> {
    write_json(&dir.join(format!("{stem}.json")), report)?;
    let path = dir.join(format!("{stem}.txt"));
    fs::write(&path, report.to_text()).map_err(|e| Error::io(&path, e))
}

fn evaluate_dumps(run: &LoadedRun, cfg: &RunConfig) -> Result<Vec<DetectorEval>> {
    run.dumps
        .iter()
        .map(|d| {
            Ok(DetectorEval {
                detector_id: d.detector_id().to_string(),
                summary: evaluate(
                    d.records(),
                    &run.gts,
                    &run.categories,
                    cfg.thresholds.match_iou,
                    cfg.ap_mode,
                )?,
            })
        })
        .collect()
}

/// Per-category AP and mAP of each detector dump.
pub fn cmd_eval(cfg: &RunConfig) -> Result<Report> {
    let run = cfg.load()?;
    let report = Report::Eval {
        ap_mode: cfg.ap_mode,
        detectors: evaluate_dumps(&run, cfg)?,
    };
    if let Some(out) = &cfg.out {
        write_report(out, "eval", &report)?;
    }
    Ok(report)
}

/// Exponent search grid; the default is `{1, 2, 4, 8, 16, 32, ∞}`.
pub fn cmd_tune_n(cfg: &RunConfig, grid: &[Exponent]) -> Result<Report> {
    let run = cfg.load()?;
    let report = Report::TuneN(tune_n(
        &run.dumps,
        &run.gts,
        &run.categories,
        grid,
        &cfg.thresholds,
        cfg.ap_mode,
        cfg.seed,
    )?);
    if let Some(out) = &cfg.out {
        write_report(out, "tune_n", &report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    pub n: ExponentChoice,
    pub grid: Vec<Exponent>,
    pub ws: WsOptions,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            n: ExponentChoice::Fixed(Exponent::Finite(2.0)),
            grid: Exponent::default_grid(),
            ws: WsOptions::default(),
        }
    }
}

/// Builds and saves models from the validation split named in `cfg`.
pub fn cmd_build_model(cfg: &RunConfig, opts: &BuildOptions) -> Result<Report> {
    let out = cfg
        .out
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("build-model needs an output directory".into()))?;
    let run = cfg.load()?;
    let tuning = match opts.n {
        ExponentChoice::Auto => Some(tune_n(
            &run.dumps,
            &run.gts,
            &run.categories,
            &opts.grid,
            &cfg.thresholds,
            cfg.ap_mode,
            cfg.seed,
        )?),
        ExponentChoice::Fixed(_) => None,
    };
    let exponent = |cat: &str| match (&tuning, opts.n) {
        (_, ExponentChoice::Fixed(n)) => n,
        (Some(t), _) => t.selected(cat).expect("every category tuned"),
        (None, ExponentChoice::Auto) => unreachable!("auto always tunes"),
    };
    let ws = WsOptions {
        seed: cfg.seed,
        ..opts.ws
    };
    let (trained, warnings) = train(
        &run.dumps,
        &run.gts,
        &run.categories,
        exponent,
        &cfg.thresholds,
        &ws,
    )?;
    save_models(out, &trained)?;
    let report = Report::BuildModel(BuildReport {
        models: trained
            .confidence
            .iter()
            .map(|m| ModelInfo {
                detector_id: m.detector_id.clone(),
                category: m.category.clone(),
                n: m.n,
                entries: m.table().len(),
            })
            .collect(),
        tuning,
        warnings,
    });
    write_report(out, "build_model", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuseOptions {
    pub models: PathBuf,
    pub methods: Vec<Method>,
    /// Operating recall of the static-assignment ablation.
    pub operating_recall: f64,
}

impl FuseOptions {
    pub fn new(models: impl Into<PathBuf>) -> Self {
        FuseOptions {
            models: models.into(),
            methods: vec![Method::Dbf],
            operating_recall: 0.5,
        }
    }
}

fn check_detector_ids(dumps: &[DetectorDump], trained: &TrainedModels) -> Result<()> {
    let dump_ids: BTreeSet<&str> = dumps.iter().map(|d| d.detector_id()).collect();
    let model_ids: BTreeSet<&str> = trained
        .confidence
        .iter()
        .map(|m| m.detector_id.as_str())
        .collect();
    if dump_ids != model_ids {
        return Err(Error::Inconsistent(format!(
            "detector ids differ between dumps {dump_ids:?} and models {model_ids:?}"
        )));
    }
    Ok(())
}

/// Fuses the test dumps with every requested method, writes
/// `fused_<method>.jsonl`, and reports individual and fused APs side by side.
pub fn cmd_fuse(cfg: &RunConfig, opts: &FuseOptions) -> Result<Report> {
    if opts.methods.is_empty() {
        return Err(Error::InvalidArgument("no fusion method requested".into()));
    }
    let run = cfg.load()?;
    let trained = load_models(&opts.models)?;
    check_detector_ids(&run.dumps, &trained)?;
    let params = cfg.thresholds.fusion();
    let mut fused_evals = Vec::new();
    for &method in &opts.methods {
        let fused = fuse_method(
            method,
            &run.dumps,
            &trained,
            &run.categories,
            &params,
            opts.operating_recall,
        )?;
        let records: Vec<DetectionRecord> = flatten(&fused);
        if let Some(out) = &cfg.out {
            write_jsonl(out.join(format!("fused_{method}.jsonl")), &records)?;
        }
        fused_evals.push(MethodEval {
            method,
            summary: evaluate(
                records.iter(),
                &run.gts,
                &run.categories,
                cfg.thresholds.match_iou,
                cfg.ap_mode,
            )?,
        });
    }
    let report = Report::Fuse {
        ap_mode: cfg.ap_mode,
        individual: evaluate_dumps(&run, cfg)?,
        fused: fused_evals,
    };
    if let Some(out) = &cfg.out {
        write_report(out, "fuse", &report)?;
    }
    Ok(report)
}

/// Generates a synthetic world into `out`.
pub fn cmd_synth(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = SynthWorldConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    generate_world(&cfg)?.write(out)
}

/// Renders a saved report as text.
pub fn cmd_report(path: &Path) -> Result<String> {
    Ok(Report::load(path)?.to_text())
}

/// Options for [`run_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOptions {
    pub n: ExponentChoice,
    pub grid: Vec<Exponent>,
    pub thresholds: Thresholds,
    pub ap_mode: ApMode,
    pub seed: u64,
    pub methods: Vec<Method>,
    /// Operating recalls at which `dst` is run.
    pub operating_recalls: Vec<f64>,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            n: ExponentChoice::Auto,
            grid: Exponent::default_grid(),
            thresholds: Thresholds::default(),
            ap_mode: ApMode::default(),
            seed: 0,
            methods: vec![Method::Dbf],
            operating_recalls: vec![0.5],
        }
    }
}

/// mAP of every detector and fusion method on the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub individual: BTreeMap<String, f64>,
    /// Keyed by method name; `dst` entries are `dst@<recall>`.
    pub fused: BTreeMap<String, f64>,
}

impl ExperimentResult {
    pub fn best_individual(&self) -> f64 {
        self.individual
            .values()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn fused(&self, key: &str) -> f64 {
        self.fused[key]
    }
}

/// Key under which `dst` at `recall` is stored in [`ExperimentResult::fused`].
pub fn dst_key(recall: f64) -> String {
    format!("dst@{recall:.2}")
}

/// Trains on `(val_gts, val_dumps)` and evaluates every requested method on
/// `(test_gts, test_dumps)`, entirely in memory.
pub fn run_experiment(
    val: (&[GroundTruthRecord], &[DetectorDump]),
    test: (&[GroundTruthRecord], &[DetectorDump]),
    opts: &ExperimentOptions,
) -> Result<ExperimentResult> {
    let (val_gts, val_dumps) = val;
    let (test_gts, test_dumps) = test;
    let categories = resolve_categories(val_gts, None)?;
    let thr = &opts.thresholds;
    let tuning = match opts.n {
        ExponentChoice::Auto if val_dumps.len() > 1 => Some(tune_n(
            val_dumps,
            val_gts,
            &categories,
            &opts.grid,
            thr,
            opts.ap_mode,
            opts.seed,
        )?),
        _ => None,
    };
    let exponent = |cat: &str| match (opts.n, &tuning) {
        (ExponentChoice::Fixed(n), _) => n,
        (_, Some(t)) => t.selected(cat).expect("every category tuned"),
        (_, None) => Exponent::Finite(2.0),
    };
    let ws = WsOptions {
        seed: opts.seed,
        ..WsOptions::default()
    };
    let needs_baselines = opts
        .methods
        .iter()
        .any(|m| matches!(m, Method::Platt | Method::Ws | Method::Bayes));
    let trained = if needs_baselines {
        train(val_dumps, val_gts, &categories, exponent, thr, &ws)?.0
    } else {
        let sweeps = validation_sweeps(val_dumps, val_gts, &categories, thr.match_iou)?;
        TrainedModels {
            confidence: models_from_sweeps(&sweeps, exponent)?,
            sweeps,
            baselines: BaselineModels::default(),
        }
    };

    let eval = |records: &[DetectionRecord]| -> Result<f64> {
        Ok(evaluate(
            records.iter(),
            test_gts,
            &categories,
            thr.match_iou,
            opts.ap_mode,
        )?
        .map)
    };
    let mut individual = BTreeMap::new();
    for d in test_dumps {
        let records: Vec<DetectionRecord> = d.records().cloned().collect();
        individual.insert(d.detector_id().to_string(), eval(&records)?);
    }
    let mut fused = BTreeMap::new();
    for &method in &opts.methods {
        let runs: Vec<(String, f64)> = if method == Method::Dst {
            opts.operating_recalls
                .iter()
                .map(|&r| (dst_key(r), r))
                .collect()
        } else {
            vec![(method.to_string(), 0.0)]
        };
        for (key, recall) in runs {
            let out = fuse_method(
                method,
                test_dumps,
                &trained,
                &categories,
                &thr.fusion(),
                recall,
            )?;
            fused.insert(key, eval(&flatten(&out))?);
        }
    }
    Ok(ExperimentResult { individual, fused })
}
