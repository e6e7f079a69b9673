//! Confidence models: precision-recall lookup tables that turn a raw
//! detection score into a basic probability assignment over
//! {target, non-target, intermediate}.
//!
//! For a score `c` with validation precision `p(c)` and recall `r(c)` the
//! assignment is
//!
//! ```text
//! m(T)  = p(c)
//! m(¬T) = min(r(c)^n, 1 - p(c))
//! m(I)  = max(0, 1 - p(c) - r(c)^n)
//! ```
//!
//! where `1 - r^n` is the precision curve of a theoretical reference
//! detector. The `min`/`max` only bite when the real detector beats the
//! reference at that recall.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::evaluation::{compute_pr_curve, LabeledDetection, PrCurve, PrPoint};

/// Floor applied to every interpolated component before renormalizing.
pub const MASS_FLOOR: f64 = 1e-6;

const SUM_TOLERANCE: f64 = 1e-9;

/// Basic probability assignment over {T, ¬T, I}; the empty set has mass 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassFunction {
    target: f64,
    non_target: f64,
    uncertain: f64,
}

impl MassFunction {
    pub fn new(target: f64, non_target: f64, uncertain: f64) -> Result<Self> {
        let parts = [target, non_target, uncertain];
        if parts.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!(
                "mass components must lie in [0, 1], got {parts:?}"
            )));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "mass components must sum to 1, got {parts:?}"
            )));
        }
        Ok(MassFunction {
            target,
            non_target,
            uncertain,
        })
    }

    /// Normalizes non-negative weights into a mass function.
    pub fn from_weights(target: f64, non_target: f64, uncertain: f64) -> Result<Self> {
        let total = target + non_target + uncertain;
        if !(total > 0.0) || target < 0.0 || non_target < 0.0 || uncertain < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "cannot normalize weights ({target}, {non_target}, {uncertain})"
            )));
        }
        Ok(MassFunction {
            target: target / total,
            non_target: non_target / total,
            uncertain: uncertain / total,
        })
    }

    /// Total ignorance, `(0, 0, 1)`. Identity element of Dempster's rule.
    pub const fn vacuous() -> Self {
        MassFunction {
            target: 0.0,
            non_target: 0.0,
            uncertain: 1.0,
        }
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn non_target(&self) -> f64 {
        self.non_target
    }

    pub fn uncertain(&self) -> f64 {
        self.uncertain
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.target, self.non_target, self.uncertain]
    }

    /// Belief in target minus belief in non-target, in `[-1, 1]`.
    pub fn fused_score(&self) -> f64 {
        self.target - self.non_target
    }

    /// Every component raised to at least [`MASS_FLOOR`], then renormalized.
    pub fn floored(&self) -> Self {
        let t = self.target.max(MASS_FLOOR);
        let f = self.non_target.max(MASS_FLOOR);
        let i = self.uncertain.max(MASS_FLOOR);
        let total = t + f + i;
        MassFunction {
            target: t / total,
            non_target: f / total,
            uncertain: i / total,
        }
    }
}

/// Exponent of the theoretical detector's precision curve `1 - r^n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exponent {
    Finite(f64),
    /// Limit `n -> ∞`: the perfect detector.
    Infinite,
}

impl Exponent {
    pub fn finite(n: f64) -> Result<Self> {
        if n > 0.0 && n.is_finite() {
            Ok(Exponent::Finite(n))
        } else if n == f64::INFINITY {
            Ok(Exponent::Infinite)
        } else {
            Err(Error::InvalidArgument(format!(
                "theoretical detector exponent must be positive, got {n}"
            )))
        }
    }

    /// `r^n`, with `r^∞ = 0` for `r < 1` and `1` at `r = 1`.
    pub fn recall_power(self, r: f64) -> f64 {
        match self {
            Exponent::Finite(n) => r.powf(n),
            Exponent::Infinite => {
                if r < 1.0 {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Exponent::Finite(n) => n,
            Exponent::Infinite => f64::INFINITY,
        }
    }

    /// The default search grid `{1, 2, 4, 8, 16, 32, ∞}`.
    pub fn default_grid() -> Vec<Exponent> {
        [1.0, 2.0, 4.0, 8.0, 16.0, 32.0]
            .into_iter()
            .map(Exponent::Finite)
            .chain(std::iter::once(Exponent::Infinite))
            .collect()
    }
}

impl PartialOrd for Exponent {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.as_f64().partial_cmp(&other.as_f64())
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exponent::Finite(n) => write!(f, "{n}"),
            Exponent::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Exponent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinity" | "Infinity" | "∞" => Ok(Exponent::Infinite),
            other => other
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("invalid exponent `{other}`")))
                .and_then(Exponent::finite),
        }
    }
}

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Exponent::Finite(n) => s.serialize_f64(*n),
            Exponent::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Num(n) => Exponent::finite(n),
            Raw::Text(t) => t.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

/// Precision of the theoretical detector at recall `r`: `1 - r^n`.
pub fn theoretical_precision(r: f64, n: Exponent) -> Result<f64> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::InvalidArgument(format!(
            "recall must lie in [0, 1], got {r}"
        )));
    }
    if let Exponent::Finite(v) = n {
        Exponent::finite(v)?;
    }
    Ok(1.0 - n.recall_power(r))
}

/// Mass at one operating point `(p, r)`, clamped so `m(I)` never goes
/// negative while `m(T) = p` is kept exactly.
pub fn operating_point_mass(precision: f64, recall: f64, n: Exponent) -> MassFunction {
    let target = precision.clamp(0.0, 1.0);
    let rest = 1.0 - target;
    let reference = n.recall_power(recall.clamp(0.0, 1.0));
    let non_target = reference.min(rest);
    MassFunction {
        target,
        non_target,
        uncertain: (rest - non_target).max(0.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableEntry {
    pub score: f64,
    pub mass: MassFunction,
}

#[derive(Serialize, Deserialize)]
struct RawEntry {
    score: f64,
    #[serde(rename = "mT")]
    m_t: f64,
    #[serde(rename = "mNotT")]
    m_not_t: f64,
    #[serde(rename = "mI")]
    m_i: f64,
}

impl Serialize for TableEntry {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RawEntry {
            score: self.score,
            m_t: self.mass.target,
            m_not_t: self.mass.non_target,
            m_i: self.mass.uncertain,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TableEntry {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawEntry::deserialize(d)?;
        let mass =
            MassFunction::new(raw.m_t, raw.m_not_t, raw.m_i).map_err(serde::de::Error::custom)?;
        Ok(TableEntry {
            score: raw.score,
            mass,
        })
    }
}

/// Per-detector, per-category lookup from raw score to mass.
///
/// Serialized as `{detector_id, category, n, table: [{score, mT, mNotT, mI}]}`
/// with scores ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceModel {
    pub detector_id: String,
    pub category: String,
    pub n: Exponent,
    table: Vec<TableEntry>,
}

/// Input to a dynamic assignment: a detector's score, or nothing when the
/// detector has no detection in the cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation {
    Score(f64),
    Absent,
}

impl From<Option<f64>> for Observation {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Observation::Absent, Observation::Score)
    }
}

impl ConfidenceModel {
    /// Builds a model from a table; scores must be finite and strictly
    /// increasing with at least two entries.
    pub fn from_table(
        detector_id: impl Into<String>,
        category: impl Into<String>,
        n: Exponent,
        table: Vec<TableEntry>,
    ) -> Result<Self> {
        let model = ConfidenceModel {
            detector_id: detector_id.into(),
            category: category.into(),
            n,
            table,
        };
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<()> {
        let insufficient = |reason: String| Error::InsufficientData {
            detector: self.detector_id.clone(),
            category: self.category.clone(),
            reason,
        };
        if self.table.len() < 2 {
            return Err(insufficient(format!(
                "{} distinct score(s); interpolation needs at least 2",
                self.table.len()
            )));
        }
        if self.table.iter().any(|e| !e.score.is_finite())
            || self.table.windows(2).any(|w| w[0].score >= w[1].score)
        {
            return Err(insufficient(
                "table scores must be finite and strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn table(&self) -> &[TableEntry] {
        &self.table
    }

    /// Sweeps the labeled validation detections and tabulates their masses.
    pub fn build(
        detector_id: impl Into<String>,
        category: impl Into<String>,
        labeled_val: &[LabeledDetection],
        n_tobj: usize,
        n: Exponent,
    ) -> Result<Self> {
        let curve = compute_pr_curve(labeled_val, n_tobj)?;
        Self::from_curve(detector_id, category, &curve, n)
    }

    /// Table from a validation sweep: one entry per distinct score, at the
    /// last (largest cumulative count) occurrence of that score.
    pub fn from_curve(
        detector_id: impl Into<String>,
        category: impl Into<String>,
        curve: &PrCurve,
        n: Exponent,
    ) -> Result<Self> {
        let mut table: Vec<TableEntry> = curve
            .collapsed()
            .into_iter()
            .map(|p| TableEntry {
                score: p.score,
                mass: operating_point_mass(p.precision, p.recall, n),
            })
            .collect();
        table.reverse();
        Self::from_table(detector_id, category, n, table)
    }

    /// Indices `(i, j)` and weight of `j` for linear interpolation, with
    /// clamping at both ends.
    fn bracket(&self, score: f64) -> (usize, usize, f64) {
        let last = self.table.len() - 1;
        if score <= self.table[0].score {
            return (0, 0, 0.0);
        }
        if score >= self.table[last].score {
            return (last, last, 0.0);
        }
        // first entry strictly above score
        let j = self.table.partition_point(|e| e.score <= score);
        let i = j - 1;
        let (ci, cj) = (self.table[i].score, self.table[j].score);
        (i, j, (score - ci) / (cj - ci))
    }

    /// Linearly interpolated table mass, without the floor.
    pub fn interpolate(&self, score: f64) -> [f64; 3] {
        let (i, j, w) = self.bracket(score);
        let a = self.table[i].mass.to_array();
        let b = self.table[j].mass.to_array();
        [0, 1, 2].map(|k| (1.0 - w) * a[k] + w * b[k])
    }

    /// Interpolated validation precision at `score`, clamped at the ends.
    pub fn precision(&self, score: f64) -> f64 {
        self.interpolate(score)[0]
    }

    /// Dynamic basic probability assignment for one observation.
    pub fn assign(&self, obs: Observation) -> MassFunction {
        match obs {
            Observation::Absent => MassFunction::vacuous(),
            Observation::Score(score) => {
                let [t, f, i] = self.interpolate(score);
                MassFunction {
                    target: t,
                    non_target: f,
                    uncertain: i,
                }
                .floored()
            }
        }
    }
}

/// Builds a confidence model from labeled validation detections.
pub fn build_confidence_model(
    detector_id: &str,
    category: &str,
    labeled_val: &[LabeledDetection],
    n_tobj: usize,
    n: Exponent,
) -> Result<ConfidenceModel> {
    ConfidenceModel::build(detector_id, category, labeled_val, n_tobj, n)
}

/// Dynamic assignment; see [`ConfidenceModel::assign`].
pub fn assign_bpa(model: &ConfidenceModel, obs: Observation) -> MassFunction {
    model.assign(obs)
}

/// Static assignment at one fixed operating point: a single mass for every
/// score at or above the operating threshold, total ignorance below it.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticAssignment {
    pub threshold: f64,
    pub operating_point: PrPoint,
    pub mass: MassFunction,
}

impl StaticAssignment {
    /// Picks the highest threshold whose recall reaches `operating_recall`.
    ///
    /// Fails when `operating_recall` lies outside the recall range the
    /// sweep actually covers.
    pub fn new(curve: &PrCurve, n: Exponent, operating_recall: f64) -> Result<Self> {
        let points = curve.collapsed();
        let unreachable = || {
            Error::InvalidArgument(format!(
                "operating recall {operating_recall} is not reachable on a sweep covering [{}, {}]",
                points.first().map_or(0.0, |p| p.recall),
                points.last().map_or(0.0, |p| p.recall)
            ))
        };
        let first = points.first().ok_or_else(unreachable)?;
        if !(0.0..=1.0).contains(&operating_recall) || operating_recall < first.recall {
            return Err(unreachable());
        }
        let point = *points
            .iter()
            .find(|p| p.recall >= operating_recall)
            .ok_or_else(unreachable)?;
        Ok(StaticAssignment {
            threshold: point.score,
            operating_point: point,
            mass: operating_point_mass(point.precision, point.recall, n).floored(),
        })
    }

    pub fn assign(&self, obs: Observation) -> MassFunction {
        match obs {
            Observation::Score(s) if s >= self.threshold => self.mass,
            _ => MassFunction::vacuous(),
        }
    }
}

/// One-shot static assignment of `score` at `operating_recall`.
pub fn static_bpa(
    curve: &PrCurve,
    n: Exponent,
    score: f64,
    operating_recall: f64,
) -> Result<MassFunction> {
    Ok(StaticAssignment::new(curve, n, operating_recall)?.assign(Observation::Score(score)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DetectionRecord;
    use crate::evaluation::Label;
    use crate::geometry::BBox;

    fn lab(items: &[(f64, Label)]) -> Vec<LabeledDetection> {
        items
            .iter()
            .map(|&(s, label)| LabeledDetection {
                record: DetectionRecord::new("i", "c", BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(), s)
                    .unwrap(),
                label,
            })
            .collect()
    }

    fn close(a: [f64; 3], b: [f64; 3], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    use Label::*;

    #[test]
    fn theoretical_precision_values() {
        let two = Exponent::Finite(2.0);
        assert_eq!(theoretical_precision(0.0, two).unwrap(), 1.0);
        assert_eq!(theoretical_precision(0.0, Exponent::Infinite).unwrap(), 1.0);
        assert_eq!(theoretical_precision(0.5, two).unwrap(), 0.75);
        assert_eq!(theoretical_precision(0.5, Exponent::Infinite).unwrap(), 1.0);
        assert_eq!(theoretical_precision(1.0, Exponent::Infinite).unwrap(), 0.0);
        assert!(theoretical_precision(0.5, Exponent::Finite(0.0)).is_err());
        assert!(theoretical_precision(0.5, Exponent::Finite(-1.0)).is_err());
        assert!(theoretical_precision(1.5, two).is_err());
        assert!(Exponent::finite(0.0).is_err());
    }

    #[test]
    fn exponent_parse_and_json() {
        assert_eq!("inf".parse::<Exponent>().unwrap(), Exponent::Infinite);
        assert_eq!("4".parse::<Exponent>().unwrap(), Exponent::Finite(4.0));
        assert!("-2".parse::<Exponent>().is_err());
        assert_eq!(
            serde_json::to_string(&Exponent::Infinite).unwrap(),
            "\"inf\""
        );
        assert_eq!(
            serde_json::from_str::<Exponent>("2").unwrap(),
            Exponent::Finite(2.0)
        );
        assert_eq!(
            serde_json::from_str::<Exponent>("\"inf\"").unwrap(),
            Exponent::Infinite
        );
    }

    #[test]
    fn operating_point_unclamped() {
        let m = operating_point_mass(0.7, 0.5, Exponent::Finite(2.0));
        assert!(close(m.to_array(), [0.7, 0.25, 0.05], 1e-15));
    }

    #[test]
    fn operating_point_clamped_when_detector_beats_reference() {
        let m = operating_point_mass(0.9, 0.5, Exponent::Finite(1.0));
        assert!(close(m.to_array(), [0.9, 0.1, 0.0], 1e-15));
    }

    #[test]
    fn build_three_point_model() {
        let labels = lab(&[
            (0.9, TruePositive),
            (0.5, FalsePositive),
            (0.3, TruePositive),
        ]);
        let n = Exponent::Finite(2.0);
        let model = build_confidence_model("d", "c", &labels, 2, n).unwrap();
        let scores: Vec<f64> = model.table().iter().map(|e| e.score).collect();
        assert_eq!(scores, vec![0.3, 0.5, 0.9]);
        // (p, r) = (2/3, 1), (1/2, 1/2), (1, 1/2)
        let expected = [
            operating_point_mass(2.0 / 3.0, 1.0, n),
            operating_point_mass(0.5, 0.5, n),
            operating_point_mass(1.0, 0.5, n),
        ];
        for (e, m) in model.table().iter().zip(expected) {
            assert_eq!(e.mass, m);
        }
        // (2/3, 1): m(¬T) clamped to 1/3, m(I) = 0
        assert!(close(
            model.table()[0].mass.to_array(),
            [2.0 / 3.0, 1.0 / 3.0, 0.0],
            1e-15
        ));
        assert!(close(
            model.table()[1].mass.to_array(),
            [0.5, 0.25, 0.25],
            1e-15
        ));
        assert!(close(
            model.table()[2].mass.to_array(),
            [1.0, 0.0, 0.0],
            1e-15
        ));
    }

    #[test]
    fn single_distinct_score_is_an_error() {
        let labels = lab(&[(0.5, TruePositive), (0.5, FalsePositive)]);
        assert!(matches!(
            build_confidence_model("d", "c", &labels, 1, Exponent::Finite(2.0)),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn duplicates_collapse_to_largest_count() {
        let labels = lab(&[
            (0.9, TruePositive),
            (0.5, TruePositive),
            (0.5, FalsePositive),
            (0.5, FalsePositive),
        ]);
        let model = build_confidence_model("d", "c", &labels, 2, Exponent::Finite(1.0)).unwrap();
        assert_eq!(model.table().len(), 2);
        assert_eq!(model.table()[0].mass.target(), 0.5);
    }

    #[test]
    fn all_true_positives_perfect_reference() {
        let labels = lab(&[
            (0.9, TruePositive),
            (0.7, TruePositive),
            (0.2, TruePositive),
            (0.1, TruePositive),
        ]);
        let model = build_confidence_model("d", "c", &labels, 4, Exponent::Infinite).unwrap();
        for e in model.table() {
            assert_eq!(e.mass.to_array(), [1.0, 0.0, 0.0]);
        }
    }

    fn two_point_model() -> ConfidenceModel {
        ConfidenceModel::from_table(
            "d",
            "c",
            Exponent::Finite(2.0),
            vec![
                TableEntry {
                    score: 0.0,
                    mass: MassFunction::new(0.2, 0.5, 0.3).unwrap(),
                },
                TableEntry {
                    score: 1.0,
                    mass: MassFunction::new(0.8, 0.1, 0.1).unwrap(),
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn interpolation_midpoint() {
        let m = two_point_model().assign(Observation::Score(0.5));
        assert!(close(m.to_array(), [0.5, 0.3, 0.2], 1e-12));
    }

    #[test]
    fn endpoints_clamp() {
        let model = two_point_model();
        assert_eq!(
            model.assign(Observation::Score(-1e9)),
            model.table()[0].mass.floored()
        );
        assert_eq!(
            model.assign(Observation::Score(1e9)),
            model.table()[1].mass.floored()
        );
    }

    #[test]
    fn absent_is_vacuous() {
        assert_eq!(
            two_point_model().assign(Observation::Absent).to_array(),
            [0.0, 0.0, 1.0]
        );
    }

    #[test]
    fn floor_keeps_components_positive() {
        let m = MassFunction::new(1.0, 0.0, 0.0).unwrap().floored();
        assert!(m.non_target() > 0.0 && m.uncertain() > 0.0);
        assert!((m.to_array().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn model_json_field_names() {
        let json = serde_json::to_value(two_point_model()).unwrap();
        let entry = &json["table"][0];
        for key in ["score", "mT", "mNotT", "mI"] {
            assert!(entry.get(key).is_some(), "missing {key}");
        }
        assert_eq!(json["n"], 2.0);
        let back: ConfidenceModel = serde_json::from_value(json).unwrap();
        assert_eq!(back, two_point_model());
    }

    fn sweep(points: &[(f64, f64, f64)]) -> PrCurve {
        PrCurve {
            points: points
                .iter()
                .map(|&(score, precision, recall)| PrPoint {
                    score,
                    precision,
                    recall,
                })
                .collect(),
            n_tobj: 10,
        }
    }

    #[test]
    fn static_above_and_below_threshold() {
        let curve = sweep(&[(0.9, 1.0, 0.1), (0.7, 0.8, 0.4), (0.3, 0.5, 0.5)]);
        let n = Exponent::Finite(2.0);
        let above = static_bpa(&curve, n, 0.75, 0.4).unwrap();
        assert!(close(above.to_array(), [0.8, 0.16, 0.04], 1e-12));
        assert_eq!(
            static_bpa(&curve, n, 0.69, 0.4).unwrap().to_array(),
            [0.0, 0.0, 1.0]
        );
    }

    #[test]
    fn static_unreachable_recall() {
        let curve = sweep(&[(0.9, 1.0, 0.1), (0.7, 0.8, 0.4)]);
        let n = Exponent::Finite(2.0);
        assert!(static_bpa(&curve, n, 0.5, 0.0).is_err());
        assert!(static_bpa(&curve, n, 0.5, 0.5).is_err());
        assert!(static_bpa(&PrCurve::default(), n, 0.5, 0.4).is_err());
    }

    #[test]
    fn reference_mass_strictly_decreasing_in_n() {
        for k in 1..10 {
            let r = k as f64 / 10.0;
            let grid = Exponent::default_grid();
            for w in grid.windows(2) {
                assert!(w[0].recall_power(r) > w[1].recall_power(r));
            }
        }
    }
}
