//! Confusion-based metrics, Cohen's kappa, ROC/AUC, fold aggregation with
//! confidence intervals, and the specialist operating point.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// A ratio that may be undefined because its denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Value(f64),
    NotDefined,
}

impl Metric {
    pub const NOT_DEFINED: &'static str = "NOT_DEFINED";

    fn ratio(num: u64, den: u64) -> Metric {
        if den == 0 {
            Metric::NotDefined
        } else {
            Metric::Value(num as f64 / den as f64)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Metric::Value(v) => Some(v),
            Metric::NotDefined => None,
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, Metric::Value(_))
    }
}

impl From<Option<f64>> for Metric {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Metric::NotDefined, Metric::Value)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Value(v) => write!(f, "{v}"),
            Metric::NotDefined => f.write_str(Self::NOT_DEFINED),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Metric::Value(v) => s.serialize_f64(*v),
            Metric::NotDefined => s.serialize_str(Self::NOT_DEFINED),
        }
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Metric::Value(v)),
            Repr::Text(t) if t == Metric::NOT_DEFINED => Ok(Metric::NotDefined),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("expected a number or NOT_DEFINED, got `{t}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        ConfusionCounts { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn from_predictions(predicted: &[bool], gold: &[bool]) -> Result<Self> {
        if predicted.len() != gold.len() {
            return Err(Error::Input(format!(
                "{} predictions for {} labels",
                predicted.len(),
                gold.len()
            )));
        }
        let mut c = ConfusionCounts::default();
        for (&p, &g) in predicted.iter().zip(gold) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        ConfusionCounts::new(self.tp + o.tp, self.fp + o.fp, self.tn + o.tn, self.fn_ + o.fn_)
    }
}

/// Counts with an item positive iff `score ≥ threshold`.
pub fn confusion(scores: &[f64], labels: &[bool], threshold: f64) -> Result<ConfusionCounts> {
    if scores.is_empty() {
        return Err(Error::Input("no scores".into()));
    }
    let predicted: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
    ConfusionCounts::from_predictions(&predicted, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub accuracy: Metric,
    pub sensitivity: Metric,
    pub specificity: Metric,
    pub precision: Metric,
    pub kappa: Metric,
}

pub fn binary_metrics(c: &ConfusionCounts) -> Result<BinaryMetrics> {
    let n = c.total();
    if n == 0 {
        return Err(Error::Input("confusion matrix is empty".into()));
    }
    // (p_o − p_e)/(1 − p_e) scaled by n² on top and bottom, in exact integers.
    let (tp, fp, tn, fn_) = (c.tp as i128, c.fp as i128, c.tn as i128, c.fn_ as i128);
    let num = 2 * (tp * tn - fn_ * fp);
    let den = (tp + fp) * (fp + tn) + (tp + fn_) * (fn_ + tn);
    let kappa = if den == 0 {
        Metric::NotDefined
    } else {
        Metric::Value(num as f64 / den as f64)
    };
    Ok(BinaryMetrics {
        accuracy: Metric::ratio(c.tp + c.tn, n),
        sensitivity: Metric::ratio(c.tp, c.tp + c.fn_),
        specificity: Metric::ratio(c.tn, c.tn + c.fp),
        precision: Metric::ratio(c.tp, c.tp + c.fp),
        kappa,
    })
}

/// Cohen's kappa from paired labels, computed from observed agreement and
/// the product of marginal frequencies.
pub fn cohen_kappa(a: &[bool], b: &[bool]) -> Result<Metric> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Input(format!("cannot pair {} with {} labels", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let p_o = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let pa = a.iter().filter(|&&x| x).count() as f64 / n;
    let pb = b.iter().filter(|&&x| x).count() as f64 / n;
    let p_e = pa * pb + (1.0 - pa) * (1.0 - pb);
    Ok(if p_e >= 1.0 {
        Metric::NotDefined
    } else {
        Metric::Value((p_o - p_e) / (1.0 - p_e))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Score threshold reaching this point; +∞ for the origin.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Input(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Input(format!("score {s} is not a number")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Input("ROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        auc += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: s,
        });
    }
    Ok(RocCurve {
        points,
        auc: auc / (pos as f64 * neg as f64),
    })
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("fpr,tpr,threshold\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{}\n", p.fpr, p.tpr, p.threshold));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::raster::ensure_parent(path)?;
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub low: f64,
    pub high: f64,
}

/// Two-sided 95% quantile of Student's t.
pub fn t_quantile_975(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

/// Mean with a 95% t-interval over fold-level values.
pub fn aggregate_folds(values: &[f64]) -> Result<Interval> {
    if values.len() < 2 {
        return Err(Error::Input(format!(
            "need at least 2 fold values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let half = if var == 0.0 {
        0.0
    } else {
        t_quantile_975(values.len() - 1) * var.sqrt() / n.sqrt()
    };
    Ok(Interval {
        mean,
        low: mean - half,
        high: mean + half,
    })
}

/// 95% Wilson score interval for `successes` out of `n`.
pub fn wilson_interval(successes: u64, n: u64) -> Option<(f64, f64)> {
    if n == 0 {
        return None;
    }
    let z = 1.959_963_984_540_054;
    let n = n as f64;
    let p = successes as f64 / n;
    let centre = p + z * z / (2.0 * n);
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt();
    let den = 1.0 + z * z / n;
    Some((((centre - half) / den).max(0.0), ((centre + half) / den).min(1.0)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateMode {
    /// Mean of fold-level metrics with a t-interval.
    #[default]
    FoldMean,
    /// Metrics on predictions concatenated across folds, with Wilson
    /// intervals for rates and normal-approximation intervals for kappa/AUC.
    Pooled,
}

impl std::str::FromStr for AggregateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fold_mean" => Ok(AggregateMode::FoldMean),
            "pooled" => Ok(AggregateMode::Pooled),
            other => Err(Error::Config(format!("unknown aggregate mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub point: Metric,
    pub ci_low: Metric,
    pub ci_high: Metric,
}

impl Estimate {
    pub const UNDEFINED: Estimate = Estimate {
        point: Metric::NotDefined,
        ci_low: Metric::NotDefined,
        ci_high: Metric::NotDefined,
    };

    fn new(point: f64, low: f64, high: f64) -> Self {
        Estimate {
            point: Metric::Value(point),
            ci_low: Metric::Value(low.min(point)),
            ci_high: Metric::Value(high.max(point)),
        }
    }

    fn clamped(iv: Interval, lo: f64, hi: f64) -> Self {
        Estimate::new(iv.mean, iv.low.max(lo), iv.high.min(hi))
    }
}

/// Scores and gold labels of one test fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPredictions {
    pub fold: usize,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wilson {
    pub accuracy: Option<(f64, f64)>,
    pub sensitivity: Option<(f64, f64)>,
    pub specificity: Option<(f64, f64)>,
    pub precision: Option<(f64, f64)>,
}

impl Wilson {
    fn of(c: &ConfusionCounts) -> Self {
        Wilson {
            accuracy: wilson_interval(c.tp + c.tn, c.total()),
            sensitivity: wilson_interval(c.tp, c.tp + c.fn_),
            specificity: wilson_interval(c.tn, c.tn + c.fp),
            precision: wilson_interval(c.tp, c.tp + c.fp),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n: usize,
    pub counts: ConfusionCounts,
    pub metrics: BinaryMetrics,
    pub auc: Metric,
    pub wilson: Wilson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecialistPoint {
    pub n: usize,
    pub counts: ConfusionCounts,
    pub metrics: BinaryMetrics,
}

impl SpecialistPoint {
    /// (sensitivity, specificity), the coordinates overlaid on ROC plots as
    /// (1 − specificity, sensitivity).
    pub fn operating_point(&self) -> (Metric, Metric) {
        (self.metrics.sensitivity, self.metrics.specificity)
    }
}

/// Pooled specialist gradings treated as hard predictions against gold.
pub fn specialist_point(specialist: &[bool], gold: &[bool]) -> Result<SpecialistPoint> {
    if specialist.is_empty() {
        return Err(Error::Input("no specialist-graded records".into()));
    }
    let counts = ConfusionCounts::from_predictions(specialist, gold)?;
    Ok(SpecialistPoint {
        n: specialist.len(),
        counts,
        metrics: binary_metrics(&counts)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub aggregate: AggregateMode,
    pub threshold: f64,
    pub n_folds: usize,
    pub accuracy: Estimate,
    pub kappa: Estimate,
    pub sensitivity: Estimate,
    pub specificity: Estimate,
    pub precision: Estimate,
    pub auc: Estimate,
    pub per_fold: Vec<FoldMetrics>,
    #[serde(default)]
    pub specialist: Option<SpecialistPoint>,
}

fn fold_metrics(f: &FoldPredictions, threshold: f64) -> Result<FoldMetrics> {
    let counts = confusion(&f.scores, &f.labels, threshold)?;
    let auc = match roc_auc(&f.scores, &f.labels) {
        Ok(r) => Metric::Value(r.auc),
        Err(_) => Metric::NotDefined,
    };
    Ok(FoldMetrics {
        fold: f.fold,
        n: f.scores.len(),
        counts,
        metrics: binary_metrics(&counts)?,
        auc,
        wilson: Wilson::of(&counts),
    })
}

fn fold_mean(values: impl Iterator<Item = Metric>, lo: f64, hi: f64) -> Estimate {
    let defined: Vec<f64> = values.filter_map(Metric::value).collect();
    match defined.len() {
        0 => Estimate::UNDEFINED,
        1 => Estimate {
            point: Metric::Value(defined[0]),
            ..Estimate::UNDEFINED
        },
        _ => Estimate::clamped(aggregate_folds(&defined).expect("two or more values"), lo, hi),
    }
}

fn wilson_estimate(point: Metric, iv: Option<(f64, f64)>) -> Estimate {
    match (point, iv) {
        (Metric::Value(p), Some((l, h))) => Estimate::new(p, l, h),
        _ => Estimate::UNDEFINED,
    }
}

const Z95: f64 = 1.959_963_984_540_054;

/// Normal-approximation interval for kappa using the large-sample standard
/// error √(p_o(1 − p_o)) / ((1 − p_e)√n).
fn kappa_estimate(c: &ConfusionCounts, kappa: Metric) -> Estimate {
    let Metric::Value(k) = kappa else {
        return Estimate::UNDEFINED;
    };
    let n = c.total() as f64;
    let p_o = (c.tp + c.tn) as f64 / n;
    let p_e = ((c.tp + c.fp) as f64 * (c.tp + c.fn_) as f64 + (c.fn_ + c.tn) as f64 * (c.fp + c.tn) as f64) / (n * n);
    let se = (p_o * (1.0 - p_o) / n).sqrt() / (1.0 - p_e);
    Estimate::new(k, (k - Z95 * se).max(-1.0), (k + Z95 * se).min(1.0))
}

/// Hanley–McNeil standard error for an AUC.
fn auc_estimate(auc: f64, pos: usize, neg: usize) -> Estimate {
    let (np, nn) = (pos as f64, neg as f64);
    let q1 = auc / (2.0 - auc);
    let q2 = 2.0 * auc * auc / (1.0 + auc);
    let var = (auc * (1.0 - auc) + (np - 1.0) * (q1 - auc * auc) + (nn - 1.0) * (q2 - auc * auc)) / (np * nn);
    let se = var.max(0.0).sqrt();
    Estimate::new(auc, (auc - Z95 * se).max(0.0), (auc + Z95 * se).min(1.0))
}

/// Builds the summary report from per-fold test predictions.
pub fn build_report(folds: &[FoldPredictions], threshold: f64, mode: AggregateMode) -> Result<MetricsReport> {
    if folds.is_empty() {
        return Err(Error::Input("no folds to report".into()));
    }
    let per_fold = folds
        .iter()
        .map(|f| fold_metrics(f, threshold))
        .collect::<Result<Vec<_>>>()?;
    let (accuracy, kappa, sensitivity, specificity, precision, auc) = match mode {
        AggregateMode::FoldMean => {
            let pick = |g: fn(&FoldMetrics) -> Metric, lo, hi| fold_mean(per_fold.iter().map(g), lo, hi);
            (
                pick(|f| f.metrics.accuracy, 0.0, 1.0),
                pick(|f| f.metrics.kappa, -1.0, 1.0),
                pick(|f| f.metrics.sensitivity, 0.0, 1.0),
                pick(|f| f.metrics.specificity, 0.0, 1.0),
                pick(|f| f.metrics.precision, 0.0, 1.0),
                pick(|f| f.auc, 0.0, 1.0),
            )
        }
        AggregateMode::Pooled => {
            let scores: Vec<f64> = folds.iter().flat_map(|f| f.scores.iter().copied()).collect();
            let labels: Vec<bool> = folds.iter().flat_map(|f| f.labels.iter().copied()).collect();
            let c = confusion(&scores, &labels, threshold)?;
            let m = binary_metrics(&c)?;
            let w = Wilson::of(&c);
            let pos = labels.iter().filter(|&&l| l).count();
            let auc = match roc_auc(&scores, &labels) {
                Ok(r) => auc_estimate(r.auc, pos, labels.len() - pos),
                Err(_) => Estimate::UNDEFINED,
            };
            (
                wilson_estimate(m.accuracy, w.accuracy),
                kappa_estimate(&c, m.kappa),
                wilson_estimate(m.sensitivity, w.sensitivity),
                wilson_estimate(m.specificity, w.specificity),
                wilson_estimate(m.precision, w.precision),
                auc,
            )
        }
    };
    Ok(MetricsReport {
        aggregate: mode,
        threshold,
        n_folds: folds.len(),
        accuracy,
        kappa,
        sensitivity,
        specificity,
        precision,
        auc,
        per_fold,
        specialist: None,
    })
}

impl MetricsReport {
    pub fn rows(&self) -> [(&'static str, Estimate); 6] {
        [
            ("accuracy", self.accuracy),
            ("kappa", self.kappa),
            ("sensitivity", self.sensitivity),
            ("specificity", self.specificity),
            ("precision", self.precision),
            ("auc", self.auc),
        ]
    }

    /// `metric,point,ci_low,ci_high`, one row per summary metric plus AUC.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("metric,point,ci_low,ci_high\n");
        for (name, e) in self.rows() {
            s.push_str(&format!("{name},{},{},{}\n", e.point, e.ci_low, e.ci_high));
        }
        if let Some(sp) = &self.specialist {
            s.push_str(&format!("specialist_sensitivity,{},,\n", sp.metrics.sensitivity));
            s.push_str(&format!("specialist_specificity,{},,\n", sp.metrics.specificity));
        }
        s
    }

    pub fn per_fold_csv(&self) -> String {
        let mut s = String::from("fold,n,tp,fp,tn,fn,accuracy,kappa,sensitivity,specificity,precision,auc\n");
        for f in &self.per_fold {
            let m = &f.metrics;
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                f.fold, f.n, f.counts.tp, f.counts.fp, f.counts.tn, f.counts.fn_,
                m.accuracy, m.kappa, m.sensitivity, m.specificity, m.precision, f.auc
            ));
        }
        s
    }

    /// Writes `report.json`, `report.csv` and `per_fold.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("report.json", serde_json::to_string_pretty(self)? + "\n"),
            ("report.csv", self.summary_csv()),
            ("per_fold.csv", self.per_fold_csv()),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn v(m: Metric) -> f64 {
        m.value().expect("defined")
    }

    /// Mann–Whitney statistic with half credit for ties.
    fn pair_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] && !labels[j] {
                    den += 1.0;
                    num += if si > sj {
                        1.0
                    } else if si == sj {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn confusion_examples() {
        let c = confusion(&[0.9, 0.2, 0.6, 0.4], &[true, true, false, false], 0.5).unwrap();
        assert_eq!(c, ConfusionCounts::new(1, 1, 1, 1));
        let c = confusion(&[1.0, 0.0, 1.0], &[true, false, true], 0.5).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let c = confusion(&[0.0; 4], &[true, false, true, false], 0.5).unwrap();
        assert_eq!((c.tp, c.fp), (0, 0));
        // Closed lower bound.
        assert_eq!(confusion(&[0.5], &[true], 0.5).unwrap().tp, 1);
        assert!(matches!(confusion(&[0.1, 0.2], &[true], 0.5), Err(Error::Input(_))));
    }

    #[test]
    fn hand_values() {
        let m = binary_metrics(&ConfusionCounts::new(40, 20, 30, 10)).unwrap();
        assert_eq!(v(m.accuracy), 0.7);
        assert_eq!(v(m.sensitivity), 0.8);
        assert_eq!(v(m.specificity), 0.6);
        assert_eq!((v(m.precision) * 1000.0).round() / 1000.0, 0.667);
        assert_eq!(v(m.kappa), 0.4);

        let m = binary_metrics(&ConfusionCounts::new(9, 0, 0, 0)).unwrap();
        assert_eq!(v(m.accuracy), 1.0);
        assert_eq!(v(m.sensitivity), 1.0);
        assert_eq!(m.specificity, Metric::NotDefined);
        assert_eq!(m.kappa, Metric::NotDefined);

        let m = binary_metrics(&ConfusionCounts::new(25, 25, 25, 25)).unwrap();
        assert_eq!(v(m.accuracy), 0.5);
        assert_eq!(v(m.kappa), 0.0);
        assert!(binary_metrics(&ConfusionCounts::default()).is_err());
    }

    #[test]
    fn auc_examples() {
        let r = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(r.auc, 0.75);
        assert_eq!(pair_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]), 0.75);
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap().auc, 1.0);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
        let r = roc_auc(&[0.5, 0.5, 0.5], &[true, false, true]).unwrap();
        assert_eq!(r.auc, 0.5);
        assert_eq!(r.points.len(), 2);
    }

    #[test]
    fn reference_fold_aucs() {
        let iv = aggregate_folds(&[0.933, 0.952, 0.962, 0.964, 0.976]).unwrap();
        assert!((iv.mean - 0.9574).abs() < 1e-12);
        assert!(iv.low < iv.mean && iv.mean < iv.high);
        let same = aggregate_folds(&[0.8; 5]).unwrap();
        assert_eq!((same.low, same.high), (0.8, 0.8));
        assert!(aggregate_folds(&[0.5]).is_err());
    }

    #[test]
    fn two_values_use_one_degree_of_freedom() {
        let iv = aggregate_folds(&[0.0, 1.0]).unwrap();
        // t(0.975, 1) = tan(0.475π); sd = 1/√2, so half-width = t/2.
        let t1 = (0.475 * std::f64::consts::PI).tan();
        assert!((t_quantile_975(1) - t1).abs() < 1e-6);
        assert_eq!(iv.mean, 0.5);
        assert!((iv.high - (0.5 + t1 / 2.0)).abs() < 1e-6);
        assert!((t_quantile_975(4) - 2.776_445_105_2).abs() < 1e-6);
    }

    #[test]
    fn wilson_bounds() {
        let (l, h) = wilson_interval(0, 10).unwrap();
        assert_eq!(l, 0.0);
        assert!(h > 0.2 && h < 0.4);
        let (l, h) = wilson_interval(50, 100).unwrap();
        assert!((0.5 - l - (h - 0.5)).abs() < 1e-12);
        assert!(wilson_interval(0, 0).is_none());
    }

    #[test]
    fn specialist_points() {
        let gold = [true, false, true, false, false];
        let same = specialist_point(&gold, &gold).unwrap();
        assert_eq!(same.operating_point(), (Metric::Value(1.0), Metric::Value(1.0)));
        let neg: Vec<bool> = gold.iter().map(|g| !g).collect();
        let opp = specialist_point(&neg, &gold).unwrap();
        assert_eq!(opp.operating_point(), (Metric::Value(0.0), Metric::Value(0.0)));
        assert!(specialist_point(&[], &[]).is_err());
    }

    fn fixture_folds(seed_base: u64) -> Vec<FoldPredictions> {
        (0..5)
            .map(|fold| {
                let mut rng = seed::rng(seed_base, &[fold as u64]);
                let labels: Vec<bool> = (0..60).map(|i| i % 3 == 0).collect();
                let scores = labels
                    .iter()
                    .map(|&l| (if l { 0.65 } else { 0.35 }) + rng.random_range(-0.4..0.4))
                    .collect();
                FoldPredictions { fold, scores, labels }
            })
            .collect()
    }

    #[test]
    fn report_modes_and_round_trip() {
        let folds = fixture_folds(3);
        for mode in [AggregateMode::FoldMean, AggregateMode::Pooled] {
            let mut r = build_report(&folds, 0.5, mode).unwrap();
            r.specialist = Some(specialist_point(
                &[vec![true; 588], vec![false; 412], vec![false; 982], vec![true; 18]].concat(),
                &[vec![true; 1000], vec![false; 1000]].concat(),
            )
            .unwrap());
            for (_, e) in r.rows() {
                let (p, l, h) = (v(e.point), v(e.ci_low), v(e.ci_high));
                assert!(l <= p && p <= h);
            }
            let dir = tempfile::tempdir().unwrap();
            r.write(dir.path()).unwrap();
            let back = MetricsReport::read_json(&dir.path().join("report.json")).unwrap();
            assert_eq!(back, r);
            let sp = back.specialist.unwrap();
            assert_eq!(sp.operating_point(), (Metric::Value(0.588), Metric::Value(0.982)));
        }
    }

    #[test]
    fn undefined_metrics_serialize_as_marker() {
        let m = binary_metrics(&ConfusionCounts::new(3, 0, 0, 0)).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"specificity\":\"NOT_DEFINED\""));
        assert_eq!(serde_json::from_str::<BinaryMetrics>(&json).unwrap(), m);
    }

    #[test]
    fn roc_file_format() {
        let r = roc_auc(&[0.2, 0.7], &[false, true]).unwrap();
        assert_eq!(r.to_csv(), "fpr,tpr,threshold\n0,0,inf\n0,1,0.7\n1,1,0.2\n");
    }

    fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..=200).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..20).prop_map(|s| f64::from(s) / 20.0), n),
                prop::collection::vec(any::<bool>(), n),
            )
                .prop_filter("both classes", |(_, l)| l.iter().any(|&x| x) && l.iter().any(|&x| !x))
        })
    }

    proptest! {
        #[test]
        fn trapezoid_equals_pair_counting((scores, labels) in scored_labels()) {
            let r = roc_auc(&scores, &labels).unwrap();
            prop_assert!((r.auc - pair_auc(&scores, &labels)).abs() < 1e-9);
        }

        #[test]
        fn roc_is_monotone_with_fixed_ends((scores, labels) in scored_labels()) {
            let r = roc_auc(&scores, &labels).unwrap();
            let first = r.points[0];
            let last = r.points[r.points.len() - 1];
            prop_assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
            prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
            for w in r.points.windows(2) {
                prop_assert!(w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr);
            }
        }

        #[test]
        fn affine_rescaling_preserves_roc(
            (scores, labels) in scored_labels(),
            a in 0.1f64..10.0,
            b in -5.0f64..5.0,
        ) {
            let r1 = roc_auc(&scores, &labels).unwrap();
            let moved: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
            let r2 = roc_auc(&moved, &labels).unwrap();
            prop_assert!((r1.auc - r2.auc).abs() < 1e-12);
            let pts = |r: &RocCurve| r.points.iter().map(|p| (p.fpr, p.tpr)).collect::<Vec<_>>();
            prop_assert_eq!(pts(&r1), pts(&r2));
        }

        #[test]
        fn kappa_matches_definition(
            pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200)
        ) {
            let (p, g): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
            let from_counts = binary_metrics(&ConfusionCounts::from_predictions(&p, &g).unwrap()).unwrap().kappa;
            match (from_counts, cohen_kappa(&p, &g).unwrap()) {
                (Metric::Value(a), Metric::Value(b)) => prop_assert!((a - b).abs() < 1e-9),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn undefined_is_never_zero(tp in 0u64..5, fp in 0u64..5, tn in 0u64..5, fn_ in 0u64..5) {
            let c = ConfusionCounts::new(tp, fp, tn, fn_);
            prop_assume!(c.total() > 0);
            let m = binary_metrics(&c).unwrap();
            prop_assert_eq!(m.sensitivity.is_defined(), tp + fn_ > 0);
            prop_assert_eq!(m.specificity.is_defined(), tn + fp > 0);
            prop_assert_eq!(m.precision.is_defined(), tp + fp > 0);
        }
    }
}
