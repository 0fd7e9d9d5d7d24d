//! False-negative stratification by lesion area and centrality, and random
//! sampling of missed cases for manual review.

use std::fmt;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::{AreaCategory, CentralityCategory, ImageRecord, Task};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub category: String,
    pub n_total: u64,
    pub n_false_negative: u64,
}

impl ErrorRow {
    /// False-negative rate in tenths of a percent, rounded half up; `None`
    /// for an empty category.
    pub fn rate_tenths(&self) -> Option<u64> {
        (self.n_total > 0).then(|| (2000 * self.n_false_negative + self.n_total) / (2 * self.n_total))
    }

    /// Rate as a percentage with one decimal (as reported).
    pub fn rate_percent(&self) -> Option<f64> {
        self.rate_tenths().map(|t| t as f64 / 10.0)
    }
}

/// Renders `Some(629)` as `62.9` and `None` as `NOT_DEFINED`.
struct Tenths(Option<u64>);

impl fmt::Display for Tenths {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(t) => write!(f, "{}.{}", t / 10, t % 10),
            None => f.write_str("NOT_DEFINED"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorTable {
    pub task: Task,
    pub rows: Vec<ErrorRow>,
}

impl ErrorTable {
    pub fn row(&self, category: &str) -> Option<&ErrorRow> {
        self.rows.iter().find(|r| r.category == category)
    }

    pub fn total(&self) -> u64 {
        self.rows.iter().map(|r| r.n_total).sum()
    }

    pub fn false_negatives(&self) -> u64 {
        self.rows.iter().map(|r| r.n_false_negative).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("category,whole_test_set,false_negatives,rate_percent\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.category,
                r.n_total,
                r.n_false_negative,
                Tenths(r.rate_tenths())
            ));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::raster::ensure_parent(path)?;
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn check_lengths(predicted: &[bool], gold: &[ImageRecord]) -> Result<()> {
    if predicted.len() != gold.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} records",
            predicted.len(),
            gold.len()
        )));
    }
    Ok(())
}

/// GA-task false negatives per area category, over gold GA-positive items.
pub fn fn_by_area(predicted: &[bool], gold: &[ImageRecord]) -> Result<ErrorTable> {
    check_lengths(predicted, gold)?;
    let mut rows: Vec<ErrorRow> = AreaCategory::ALL
        .iter()
        .map(|c| ErrorRow {
            category: c.as_str().to_string(),
            n_total: 0,
            n_false_negative: 0,
        })
        .collect();
    for (&p, r) in predicted.iter().zip(gold) {
        if !r.grade.ga_present {
            continue;
        }
        let cat = r.grade.area_category.ok_or_else(|| {
            Error::Data(format!("GA-positive record {} has no area_category", r.image_key()))
        })?;
        let row = &mut rows[AreaCategory::ALL.iter().position(|c| *c == cat).expect("listed")];
        row.n_total += 1;
        row.n_false_negative += u64::from(!p);
    }
    Ok(ErrorTable { task: Task::Ga, rows })
}

pub const CENTRAL_CATEGORIES: [CentralityCategory; 2] = [
    CentralityCategory::DefiniteCenterPoint,
    CentralityCategory::QuestionableCpDefiniteSubfield,
];

/// CGA-task false negatives per central category.
pub fn fn_by_centrality(predicted: &[bool], gold: &[ImageRecord]) -> Result<ErrorTable> {
    check_lengths(predicted, gold)?;
    let rows = CENTRAL_CATEGORIES
        .iter()
        .map(|&cat| {
            let mut row = ErrorRow {
                category: cat.as_str().to_string(),
                n_total: 0,
                n_false_negative: 0,
            };
            for (&p, r) in predicted.iter().zip(gold) {
                if r.grade.centrality == cat {
                    row.n_total += 1;
                    row.n_false_negative += u64::from(!p);
                }
            }
            row
        })
        .collect();
    Ok(ErrorTable { task: Task::Cga, rows })
}

/// Index of the first element that exceeds its predecessor.
pub fn non_increasing<T: PartialOrd>(values: &[T]) -> Option<usize> {
    values.windows(2).position(|w| w[1] > w[0]).map(|i| i + 1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Monotonicity {
    pub holds: bool,
    /// Category of the first row whose rate rose.
    pub first_violation: Option<String>,
}

/// Whether reported false-negative rates are non-increasing with area,
/// from LT_I2 upward. QUESTIONABLE and empty rows are skipped.
pub fn monotonicity_check(t: &ErrorTable) -> Monotonicity {
    let rows: Vec<(&str, u64)> = t
        .rows
        .iter()
        .filter(|r| r.category != AreaCategory::Questionable.as_str())
        .filter_map(|r| r.rate_tenths().map(|x| (r.category.as_str(), x)))
        .collect();
    let rates: Vec<u64> = rows.iter().map(|r| r.1).collect();
    let first_violation = non_increasing(&rates).map(|i| rows[i].0.to_string());
    Monotonicity {
        holds: first_violation.is_none(),
        first_violation,
    }
}

/// Positions (into `gold`) of up to `n` false negatives, drawn uniformly
/// without replacement. Returned in ascending order.
pub fn sample_false_negatives(predicted: &[bool], labels: &[bool], n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Input("sample size must be at least 1".into()));
    }
    if predicted.len() != labels.len() {
        return Err(Error::Input(format!("{} predictions for {} labels", predicted.len(), labels.len())));
    }
    let misses: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] && !predicted[i]).collect();
    if misses.len() <= n {
        return Ok(misses);
    }
    let mut picked: Vec<usize> = index::sample(&mut seed::rng(seed, &[0xF4]), misses.len(), n)
        .into_iter()
        .map(|i| misses[i])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

pub const REVIEW_COLUMNS: [&str; 7] = [
    "image_key",
    "image_path",
    "saliency_path",
    "image_quality",
    "ga_size",
    "depigmentation",
    "other_factors",
];

/// Annotation sheet for the sampled cases: paths filled in, grading
/// columns left blank.
pub fn write_review_template(path: &Path, cases: &[(&ImageRecord, Option<&Path>)]) -> Result<()> {
    crate::raster::ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
    w.write_record(REVIEW_COLUMNS)?;
    for (r, sal) in cases {
        let sal = sal.map(|p| p.display().to_string()).unwrap_or_default();
        w.write_record([
            r.image_key().as_str(),
            &r.image_path.display().to_string(),
            &sal,
            "",
            "",
            "",
            "",
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
