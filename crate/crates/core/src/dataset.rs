//! Manifest ingestion, stereo selection, exclusion rules and task labels.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_COLUMNS: [&str; 11] = [
    "participant_id",
    "eye",
    "visit",
    "stereo_side",
    "image_path",
    "ga_present",
    "centrality",
    "area_category",
    "nv_amd",
    "specialist_ga",
    "specialist_cga",
];

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!(
                        "invalid {} value `{other}`", stringify!($name)
                    )),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

string_enum!(Eye { Left => "LEFT", Right => "RIGHT" });

string_enum!(StereoSide {
    LeftOfPair => "LEFT_OF_PAIR",
    RightOfPair => "RIGHT_OF_PAIR",
});

string_enum!(
    /// GA lesion area within the grading grid, smallest first. The derived
    /// `Ord` is the clinical order.
    AreaCategory {
        Questionable => "QUESTIONABLE",
        LtI2 => "LT_I2",
        I2ToO2 => "I2_TO_O2",
        O2ToHalfDa => "O2_TO_HALF_DA",
        HalfTo1Da => "HALF_TO_1_DA",
        OneTo2Da => "ONE_TO_2_DA",
        Ge2Da => "GE_2_DA",
    }
);

string_enum!(CentralityCategory {
    NoGa => "NO_GA",
    NonCentral => "NON_CENTRAL",
    DefiniteCenterPoint => "DEFINITE_CENTER_POINT",
    QuestionableCpDefiniteSubfield => "QUESTIONABLE_CP_DEFINITE_SUBFIELD",
});

impl CentralityCategory {
    pub fn is_central(self) -> bool {
        matches!(
            self,
            CentralityCategory::DefiniteCenterPoint
                | CentralityCategory::QuestionableCpDefiniteSubfield
        )
    }
}

string_enum!(Task { Ga => "ga", Cga => "cga", Centrality => "centrality" });

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeRecord {
    pub ga_present: bool,
    pub centrality: CentralityCategory,
    pub area_category: Option<AreaCategory>,
    pub nv_amd: bool,
    pub specialist_ga: Option<bool>,
    pub specialist_cga: Option<bool>,
}

impl GradeRecord {
    pub fn negative() -> Self {
        GradeRecord {
            ga_present: false,
            centrality: CentralityCategory::NoGa,
            area_category: None,
            nv_amd: false,
            specialist_ga: None,
            specialist_cga: None,
        }
    }

    pub fn cga(&self) -> bool {
        self.centrality.is_central()
    }

    /// Checks the label hierarchy; returns a description of the first breach.
    pub fn validate(&self) -> Result<(), String> {
        if self.centrality != CentralityCategory::NoGa && !self.ga_present {
            return Err(format!(
                "centrality {} requires ga_present = 1",
                self.centrality
            ));
        }
        if self.ga_present && self.centrality == CentralityCategory::NoGa {
            return Err("ga_present = 1 requires a centrality other than NO_GA".into());
        }
        match (self.ga_present, self.area_category) {
            (true, None) => Err("ga_present = 1 requires an area_category".into()),
            (false, Some(a)) => Err(format!("area_category {a} given without GA")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub participant_id: String,
    pub eye: Eye,
    pub visit: String,
    pub stereo_side: StereoSide,
    pub image_path: PathBuf,
    pub grade: GradeRecord,
}

impl ImageRecord {
    /// Identifies one eye at one visit; unique after stereo selection.
    pub fn image_key(&self) -> String {
        format!("{}/{}/{}", self.participant_id, self.eye, self.visit)
    }

    fn full_key(&self) -> (String, Eye, String, StereoSide) {
        (
            self.participant_id.clone(),
            self.eye,
            self.visit.clone(),
            self.stereo_side,
        )
    }
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "1" => Ok(true),
        "0" => Ok(false),
        other => Err(format!("invalid boolean `{other}` (expected 0 or 1)")),
    }
}

fn parse_opt_bool(s: &str) -> Result<Option<bool>, String> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_bool(s).map(Some)
    }
}

fn fmt_bool(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn fmt_opt_bool(b: Option<bool>) -> &'static str {
    b.map(fmt_bool).unwrap_or("")
}

/// Reads a manifest file. Relative image paths resolve against the
/// manifest's directory.
pub fn parse_manifest(path: &Path) -> Result<Vec<ImageRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest_str(&text, base)
}

pub fn parse_manifest_str(text: &str, base_dir: &Path) -> Result<Vec<ImageRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let mut columns = [usize::MAX; MANIFEST_COLUMNS.len()];
    for (i, h) in headers.iter().enumerate() {
        match MANIFEST_COLUMNS.iter().position(|c| *c == h) {
            Some(j) if columns[j] == usize::MAX => columns[j] = i,
            Some(_) => {
                return Err(Error::Schema {
                    column: h.to_string(),
                    problem: "appears more than once".into(),
                })
            }
            None => {
                return Err(Error::Schema {
                    column: h.to_string(),
                    problem: "is not a manifest column".into(),
                })
            }
        }
    }
    if let Some(j) = columns.iter().position(|&c| c == usize::MAX) {
        return Err(Error::Schema {
            column: MANIFEST_COLUMNS[j].to_string(),
            problem: "is missing".into(),
        });
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |j: usize| row.get(columns[j]).unwrap_or("");
        let parse = || -> Result<ImageRecord, String> {
            let participant_id = field(0).to_string();
            if participant_id.is_empty() {
                return Err("empty participant_id".into());
            }
            let area = match field(7) {
                "" | "NONE" => None,
                s => Some(s.parse::<AreaCategory>()?),
            };
            let image_path = PathBuf::from(field(4));
            let grade = GradeRecord {
                ga_present: parse_bool(field(5))?,
                centrality: field(6).parse()?,
                area_category: area,
                nv_amd: parse_bool(field(8))?,
                specialist_ga: parse_opt_bool(field(9))?,
                specialist_cga: parse_opt_bool(field(10))?,
            };
            grade.validate()?;
            Ok(ImageRecord {
                participant_id,
                eye: field(1).parse()?,
                visit: field(2).to_string(),
                stereo_side: field(3).parse()?,
                image_path: if image_path.is_relative() {
                    base_dir.join(image_path)
                } else {
                    image_path
                },
                grade,
            })
        };
        let record = parse().map_err(|message| Error::Parse { row: line, message })?;
        let key = record.full_key();
        if !seen.insert(key.clone()) {
            return Err(Error::Duplicate(format!(
                "({}, {}, {}, {})",
                key.0, key.1, key.2, key.3
            )));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn manifest_to_string(records: &[ImageRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(MANIFEST_COLUMNS)?;
    for r in records {
        let g = &r.grade;
        w.write_record([
            r.participant_id.as_str(),
            r.eye.as_str(),
            r.visit.as_str(),
            r.stereo_side.as_str(),
            &r.image_path.to_string_lossy(),
            fmt_bool(g.ga_present),
            g.centrality.as_str(),
            g.area_category.map(AreaCategory::as_str).unwrap_or("NONE"),
            fmt_bool(g.nv_amd),
            fmt_opt_bool(g.specialist_ga),
            fmt_opt_bool(g.specialist_cga),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("manifest writer emits UTF-8"))
}

pub fn write_manifest(records: &[ImageRecord], path: &Path) -> Result<()> {
    crate::raster::ensure_parent(path)?;
    fs::write(path, manifest_to_string(records)?).map_err(|e| Error::io(path, e))
}

/// Keeps one photograph per (participant, eye, visit): the left image of the
/// stereo pair, or the right one when the left is missing. Output follows the
/// order in which groups first appear.
pub fn select_stereo(records: &[ImageRecord]) -> Vec<ImageRecord> {
    let mut chosen: BTreeMap<(String, Eye, String), usize> = BTreeMap::new();
    let mut order = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let group = (r.participant_id.clone(), r.eye, r.visit.clone());
        match chosen.get(&group) {
            None => {
                chosen.insert(group.clone(), i);
                order.push(group);
            }
            Some(&j) => {
                if records[j].stereo_side == StereoSide::RightOfPair
                    && r.stereo_side == StereoSide::LeftOfPair
                {
                    chosen.insert(group, i);
                }
            }
        }
    }
    order
        .iter()
        .map(|g| records[chosen[g]].clone())
        .collect()
}

/// Drops images graded positive for both GA and neovascular AMD.
pub fn apply_exclusions(records: &[ImageRecord]) -> Vec<ImageRecord> {
    records
        .iter()
        .filter(|r| !(r.grade.ga_present && r.grade.nv_amd))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelOptions {
    /// Whether QUESTIONABLE-area GA counts as GA-positive.
    pub include_questionable_as_positive: bool,
}

impl Default for LabelOptions {
    fn default() -> Self {
        LabelOptions {
            include_questionable_as_positive: true,
        }
    }
}

impl LabelOptions {
    pub fn ga_label(&self, g: &GradeRecord) -> bool {
        g.ga_present
            && (self.include_questionable_as_positive
                || g.area_category != Some(AreaCategory::Questionable))
    }

    pub fn cga_label(&self, g: &GradeRecord) -> bool {
        self.ga_label(g) && g.cga()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledItem {
    pub record: ImageRecord,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub task: Task,
    pub items: Vec<LabeledItem>,
}

impl LabeledSet {
    pub fn labels(&self) -> Vec<bool> {
        self.items.iter().map(|i| i.label).collect()
    }

    pub fn positives(&self) -> usize {
        self.items.iter().filter(|i| i.label).count()
    }
}

pub fn derive_labels(records: &[ImageRecord], task: Task) -> LabeledSet {
    derive_labels_with(records, task, LabelOptions::default())
}

pub fn derive_labels_with(records: &[ImageRecord], task: Task, opts: LabelOptions) -> LabeledSet {
    let items = records
        .iter()
        .filter(|r| task != Task::Centrality || opts.ga_label(&r.grade))
        .map(|r| LabeledItem {
            record: r.clone(),
            label: match task {
                Task::Ga => opts.ga_label(&r.grade),
                Task::Cga | Task::Centrality => opts.cga_label(&r.grade),
            },
        })
        .collect();
    LabeledSet { task, items }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub images: usize,
    pub participants: usize,
    pub ga_images: usize,
    pub cga_images: usize,
    pub ga_percent: f64,
    pub cga_percent: f64,
}

pub fn summarize(records: &[ImageRecord]) -> DatasetSummary {
    let participants: BTreeSet<&str> =
        records.iter().map(|r| r.participant_id.as_str()).collect();
    let ga = records.iter().filter(|r| r.grade.ga_present).count();
    let cga = records.iter().filter(|r| r.grade.cga()).count();
    let pct = |k: usize| {
        if records.is_empty() {
            0.0
        } else {
            100.0 * k as f64 / records.len() as f64
        }
    };
    DatasetSummary {
        images: records.len(),
        participants: participants.len(),
        ga_images: ga,
        cga_images: cga,
        ga_percent: pct(ga),
        cga_percent: pct(cga),
    }
}

/// Full pipeline from a manifest file to the filtered record list.
pub fn ingest(path: &Path) -> Result<Vec<ImageRecord>> {
    let records = parse_manifest(path)?;
    Ok(apply_exclusions(&select_stereo(&records)))
}
