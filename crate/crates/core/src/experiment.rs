//! Cross-validated experiments: ingest → split → per-run train and test →
//! metrics → error tables, persisted as a self-describing directory.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{derive_labels_with, ingest, ImageRecord, LabelOptions, LabeledSet, Task};
use crate::error::{Error, Result};
use crate::error_analysis::{
    fn_by_area, fn_by_centrality, monotonicity_check, sample_false_negatives, write_review_template, ErrorTable,
    Monotonicity,
};
use crate::folds::{assign_folds, partition, rotation_schedule, FoldAssignment, RunSplit};
use crate::metrics::{build_report, specialist_point, AggregateMode, FoldPredictions, MetricsReport, roc_auc};
use crate::model::{build_model, predict, train, Example, ModelArtifact, ModelConfig, TrainingConfig, TrainingHistory};
use crate::par;
use crate::preprocess::{preprocess_file, PreparedImage, PreprocessConfig};
use crate::raster::save_image;
use crate::saliency::{overlay, saliency_map, ChannelReduce};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldConfig {
    pub k: usize,
    pub seed: u64,
}

impl Default for FoldConfig {
    fn default() -> Self {
        FoldConfig { k: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub aggregate: AggregateMode,
    pub include_questionable_as_positive: bool,
    /// False negatives sampled for manual review.
    pub review_sample: usize,
    pub review_seed: u64,
    /// Overlay opacity of the review saliency maps.
    pub saliency_alpha: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            aggregate: AggregateMode::FoldMean,
            include_questionable_as_positive: true,
            review_sample: 20,
            review_seed: 0,
            saliency_alpha: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: Task,
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub folds: FoldConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds.k < 3 {
            return Err(Error::Sizing(format!(
                "k = {}: cross-validation needs train, dev and test folds",
                self.folds.k
            )));
        }
        if self.model.task != self.task {
            return Err(Error::Config(format!(
                "model task {} differs from experiment task {}",
                self.model.task, self.task
            )));
        }
        if self.model.input_size != self.preprocess.target_size {
            return Err(Error::Config(format!(
                "model input {} px but preprocessing produces {} px",
                self.model.input_size, self.preprocess.target_size
            )));
        }
        self.preprocess.validate()?;
        self.model.validate()?;
        self.training.validate()
    }

    /// Relative manifest paths resolve against `data_root` when given.
    pub fn manifest_path(&self, data_root: Option<&Path>) -> PathBuf {
        match data_root {
            Some(root) if self.manifest.is_relative() => root.join(&self.manifest),
            _ => self.manifest.clone(),
        }
    }
}

fn label_options(cfg: &ExperimentConfig) -> LabelOptions {
    LabelOptions {
        include_questionable_as_positive: cfg.evaluation.include_questionable_as_positive,
    }
}

/// Loads, stereo-selects, filters and labels a manifest for a task.
pub fn labeled_set(manifest: &Path, task: Task, opts: LabelOptions) -> Result<LabeledSet> {
    Ok(derive_labels_with(&ingest(manifest)?, task, opts))
}

pub fn preprocess_all(records: &[ImageRecord], cfg: &PreprocessConfig) -> Result<Vec<PreparedImage>> {
    par::try_map_range(records.len(), |i| preprocess_file(&records[i].image_path, cfg))
}

/// One line per event, with seconds since the experiment started.
struct RunLog {
    file: fs::File,
    path: PathBuf,
    start: Instant,
}

impl RunLog {
    fn open(path: &Path) -> Result<Self> {
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(RunLog {
            file,
            path: path.to_path_buf(),
            start: Instant::now(),
        })
    }

    fn line(&mut self, msg: &str) -> Result<()> {
        writeln!(self.file, "[{:8.1}s] {msg}", self.start.elapsed().as_secs_f64()).map_err(|e| Error::io(&self.path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub image_key: String,
    pub score: f64,
    pub fold: usize,
}

pub fn write_predictions(rows: &[PredictionRow], path: &Path) -> Result<()> {
    crate::raster::ensure_parent(path)?;
    let tmp = path.with_extension("csv.partial");
    {
        let mut w = csv::Writer::from_path(&tmp)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{other:?}")),
    })?;
    let mut rows = Vec::new();
    for (i, row) in r.deserialize().enumerate() {
        let row: PredictionRow = row.map_err(|e| Error::Parse {
            row: i + 2,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub split: RunSplit,
    pub history: TrainingHistory,
    /// Indices into the labeled set.
    pub test: Vec<usize>,
    pub scores: Vec<f64>,
    pub test_auc: Option<f64>,
    pub resumed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub dir: PathBuf,
    pub labeled: LabeledSet,
    pub folds: FoldAssignment,
    pub runs: Vec<RunOutcome>,
    pub report: MetricsReport,
    pub error_table: ErrorTable,
    pub monotonicity: Option<Monotonicity>,
}

impl ExperimentOutcome {
    pub fn run_dir(&self, run: usize) -> PathBuf {
        run_dir(&self.dir, run)
    }
}

pub fn run_dir(root: &Path, run: usize) -> PathBuf {
    root.join(format!("run_{run}"))
}

/// Error table matching the task: area strata for GA, centrality strata
/// otherwise.
pub fn error_table(task: Task, predicted: &[bool], gold: &[ImageRecord]) -> Result<ErrorTable> {
    match task {
        Task::Ga => fn_by_area(predicted, gold),
        Task::Cga | Task::Centrality => {
            let mut t = fn_by_centrality(predicted, gold)?;
            t.task = task;
            Ok(t)
        }
    }
}

fn specialist_grade(task: Task, r: &ImageRecord) -> Option<bool> {
    match task {
        Task::Ga => r.grade.specialist_ga,
        Task::Cga | Task::Centrality => r.grade.specialist_cga,
    }
}

/// Specialist operating point over records that carry a specialist grade.
fn specialist_for(labeled: &LabeledSet, members: impl Iterator<Item = usize>) -> Result<Option<crate::metrics::SpecialistPoint>> {
    let (spec, gold): (Vec<bool>, Vec<bool>) = members
        .filter_map(|i| {
            let item = &labeled.items[i];
            specialist_grade(labeled.task, &item.record).map(|s| (s, item.label))
        })
        .unzip();
    if spec.is_empty() {
        return Ok(None);
    }
    specialist_point(&spec, &gold).map(Some)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    crate::raster::ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Everything shared by the runs of one experiment.
struct Prepared {
    dir: PathBuf,
    log: RunLog,
    labeled: LabeledSet,
    records: Vec<ImageRecord>,
    labels: Vec<bool>,
    folds: FoldAssignment,
    schedule: Vec<RunSplit>,
    images: Vec<PreparedImage>,
}

fn prepare(cfg: &ExperimentConfig, data_root: Option<&Path>) -> Result<Prepared> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let cfg_path = dir.join("config.toml");
    let cfg_text = cfg.to_toml_string();
    match fs::read_to_string(&cfg_path) {
        Ok(existing) if existing != cfg_text => {
            return Err(Error::Config(format!(
                "{} holds a different experiment; refusing to mix results",
                dir.display()
            )))
        }
        Ok(_) => {}
        Err(_) => write_text(&cfg_path, &cfg_text)?,
    }
    write_text(
        &dir.join("provenance.json"),
        &(serde_json::to_string_pretty(&serde_json::json!({
            "code_version": env!("CARGO_PKG_VERSION"),
            "fold_seed": cfg.folds.seed,
            "training_seed": cfg.training.seed,
            "preprocess_fingerprint": cfg.preprocess.fingerprint(),
        }))? + "\n"),
    )?;
    let mut log = RunLog::open(&dir.join("run.log"))?;

    let manifest = cfg.manifest_path(data_root);
    let labeled = labeled_set(&manifest, cfg.task, label_options(cfg)).map_err(|e| e.in_stage(0, "ingest"))?;
    log.line(&format!(
        "ingest: {} images, {} positive for {}",
        labeled.items.len(),
        labeled.positives(),
        cfg.task
    ))?;
    let records: Vec<ImageRecord> = labeled.items.iter().map(|i| i.record.clone()).collect();
    let labels = labeled.labels();

    let ids: Vec<&str> = records.iter().map(|r| r.participant_id.as_str()).collect();
    let folds = assign_folds(&ids, cfg.folds.k, cfg.folds.seed).map_err(|e| e.in_stage(0, "split"))?;
    folds.write(&dir.join("folds.csv"))?;
    let schedule = rotation_schedule(cfg.folds.k)?;
    log.line(&format!("split: fold sizes {:?}", folds.fold_sizes()))?;

    let images = preprocess_all(&records, &cfg.preprocess).map_err(|e| e.in_stage(0, "preprocess"))?;
    log.line(&format!("preprocess: {} images at {} px", images.len(), cfg.preprocess.target_size))?;

    Ok(Prepared {
        dir,
        log,
        labeled,
        records,
        labels,
        folds,
        schedule,
        images,
    })
}

fn run_one(cfg: &ExperimentConfig, p: &mut Prepared, split: &RunSplit) -> Result<RunOutcome> {
    let r = split.run_index;
    let rdir = run_dir(&p.dir, r);
    let idx = partition(&p.records, &p.folds, split).map_err(|e| e.in_stage(r, "split"))?;
    write_text(&rdir.join("split.json"), &(serde_json::to_string_pretty(split)? + "\n"))?;
    let pred_path = rdir.join("predictions.csv");
    let hist_path = rdir.join("model").join("history.csv");

    let (history, scores, resumed) = if pred_path.exists() && hist_path.exists() {
        let rows = read_predictions(&pred_path)?;
        let by_key: HashMap<&str, f64> = rows.iter().map(|row| (row.image_key.as_str(), row.score)).collect();
        let scores = idx
            .test
            .iter()
            .map(|&i| {
                by_key.get(p.records[i].image_key().as_str()).copied().ok_or_else(|| {
                    Error::Data(format!("{} lacks {}", pred_path.display(), p.records[i].image_key()))
                })
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_stage(r, "resume"))?;
        let text = fs::read_to_string(&hist_path).map_err(|e| Error::io(&hist_path, e))?;
        p.log.line(&format!("run {r}: resumed from {}", pred_path.display()))?;
        (TrainingHistory::from_csv(&text)?, scores, true)
    } else {
        let examples = |ix: &[usize]| -> Vec<Example<'_>> {
            ix.iter().map(|&i| Example { image: &p.images[i], label: p.labels[i] }).collect()
        };
        let model = build_model(&cfg.model, seed::derive_seed(cfg.training.seed, &[0x1A17, r as u64]))
            .map_err(|e| e.in_stage(r, "build"))?;
        let tcfg = TrainingConfig {
            seed: seed::derive_seed(cfg.training.seed, &[0x7EA1, r as u64]),
            ..cfg.training.clone()
        };
        p.log.line(&format!(
            "run {r}: train {} / dev {} / test {} images",
            idx.train.len(),
            idx.dev.len(),
            idx.test.len()
        ))?;
        let (artifact, history) = train(model, &examples(&idx.train), &examples(&idx.dev), &tcfg, cfg.folds.seed)
            .map_err(|e| e.in_stage(r, "train"))?;
        artifact.save(&rdir.join("model"), Some(&history))?;
        p.log.line(&format!(
            "run {r}: stopped at epoch {} (best {}, dev loss {:.4})",
            history.stopped_epoch,
            history.best_epoch,
            history.epochs[history.best_epoch - 1].dev_loss
        ))?;
        let test_images: Vec<&PreparedImage> = idx.test.iter().map(|&i| &p.images[i]).collect();
        let scores = predict(&artifact, &test_images).map_err(|e| e.in_stage(r, "predict"))?;
        let rows: Vec<PredictionRow> = idx
            .test
            .iter()
            .zip(&scores)
            .map(|(&i, &score)| PredictionRow {
                image_key: p.records[i].image_key(),
                score,
                fold: split.test_fold,
            })
            .collect();
        write_predictions(&rows, &pred_path)?;
        (history, scores, false)
    };
    let test_labels: Vec<bool> = idx.test.iter().map(|&i| p.labels[i]).collect();
    let test_auc = match roc_auc(&scores, &test_labels) {
        Ok(roc) => {
            roc.write(&rdir.join("roc.csv"))?;
            Some(roc.auc)
        }
        Err(_) => None,
    };
    p.log.line(&format!("run {r}: test AUC {}", test_auc.map_or("n/a".into(), |a| format!("{a:.4}"))))?;
    Ok(RunOutcome {
        split: split.clone(),
        history,
        test: idx.test,
        scores,
        test_auc,
        resumed,
    })
}

/// Trains (or resumes) a single run of an experiment, leaving its outputs
/// where [`run_crossval`] picks them up.
pub fn run_single(cfg: &ExperimentConfig, data_root: Option<&Path>, run: usize) -> Result<RunOutcome> {
    let mut p = prepare(cfg, data_root)?;
    let split = p
        .schedule
        .get(run)
        .cloned()
        .ok_or_else(|| Error::Config(format!("run {run} outside 0..{}", p.schedule.len())))?;
    run_one(cfg, &mut p, &split)
}

/// Runs (or resumes) a full cross-validated experiment.
pub fn run_crossval(cfg: &ExperimentConfig, data_root: Option<&Path>) -> Result<ExperimentOutcome> {
    let mut p = prepare(cfg, data_root)?;
    let mut runs = Vec::with_capacity(p.schedule.len());
    for split in p.schedule.clone() {
        runs.push(run_one(cfg, &mut p, &split)?);
    }
    let Prepared { dir, mut log, labeled, records, labels, folds, images, .. } = p;

    let fold_preds: Vec<FoldPredictions> = runs
        .iter()
        .map(|run| FoldPredictions {
            fold: run.split.test_fold,
            scores: run.scores.clone(),
            labels: run.test.iter().map(|&i| labels[i]).collect(),
        })
        .collect();
    let mut report = build_report(&fold_preds, cfg.training.threshold, cfg.evaluation.aggregate)
        .map_err(|e| e.in_stage(0, "metrics"))?;
    report.specialist = specialist_for(&labeled, 0..labeled.items.len())?;
    report.write(&dir.join("report"))?;
    let mut all_scores: Vec<f64> = Vec::new();
    let mut all_labels: Vec<bool> = Vec::new();
    for f in &fold_preds {
        all_scores.extend(&f.scores);
        all_labels.extend(&f.labels);
    }
    if let Ok(roc) = roc_auc(&all_scores, &all_labels) {
        roc.write(&dir.join("report").join("roc_pooled.csv"))?;
    }

    // Error tables over every test prediction.
    let mut order: Vec<(usize, f64, usize)> = runs
        .iter()
        .flat_map(|run| run.test.iter().zip(&run.scores).map(move |(&i, &s)| (i, s, run.split.run_index)))
        .collect();
    order.sort_by_key(|o| o.0);
    let gold: Vec<ImageRecord> = order.iter().map(|o| records[o.0].clone()).collect();
    let predicted: Vec<bool> = order.iter().map(|o| o.1 >= cfg.training.threshold).collect();
    let table = error_table(cfg.task, &predicted, &gold).map_err(|e| e.in_stage(0, "error_analysis"))?;
    let table_name = if cfg.task == Task::Ga { "errors_by_area.csv" } else { "errors_by_centrality.csv" };
    table.write(&dir.join("report").join(table_name))?;
    let monotonicity = (cfg.task == Task::Ga).then(|| monotonicity_check(&table));
    if let Some(m) = &monotonicity {
        write_text(&dir.join("report").join("monotonicity.json"), &(serde_json::to_string_pretty(m)? + "\n"))?;
    }

    // False-negative review pack with saliency overlays from the run that
    // tested each image.
    let gold_labels: Vec<bool> = order.iter().map(|o| labels[o.0]).collect();
    let sample = sample_false_negatives(&predicted, &gold_labels, cfg.evaluation.review_sample.max(1), cfg.evaluation.review_seed)?;
    let review_dir = dir.join("review");
    let mut artifacts: BTreeMap<usize, ModelArtifact> = BTreeMap::new();
    let mut cases = Vec::new();
    for &j in &sample {
        let (i, _, run) = order[j];
        if let std::collections::btree_map::Entry::Vacant(e) = artifacts.entry(run) {
            e.insert(ModelArtifact::load(&run_dir(&dir, run).join("model"))?);
        }
        let art = &artifacts[&run];
        let key = records[i].image_key();
        let map = saliency_map(art, &images[i], &key, ChannelReduce::MaxAbs)?;
        let composite = overlay(&images[i].raster, &map.values, cfg.evaluation.saliency_alpha)?;
        let path = review_dir.join("saliency").join(format!("{}.png", key.replace('/', "_")));
        save_image(&composite, &path)?;
        cases.push((i, path));
    }
    let case_refs: Vec<(&ImageRecord, Option<&Path>)> =
        cases.iter().map(|(i, p)| (&records[*i], Some(p.as_path()))).collect();
    write_review_template(&review_dir.join("false_negatives.csv"), &case_refs)?;
    log.line(&format!(
        "report: AUC {} (95% CI {} – {}), {} false negatives sampled",
        report.auc.point,
        report.auc.ci_low,
        report.auc.ci_high,
        sample.len()
    ))?;

    Ok(ExperimentOutcome {
        dir,
        labeled,
        folds,
        runs,
        report,
        error_table: table,
        monotonicity,
    })
}

/// Where the scores of an evaluation come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionSource {
    /// The predictions file.
    Model,
    /// The manifest's specialist grade columns, as 0/1 scores.
    Specialist,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub error_table: ErrorTable,
}

/// Metrics and error tables from stored predictions, without a model.
pub fn evaluate_predictions(
    predictions: Option<&Path>,
    manifest: &Path,
    task: Task,
    source: PredictionSource,
    threshold: f64,
    mode: AggregateMode,
    opts: LabelOptions,
) -> Result<Evaluation> {
    let labeled = labeled_set(manifest, task, opts)?;
    let index: HashMap<String, usize> = labeled
        .items
        .iter()
        .enumerate()
        .map(|(i, it)| (it.record.image_key(), i))
        .collect();
    let rows: Vec<(usize, f64, usize)> = match source {
        PredictionSource::Model => {
            let path = predictions.ok_or_else(|| Error::Config("a predictions file is required".into()))?;
            let rows = read_predictions(path)?;
            let unknown: Vec<String> = rows
                .iter()
                .filter(|r| !index.contains_key(&r.image_key))
                .map(|r| r.image_key.clone())
                .collect();
            if !unknown.is_empty() {
                return Err(Error::Join(unknown));
            }
            rows.iter().map(|r| (index[&r.image_key], r.score, r.fold)).collect()
        }
        PredictionSource::Specialist => labeled
            .items
            .iter()
            .enumerate()
            .filter_map(|(i, it)| specialist_grade(task, &it.record).map(|s| (i, if s { 1.0 } else { 0.0 }, 0)))
            .collect(),
    };
    if rows.is_empty() {
        return Err(Error::Input("no predictions to evaluate".into()));
    }
    let mut by_fold: BTreeMap<usize, FoldPredictions> = BTreeMap::new();
    for &(i, score, fold) in &rows {
        let f = by_fold.entry(fold).or_insert_with(|| FoldPredictions {
            fold,
            scores: Vec::new(),
            labels: Vec::new(),
        });
        f.scores.push(score);
        f.labels.push(labeled.items[i].label);
    }
    let folds: Vec<FoldPredictions> = by_fold.into_values().collect();
    let mut report = build_report(&folds, threshold, mode)?;
    report.specialist = specialist_for(&labeled, rows.iter().map(|r| r.0))?;
    let gold: Vec<ImageRecord> = rows.iter().map(|r| labeled.items[r.0].record.clone()).collect();
    let predicted: Vec<bool> = rows.iter().map(|r| r.1 >= threshold).collect();
    let error_table = error_table(task, &predicted, &gold)?;
    Ok(Evaluation { report, error_table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{write_manifest, CentralityCategory, Eye, GradeRecord, StereoSide, AreaCategory};
    use crate::folds::AugmentConfig;
    use crate::metrics::Metric;
    use crate::synth::{generate_dataset, DatasetSpec};
    use rand::Rng;

    fn record(i: usize, ga: bool) -> ImageRecord {
        let mut grade = GradeRecord::negative();
        if ga {
            grade.ga_present = true;
            grade.centrality = CentralityCategory::NonCentral;
            grade.area_category = Some(AreaCategory::Ge2Da);
        }
        ImageRecord {
            participant_id: format!("P{i}"),
            eye: Eye::Right,
            visit: "baseline".into(),
            stereo_side: StereoSide::LeftOfPair,
            image_path: format!("img{i}.png").into(),
            grade,
        }
    }

    #[test]
    fn toml_round_trip_and_validation() {
        let text = r#"
task = "ga"
manifest = "data/manifest.csv"
output_dir = "out"

[preprocess]
target_size = 64

[folds]
k = 5
seed = 7

[model]
profile = "tiny"
input_size = 64
pretrained = false
task = "ga"

[training]
max_epochs = 3
patience_epochs = 2
"#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.training.batch_size, 32);
        assert_eq!(cfg.evaluation.aggregate, AggregateMode::FoldMean);
        cfg.validate().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
        assert_eq!(cfg.manifest_path(Some(Path::new("/data"))), PathBuf::from("/data/data/manifest.csv"));

        let mut bad = cfg.clone();
        bad.folds.k = 1;
        assert_eq!(bad.validate().unwrap_err().kind().exit_code(), 2);
        let mut bad = cfg.clone();
        bad.model.input_size = 128;
        assert!(bad.validate().is_err());
        assert!(ExperimentConfig::from_toml_str("task = \"ga\"").is_err());
    }

    fn fixture_manifest(dir: &Path, n: usize, specialist: impl Fn(usize, bool) -> Option<bool>) -> PathBuf {
        let records: Vec<ImageRecord> = (0..n)
            .map(|i| {
                let mut r = record(i, i % 2 == 0);
                r.grade.specialist_ga = specialist(i, r.grade.ga_present);
                r
            })
            .collect();
        let path = dir.join("manifest.csv");
        write_manifest(&records, &path).unwrap();
        path
    }

    #[test]
    fn perfect_predictions_and_join_errors() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = fixture_manifest(dir.path(), 40, |_, _| None);
        let rows: Vec<PredictionRow> = (0..40)
            .map(|i| PredictionRow {
                image_key: format!("P{i}/RIGHT/baseline"),
                score: if i % 2 == 0 { 1.0 } else { 0.0 },
                fold: i % 4,
            })
            .collect();
        let preds = dir.path().join("pred.csv");
        write_predictions(&rows, &preds).unwrap();
        let ev = evaluate_predictions(
            Some(&preds),
            &manifest,
            Task::Ga,
            PredictionSource::Model,
            0.5,
            AggregateMode::FoldMean,
            LabelOptions::default(),
        )
        .unwrap();
        assert_eq!(ev.report.accuracy.point, Metric::Value(1.0));
        assert_eq!(ev.report.n_folds, 4);
        assert_eq!(ev.error_table.row("GE_2_DA").unwrap().n_false_negative, 0);

        let mut bad = rows.clone();
        bad[3].image_key = "nobody/LEFT/baseline".into();
        write_predictions(&bad, &preds).unwrap();
        let err = evaluate_predictions(
            Some(&preds),
            &manifest,
            Task::Ga,
            PredictionSource::Model,
            0.5,
            AggregateMode::FoldMean,
            LabelOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(&err, Error::Join(k) if k == &["nobody/LEFT/baseline".to_string()]));
    }

    #[test]
    fn specialist_source_reproduces_operating_point() {
        // 1000 GA-positive and 1000 GA-negative images; specialists catch
        // 588 positives and clear 982 negatives.
        let dir = tempfile::tempdir().unwrap();
        let manifest = fixture_manifest(dir.path(), 2000, |i, ga| Some(if ga { i / 2 < 588 } else { i / 2 < 18 }));
        let ev = evaluate_predictions(
            None,
            &manifest,
            Task::Ga,
            PredictionSource::Specialist,
            0.5,
            AggregateMode::Pooled,
            LabelOptions::default(),
        )
        .unwrap();
        let json = serde_json::to_string(&ev.report).unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.sensitivity.point, Metric::Value(0.588));
        assert_eq!(back.specificity.point, Metric::Value(0.982));
        let sp = back.specialist.unwrap();
        assert_eq!(sp.operating_point(), (Metric::Value(0.588), Metric::Value(0.982)));
    }

    #[test]
    fn random_scores_give_chance_auc() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = fixture_manifest(dir.path(), 400, |_, _| None);
        let mut rng = seed::rng(11, &[]);
        let rows: Vec<PredictionRow> = (0..400)
            .map(|i| PredictionRow {
                image_key: format!("P{i}/RIGHT/baseline"),
                score: rng.random_range(0.0..1.0),
                fold: 0,
            })
            .collect();
        let preds = dir.path().join("pred.csv");
        write_predictions(&rows, &preds).unwrap();
        let ev = evaluate_predictions(
            Some(&preds),
            &manifest,
            Task::Ga,
            PredictionSource::Model,
            0.5,
            AggregateMode::Pooled,
            LabelOptions::default(),
        )
        .unwrap();
        let auc = ev.report.auc.point.value().unwrap();
        assert!((auc - 0.5).abs() <= 0.1, "{auc}");
    }

    fn small_experiment(dir: &Path) -> ExperimentConfig {
        let mut spec = DatasetSpec::new(120, 0.3, 0.4, 5);
        spec.image_size = 32;
        spec.area_weights = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        let data = generate_dataset(&spec, &dir.join("data")).unwrap();
        ExperimentConfig {
            task: Task::Ga,
            manifest: data.manifest,
            output_dir: dir.join("exp"),
            preprocess: PreprocessConfig::with_size(32),
            folds: FoldConfig { k: 5, seed: 1 },
            model: ModelConfig::tiny(32, Task::Ga),
            training: TrainingConfig {
                max_epochs: 2,
                patience_epochs: 1,
                batch_size: 16,
                augment: AugmentConfig::disabled(),
                ..TrainingConfig::default()
            },
            evaluation: EvaluationConfig {
                review_sample: 3,
                ..EvaluationConfig::default()
            },
        }
    }

    #[test]
    fn crossval_layout_determinism_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_experiment(dir.path());
        let out = run_crossval(&cfg, None).unwrap();
        assert_eq!(out.runs.len(), 5);
        for r in 0..5 {
            let rd = out.run_dir(r);
            for f in ["split.json", "predictions.csv", "model/weights.bin", "model/config.json", "model/history.csv"] {
                assert!(rd.join(f).exists(), "run {r} lacks {f}");
            }
        }
        for f in ["config.toml", "folds.csv", "run.log", "report/report.json", "report/errors_by_area.csv"] {
            assert!(out.dir.join(f).exists(), "missing {f}");
        }
        let report1 = fs::read(out.dir.join("report/report.json")).unwrap();

        // Resume: every run is picked up from disk.
        let again = run_crossval(&cfg, None).unwrap();
        assert!(again.runs.iter().all(|r| r.resumed));
        assert_eq!(fs::read(out.dir.join("report/report.json")).unwrap(), report1);

        // Fresh rerun in another directory gives the same report.
        let mut cfg2 = cfg.clone();
        cfg2.output_dir = dir.path().join("exp2");
        let fresh = run_crossval(&cfg2, None).unwrap();
        assert!(fresh.runs.iter().all(|r| !r.resumed));
        assert_eq!(fs::read(fresh.dir.join("report/report.json")).unwrap(), report1);

        let mut other = cfg.clone();
        other.training.seed = 99;
        assert!(matches!(run_crossval(&other, None), Err(Error::Config(_))));
    }
}
