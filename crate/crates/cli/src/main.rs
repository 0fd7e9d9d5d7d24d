use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gascreen_core::dataset::{ingest, summarize, ImageRecord, Task};
use gascreen_core::error_analysis::monotonicity_check;
use gascreen_core::experiment::{
    error_table, evaluate_predictions, labeled_set, preprocess_all, read_predictions, run_crossval, run_dir, run_single,
    write_predictions, ExperimentConfig, PredictionRow, PredictionSource,
};
use gascreen_core::folds::{assign_folds, rotation_schedule};
use gascreen_core::metrics::AggregateMode;
use gascreen_core::model::{predict, ModelArtifact, Profile};
use gascreen_core::preprocess::{preprocess_file, PreprocessConfig};
use gascreen_core::raster::save_image;
use gascreen_core::saliency::{overlay, saliency_map, ChannelReduce};
use gascreen_core::synth::{generate_dataset, DatasetSpec};
use gascreen_core::{Error, Result};

#[derive(Parser)]
#[command(name = "gascreen", version, about = "Geographic atrophy screening experiments")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    task: Option<Task>,
    #[arg(long, global = true)]
    profile: Option<Profile>,
    /// Overrides both the fold and the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base directory for relative manifest paths.
    #[arg(long, global = true, env = "GASCREEN_DATA_ROOT")]
    data_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic fundus dataset with manifest and lesion masks.
    SynthGen {
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 0.25)]
        prevalence: f64,
        /// Fraction of GA-positive images with a central lesion.
        #[arg(long, default_value_t = 1455.0 / 2585.0)]
        cga_fraction: f64,
        #[arg(long, default_value_t = 128)]
        size: usize,
    },
    /// Parse, stereo-select and filter a manifest; print a summary.
    Ingest { manifest: Option<PathBuf> },
    /// Assign participant-level folds and write the run schedule.
    Split,
    /// Train one cross-validation run.
    Train {
        #[arg(long)]
        run: usize,
    },
    /// Score every image of a manifest with a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Metrics and error tables from a predictions file or the specialist grades.
    Evaluate {
        #[arg(long, required_unless_present = "specialist")]
        predictions: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Use the manifest's specialist grades as predictions.
        #[arg(long)]
        specialist: bool,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        aggregate: Option<AggregateMode>,
    },
    /// False-negative rates by lesion area or centrality.
    AnalyzeErrors {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Saliency overlay for one image.
    Saliency {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long)]
        sum_abs: bool,
    },
    /// Full cross-validated experiment; resumes completed runs.
    RunCrossval,
}

impl Cli {
    /// The config file with flag overrides applied.
    fn experiment(&self) -> Result<ExperimentConfig> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
        let mut cfg = ExperimentConfig::load(path)?;
        if let Some(task) = self.task {
            cfg.task = task;
            cfg.model.task = task;
        }
        if let Some(profile) = self.profile {
            cfg.model.profile = profile;
        }
        if let Some(seed) = self.seed {
            cfg.folds.seed = seed;
            cfg.training.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn optional_experiment(&self) -> Result<Option<ExperimentConfig>> {
        self.config.as_ref().map(|_| self.experiment()).transpose()
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        match &self.data_root {
            Some(root) if path.is_relative() => root.join(path),
            _ => path.to_path_buf(),
        }
    }

    fn manifest(&self, given: Option<&PathBuf>, cfg: Option<&ExperimentConfig>) -> Result<PathBuf> {
        match (given, cfg) {
            (Some(p), _) => Ok(self.resolve(p)),
            (None, Some(cfg)) => Ok(cfg.manifest_path(self.data_root.as_deref())),
            (None, None) => Err(Error::Config("give a manifest path or --config".into())),
        }
    }

    fn out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Config("--out is required for this command".into()))
    }

    fn task_or(&self, cfg: Option<&ExperimentConfig>) -> Task {
        self.task.or(cfg.map(|c| c.task)).unwrap_or(Task::Ga)
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value).map_err(|e| Error::Serde(e.to_string()))?);
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::SynthGen { n, prevalence, cga_fraction, size } => {
            let mut spec = DatasetSpec::new(*n, *prevalence, *cga_fraction, cli.seed.unwrap_or(0));
            spec.image_size = *size;
            let data = generate_dataset(&spec, cli.out()?)?;
            println!("manifest {}", data.manifest.display());
            print_json(&summarize(&ingest(&data.manifest)?))
        }
        Command::Ingest { manifest } => {
            let cfg = cli.optional_experiment()?;
            let records = ingest(&cli.manifest(manifest.as_ref(), cfg.as_ref())?)?;
            print_json(&summarize(&records))
        }
        Command::Split => {
            let cfg = cli.experiment()?;
            let labeled = labeled_set(&cfg.manifest_path(cli.data_root.as_deref()), cfg.task, Default::default())?;
            let ids: Vec<&str> = labeled.items.iter().map(|i| i.record.participant_id.as_str()).collect();
            let folds = assign_folds(&ids, cfg.folds.k, cfg.folds.seed)?;
            folds.write(&cfg.output_dir.join("folds.csv"))?;
            let schedule = rotation_schedule(cfg.folds.k)?;
            for split in &schedule {
                let path = run_dir(&cfg.output_dir, split.run_index).join("split.json");
                std::fs::create_dir_all(path.parent().expect("run dir")).map_err(|e| Error::io(&path, e))?;
                std::fs::write(&path, serde_json::to_string_pretty(split).map_err(|e| Error::Serde(e.to_string()))? + "\n")
                    .map_err(|e| Error::io(&path, e))?;
            }
            println!("fold sizes {:?}", folds.fold_sizes());
            Ok(())
        }
        Command::Train { run } => {
            let cfg = cli.experiment()?;
            let outcome = run_single(&cfg, cli.data_root.as_deref(), *run)?;
            println!(
                "run {run}: best epoch {} of {}, test AUC {}",
                outcome.history.best_epoch,
                outcome.history.stopped_epoch,
                outcome.test_auc.map_or("n/a".into(), |a| format!("{a:.4}"))
            );
            Ok(())
        }
        Command::Predict { model, manifest } => {
            let cfg = cli.optional_experiment()?;
            let artifact = ModelArtifact::load(model)?;
            let pre = cfg
                .as_ref()
                .map(|c| c.preprocess.clone())
                .unwrap_or_else(|| PreprocessConfig::with_size(artifact.model.config.input_size));
            let records = ingest(&cli.manifest(manifest.as_ref(), cfg.as_ref())?)?;
            let images = preprocess_all(&records, &pre)?;
            let refs: Vec<_> = images.iter().collect();
            let scores = predict(&artifact, &refs)?;
            let rows: Vec<PredictionRow> = records
                .iter()
                .zip(scores)
                .map(|(r, score)| PredictionRow { image_key: r.image_key(), score, fold: 0 })
                .collect();
            write_predictions(&rows, cli.out()?)?;
            println!("{} predictions", rows.len());
            Ok(())
        }
        Command::Evaluate { predictions, manifest, specialist, threshold, aggregate } => {
            let cfg = cli.optional_experiment()?;
            let source = if *specialist { PredictionSource::Specialist } else { PredictionSource::Model };
            let eval = evaluate_predictions(
                predictions.as_deref(),
                &cli.manifest(manifest.as_ref(), cfg.as_ref())?,
                cli.task_or(cfg.as_ref()),
                source,
                threshold.or(cfg.as_ref().map(|c| c.training.threshold)).unwrap_or(0.5),
                aggregate.or(cfg.as_ref().map(|c| c.evaluation.aggregate)).unwrap_or_default(),
                Default::default(),
            )?;
            if let Some(out) = &cli.out {
                eval.report.write(out)?;
                eval.error_table.write(&out.join("errors.csv"))?;
            }
            print_json(&eval.report)
        }
        Command::AnalyzeErrors { predictions, manifest, threshold } => {
            let cfg = cli.optional_experiment()?;
            let task = cli.task_or(cfg.as_ref());
            let labeled = labeled_set(&cli.manifest(manifest.as_ref(), cfg.as_ref())?, task, Default::default())?;
            let by_key: HashMap<String, &ImageRecord> =
                labeled.items.iter().map(|it| (it.record.image_key(), &it.record)).collect();
            let rows = read_predictions(predictions)?;
            let unknown: Vec<String> =
                rows.iter().filter(|r| !by_key.contains_key(&r.image_key)).map(|r| r.image_key.clone()).collect();
            if !unknown.is_empty() {
                return Err(Error::Join(unknown));
            }
            let threshold = threshold.or(cfg.as_ref().map(|c| c.training.threshold)).unwrap_or(0.5);
            let gold: Vec<ImageRecord> = rows.iter().map(|r| by_key[&r.image_key].clone()).collect();
            let predicted: Vec<bool> = rows.iter().map(|r| r.score >= threshold).collect();
            let table = error_table(task, &predicted, &gold)?;
            if let Some(out) = &cli.out {
                table.write(out)?;
            }
            print!("{}", table.to_csv());
            if task == Task::Ga {
                print_json(&monotonicity_check(&table))?;
            }
            Ok(())
        }
        Command::Saliency { model, image, alpha, sum_abs } => {
            let artifact = ModelArtifact::load(model)?;
            let pre = match cli.optional_experiment()? {
                Some(c) => c.preprocess,
                None => PreprocessConfig::with_size(artifact.model.config.input_size),
            };
            let prepared = preprocess_file(&cli.resolve(image), &pre)?;
            let reduce = if *sum_abs { ChannelReduce::SumAbs } else { ChannelReduce::MaxAbs };
            let map = saliency_map(&artifact, &prepared, &image.display().to_string(), reduce)?;
            save_image(&overlay(&prepared.raster, &map.values, *alpha)?, cli.out()?)?;
            println!("model {}", map.model_fingerprint);
            Ok(())
        }
        Command::RunCrossval => {
            let cfg = cli.experiment()?;
            let outcome = run_crossval(&cfg, cli.data_root.as_deref())?;
            let r = &outcome.report;
            println!(
                "AUC {:.4} (95% CI {:.4} to {:.4}) over {} runs; report in {}",
                r.auc.point,
                r.auc.ci_low,
                r.auc.ci_high,
                outcome.runs.len(),
                outcome.dir.join("report").display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind().exit_code() as u8)
        }
    }
}
