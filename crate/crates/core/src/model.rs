//! Binary classifiers: architectures, training with Adam and dev-loss early
//! stopping, inference, and the on-disk artifact.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::Task;
use crate::error::{Error, Result};
use crate::folds::{apply_augment, AugmentConfig, AugmentDraw};
use crate::nn::{bce_with_logits, sigmoid, Adam, AdamConfig, NetBuilder, Network, Shape, Tensor, Weights};
#[cfg(test)]
use crate::nn::Layer;
use crate::par;
use crate::preprocess::{hex_digest, PreparedImage};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Inception-v3 backbone with a single-logit head.
    Paper,
    /// Small CNN for desk-scale experiments.
    Tiny,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Ok(Profile::Paper),
            "tiny" => Ok(Profile::Tiny),
            other => Err(Error::Config(format!("unknown model profile `{other}`"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Tiny => "tiny",
        })
    }
}

pub const PAPER_INPUT_SIZE: usize = 512;
pub const TINY_INPUT_SIZES: [usize; 4] = [16, 32, 64, 128];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub profile: Profile,
    pub input_size: usize,
    pub pretrained: bool,
    pub task: Task,
    /// Weight blob holding generic pretraining for the backbone; required
    /// when `pretrained` is set.
    #[serde(default)]
    pub pretrained_weights: Option<PathBuf>,
    /// Leading top-level layers excluded from fine-tuning.
    #[serde(default)]
    pub freeze_layers: usize,
}

impl ModelConfig {
    pub fn tiny(input_size: usize, task: Task) -> Self {
        ModelConfig {
            profile: Profile::Tiny,
            input_size,
            pretrained: false,
            task,
            pretrained_weights: None,
            freeze_layers: 0,
        }
    }

    pub fn paper(task: Task) -> Self {
        ModelConfig {
            profile: Profile::Paper,
            input_size: PAPER_INPUT_SIZE,
            pretrained: true,
            task,
            pretrained_weights: None,
            freeze_layers: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.profile {
            Profile::Paper => self.input_size == PAPER_INPUT_SIZE,
            Profile::Tiny => TINY_INPUT_SIZES.contains(&self.input_size),
        };
        if !ok {
            return Err(Error::Config(format!(
                "input_size {} not allowed for the {} profile",
                self.input_size, self.profile
            )));
        }
        Ok(())
    }

    pub fn network(&self) -> Result<Network> {
        self.validate()?;
        Ok(match self.profile {
            Profile::Paper => inception_v3(self.input_size),
            Profile::Tiny => tiny_cnn(self.input_size),
        })
    }
}

/// Maps 8-bit normalized pixels (centered on 128) to roughly [−2, 2].
fn input_scaling(b: &mut NetBuilder) {
    b.scale(1.0 / 64.0, -2.0);
}

/// Four conv stages with max pooling, then concatenated global average and
/// global max pooling feeding one logit.
pub fn tiny_cnn(input_size: usize) -> Network {
    let mut b = NetBuilder::new(Shape::new(3, input_size, input_size));
    input_scaling(&mut b);
    b.conv(12, (5, 5), (2, 2), (2, 2), true).relu().max_pool(2, 2, 0);
    b.conv(24, (3, 3), (1, 1), (1, 1), true).relu().max_pool(2, 2, 0);
    b.conv(32, (3, 3), (1, 1), (1, 1), true).relu().max_pool(2, 2, 0);
    b.conv(32, (3, 3), (1, 1), (1, 1), true).relu();
    b.branches(&[
        &|b: &mut NetBuilder| {
            b.global_avg_pool();
        },
        &|b: &mut NetBuilder| {
            b.global_max_pool();
        },
    ]);
    b.dense(1);
    b.build()
}

const BN_EPS: f64 = 1e-3;

/// conv (no bias) → batch norm (β only) → ReLU.
fn conv_bn(b: &mut NetBuilder, c: usize, k: (usize, usize), s: usize, p: (usize, usize)) {
    b.conv(c, k, (s, s), p, false).batch_norm(BN_EPS, false).relu();
}

fn inception_a(b: &mut NetBuilder, pool_features: usize) {
    b.branches(&[
        &|b: &mut NetBuilder| conv_bn(b, 64, (1, 1), 1, (0, 0)),
        &|b: &mut NetBuilder| {
            conv_bn(b, 48, (1, 1), 1, (0, 0));
            conv_bn(b, 64, (5, 5), 1, (2, 2));
        },
        &|b: &mut NetBuilder| {
            conv_bn(b, 64, (1, 1), 1, (0, 0));
            conv_bn(b, 96, (3, 3), 1, (1, 1));
            conv_bn(b, 96, (3, 3), 1, (1, 1));
        },
        &|b: &mut NetBuilder| {
            b.avg_pool(3, 1, 1);
            conv_bn(b, pool_features, (1, 1), 1, (0, 0));
        },
    ]);
}

fn inception_b(b: &mut NetBuilder) {
    b.branches(&[
        &|b: &mut NetBuilder| conv_bn(b, 384, (3, 3), 2, (0, 0)),
        &|b: &mut NetBuilder| {
            conv_bn(b, 64, (1, 1), 1, (0, 0));
            conv_bn(b, 96, (3, 3), 1, (1, 1));
            conv_bn(b, 96, (3, 3), 2, (0, 0));
        },
        &|b: &mut NetBuilder| {
            b.max_pool(3, 2, 0);
        },
    ]);
}

fn inception_c(b: &mut NetBuilder, c7: usize) {
    b.branches(&[
        &|b: &mut NetBuilder| conv_bn(b, 192, (1, 1), 1, (0, 0)),
        &|b: &mut NetBuilder| {
            conv_bn(b, c7, (1, 1), 1, (0, 0));
            conv_bn(b, c7, (1, 7), 1, (0, 3));
            conv_bn(b, 192, (7, 1), 1, (3, 0));
        },
        &|b: &mut NetBuilder| {
            conv_bn(b, c7, (1, 1), 1, (0, 0));
            conv_bn(b, c7, (7, 1), 1, (3, 0));
            conv_bn(b, c7, (1, 7), 1, (0, 3));
            conv_bn(b, c7, (7, 1), 1, (3, 0));
            conv_bn(b, 192, (1, 7), 1, (0, 3));
        },
        &|b: &mut NetBuilder| {
            b.avg_pool(3, 1, 1);
            conv_bn(b, 192, (1, 1), 1, (0, 0));
        },
    ]);
}

fn inception_d(b: &mut NetBuilder) {
    b.branches(&[
        &|b: &mut NetBuilder| {
            conv_bn(b, 192, (1, 1), 1, (0, 0));
            conv_bn(b, 320, (3, 3), 2, (0, 0));
        },
        &|b: &mut NetBuilder| {
            conv_bn(b, 192, (1, 1), 1, (0, 0));
            conv_bn(b, 192, (1, 7), 1, (0, 3));
            conv_bn(b, 192, (7, 1), 1, (3, 0));
            conv_bn(b, 192, (3, 3), 2, (0, 0));
        },
        &|b: &mut NetBuilder| {
            b.max_pool(3, 2, 0);
        },
    ]);
}

fn inception_e(b: &mut NetBuilder) {
    let split_3x3 = |b: &mut NetBuilder| {
        b.branches(&[
            &|b: &mut NetBuilder| conv_bn(b, 384, (1, 3), 1, (0, 1)),
            &|b: &mut NetBuilder| conv_bn(b, 384, (3, 1), 1, (1, 0)),
        ]);
    };
    b.branches(&[
        &|b: &mut NetBuilder| conv_bn(b, 320, (1, 1), 1, (0, 0)),
        &|b: &mut NetBuilder| {
            conv_bn(b, 384, (1, 1), 1, (0, 0));
            split_3x3(b);
        },
        &|b: &mut NetBuilder| {
            conv_bn(b, 448, (1, 1), 1, (0, 0));
            conv_bn(b, 384, (3, 3), 1, (1, 1));
            split_3x3(b);
        },
        &|b: &mut NetBuilder| {
            b.avg_pool(3, 1, 1);
            conv_bn(b, 192, (1, 1), 1, (0, 0));
        },
    ]);
}

/// Inception-v3 (no auxiliary head) with batch norm in inference form,
/// global average pooling and a single-logit dense head.
pub fn inception_v3(input_size: usize) -> Network {
    let mut b = NetBuilder::new(Shape::new(3, input_size, input_size));
    input_scaling(&mut b);
    conv_bn(&mut b, 32, (3, 3), 2, (0, 0));
    conv_bn(&mut b, 32, (3, 3), 1, (0, 0));
    conv_bn(&mut b, 64, (3, 3), 1, (1, 1));
    b.max_pool(3, 2, 0);
    conv_bn(&mut b, 80, (1, 1), 1, (0, 0));
    conv_bn(&mut b, 192, (3, 3), 1, (0, 0));
    b.max_pool(3, 2, 0);
    inception_a(&mut b, 32);
    inception_a(&mut b, 64);
    inception_a(&mut b, 64);
    inception_b(&mut b);
    for c7 in [128, 160, 160, 192] {
        inception_c(&mut b, c7);
    }
    inception_d(&mut b);
    inception_e(&mut b);
    inception_e(&mut b);
    b.global_avg_pool();
    b.dense(1);
    b.build()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub network: Network,
    pub weights: Weights,
}

impl Model {
    pub fn parameter_count(&self) -> usize {
        self.network.n_params
    }

    pub fn logit(&self, image: &PreparedImage) -> f64 {
        self.network
            .forward(&self.weights, Tensor::from_raster(&image.raster))
            .data[0]
    }
}

/// Builds a classifier. Pretrained initialization loads the backbone from
/// `pretrained_weights`; it never falls back to random weights.
pub fn build_model(cfg: &ModelConfig, init_seed: u64) -> Result<Model> {
    let network = cfg.network()?;
    let mut weights = network.init_weights(&mut seed::rng(init_seed, &[0x1417]));
    if cfg.pretrained {
        let path = cfg.pretrained_weights.as_ref().ok_or_else(|| {
            Error::PretrainedUnavailable(format!(
                "the {} profile was asked for pretrained weights but no weight file is configured",
                cfg.profile
            ))
        })?;
        let loaded = read_weights(path).map_err(|e| Error::PretrainedUnavailable(e.to_string()))?;
        let head_start = network.param_boundary(network.layers.len() - 1);
        let full = loaded.params.len() == network.n_params;
        if !(full || loaded.params.len() == head_start) || loaded.buffers.len() != network.n_buffers {
            return Err(Error::PretrainedUnavailable(format!(
                "{} holds {} params / {} buffers; network needs {} (or {} without head) / {}",
                path.display(),
                loaded.params.len(),
                loaded.buffers.len(),
                network.n_params,
                head_start,
                network.n_buffers
            )));
        }
        weights.params[..loaded.params.len()].copy_from_slice(&loaded.params);
        weights.buffers = loaded.buffers;
    }
    Ok(Model {
        config: cfg.clone(),
        network,
        weights,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience_epochs: usize,
    pub seed: u64,
    /// Weight on the positive term of the loss; `None` means unweighted.
    pub positive_weight: Option<f64>,
    /// Threshold used for the audit-only dev accuracy.
    pub threshold: f64,
    pub augment: AugmentConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 1e-4,
            batch_size: 32,
            max_epochs: 30,
            patience_epochs: 5,
            seed: 0,
            positive_weight: None,
            threshold: 0.5,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite())
            || self.batch_size == 0
            || self.max_epochs == 0
            || self.patience_epochs == 0
            || self.patience_epochs > self.max_epochs
            || self.positive_weight.is_some_and(|w| !(w > 0.0))
        {
            return Err(Error::Config(format!("invalid training config {self:?}")));
        }
        self.augment.validate()
    }

    pub fn fingerprint(&self, fold_seed: u64) -> String {
        let mut bytes = serde_json::to_vec(self).expect("config serializes");
        bytes.extend_from_slice(&fold_seed.to_le_bytes());
        hex_digest(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
}

impl TrainingHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,dev_loss,dev_acc\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e}\n",
                e.epoch, e.train_loss, e.dev_loss, e.dev_accuracy
            ));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut epochs = Vec::new();
        for row in r.records() {
            let row = row?;
            let num = |i: usize| -> Result<f64> {
                row.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Data(format!("bad history row {row:?}")))
            };
            epochs.push(EpochRecord {
                epoch: num(0)? as usize,
                train_loss: num(1)?,
                dev_loss: num(2)?,
                dev_accuracy: num(3)?,
            });
        }
        let best_epoch = epochs
            .iter()
            .fold(None::<&EpochRecord>, |best, e| match best {
                Some(b) if b.dev_loss <= e.dev_loss => Some(b),
                _ => Some(e),
            })
            .map_or(0, |e| e.epoch);
        Ok(TrainingHistory {
            stopped_epoch: epochs.last().map_or(0, |e| e.epoch),
            best_epoch,
            epochs,
        })
    }
}

/// Dev-loss early stopping: the best epoch is the first one attaining the
/// minimum; training stops once `patience` epochs pass without a strict
/// improvement, or at `max_epochs`.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    max_epochs: usize,
    best: Option<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    /// Continue; `improved` tells whether this epoch is the new best.
    Continue { improved: bool },
    Stop { improved: bool },
}

impl EarlyStopping {
    pub fn new(patience: usize, max_epochs: usize) -> Self {
        EarlyStopping {
            patience,
            max_epochs,
            best: None,
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|b| b.0)
    }

    pub fn observe(&mut self, epoch: usize, dev_loss: f64) -> StopDecision {
        let improved = self.best.is_none_or(|(_, l)| dev_loss < l);
        if improved {
            self.best = Some((epoch, dev_loss));
        }
        let stale = epoch - self.best.map_or(epoch, |b| b.0);
        if stale >= self.patience || epoch >= self.max_epochs {
            StopDecision::Stop { improved }
        } else {
            StopDecision::Continue { improved }
        }
    }
}

/// One training or evaluation example.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub image: &'a PreparedImage,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub preprocess_fingerprint: String,
    pub training_fingerprint: String,
    pub n_params: usize,
    pub n_buffers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub model: Model,
    pub meta: ArtifactMeta,
}

/// Samples per gradient chunk. Fixed so the summation order (and thus the
/// trained weights) does not depend on the number of worker threads.
const GRAD_CHUNK: usize = 4;

const STREAM_ORDER: u64 = 1;
const STREAM_AUGMENT: u64 = 2;

fn check_fingerprints(examples: &[Example<'_>], expected: &str) -> Result<()> {
    match examples.iter().find(|e| e.image.fingerprint != expected) {
        Some(e) => Err(Error::Fingerprint {
            expected: expected.to_string(),
            found: e.image.fingerprint.clone(),
        }),
        None => Ok(()),
    }
}

fn check_input_shape(model: &Model, image: &PreparedImage) -> Result<()> {
    let (h, w, c) = image.raster.shape();
    let s = model.network.input;
    if (c, h, w) != (s.c, s.h, s.w) {
        return Err(Error::Shape(format!(
            "model expects {}×{}×{}, image is {h}×{w}×{c}",
            s.h, s.w, s.c
        )));
    }
    Ok(())
}

/// Mean unweighted cross-entropy and accuracy of `model` on `examples`.
fn evaluate(model: &Model, examples: &[Example<'_>], threshold: f64) -> (f64, f64) {
    let logits = par::map(examples, |e| model.logit(e.image));
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (z, e) in logits.iter().zip(examples) {
        loss += bce_with_logits(*z, e.label, 1.0).0;
        correct += usize::from((sigmoid(*z) >= threshold) == e.label);
    }
    let n = examples.len() as f64;
    (loss / n, correct as f64 / n)
}

/// Minibatch Adam on per-sample gradients, with per-epoch dev-loss early
/// stopping. Returns the weights of the best epoch.
pub fn train(
    mut model: Model,
    train_set: &[Example<'_>],
    dev_set: &[Example<'_>],
    cfg: &TrainingConfig,
    fold_seed: u64,
) -> Result<(ModelArtifact, TrainingHistory)> {
    cfg.validate()?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::Training("train and dev sets must be non-empty".into()));
    }
    let positives = train_set.iter().filter(|e| e.label).count();
    if positives == 0 || positives == train_set.len() {
        return Err(Error::Training(format!(
            "training set has a single class ({positives} positives of {})",
            train_set.len()
        )));
    }
    let fingerprint = train_set[0].image.fingerprint.clone();
    check_fingerprints(train_set, &fingerprint)?;
    check_fingerprints(dev_set, &fingerprint)?;
    check_input_shape(&model, train_set[0].image)?;

    let net = model.network.clone();
    let frozen = net.param_boundary(model.config.freeze_layers);
    let pos_weight = cfg.positive_weight.unwrap_or(1.0);
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
        net.n_params,
    );
    let mut stopper = EarlyStopping::new(cfg.patience_epochs, cfg.max_epochs);
    let mut best_weights = model.weights.clone();
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut seed::rng(cfg.seed, &[STREAM_ORDER, epoch as u64]));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let chunks: Vec<&[usize]> = batch.chunks(GRAD_CHUNK).collect();
            let weights = &model.weights;
            let partials = par::map(&chunks, |chunk| {
                let mut grads = vec![0.0; net.n_params];
                let mut loss = 0.0;
                for &i in chunk.iter() {
                    let ex = &train_set[i];
                    let mut rng = seed::rng(cfg.seed, &[STREAM_AUGMENT, epoch as u64, i as u64]);
                    let draw = AugmentDraw::draw(&mut rng, &cfg.augment, ex.image.raster.height(), ex.image.raster.width());
                    let x = Tensor::from_raster(&apply_augment(&ex.image.raster, &draw));
                    net.forward_backward(weights, x, &mut grads, false, |out| {
                        let (l, dl) = bce_with_logits(out.data[0], ex.label, pos_weight);
                        loss += l;
                        Tensor::from_vec(out.shape, vec![dl])
                    });
                }
                (grads, loss)
            });
            let mut grads = vec![0.0; net.n_params];
            let mut batch_loss = 0.0;
            for (g, l) in partials {
                grads.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                batch_loss += l;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    message: format!("non-finite training loss {batch_loss}"),
                });
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut model.weights.params, &grads, frozen);
            epoch_loss += batch_loss;
        }
        let (dev_loss, dev_accuracy) = evaluate(&model, dev_set, cfg.threshold);
        if !dev_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                message: format!("non-finite dev loss {dev_loss}"),
            });
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            dev_loss,
            dev_accuracy,
        });
        let decision = stopper.observe(epoch, dev_loss);
        let (improved, stop) = match decision {
            StopDecision::Continue { improved } => (improved, false),
            StopDecision::Stop { improved } => (improved, true),
        };
        if improved {
            best_weights = model.weights.clone();
        }
        if stop {
            break;
        }
    }

    let history = TrainingHistory {
        stopped_epoch: epochs.last().map_or(0, |e| e.epoch),
        best_epoch: stopper.best_epoch().unwrap_or(0),
        epochs,
    };
    model.weights = best_weights;
    let meta = ArtifactMeta {
        model: model.config.clone(),
        training: cfg.clone(),
        preprocess_fingerprint: fingerprint,
        training_fingerprint: cfg.fingerprint(fold_seed),
        n_params: model.network.n_params,
        n_buffers: model.network.n_buffers,
    };
    Ok((ModelArtifact { model, meta }, history))
}

impl ModelArtifact {
    /// Wraps an untrained or externally trained model.
    pub fn new(model: Model, preprocess_fingerprint: String, training: TrainingConfig) -> Self {
        let meta = ArtifactMeta {
            model: model.config.clone(),
            training_fingerprint: training.fingerprint(0),
            training,
            preprocess_fingerprint,
            n_params: model.network.n_params,
            n_buffers: model.network.n_buffers,
        };
        ModelArtifact { model, meta }
    }

    pub fn check_input(&self, image: &PreparedImage) -> Result<()> {
        if image.fingerprint != self.meta.preprocess_fingerprint {
            return Err(Error::Fingerprint {
                expected: self.meta.preprocess_fingerprint.clone(),
                found: image.fingerprint.clone(),
            });
        }
        check_input_shape(&self.model, image)
    }

    /// Writes `weights.bin`, `config.json` and, when given, `history.csv`.
    pub fn save(&self, dir: &Path, history: Option<&TrainingHistory>) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_weights(&self.model.weights, &dir.join("weights.bin"))?;
        let cfg_path = dir.join("config.json");
        fs::write(&cfg_path, serde_json::to_string_pretty(&self.meta)?).map_err(|e| Error::io(&cfg_path, e))?;
        if let Some(h) = history {
            let p = dir.join("history.csv");
            fs::write(&p, h.to_csv()).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cfg_path = dir.join("config.json");
        let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        let meta: ArtifactMeta = serde_json::from_str(&text)?;
        let network = meta.model.network()?;
        let weights = read_weights(&dir.join("weights.bin"))?;
        if weights.params.len() != network.n_params || weights.buffers.len() != network.n_buffers {
            return Err(Error::Data(format!(
                "weights in {} do not fit the configured network",
                dir.display()
            )));
        }
        Ok(ModelArtifact {
            model: Model {
                config: meta.model.clone(),
                network,
                weights,
            },
            meta,
        })
    }
}

/// Positive-class probabilities. Each image is evaluated independently, so
/// results do not depend on how images are batched.
pub fn predict(artifact: &ModelArtifact, images: &[&PreparedImage]) -> Result<Vec<f64>> {
    for img in images {
        artifact.check_input(img)?;
    }
    Ok(par::map(images, |img| sigmoid(artifact.model.logit(img))))
}

const WEIGHTS_MAGIC: [u8; 4] = *b"GAWT";

pub fn write_weights(w: &Weights, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(20 + 8 * (w.params.len() + w.buffers.len()));
    bytes.extend_from_slice(&WEIGHTS_MAGIC);
    bytes.extend_from_slice(&(w.params.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&(w.buffers.len() as u64).to_le_bytes());
    for v in w.params.iter().chain(&w.buffers) {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    crate::raster::ensure_parent(path)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_weights(path: &Path) -> Result<Weights> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || bytes[..4] != WEIGHTS_MAGIC {
        return Err(Error::Data(format!("{} is not a weight file", path.display())));
    }
    let n_params = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let n_buffers = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    if bytes.len() != 20 + 8 * (n_params + n_buffers) {
        return Err(Error::Data(format!("{} is truncated", path.display())));
    }
    let mut vals = bytes[20..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    Ok(Weights {
        params: vals.by_ref().take(n_params).collect(),
        buffers: vals.collect(),
    })
}
