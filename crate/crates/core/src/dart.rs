//! Server-side robustification of a pretrained model on unlabeled proxy data.
//!
//! The teacher is frozen at the incoming weights and the student starts from
//! them. Each epoch runs minibatch SGD on the DART loss over the training
//! split and then scores the student on the validation split; the weights
//! with the lowest validation loss seen so far are returned.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augmix::{AugMixConfig, AugmentedBatch};
use crate::data::{split_proxy, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{dart_loss_and_grad, dart_objective, LossWeights};
use crate::model::{Classifier, Matrix, Optimizer, OptimizerKind, ParameterVector};
use crate::rng::{self, tag};

/// Training stops once this many consecutive epochs fail to improve,
/// counted as `patience - STOP_OFFSET`. With the default patience of 3 the
/// loop therefore breaks after two non-improving epochs.
pub const STOP_OFFSET: usize = 1;

/// Which terms of the DART objective are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DartVariant {
    #[default]
    Full,
    /// Distillation only (`alpha = 0`).
    NoConsistency,
    /// Consistency only.
    NoDistillation,
}

impl DartVariant {
    pub fn name(self) -> &'static str {
        match self {
            DartVariant::Full => "full",
            DartVariant::NoConsistency => "no_consistency",
            DartVariant::NoDistillation => "no_distillation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DartConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub alpha: f64,
    pub variant: DartVariant,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for DartConfig {
    fn default() -> Self {
        DartConfig {
            max_epochs: 200,
            patience: 3,
            lr: 0.001,
            optimizer: OptimizerKind::Sgd,
            batch_size: 32,
            alpha: 12.0,
            variant: DartVariant::Full,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl DartConfig {
    /// Checks the invariants. `lr = 0` is accepted so callers can request
    /// no-op training.
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::Config("dart max_epochs must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("dart patience must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("dart lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("dart batch_size must be at least 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config("dart val_fraction must lie in (0, 1)".into()));
        }
        self.weights().validate()
    }

    pub fn weights(&self) -> LossWeights {
        match self.variant {
            DartVariant::Full => LossWeights {
                alpha: self.alpha,
                distill: 1.0,
            },
            DartVariant::NoConsistency => LossWeights {
                alpha: 0.0,
                distill: 1.0,
            },
            DartVariant::NoDistillation => LossWeights {
                alpha: self.alpha,
                distill: 0.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DartReport {
    pub epochs_run: usize,
    /// Per-sample mean training loss of each epoch, measured during the
    /// epoch's updates.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// 1-based epoch whose weights were returned; 0 if none was accepted.
    pub selected_epoch: usize,
    pub stopped_early: bool,
    pub train_size: usize,
    pub val_size: usize,
}

impl DartReport {
    pub fn best_val_loss(&self) -> Option<f64> {
        self.selected_epoch
            .checked_sub(1)
            .and_then(|i| self.val_loss.get(i).copied())
    }
}

/// Algorithm-2 early stopping: ties count as improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    counter: usize,
    best: f64,
}

/// Outcome of one [`EarlyStopping::observe`] call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            counter: 0,
            best: f64::INFINITY,
        }
    }

    pub fn observe(&mut self, loss: f64) -> StopDecision {
        let improved = loss <= self.best;
        if improved {
            self.best = loss;
            self.counter = 0;
        } else {
            self.counter += 1;
        }
        StopDecision {
            improved,
            stop: self.counter == self.patience - STOP_OFFSET,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

fn teacher_probs(teacher: &Classifier, images: &[Image], batch: usize) -> Result<Matrix> {
    let mut rows = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch) {
        let p = teacher.predict_proba(chunk)?;
        rows.extend(p.iter_rows().map(<[f64]>::to_vec));
    }
    Matrix::from_rows(&rows)
}

fn select_rows(m: &Matrix, idx: &[usize]) -> Result<Matrix> {
    Matrix::from_rows(&idx.iter().map(|&i| m.row(i).to_vec()).collect::<Vec<_>>())
}

fn build_batch(
    images: &[Image],
    idx: &[usize],
    weights: LossWeights,
    aug: &AugMixConfig,
    seed: u64,
) -> Result<AugmentedBatch> {
    let clean: Vec<Image> = idx.iter().map(|&i| images[i].clone()).collect();
    if weights.alpha > 0.0 {
        let keys: Vec<u64> = idx.iter().map(|&i| i as u64).collect();
        AugmentedBatch::build(clean, &keys, aug, seed)
    } else {
        Ok(AugmentedBatch::clean_only(clean))
    }
}

/// Validation views and teacher outputs, built once per run.
struct ValSet {
    batches: Vec<(Matrix, AugmentedBatch)>,
    weights: LossWeights,
    len: usize,
}

impl ValSet {
    fn new(teacher: &Matrix, images: &[Image], weights: LossWeights, aug: &AugMixConfig, batch_size: usize, seed: u64) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::EmptyDataset("DART validation split".into()));
        }
        let all: Vec<usize> = (0..images.len()).collect();
        let batches = all
            .chunks(batch_size)
            .map(|idx| Ok((select_rows(teacher, idx)?, build_batch(images, idx, weights, aug, seed)?)))
            .collect::<Result<_>>()?;
        Ok(ValSet {
            batches,
            weights,
            len: images.len(),
        })
    }

    /// Per-sample mean DART loss of `student`.
    fn loss(&self, student: &Classifier) -> Result<f64> {
        let mut total = 0.0;
        for (t, batch) in &self.batches {
            let mut passes = vec![student.predict_proba(&batch.clean)?];
            if self.weights.alpha > 0.0 {
                passes.push(student.predict_proba(&batch.aug1)?);
                passes.push(student.predict_proba(&batch.aug2)?);
            }
            let (v, _) = dart_objective(t, &passes, self.weights)?;
            total += v.total * batch.len() as f64;
        }
        Ok(total / self.len as f64)
    }
}

fn val_seed(cfg: &DartConfig, epoch: usize) -> u64 {
    rng::derive_seed(cfg.seed, &[tag::DART_VAL_AUG, epoch as u64])
}

/// Validation loss of `student` at `epoch` (1-based): the per-sample mean
/// of the DART loss over `val`, augmentations drawn from the epoch's stream.
pub fn evaluate_dart_val_loss(
    student: &Classifier,
    teacher: &Classifier,
    val: &UnlabeledDataset,
    cfg: &DartConfig,
    aug: &AugMixConfig,
    epoch: usize,
) -> Result<f64> {
    let t = teacher_probs(teacher, val.images(), cfg.batch_size)?;
    ValSet::new(&t, val.images(), cfg.weights(), aug, cfg.batch_size, val_seed(cfg, epoch))?.loss(student)
}

/// Splits `proxy` and runs [`dart_train_split`].
pub fn dart_train(
    teacher: &Classifier,
    proxy: &UnlabeledDataset,
    cfg: &DartConfig,
    aug: &AugMixConfig,
) -> Result<(ParameterVector, DartReport)> {
    let (train, val) = split_proxy(proxy, cfg.val_fraction, cfg.seed)?;
    dart_train_split(teacher, &train, &val, cfg, aug)
}

pub fn dart_train_split(
    teacher: &Classifier,
    train: &UnlabeledDataset,
    val: &UnlabeledDataset,
    cfg: &DartConfig,
    aug: &AugMixConfig,
) -> Result<(ParameterVector, DartReport)> {
    let t_val = teacher_probs(teacher, val.images(), cfg.batch_size)?;
    let (params, mut report) = dart_train_with(teacher, train, cfg, aug, |student, epoch| {
        ValSet::new(&t_val, val.images(), cfg.weights(), aug, cfg.batch_size, val_seed(cfg, epoch))?.loss(student)
    })?;
    report.val_size = val.len();
    Ok((params, report))
}

/// The training loop with a caller-supplied validation loss
/// `validate(student, epoch)`.
pub fn dart_train_with<V>(
    teacher: &Classifier,
    train: &UnlabeledDataset,
    cfg: &DartConfig,
    aug: &AugMixConfig,
    mut validate: V,
) -> Result<(ParameterVector, DartReport)>
where
    V: FnMut(&Classifier, usize) -> Result<f64>,
{
    cfg.validate()?;
    aug.validate()?;
    if !teacher.params().is_finite() {
        return Err(Error::NonFinite("DART input weights".into()));
    }
    let weights = cfg.weights();
    let images = train.images();
    let t_train = teacher_probs(teacher, images, cfg.batch_size)?;
    let mut student = teacher.clone();
    let mut best = teacher.params().clone();
    let mut stopping = EarlyStopping::new(cfg.patience);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
    let mut report = DartReport {
        train_size: images.len(),
        ..DartReport::default()
    };

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..images.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, &[tag::DART_SHUFFLE, epoch as u64]));
        let aug_seed = rng::derive_seed(cfg.seed, &[tag::DART_TRAIN_AUG, epoch as u64]);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch = build_batch(images, idx, weights, aug, aug_seed)?;
            let step = dart_loss_and_grad(&select_rows(&t_train, idx)?, &student, &batch, weights)
                .and_then(|(v, g)| Ok((v, opt.step(student.params(), &g)?)));
            let (value, next) = match step {
                Ok(ok) => ok,
                Err(e) => {
                    report.epochs_run = epoch;
                    return Err(Error::DartAborted {
                        epoch,
                        reason: e.to_string(),
                        report: Box::new(report),
                    });
                }
            };
            epoch_loss += value.total * idx.len() as f64;
            student.set_params(next)?;
        }
        report.train_loss.push(epoch_loss / images.len() as f64);
        report.epochs_run = epoch;

        let val = validate(&student, epoch)?;
        if !val.is_finite() {
            return Err(Error::DartAborted {
                epoch,
                reason: format!("validation loss {val}"),
                report: Box::new(report),
            });
        }
        report.val_loss.push(val);
        let decision = stopping.observe(val);
        if decision.improved {
            best = student.params().clone();
            report.selected_epoch = epoch;
        }
        if decision.stop {
            report.stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    log::debug!(
        "dart: {} epochs, selected epoch {}, best val loss {:.5}",
        report.epochs_run,
        report.selected_epoch,
        stopping.best()
    );
    Ok((best, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Shape;
    use crate::model::Architecture;
    use std::sync::Arc;

    fn tiny_setup() -> (Classifier, UnlabeledDataset) {
        let shape = Shape::new(4, 4, 1);
        let arch = Arc::new(Architecture::mlp(shape, &[6], 3).unwrap());
        let teacher = Classifier::init(arch, 3);
        let images = (0..20)
            .map(|i| {
                Image::from_vec(shape, (0..16).map(|j| ((i * 7 + j * 3) % 17) as f32 / 16.0).collect()).unwrap()
            })
            .collect();
        (teacher, UnlabeledDataset::new("proxy", images).unwrap())
    }

    fn small_cfg() -> DartConfig {
        DartConfig {
            max_epochs: 6,
            batch_size: 8,
            lr: 0.05,
            ..DartConfig::default()
        }
    }

    #[test]
    fn scheduled_validation_trace() {
        let (teacher, proxy) = tiny_setup();
        let schedule = [5.0, 4.0, 6.0, 7.0, 8.0];
        let cfg = DartConfig {
            max_epochs: 5,
            ..small_cfg()
        };
        let mut snapshots = Vec::new();
        let (w, report) = dart_train_with(&teacher, &proxy, &cfg, &AugMixConfig::default(), |s, epoch| {
            snapshots.push(s.params().clone());
            Ok(schedule[epoch - 1])
        })
        .unwrap();
        assert_eq!(report.selected_epoch, 2);
        assert_eq!(report.epochs_run, 4);
        assert!(report.stopped_early);
        assert_eq!(w, snapshots[1]);
    }

    #[test]
    fn single_epoch_returns_its_weights() {
        let (teacher, proxy) = tiny_setup();
        let cfg = DartConfig {
            max_epochs: 1,
            ..small_cfg()
        };
        let mut seen = None;
        let (w, report) = dart_train_with(&teacher, &proxy, &cfg, &AugMixConfig::default(), |s, _| {
            seen = Some(s.params().clone());
            Ok(1.0)
        })
        .unwrap();
        assert_eq!(report.selected_epoch, 1);
        assert!(!report.stopped_early);
        assert_eq!(Some(w), seen);
    }

    #[test]
    fn zero_lr_returns_input_weights() {
        let (teacher, proxy) = tiny_setup();
        let cfg = DartConfig {
            lr: 0.0,
            ..small_cfg()
        };
        let before = teacher.params().clone();
        let (w, report) = dart_train(&teacher, &proxy, &cfg, &AugMixConfig::default()).unwrap();
        assert_eq!(w, before);
        assert_eq!(teacher.params(), &before);
        assert!(report.epochs_run >= 1);
    }

    #[test]
    fn patience_one_stops_after_first_epoch() {
        let mut s = EarlyStopping::new(1);
        assert!(s.observe(3.0).stop);
    }

    #[test]
    fn ties_count_as_improvement() {
        let mut s = EarlyStopping::new(3);
        assert!(s.observe(2.0).improved);
        assert!(s.observe(2.0).improved);
        assert!(!s.observe(2.5).improved);
    }

    #[test]
    fn selected_epoch_has_minimal_validation_loss() {
        let (teacher, proxy) = tiny_setup();
        let (_, report) = dart_train(&teacher, &proxy, &small_cfg(), &AugMixConfig::default()).unwrap();
        let best = report.best_val_loss().unwrap();
        assert!(report.val_loss.iter().all(|&v| v >= best));
    }

    #[test]
    fn val_loss_deterministic_and_zero_for_identity() {
        let (teacher, proxy) = tiny_setup();
        let cfg = small_cfg();
        let aug = AugMixConfig::default();
        let a = evaluate_dart_val_loss(&teacher, &teacher, &proxy, &cfg, &aug, 1).unwrap();
        let b = evaluate_dart_val_loss(&teacher, &teacher, &proxy, &cfg, &aug, 1).unwrap();
        assert_eq!(a, b);
        let id = evaluate_dart_val_loss(&teacher, &teacher, &proxy, &cfg, &AugMixConfig::identity_only(), 1).unwrap();
        assert!(id.abs() < 1e-12, "{id}");
    }

    #[test]
    fn val_loss_matches_batchwise_recomputation() {
        let (teacher, proxy) = tiny_setup();
        let student = Classifier::init(teacher.architecture().clone(), 9);
        let cfg = small_cfg();
        let aug = AugMixConfig::default();
        let v = evaluate_dart_val_loss(&student, &teacher, &proxy, &cfg, &aug, 2).unwrap();
        let seed = val_seed(&cfg, 2);
        let mut total = 0.0;
        for start in (0..proxy.len()).step_by(cfg.batch_size) {
            let idx: Vec<usize> = (start..(start + cfg.batch_size).min(proxy.len())).collect();
            let clean = idx.iter().map(|&i| proxy.images()[i].clone()).collect();
            let keys: Vec<u64> = idx.iter().map(|&i| i as u64).collect();
            let batch = AugmentedBatch::build(clean, &keys, &aug, seed).unwrap();
            let l = crate::losses::dart_loss(&teacher, &student, &batch, cfg.weights()).unwrap();
            total += l.total * idx.len() as f64;
        }
        assert!((v - total / proxy.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn training_reduces_validation_loss() {
        let (teacher, proxy) = tiny_setup();
        let (_, report) = dart_train(&teacher, &proxy, &small_cfg(), &AugMixConfig::default()).unwrap();
        assert!(report.best_val_loss().unwrap() <= report.val_loss[0]);
        assert_eq!(report.train_size + report.val_size, proxy.len());
    }

    #[test]
    fn non_finite_weights_rejected() {
        let (teacher, proxy) = tiny_setup();
        let mut values = teacher.params().values().to_vec();
        values[0] = f64::NAN;
        let bad = teacher
            .with_params(ParameterVector::from_values(teacher.params().layout().clone(), values).unwrap())
            .unwrap();
        assert!(dart_train(&bad, &proxy, &small_cfg(), &AugMixConfig::default()).is_err());
    }

    #[test]
    fn report_serializes() {
        let (teacher, proxy) = tiny_setup();
        let (_, report) = dart_train(&teacher, &proxy, &small_cfg(), &AugMixConfig::default()).unwrap();
        let text = serde_json::to_string(&report).unwrap();
        assert_eq!(serde_json::from_str::<DartReport>(&text).unwrap(), report);
    }
}
