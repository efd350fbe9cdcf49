//! Mini-batch training, evaluation and the epoch log.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Mode;
use crate::error::{Error, Result};
use crate::metrics::{fmt_metric, ConfusionCounts};
use crate::model::{probability_to_masks, SegmentationModel, DEFAULT_THRESHOLD};
use crate::optim::{bce_loss, RAdamConfig, RAdamState, DEFAULT_BATCH_SIZE};
use crate::par;
use crate::scalar::Float;
use crate::sonar::augment::{augment, AugmentConfig};
use crate::sonar::SamplePair;
use crate::tensor::Tensor;

pub const DEFAULT_EPOCHS: usize = 100;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;
pub const LOG_HEADER: &str = "# epoch train_loss val_loss val_accuracy fish_precision fish_recall fish_f1";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: RAdamConfig,
    /// `None` trains on the raw samples.
    pub augment: Option<AugmentConfig>,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            optimizer: RAdamConfig::default(),
            augment: Some(AugmentConfig::default()),
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

/// Stack images into `N×1×W×H` inputs and masks into matching targets.
pub fn stack_batch<T: Float>(samples: &[&SamplePair]) -> Result<(Tensor<T>, Tensor<T>)> {
    let first = samples.first().ok_or_else(|| Error::Data("empty batch".into()))?;
    let (w, h) = (first.image.width(), first.image.height());
    let mut x = Vec::with_capacity(samples.len() * w * h);
    let mut y = Vec::with_capacity(samples.len() * w * h);
    for s in samples {
        if (s.image.width(), s.image.height()) != (w, h) {
            return Err(Error::dim(format!("sample `{}` differs in size", s.id)));
        }
        x.extend(s.image.pixels().iter().map(|&v| T::from_f64(v as f64)));
        y.extend(s.mask.pixels().iter().map(|&v| T::from_f64(v as f64)));
    }
    let shape = [samples.len(), 1, w, h];
    Ok((Tensor::from_vec(shape, x)?, Tensor::from_vec(shape, y)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Mean training BCE over all pixels seen this epoch.
    pub loss: f64,
    /// Training pixel accuracy (all pixels).
    pub accuracy: f64,
    pub batches: usize,
}

/// One pass over `data` in shuffled mini-batches.
pub fn train_epoch<T: Float, R: Rng + ?Sized>(
    model: &mut SegmentationModel<T>,
    data: &[SamplePair],
    batch_size: usize,
    state: &mut RAdamState<T>,
    augmentation: Option<&AugmentConfig>,
    rng: &mut R,
) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Parameter("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let (mut loss_sum, mut correct, mut pixels, mut batches) = (0.0, 0usize, 0usize, 0);
    for chunk in order.chunks(batch_size) {
        let batch: Vec<SamplePair> = match augmentation {
            Some(cfg) => {
                let seeds: Vec<u64> = chunk.iter().map(|_| rng.gen()).collect();
                par::map_range(chunk.len(), |k| {
                    augment(&data[chunk[k]], cfg, &mut ChaCha8Rng::seed_from_u64(seeds[k]))
                })
            }
            None => chunk.iter().map(|&i| data[i].clone()).collect(),
        };
        let refs: Vec<&SamplePair> = batch.iter().collect();
        let (x, target) = stack_batch::<T>(&refs)?;
        let mut pass = model.forward(&x, Mode::Train, rng)?;
        let loss = pass.tape.bce_loss(pass.output, &target)?;
        pass.tape.backward(loss)?;
        let n = target.numel();
        loss_sum += pass.tape.value(loss).data()[0].as_f64() * n as f64;
        let half = T::from_f64(DEFAULT_THRESHOLD);
        correct += pass
            .output()
            .data()
            .iter()
            .zip(target.data())
            .filter(|(&p, &y)| (p > half) == (y > half))
            .count();
        pixels += n;
        model.accumulate_grads(&pass)?;
        drop(pass);
        state.step(&mut model.params_mut())?;
        model.zero_grad();
        batches += 1;
    }
    Ok(EpochStats {
        loss: loss_sum / pixels as f64,
        accuracy: correct as f64 / pixels as f64,
        batches,
    })
}

/// Eval-mode loss and confusion counts over a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub samples: usize,
    pub loss: f64,
    /// Counts inside each sample's fan.
    pub fan: ConfusionCounts,
    /// Counts over the whole raster.
    pub full: ConfusionCounts,
}

pub const EVAL_BATCH: usize = 4;

pub fn evaluate_model<T: Float>(model: &SegmentationModel<T>, data: &[SamplePair], threshold: f64) -> Result<EvalReport> {
    evaluate_with(data, threshold, |x: &Tensor<T>| model.predict(x))
}

/// Same as [`evaluate_model`] for any batch predictor `N×1×W×H → N×1×W×H`.
pub fn evaluate_with<T: Float>(
    data: &[SamplePair],
    threshold: f64,
    predict: impl Fn(&Tensor<T>) -> Result<Tensor<T>>,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    let mut report = EvalReport {
        samples: data.len(),
        loss: 0.0,
        fan: ConfusionCounts::default(),
        full: ConfusionCounts::default(),
    };
    for chunk in data.chunks(EVAL_BATCH) {
        let refs: Vec<&SamplePair> = chunk.iter().collect();
        let (x, _) = stack_batch::<T>(&refs)?;
        let probs = predict(&x)?;
        let masks = probability_to_masks(&probs, threshold)?;
        let plane = probs.numel() / chunk.len();
        for (k, (s, pred)) in chunk.iter().zip(&masks).enumerate() {
            let p = Tensor::from_vec([plane], probs.data()[k * plane..(k + 1) * plane].to_vec())?;
            report.loss += bce_loss(&p, &s.mask)?.loss;
            report.fan += ConfusionCounts::from_masks(pred, &s.mask, Some(s.image.fan()))?;
            report.full += ConfusionCounts::from_masks(pred, &s.mask, None)?;
        }
    }
    report.loss /= data.len() as f64;
    Ok(report)
}

/// Fixed split: the first `fraction` of the samples train, the rest validate.
pub fn split_dataset(data: &[SamplePair], fraction: f64) -> Result<(&[SamplePair], &[SamplePair])> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Parameter(format!("split fraction {fraction} outside (0, 1]")));
    }
    if data.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let n_train = ((data.len() as f64 * fraction).round() as usize).clamp(1, data.len());
    Ok(data.split_at(n_train))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: EpochStats,
    pub val: Option<EvalReport>,
}

impl EpochRecord {
    pub fn log_line(&self) -> String {
        let v = self.val.as_ref();
        format!(
            "{} {:.6} {} {} {} {} {}",
            self.epoch,
            self.train.loss,
            fmt_metric(v.map(|r| r.loss)),
            fmt_metric(v.and_then(|r| r.fan.accuracy())),
            fmt_metric(v.and_then(|r| r.fan.precision())),
            fmt_metric(v.and_then(|r| r.fan.recall())),
            fmt_metric(v.and_then(|r| r.fan.f1())),
        )
    }

    /// Validation loss, or training loss without a validation set.
    pub fn selection_loss(&self) -> f64 {
        self.val.map_or(self.train.loss, |v| v.loss)
    }
}

pub struct TrainOutcome<T> {
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    /// Model state at the lowest selection loss.
    pub best_state: Option<Vec<(String, Tensor<T>)>>,
}

/// Train for `cfg.epochs`, logging one line per epoch after a header.
/// Nothing is written when there are no epochs.
pub fn fit<T: Float>(
    model: &mut SegmentationModel<T>,
    train: &[SamplePair],
    val: &[SamplePair],
    cfg: &TrainConfig,
    log: &mut dyn Write,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut state = RAdamState::new(cfg.optimizer)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut outcome = TrainOutcome {
        history: Vec::with_capacity(cfg.epochs),
        best_epoch: None,
        best_state: None,
    };
    let io = |e| Error::io("training log", e);
    let mut best = f64::INFINITY;
    for epoch in 1..=cfg.epochs {
        let stats = train_epoch(model, train, cfg.batch_size, &mut state, cfg.augment.as_ref(), &mut rng)?;
        let val_report = if val.is_empty() {
            None
        } else {
            Some(evaluate_model(model, val, cfg.threshold)?)
        };
        let rec = EpochRecord {
            epoch,
            train: stats,
            val: val_report,
        };
        if epoch == 1 {
            writeln!(log, "{LOG_HEADER}").map_err(io)?;
        }
        writeln!(log, "{}", rec.log_line()).map_err(io)?;
        log.flush().map_err(io)?;
        if rec.selection_loss() < best {
            best = rec.selection_loss();
            outcome.best_epoch = Some(epoch);
            outcome.best_state = Some(model.state());
        }
        progress(&rec);
        outcome.history.push(rec);
    }
    Ok(outcome)
}
