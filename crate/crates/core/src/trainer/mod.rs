//! Fine-tuning: cross-entropy loss, SGD and Adam updates, the epoch loop
//! and learning-curve logging.

mod dataset;
mod optim;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;

pub use dataset::{fit_preprocess, Dataset, InMemoryDataset, ManifestDataset};
pub use optim::{
    adam_step, cross_entropy_loss, find_non_finite, format_float, sgd_step, Hyperparameters, Optimizer,
    OptimizerState,
};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::network::{argmax, checkpoint, softmax_rows, BatchView, Mode, Network};
use crate::scalar::Real;
use crate::seed;

/// Metrics recorded after one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    pub epochs: Vec<EpochRecord>,
}

pub const CURVE_HEADER: [&str; 5] = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"];

impl LearningCurve {
    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CURVE_HEADER).expect("in-memory write");
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.train_accuracy.to_string(),
                e.val_loss.to_string(),
                e.val_accuracy.to_string(),
            ])
            .expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fsutil::atomic_write(path, &self.to_csv_bytes())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let header = r.headers().map_err(|e| Error::csv(path, e))?;
        if header.iter().ne(CURVE_HEADER) {
            return Err(Error::csv(path, format!("expected header {}", CURVE_HEADER.join(","))));
        }
        let mut epochs = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let num = |i: usize| -> Result<f64> {
                rec[i].parse().map_err(|_| Error::csv(path, format!("bad number `{}`", &rec[i])))
            };
            epochs.push(EpochRecord {
                epoch: num(0)? as usize,
                train_loss: num(1)?,
                train_accuracy: num(2)?,
                val_loss: num(3)?,
                val_accuracy: num(4)?,
                seconds: 0.0,
            });
        }
        Ok(Self { epochs })
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Inference-mode pass over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochEval {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    /// Row-wise softmax scores, one row per item.
    pub probabilities: Vec<Vec<f64>>,
}

pub fn evaluate_epoch<S: Real>(net: &Network<S>, data: &dyn Dataset<S>, batch_size: usize) -> Result<EpochEval> {
    if data.is_empty() {
        return Err(Error::param("dataset", "empty"));
    }
    if batch_size == 0 {
        return Err(Error::param("batch_size", "must be > 0"));
    }
    let k = net.num_classes();
    let dims = [net.spec().input_channels, net.spec().input_side, net.spec().input_side];
    let (mut loss_sum, mut correct) = (0.0, 0usize);
    let mut predictions = Vec::with_capacity(data.len());
    let mut probabilities = Vec::with_capacity(data.len());
    let all: Vec<usize> = (0..data.len()).collect();
    for idx in all.chunks(batch_size) {
        let input = data.load_batch(idx)?;
        let view = BatchView::new(&input, [idx.len(), dims[0], dims[1], dims[2]])?;
        let logits = net.forward(&view)?;
        let targets: Vec<usize> = idx.iter().map(|&i| data.label(i)).collect();
        let (loss, _) = cross_entropy_loss(&logits, k, &targets)?;
        loss_sum += loss * idx.len() as f64;
        let logits64: Vec<f64> = logits.iter().map(|v| v.as_f64()).collect();
        for (row, &t) in softmax_rows(&logits64, k).chunks(k).zip(&targets) {
            let p = argmax(row);
            correct += usize::from(p == t);
            predictions.push(p);
            probabilities.push(row.to_vec());
        }
    }
    Ok(EpochEval {
        loss: loss_sum / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
        predictions,
        probabilities,
    })
}

/// Optional training side effects.
#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Where to keep the checkpoint with the best validation accuracy.
    pub best_checkpoint: Option<PathBuf>,
    /// Called after each epoch.
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochRecord)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub curve: LearningCurve,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub best_checkpoint: Option<PathBuf>,
    pub optimizer_steps: u64,
}

fn check_labels<S: Real>(name: &str, data: &dyn Dataset<S>, k: usize, require_all: bool) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Validation(format!("{name} set is empty")));
    }
    let mut seen = vec![0usize; k];
    for i in 0..data.len() {
        let l = data.label(i);
        if l >= k {
            return Err(Error::Validation(format!("{name} item {i} has label {l} but the head has {k} outputs")));
        }
        seen[l] += 1;
    }
    if require_all {
        if let Some(c) = seen.iter().position(|&n| n == 0) {
            return Err(Error::Validation(format!("{name} set has no items of class {c}")));
        }
    }
    Ok(())
}

/// Runs `hp.epochs` epochs of minibatch training, evaluating both sets in
/// inference mode after each epoch.
pub fn train<S: Real>(
    net: &mut Network<S>,
    train_set: &dyn Dataset<S>,
    val_set: &dyn Dataset<S>,
    hp: &Hyperparameters,
    mut opts: TrainOptions<'_>,
) -> Result<TrainOutcome> {
    hp.validate()?;
    let k = net.num_classes();
    check_labels("train", train_set, k, true)?;
    check_labels("validation", val_set, k, false)?;
    let expected = net.spec().input_len();
    for (name, d) in [("train", train_set), ("validation", val_set)] {
        if d.input_len() != expected {
            return Err(Error::param(name, format!("inputs hold {} values, network expects {expected}", d.input_len())));
        }
    }

    let dims = [net.spec().input_channels, net.spec().input_side, net.spec().input_side];
    let mut state = OptimizerState::new(net.params());
    let mut curve = LearningCurve::default();
    let (mut best_epoch, mut best_acc) = (0, f64::NEG_INFINITY);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=hp.epochs {
        let started = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut seed::rng(hp.seed, "shuffle", &[epoch as u64]));
        for (b, idx) in order.chunks(hp.batch_size).enumerate() {
            let batch = b + 1;
            let fail = |message: String| Error::Training { epoch, batch, message };
            let input = train_set.load_batch(idx)?;
            let view = BatchView::new(&input, [idx.len(), dims[0], dims[1], dims[2]])?;
            let mode = Mode::Train {
                dropout_seed: seed::derive(hp.seed, "dropout", &[epoch as u64, batch as u64]),
            };
            let (logits, tape) = net.forward_train(&view, mode)?;
            let targets: Vec<usize> = idx.iter().map(|&i| train_set.label(i)).collect();
            let (loss, dlogits) = cross_entropy_loss(&logits, k, &targets)?;
            if !loss.is_finite() {
                return Err(fail(format!("non-finite loss {loss}")));
            }
            let grads = net.backward(&tape, &dlogits)?;
            let step = match hp.optimizer {
                Optimizer::Sgd => match find_non_finite(net.params(), &grads) {
                    Some(msg) => Err(fail(msg)),
                    None => sgd_step(net.params_mut(), &grads, hp.learning_rate),
                },
                Optimizer::Adam => adam_step(net.params_mut(), &grads, &mut state, hp),
            };
            step.map_err(|e| match e {
                Error::Training { message, .. } => fail(message),
                other => other,
            })?;
            if hp.optimizer == Optimizer::Sgd {
                state.t += 1;
            }
        }

        let tr = evaluate_epoch(net, train_set, hp.batch_size)?;
        let va = evaluate_epoch(net, val_set, hp.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: tr.loss,
            train_accuracy: tr.accuracy,
            val_loss: va.loss,
            val_accuracy: va.accuracy,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}/{}: train_loss={:.4} train_acc={:.4} val_loss={:.4} val_acc={:.4} ({:.1}s)",
            hp.epochs,
            record.train_loss,
            record.train_accuracy,
            record.val_loss,
            record.val_accuracy,
            record.seconds
        );
        if va.accuracy > best_acc {
            best_acc = va.accuracy;
            best_epoch = epoch;
            if let Some(path) = &opts.best_checkpoint {
                let meta = BTreeMap::from([
                    ("epoch".to_string(), epoch.to_string()),
                    ("val_accuracy".to_string(), va.accuracy.to_string()),
                ]);
                checkpoint::save_with_metadata(net, &meta, path)?;
            }
        }
        if let Some(cb) = opts.on_epoch.as_mut() {
            cb(&record);
        }
        curve.epochs.push(record);
    }

    Ok(TrainOutcome {
        curve,
        best_epoch,
        best_val_accuracy: best_acc,
        best_checkpoint: opts.best_checkpoint,
        optimizer_steps: state.t,
    })
}
