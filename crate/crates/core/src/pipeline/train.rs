use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::Hyperparams;
use super::metrics::{evaluate, predict_accounts, ECE_BINS};
use super::model::RmnpModel;
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::numerics::rng_from_seed;
use crate::tensor::{Matrix, ParamStore, Tape};

const TRAIN_STREAM: u64 = 0x7a41_5eed;
const VAL_STREAM: u64 = 0x0a1d_5eed;

/// Adaptive-moment optimizer with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamW {
    pub fn new(store: &ParamStore, learning_rate: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Matrix> = store.iter().map(|(_, p)| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// `θ ← θ − lr·wd·θ`, then the bias-corrected moment update.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Matrix]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let decay = 1.0 - self.learning_rate * self.weight_decay;
        for (((p, g), m), v) in store.values_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut());
            for (((theta, &g), m), v) in it {
                *theta *= decay;
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *theta -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub ce: f64,
    pub ucd: f64,
    pub ccr: f64,
    pub total: f64,
    pub val_acc: f64,
    pub val_nll_x100: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation NLL.
    pub model: RmnpModel,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
}

fn labeled(ds: &Dataset, split: Split) -> (Vec<usize>, Vec<u8>) {
    ds.indices(split).into_iter().filter_map(|i| ds.labels[i].map(|y| (i, y))).unzip()
}

/// Mini-batch training with best-validation-NLL model selection.
pub fn train(ds: &Dataset, hyper: &Hyperparams) -> Result<TrainOutcome> {
    train_with(ds, hyper, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with(ds: &Dataset, hyper: &Hyperparams, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    hyper.validate()?;
    let (mut train_idx, _) = labeled(ds, Split::Train);
    if train_idx.is_empty() {
        return Err(Error::contract("the train split has no labeled accounts"));
    }
    let (val_idx, val_labels) = labeled(ds, Split::Val);
    if val_idx.is_empty() {
        return Err(Error::contract("the validation split has no labeled accounts"));
    }

    let mut model = RmnpModel::for_dataset(ds, hyper.clone())?;
    let prep = model.prepare(ds)?;
    let mut opt = AdamW::new(&model.params, hyper.learning_rate, hyper.weight_decay);
    let mut rng = rng_from_seed(hyper.seed ^ TRAIN_STREAM);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut log = Vec::with_capacity(hyper.epochs);

    for epoch in 1..=hyper.epochs {
        train_idx.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        for batch in train_idx.chunks(hyper.batch_size) {
            let labels: Vec<u8> = batch.iter().map(|&i| ds.labels[i].expect("labeled")).collect();
            let mut tape = Tape::with_params(&model.params);
            let fwd = model.forward(&mut tape, &prep, batch, None, true, &mut rng)?;
            let loss = model.loss(&mut tape, &fwd, &labels)?;
            let terms = [("ce", loss.ce), ("ucd", loss.ucd), ("ccr", loss.ccr), ("total", loss.total)];
            for (k, (name, var)) in terms.iter().enumerate() {
                let v = tape.scalar(*var);
                if !v.is_finite() {
                    return Err(Error::NonFinite { term: format!("{name} (epoch {epoch})") });
                }
                sums[k] += v * batch.len() as f64;
            }
            let grads = tape.backward(loss.total).into_param_grads(&model.params);
            if let Some(k) = grads.iter().position(|g| !g.all_finite()) {
                let id = model.params.ids().nth(k).expect("gradient per parameter");
                return Err(Error::NonFinite {
                    term: format!("gradient of {} (epoch {epoch})", model.params.name(id)),
                });
            }
            opt.step(&mut model.params, &grads);
        }
        let n = train_idx.len() as f64;

        let preds = predict_accounts(&model, &prep, &ds.labels, &val_idx, hyper.seed ^ VAL_STREAM)?;
        let probs: Vec<[f64; 2]> = preds.iter().map(|p| p.probs).collect();
        let m = evaluate(&probs, &val_labels, ECE_BINS)?;
        let record = EpochRecord {
            epoch,
            ce: sums[0] / n,
            ucd: sums[1] / n,
            ccr: sums[2] / n,
            total: sums[3] / n,
            val_acc: m.accuracy,
            val_nll_x100: m.nll_x100,
        };
        on_epoch(&record);
        log.push(record);
        if best.as_ref().is_none_or(|b| m.nll_x100 < b.0) {
            best = Some((m.nll_x100, epoch, model.params.clone()));
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    model.params = params;
    Ok(TrainOutcome { model, log, best_epoch })
}
