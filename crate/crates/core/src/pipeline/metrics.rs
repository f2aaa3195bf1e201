use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::model::{Prepared, RmnpModel};
use crate::dataset::{Dataset, BOT};
use crate::error::{Error, Result};
use crate::numerics::rng_from_seed;
use crate::objective::PROB_FLOOR;
use crate::tensor::Tape;

/// Number of equal-width confidence bins used for calibration error.
pub const ECE_BINS: usize = 10;
/// Number of equal-width bins on `[0, ln 2]` in entropy histograms.
pub const ENTROPY_BINS: usize = 30;

/// Batch sizes probed by [`timing_probe`] by default.
pub const TIMING_BATCH_SIZES: [usize; 4] = [256, 512, 1024, 2048];

/// Shannon entropy in nats, treating `0 ln 0` as 0.
pub fn entropy(p: &[f64; 2]) -> f64 {
    -p.iter().filter(|x| **x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

fn predicted_class(p: &[f64; 2]) -> u8 {
    u8::from(p[1] > p[0])
}

/// Dataset-level scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub f1: f64,
    pub nll_x100: f64,
    pub brier: f64,
    pub ece: f64,
    pub mean_entropy: f64,
}

impl MetricSet {
    pub const CSV_HEADER: [&'static str; 6] = ["accuracy", "f1", "nll_x100", "brier", "ece", "mean_entropy"];

    pub fn values(&self) -> [f64; 6] {
        [self.accuracy, self.f1, self.nll_x100, self.brier, self.ece, self.mean_entropy]
    }
}

/// Accuracy, F1 with bots as the positive class, NLL (mean × 100), Brier,
/// ECE over `n_bins` confidence bins and mean predictive entropy.
pub fn evaluate(probs: &[[f64; 2]], labels: &[u8], n_bins: usize) -> Result<MetricSet> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::contract("evaluation needs aligned, nonempty predictions and labels"));
    }
    if n_bins == 0 {
        return Err(Error::contract("n_bins must be positive"));
    }
    let n = probs.len() as f64;
    let (mut correct, mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    let (mut nll, mut brier, mut ent) = (0.0, 0.0, 0.0);
    let mut bins = vec![(0usize, 0.0, 0.0); n_bins];
    for (p, &y) in probs.iter().zip(labels) {
        if y > 1 || p.iter().any(|x| !(*x >= 0.0)) || (p[0] + p[1] - 1.0).abs() > 1e-6 {
            return Err(Error::contract("predictions must lie on the simplex and labels be binary"));
        }
        let pred = predicted_class(p);
        let hit = pred == y;
        correct += usize::from(hit);
        match (pred == BOT, y == BOT) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
        nll -= p[y as usize].clamp(PROB_FLOOR, 1.0).ln();
        let target = [f64::from(u8::from(y == 0)), f64::from(u8::from(y == 1))];
        brier += (p[0] - target[0]).powi(2) + (p[1] - target[1]).powi(2);
        ent += entropy(p);
        let conf = p[0].max(p[1]);
        let bin = ((conf * n_bins as f64) as usize).min(n_bins - 1);
        bins[bin].0 += 1;
        bins[bin].1 += f64::from(u8::from(hit));
        bins[bin].2 += conf;
    }
    let ece = bins
        .iter()
        .filter(|b| b.0 > 0)
        .map(|&(_, hits, conf)| (hits - conf).abs() / n)
        .sum();
    let f1 = if tp + fp + fneg == 0 { 1.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fneg) as f64 };
    Ok(MetricSet {
        accuracy: correct as f64 / n,
        f1,
        nll_x100: 100.0 * nll / n,
        brier: brier / n,
        ece,
        mean_entropy: ent / n,
    })
}

/// Per-account outputs of a forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountPrediction {
    pub account: usize,
    pub label: Option<u8>,
    pub probs: [f64; 2],
    /// Metadata, text and graph predictions.
    pub unimodal: [[f64; 2]; 3],
    pub belief: [f64; 3],
    pub eta: f64,
    pub entropy: f64,
}

/// Per-account predictions plus dataset metrics over the labeled accounts.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionReport {
    pub accounts: Vec<AccountPrediction>,
    pub metrics: Option<MetricSet>,
}

/// Runs inference over `accounts` in batches of the model's batch size.
/// Noise is drawn from `seed`, so identical calls give identical outputs.
pub fn predict_accounts(
    model: &RmnpModel,
    prep: &Prepared,
    labels: &[Option<u8>],
    accounts: &[usize],
    seed: u64,
) -> Result<Vec<AccountPrediction>> {
    let cache = model.graph_encodings(prep);
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(accounts.len());
    for batch in accounts.chunks(model.hyper().batch_size) {
        let mut tape = Tape::with_params(&model.params);
        let fwd = model.forward(&mut tape, prep, batch, Some(&cache), true, &mut rng)?;
        let joint = tape.value(fwd.joint_probs);
        let uni: Vec<_> = fwd.unimodal_probs.iter().map(|v| tape.value(*v)).collect();
        // belief masses are reported even when another fusion weighting is active
        let evidence = tape.value(fwd.gate.evidence);
        let strength = tape.value(fwd.gate.strength);
        let eta = tape.value(fwd.gate.eta);
        for (r, &account) in batch.iter().enumerate() {
            let probs = [joint.get(r, 0), joint.get(r, 1)];
            let s = strength.get(r, 0);
            out.push(AccountPrediction {
                account,
                label: labels.get(account).copied().flatten(),
                probs,
                unimodal: std::array::from_fn(|m| [uni[m].get(r, 0), uni[m].get(r, 1)]),
                belief: std::array::from_fn(|m| evidence.get(r, m) / s),
                eta: eta.get(r, 0),
                entropy: entropy(&probs),
            });
        }
    }
    Ok(out)
}

/// Predicts `accounts` of `ds` and scores the labeled ones.
pub fn predict_report(model: &RmnpModel, ds: &Dataset, accounts: &[usize], seed: u64) -> Result<PredictionReport> {
    let prep = model.prepare(ds)?;
    let preds = predict_accounts(model, &prep, &ds.labels, accounts, seed)?;
    let (probs, labels): (Vec<_>, Vec<_>) =
        preds.iter().filter_map(|p| p.label.map(|y| (p.probs, y))).unzip();
    let metrics = if probs.is_empty() { None } else { Some(evaluate(&probs, &labels, ECE_BINS)?) };
    Ok(PredictionReport { accounts: preds, metrics })
}

/// Entropy histogram of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyHistogram {
    /// `(bin_left, bin_right, count)` over `[0, ln 2]`.
    pub bins: Vec<(f64, f64, usize)>,
    pub mean: f64,
    pub std: f64,
}

impl EntropyHistogram {
    pub fn from_entropies(values: &[f64]) -> Self {
        let top = 2f64.ln();
        let width = top / ENTROPY_BINS as f64;
        let mut counts = vec![0usize; ENTROPY_BINS];
        for &h in values {
            let k = ((h / width).floor().max(0.0) as usize).min(ENTROPY_BINS - 1);
            counts[k] += 1;
        }
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / n).sqrt();
        let bins = counts
            .into_iter()
            .enumerate()
            .map(|(k, c)| (k as f64 * width, (k + 1) as f64 * width, c))
            .collect();
        Self { bins, mean, std }
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.2).sum()
    }
}

/// Predictive-entropy histograms over every account of each dataset.
pub fn entropy_report(model: &RmnpModel, datasets: &[&Dataset], seed: u64) -> Result<Vec<EntropyHistogram>> {
    datasets
        .iter()
        .map(|ds| {
            let all: Vec<usize> = (0..ds.len()).collect();
            let prep = model.prepare(ds)?;
            let preds = predict_accounts(model, &prep, &ds.labels, &all, seed)?;
            let h: Vec<f64> = preds.iter().map(|p| p.entropy).collect();
            Ok(EntropyHistogram::from_entropies(&h))
        })
        .collect()
}

/// Wall-clock statistics of a forward pass at one batch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub batch_size: usize,
    pub repetitions: usize,
    pub mean_secs: f64,
    pub std_secs: f64,
    pub median_secs: f64,
}

/// Times full forward passes (encoders through decoding, unimodal paths
/// included) on batches whose account indices cycle through the dataset.
pub fn timing_probe(model: &RmnpModel, ds: &Dataset, batch_sizes: &[usize], repetitions: usize) -> Result<Vec<TimingRow>> {
    if repetitions == 0 {
        return Err(Error::contract("repetitions must be positive"));
    }
    if batch_sizes.contains(&0) {
        return Err(Error::contract("batch sizes must be positive"));
    }
    let prep = model.prepare(ds)?;
    let n = prep.len();
    let mut rng = rng_from_seed(model.hyper().seed);
    let mut rows = Vec::with_capacity(batch_sizes.len());
    for &b in batch_sizes {
        let batch: Vec<usize> = (0..b).map(|i| i % n).collect();
        let mut times = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let start = Instant::now();
            let mut tape = Tape::with_params(&model.params);
            let fwd = model.forward(&mut tape, &prep, &batch, None, true, &mut rng)?;
            std::hint::black_box(tape.value(fwd.joint_probs));
            times.push(start.elapsed().as_secs_f64());
        }
        let mean = times.iter().sum::<f64>() / repetitions as f64;
        let std = (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / repetitions as f64).sqrt();
        times.sort_by(|a, b| a.total_cmp(b));
        rows.push(TimingRow {
            batch_size: b,
            repetitions,
            mean_secs: mean,
            std_secs: std,
            median_secs: times[repetitions / 2],
        });
    }
    Ok(rows)
}
