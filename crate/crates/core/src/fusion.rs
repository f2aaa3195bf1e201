//! Evidential gating over modalities and reliability-weighted fusion of the
//! unimodal Gaussians.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::anp::{UnimodalLatentSummary, UnimodalPrior};
use crate::encoders::Mlp;
use crate::error::{Error, Result};
use crate::numerics::{softplus, DiagGaussian, Rng};
use crate::tensor::{Matrix, ParamStore, Tape, Var};

/// Subjective-logic opinion over modalities derived from nonnegative evidence.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidentialOpinion {
    pub evidence: Vec<f64>,
    pub alpha: Vec<f64>,
    pub strength: f64,
    pub belief: Vec<f64>,
    pub eta: f64,
}

impl EvidentialOpinion {
    pub fn from_evidence(evidence: &[f64]) -> Result<Self> {
        if evidence.is_empty() {
            return Err(Error::contract("evidence vector is empty"));
        }
        if evidence.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
            return Err(Error::contract("evidence must be finite and nonnegative"));
        }
        let alpha: Vec<f64> = evidence.iter().map(|e| e + 1.0).collect();
        let strength: f64 = alpha.iter().sum();
        Ok(Self {
            evidence: evidence.to_vec(),
            belief: evidence.iter().map(|e| e / strength).collect(),
            eta: evidence.len() as f64 / strength,
            alpha,
            strength,
        })
    }
}

/// How unimodal posteriors are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Belief masses from the evidential gate weight each expert.
    #[default]
    GpoeEvidential,
    /// Every expert gets weight 1.
    PoeUniform,
    /// Softmax over the gate outputs weights each expert.
    GpoeMlp,
}

impl FusionMode {
    pub fn name(self) -> &'static str {
        match self {
            FusionMode::GpoeEvidential => "gpoe_evidential",
            FusionMode::PoeUniform => "poe_uniform",
            FusionMode::GpoeMlp => "gpoe_mlp",
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gpoe_evidential" => Ok(FusionMode::GpoeEvidential),
            "poe_uniform" => Ok(FusionMode::PoeUniform),
            "gpoe_mlp" => Ok(FusionMode::GpoeMlp),
            other => Err(Error::contract(format!("unknown fusion mode '{other}'"))),
        }
    }
}

/// Gate network from the concatenated encodings to one raw output per
/// modality.
#[derive(Debug, Clone)]
pub struct GateParams {
    pub mlp: Mlp,
}

/// Tape handles produced by the gate.
#[derive(Debug, Clone, Copy)]
pub struct GateOutput {
    /// Raw gate outputs, `B × |M|`.
    pub raw: Var,
    pub evidence: Var,
    pub alpha: Var,
    /// Dirichlet strength, `B × 1`.
    pub strength: Var,
    /// Fusion weights (belief masses in evidential mode).
    pub weights: Var,
    /// Gate uncertainty `|M| / S`, `B × 1`.
    pub eta: Var,
}

impl GateParams {
    pub fn new(store: &mut ParamStore, name: &str, d_h: usize, n_modalities: usize, rng: &mut Rng) -> Self {
        Self { mlp: Mlp::new(store, name, &[n_modalities * d_h, d_h, n_modalities], rng) }
    }

    pub fn forward(&self, tape: &mut Tape, encodings: &[Var], mode: FusionMode) -> GateOutput {
        let x = tape.concat_cols(encodings);
        let raw = self.mlp.forward(tape, x);
        let m = tape.value(raw).cols();
        let evidence = tape.softplus(raw);
        let alpha = tape.add_scalar(evidence, 1.0);
        let strength = tape.sum_rows(alpha);
        let inv = tape.recip(strength);
        let belief = tape.mul(evidence, inv);
        let eta = tape.scale(inv, m as f64);
        let weights = match mode {
            FusionMode::GpoeEvidential => belief,
            FusionMode::GpoeMlp => tape.softmax_rows(raw),
            FusionMode::PoeUniform => {
                let rows = tape.value(raw).rows();
                tape.constant(Matrix::filled(rows, m, 1.0))
            }
        };
        GateOutput { raw, evidence, alpha, strength, weights, eta }
    }
}

/// Evidential opinion for a single account.
pub fn gate(encodings: &[&[f64]], params: &GateParams, store: &ParamStore) -> Result<EvidentialOpinion> {
    let width: usize = encodings.iter().map(|h| h.len()).sum();
    let expected = params.mlp.input_dim(store);
    if width != expected {
        return Err(Error::contract(format!("gate input width {width}, expected {expected}")));
    }
    let x = Matrix::row_vector(&encodings.concat());
    let raw = params.mlp.apply(store, &x)?;
    let evidence: Vec<f64> = raw.data().iter().map(|v| softplus(*v)).collect();
    EvidentialOpinion::from_evidence(&evidence)
}

fn check_fusion_inputs(summaries: &[UnimodalLatentSummary], priors: &[UnimodalPrior], b: &[f64]) -> Result<usize> {
    let m = summaries.len();
    if m == 0 || priors.len() != m || b.len() != m {
        return Err(Error::contract(format!(
            "fusion needs matching modality counts, got {} summaries, {} priors, {} weights",
            m,
            priors.len(),
            b.len()
        )));
    }
    let d = summaries[0].r().len();
    if summaries.iter().any(|s| s.r().len() != d) || priors.iter().any(|p| p.u().len() != d) {
        return Err(Error::contract("latent widths differ across modalities"));
    }
    if b.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::contract("fusion weights must be finite and nonnegative"));
    }
    Ok(d)
}

/// Generalized product of experts: precisions add with weight `b_m` on each
/// likelihood and `1/|M|` on each prior.
pub fn gpoe_fuse(summaries: &[UnimodalLatentSummary], priors: &[UnimodalPrior], b: &[f64]) -> Result<DiagGaussian> {
    let d = check_fusion_inputs(summaries, priors, b)?;
    let w = 1.0 / summaries.len() as f64;
    let mut mean = vec![0.0; d];
    let mut var = vec![0.0; d];
    for k in 0..d {
        let mut precision = 0.0;
        let mut num = 0.0;
        for ((s, p), bm) in summaries.iter().zip(priors).zip(b) {
            precision += bm / s.s()[k] + w / p.q()[k];
            num += bm * s.r()[k] / s.s()[k] + w * p.u()[k] / p.q()[k];
        }
        var[k] = 1.0 / precision;
        mean[k] = var[k] * num;
    }
    DiagGaussian::new(mean, var)
}

/// Plain product of experts (unit weights).
pub fn poe_fuse(summaries: &[UnimodalLatentSummary], priors: &[UnimodalPrior]) -> Result<DiagGaussian> {
    gpoe_fuse(summaries, priors, &vec![1.0; summaries.len()])
}

/// Batched fusion on the tape. `weights` is `B × |M|`; each summary is a
/// `(r, s)` pair of `B × d` and each prior a `(u, q)` pair of `1 × d`.
pub fn fuse(tape: &mut Tape, summaries: &[(Var, Var)], priors: &[(Var, Var)], weights: Var) -> (Var, Var) {
    let w = 1.0 / summaries.len() as f64;
    let mut precision = None;
    let mut num = None;
    for (m, (&(r, s), &(u, q))) in summaries.iter().zip(priors).enumerate() {
        let bm = tape.slice_cols(weights, m, 1);
        let ps = tape.recip(s);
        let ps = tape.mul(ps, bm);
        let pq = tape.recip(q);
        let pq = tape.scale(pq, w);
        let p = tape.add(ps, pq);
        let a = tape.mul(r, ps);
        let c = tape.mul(u, pq);
        let n = tape.add(a, c);
        precision = Some(match precision {
            None => p,
            Some(acc) => tape.add(acc, p),
        });
        num = Some(match num {
            None => n,
            Some(acc) => tape.add(acc, n),
        });
    }
    let var = tape.recip(precision.expect("at least one modality"));
    let mean = tape.mul(var, num.unwrap());
    (mean, var)
}

/// Normalizes `exp(log_density)` on `[lo, hi]` with composite Simpson over
/// `intervals` (even) panels and returns the mean and variance. Fails when
/// the normalizer moves by more than 1e-6 relative between the full grid
/// and every second point.
pub fn grid_moments(log_density: impl Fn(f64) -> f64, lo: f64, hi: f64, intervals: usize) -> Result<(f64, f64)> {
    if intervals < 4 || intervals % 4 != 0 || !(hi > lo) {
        return Err(Error::contract("grid needs a positive range and a multiple of 4 panels"));
    }
    let h = (hi - lo) / intervals as f64;
    let logs: Vec<f64> = (0..=intervals).map(|i| log_density(lo + i as f64 * h)).collect();
    let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(Error::Domain("grid density is not finite".into()));
    }
    let dens: Vec<f64> = logs.iter().map(|l| (l - peak).exp()).collect();
    let simpson = |stride: usize, g: &dyn Fn(usize) -> f64| {
        let n = intervals / stride;
        let mut acc = 0.0;
        for j in 0..=n {
            let c = if j == 0 || j == n {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += c * g(j * stride);
        }
        acc * h * stride as f64 / 3.0
    };
    let z = simpson(1, &|i| dens[i]);
    let z_coarse = simpson(2, &|i| dens[i]);
    let drift = ((z - z_coarse) / z).abs();
    if drift > 1e-6 {
        return Err(Error::Domain(format!("grid too coarse: normalization drift {drift:.3e}")));
    }
    let x = |i: usize| lo + i as f64 * h;
    let mean = simpson(1, &|i| x(i) * dens[i]) / z;
    let var = simpson(1, &|i| (x(i) - mean).powi(2) * dens[i]) / z;
    Ok((mean, var))
}

/// Brute-force 1-D fusion: normalizes
/// `Π_m N(z | u_m, q_m)^{1/|M|} · N(r_m | z, s_m)^{b_m}` on a grid spanning
/// ten prior-only standard deviations beyond the data.
pub fn fuse_reference_oracle(
    summaries: &[UnimodalLatentSummary],
    priors: &[UnimodalPrior],
    b: &[f64],
    intervals: usize,
) -> Result<DiagGaussian> {
    let d = check_fusion_inputs(summaries, priors, b)?;
    if d != 1 {
        return Err(Error::contract("the reference oracle is one-dimensional"));
    }
    let w = 1.0 / summaries.len() as f64;
    let prior_precision: f64 = priors.iter().map(|p| w / p.q()[0]).sum();
    let sd = prior_precision.recip().sqrt();
    let points = summaries.iter().map(|s| s.r()[0]).chain(priors.iter().map(|p| p.u()[0]));
    let (lo, hi) = points.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, c), x| (a.min(x), c.max(x)));
    let log_density = |z: f64| {
        let mut acc = 0.0;
        for ((s, p), bm) in summaries.iter().zip(priors).zip(b) {
            acc -= w * (z - p.u()[0]).powi(2) / (2.0 * p.q()[0]);
            acc -= bm * (s.r()[0] - z).powi(2) / (2.0 * s.s()[0]);
        }
        acc
    };
    let (mean, var) = grid_moments(log_density, lo - 10.0 * sd, hi + 10.0 * sd, intervals)?;
    DiagGaussian::new(vec![mean], vec![var])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anp::unimodal_posterior;
    use crate::numerics::{compare_gradients, finite_diff_grad, rng_from_seed};
    use proptest::prelude::*;
    use rand::Rng as _;

    fn summary(r: f64, s: f64) -> UnimodalLatentSummary {
        UnimodalLatentSummary::new(vec![r], vec![s]).unwrap()
    }

    fn prior(u: f64, q: f64) -> UnimodalPrior {
        UnimodalPrior::new(vec![u], vec![q]).unwrap()
    }

    #[test]
    fn opinion_hand_values() {
        let o = EvidentialOpinion::from_evidence(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!((o.strength, o.eta), (3.0, 1.0));
        assert_eq!(o.belief, vec![0.0; 3]);
        let o = EvidentialOpinion::from_evidence(&[3.0, 1.0, 0.0]).unwrap();
        assert_eq!(o.strength, 7.0);
        assert!((o.belief[0] - 3.0 / 7.0).abs() < 1e-15);
        assert!((o.belief[1] - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(o.belief[2], 0.0);
        assert!((o.eta - 3.0 / 7.0).abs() < 1e-15);
        assert!(EvidentialOpinion::from_evidence(&[1.0, -0.1]).is_err());
        assert!(EvidentialOpinion::from_evidence(&[]).is_err());
    }

    #[test]
    fn fusion_mode_round_trips() {
        for m in [FusionMode::GpoeEvidential, FusionMode::PoeUniform, FusionMode::GpoeMlp] {
            assert_eq!(m.to_string().parse::<FusionMode>().unwrap(), m);
        }
        assert!("dempster".parse::<FusionMode>().is_err());
    }

    #[test]
    fn fusion_hand_values() {
        let std = prior(0.0, 1.0);
        let s = [summary(5.0, 0.3), summary(-2.0, 2.0), summary(1.0, 1.0)];
        let f = gpoe_fuse(&s, &[std.clone(), std.clone(), std.clone()], &[0.0; 3]).unwrap();
        assert!((f.variance()[0] - 1.0).abs() < 1e-15);
        assert_eq!(f.mean()[0], 0.0);

        let vague = prior(0.0, 1e12);
        let f = gpoe_fuse(&[summary(1.0, 1.0), summary(3.0, 1.0)], &[vague.clone(), vague], &[1.0, 1.0]).unwrap();
        assert!((f.variance()[0] - 0.5).abs() < 1e-9);
        assert!((f.mean()[0] - 2.0).abs() < 1e-9);

        let f = gpoe_fuse(&[summary(2.0, 1.0)], &[std], &[1.0]).unwrap();
        assert!((f.mean()[0] - 1.0).abs() < 1e-15);
        assert!((f.variance()[0] - 0.5).abs() < 1e-15);

        assert!(gpoe_fuse(&[summary(1.0, 1.0)], &[], &[1.0]).is_err());
        assert!(gpoe_fuse(&[summary(1.0, 1.0)], &[prior(0.0, 1.0)], &[-1.0]).is_err());
    }

    fn random_instance(rng: &mut crate::numerics::Rng) -> (Vec<UnimodalLatentSummary>, Vec<UnimodalPrior>, Vec<f64>) {
        let s = (0..3).map(|_| summary(rng.random_range(-5.0..5.0), rng.random_range(0.05..5.0))).collect();
        let p = (0..3).map(|_| prior(rng.random_range(-5.0..5.0), rng.random_range(0.05..5.0))).collect();
        let e: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..20.0)).collect();
        (s, p, EvidentialOpinion::from_evidence(&e).unwrap().belief)
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-12)
    }

    #[test]
    fn oracle_matches_closed_form() {
        let mut rng = rng_from_seed(21);
        for _ in 0..100 {
            let (s, p, b) = random_instance(&mut rng);
            let closed = gpoe_fuse(&s, &p, &b).unwrap();
            let grid = fuse_reference_oracle(&s, &p, &b, 20_000).unwrap();
            assert!(close(grid.mean()[0], closed.mean()[0], 1e-4) || (grid.mean()[0] - closed.mean()[0]).abs() < 1e-9);
            assert!(close(grid.variance()[0], closed.variance()[0], 1e-4));
        }
    }

    #[test]
    fn oracle_converges_and_detects_coarse_grids() {
        let (s, p, b) = random_instance(&mut rng_from_seed(5));
        let a = fuse_reference_oracle(&s, &p, &b, 20_000).unwrap();
        let c = fuse_reference_oracle(&s, &p, &b, 40_000).unwrap();
        assert!((a.mean()[0] - c.mean()[0]).abs() < 1e-8);
        assert!((a.variance()[0] - c.variance()[0]).abs() < 1e-8);
        // a sharp likelihood cannot be resolved by a handful of panels
        let sharp = [summary(0.3, 1e-4), summary(0.0, 1.0), summary(0.0, 1.0)];
        let wide = [prior(0.0, 100.0), prior(0.0, 100.0), prior(0.0, 100.0)];
        assert!(fuse_reference_oracle(&sharp, &wide, &[1.0, 0.0, 0.0], 8).is_err());
    }

    #[test]
    fn zero_evidence_reduces_to_prior_product() {
        let s = [summary(3.0, 0.2), summary(-1.0, 0.5), summary(4.0, 0.1)];
        let p = [prior(1.0, 2.0), prior(-2.0, 0.5), prior(0.5, 1.0)];
        let e = EvidentialOpinion::from_evidence(&[0.0, 0.0, 0.0]).unwrap();
        let fused = gpoe_fuse(&s, &p, &e.belief).unwrap();
        let precision: f64 = p.iter().map(|x| x.q()[0].recip() / 3.0).sum();
        let mean: f64 = p.iter().map(|x| x.u()[0] / x.q()[0] / 3.0).sum::<f64>() / precision;
        assert!((fused.variance()[0] - precision.recip()).abs() < 1e-9);
        assert!((fused.mean()[0] - mean).abs() < 1e-9);
        let grid = fuse_reference_oracle(&s, &p, &e.belief, 20_000).unwrap();
        assert!(close(grid.mean()[0], mean, 1e-4));
    }

    #[test]
    fn tempered_form_matches_grid() {
        // prior^η · Π_m posterior_m^{b_m}, where posterior_m combines the
        // likelihood with the joint prior Π_k N(u_k, q_k)^{1/|M|}
        let mut rng = rng_from_seed(77);
        for _ in 0..50 {
            let (s, p, b) = random_instance(&mut rng);
            let eta = 1.0 - b.iter().sum::<f64>();
            let precision: f64 = p.iter().map(|x| x.q()[0].recip() / 3.0).sum();
            let joint_mean = p.iter().map(|x| x.u()[0] / x.q()[0] / 3.0).sum::<f64>() / precision;
            let joint = prior(joint_mean, precision.recip());
            let posts: Vec<DiagGaussian> = s.iter().map(|sm| unimodal_posterior(sm, &joint).unwrap()).collect();
            let log_n = |z: f64, m: f64, v: f64| -0.5 * (z - m).powi(2) / v - 0.5 * v.ln();
            let log_density = |z: f64| {
                let mut acc = eta * log_n(z, joint_mean, precision.recip());
                for (g, bm) in posts.iter().zip(&b) {
                    acc += bm * log_n(z, g.mean()[0], g.variance()[0]);
                }
                acc
            };
            let sd = precision.recip().sqrt();
            let (mean, var) = grid_moments(log_density, -5.0 - 10.0 * sd, 5.0 + 10.0 * sd, 20_000).unwrap();
            let closed = gpoe_fuse(&s, &p, &b).unwrap();
            assert!((mean - closed.mean()[0]).abs() <= 1e-4 * closed.mean()[0].abs().max(1e-3));
            assert!(close(var, closed.variance()[0], 1e-4));
        }
    }

    #[test]
    fn poe_is_unit_weight_gpoe_and_sharpens() {
        let mut rng = rng_from_seed(8);
        for _ in 0..50 {
            let (s, p, _) = random_instance(&mut rng);
            let a = poe_fuse(&s, &p).unwrap();
            assert_eq!(a, gpoe_fuse(&s, &p, &[1.0; 3]).unwrap());
            for (sm, pm) in s.iter().zip(&p) {
                let single = unimodal_posterior(sm, pm).unwrap();
                // three experts at weight one, priors at one third each
                assert!(a.variance()[0] <= single.variance()[0] * 3.0);
            }
        }
        let same = [summary(1.5, 0.4), summary(1.5, 0.4), summary(1.5, 0.4)];
        let pr = [prior(1.5, 2.0), prior(1.5, 2.0), prior(1.5, 2.0)];
        assert!((poe_fuse(&same, &pr).unwrap().mean()[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn poe_variance_below_each_weighted_posterior() {
        // each expert's posterior against its own one-third-weighted prior
        let mut rng = rng_from_seed(9);
        for _ in 0..50 {
            let (s, p, _) = random_instance(&mut rng);
            let fused = poe_fuse(&s, &p).unwrap();
            for (sm, pm) in s.iter().zip(&p) {
                let own = 1.0 / (1.0 / sm.s()[0] + 1.0 / (3.0 * pm.q()[0]));
                assert!(fused.variance()[0] <= own);
            }
        }
    }

    #[test]
    fn tape_fusion_matches_pure_fusion() {
        let mut rng = rng_from_seed(13);
        let (s, p, b) = random_instance(&mut rng);
        let mut tape = Tape::new();
        let sums: Vec<(Var, Var)> = s
            .iter()
            .map(|x| (tape.constant(Matrix::scalar(x.r()[0])), tape.constant(Matrix::scalar(x.s()[0]))))
            .collect();
        let pri: Vec<(Var, Var)> = p
            .iter()
            .map(|x| (tape.constant(Matrix::scalar(x.u()[0])), tape.constant(Matrix::scalar(x.q()[0]))))
            .collect();
        let w = tape.constant(Matrix::row_vector(&b));
        let (m, v) = fuse(&mut tape, &sums, &pri, w);
        let pure = gpoe_fuse(&s, &p, &b).unwrap();
        assert!((tape.scalar(m) - pure.mean()[0]).abs() < 1e-12);
        assert!((tape.scalar(v) - pure.variance()[0]).abs() < 1e-12);
    }

    #[test]
    fn gate_matches_tape_and_gradients_flow() {
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(17);
        let gate_params = GateParams::new(&mut store, "gate", 3, 3, &mut rng);
        let h: Vec<Vec<f64>> = (0..3).map(|_| crate::numerics::standard_normals(&mut rng, 3)).collect();
        let refs: Vec<&[f64]> = h.iter().map(|v| v.as_slice()).collect();
        let o = gate(&refs, &gate_params, &store).unwrap();
        assert!((o.eta + o.belief.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(gate(&refs[..2], &gate_params, &store).is_err());

        let s = [summary(1.0, 0.5), summary(-1.0, 2.0), summary(0.3, 1.0)];
        let p = [prior(0.0, 1.0), prior(0.5, 0.7), prior(-0.2, 1.3)];
        let eval = |store: &ParamStore| {
            let mut tape = Tape::with_params(store);
            let hs: Vec<Var> = h.iter().map(|v| tape.constant(Matrix::row_vector(v))).collect();
            let g = gate_params.forward(&mut tape, &hs, FusionMode::GpoeEvidential);
            let sums: Vec<(Var, Var)> = s
                .iter()
                .map(|x| (tape.constant(Matrix::scalar(x.r()[0])), tape.constant(Matrix::scalar(x.s()[0]))))
                .collect();
            let pri: Vec<(Var, Var)> = p
                .iter()
                .map(|x| (tape.constant(Matrix::scalar(x.u()[0])), tape.constant(Matrix::scalar(x.q()[0]))))
                .collect();
            let (m, v) = fuse(&mut tape, &sums, &pri, g.weights);
            let out = tape.add(m, v);
            (tape, out, g)
        };
        let (tape, out, g) = eval(&store);
        for (a, b) in tape.value(g.weights).data().iter().zip(&o.belief) {
            assert!((a - b).abs() < 1e-15);
        }
        let analytic: Vec<f64> =
            tape.backward(out).into_param_grads(&store).into_iter().flat_map(Matrix::into_data).collect();
        let numeric = finite_diff_grad(
            |th| {
                let mut st = store.clone();
                st.assign_flat(th);
                let (t, o, _) = eval(&st);
                t.scalar(o)
            },
            &store.flatten(),
            1e-6,
        )
        .unwrap();
        let check = compare_gradients(&analytic, &numeric, 1e-4, 1e-7);
        assert!(check.pass_fraction() >= 0.99, "{check:?}");
    }

    #[test]
    fn mlp_and_uniform_modes_set_weights() {
        let mut store = ParamStore::new();
        let gate_params = GateParams::new(&mut store, "gate", 2, 3, &mut rng_from_seed(1));
        let mut tape = Tape::with_params(&store);
        let hs: Vec<Var> = (0..3).map(|k| tape.constant(Matrix::filled(4, 2, k as f64))).collect();
        let g = gate_params.forward(&mut tape, &hs, FusionMode::GpoeMlp);
        for r in 0..4 {
            assert!((tape.value(g.weights).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let g = gate_params.forward(&mut tape, &hs, FusionMode::PoeUniform);
        assert!(tape.value(g.weights).data().iter().all(|w| *w == 1.0));
    }

    proptest! {
        #[test]
        fn belief_and_eta_partition_unity(e in proptest::collection::vec(0.0..1e6f64, 3)) {
            let o = EvidentialOpinion::from_evidence(&e).unwrap();
            prop_assert!((o.eta + o.belief.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(o.eta > 0.0 && o.belief.iter().all(|b| *b >= 0.0));
        }

        #[test]
        fn raising_one_weight_never_widens(
            seed in 0u64..1000, m in 0usize..3, extra in 0.0..3.0f64
        ) {
            let (s, p, b) = random_instance(&mut rng_from_seed(seed));
            let before = gpoe_fuse(&s, &p, &b).unwrap();
            let mut b2 = b.clone();
            b2[m] += extra;
            let after = gpoe_fuse(&s, &p, &b2).unwrap();
            prop_assert!(after.variance()[0] <= before.variance()[0]);
        }
    }
}
