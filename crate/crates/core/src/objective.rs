//! Cross-entropy, unimodal confidence distillation and category conflict
//! regularization, plus their weighted total.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{digamma, dirichlet_kl, gaussian_entropy, DiagGaussian, DirichletParams};
use crate::tensor::{softmax_in_place, Tape, Var};

/// Floor applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Prior-to-posterior entropy reduction, `0.5 Σ_d ln(q_d / v_d)`.
pub fn information_gain(prior: &DiagGaussian, posterior: &DiagGaussian) -> Result<f64> {
    if prior.dim() != posterior.dim() {
        return Err(Error::contract("prior and posterior dimensions differ"));
    }
    Ok(gaussian_entropy(prior) - gaussian_entropy(posterior))
}

/// Temperature softmax of the information gains.
pub fn confidence_weights(delta_h: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::contract(format!("temperature must be positive, got {tau}")));
    }
    if delta_h.is_empty() {
        return Err(Error::contract("no modalities"));
    }
    let mut rho: Vec<f64> = delta_h.iter().map(|d| d / tau).collect();
    softmax_in_place(&mut rho);
    Ok(rho)
}

fn check_simplex(what: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|x| !(*x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!("{what} is not on the simplex")));
    }
    Ok(())
}

/// `Σ_m ρ_m (ψ(S) − ψ(α_m))`: the expected cross-entropy between the
/// confidence weights and a reliability vector drawn from `Dir(α)`.
pub fn ucd_loss(rho: &[f64], alpha: &DirichletParams) -> Result<f64> {
    if rho.len() != alpha.len() {
        return Err(Error::contract("confidence weights and concentrations differ in length"));
    }
    check_simplex("confidence weights", rho)?;
    let ds = digamma(alpha.strength())?;
    let mut acc = 0.0;
    for (r, a) in rho.iter().zip(alpha.alpha()) {
        acc += r * (ds - digamma(*a)?);
    }
    Ok(acc)
}

/// Keeps `α_m` and sets every other concentration to 1.
pub fn decompose_alpha(alpha: &DirichletParams, m: usize) -> Result<DirichletParams> {
    if m >= alpha.len() {
        return Err(Error::contract(format!("modality {m} out of range")));
    }
    let mut out = vec![1.0; alpha.len()];
    out[m] = alpha.alpha()[m];
    DirichletParams::new(out)
}

/// Per-modality disagreement `c_m = Σ_k |y_k − ŷ^m_k|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConflictWeights {
    pub c: Vec<f64>,
}

impl ConflictWeights {
    pub fn new(unimodal_probs: &[[f64; 2]], y: [f64; 2]) -> Result<Self> {
        check_simplex("label", &y)?;
        let mut c = Vec::with_capacity(unimodal_probs.len());
        for p in unimodal_probs {
            check_simplex("unimodal prediction", p)?;
            c.push((y[0] - p[0]).abs() + (y[1] - p[1]).abs());
        }
        Ok(Self { c })
    }
}

/// Conflict-weighted KL of each isolated concentration to the uniform
/// Dirichlet.
pub fn ccr_loss(alpha: &DirichletParams, unimodal_probs: &[[f64; 2]], y: [f64; 2]) -> Result<f64> {
    if unimodal_probs.len() != alpha.len() {
        return Err(Error::contract("one prediction per modality is required"));
    }
    let weights = ConflictWeights::new(unimodal_probs, y)?;
    let uniform = DirichletParams::uniform(alpha.len());
    let mut acc = 0.0;
    for (m, c) in weights.c.iter().enumerate() {
        acc += c * dirichlet_kl(&decompose_alpha(alpha, m)?, &uniform)?;
    }
    Ok(acc)
}

/// Batch cross-entropy of the joint prediction plus the modality-averaged
/// unimodal cross-entropies. `unimodal[m][i]` is modality `m`'s prediction
/// for account `i`.
pub fn ce_loss(joint: &[[f64; 2]], unimodal: &[Vec<[f64; 2]>], labels: &[u8]) -> Result<f64> {
    if joint.is_empty() || joint.len() != labels.len() {
        return Err(Error::contract("joint predictions and labels must be nonempty and aligned"));
    }
    if unimodal.is_empty() || unimodal.iter().any(|u| u.len() != labels.len()) {
        return Err(Error::contract("unimodal predictions must align with labels"));
    }
    let nll = |p: &[f64; 2], y: u8| -> Result<f64> {
        check_simplex("prediction", p)?;
        if y > 1 {
            return Err(Error::contract(format!("label {y} is not binary")));
        }
        Ok(-p[y as usize].clamp(PROB_FLOOR, 1.0).ln())
    };
    let n = labels.len() as f64;
    let mut acc = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        acc += nll(&joint[i], y)?;
        for u in unimodal {
            acc += nll(&u[i], y)? / unimodal.len() as f64;
        }
    }
    Ok(acc / n)
}

/// Loss components and the weights that combine them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub ucd: f64,
    pub ccr: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
}

/// `ce + λ1·mean(ucd) + λ2·mean(ccr)`.
pub fn total_loss(ce: f64, ucd: &[f64], ccr: &[f64], lambda1: f64, lambda2: f64, tau: f64) -> Result<LossBreakdown> {
    if !(lambda1 >= 0.0 && lambda2 >= 0.0 && tau > 0.0) {
        return Err(Error::contract("loss weights must be nonnegative and the temperature positive"));
    }
    if ucd.is_empty() || ccr.is_empty() {
        return Err(Error::contract("per-account loss terms are empty"));
    }
    let ucd = ucd.iter().sum::<f64>() / ucd.len() as f64;
    let ccr = ccr.iter().sum::<f64>() / ccr.len() as f64;
    Ok(LossBreakdown { ce, ucd, ccr, total: ce + lambda1 * ucd + lambda2 * ccr, lambda1, lambda2, tau })
}

/// Tape form of the batch cross-entropy of one prediction matrix against
/// one-hot labels; returns a `1 × 1` mean.
pub fn ce_term(tape: &mut Tape, probs: Var, onehot: Var) -> Var {
    let p = tape.clamp(probs, PROB_FLOOR, 1.0);
    let lp = tape.ln(p);
    let picked = tape.mul(lp, onehot);
    let per = tape.sum_rows(picked);
    let mean = tape.mean_all(per);
    tape.scale(mean, -1.0)
}

/// Tape form of the information gain: `q` is `1 × d`, `variance` is `B × d`;
/// returns `B × 1`.
pub fn information_gain_term(tape: &mut Tape, q: Var, variance: Var) -> Var {
    let lq = tape.ln(q);
    let lv = tape.ln(variance);
    let diff = tape.sub(lq, lv);
    let s = tape.sum_rows(diff);
    tape.scale(s, 0.5)
}

/// Tape form of the per-account distillation loss; returns `B × 1`.
pub fn ucd_term(tape: &mut Tape, gains: &[Var], alpha: Var, strength: Var, tau: f64) -> Var {
    let g = tape.concat_cols(gains);
    let g = tape.scale(g, 1.0 / tau);
    let rho = tape.softmax_rows(g);
    let ds = tape.digamma(strength);
    let da = tape.digamma(alpha);
    let gap = tape.sub(ds, da);
    let w = tape.mul(rho, gap);
    tape.sum_rows(w)
}

/// Tape form of the per-account conflict regularizer; returns `B × 1`.
pub fn ccr_term(tape: &mut Tape, alpha: Var, unimodal: &[Var], onehot: Var) -> Var {
    let k = unimodal.len() as f64;
    let ln_gamma_k = crate::numerics::ln_gamma(k).expect("positive modality count");
    let mut acc = None;
    for (m, &p) in unimodal.iter().enumerate() {
        let diff = tape.sub(onehot, p);
        let diff = tape.abs(diff);
        let c = tape.sum_rows(diff);
        // KL(Dir(α_m, 1, ..., 1) ‖ Dir(1, ..., 1))
        let a = tape.slice_cols(alpha, m, 1);
        let s = tape.add_scalar(a, k - 1.0);
        let lgs = tape.ln_gamma(s);
        let lga = tape.ln_gamma(a);
        let kl = tape.sub(lgs, lga);
        let kl = tape.add_scalar(kl, -ln_gamma_k);
        let psa = tape.digamma(a);
        let pss = tape.digamma(s);
        let dpsi = tape.sub(psa, pss);
        let am1 = tape.add_scalar(a, -1.0);
        let t = tape.mul(am1, dpsi);
        let kl = tape.add(kl, t);
        let term = tape.mul(c, kl);
        acc = Some(match acc {
            None => term,
            Some(prev) => tape.add(prev, term),
        });
    }
    acc.expect("at least one modality")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng_from_seed;
    use crate::tensor::Matrix;
    use proptest::prelude::*;
    use rand::Rng as _;
    use rand_distr::{Dirichlet, Distribution};

    fn g(mean: f64, var: f64) -> DiagGaussian {
        DiagGaussian::new(vec![mean], vec![var]).unwrap()
    }

    fn dir(a: &[f64]) -> DirichletParams {
        DirichletParams::new(a.to_vec()).unwrap()
    }

    #[test]
    fn information_gain_hand_values() {
        assert_eq!(information_gain(&g(0.3, 2.0), &g(0.3, 2.0)).unwrap(), 0.0);
        assert!((information_gain(&g(0.0, 1.0), &g(5.0, 0.5)).unwrap() - 0.5 * 2f64.ln()).abs() < 1e-12);
        let p = DiagGaussian::new(vec![0.0; 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let q = DiagGaussian::new(vec![0.0; 4], vec![0.5, 1.0, 1.5, 2.0]).unwrap();
        assert!((information_gain(&p, &q).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(information_gain(&p, &g(0.0, 1.0)).is_err());
    }

    #[test]
    fn confidence_weight_hand_values() {
        let rho = confidence_weights(&[0.4, 0.4, 0.4], 20.0).unwrap();
        assert!(rho.iter().all(|r| (r - 1.0 / 3.0).abs() < 1e-15));
        let rho = confidence_weights(&[20.0 * 2f64.ln(), 0.0, 0.0], 20.0).unwrap();
        for (r, e) in rho.iter().zip([0.5, 0.25, 0.25]) {
            assert!((r - e).abs() < 1e-15);
        }
        let rho = confidence_weights(&[5.0, -3.0, 1.0], 1e9).unwrap();
        assert!(rho.iter().all(|r| (r - 1.0 / 3.0).abs() < 1e-8));
        assert!(confidence_weights(&[1.0], 0.0).is_err());
    }

    #[test]
    fn ucd_hand_values() {
        let u = [1.0 / 3.0; 3];
        assert!((ucd_loss(&u, &dir(&[1.0, 1.0, 1.0])).unwrap() - 1.5).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for a in [1.0, 10.0, 100.0, 1e4, 1e6] {
            let l = ucd_loss(&[1.0, 0.0, 0.0], &dir(&[a, 1.0, 1.0])).unwrap();
            assert!(l > 0.0 && l < prev);
            prev = l;
        }
        assert!(prev < 1e-5);
        assert!(ucd_loss(&[0.5, 0.6, 0.0], &dir(&[1.0, 1.0, 1.0])).is_err());
    }

    #[test]
    fn ucd_matches_monte_carlo() {
        let mut rng = rng_from_seed(31);
        for _ in 0..3 {
            let alpha: [f64; 3] = std::array::from_fn(|_| rng.random_range(1.0..8.0));
            let rho = confidence_weights(&[rng.random_range(0.0..3.0), rng.random_range(0.0..3.0), 0.0], 1.0).unwrap();
            let d = Dirichlet::new(alpha).unwrap();
            let n = 200_000;
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let beta: [f64; 3] = d.sample(&mut rng);
                let v: f64 = -(0..3).map(|m| rho[m] * beta[m].ln()).sum::<f64>();
                s1 += v;
                s2 += v * v;
            }
            let mean = s1 / n as f64;
            let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
            let closed = ucd_loss(&rho, &dir(&alpha)).unwrap();
            assert!((mean - closed).abs() < 3.0 * se + 1e-12, "{mean} vs {closed} (se {se})");
        }
    }

    #[test]
    fn decompose_hand_values() {
        assert_eq!(decompose_alpha(&dir(&[2.0, 1.0, 1.0]), 0).unwrap(), dir(&[2.0, 1.0, 1.0]));
        assert_eq!(decompose_alpha(&dir(&[2.0, 3.0, 4.0]), 1).unwrap(), dir(&[1.0, 3.0, 1.0]));
        assert_eq!(decompose_alpha(&dir(&[1.0; 3]), 2).unwrap(), dir(&[1.0; 3]));
        assert!(decompose_alpha(&dir(&[1.0; 3]), 3).is_err());
    }

    #[test]
    fn ccr_hand_values() {
        let y = [1.0, 0.0];
        let perfect = [y, y, y];
        assert_eq!(ccr_loss(&dir(&[5.0, 2.0, 9.0]), &perfect, y).unwrap(), 0.0);
        let wrong = [[0.0, 1.0], [0.3, 0.7], [0.5, 0.5]];
        assert_eq!(ccr_loss(&dir(&[1.0; 3]), &wrong, y).unwrap(), 0.0);
        let l = ccr_loss(&dir(&[2.0, 1.0, 1.0]), &[[0.0, 1.0], y, y], y).unwrap();
        assert!((l - 2.0 * (3f64.ln() - 5.0 / 6.0)).abs() < 1e-12);
        let w = ConflictWeights::new(&wrong, y).unwrap();
        assert_eq!(w.c, vec![2.0, 1.4, 1.0]);
    }

    #[test]
    fn ce_hand_values() {
        let half = [0.5, 0.5];
        let l = ce_loss(&[half], &[vec![half], vec![half], vec![half]], &[1]).unwrap();
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-12);
        let y = [0.0, 1.0];
        let l = ce_loss(&[y], &[vec![y], vec![half], vec![y]], &[1]).unwrap();
        assert!((l - 2f64.ln() / 3.0).abs() < 1e-12);
        assert_eq!(ce_loss(&[y, [1.0, 0.0]], &[vec![y, [1.0, 0.0]]], &[1, 0]).unwrap(), 0.0);
        // a zero probability on the true class is clamped, not infinite
        let l = ce_loss(&[[1.0, 0.0]], &[vec![y]], &[1]).unwrap();
        assert!((l + PROB_FLOOR.ln()).abs() < 1e-9);
        assert!(ce_loss(&[], &[vec![]], &[]).is_err());
    }

    #[test]
    fn total_is_the_weighted_sum() {
        let b = total_loss(0.7, &[1.0, 2.0], &[0.5, 0.5], 0.0, 0.0, 20.0).unwrap();
        assert_eq!(b.total, 0.7);
        let b1 = total_loss(0.7, &[1.0, 2.0], &[0.5, 0.5], 0.2, 0.01, 20.0).unwrap();
        let b2 = total_loss(0.7, &[1.0, 2.0], &[0.5, 0.5], 0.4, 0.01, 20.0).unwrap();
        assert!((b1.total - (0.7 + 0.2 * 1.5 + 0.01 * 0.5)).abs() < 1e-12);
        assert!(((b2.total - b1.total) - 0.2 * 1.5).abs() < 1e-12);
        assert!(total_loss(0.7, &[1.0], &[1.0], -1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn tape_terms_match_pure_versions() {
        let alpha = [2.5, 1.2, 4.0];
        let uni = [[0.2, 0.8], [0.9, 0.1], [0.6, 0.4]];
        let y = [1.0, 0.0];
        let gains = [0.3, 1.1, 0.2];
        let tau = 0.7;
        let mut tape = Tape::new();
        let a = tape.constant(Matrix::row_vector(&alpha));
        let s = tape.sum_rows(a);
        let gv: Vec<Var> = gains.iter().map(|x| tape.constant(Matrix::scalar(*x))).collect();
        let ucd = ucd_term(&mut tape, &gv, a, s, tau);
        let rho = confidence_weights(&gains, tau).unwrap();
        assert!((tape.scalar(ucd) - ucd_loss(&rho, &dir(&alpha)).unwrap()).abs() < 1e-12);
        let uv: Vec<Var> = uni.iter().map(|p| tape.constant(Matrix::row_vector(p))).collect();
        let oh = tape.constant(Matrix::row_vector(&y));
        let ccr = ccr_term(&mut tape, a, &uv, oh);
        assert!((tape.scalar(ccr) - ccr_loss(&dir(&alpha), &uni, y).unwrap()).abs() < 1e-12);
        let joint = tape.constant(Matrix::row_vector(&[0.3, 0.7]));
        let ce = ce_term(&mut tape, joint, oh);
        assert!((tape.scalar(ce) + 0.3f64.ln()).abs() < 1e-12);
        let q = tape.constant(Matrix::row_vector(&[1.0, 2.0]));
        let v = tape.constant(Matrix::from_rows(&[[0.5, 1.0], [1.0, 2.0]]));
        let ig = information_gain_term(&mut tape, q, v);
        assert!((tape.value(ig).get(0, 0) - 2f64.ln()).abs() < 1e-12);
        assert_eq!(tape.value(ig).get(1, 0), 0.0);
    }

    proptest! {
        #[test]
        fn ucd_and_ccr_are_nonnegative(
            a in proptest::collection::vec(1.0..50.0f64, 3),
            d in proptest::collection::vec(-5.0..5.0f64, 3),
            p in proptest::collection::vec(0.0..1.0f64, 3),
            label in 0usize..2,
        ) {
            let alpha = dir(&a);
            let rho = confidence_weights(&d, 1.0).unwrap();
            prop_assert!(ucd_loss(&rho, &alpha).unwrap() >= 0.0);
            let uni: Vec<[f64; 2]> = p.iter().map(|x| [*x, 1.0 - x]).collect();
            let mut y = [0.0; 2];
            y[label] = 1.0;
            let l = ccr_loss(&alpha, &uni, y).unwrap();
            prop_assert!(l >= 0.0);
            let any_active = (0..3).any(|m| a[m] > 1.0 + 1e-9 && (y[0] - uni[m][0]).abs() > 1e-9);
            prop_assert_eq!(l > 0.0, any_active);
        }
    }
}
