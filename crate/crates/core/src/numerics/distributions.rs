use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use super::special::{digamma_unchecked, ln_gamma_unchecked};
use crate::error::{Error, Result};

/// Reproducible pseudorandom generator used throughout the crate.
///
/// ChaCha8 produces the same stream for a given seed on every platform.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Fills a fresh vector with i.i.d. standard normal draws.
pub fn standard_normals(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Gaussian with diagonal covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    variance: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.len() != variance.len() {
            return Err(Error::contract(format!(
                "mean has {} entries but variance has {}",
                mean.len(),
                variance.len()
            )));
        }
        if let Some(v) = variance.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::contract(format!("variance must be positive, got {v}")));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::contract("mean must be finite"));
        }
        Ok(Self { mean, variance })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            variance: vec![1.0; dim],
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Dirichlet concentration vector with every entry ≥ 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParams {
    alpha: Vec<f64>,
}

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::contract("Dirichlet needs at least one component"));
        }
        if let Some(a) = alpha.iter().find(|a| !(**a >= 1.0) || !a.is_finite()) {
            return Err(Error::contract(format!(
                "concentration entries must be finite and >= 1, got {a}"
            )));
        }
        Ok(Self { alpha })
    }

    /// Concentration from nonnegative evidence, α = e + 1.
    pub fn from_evidence(evidence: &[f64]) -> Result<Self> {
        Self::new(evidence.iter().map(|e| e + 1.0).collect())
    }

    pub fn uniform(len: usize) -> Self {
        Self {
            alpha: vec![1.0; len],
        }
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn strength(&self) -> f64 {
        self.alpha.iter().sum()
    }
}

/// Differential entropy of a diagonal Gaussian, ½ Σ ln(2πe σ²_d).
pub fn gaussian_entropy(g: &DiagGaussian) -> f64 {
    const LN_2PI_E: f64 = 2.837_877_066_409_345_5;
    0.5 * g.variance.iter().map(|v| LN_2PI_E + v.ln()).sum::<f64>()
}

/// Closed-form KL(Dir(p) ‖ Dir(q)).
pub fn dirichlet_kl(p: &DirichletParams, q: &DirichletParams) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::contract(format!(
            "Dirichlet KL between {} and {} components",
            p.len(),
            q.len()
        )));
    }
    let p_sum = p.strength();
    let q_sum = q.strength();
    let psi_sum = digamma_unchecked(p_sum);
    let mut kl = ln_gamma_unchecked(p_sum) - ln_gamma_unchecked(q_sum);
    for (&a, &b) in p.alpha.iter().zip(&q.alpha) {
        kl += ln_gamma_unchecked(b) - ln_gamma_unchecked(a);
        kl += (a - b) * (digamma_unchecked(a) - psi_sum);
    }
    Ok(kl)
}

/// E[ln β_m] under β ~ Dir(α), i.e. ψ(α_m) − ψ(Σα).
pub fn dirichlet_expected_log(alpha: &DirichletParams) -> Vec<f64> {
    let psi_sum = digamma_unchecked(alpha.strength());
    alpha
        .alpha
        .iter()
        .map(|&a| digamma_unchecked(a) - psi_sum)
        .collect()
}

/// Reparameterized draw `mean + sqrt(variance) ⊙ ε`.
pub fn sample_gaussian(g: &DiagGaussian, rng: &mut Rng) -> Vec<f64> {
    g.mean
        .iter()
        .zip(&g.variance)
        .map(|(m, v)| {
            let eps: f64 = StandardNormal.sample(rng);
            m + v.sqrt() * eps
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng as _;
    use rand_distr::Dirichlet;

    fn dir(a: &[f64]) -> DirichletParams {
        DirichletParams::new(a.to_vec()).unwrap()
    }

    #[test]
    fn entropy_closed_forms() {
        let g = DiagGaussian::new(vec![0.0], vec![1.0]).unwrap();
        assert_abs_diff_eq!(gaussian_entropy(&g), 1.418_938_533_204_672_7, epsilon = 1e-12);
        let g4 = DiagGaussian::standard(4);
        assert_abs_diff_eq!(gaussian_entropy(&g4), 4.0 * 1.418_938_533_204_672_7, epsilon = 1e-12);
        let scaled = DiagGaussian::new(vec![0.0; 4], vec![1.0, 4.0, 1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(
            gaussian_entropy(&scaled) - gaussian_entropy(&g4),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn gaussian_validation() {
        assert!(DiagGaussian::new(vec![0.0], vec![0.0]).is_err());
        assert!(DiagGaussian::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(DirichletParams::new(vec![0.5, 1.0]).is_err());
    }

    #[test]
    fn kl_hand_values() {
        let ones = DirichletParams::uniform(3);
        assert_abs_diff_eq!(dirichlet_kl(&ones, &ones).unwrap(), 0.0, epsilon = 1e-14);
        let kl = dirichlet_kl(&dir(&[2.0, 1.0, 1.0]), &ones).unwrap();
        assert_abs_diff_eq!(kl, 3f64.ln() - 5.0 / 6.0, epsilon = 1e-12);
        assert!(dirichlet_kl(&dir(&[1.0, 1.0]), &ones).is_err());
    }

    #[test]
    fn expected_log_hand_values() {
        let e = dirichlet_expected_log(&DirichletParams::uniform(3));
        for v in e {
            assert_abs_diff_eq!(v, -1.5, epsilon = 1e-12);
        }
        let sym = dirichlet_expected_log(&dir(&[3.3, 3.3]));
        assert_eq!(sym[0], sym[1]);
    }

    #[test]
    fn expected_log_matches_monte_carlo() {
        let mut rng = rng_from_seed(11);
        let alpha = [1.7, 3.2, 2.4];
        let d = Dirichlet::new(alpha).unwrap();
        let n = 200_000;
        let mut sums = [0.0; 3];
        let mut sq = [0.0; 3];
        for _ in 0..n {
            let beta: [f64; 3] = d.sample(&mut rng);
            for k in 0..3 {
                let l = beta[k].ln();
                sums[k] += l;
                sq[k] += l * l;
            }
        }
        let closed = dirichlet_expected_log(&dir(&alpha));
        for k in 0..3 {
            let mean = sums[k] / n as f64;
            let var = sq[k] / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            assert!((mean - closed[k]).abs() < 3.0 * se, "component {k}");
        }
    }

    #[test]
    fn sampling_determinism_and_degenerate_variance() {
        let g = DiagGaussian::new(vec![1.5, -2.0], vec![1e-30, 1e-30]).unwrap();
        let s = sample_gaussian(&g, &mut rng_from_seed(1));
        assert_abs_diff_eq!(s[0], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s[1], -2.0, epsilon = 1e-12);

        let g = DiagGaussian::standard(100);
        let a = sample_gaussian(&g, &mut rng_from_seed(5));
        let b = sample_gaussian(&g, &mut rng_from_seed(5));
        let c = sample_gaussian(&g, &mut rng_from_seed(6));
        assert_eq!(a, b);
        assert!(a.iter().zip(&c).all(|(x, y)| x != y));
    }

    #[test]
    fn sampling_moments() {
        let mut rng = rng_from_seed(3);
        let n = 1_000_000;
        let xs = standard_normals(&mut rng, n);
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn kl_nonnegative_and_zero_on_diagonal(
            p in prop::collection::vec(1.0f64..8.0, 3),
            q in prop::collection::vec(1.0f64..8.0, 3),
        ) {
            let (p, q) = (dir(&p), dir(&q));
            prop_assert!(dirichlet_kl(&p, &p).unwrap().abs() < 1e-12);
            prop_assert!(dirichlet_kl(&p, &q).unwrap() >= -1e-12);
        }

        #[test]
        fn entropy_ignores_mean_and_grows_with_variance(
            mean in prop::collection::vec(-10.0f64..10.0, 4),
            var in prop::collection::vec(0.01f64..10.0, 4),
            k in 0usize..4,
            bump in 0.01f64..5.0,
        ) {
            let base = DiagGaussian::new(vec![0.0; 4], var.clone()).unwrap();
            let moved = DiagGaussian::new(mean, var.clone()).unwrap();
            prop_assert!((gaussian_entropy(&base) - gaussian_entropy(&moved)).abs() < 1e-12);
            let mut wider = var;
            wider[k] += bump;
            let wider = DiagGaussian::new(vec![0.0; 4], wider).unwrap();
            prop_assert!(gaussian_entropy(&wider) > gaussian_entropy(&base));
        }
    }

    #[test]
    fn kl_random_pairs_nonnegative() {
        let mut rng = rng_from_seed(99);
        for _ in 0..1000 {
            let p: Vec<f64> = (0..3).map(|_| rng.random_range(1.0..10.0)).collect();
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(1.0..10.0)).collect();
            assert!(dirichlet_kl(&dir(&p), &dir(&q)).unwrap() >= -1e-12);
        }
    }
}
