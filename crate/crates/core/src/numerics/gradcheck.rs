use crate::error::{Error, Result};

/// Central finite-difference gradient of `f` at `theta`.
///
/// Non-finite function values are reported as [`Error::NonFinite`] naming the
/// coordinate, never as a panic.
pub fn finite_diff_grad<F>(mut f: F, theta: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::contract(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut point = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for d in 0..theta.len() {
        let orig = point[d];
        point[d] = orig + h;
        let up = f(&point);
        point[d] = orig - h;
        let down = f(&point);
        point[d] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite {
                term: format!("finite difference at coordinate {d}"),
            });
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Summary of an analytic-vs-numeric gradient comparison.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub coordinates: usize,
    pub passing: usize,
    pub max_rel_error: f64,
}

impl GradCheck {
    pub fn pass_fraction(&self) -> f64 {
        if self.coordinates == 0 {
            1.0
        } else {
            self.passing as f64 / self.coordinates as f64
        }
    }
}

/// Relative error with an absolute floor so that near-zero gradients are
/// compared on an absolute scale.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn compare_gradients(analytic: &[f64], numeric: &[f64], tol: f64, floor: f64) -> GradCheck {
    assert_eq!(analytic.len(), numeric.len());
    let mut passing = 0;
    let mut max_rel_error: f64 = 0.0;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let e = relative_error(a, n, floor);
        if e <= tol {
            passing += 1;
        }
        max_rel_error = max_rel_error.max(e);
    }
    GradCheck {
        coordinates: analytic.len(),
        passing,
        max_rel_error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_and_constant() {
        let g = finite_diff_grad(|t| t[0] * t[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
        let g = finite_diff_grad(|_| 4.2, &[1.0, -2.0, 0.5], 1e-5).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn non_finite_is_reported() {
        let r = finite_diff_grad(|t| (t[0]).ln(), &[0.0], 1e-5);
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }
}
