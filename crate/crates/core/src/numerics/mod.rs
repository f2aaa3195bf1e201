//! Special functions, distribution primitives, seeded sampling and a
//! finite-difference gradient checker.

mod distributions;
mod gradcheck;
mod special;

pub use distributions::{
    dirichlet_expected_log, dirichlet_kl, gaussian_entropy, rng_from_seed, sample_gaussian,
    standard_normals, DiagGaussian, DirichletParams, Rng,
};
pub use gradcheck::{compare_gradients, finite_diff_grad, relative_error, GradCheck};
pub use special::{digamma, ln_gamma, normal_cdf, sigmoid, softplus, trigamma};

pub(crate) use special::{digamma_unchecked, ln_gamma_unchecked, trigamma_unchecked};
