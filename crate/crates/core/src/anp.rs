//! Per-modality attentive neural process over a learnable context set.

use crate::encoders::Mlp;
use crate::error::{Error, Result};
use crate::numerics::{softplus, standard_normals, DiagGaussian, Rng};
use crate::tensor::{softmax_in_place, Matrix, ParamId, ParamStore, Tape, Var};

/// Floor added after the softplus on the variance path.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Learnable context inputs with fixed class-balanced one-hot labels and
/// the two context encoders.
#[derive(Debug, Clone)]
pub struct ContextSet {
    pub keys: ParamId,
    labels: Matrix,
    pub mean_mlp: Mlp,
    pub var_mlp: Mlp,
}

fn balanced_labels(n: usize) -> Matrix {
    let mut m = Matrix::zeros(n, 2);
    for i in 0..n {
        m.set(i, if i < n / 2 { 0 } else { 1 }, 1.0);
    }
    m
}

impl ContextSet {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        n_context: usize,
        d_s: usize,
        d_e: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if n_context == 0 || n_context % 2 != 0 {
            return Err(Error::contract(format!("context size must be even and positive, got {n_context}")));
        }
        // Unit-variance keys: the attention already divides by √d_s, so
        // logits start at the scale of a single encoding coordinate.
        let keys = Matrix::from_vec(n_context, d_s, standard_normals(rng, n_context * d_s));
        let keys = store.add(format!("{name}.keys"), keys);
        let mean_mlp = Mlp::new(store, &format!("{name}.mean"), &[d_s + 2, d_e, d_e], rng);
        let var_mlp = Mlp::new(store, &format!("{name}.var"), &[d_s + 2, d_e, d_e], rng);
        Ok(Self { keys, labels: balanced_labels(n_context), mean_mlp, var_mlp })
    }

    pub fn labels(&self) -> &Matrix {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.rows() == 0
    }

    /// Encodes `[C_X ‖ C_Y]` into mean-path and variance-path rows.
    pub fn encode(&self, tape: &mut Tape) -> ContextEncoding {
        let keys = tape.param(self.keys);
        let labels = tape.constant(self.labels.clone());
        let input = tape.concat_cols(&[keys, labels]);
        let r = self.mean_mlp.forward(tape, input);
        let s = self.var_mlp.forward(tape, input);
        let s = tape.softplus(s);
        let s = tape.add_scalar(s, VARIANCE_FLOOR);
        ContextEncoding { keys, r, s }
    }
}

/// Tape handles for an encoded context set.
#[derive(Debug, Clone, Copy)]
pub struct ContextEncoding {
    pub keys: Var,
    pub r: Var,
    pub s: Var,
}

/// Batched cross-attention: returns `(r, s, weights)` with one row per
/// query.
pub fn attend(tape: &mut Tape, queries: Var, ctx: &ContextEncoding) -> (Var, Var, Var) {
    let d_s = tape.value(queries).cols() as f64;
    let logits = tape.matmul_nt(queries, ctx.keys);
    let logits = tape.scale(logits, 1.0 / d_s.sqrt());
    let weights = tape.softmax_rows(logits);
    let r = tape.matmul(weights, ctx.r);
    let s = tape.matmul(weights, ctx.s);
    (r, s, weights)
}

/// Context-averaged prior `(u, q)` as `1 × d_e` rows.
pub fn prior(tape: &mut Tape, ctx: &ContextEncoding) -> (Var, Var) {
    (tape.mean_cols(ctx.r), tape.mean_cols(ctx.s))
}

/// Conjugate combination of a likelihood `(r, s)` with a prior `(u, q)`;
/// returns `(mean, variance)`.
pub fn posterior(tape: &mut Tape, r: Var, s: Var, u: Var, q: Var) -> (Var, Var) {
    let ps = tape.recip(s);
    let pq = tape.recip(q);
    let precision = tape.add(ps, pq);
    let var = tape.recip(precision);
    let a = tape.mul(r, ps);
    let b = tape.mul(u, pq);
    let num = tape.add(a, b);
    (tape.mul(var, num), var)
}

/// Target-specific summary `(r, s)` of one account in one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct UnimodalLatentSummary {
    r: Vec<f64>,
    s: Vec<f64>,
}

impl UnimodalLatentSummary {
    pub fn new(r: Vec<f64>, s: Vec<f64>) -> Result<Self> {
        check_pair("summary", &r, &s)?;
        Ok(Self { r, s })
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }
}

/// Modality prior `N(u, diag(q))`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnimodalPrior {
    u: Vec<f64>,
    q: Vec<f64>,
}

impl UnimodalPrior {
    pub fn new(u: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        check_pair("prior", &u, &q)?;
        Ok(Self { u, q })
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn as_gaussian(&self) -> DiagGaussian {
        DiagGaussian::new(self.u.clone(), self.q.clone()).expect("validated prior")
    }
}

fn check_pair(what: &str, mean: &[f64], var: &[f64]) -> Result<()> {
    if mean.len() != var.len() || mean.is_empty() {
        return Err(Error::contract(format!("{what}: mean and variance widths {} and {}", mean.len(), var.len())));
    }
    if mean.iter().any(|x| !x.is_finite()) {
        return Err(Error::contract(format!("{what}: non-finite mean")));
    }
    if var.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(Error::contract(format!("{what}: variance must be positive and finite")));
    }
    Ok(())
}

/// Encoded context rows `(R_ctx, S_ctx)`.
pub fn encode_context(ctx: &ContextSet, store: &ParamStore) -> (Matrix, Matrix) {
    let mut tape = Tape::with_params(store);
    let enc = ctx.encode(&mut tape);
    (tape.value(enc.r).clone(), tape.value(enc.s).clone())
}

/// Cross-attention of a single query against the context keys.
pub fn cross_attend(
    h: &[f64],
    ctx: &ContextSet,
    store: &ParamStore,
    r_ctx: &Matrix,
    s_ctx: &Matrix,
) -> Result<UnimodalLatentSummary> {
    let keys = store.value(ctx.keys);
    if h.len() != keys.cols() {
        return Err(Error::contract(format!("query width {} but keys have width {}", h.len(), keys.cols())));
    }
    let scale = 1.0 / (h.len() as f64).sqrt();
    let mut w: Vec<f64> = (0..keys.rows())
        .map(|j| keys.row(j).iter().zip(h).map(|(a, b)| a * b).sum::<f64>() * scale)
        .collect();
    softmax_in_place(&mut w);
    let combine = |m: &Matrix| {
        let mut out = vec![0.0; m.cols()];
        for (j, wj) in w.iter().enumerate() {
            for (o, x) in out.iter_mut().zip(m.row(j)) {
                *o += wj * x;
            }
        }
        out
    };
    UnimodalLatentSummary::new(combine(r_ctx), combine(s_ctx))
}

/// Column means of the encoded context rows.
pub fn unimodal_prior(r_ctx: &Matrix, s_ctx: &Matrix) -> Result<UnimodalPrior> {
    if r_ctx.rows() == 0 || r_ctx.shape() != s_ctx.shape() {
        return Err(Error::contract("context encodings must be nonempty with matching shapes"));
    }
    let mean = |m: &Matrix| {
        (0..m.cols())
            .map(|c| (0..m.rows()).map(|r| m.get(r, c)).sum::<f64>() / m.rows() as f64)
            .collect()
    };
    UnimodalPrior::new(mean(r_ctx), mean(s_ctx))
}

/// Single-modality posterior with unit weights on likelihood and prior.
pub fn unimodal_posterior(summ: &UnimodalLatentSummary, prior: &UnimodalPrior) -> Result<DiagGaussian> {
    if summ.r.len() != prior.u.len() {
        return Err(Error::contract("summary and prior widths differ"));
    }
    let var: Vec<f64> = summ.s.iter().zip(&prior.q).map(|(s, q)| 1.0 / (1.0 / s + 1.0 / q)).collect();
    let mean = (0..var.len())
        .map(|d| var[d] * (summ.r[d] / summ.s[d] + prior.u[d] / prior.q[d]))
        .collect();
    DiagGaussian::new(mean, var)
}

/// Positivity map used on the variance path.
pub fn positivity(x: f64) -> f64 {
    softplus(x) + VARIANCE_FLOOR
}
