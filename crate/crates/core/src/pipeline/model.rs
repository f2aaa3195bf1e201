use serde::{Deserialize, Serialize};

use super::config::Hyperparams;
use crate::anp::{self, ContextSet};
use crate::dataset::{Dataset, NormStats, METADATA_WIDTH};
use crate::encoders::{GraphEncoder, GraphIndex, Mlp};
use crate::error::{Error, Result};
use crate::fusion::{self, FusionMode, GateOutput, GateParams};
use crate::modality::Modality;
use crate::numerics::{rng_from_seed, standard_normals, DiagGaussian, Rng};
use crate::objective;
use crate::tensor::{Matrix, ParamStore, Tape, Var};

/// Lower bound applied to latent variances before taking square roots.
pub const LATENT_VARIANCE_FLOOR: f64 = 1e-30;
/// Bounds on the decoder's log standard deviations.
pub const LOG_STD_RANGE: (f64, f64) = (-15.0, 5.0);

const NUM_MODALITIES: usize = Modality::ALL.len();

/// Everything needed to rebuild a model's parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_text: usize,
    pub relation_names: Vec<String>,
    pub hyper: Hyperparams,
}

/// Parameter handles for every sub-network.
#[derive(Debug, Clone)]
pub struct Layout {
    pub metadata: Mlp,
    pub text: Mlp,
    pub graph: GraphEncoder,
    pub contexts: Vec<ContextSet>,
    pub gate: GateParams,
    pub decoder: Mlp,
}

impl Layout {
    fn build(config: &ModelConfig, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        let h = &config.hyper;
        let d = h.d_hidden;
        let metadata = Mlp::new(store, "metadata", &[METADATA_WIDTH, d, d], rng);
        let text = Mlp::new(store, "text", &[config.d_text, d, d], rng);
        let graph = GraphEncoder::new(
            store,
            "graph",
            METADATA_WIDTH + config.d_text,
            d,
            h.relation_dim,
            config.relation_names.len() + 1,
            h.gnn_layers,
            rng,
        );
        let contexts = Modality::ALL
            .iter()
            .map(|m| ContextSet::new(store, &format!("context.{}", m.name()), h.n_context, d, d, rng))
            .collect::<Result<_>>()?;
        let gate = GateParams::new(store, "gate", d, NUM_MODALITIES, rng);
        let decoder = Mlp::new(store, "decoder", &[d, h.decoder_hidden, 4], rng);
        Ok(Self { metadata, text, graph, contexts, gate, decoder })
    }
}

/// Trained or freshly initialized detector.
#[derive(Debug, Clone)]
pub struct RmnpModel {
    pub config: ModelConfig,
    pub norm: NormStats,
    pub params: ParamStore,
    pub layout: Layout,
}

/// Model inputs derived from a dataset.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub metadata: Matrix,
    pub text: Matrix,
    pub graph_input: Matrix,
    pub index: GraphIndex,
}

impl Prepared {
    pub fn len(&self) -> usize {
        self.metadata.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.metadata.rows() == 0
    }
}

/// Tape handles for one forward pass over a batch.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub encodings: Vec<Var>,
    pub summaries: Vec<(Var, Var)>,
    pub priors: Vec<(Var, Var)>,
    /// Unimodal posterior `(mean, variance)` per modality.
    pub unimodal: Vec<(Var, Var)>,
    pub gate: GateOutput,
    pub joint: (Var, Var),
    pub joint_probs: Var,
    /// Empty when unimodal decoding was skipped.
    pub unimodal_probs: Vec<Var>,
}

/// Loss components on the tape, each `1 × 1`.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub ce: Var,
    pub ucd: Var,
    pub ccr: Var,
    pub total: Var,
}

impl RmnpModel {
    /// Builds a model with parameters drawn from `config.hyper.seed`.
    pub fn new(config: ModelConfig, norm: NormStats) -> Result<Self> {
        config.hyper.validate()?;
        if config.d_text == 0 {
            return Err(Error::contract("text embedding width must be positive"));
        }
        let mut params = ParamStore::new();
        let mut rng = rng_from_seed(config.hyper.seed);
        let layout = Layout::build(&config, &mut params, &mut rng)?;
        Ok(Self { config, norm, params, layout })
    }

    /// Fresh model sized for `ds`, normalizing with its train split.
    pub fn for_dataset(ds: &Dataset, hyper: Hyperparams) -> Result<Self> {
        let config = ModelConfig {
            d_text: ds.text.dim(),
            relation_names: ds.graph.relation_names().to_vec(),
            hyper,
        };
        Self::new(config, NormStats::fit(ds)?)
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.config.hyper
    }

    pub fn fusion_mode(&self) -> FusionMode {
        self.config.hyper.fusion_mode()
    }

    /// Normalizes features and indexes the graph; fails when `ds` does not
    /// match the model's schema.
    pub fn prepare(&self, ds: &Dataset) -> Result<Prepared> {
        if ds.text.dim() != self.config.d_text {
            return Err(Error::contract(format!(
                "dataset text width {} but model expects {}",
                ds.text.dim(),
                self.config.d_text
            )));
        }
        if ds.graph.relation_names() != self.config.relation_names.as_slice() {
            return Err(Error::contract(format!(
                "dataset relations {:?} but model expects {:?}",
                ds.graph.relation_names(),
                self.config.relation_names
            )));
        }
        let metadata = if ds.accounts.is_normalized() {
            ds.accounts.features().clone()
        } else {
            self.norm.apply(&ds.accounts)?
        };
        let text = ds.text.pooled().clone();
        let n = metadata.rows();
        let mut graph_input = Matrix::zeros(n, METADATA_WIDTH + self.config.d_text);
        for i in 0..n {
            let row = graph_input.row_mut(i);
            row[..METADATA_WIDTH].copy_from_slice(metadata.row(i));
            row[METADATA_WIDTH..].copy_from_slice(text.row(i));
        }
        Ok(Prepared { metadata, text, graph_input, index: GraphIndex::new(&ds.graph) })
    }

    /// Graph encodings of every node, without gradients.
    pub fn graph_encodings(&self, prep: &Prepared) -> Matrix {
        let mut tape = Tape::with_params(&self.params);
        let x = tape.constant(prep.graph_input.clone());
        let h = self.layout.graph.forward(&mut tape, &prep.index, x);
        tape.value(h).clone()
    }

    /// Encoders, cross-attention, unimodal posteriors, gate, fusion and
    /// Monte Carlo decoding for the accounts in `batch`. Pass precomputed
    /// graph encodings to skip the graph encoder (inference only).
    pub fn forward(
        &self,
        tape: &mut Tape,
        prep: &Prepared,
        batch: &[usize],
        graph_cache: Option<&Matrix>,
        with_unimodal: bool,
        rng: &mut Rng,
    ) -> Result<ForwardVars> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        if let Some(&bad) = batch.iter().find(|&&i| i >= prep.len()) {
            return Err(Error::contract(format!("account {bad} out of range for {} accounts", prep.len())));
        }
        let l = &self.layout;
        let xm = tape.constant(prep.metadata.select_rows(batch));
        let h_meta = l.metadata.forward(tape, xm);
        let xt = tape.constant(prep.text.select_rows(batch));
        let h_text = l.text.forward(tape, xt);
        let h_graph = match graph_cache {
            Some(cache) => tape.constant(cache.select_rows(batch)),
            None => {
                let x0 = tape.constant(prep.graph_input.clone());
                let all = l.graph.forward(tape, &prep.index, x0);
                tape.gather_rows(all, batch.to_vec())
            }
        };
        let encodings = vec![h_meta, h_text, h_graph];

        let mut summaries = Vec::with_capacity(NUM_MODALITIES);
        let mut priors = Vec::with_capacity(NUM_MODALITIES);
        let mut unimodal = Vec::with_capacity(NUM_MODALITIES);
        for (ctx, &h) in l.contexts.iter().zip(&encodings) {
            let enc = ctx.encode(tape);
            let (r, s, _) = anp::attend(tape, h, &enc);
            let (u, q) = anp::prior(tape, &enc);
            unimodal.push(anp::posterior(tape, r, s, u, q));
            summaries.push((r, s));
            priors.push((u, q));
        }
        let gate = l.gate.forward(tape, &encodings, self.fusion_mode());
        let joint = fusion::fuse(tape, &summaries, &priors, gate.weights);

        let n_z = self.hyper().n_z_samples;
        let joint_probs = self.decode(tape, joint.0, joint.1, n_z, rng);
        let unimodal_probs = if with_unimodal {
            unimodal.iter().map(|&(m, v)| self.decode(tape, m, v, n_z, rng)).collect()
        } else {
            Vec::new()
        };
        Ok(ForwardVars { encodings, summaries, priors, unimodal, gate, joint, joint_probs, unimodal_probs })
    }

    /// Monte Carlo estimate of the class probabilities for latents
    /// `N(mean, diag(variance))`, one row per account. Each of the
    /// `n_samples` draws shares its standard-normal noise across accounts,
    /// so an account's output does not depend on the rest of the batch.
    pub fn decode(&self, tape: &mut Tape, mean: Var, variance: Var, n_samples: usize, rng: &mut Rng) -> Var {
        let (b, d) = tape.value(mean).shape();
        let account: Vec<usize> = (0..n_samples).flat_map(|_| 0..b).collect();
        let sample: Vec<usize> = (0..n_samples).flat_map(|s| std::iter::repeat_n(s, b)).collect();
        let (m, v) = if n_samples == 1 {
            (mean, variance)
        } else {
            (tape.gather_rows(mean, account.clone()), tape.gather_rows(variance, account.clone()))
        };
        let eps = Matrix::from_vec(n_samples, d, standard_normals(rng, n_samples * d));
        let eps = tape.constant(eps.select_rows(&sample));
        let v = tape.clamp(v, LATENT_VARIANCE_FLOOR, f64::INFINITY);
        let sd = tape.sqrt(v);
        let noise = tape.mul(sd, eps);
        let z = tape.add(m, noise);
        let out = self.layout.decoder.forward(tape, z);
        let mu = tape.slice_cols(out, 0, 2);
        let logits = if self.hyper().sample_logits {
            let ls = tape.slice_cols(out, 2, 2);
            let ls = tape.clamp(ls, LOG_STD_RANGE.0, LOG_STD_RANGE.1);
            let sd = tape.exp(ls);
            let eps = Matrix::from_vec(n_samples, 2, standard_normals(rng, n_samples * 2));
            let eps = tape.constant(eps.select_rows(&sample));
            let noise = tape.mul(sd, eps);
            tape.add(mu, noise)
        } else {
            mu
        };
        let p = tape.softmax_rows(logits);
        if n_samples == 1 {
            return p;
        }
        let sum = tape.scatter_add_rows(p, account, b);
        tape.scale(sum, 1.0 / n_samples as f64)
    }

    /// Loss terms for a forward pass that included unimodal decoding.
    pub fn loss(&self, tape: &mut Tape, fwd: &ForwardVars, labels: &[u8]) -> Result<LossVars> {
        if fwd.unimodal_probs.len() != NUM_MODALITIES {
            return Err(Error::contract("loss needs unimodal predictions"));
        }
        let b = tape.value(fwd.joint_probs).rows();
        if labels.len() != b {
            return Err(Error::contract(format!("{} labels for a batch of {b}", labels.len())));
        }
        let mut onehot = Matrix::zeros(b, 2);
        for (i, &y) in labels.iter().enumerate() {
            if y > 1 {
                return Err(Error::contract(format!("label {y} is not binary")));
            }
            onehot.set(i, y as usize, 1.0);
        }
        let onehot = tape.constant(onehot);
        let h = self.hyper();

        let mut ce = objective::ce_term(tape, fwd.joint_probs, onehot);
        for &p in &fwd.unimodal_probs {
            let t = objective::ce_term(tape, p, onehot);
            let t = tape.scale(t, 1.0 / NUM_MODALITIES as f64);
            ce = tape.add(ce, t);
        }
        let gains: Vec<Var> = fwd
            .priors
            .iter()
            .zip(&fwd.unimodal)
            .map(|(&(_, q), &(_, v))| objective::information_gain_term(tape, q, v))
            .collect();
        let ucd = objective::ucd_term(tape, &gains, fwd.gate.alpha, fwd.gate.strength, h.tau);
        let ucd = tape.mean_all(ucd);
        let ccr = objective::ccr_term(tape, fwd.gate.alpha, &fwd.unimodal_probs, onehot);
        let ccr = tape.mean_all(ccr);

        let (l1, l2) = h.effective_lambdas();
        let mut total = ce;
        if l1 > 0.0 {
            let t = tape.scale(ucd, l1);
            total = tape.add(total, t);
        }
        if l2 > 0.0 {
            let t = tape.scale(ccr, l2);
            total = tape.add(total, t);
        }
        Ok(LossVars { ce, ucd, ccr, total })
    }

    /// Class probabilities for a single latent Gaussian.
    pub fn predict(&self, latent: &DiagGaussian, n_samples: usize, rng: &mut Rng) -> Result<[f64; 2]> {
        if n_samples == 0 {
            return Err(Error::contract("n_samples must be at least 1"));
        }
        if latent.dim() != self.hyper().d_hidden {
            return Err(Error::contract(format!(
                "latent width {} but decoder expects {}",
                latent.dim(),
                self.hyper().d_hidden
            )));
        }
        let mut tape = Tape::with_params(&self.params);
        let m = tape.constant(Matrix::row_vector(latent.mean()));
        let v = tape.constant(Matrix::row_vector(latent.variance()));
        let p = self.decode(&mut tape, m, v, n_samples, rng);
        let p = tape.value(p);
        Ok([p.get(0, 0), p.get(0, 1)])
    }
}
