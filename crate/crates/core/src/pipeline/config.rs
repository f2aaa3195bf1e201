use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionMode;

/// Training switches for the ablation study.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    pub no_ucd: bool,
    pub no_ccr: bool,
    pub mlp_gating: bool,
    pub poe_uniform: bool,
}

impl Ablations {
    /// Enables the switch named `name` (`no_ucd`, `no_ccr`, `mlp_gating`,
    /// `poe_uniform`).
    pub fn enable(&mut self, name: &str) -> Result<()> {
        match name {
            "no_ucd" => self.no_ucd = true,
            "no_ccr" => self.no_ccr = true,
            "mlp_gating" => self.mlp_gating = true,
            "poe_uniform" => self.poe_uniform = true,
            other => return Err(Error::contract(format!("unknown ablation '{other}'"))),
        }
        Ok(())
    }

    pub fn fusion_mode(&self) -> FusionMode {
        if self.poe_uniform {
            FusionMode::PoeUniform
        } else if self.mlp_gating {
            FusionMode::GpoeMlp
        } else {
            FusionMode::GpoeEvidential
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.poe_uniform && self.mlp_gating {
            return Err(Error::contract("poe_uniform and mlp_gating select different fusion modes"));
        }
        Ok(())
    }
}

/// Model and optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Shared width of encodings, context keys and latents.
    pub d_hidden: usize,
    pub n_z_samples: usize,
    pub n_context: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
    pub gnn_layers: usize,
    pub relation_dim: usize,
    pub decoder_hidden: usize,
    /// Draw decoder logits from their predictive Gaussian; when false only
    /// the logit means are used.
    pub sample_logits: bool,
    pub ablations: Ablations,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 1024,
            learning_rate: 1e-3,
            weight_decay: 3e-5,
            d_hidden: 128,
            n_z_samples: 10,
            n_context: 100,
            lambda1: 0.2,
            lambda2: 0.01,
            tau: 20.0,
            gnn_layers: 2,
            relation_dim: 16,
            decoder_hidden: 64,
            sample_logits: true,
            ablations: Ablations::default(),
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("d_hidden", self.d_hidden),
            ("n_z_samples", self.n_z_samples),
            ("gnn_layers", self.gnn_layers),
            ("relation_dim", self.relation_dim),
            ("decoder_hidden", self.decoder_hidden),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::contract(format!("{name} must be positive")));
        }
        if self.n_context == 0 || self.n_context % 2 != 0 {
            return Err(Error::contract("n_context must be even and positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::contract("learning_rate must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::contract("weight_decay, lambda1 and lambda2 must be nonnegative"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::contract("tau must be positive"));
        }
        self.ablations.validate()
    }

    pub fn fusion_mode(&self) -> FusionMode {
        self.ablations.fusion_mode()
    }

    /// `(λ1, λ2)` after ablation switches.
    pub fn effective_lambdas(&self) -> (f64, f64) {
        (
            if self.ablations.no_ucd { 0.0 } else { self.lambda1 },
            if self.ablations.no_ccr { 0.0 } else { self.lambda2 },
        )
    }
}
