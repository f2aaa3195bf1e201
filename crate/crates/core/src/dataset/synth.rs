//! Desk-scale synthetic account populations with dialable per-modality
//! signal, homophilous follow graphs and optional camouflage.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::split::stratified_assignment;
use super::{
    followers_friends_ratio, AccountTable, Dataset, HeteroGraph, TextEmbeddingTable, BOT, HUMAN,
    METADATA_WIDTH, NUM_COUNT_FEATURES, RATIO_COLUMN,
};
use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::numerics::{rng_from_seed, standard_normals, Rng};
use crate::tensor::Matrix;

/// Latent width behind the metadata table: one latent per count column and
/// one per boolean flag.
const META_LATENT: usize = NUM_COUNT_FEATURES + (METADATA_WIDTH - RATIO_COLUMN - 1);

/// (offset, scale) mapping a unit-variance latent onto each count column.
const COUNT_SCALES: [(f64, f64); NUM_COUNT_FEATURES] = [
    (800.0, 200.0),
    (40.0, 10.0),
    (3000.0, 700.0),
    (600.0, 150.0),
    (1500.0, 350.0),
    (11.0, 2.0),
    (12.0, 2.5),
    (80.0, 18.0),
];

const RELATIONS: [&str; 2] = ["following", "follower"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_accounts: usize,
    pub bot_fraction: f64,
    pub d_text: usize,
    /// Distance between class means in units of within-class standard
    /// deviation, for (metadata, text, graph). Graph-modality signal comes
    /// from `edge_homophily`; its entry here is only validated.
    pub class_separation: [f64; 3],
    /// Probability that a drawn edge joins two accounts of the same class.
    pub edge_homophily: f64,
    /// Edges drawn per account and relation.
    pub mean_degree: f64,
    /// Fraction of bots whose `camouflaged_modality` is drawn as if human.
    pub camouflage_fraction: f64,
    pub camouflaged_modality: Modality,
    /// Translation of every feature mean, in within-class standard
    /// deviations, orthogonal to the class direction.
    pub shift: f64,
    /// Seeds the class and shift directions, shared by ID and shifted sets.
    pub world_seed: u64,
    /// Seeds the account sample, edges and split.
    pub seed: u64,
    pub split_ratios: (f64, f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_accounts: 1000,
            bot_fraction: 0.3,
            d_text: 32,
            class_separation: [4.0, 4.0, 4.0],
            edge_homophily: 0.9,
            mean_degree: 4.0,
            camouflage_fraction: 0.0,
            camouflaged_modality: Modality::Text,
            shift: 0.0,
            world_seed: 0,
            seed: 7,
            split_ratios: (0.7, 0.2, 0.1),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_accounts < 10 {
            return Err(Error::contract("synthetic datasets need at least 10 accounts"));
        }
        for (name, p) in [
            ("bot_fraction", self.bot_fraction),
            ("edge_homophily", self.edge_homophily),
            ("camouflage_fraction", self.camouflage_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::contract(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.d_text == 0 {
            return Err(Error::contract("d_text must be positive"));
        }
        if self.class_separation.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::contract("class separations must be finite and >= 0"));
        }
        if !(self.mean_degree > 0.0) || !self.shift.is_finite() {
            return Err(Error::contract("mean_degree must be > 0 and shift finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub dataset: Dataset,
    /// Bots whose camouflaged modality was drawn from the human distribution.
    pub camouflaged: Vec<usize>,
}

fn unit_vector(rng: &mut Rng, dim: usize) -> Vec<f64> {
    let v = standard_normals(rng, dim);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// The all-ones vector with its component along `u` removed.
fn orthogonal_ones(u: &[f64]) -> Vec<f64> {
    let along: f64 = u.iter().sum();
    u.iter().map(|x| 1.0 - along * x).collect()
}

struct ClassGeometry {
    direction: Vec<f64>,
    shift: Vec<f64>,
}

impl ClassGeometry {
    fn new(rng: &mut Rng, dim: usize, shift: f64) -> Self {
        let direction = unit_vector(rng, dim);
        let shift = orthogonal_ones(&direction).into_iter().map(|x| x * shift).collect();
        Self { direction, shift }
    }

    fn draw(&self, rng: &mut Rng, class: u8, separation: f64) -> Vec<f64> {
        let sign = if class == BOT { 0.5 } else { -0.5 };
        let noise = standard_normals(rng, self.direction.len());
        noise
            .into_iter()
            .zip(self.direction.iter().zip(&self.shift))
            .map(|(e, (u, s))| e + sign * separation * u + s)
            .collect()
    }
}

fn metadata_row(latent: &[f64]) -> [f64; METADATA_WIDTH] {
    let mut row = [0.0; METADATA_WIDTH];
    for (k, (offset, scale)) in COUNT_SCALES.iter().enumerate() {
        row[k] = (offset + scale * latent[k]).max(0.0);
    }
    row[RATIO_COLUMN] = followers_friends_ratio(row[0], row[3]);
    for (j, slot) in row[RATIO_COLUMN + 1..].iter_mut().enumerate() {
        *slot = if latent[NUM_COUNT_FEATURES + j] > 0.0 { 1.0 } else { 0.0 };
    }
    row
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let n = cfg.n_accounts;

    let mut world = rng_from_seed(cfg.world_seed ^ 0x5eed_0f_3a11d);
    let meta_geom = ClassGeometry::new(&mut world, META_LATENT, cfg.shift);
    let text_geom = ClassGeometry::new(&mut world, cfg.d_text, cfg.shift);

    let mut rng = rng_from_seed(cfg.seed);
    let n_bots = (cfg.bot_fraction * n as f64).round() as usize;
    let mut labels: Vec<u8> = (0..n).map(|i| if i < n_bots { BOT } else { HUMAN }).collect();
    labels.shuffle(&mut rng);

    let mut bots: Vec<usize> = (0..n).filter(|&i| labels[i] == BOT).collect();
    bots.shuffle(&mut rng);
    let n_camo = (cfg.camouflage_fraction * n_bots as f64).round() as usize;
    let mut camouflaged = bots[..n_camo].to_vec();
    camouflaged.sort_unstable();
    let mut is_camo = vec![false; n];
    camouflaged.iter().for_each(|&i| is_camo[i] = true);

    let apparent = |i: usize, m: Modality| {
        if is_camo[i] && cfg.camouflaged_modality == m {
            HUMAN
        } else {
            labels[i]
        }
    };

    let mut meta_rows = Vec::with_capacity(n);
    let mut text = Matrix::zeros(n, cfg.d_text);
    for i in 0..n {
        let latent = meta_geom.draw(&mut rng, apparent(i, Modality::Metadata), cfg.class_separation[0]);
        meta_rows.push(metadata_row(&latent));
        let emb = text_geom.draw(&mut rng, apparent(i, Modality::Text), cfg.class_separation[1]);
        // stored as f32 on disk, so keep values exactly representable
        for (slot, v) in text.row_mut(i).iter_mut().zip(emb) {
            *slot = v as f32 as f64;
        }
    }

    let groups: [Vec<usize>; 2] = [HUMAN, BOT]
        .map(|c| (0..n).filter(|&i| apparent(i, Modality::Graph) == c).collect());
    let draws = (cfg.mean_degree * n as f64).round() as usize;
    let mut relations = Vec::with_capacity(RELATIONS.len());
    for _ in RELATIONS {
        let mut edges = Vec::with_capacity(draws);
        for _ in 0..draws {
            let src = rng.random_range(0..n);
            let own = apparent(src, Modality::Graph) as usize;
            let same = rng.random_bool(cfg.edge_homophily);
            let pool = if same || groups[1 - own].is_empty() {
                &groups[own]
            } else {
                &groups[1 - own]
            };
            if pool.len() < 2 && same {
                continue;
            }
            let dst = loop {
                let d = pool[rng.random_range(0..pool.len())];
                if d != src {
                    break d;
                }
            };
            edges.push((src, dst));
        }
        relations.push(edges);
    }
    let graph = HeteroGraph::new(n, RELATIONS.iter().map(|s| s.to_string()).collect(), relations)?;

    let labels: Vec<Option<u8>> = labels.into_iter().map(Some).collect();
    let split = stratified_assignment(&labels, cfg.split_ratios, &mut rng)?;
    let dataset = Dataset::new(
        AccountTable::new(Matrix::from_rows(&meta_rows))?,
        TextEmbeddingTable::from_pooled(text)?,
        graph,
        labels,
        split,
    )?;
    Ok(SynthDataset {
        dataset,
        camouflaged,
    })
}
