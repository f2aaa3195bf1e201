//! Multi-modal account datasets: metadata table, pooled text embeddings,
//! multi-relation graph, labels and splits.

mod io;
mod normalize;
mod perturb;
mod split;
mod synth;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub use io::{load_dataset, save_dataset, EMBEDDING_MAGIC};
pub use normalize::{normalize_features, NormStats};
pub use perturb::inject_camouflage_edges;
pub use split::split_dataset;
pub use synth::{generate_synthetic, SynthConfig, SynthDataset};

/// Metadata columns in file and feature order.
pub const METADATA_COLUMNS: [&str; 13] = [
    "followers_count",
    "listed_count",
    "statuses_count",
    "friends_count",
    "favourites_count",
    "screen_name_length",
    "name_length",
    "description_length",
    "followers_friends_ratio",
    "default_profile",
    "verified",
    "default_profile_image",
    "geo_enabled",
];

/// Number of count-valued columns at the front of [`METADATA_COLUMNS`].
pub const NUM_COUNT_FEATURES: usize = 8;
/// Index of the followers/friends ratio column.
pub const RATIO_COLUMN: usize = 8;
/// Width of the metadata feature vector.
pub const METADATA_WIDTH: usize = METADATA_COLUMNS.len();

/// Followers over friends, with zero friends mapped to 0.
pub fn followers_friends_ratio(followers: f64, friends: f64) -> f64 {
    if friends > 0.0 {
        followers / friends
    } else {
        0.0
    }
}

/// Per-account metadata features, one row per account.
#[derive(Debug, Clone, PartialEq)]
pub struct AccountTable {
    features: Matrix,
    normalized: bool,
}

impl AccountTable {
    /// Validates raw (unnormalized) features.
    pub fn new(features: Matrix) -> Result<Self> {
        if features.cols() != METADATA_WIDTH {
            return Err(Error::contract(format!(
                "metadata needs {METADATA_WIDTH} columns, got {}",
                features.cols()
            )));
        }
        for i in 0..features.rows() {
            if let Some(msg) = validate_metadata_row(features.row(i)) {
                return Err(Error::contract(format!("account {i}: {msg}")));
            }
        }
        Ok(Self {
            features,
            normalized: false,
        })
    }

    pub(crate) fn normalized(features: Matrix) -> Self {
        Self {
            features,
            normalized: true,
        }
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }
}

pub(crate) fn validate_metadata_row(row: &[f64]) -> Option<String> {
    if let Some((c, v)) = row.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Some(format!("non-finite value {v} in {}", METADATA_COLUMNS[c]));
    }
    if let Some(c) = (0..=RATIO_COLUMN).find(|&c| row[c] < 0.0) {
        return Some(format!("negative value in {}", METADATA_COLUMNS[c]));
    }
    if let Some(c) = (RATIO_COLUMN + 1..METADATA_WIDTH).find(|&c| row[c] != 0.0 && row[c] != 1.0) {
        return Some(format!("{} must be 0 or 1", METADATA_COLUMNS[c]));
    }
    None
}

/// Pooled text embeddings, optionally with the per-tweet vectors they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddingTable {
    pooled: Matrix,
    per_tweet: Option<Vec<Matrix>>,
}

impl TextEmbeddingTable {
    pub fn from_pooled(pooled: Matrix) -> Result<Self> {
        if !pooled.all_finite() {
            return Err(Error::contract("text embeddings contain non-finite values"));
        }
        Ok(Self {
            pooled,
            per_tweet: None,
        })
    }

    /// Pools each account's tweet vectors by their arithmetic mean.
    pub fn from_per_tweet(per_tweet: Vec<Matrix>, dim: usize) -> Result<Self> {
        let mut pooled = Matrix::zeros(per_tweet.len(), dim);
        for (i, tweets) in per_tweet.iter().enumerate() {
            if tweets.cols() != dim {
                return Err(Error::contract(format!(
                    "account {i}: tweet embeddings have width {}, expected {dim}",
                    tweets.cols()
                )));
            }
            if tweets.rows() == 0 {
                return Err(Error::contract(format!("account {i} has no tweets")));
            }
            let n = tweets.rows() as f64;
            let row = pooled.row_mut(i);
            for t in 0..tweets.rows() {
                for (p, v) in row.iter_mut().zip(tweets.row(t)) {
                    *p += v;
                }
            }
            row.iter_mut().for_each(|p| *p /= n);
        }
        let mut table = Self::from_pooled(pooled)?;
        table.per_tweet = Some(per_tweet);
        Ok(table)
    }

    pub fn pooled(&self) -> &Matrix {
        &self.pooled
    }

    pub fn per_tweet(&self) -> Option<&[Matrix]> {
        self.per_tweet.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.pooled.cols()
    }

    pub fn len(&self) -> usize {
        self.pooled.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.pooled.rows() == 0
    }
}

/// Directed multi-relation graph. Edge lists are sorted and duplicate-free.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeteroGraph {
    num_nodes: usize,
    relation_names: Vec<String>,
    relations: Vec<Vec<(usize, usize)>>,
}

impl HeteroGraph {
    pub fn new(
        num_nodes: usize,
        relation_names: Vec<String>,
        relations: Vec<Vec<(usize, usize)>>,
    ) -> Result<Self> {
        if relation_names.is_empty() {
            return Err(Error::contract("graph needs at least one relation"));
        }
        if relation_names.len() != relations.len() {
            return Err(Error::contract("relation names and edge lists differ in count"));
        }
        let mut canonical = Vec::with_capacity(relations.len());
        for (name, edges) in relation_names.iter().zip(relations) {
            if let Some(&(s, d)) = edges.iter().find(|(s, d)| *s >= num_nodes || *d >= num_nodes) {
                return Err(Error::contract(format!(
                    "node index out of range: edge ({s}, {d}) in relation '{name}' with {num_nodes} nodes"
                )));
            }
            let set: BTreeSet<(usize, usize)> = edges.into_iter().collect();
            canonical.push(set.into_iter().collect());
        }
        Ok(Self {
            num_nodes,
            relation_names,
            relations: canonical,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn edges(&self, relation: usize) -> &[(usize, usize)] {
        &self.relations[relation]
    }

    pub fn num_edges(&self) -> usize {
        self.relations.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    None,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::None => "none",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

pub const HUMAN: u8 = 0;
pub const BOT: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub accounts: AccountTable,
    pub text: TextEmbeddingTable,
    pub graph: HeteroGraph,
    pub labels: Vec<Option<u8>>,
    pub split: Vec<Split>,
}

impl Dataset {
    pub fn new(
        accounts: AccountTable,
        text: TextEmbeddingTable,
        graph: HeteroGraph,
        labels: Vec<Option<u8>>,
        split: Vec<Split>,
    ) -> Result<Self> {
        let n = graph.num_nodes();
        for (what, len) in [
            ("metadata", accounts.len()),
            ("text embeddings", text.len()),
            ("labels", labels.len()),
            ("splits", split.len()),
        ] {
            if len != n {
                return Err(Error::contract(format!(
                    "{what} cover {len} accounts but the graph has {n} nodes"
                )));
            }
        }
        if let Some(l) = labels.iter().flatten().find(|l| **l > 1) {
            return Err(Error::contract(format!("label {l} is not binary")));
        }
        if let Some(i) = (0..n).find(|&i| split[i] != Split::None && labels[i].is_none()) {
            return Err(Error::contract(format!("account {i} is in a split but unlabeled")));
        }
        Ok(Self {
            accounts,
            text,
            graph,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == which).collect()
    }

    /// Labeled accounts, regardless of split.
    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i].is_some()).collect()
    }

    pub fn with_graph(&self, graph: HeteroGraph) -> Result<Self> {
        Dataset::new(
            self.accounts.clone(),
            self.text.clone(),
            graph,
            self.labels.clone(),
            self.split.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_tweet_pooling() {
        let v = [0.25, -1.5, 3.0];
        let same = Matrix::from_rows(&[v, v, v]);
        let t = TextEmbeddingTable::from_per_tweet(vec![same], 3).unwrap();
        assert_eq!(t.pooled().row(0), &v);

        let two = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let t = TextEmbeddingTable::from_per_tweet(vec![two], 2).unwrap();
        assert_eq!(t.pooled().row(0), &[0.5, 0.5]);
        assert!(t.per_tweet().is_some());
    }

    #[test]
    fn graph_dedups_and_validates() {
        let g = HeteroGraph::new(
            3,
            vec!["follow".into()],
            vec![vec![(0, 1), (1, 2), (0, 1)]],
        )
        .unwrap();
        assert_eq!(g.edges(0), &[(0, 1), (1, 2)]);
        let err = HeteroGraph::new(3, vec!["follow".into()], vec![vec![(0, 99)]]).unwrap_err();
        assert!(err.to_string().contains("node index out of range"));
        assert!(HeteroGraph::new(3, vec![], vec![]).is_err());
    }

    #[test]
    fn zero_friend_ratio_is_zero() {
        assert_eq!(followers_friends_ratio(10.0, 0.0), 0.0);
        assert_eq!(followers_friends_ratio(10.0, 4.0), 2.5);
    }

    #[test]
    fn metadata_validation() {
        let mut row = [0.0; METADATA_WIDTH];
        assert!(validate_metadata_row(&row).is_none());
        row[0] = -1.0;
        assert!(validate_metadata_row(&row).is_some());
        row[0] = 0.0;
        row[10] = 0.5;
        assert!(validate_metadata_row(&row).is_some());
    }
}
