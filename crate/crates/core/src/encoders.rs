//! Modality-specific encoders producing `d_h`-wide account representations.

use rand::Rng as _;

use crate::dataset::HeteroGraph;
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::tensor::{Matrix, ParamId, ParamStore, Tape, Var};

/// Slope of the hidden-layer leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.01;
/// Slope of the leaky rectifier applied to graph attention logits.
pub const ATTENTION_SLOPE: f64 = 0.2;

/// Uniform Glorot initialization, `U(±sqrt(6 / (fan_in + fan_out)))`.
pub fn glorot(rng: &mut Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Matrix {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-a..a)).collect(),
    )
}

/// Affine map `x · W + b` with `W` stored as `in × out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut Rng) -> Self {
        let weight = store.add(format!("{name}.weight"), glorot(rng, input, output, input, output));
        let bias = store.add(format!("{name}.bias"), Matrix::zeros(1, output));
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let xw = tape.matmul(x, w);
        tape.add(xw, b)
    }

    pub fn input_dim(&self, store: &ParamStore) -> usize {
        store.value(self.weight).rows()
    }

    pub fn output_dim(&self, store: &ParamStore) -> usize {
        store.value(self.weight).cols()
    }
}

/// Feed-forward network with leaky-rectifier hidden activations and a
/// linear output layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [input, hidden..., output]`.
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| Linear::new(store, &format!("{name}.{k}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let mut h = x;
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h);
            if k + 1 < self.layers.len() {
                h = tape.leaky_relu(h, LEAKY_SLOPE);
            }
        }
        h
    }

    pub fn input_dim(&self, store: &ParamStore) -> usize {
        self.layers[0].input_dim(store)
    }

    pub fn output_dim(&self, store: &ParamStore) -> usize {
        self.layers.last().unwrap().output_dim(store)
    }

    /// Runs the network on constant inputs and returns the output values.
    pub fn apply(&self, store: &ParamStore, x: &Matrix) -> Result<Matrix> {
        check_width("MLP input", x.cols(), self.input_dim(store))?;
        let mut tape = Tape::with_params(store);
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, xv);
        Ok(tape.value(out).clone())
    }
}

fn check_width(what: &str, got: usize, expected: usize) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(Error::contract(format!("{what} has width {got}, expected {expected}")))
    }
}

/// Two-layer metadata encoder applied to `[x_num ‖ x_bool]`.
pub fn encode_metadata(features: &Matrix, params: &Mlp, store: &ParamStore) -> Result<Matrix> {
    check_width("metadata", features.cols(), crate::dataset::METADATA_WIDTH)?;
    params.apply(store, features)
}

/// Two-layer MLP over pooled tweet embeddings.
pub fn encode_text(pooled: &Matrix, params: &Mlp, store: &ParamStore) -> Result<Matrix> {
    check_width("text embedding", pooled.cols(), params.input_dim(store))?;
    params.apply(store, pooled)
}

/// Edge list for message passing: every relation plus a trailing `self`
/// relation giving each node a self-loop, so every softmax is over a
/// nonempty in-neighborhood.
#[derive(Debug, Clone)]
pub struct GraphIndex {
    pub num_nodes: usize,
    pub num_relations: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub rel: Vec<usize>,
}

impl GraphIndex {
    pub fn new(g: &HeteroGraph) -> Self {
        let n = g.num_nodes();
        let mut idx = Self {
            num_nodes: n,
            num_relations: g.num_relations() + 1,
            src: Vec::with_capacity(g.num_edges() + n),
            dst: Vec::with_capacity(g.num_edges() + n),
            rel: Vec::with_capacity(g.num_edges() + n),
        };
        for r in 0..g.num_relations() {
            for &(s, d) in g.edges(r) {
                idx.src.push(s);
                idx.dst.push(d);
                idx.rel.push(r);
            }
        }
        for i in 0..n {
            idx.src.push(i);
            idx.dst.push(i);
            idx.rel.push(g.num_relations());
        }
        idx
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }
}

/// One relation-aware graph attention layer.
#[derive(Debug, Clone)]
pub struct HgnLayer {
    /// Node transform, `d × d`.
    pub node: ParamId,
    /// Relation transform, `d_r × d_r`.
    pub relation: ParamId,
    /// Relation embeddings, one `d_r` row per relation (including `self`).
    pub relation_emb: ParamId,
    /// Attention vector over `[target ‖ source ‖ relation]`, `1 × (2d + d_r)`.
    pub attention: ParamId,
    /// Residual transform, `d × d`.
    pub residual: ParamId,
}

impl HgnLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        relation_dim: usize,
        num_relations: usize,
        rng: &mut Rng,
    ) -> Self {
        let att_len = 2 * dim + relation_dim;
        Self {
            node: store.add(format!("{name}.node"), glorot(rng, dim, dim, dim, dim)),
            relation: store.add(
                format!("{name}.relation"),
                glorot(rng, relation_dim, relation_dim, relation_dim, relation_dim),
            ),
            relation_emb: store.add(
                format!("{name}.relation_emb"),
                glorot(rng, num_relations, relation_dim, num_relations, relation_dim),
            ),
            attention: store.add(format!("{name}.attention"), glorot(rng, 1, att_len, att_len, 1)),
            residual: store.add(format!("{name}.residual"), glorot(rng, dim, dim, dim, dim)),
        }
    }

    /// Returns the layer output and the per-edge attention weights.
    pub fn forward(&self, tape: &mut Tape, index: &GraphIndex, h: Var) -> (Var, Var) {
        let dim = tape.value(h).cols();
        let w = tape.param(self.node);
        let wh = tape.matmul(h, w);

        let att = tape.param(self.attention);
        let relation_dim = tape.value(att).cols() - 2 * dim;
        let a_target = tape.slice_cols(att, 0, dim);
        let a_source = tape.slice_cols(att, dim, dim);
        let a_rel = tape.slice_cols(att, 2 * dim, relation_dim);

        let score_target = tape.matmul_nt(wh, a_target);
        let score_source = tape.matmul_nt(wh, a_source);
        let emb = tape.param(self.relation_emb);
        let wr = tape.param(self.relation);
        let rel = tape.matmul(emb, wr);
        let score_rel = tape.matmul_nt(rel, a_rel);

        let e_t = tape.gather_rows(score_target, index.dst.clone());
        let e_s = tape.gather_rows(score_source, index.src.clone());
        let e_r = tape.gather_rows(score_rel, index.rel.clone());
        let logits = tape.add(e_t, e_s);
        let logits = tape.add(logits, e_r);
        let logits = tape.leaky_relu(logits, ATTENTION_SLOPE);
        let weights = tape.segment_softmax(logits, index.dst.clone(), index.num_nodes);

        let messages = tape.gather_rows(wh, index.src.clone());
        let messages = tape.mul(messages, weights);
        let aggregated = tape.scatter_add_rows(messages, index.dst.clone(), index.num_nodes);
        let wres = tape.param(self.residual);
        let res = tape.matmul(h, wres);
        let pre = tape.add(aggregated, res);
        (tape.leaky_relu(pre, LEAKY_SLOPE), weights)
    }
}

/// Linear input projection followed by `L` attention layers.
#[derive(Debug, Clone)]
pub struct GraphEncoder {
    pub input: Linear,
    pub layers: Vec<HgnLayer>,
}

impl GraphEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        dim: usize,
        relation_dim: usize,
        num_relations: usize,
        n_layers: usize,
        rng: &mut Rng,
    ) -> Self {
        assert!(n_layers >= 1, "graph encoder needs at least one layer");
        let input = Linear::new(store, &format!("{name}.input"), input_dim, dim, rng);
        let layers = (0..n_layers)
            .map(|l| HgnLayer::new(store, &format!("{name}.layer{l}"), dim, relation_dim, num_relations, rng))
            .collect();
        Self { input, layers }
    }

    pub fn forward(&self, tape: &mut Tape, index: &GraphIndex, x0: Var) -> Var {
        self.forward_with_attention(tape, index, x0).0
    }

    pub fn forward_with_attention(&self, tape: &mut Tape, index: &GraphIndex, x0: Var) -> (Var, Vec<Var>) {
        let mut h = self.input.forward(tape, x0);
        let mut weights = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, w) = layer.forward(tape, index, h);
            h = out;
            weights.push(w);
        }
        (h, weights)
    }
}

/// Runs the graph encoder on constant node features.
pub fn encode_graph(
    g: &HeteroGraph,
    x0: &Matrix,
    params: &GraphEncoder,
    store: &ParamStore,
) -> Result<Matrix> {
    if x0.rows() != g.num_nodes() {
        return Err(Error::contract(format!(
            "{} feature rows for a graph of {} nodes",
            x0.rows(),
            g.num_nodes()
        )));
    }
    check_width("graph input", x0.cols(), params.input.input_dim(store))?;
    let n_rel = store.value(params.layers[0].relation_emb).rows();
    if n_rel != g.num_relations() + 1 {
        return Err(Error::contract(format!(
            "encoder has {} relation embeddings; graph needs {}",
            n_rel,
            g.num_relations() + 1
        )));
    }
    let index = GraphIndex::new(g);
    let mut tape = Tape::with_params(store);
    let x = tape.constant(x0.clone());
    let out = params.forward(&mut tape, &index, x);
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{compare_gradients, finite_diff_grad, rng_from_seed};

    fn leaky(x: f64) -> f64 {
        if x > 0.0 {
            x
        } else {
            LEAKY_SLOPE * x
        }
    }

    fn scalar_mlp(store: &mut ParamStore, w1: f64, b1: f64, w2: f64, b2: f64) -> Mlp {
        let mlp = Mlp::new(store, "toy", &[1, 1, 1], &mut rng_from_seed(0));
        *store.value_mut(mlp.layers[0].weight) = Matrix::scalar(w1);
        *store.value_mut(mlp.layers[0].bias) = Matrix::scalar(b1);
        *store.value_mut(mlp.layers[1].weight) = Matrix::scalar(w2);
        *store.value_mut(mlp.layers[1].bias) = Matrix::scalar(b2);
        mlp
    }

    #[test]
    fn mlp_hand_values() {
        let mut store = ParamStore::new();
        let mlp = scalar_mlp(&mut store, 1.0, 0.0, 2.0, 1.0);
        let out = mlp.apply(&store, &Matrix::from_vec(2, 1, vec![3.0, -3.0])).unwrap();
        assert!((out.get(0, 0) - 7.0).abs() < 1e-12);
        assert!((out.get(1, 0) - 0.94).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_give_output_bias() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "meta", &[crate::dataset::METADATA_WIDTH, 8, 4], &mut rng_from_seed(1));
        for l in &mlp.layers {
            store.value_mut(l.weight).data_mut().fill(0.0);
        }
        let c = [0.5, -1.0, 2.0, 0.0];
        *store.value_mut(mlp.layers[1].bias) = Matrix::row_vector(&c);
        let x = Matrix::filled(5, crate::dataset::METADATA_WIDTH, 3.0);
        let h = encode_metadata(&x, &mlp, &store).unwrap();
        for i in 0..5 {
            assert_eq!(h.row(i), &c);
        }
        assert!(encode_metadata(&Matrix::zeros(2, 14), &mlp, &store).is_err());
        assert!(encode_text(&Matrix::zeros(2, 3), &mlp, &store).is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_biases_and_glorot_variance() {
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        Mlp::new(&mut a, "m", &[128, 128, 16], &mut rng_from_seed(3));
        Mlp::new(&mut b, "m", &[128, 128, 16], &mut rng_from_seed(3));
        assert_eq!(a, b);
        for (name, v) in a.iter() {
            if name.ends_with("bias") {
                assert!(v.data().iter().all(|x| *x == 0.0));
            }
        }
        let w = glorot(&mut rng_from_seed(4), 128, 128, 128, 128);
        let n = w.len() as f64;
        let mean = w.data().iter().sum::<f64>() / n;
        let var = w.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let expected = 2.0 / 256.0;
        assert!((var - expected).abs() < 0.2 * expected, "{var} vs {expected}");
    }

    /// Scalar graph encoder with identity transforms and zero attention.
    fn identity_encoder(store: &mut ParamStore, num_relations: usize) -> GraphEncoder {
        let enc = GraphEncoder::new(store, "g", 1, 1, 1, num_relations + 1, 1, &mut rng_from_seed(0));
        *store.value_mut(enc.input.weight) = Matrix::scalar(1.0);
        let l = &enc.layers[0];
        *store.value_mut(l.node) = Matrix::scalar(1.0);
        *store.value_mut(l.residual) = Matrix::scalar(1.0);
        *store.value_mut(l.relation) = Matrix::scalar(1.0);
        store.value_mut(l.relation_emb).data_mut().fill(0.0);
        store.value_mut(l.attention).data_mut().fill(0.0);
        enc
    }

    #[test]
    fn single_node_attends_to_itself() {
        let mut store = ParamStore::new();
        let enc = identity_encoder(&mut store, 1);
        *store.value_mut(enc.layers[0].node) = Matrix::scalar(0.5);
        *store.value_mut(enc.layers[0].residual) = Matrix::scalar(-2.0);
        let g = HeteroGraph::new(1, vec!["follow".into()], vec![vec![]]).unwrap();
        let out = encode_graph(&g, &Matrix::scalar(3.0), &enc, &store).unwrap();
        // σ(W h + W_res h) = σ(1.5 - 6)
        assert!((out.get(0, 0) - leaky(-4.5)).abs() < 1e-12);
    }

    #[test]
    fn line_graph_hand_computation() {
        let mut store = ParamStore::new();
        let enc = identity_encoder(&mut store, 1);
        // 0 -> 1 <- 2, plus self-loops: node 1 averages {0, 1, 2}
        let g = HeteroGraph::new(3, vec!["follow".into()], vec![vec![(0, 1), (2, 1)]]).unwrap();
        let x = Matrix::from_vec(3, 1, vec![1.0, 2.0, 6.0]);
        let out = encode_graph(&g, &x, &enc, &store).unwrap();
        let center = leaky((1.0 + 2.0 + 6.0) / 3.0 + 2.0);
        assert!((out.get(1, 0) - center).abs() < 1e-12);
        // endpoints only see themselves
        assert!((out.get(0, 0) - 2.0).abs() < 1e-12);
        assert!((out.get(2, 0) - 12.0).abs() < 1e-12);
    }

    fn random_graph(n: usize, m: usize, seed: u64) -> HeteroGraph {
        let mut rng = rng_from_seed(seed);
        let mut rels = vec![Vec::new(), Vec::new()];
        for k in 0..m {
            rels[k % 2].push((rng.random_range(0..n), rng.random_range(0..n)));
        }
        HeteroGraph::new(n, vec!["a".into(), "b".into()], rels).unwrap()
    }

    #[test]
    fn attention_is_a_distribution_per_node() {
        let g = random_graph(30, 90, 5);
        let mut store = ParamStore::new();
        let enc = GraphEncoder::new(&mut store, "g", 4, 6, 3, 3, 2, &mut rng_from_seed(9));
        let index = GraphIndex::new(&g);
        let mut tape = Tape::with_params(&store);
        let mut rng = rng_from_seed(1);
        let x = tape.constant(Matrix::from_vec(30, 4, crate::numerics::standard_normals(&mut rng, 120)));
        let (_, weights) = enc.forward_with_attention(&mut tape, &index, x);
        for w in weights {
            let w = tape.value(w);
            let mut sums = vec![0.0; 30];
            for (k, &d) in index.dst.iter().enumerate() {
                assert!(w.data()[k] >= 0.0);
                sums[d] += w.data()[k];
            }
            assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn symmetric_pair_gets_identical_outputs() {
        let g = HeteroGraph::new(2, vec!["f".into()], vec![vec![(0, 1), (1, 0)]]).unwrap();
        let mut store = ParamStore::new();
        let enc = GraphEncoder::new(&mut store, "g", 3, 4, 2, 2, 2, &mut rng_from_seed(2));
        let x = Matrix::from_rows(&[[0.3, -1.0, 2.0], [0.3, -1.0, 2.0]]);
        let out = encode_graph(&g, &x, &enc, &store).unwrap();
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn permutation_equivariance() {
        let n = 12;
        let g = random_graph(n, 30, 8);
        let perm: Vec<usize> = (0..n).map(|i| (i * 5 + 3) % n).collect();
        let rels = (0..g.num_relations())
            .map(|r| g.edges(r).iter().map(|&(s, d)| (perm[s], perm[d])).collect())
            .collect();
        let pg = HeteroGraph::new(n, g.relation_names().to_vec(), rels).unwrap();
        let mut rng = rng_from_seed(3);
        let x = Matrix::from_vec(n, 3, crate::numerics::standard_normals(&mut rng, n * 3));
        let mut px = Matrix::zeros(n, 3);
        for i in 0..n {
            px.row_mut(perm[i]).copy_from_slice(x.row(i));
        }
        let mut store = ParamStore::new();
        let enc = GraphEncoder::new(&mut store, "g", 3, 5, 2, 3, 2, &mut rng_from_seed(4));
        let a = encode_graph(&g, &x, &enc, &store).unwrap();
        let b = encode_graph(&pg, &px, &enc, &store).unwrap();
        for i in 0..n {
            for (u, v) in a.row(i).iter().zip(b.row(perm[i])) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let g = random_graph(8, 14, 6);
        let index = GraphIndex::new(&g);
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(12);
        let meta = Mlp::new(&mut store, "meta", &[3, 4, 3], &mut rng);
        let graph = GraphEncoder::new(&mut store, "g", 3, 3, 2, 3, 2, &mut rng);
        let x = Matrix::from_vec(8, 3, crate::numerics::standard_normals(&mut rng, 24));
        let probe = Matrix::from_vec(8, 3, crate::numerics::standard_normals(&mut rng, 24));
        let eval = |store: &ParamStore| {
            let mut tape = Tape::with_params(store);
            let xv = tape.constant(x.clone());
            let pv = tape.constant(probe.clone());
            let a = meta.forward(&mut tape, xv);
            let b = graph.forward(&mut tape, &index, xv);
            let s = tape.add(a, b);
            let s = tape.mul(s, pv);
            let s = tape.sum_all(s);
            (tape, s)
        };
        let (tape, out) = eval(&store);
        let analytic: Vec<f64> = tape
            .backward(out)
            .into_param_grads(&store)
            .into_iter()
            .flat_map(Matrix::into_data)
            .collect();
        let numeric = finite_diff_grad(
            |th| {
                let mut s = store.clone();
                s.assign_flat(th);
                let (t, o) = eval(&s);
                t.scalar(o)
            },
            &store.flatten(),
            1e-5,
        )
        .unwrap();
        let check = compare_gradients(&analytic, &numeric, 1e-4, 1e-6);
        assert!(check.pass_fraction() >= 0.99, "{check:?}");
    }
}
