use std::collections::BTreeSet;

use rand::Rng as _;

use super::{HeteroGraph, BOT, HUMAN};
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Adds `⌊proportion · |E_r|⌋` new human→bot edges to every relation.
///
/// Endpoints are drawn uniformly from the labeled humans and bots; draws that
/// hit an existing edge are redrawn, so exactly that many edges are added.
pub fn inject_camouflage_edges(
    g: &HeteroGraph,
    labels: &[Option<u8>],
    proportion: f64,
    rng: &mut Rng,
) -> Result<HeteroGraph> {
    if !(0.0..=1.0).contains(&proportion) {
        return Err(Error::contract(format!("proportion must be in [0, 1], got {proportion}")));
    }
    if labels.len() != g.num_nodes() || labels.iter().any(Option::is_none) {
        return Err(Error::contract("camouflage injection needs a label for every node"));
    }
    let humans: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Some(HUMAN)).collect();
    let bots: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Some(BOT)).collect();
    if humans.is_empty() || bots.is_empty() {
        return Err(Error::contract("camouflage injection needs both human and bot nodes"));
    }

    let mut relations = Vec::with_capacity(g.num_relations());
    for r in 0..g.num_relations() {
        let mut edges: BTreeSet<(usize, usize)> = g.edges(r).iter().copied().collect();
        let target = (proportion * g.edges(r).len() as f64).floor() as usize;
        let existing_cross = edges
            .iter()
            .filter(|(s, d)| labels[*s] == Some(HUMAN) && labels[*d] == Some(BOT))
            .count();
        if target > humans.len() * bots.len() - existing_cross {
            return Err(Error::contract(format!(
                "relation '{}' cannot take {target} more human-bot edges",
                g.relation_names()[r]
            )));
        }
        let mut added = 0;
        while added < target {
            let h = humans[rng.random_range(0..humans.len())];
            let b = bots[rng.random_range(0..bots.len())];
            if edges.insert((h, b)) {
                added += 1;
            }
        }
        relations.push(edges.into_iter().collect());
    }
    HeteroGraph::new(g.num_nodes(), g.relation_names().to_vec(), relations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng_from_seed;

    fn line_graph(n: usize, edges: usize) -> (HeteroGraph, Vec<Option<u8>>) {
        let list: Vec<(usize, usize)> = (0..edges).map(|k| (k % n, (k * 7 + 1) % n)).collect();
        let g = HeteroGraph::new(n, vec!["following".into()], vec![list]).unwrap();
        let labels = (0..n).map(|i| Some(u8::from(i % 3 == 0))).collect();
        (g, labels)
    }

    #[test]
    fn zero_proportion_is_identity() {
        let (g, l) = line_graph(60, 100);
        let out = inject_camouflage_edges(&g, &l, 0.0, &mut rng_from_seed(1)).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn half_proportion_adds_exactly_half() {
        let (g, l) = line_graph(60, 100);
        let before = g.edges(0).len();
        let out = inject_camouflage_edges(&g, &l, 0.5, &mut rng_from_seed(2)).unwrap();
        assert_eq!(out.edges(0).len(), before + before / 2);
        let original: BTreeSet<_> = g.edges(0).iter().copied().collect();
        let added: Vec<_> = out.edges(0).iter().filter(|e| !original.contains(e)).collect();
        assert_eq!(added.len(), before / 2);
        for (s, d) in added {
            assert_eq!(l[*s], Some(HUMAN));
            assert_eq!(l[*d], Some(BOT));
        }
        assert!(original.iter().all(|e| out.edges(0).contains(e)));
    }

    #[test]
    fn edge_count_grows_with_proportion() {
        let (g, l) = line_graph(60, 100);
        let mut last = g.num_edges();
        for p in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let out = inject_camouflage_edges(&g, &l, p, &mut rng_from_seed(3)).unwrap();
            assert!(out.num_edges() > last);
            last = out.num_edges();
        }
    }

    #[test]
    fn needs_both_classes() {
        let (g, _) = line_graph(10, 5);
        let all_human = vec![Some(HUMAN); 10];
        assert!(inject_camouflage_edges(&g, &all_human, 0.5, &mut rng_from_seed(0)).is_err());
        let mut missing = vec![Some(BOT); 10];
        missing[0] = None;
        assert!(inject_camouflage_edges(&g, &missing, 0.5, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn deterministic_in_rng() {
        let (g, l) = line_graph(40, 80);
        let a = inject_camouflage_edges(&g, &l, 0.7, &mut rng_from_seed(5)).unwrap();
        let b = inject_camouflage_edges(&g, &l, 0.7, &mut rng_from_seed(5)).unwrap();
        assert_eq!(a, b);
    }
}
