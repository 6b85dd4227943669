//! Library results checked against independent recomputations. Each sweep
//! panics on the first disagreement and returns how much it checked.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;

use super::{bfs_distances, naive_attributes, random_graph, random_txs, rng, UnionFind};
use siege_core::graph::{build_graph, finalize_split, largest_wcc, weak_components, N_ATTRS};
use siege_core::pretext::sample_pairs;

pub const INTEGER_COLUMNS: [usize; 11] = [0, 1, 2, 3, 4, 5, 6, 7, 10, 11, 12];
pub const RATIO_COLUMNS: [usize; 6] = [8, 9, 13, 14, 15, 16];

/// Sampled k-hop positives and negatives against BFS distances on random
/// graphs of 20..=200 nodes until `min_pairs` pairs are checked. Returns
/// (pairs, graphs).
pub fn pairs_against_bfs(seed: u64, min_pairs: usize) -> (usize, usize) {
    let mut r = rng(seed);
    let (mut checked, mut graphs) = (0, 0);
    while checked < min_pairs {
        let n = r.random_range(20..=200);
        let m = r.random_range(n..3 * n);
        let g = random_graph(&mut r, n, m);
        let k = r.random_range(1..=3);
        let batch = sample_pairs(&g, k, 4, 1.0, &mut r);
        let mut dist: HashMap<u32, Vec<usize>> = HashMap::new();
        for &(a, b) in &batch.positives {
            let d = dist.entry(a).or_insert_with(|| bfs_distances(g.num_nodes(), &g.edges, a as usize));
            assert!(a != b && d[b as usize] <= k, "positive ({a},{b}) at distance {} > {k}", d[b as usize]);
            checked += 1;
        }
        for &(a, b) in &batch.negatives {
            let d = dist.entry(a).or_insert_with(|| bfs_distances(g.num_nodes(), &g.edges, a as usize));
            assert!(d[b as usize] > k, "negative ({a},{b}) at distance {} <= {k}", d[b as usize]);
            checked += 1;
        }
        graphs += 1;
    }
    (checked, graphs)
}

/// Largest weak component, component labels and surviving edges against
/// union-find on `graphs` sparse random graphs. Ties go to the component
/// holding the smallest account id.
pub fn wcc_against_union_find(seed: u64, graphs: usize) {
    let mut r = rng(seed);
    for _ in 0..graphs {
        let n = r.random_range(2..=150);
        // sparse graphs so that several components compete
        let m = r.random_range(1..=n);
        let g = random_graph(&mut r, n, m);
        let mut uf = UnionFind::new(g.num_nodes());
        for &(u, v) in &g.edges {
            uf.union(u as usize, v as usize);
        }
        let mut comps: HashMap<usize, BTreeSet<String>> = HashMap::new();
        for i in 0..g.num_nodes() {
            comps.entry(uf.find(i)).or_default().insert(g.node_ids[i].clone());
        }
        let best = comps
            .values()
            .max_by(|a, b| a.len().cmp(&b.len()).then_with(|| b.first().cmp(&a.first())))
            .unwrap();

        let w = largest_wcc(&g);
        let got: BTreeSet<String> = w.node_ids.iter().cloned().collect();
        assert_eq!(&got, best);

        let labels = weak_components(&g);
        for i in 0..g.num_nodes() {
            for j in 0..g.num_nodes() {
                assert_eq!(labels[i] == labels[j], uf.find(i) == uf.find(j));
            }
        }

        let d = bfs_distances(w.num_nodes(), &w.edges, 0);
        assert!(d.iter().all(|&x| x != usize::MAX), "filtered graph is not connected");
        let expected_edges: BTreeSet<(&str, &str)> = g
            .edges
            .iter()
            .map(|&(u, v)| (g.node_ids[u as usize].as_str(), g.node_ids[v as usize].as_str()))
            .filter(|(a, _)| best.contains(*a))
            .collect();
        let got_edges: BTreeSet<(&str, &str)> = w
            .edges
            .iter()
            .map(|&(u, v)| (w.node_ids[u as usize].as_str(), w.node_ids[v as usize].as_str()))
            .collect();
        assert_eq!(got_edges, expected_edges);
    }
}

fn assert_attrs_match(got: &[f64; N_ATTRS], want: &[f64; N_ATTRS], who: &str) {
    for c in INTEGER_COLUMNS {
        assert_eq!(got[c], want[c], "{who} column {c}");
    }
    for c in RATIO_COLUMNS {
        let scale = want[c].abs().max(f64::MIN_POSITIVE);
        assert!(
            (got[c] - want[c]).abs() / scale <= 1e-6 || got[c] == want[c],
            "{who} column {c}: {} vs {}",
            got[c],
            want[c]
        );
    }
}

/// Raw attribute rows of `sets` random transaction sets, before and after
/// the WCC filter, against per-node recomputation. Returns the number of
/// rows compared.
pub fn attributes_against_naive(seed: u64, sets: usize) -> usize {
    let mut r = rng(seed);
    let mut rows = 0;
    for _ in 0..sets {
        let n = r.random_range(2..=80);
        let m = r.random_range(1..=400);
        let txs = random_txs(&mut r, n, m);
        let g = build_graph(0, &txs).unwrap();
        let all: HashMap<&str, ()> = g.node_ids.iter().map(|s| (s.as_str(), ())).collect();
        for (i, id) in g.node_ids.iter().enumerate() {
            assert_attrs_match(&g.raw_attributes[i], &naive_attributes(&txs, id, &all), id);
            assert_eq!(g.raw_attributes[i][1] as usize, g.in_neighbors[i].len());
            assert_eq!(g.raw_attributes[i][2] as usize, g.out_neighbors[i].len());
            rows += 1;
        }

        let w = finalize_split(0, &txs).unwrap();
        let members: HashMap<&str, ()> = w.node_ids.iter().map(|s| (s.as_str(), ())).collect();
        for (i, id) in w.node_ids.iter().enumerate() {
            assert_attrs_match(&w.raw_attributes[i], &naive_attributes(&txs, id, &members), id);
            rows += 1;
        }
        let inside = txs
            .iter()
            .filter(|t| t.from_account != t.to_account)
            .filter(|t| members.contains_key(t.from_account.as_str()) && members.contains_key(t.to_account.as_str()))
            .count() as f64;
        let in_sum: f64 = w.raw_attributes.iter().map(|a| a[3]).sum();
        let out_sum: f64 = w.raw_attributes.iter().map(|a| a[4]).sum();
        assert_eq!(in_sum, inside);
        assert_eq!(out_sum, inside);
    }
    rows
}
