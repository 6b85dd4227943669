//! Per-split transaction graphs: construction, node attributes, largest
//! weakly connected component and cross-split account overlap.

mod features;
pub mod io;

use std::collections::{HashMap, VecDeque};

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::ingest::TransactionRecord;

pub use features::{
    compute_node_attributes, normalize_attributes, NormStats, RawAttributes, LOG_COLUMNS,
    N_ATTRS,
};

/// One temporal slice of the transaction stream as a directed single-edge
/// graph with node attributes.
#[derive(Debug, Clone)]
pub struct GraphSplit {
    pub split_index: usize,
    pub node_ids: Vec<String>,
    /// Sorted, deduplicated directed edges without self-loops.
    pub edges: Vec<(u32, u32)>,
    pub in_neighbors: Vec<Vec<u32>>,
    pub out_neighbors: Vec<Vec<u32>>,
    /// Sorted union of in- and out-neighbors.
    pub neighbors: Vec<Vec<u32>>,
    pub raw_attributes: Vec<RawAttributes>,
    /// Normalized attributes, `n × 17`. All zeros until [`GraphSplit::normalize`].
    pub attributes: Tensor<f32>,
    pub norm: Option<NormStats>,
    index: HashMap<String, u32>,
}

impl GraphSplit {
    /// Assembles a split from its parts, deriving adjacency lists.
    pub fn from_parts(
        split_index: usize,
        node_ids: Vec<String>,
        edges: impl IntoIterator<Item = (u32, u32)>,
        raw_attributes: Vec<RawAttributes>,
    ) -> Result<Self> {
        let n = node_ids.len();
        if raw_attributes.len() != n {
            return Err(Error::InvalidInput(format!(
                "{} attribute rows for {n} nodes",
                raw_attributes.len()
            )));
        }
        let mut edges: Vec<(u32, u32)> = edges.into_iter().filter(|(u, v)| u != v).collect();
        edges.sort_unstable();
        edges.dedup();
        if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| u as usize >= n || v as usize >= n) {
            return Err(Error::InvalidInput(format!("edge ({u},{v}) out of range for {n} nodes")));
        }
        let mut in_neighbors = vec![Vec::new(); n];
        let mut out_neighbors = vec![Vec::new(); n];
        for &(u, v) in &edges {
            out_neighbors[u as usize].push(v);
            in_neighbors[v as usize].push(u);
        }
        in_neighbors.iter_mut().for_each(|l| l.sort_unstable());
        let neighbors = (0..n)
            .map(|i| {
                let mut l: Vec<u32> = in_neighbors[i].iter().chain(&out_neighbors[i]).copied().collect();
                l.sort_unstable();
                l.dedup();
                l
            })
            .collect();
        let index = node_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect::<HashMap<_, _>>();
        if index.len() != n {
            return Err(Error::InvalidInput("duplicate account ids".into()));
        }
        Ok(Self {
            split_index,
            node_ids,
            edges,
            in_neighbors,
            out_neighbors,
            neighbors,
            raw_attributes,
            attributes: Tensor::zeros(n, N_ATTRS),
            norm: None,
            index,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn index_of(&self, account: &str) -> Option<u32> {
        self.index.get(account).copied()
    }

    /// Log-transforms and standardizes the raw attributes into `attributes`.
    pub fn normalize(&mut self) {
        let (normalized, stats) = normalize_attributes(&self.raw_attributes);
        let data = normalized
            .iter()
            .flat_map(|r| r.iter().map(|&v| v as f32))
            .collect();
        self.attributes = Tensor::new(self.num_nodes(), N_ATTRS, data).expect("shape");
        self.norm = Some(stats);
    }
}

/// Builds the directed single-edge graph of one transaction group, with raw
/// attributes but before WCC filtering and normalization.
pub fn build_graph(split_index: usize, txs: &[TransactionRecord]) -> Result<GraphSplit> {
    if txs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "split {split_index} has no transactions"
        )));
    }
    let mut index: HashMap<&str, u32> = HashMap::new();
    let mut node_ids: Vec<String> = Vec::new();
    let mut edges = Vec::with_capacity(txs.len());
    for t in txs {
        let mut ends = [0u32; 2];
        for (slot, id) in ends.iter_mut().zip([t.from_account.as_str(), t.to_account.as_str()]) {
            *slot = *index.entry(id).or_insert_with(|| {
                node_ids.push(id.to_string());
                (node_ids.len() - 1) as u32
            });
        }
        edges.push((ends[0], ends[1]));
    }
    let raw = compute_node_attributes(txs, &node_ids);
    GraphSplit::from_parts(split_index, node_ids, edges, raw)
}

/// Restricts `graph` to the node subset `keep` (any order), preserving the
/// relative order of surviving nodes.
pub fn induced_subgraph(graph: &GraphSplit, keep: &[u32]) -> GraphSplit {
    let mut keep = keep.to_vec();
    keep.sort_unstable();
    keep.dedup();
    let mut remap = vec![u32::MAX; graph.num_nodes()];
    for (new, &old) in keep.iter().enumerate() {
        remap[old as usize] = new as u32;
    }
    let node_ids = keep.iter().map(|&i| graph.node_ids[i as usize].clone()).collect();
    let raw = keep.iter().map(|&i| graph.raw_attributes[i as usize]).collect();
    let edges: Vec<(u32, u32)> = graph
        .edges
        .iter()
        .filter_map(|&(u, v)| {
            let (a, b) = (remap[u as usize], remap[v as usize]);
            (a != u32::MAX && b != u32::MAX).then_some((a, b))
        })
        .collect();
    let mut sub = GraphSplit::from_parts(graph.split_index, node_ids, edges, raw)
        .expect("subgraph of a valid graph is valid");
    if graph.norm.is_some() {
        sub.attributes = graph.attributes.select_rows(&keep);
        sub.norm = graph.norm.clone();
    }
    sub
}

/// Weakly connected components by breadth-first search over the undirected
/// neighbor lists. Returns one component label per node.
pub fn weak_components(graph: &GraphSplit) -> Vec<u32> {
    let n = graph.num_nodes();
    let mut label = vec![u32::MAX; n];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for s in 0..n {
        if label[s] != u32::MAX {
            continue;
        }
        label[s] = next;
        queue.push_back(s as u32);
        while let Some(u) = queue.pop_front() {
            for &v in &graph.neighbors[u as usize] {
                if label[v as usize] == u32::MAX {
                    label[v as usize] = next;
                    queue.push_back(v);
                }
            }
        }
        next += 1;
    }
    label
}

/// Induced subgraph on the largest weakly connected component. Among equally
/// large components the one holding the lexicographically smallest account
/// id wins.
pub fn largest_wcc(graph: &GraphSplit) -> GraphSplit {
    let label = weak_components(graph);
    let n_comp = label.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut size = vec![0usize; n_comp];
    let mut min_id: Vec<Option<&str>> = vec![None; n_comp];
    for (i, &l) in label.iter().enumerate() {
        let l = l as usize;
        size[l] += 1;
        let id = graph.node_ids[i].as_str();
        if min_id[l].is_none_or(|m| id < m) {
            min_id[l] = Some(id);
        }
    }
    let best = (0..n_comp).min_by(|&a, &b| {
        size[b]
            .cmp(&size[a])
            .then_with(|| min_id[a].cmp(&min_id[b]))
    });
    let Some(best) = best else {
        return graph.clone();
    };
    let keep: Vec<u32> = (0..graph.num_nodes() as u32)
        .filter(|&i| label[i as usize] as usize == best)
        .collect();
    induced_subgraph(graph, &keep)
}

/// Build, restrict to the largest WCC, and normalize attributes.
pub fn finalize_split(split_index: usize, txs: &[TransactionRecord]) -> Result<GraphSplit> {
    let g = build_graph(split_index, txs)?;
    let mut g = largest_wcc(&g);
    g.normalize();
    Ok(g)
}

/// Accounts present in two splits, as `(index in first, index in second)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OverlapSet {
    pub split_index: usize,
    pub pairs: Vec<(u32, u32)>,
}

impl OverlapSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Overlap between `current` and `next`, and its size relative to the node
/// count of `current`.
pub fn compute_overlap(current: &GraphSplit, next: &GraphSplit) -> (OverlapSet, f64) {
    let pairs: Vec<(u32, u32)> = current
        .node_ids
        .iter()
        .enumerate()
        .filter_map(|(i, id)| next.index_of(id).map(|j| (i as u32, j)))
        .collect();
    let ratio = if current.num_nodes() == 0 {
        0.0
    } else {
        pairs.len() as f64 / current.num_nodes() as f64
    };
    (
        OverlapSet {
            split_index: current.split_index,
            pairs,
        },
        ratio,
    )
}
