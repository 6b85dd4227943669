//! Two-layer GraphSage encoder with mean aggregation over sampled,
//! direction-agnostic neighborhoods.
//!
//! Each layer computes `relu(h_v·W_self + mean(h_u : u ∈ N(v))·W_neigh + b)`;
//! an empty neighborhood contributes a zero mean. The second layer's output
//! is L2-normalized per row. Input rows may be plain attributes or the
//! incremental concatenation `[prev_embedding·P | attributes]`, where the
//! projection `P` is trained together with the encoder.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::Rng;

use crate::diff::{ParamSet, Real, RowSets, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{GraphSplit, N_ATTRS};

/// Parameter names, in checkpoint order.
pub const PARAM_NAMES: [&str; 7] = [
    "l1.self", "l1.neigh", "l1.bias", "l2.self", "l2.neigh", "l2.bias", "proj",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Encoder weights plus the handoff projection used to build concatenated
/// inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState<T = f32> {
    pub params: ParamSet<T>,
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Neighbor sample caps for layer 1 and layer 2 in training mode.
    pub fanouts: [usize; 2],
    pub dropout: f64,
}

/// Uniform Glorot initialization.
pub fn glorot<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| T::lit(rng.random_range(-limit..limit)))
}

impl<T: Real> EncoderState<T> {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dim: usize,
        fanouts: [usize; 2],
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let mut params = ParamSet::new();
        params.insert("l1.self", glorot(input_dim, hidden_dim, rng));
        params.insert("l1.neigh", glorot(input_dim, hidden_dim, rng));
        params.insert("l1.bias", Tensor::zeros(1, hidden_dim));
        params.insert("l2.self", glorot(hidden_dim, hidden_dim, rng));
        params.insert("l2.neigh", glorot(hidden_dim, hidden_dim, rng));
        params.insert("l2.bias", Tensor::zeros(1, hidden_dim));
        params.insert("proj", glorot(hidden_dim, hidden_dim, rng));
        Self {
            params,
            input_dim,
            hidden_dim,
            fanouts,
            dropout,
        }
    }

    /// Rebuilds an encoder around checkpointed parameters.
    pub fn from_params(params: ParamSet<T>, fanouts: [usize; 2], dropout: f64) -> Result<Self> {
        for name in PARAM_NAMES {
            if params.index(name).is_none() {
                return Err(Error::Checkpoint(format!("missing parameter {name:?}")));
            }
        }
        let input_dim = params.get("l1.self").rows();
        let hidden_dim = params.get("l1.self").cols();
        Ok(Self {
            params,
            input_dim,
            hidden_dim,
            fanouts,
            dropout,
        })
    }

    /// Grows layer 1 from attribute-only inputs to concatenated inputs of
    /// width `hidden_dim + attr_dim`: the attribute-facing rows keep their
    /// trained values and the new embedding-facing rows are freshly drawn.
    pub fn widen_for_concat<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        if self.input_dim == self.hidden_dim + N_ATTRS {
            return Ok(());
        }
        if self.input_dim != N_ATTRS {
            return Err(Error::Shape {
                op: "widen_for_concat",
                detail: format!("input width {} is neither attributes nor concat", self.input_dim),
            });
        }
        let new_dim = self.hidden_dim + N_ATTRS;
        for name in ["l1.self", "l1.neigh"] {
            let fresh: Tensor<T> = glorot(new_dim, self.hidden_dim, rng);
            let old = self.params.get(name).clone();
            let widened = Tensor::from_fn(new_dim, self.hidden_dim, |i, j| {
                if i < self.hidden_dim {
                    fresh.get(i, j)
                } else {
                    old.get(i - self.hidden_dim, j)
                }
            });
            self.params.insert(name, widened);
        }
        self.input_dim = new_dim;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> EncoderState<U> {
        EncoderState {
            params: self.params.cast(),
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            fanouts: self.fanouts,
            dropout: self.dropout,
        }
    }
}

/// Where layer-0 rows come from.
#[derive(Debug, Clone, Copy)]
pub enum FeatureSource<'a, T> {
    /// Fixed input rows, one per node.
    Plain(&'a Tensor<T>),
    /// `[prefix·proj | attrs]`, with `prefix` holding the previous split's
    /// embedding for overlap nodes and zeros elsewhere.
    Concat {
        prefix: &'a Tensor<T>,
        attrs: &'a Tensor<T>,
    },
}

impl<T: Real> FeatureSource<'_, T> {
    fn width(&self) -> usize {
        match self {
            FeatureSource::Plain(x) => x.cols(),
            FeatureSource::Concat { prefix, attrs } => prefix.cols() + attrs.cols(),
        }
    }

    fn rows(&self) -> usize {
        match self {
            FeatureSource::Plain(x) => x.rows(),
            FeatureSource::Concat { attrs, .. } => attrs.rows(),
        }
    }
}

/// Up to `fanout` distinct neighbors of `node` (in- and out-neighbors
/// alike), drawn uniformly without replacement and returned sorted. Nodes
/// with at most `fanout` neighbors return all of them.
pub fn sample_neighbors<R: Rng + ?Sized>(
    graph: &GraphSplit,
    node: u32,
    fanout: usize,
    rng: &mut R,
) -> Vec<u32> {
    let all = &graph.neighbors[node as usize];
    if all.len() <= fanout {
        return all.clone();
    }
    let mut picked: Vec<u32> = sample(rng, all.len(), fanout)
        .into_iter()
        .map(|i| all[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Node sets touched by one two-layer forward pass.
#[derive(Debug, Clone)]
pub struct ComputationPlan {
    /// Layer-0 nodes; starts with all of `layer1`.
    pub layer0: Vec<u32>,
    /// Layer-1 nodes; starts with all targets.
    pub layer1: Vec<u32>,
    pub targets: Vec<u32>,
    agg1: RowSets,
    agg2: RowSets,
}

struct Positions {
    nodes: Vec<u32>,
    pos: HashMap<u32, u32>,
}

impl Positions {
    fn new(seed: &[u32]) -> Self {
        let mut p = Positions {
            nodes: Vec::with_capacity(seed.len()),
            pos: HashMap::with_capacity(seed.len()),
        };
        for &v in seed {
            p.insert(v);
        }
        p
    }

    fn insert(&mut self, v: u32) -> u32 {
        let next = self.nodes.len() as u32;
        *self.pos.entry(v).or_insert_with(|| {
            self.nodes.push(v);
            next
        })
    }
}

impl ComputationPlan {
    /// Samples neighborhoods for `targets` (which must be distinct).
    /// `fanouts = None` uses full neighborhoods.
    pub fn build<R: Rng + ?Sized>(
        graph: &GraphSplit,
        targets: &[u32],
        fanouts: Option<[usize; 2]>,
        rng: &mut R,
    ) -> Self {
        let mut draw = |v: u32, layer: usize| match fanouts {
            Some(f) => sample_neighbors(graph, v, f[layer], rng),
            None => graph.neighbors[v as usize].clone(),
        };

        let mut l1 = Positions::new(targets);
        let mut lists2 = Vec::with_capacity(targets.len());
        for &t in targets {
            let nbrs = draw(t, 1);
            lists2.push(nbrs.iter().map(|&u| l1.insert(u)).collect::<Vec<_>>());
        }
        let mut l0 = Positions::new(&l1.nodes);
        let mut lists1 = Vec::with_capacity(l1.nodes.len());
        for &u in &l1.nodes {
            let nbrs = draw(u, 0);
            lists1.push(nbrs.iter().map(|&w| l0.insert(w)).collect::<Vec<_>>());
        }
        ComputationPlan {
            layer0: l0.nodes,
            layer1: l1.nodes,
            targets: targets.to_vec(),
            agg1: RowSets::from_lists(&lists1),
            agg2: RowSets::from_lists(&lists2),
        }
    }
}

fn gather_inputs<T: Real>(
    tape: &mut Tape<T>,
    source: FeatureSource<'_, T>,
    state: &EncoderState<T>,
    rows: &[u32],
) -> Result<Var> {
    match source {
        FeatureSource::Plain(x) => tape.input(x.select_rows(rows)),
        FeatureSource::Concat { prefix, attrs } => {
            let p = tape.input(prefix.select_rows(rows))?;
            let w = tape.param(&state.params, "proj")?;
            let projected = tape.matmul(p, w)?;
            let a = tape.input(attrs.select_rows(rows))?;
            tape.concat_cols(projected, a)
        }
    }
}

fn sage_layer<T: Real>(
    tape: &mut Tape<T>,
    state: &EncoderState<T>,
    layer: &str,
    input: Var,
    n_out: usize,
    agg: RowSets,
) -> Result<Var> {
    let w_self = tape.param(&state.params, &format!("{layer}.self"))?;
    let w_neigh = tape.param(&state.params, &format!("{layer}.neigh"))?;
    let bias = tape.param(&state.params, &format!("{layer}.bias"))?;
    let own = tape.gather_rows(input, (0..n_out as u32).collect())?;
    let mean = tape.mean_rows(input, agg)?;
    let a = tape.matmul(own, w_self)?;
    let b = tape.matmul(mean, w_neigh)?;
    let s = tape.add(a, b)?;
    let s = tape.add_bias(s, bias)?;
    tape.relu(s)
}

/// Records the encoder forward pass for `plan` on `tape`, returning the
/// `targets × hidden_dim` embedding rows.
pub fn encode_plan<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    source: FeatureSource<'_, T>,
    plan: &ComputationPlan,
    state: &EncoderState<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    if source.width() != state.input_dim {
        return Err(Error::Shape {
            op: "encode",
            detail: format!("feature width {} but encoder expects {}", source.width(), state.input_dim),
        });
    }
    let training = mode == Mode::Train;
    let x0 = gather_inputs(tape, source, state, &plan.layer0)?;
    let x0 = tape.dropout(x0, state.dropout, training, rng)?;
    let h1 = sage_layer(tape, state, "l1", x0, plan.layer1.len(), plan.agg1.clone())?;
    let h1 = tape.dropout(h1, state.dropout, training, rng)?;
    let h2 = sage_layer(tape, state, "l2", h1, plan.targets.len(), plan.agg2.clone())?;
    tape.l2_normalize_rows(h2)
}

/// Embeds `nodes` (distinct indices). Training mode samples neighborhoods
/// with the state's fanouts and applies dropout; eval mode uses full
/// neighborhoods and no dropout.
pub fn encode<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    graph: &GraphSplit,
    source: FeatureSource<'_, T>,
    nodes: &[u32],
    state: &EncoderState<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    if source.rows() != graph.num_nodes() {
        return Err(Error::Shape {
            op: "encode",
            detail: format!("{} feature rows for {} nodes", source.rows(), graph.num_nodes()),
        });
    }
    let fanouts = (mode == Mode::Train).then_some(state.fanouts);
    let plan = ComputationPlan::build(graph, nodes, fanouts, rng);
    encode_plan(tape, source, &plan, state, mode, rng)
}

/// Per-node embeddings of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub split_index: usize,
    pub node_ids: Vec<String>,
    pub embeddings: Tensor<f32>,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.embeddings.row(i)
    }

    /// `emb.f32` (row-major little-endian floats) and `nodes.txt`.
    pub fn to_files(&self) -> (Vec<u8>, String) {
        let emb = self.embeddings.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        let mut nodes = String::new();
        for id in &self.node_ids {
            nodes.push_str(id);
            nodes.push('\n');
        }
        (emb, nodes)
    }

    pub fn from_files(split_index: usize, emb: &[u8], nodes: &str) -> Result<Self> {
        let node_ids: Vec<String> = nodes.lines().map(str::to_string).collect();
        let data: Vec<f32> = emb
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if node_ids.is_empty() || data.len() % node_ids.len() != 0 {
            return Err(Error::InvalidInput("embedding file does not match node list".into()));
        }
        let dim = data.len() / node_ids.len();
        Ok(Self {
            split_index,
            embeddings: Tensor::new(node_ids.len(), dim, data)?,
            node_ids,
        })
    }
}

/// Eval-mode embeddings for every node of `graph`, using full neighborhoods.
pub fn embed_split(
    graph: &GraphSplit,
    source: FeatureSource<'_, f32>,
    state: &EncoderState<f32>,
) -> Result<EmbeddingTable> {
    let nodes: Vec<u32> = (0..graph.num_nodes() as u32).collect();
    let mut tape = Tape::new();
    // eval mode draws nothing from the rng
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let z = encode(&mut tape, graph, source, &nodes, state, Mode::Eval, &mut rng)?;
    Ok(EmbeddingTable {
        split_index: graph.split_index,
        node_ids: graph.node_ids.clone(),
        embeddings: tape.value(z).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ring(n: usize) -> GraphSplit {
        let ids = (0..n).map(|i| format!("n{i}")).collect();
        let edges = (0..n as u32).map(|i| (i, (i + 1) % n as u32));
        GraphSplit::from_parts(0, ids, edges, vec![[0.0; N_ATTRS]; n]).unwrap()
    }

    fn star(leaves: usize) -> GraphSplit {
        let ids = (0..=leaves).map(|i| format!("s{i}")).collect();
        let edges = (1..=leaves as u32).map(|i| (0, i));
        GraphSplit::from_parts(0, ids, edges, vec![[0.0; N_ATTRS]; leaves + 1]).unwrap()
    }

    #[test]
    fn small_degree_returns_all_neighbors() {
        let g = star(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_neighbors(&g, 0, 10, &mut rng), vec![1, 2, 3]);
    }

    #[test]
    fn isolated_node_has_no_sample() {
        let g = GraphSplit::from_parts(0, vec!["a".into()], std::iter::empty(), vec![[0.0; N_ATTRS]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_neighbors(&g, 0, 10, &mut rng).is_empty());
    }

    #[test]
    fn fanout_caps_distinct_samples() {
        let g = star(100);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_neighbors(&g, 0, 10, &mut rng);
        assert_eq!(s.len(), 10);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn zero_weights_give_zero_embeddings() {
        let g = ring(5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut state = EncoderState::<f32>::new(N_ATTRS, 8, [10, 10], 0.5, &mut rng);
        for t in state.params.values_mut() {
            t.fill(0.0);
        }
        let x = Tensor::from_fn(5, N_ATTRS, |i, j| (i + j) as f32);
        let table = embed_split(&g, FeatureSource::Plain(&x), &state).unwrap();
        assert!(table.embeddings.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let g = ring(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let state = EncoderState::<f32>::new(N_ATTRS + 8, 8, [10, 10], 0.5, &mut rng);
        let x = Tensor::zeros(4, N_ATTRS);
        assert!(matches!(
            embed_split(&g, FeatureSource::Plain(&x), &state),
            Err(Error::Shape { op: "encode", .. })
        ));
    }

    #[test]
    fn single_node_identity_forward() {
        // one node, no neighbors, W_self = identity-like, W_neigh = 0, no bias
        let g = GraphSplit::from_parts(0, vec!["a".into()], std::iter::empty(), vec![[0.0; N_ATTRS]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let hidden = N_ATTRS;
        let mut state = EncoderState::<f64>::new(N_ATTRS, hidden, [10, 10], 0.5, &mut rng);
        let eye = Tensor::from_fn(hidden, hidden, |i, j| if i == j { 1.0 } else { 0.0 });
        *state.params.get_mut("l1.self") = eye.clone();
        *state.params.get_mut("l2.self") = eye;
        state.params.get_mut("l1.neigh").fill(0.0);
        state.params.get_mut("l2.neigh").fill(0.0);
        let feat: Vec<f64> = (0..N_ATTRS).map(|j| j as f64 - 8.0).collect();
        let x = Tensor::new(1, N_ATTRS, feat.clone()).unwrap();
        let mut tape = Tape::new();
        let z = encode(&mut tape, &g, FeatureSource::Plain(&x), &[0], &state, Mode::Eval, &mut rng).unwrap();
        let relu: Vec<f64> = feat.iter().map(|v| v.max(0.0)).collect();
        let norm = relu.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (got, want) in tape.value(z).data().iter().zip(relu.iter().map(|v| v / norm)) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn widening_keeps_attribute_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut state = EncoderState::<f32>::new(N_ATTRS, 8, [10, 10], 0.5, &mut rng);
        let before = state.params.get("l1.self").clone();
        state.widen_for_concat(&mut rng).unwrap();
        let after = state.params.get("l1.self");
        assert_eq!(after.shape(), (8 + N_ATTRS, 8));
        for i in 0..N_ATTRS {
            assert_eq!(after.row(8 + i), before.row(i));
        }
        assert_eq!(state.input_dim, 8 + N_ATTRS);
    }

    #[test]
    fn embedding_table_files_roundtrip() {
        let t = EmbeddingTable {
            split_index: 1,
            node_ids: vec!["a".into(), "b".into()],
            embeddings: Tensor::from_fn(2, 3, |i, j| (i * 3 + j) as f32),
        };
        let (emb, nodes) = t.to_files();
        assert_eq!(EmbeddingTable::from_files(1, &emb, &nodes).unwrap(), t);
    }
}
