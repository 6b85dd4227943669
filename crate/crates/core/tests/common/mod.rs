#![allow(dead_code)]

pub mod oracle;

use std::collections::{HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use siege_core::config::RunConfig;
use siege_core::diff::{ParamSet, Tape, Tensor};
use siege_core::encoder::{encode_plan, ComputationPlan, EncoderState, FeatureSource, Mode};
use siege_core::graph::{build_graph, GraphSplit, N_ATTRS};
use siege_core::ingest::TransactionRecord;
use siege_core::pretext::{sample_pairs, spatial_loss, temporal_loss, PretextHeads, SpatialLossForm};
use siege_core::synth::SynthConfig;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tx(from: &str, to: &str, value: u128, ts: u64) -> TransactionRecord {
    TransactionRecord {
        block_number: ts,
        timestamp: ts,
        from_account: from.into(),
        to_account: to.into(),
        value,
        success: true,
        is_internal: false,
        from_is_contract: false,
        to_is_contract: false,
    }
}

/// Random transfers among `n_accounts` accounts, sorted by block. Includes
/// repeated pairs, self-transfers and contract flags.
pub fn random_txs<R: Rng>(rng: &mut R, n_accounts: usize, n_txs: usize) -> Vec<TransactionRecord> {
    let contract: Vec<bool> = (0..n_accounts).map(|_| rng.random_bool(0.1)).collect();
    let mut out: Vec<TransactionRecord> = (0..n_txs)
        .map(|_| {
            let a = rng.random_range(0..n_accounts);
            let b = if rng.random_bool(0.03) { a } else { rng.random_range(0..n_accounts) };
            let ts = rng.random_range(1_000..1_000 + 50_000u64);
            TransactionRecord {
                block_number: ts / 13,
                timestamp: ts,
                from_account: format!("0x{a:04x}"),
                to_account: format!("0x{b:04x}"),
                value: rng.random_range(1..1_000_000_000_000u128),
                success: true,
                is_internal: rng.random_bool(0.2),
                from_is_contract: contract[a],
                to_is_contract: contract[b],
            }
        })
        .collect();
    out.sort_by_key(|t| t.block_number);
    out
}

/// Random normalized graph (not WCC-filtered) with up to `n` nodes.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, m: usize) -> GraphSplit {
    let mut g = build_graph(0, &random_txs(rng, n, m)).unwrap();
    g.normalize();
    g
}

/// Undirected hop distances from `src`, `usize::MAX` if unreachable.
pub fn bfs_distances(n: usize, edges: &[(u32, u32)], src: usize) -> Vec<usize> {
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in edges {
        adj[u as usize].push(v as usize);
        adj[v as usize].push(u as usize);
    }
    let mut dist = vec![usize::MAX; n];
    dist[src] = 0;
    let mut q = VecDeque::from([src]);
    while let Some(u) = q.pop_front() {
        for &w in &adj[u] {
            if dist[w] == usize::MAX {
                dist[w] = dist[u] + 1;
                q.push_back(w);
            }
        }
    }
    dist
}

/// Generator settings small enough for debug-profile tests.
pub fn tiny_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        accounts_per_split: 400,
        txs_per_split: 3600,
        community_size: 20,
        ..SynthConfig::default()
    }
}

/// Run settings for quick end-to-end tests.
pub fn tiny_run() -> RunConfig {
    let mut c = RunConfig {
        hidden_dim: 16,
        epochs_spatial: 2,
        epochs_temporal: 1,
        ..RunConfig::default()
    };
    c.synth = tiny_synth(0);
    c
}

pub struct GradCase {
    pub graph: GraphSplit,
    pub encoder: EncoderState<f64>,
    pub heads: PretextHeads<f64>,
    pub prefix: Tensor<f64>,
    pub attrs: Tensor<f64>,
    pub plan: ComputationPlan,
    pub positives: Vec<(u32, u32)>,
    pub negatives: Vec<(u32, u32)>,
    pub temporal_rows: Vec<u32>,
    pub temporal_target: Tensor<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    Spatial(SpatialLossForm),
    Temporal,
}

/// Outcome of one finite-difference sweep.
#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub skipped_kinks: usize,
    /// Largest per-entry relative error.
    pub max_rel_error: f64,
    pub worst: String,
    /// Largest `‖a − n‖ / max(‖a‖, ‖n‖)` over parameter matrices.
    pub max_tensor_rel_error: f64,
}

impl GradCase {
    /// Random connected-ish graph of at most `max_nodes` nodes with random
    /// encoder, heads, handoff prefix and temporal targets.
    pub fn random<R: Rng>(rng: &mut R, max_nodes: usize, hidden: usize) -> Self {
        let n = rng.random_range(8..=max_nodes);
        let graph = random_graph(rng, n, 2 * n);
        let nodes = graph.num_nodes();
        let encoder = EncoderState::<f64>::new(hidden + N_ATTRS, hidden, [nodes, nodes], 0.0, rng);
        let mut heads = PretextHeads::<f64>::new(hidden, rng);
        heads
            .temporal
            .get_mut("temporal.b")
            .data_mut()
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-0.5..0.5));
        let prefix = Tensor::from_fn(nodes, hidden, |i, _| if i % 3 == 0 { 0.0 } else { rng.random_range(-1.0..1.0) });
        let attrs = graph.attributes.cast::<f64>();
        let targets: Vec<u32> = (0..nodes as u32).collect();
        let plan = ComputationPlan::build(&graph, &targets, None, rng);
        let batch = sample_pairs(&graph, 2, 3, 1.0, rng);
        let mut rows: Vec<u32> = (0..nodes as u32).collect();
        rows.shuffle(rng);
        rows.truncate((nodes / 2).max(1));
        let temporal_target = Tensor::from_fn(rows.len(), N_ATTRS, |_, _| rng.random_range(-2.0..2.0));
        Self {
            graph,
            encoder,
            heads,
            prefix,
            attrs,
            plan,
            positives: batch.positives,
            negatives: batch.negatives,
            temporal_rows: rows,
            temporal_target,
        }
    }

    /// Loss value and activation pattern; gradients accumulated into the
    /// parameter sets when `backward` is set.
    pub fn evaluate(&mut self, objective: Objective, backward: bool) -> (f64, Vec<bool>) {
        let mut tape = Tape::<f64>::new();
        let source = FeatureSource::Concat {
            prefix: &self.prefix,
            attrs: &self.attrs,
        };
        let z = encode_plan(&mut tape, source, &self.plan, &self.encoder, Mode::Eval, &mut rng(0)).unwrap();
        let loss = match objective {
            Objective::Spatial(form) => {
                spatial_loss(&mut tape, z, &self.heads, &self.positives, &self.negatives, form).unwrap()
            }
            Objective::Temporal => {
                let zt = tape.gather_rows(z, self.temporal_rows.clone()).unwrap();
                temporal_loss(&mut tape, zt, &self.heads, &self.temporal_target).unwrap()
            }
        };
        if backward {
            tape.backward_into(
                loss,
                &mut [&mut self.encoder.params, &mut self.heads.spatial, &mut self.heads.temporal],
            )
            .unwrap();
        }
        (tape.value(loss).item(), tape.activation_pattern())
    }

    fn param_set(&mut self, which: usize) -> &mut ParamSet<f64> {
        match which {
            0 => &mut self.encoder.params,
            1 => &mut self.heads.spatial,
            _ => &mut self.heads.temporal,
        }
    }

    /// Central differences with step `h` for every parameter entry the
    /// objective depends on. Coordinates whose perturbation crosses a relu
    /// or normalization kink are skipped. The relative error of an entry is
    /// `|a − n| / max(|a|, |n|, floor)`.
    pub fn check(&mut self, objective: Objective, h: f64, floor: f64) -> GradReport {
        for w in 0..3 {
            self.param_set(w).zero_grad();
        }
        let (_, base_pattern) = self.evaluate(objective, true);
        let mut analytic: Vec<(usize, String, Vec<f64>)> = Vec::new();
        for w in 0..3 {
            let set = self.param_set(w);
            for name in set.names().to_vec() {
                analytic.push((w, name.clone(), set.grad(&name).data().to_vec()));
            }
        }
        let mut report = GradReport::default();
        for (w, name, grad) in analytic {
            let used = match objective {
                Objective::Spatial(_) => !name.starts_with("temporal"),
                Objective::Temporal => !name.starts_with("spatial"),
            };
            if !used {
                assert!(grad.iter().all(|&g| g == 0.0), "{name} gets gradient from an unrelated loss");
                continue;
            }
            let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
            for (k, &a) in grad.iter().enumerate() {
                let orig = self.param_set(w).get(&name).data()[k];
                self.param_set(w).get_mut(&name).data_mut()[k] = orig + h;
                let (up, p_up) = self.evaluate(objective, false);
                self.param_set(w).get_mut(&name).data_mut()[k] = orig - h;
                let (down, p_down) = self.evaluate(objective, false);
                self.param_set(w).get_mut(&name).data_mut()[k] = orig;
                if p_up != base_pattern || p_down != base_pattern {
                    report.skipped_kinks += 1;
                    continue;
                }
                let numeric = (up - down) / (2.0 * h);
                diff2 += (a - numeric).powi(2);
                a2 += a * a;
                n2 += numeric * numeric;
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
                report.checked += 1;
                if rel > report.max_rel_error {
                    report.max_rel_error = rel;
                    report.worst = format!("{name}[{k}]: analytic {a:e}, numeric {numeric:e}");
                }
            }
            let scale = f64::max(a2, n2).sqrt();
            if scale > 0.0 {
                report.max_tensor_rel_error = report.max_tensor_rel_error.max(diff2.sqrt() / scale);
            }
        }
        report
    }
}

/// Per-node attribute recomputation written independently of the library:
/// one pass over the transactions per node.
pub fn naive_attributes(txs: &[TransactionRecord], id: &str, members: &HashMap<&str, ()>) -> [f64; N_ATTRS] {
    let relevant: Vec<&TransactionRecord> = txs
        .iter()
        .filter(|t| t.from_account != t.to_account)
        .filter(|t| members.contains_key(t.from_account.as_str()) && members.contains_key(t.to_account.as_str()))
        .collect();
    let ins: Vec<&&TransactionRecord> = relevant.iter().filter(|t| t.to_account == id).collect();
    let outs: Vec<&&TransactionRecord> = relevant.iter().filter(|t| t.from_account == id).collect();
    let contract = relevant
        .iter()
        .any(|t| (t.from_account == id && t.from_is_contract) || (t.to_account == id && t.to_is_contract));

    let counterparties = |list: &[&&TransactionRecord], inbound: bool| -> HashMap<String, usize> {
        let mut m = HashMap::new();
        for t in list {
            let other = if inbound { &t.from_account } else { &t.to_account };
            *m.entry(other.clone()).or_insert(0) += 1;
        }
        m
    };
    let cin = counterparties(&ins, true);
    let cout = counterparties(&outs, false);
    let sum = |list: &[&&TransactionRecord]| list.iter().map(|t| t.value).sum::<u128>();
    let span = |ts: Vec<u64>| match (ts.iter().min(), ts.iter().max()) {
        (Some(a), Some(b)) => (b - a) as f64,
        _ => 0.0,
    };
    let in_ts: Vec<u64> = ins.iter().map(|t| t.timestamp).collect();
    let out_ts: Vec<u64> = outs.iter().map(|t| t.timestamp).collect();
    let all_ts: Vec<u64> = in_ts.iter().chain(&out_ts).copied().collect();
    let (sin, sout) = (sum(&ins), sum(&outs));
    let mean = |s: u128, n: usize| if n == 0 { 0.0 } else { s as f64 / n as f64 };
    let freq = |n: usize, sp: f64| n as f64 / sp.max(1.0);
    let repeat = |m: &HashMap<String, usize>| {
        if m.is_empty() {
            0.0
        } else {
            m.values().filter(|&&c| c > 1).count() as f64 / m.len() as f64
        }
    };
    [
        if contract { 1.0 } else { 0.0 },
        cin.len() as f64,
        cout.len() as f64,
        ins.len() as f64,
        outs.len() as f64,
        (sin + sout) as f64,
        sin as f64,
        sout as f64,
        mean(sin, ins.len()),
        mean(sout, outs.len()),
        span(all_ts),
        span(in_ts.clone()),
        span(out_ts.clone()),
        freq(ins.len(), span(in_ts)),
        freq(outs.len(), span(out_ts)),
        repeat(&cin),
        repeat(&cout),
    ]
}

/// Components by union-find over an undirected edge list.
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.parent[r] != r {
            r = self.parent[r];
        }
        let mut c = x;
        while self.parent[c] != r {
            let next = self.parent[c];
            self.parent[c] = r;
            c = next;
        }
        r
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (big, small) = if self.size[ra] >= self.size[rb] { (ra, rb) } else { (rb, ra) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
    }
}
