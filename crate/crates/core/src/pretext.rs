//! Self-supervised objectives: the spatial k-hop similarity loss and the
//! temporal overlap-regression loss, plus the per-split training loop.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diff::{AdamState, ParamSet, Real, Tape, Tensor, Var};
use crate::encoder::{encode, glorot, EncoderState, FeatureSource, Mode};
use crate::error::{Error, Result};
use crate::graph::{GraphSplit, N_ATTRS};

/// Retries allowed per needed negative before giving up on it.
pub const NEGATIVE_RETRIES: usize = 50;

/// Undirected `≤ k`-hop balls of every node, each sorted and excluding the
/// node itself.
#[derive(Debug, Clone)]
pub struct KHopIndex {
    pub k: usize,
    balls: Vec<Vec<u32>>,
}

/// Nodes within `k` undirected hops of `src`, sorted, excluding `src`.
pub fn khop_ball(graph: &GraphSplit, src: u32, k: usize) -> Vec<u32> {
    let mut dist: HashMap<u32, usize> = HashMap::new();
    dist.insert(src, 0);
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        let d = dist[&u];
        if d == k {
            continue;
        }
        for &w in &graph.neighbors[u as usize] {
            if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(w) {
                e.insert(d + 1);
                queue.push_back(w);
            }
        }
    }
    let mut ball: Vec<u32> = dist.into_keys().filter(|&v| v != src).collect();
    ball.sort_unstable();
    ball
}

impl KHopIndex {
    pub fn new(graph: &GraphSplit, k: usize) -> Self {
        let balls = (0..graph.num_nodes() as u32)
            .into_par_iter()
            .map(|v| khop_ball(graph, v, k))
            .collect();
        Self { k, balls }
    }

    pub fn ball(&self, v: u32) -> &[u32] {
        &self.balls[v as usize]
    }

    pub fn within(&self, a: u32, b: u32) -> bool {
        a == b || self.balls[a as usize].binary_search(&b).is_ok()
    }

    pub fn num_nodes(&self) -> usize {
        self.balls.len()
    }
}

/// Positive and negative node pairs for the spatial objective.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairBatch {
    pub positives: Vec<(u32, u32)>,
    pub negatives: Vec<(u32, u32)>,
    /// Negatives that could not be found within the retry budget.
    pub missing_negatives: usize,
}

/// Pairs for the given anchors. Each anchor gets up to `per_node_pos`
/// distinct positives from its k-hop ball and `round(neg_ratio · positives)`
/// negatives drawn uniformly from the split and rejected when within k hops.
pub fn sample_pairs_for<R: Rng + ?Sized>(
    index: &KHopIndex,
    anchors: &[u32],
    per_node_pos: usize,
    neg_ratio: f64,
    rng: &mut R,
) -> PairBatch {
    let n = index.num_nodes();
    let mut batch = PairBatch::default();
    for &a in anchors {
        let ball = index.ball(a);
        if ball.is_empty() {
            continue;
        }
        let take = per_node_pos.min(ball.len());
        for i in sample(rng, ball.len(), take) {
            batch.positives.push((a, ball[i]));
        }
        let need = (neg_ratio * take as f64).round() as usize;
        for _ in 0..need {
            let found = (0..NEGATIVE_RETRIES)
                .map(|_| rng.random_range(0..n) as u32)
                .find(|&c| !index.within(a, c));
            match found {
                Some(c) => batch.negatives.push((a, c)),
                None => batch.missing_negatives += 1,
            }
        }
    }
    batch
}

/// Pairs with every node of `graph` as an anchor.
pub fn sample_pairs<R: Rng + ?Sized>(
    graph: &GraphSplit,
    k: usize,
    per_node_pos: usize,
    neg_ratio: f64,
    rng: &mut R,
) -> PairBatch {
    let index = KHopIndex::new(graph, k);
    let anchors: Vec<u32> = (0..graph.num_nodes() as u32).collect();
    sample_pairs_for(&index, &anchors, per_node_pos, neg_ratio, rng)
}

/// Projection heads applied before each loss. They live only during
/// pretraining.
#[derive(Debug, Clone, PartialEq)]
pub struct PretextHeads<T = f32> {
    /// `spatial.w`: hidden → hidden, no bias.
    pub spatial: ParamSet<T>,
    /// `temporal.w`, `temporal.b`: hidden → 17.
    pub temporal: ParamSet<T>,
}

impl<T: Real> PretextHeads<T> {
    pub fn new<R: Rng + ?Sized>(hidden_dim: usize, rng: &mut R) -> Self {
        let mut spatial = ParamSet::new();
        spatial.insert("spatial.w", glorot(hidden_dim, hidden_dim, rng));
        let mut temporal = ParamSet::new();
        temporal.insert("temporal.w", glorot(hidden_dim, N_ATTRS, rng));
        temporal.insert("temporal.b", Tensor::zeros(1, N_ATTRS));
        Self { spatial, temporal }
    }

    pub fn cast<U: Real>(&self) -> PretextHeads<U> {
        PretextHeads {
            spatial: self.spatial.cast(),
            temporal: self.temporal.cast(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpatialLossForm {
    /// `−mean σ(s⁺) + mean σ(s⁻)`.
    Raw,
    /// `−mean log σ(s⁺) − mean log σ(−s⁻)`.
    Log,
}

impl FromStr for SpatialLossForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Self::Raw),
            "log" => Ok(Self::Log),
            other => Err(Error::Config(format!("unknown spatial loss form {other:?}"))),
        }
    }
}

impl fmt::Display for SpatialLossForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Raw => "raw",
            Self::Log => "log",
        })
    }
}

fn pair_scores<T: Real>(tape: &mut Tape<T>, h: Var, pairs: &[(u32, u32)]) -> Result<Var> {
    let a = tape.gather_rows(h, pairs.iter().map(|p| p.0).collect())?;
    let b = tape.gather_rows(h, pairs.iter().map(|p| p.1).collect())?;
    tape.row_dot(a, b)
}

/// Spatial loss over rows of `z`; pair indices refer to rows of `z`.
pub fn spatial_loss<T: Real>(
    tape: &mut Tape<T>,
    z: Var,
    heads: &PretextHeads<T>,
    positives: &[(u32, u32)],
    negatives: &[(u32, u32)],
    form: SpatialLossForm,
) -> Result<Var> {
    if positives.is_empty() {
        return Err(Error::EmptyPositives);
    }
    let w = tape.param(&heads.spatial, "spatial.w")?;
    let h = tape.matmul(z, w)?;
    let sp = pair_scores(tape, h, positives)?;
    let pos = match form {
        SpatialLossForm::Raw => tape.sigmoid(sp)?,
        SpatialLossForm::Log => tape.log_sigmoid(sp)?,
    };
    let pos = tape.mean(pos)?;
    let mut loss = tape.scale(pos, -T::one())?;
    if !negatives.is_empty() {
        let sn = pair_scores(tape, h, negatives)?;
        let neg = match form {
            SpatialLossForm::Raw => tape.sigmoid(sn)?,
            SpatialLossForm::Log => {
                let flipped = tape.scale(sn, -T::one())?;
                let l = tape.log_sigmoid(flipped)?;
                tape.scale(l, -T::one())?
            }
        };
        let neg = tape.mean(neg)?;
        loss = tape.add(loss, neg)?;
    }
    Ok(loss)
}

/// Temporal loss: mean squared distance between the temporal head's output
/// on the rows of `z` and `target` (same row order).
pub fn temporal_loss<T: Real>(
    tape: &mut Tape<T>,
    z: Var,
    heads: &PretextHeads<T>,
    target: &Tensor<T>,
) -> Result<Var> {
    if tape.value(z).rows() == 0 {
        return Err(Error::EmptyOverlap);
    }
    let w = tape.param(&heads.temporal, "temporal.w")?;
    let b = tape.param(&heads.temporal, "temporal.b")?;
    let p = tape.matmul(z, w)?;
    let p = tape.add_bias(p, b)?;
    let t = tape.input(target.clone())?;
    tape.mse(p, t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub k: usize,
    pub per_node_pos: usize,
    pub neg_ratio: f64,
    pub epochs_spatial: usize,
    pub epochs_temporal: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub spatial_loss_form: SpatialLossForm,
    pub spatial: bool,
    pub temporal: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            k: 2,
            per_node_pos: 5,
            neg_ratio: 1.0,
            epochs_spatial: 10,
            epochs_temporal: 5,
            batch_size: 512,
            lr: 0.001,
            spatial_loss_form: SpatialLossForm::Raw,
            spatial: true,
            temporal: true,
        }
    }
}

/// Overlap nodes of the current split and their next-split normalized
/// attributes, row-aligned.
#[derive(Debug, Clone, Copy)]
pub struct TemporalTarget<'a, T> {
    pub nodes: &'a [u32],
    pub attrs: &'a Tensor<T>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainStats {
    pub spatial_epoch_loss: Vec<f64>,
    pub temporal_epoch_loss: Vec<f64>,
    pub steps: usize,
    pub missing_negatives: usize,
}

struct Optimizers<T> {
    encoder: AdamState<T>,
    spatial: AdamState<T>,
    temporal: AdamState<T>,
}

fn apply<T: Real>(
    tape: &Tape<T>,
    loss: Var,
    encoder: &mut EncoderState<T>,
    head: &mut ParamSet<T>,
    enc_opt: &mut AdamState<T>,
    head_opt: &mut AdamState<T>,
) -> Result<f64> {
    encoder.params.zero_grad();
    head.zero_grad();
    tape.backward_into(loss, &mut [&mut encoder.params, &mut *head])?;
    enc_opt.step(&mut encoder.params)?;
    head_opt.step(head)?;
    Ok(tape.value(loss).item().to_f64().unwrap())
}

/// Trains `encoder` and `heads` on one split: the spatial phase first, then
/// the temporal phase when `target` is present and non-empty. Adam moments
/// start fresh.
pub fn pretrain_split<T: Real, R: Rng + ?Sized>(
    graph: &GraphSplit,
    source: FeatureSource<'_, T>,
    encoder: &mut EncoderState<T>,
    heads: &mut PretextHeads<T>,
    target: Option<TemporalTarget<'_, T>>,
    cfg: &PretrainConfig,
    rng: &mut R,
) -> Result<PretrainStats> {
    let mut opt = Optimizers {
        encoder: AdamState::new(&encoder.params, cfg.lr),
        spatial: AdamState::new(&heads.spatial, cfg.lr),
        temporal: AdamState::new(&heads.temporal, cfg.lr),
    };
    let mut stats = PretrainStats::default();
    let batch_size = cfg.batch_size.max(1);

    if cfg.spatial && cfg.epochs_spatial > 0 && graph.num_nodes() > 0 {
        let index = KHopIndex::new(graph, cfg.k);
        let mut order: Vec<u32> = (0..graph.num_nodes() as u32).collect();
        for _ in 0..cfg.epochs_spatial {
            order.shuffle(rng);
            let (mut sum, mut count) = (0.0, 0usize);
            for anchors in order.chunks(batch_size) {
                let pairs = sample_pairs_for(&index, anchors, cfg.per_node_pos, cfg.neg_ratio, rng);
                stats.missing_negatives += pairs.missing_negatives;
                if pairs.positives.is_empty() {
                    continue;
                }
                let (nodes, pos, neg) = localize(&pairs);
                let mut tape = Tape::new();
                let z = encode(&mut tape, graph, source, &nodes, encoder, Mode::Train, rng)?;
                let loss = spatial_loss(&mut tape, z, heads, &pos, &neg, cfg.spatial_loss_form)?;
                sum += apply(&tape, loss, encoder, &mut heads.spatial, &mut opt.encoder, &mut opt.spatial)?;
                count += 1;
                stats.steps += 1;
            }
            if count > 0 {
                stats.spatial_epoch_loss.push(sum / count as f64);
            }
        }
        if stats.missing_negatives > 0 {
            log::debug!(
                "split {}: {} negatives not found within {NEGATIVE_RETRIES} retries",
                graph.split_index,
                stats.missing_negatives
            );
        }
    }

    let target = target.filter(|t| cfg.temporal && !t.nodes.is_empty());
    if let Some(t) = target {
        if t.attrs.rows() != t.nodes.len() || t.attrs.cols() != N_ATTRS {
            return Err(Error::Shape {
                op: "temporal target",
                detail: format!("{:?} for {} nodes", t.attrs.shape(), t.nodes.len()),
            });
        }
        let mut order: Vec<u32> = (0..t.nodes.len() as u32).collect();
        for _ in 0..cfg.epochs_temporal {
            order.shuffle(rng);
            let (mut sum, mut count) = (0.0, 0usize);
            for rows in order.chunks(batch_size) {
                let nodes: Vec<u32> = rows.iter().map(|&r| t.nodes[r as usize]).collect();
                let goal = t.attrs.select_rows(rows);
                let mut tape = Tape::new();
                let z = encode(&mut tape, graph, source, &nodes, encoder, Mode::Train, rng)?;
                let loss = temporal_loss(&mut tape, z, heads, &goal)?;
                sum += apply(&tape, loss, encoder, &mut heads.temporal, &mut opt.encoder, &mut opt.temporal)?;
                count += 1;
                stats.steps += 1;
            }
            stats.temporal_epoch_loss.push(sum / count as f64);
        }
    }
    Ok(stats)
}

/// Distinct nodes touched by `pairs` (first-appearance order) and the pairs
/// rewritten as positions in that list.
type Localized = (Vec<u32>, Vec<(u32, u32)>, Vec<(u32, u32)>);

fn localize(pairs: &PairBatch) -> Localized {
    let mut pos_of: HashMap<u32, u32> = HashMap::new();
    let mut nodes = Vec::new();
    let mut local = |v: u32| {
        *pos_of.entry(v).or_insert_with(|| {
            nodes.push(v);
            nodes.len() as u32 - 1
        })
    };
    let pos = pairs.positives.iter().map(|&(a, b)| (local(a), local(b))).collect();
    let neg = pairs.negatives.iter().map(|&(a, b)| (local(a), local(b))).collect();
    (nodes, pos, neg)
}
