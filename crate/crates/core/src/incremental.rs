//! Chains encoder state across temporally ordered splits. Overlap nodes
//! inherit their previous-split embedding as a projected feature prefix;
//! new nodes get a zero prefix.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::checkpoint::params_to_bytes;
use crate::diff::Tensor;
use crate::encoder::{embed_split, EmbeddingTable, EncoderState, FeatureSource};
use crate::error::{Error, Result};
use crate::graph::{compute_overlap, GraphSplit, N_ATTRS};
use crate::pretext::{pretrain_split, PretextHeads, PretrainConfig, PretrainStats, TemporalTarget};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementalConfig {
    pub hidden_dim: usize,
    pub fanouts: [usize; 2],
    pub dropout: f64,
    pub pretrain: PretrainConfig,
    /// Chain encoders and hand off embeddings between splits.
    pub incremental: bool,
    /// Train the first split on zero-prefixed concatenated inputs, so every
    /// split shares one input width.
    pub uniform_width: bool,
}

impl Default for IncrementalConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 128,
            fanouts: [10, 10],
            dropout: 0.5,
            pretrain: PretrainConfig::default(),
            incremental: true,
            uniform_width: true,
        }
    }
}

/// Final embeddings of the accounts a split shares with its successor.
#[derive(Debug, Clone, PartialEq)]
pub struct HandoffPacket {
    pub source_split: usize,
    pub accounts: Vec<String>,
    /// One row per entry of `accounts`.
    pub embeddings: Tensor<f32>,
    /// Encoder parameters (`params.bin` bytes) that produced the embeddings.
    pub checkpoint: Vec<u8>,
}

impl HandoffPacket {
    pub fn len(&self) -> usize {
        self.accounts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accounts.is_empty()
    }

    fn lookup(&self) -> HashMap<&str, usize> {
        self.accounts.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect()
    }
}

/// Unprojected prefix rows for `split`: the handoff embedding for accounts
/// in `packet`, zeros for every other node.
pub fn prefix_matrix(split: &GraphSplit, packet: Option<&HandoffPacket>, hidden_dim: usize) -> Result<Tensor<f32>> {
    let mut out = Tensor::zeros(split.num_nodes(), hidden_dim);
    if let Some(p) = packet {
        if p.embeddings.cols() != hidden_dim {
            return Err(Error::Shape {
                op: "prefix_matrix",
                detail: format!("handoff width {} vs hidden {hidden_dim}", p.embeddings.cols()),
            });
        }
        let lookup = p.lookup();
        for (i, id) in split.node_ids.iter().enumerate() {
            if let Some(&r) = lookup.get(id.as_str()) {
                out.row_mut(i).copy_from_slice(p.embeddings.row(r));
            }
        }
    }
    Ok(out)
}

/// `[prefix · proj | attributes]`, width `hidden_dim + 17`.
pub fn build_concat_features(
    split: &GraphSplit,
    packet: Option<&HandoffPacket>,
    proj: &Tensor<f32>,
) -> Result<Tensor<f32>> {
    if proj.rows() != proj.cols() {
        return Err(Error::Shape {
            op: "build_concat_features",
            detail: format!("projection {:?} is not square", proj.shape()),
        });
    }
    let prefix = prefix_matrix(split, packet, proj.rows())?;
    prefix.matmul(proj)?.hconcat(&split.attributes)
}

/// Eval-mode embeddings of the overlap between `split` and `next`.
pub fn make_handoff(
    split: &GraphSplit,
    next: &GraphSplit,
    source: FeatureSource<'_, f32>,
    encoder: &EncoderState<f32>,
) -> Result<HandoffPacket> {
    let table = embed_split(split, source, encoder)?;
    let (overlap, _) = compute_overlap(split, next);
    let rows: Vec<u32> = overlap.pairs.iter().map(|p| p.0).collect();
    Ok(HandoffPacket {
        source_split: split.split_index,
        accounts: rows.iter().map(|&r| split.node_ids[r as usize].clone()).collect(),
        embeddings: table.embeddings.select_rows(&rows),
        checkpoint: params_to_bytes(&encoder.params),
    })
}

/// Feature inputs of one split under a given configuration.
#[derive(Debug, Clone)]
pub enum SplitInputs {
    Plain,
    Concat(Tensor<f32>),
}

impl SplitInputs {
    pub fn source<'a>(&'a self, split: &'a GraphSplit) -> FeatureSource<'a, f32> {
        match self {
            SplitInputs::Plain => FeatureSource::Plain(&split.attributes),
            SplitInputs::Concat(prefix) => FeatureSource::Concat {
                prefix,
                attrs: &split.attributes,
            },
        }
    }
}

/// What happened on one pretrained split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitRecord {
    pub split_index: usize,
    pub start_params: Vec<u8>,
    pub end_params: Vec<u8>,
    pub stats: PretrainStats,
    /// Overlap ratio with the next split (the temporal target), if any.
    pub overlap_ratio: Option<f64>,
    /// Number of nodes whose input carries a handoff prefix.
    pub prefixed_nodes: usize,
}

#[derive(Debug, Clone)]
pub struct IncrementalRun {
    pub encoder: EncoderState<f32>,
    pub heads: PretextHeads<f32>,
    pub records: Vec<SplitRecord>,
    /// Packets passed between consecutive pretrained splits.
    pub handoffs: Vec<HandoffPacket>,
    /// Packet from the last pretrained split into `lookahead`, if given.
    pub next_handoff: Option<HandoffPacket>,
    /// End-of-split eval embeddings of each pretrained split.
    pub tables: Vec<EmbeddingTable>,
}

impl IncrementalRun {
    /// Inputs for embedding the lookahead split with the final encoder.
    pub fn inputs_for_next(&self, cfg: &IncrementalConfig, next: &GraphSplit) -> Result<SplitInputs> {
        if !cfg.incremental {
            return Ok(SplitInputs::Plain);
        }
        Ok(SplitInputs::Concat(prefix_matrix(
            next,
            self.next_handoff.as_ref(),
            cfg.hidden_dim,
        )?))
    }
}

/// Pretrains on `splits` in order. `lookahead` is the split that follows
/// the last one: it supplies the last split's temporal targets when
/// `lookahead_targets` is set and always receives a handoff packet, but is
/// never trained on.
pub fn run_incremental<R: Rng + ?Sized>(
    splits: &[GraphSplit],
    lookahead: Option<&GraphSplit>,
    lookahead_targets: bool,
    cfg: &IncrementalConfig,
    rng: &mut R,
) -> Result<IncrementalRun> {
    if splits.is_empty() {
        return Err(Error::InsufficientSplits { needed: 1, got: 0 });
    }
    let h = cfg.hidden_dim;
    let concat_width = h + N_ATTRS;
    let first_width = if cfg.incremental && cfg.uniform_width { concat_width } else { N_ATTRS };
    let mut encoder = EncoderState::new(first_width, h, cfg.fanouts, cfg.dropout, rng);
    let mut heads = PretextHeads::new(h, rng);
    let mut records = Vec::new();
    let mut handoffs: Vec<HandoffPacket> = Vec::new();
    let mut tables = Vec::new();
    let mut next_handoff = None;

    for (pos, split) in splits.iter().enumerate() {
        if pos > 0 {
            if cfg.incremental {
                encoder.widen_for_concat(rng)?;
            } else {
                encoder = EncoderState::new(N_ATTRS, h, cfg.fanouts, cfg.dropout, rng);
                heads = PretextHeads::new(h, rng);
            }
        }
        let inputs = if encoder.input_dim == concat_width {
            SplitInputs::Concat(prefix_matrix(split, handoffs.last(), h)?)
        } else {
            SplitInputs::Plain
        };
        let prefixed_nodes = match &inputs {
            SplitInputs::Concat(p) => (0..p.rows()).filter(|&i| p.row(i).iter().any(|&v| v != 0.0)).count(),
            SplitInputs::Plain => 0,
        };

        let next = splits.get(pos + 1).or(lookahead);
        let target_split = match splits.get(pos + 1) {
            Some(s) => Some(s),
            None if lookahead_targets => lookahead,
            None => None,
        };
        let (overlap, ratio) = match target_split {
            Some(t) => {
                let (o, r) = compute_overlap(split, t);
                (Some((o, t)), Some(r))
            }
            None => (None, None),
        };
        let target_rows;
        let target_nodes: Vec<u32>;
        let target = match &overlap {
            Some((o, t)) => {
                target_nodes = o.pairs.iter().map(|p| p.0).collect();
                let next_rows: Vec<u32> = o.pairs.iter().map(|p| p.1).collect();
                target_rows = t.attributes.select_rows(&next_rows);
                Some(TemporalTarget {
                    nodes: &target_nodes,
                    attrs: &target_rows,
                })
            }
            None => None,
        };

        let start_params = params_to_bytes(&encoder.params);
        let stats = pretrain_split(
            split,
            inputs.source(split),
            &mut encoder,
            &mut heads,
            target,
            &cfg.pretrain,
            rng,
        )?;
        log::info!(
            "split {}: {} steps, spatial {:?}, temporal {:?}",
            split.split_index,
            stats.steps,
            stats.spatial_epoch_loss.last(),
            stats.temporal_epoch_loss.last()
        );
        records.push(SplitRecord {
            split_index: split.split_index,
            start_params,
            end_params: params_to_bytes(&encoder.params),
            stats,
            overlap_ratio: ratio,
            prefixed_nodes,
        });
        tables.push(embed_split(split, inputs.source(split), &encoder)?);

        if cfg.incremental {
            if let Some(nx) = next {
                let packet = make_handoff(split, nx, inputs.source(split), &encoder)?;
                if pos + 1 < splits.len() {
                    handoffs.push(packet);
                } else {
                    next_handoff = Some(packet);
                }
            }
        }
    }
    Ok(IncrementalRun {
        encoder,
        heads,
        records,
        handoffs,
        next_handoff,
        tables,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::graph::tests::tx;
    use crate::ingest::TransactionRecord;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn split(idx: usize, txs: &[TransactionRecord]) -> GraphSplit {
        let mut g = build_graph(idx, txs).unwrap();
        g.normalize();
        g
    }

    fn chain() -> Vec<GraphSplit> {
        vec![
            split(0, &[tx("a", "b", 5, 1), tx("b", "c", 3, 2), tx("c", "d", 2, 3)]),
            split(1, &[tx("b", "e", 4, 4), tx("e", "f", 1, 5), tx("f", "c", 9, 6)]),
            split(2, &[tx("c", "g", 2, 7), tx("g", "h", 2, 8), tx("e", "h", 1, 9)]),
        ]
    }

    fn small_cfg() -> IncrementalConfig {
        IncrementalConfig {
            hidden_dim: 8,
            pretrain: PretrainConfig {
                epochs_spatial: 2,
                epochs_temporal: 1,
                batch_size: 4,
                lr: 0.01,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn first_split_prefix_is_zero() {
        let s = &chain()[0];
        let proj = Tensor::from_fn(8, 8, |i, j| (i + j) as f32);
        let x = build_concat_features(s, None, &proj).unwrap();
        assert_eq!(x.cols(), 8 + N_ATTRS);
        for i in 0..x.rows() {
            assert!(x.row(i)[..8].iter().all(|&v| v == 0.0));
            assert_eq!(&x.row(i)[8..], s.attributes.row(i));
        }
    }

    #[test]
    fn overlap_prefix_is_projected_handoff() {
        let s = &chain()[1];
        let packet = HandoffPacket {
            source_split: 0,
            accounts: vec!["b".into()],
            embeddings: Tensor::from_fn(1, 2, |_, j| j as f32 + 1.0),
            checkpoint: Vec::new(),
        };
        let proj = Tensor::from_rows(&[[1.0f32, 1.0], [0.0, 2.0]]).unwrap();
        let x = build_concat_features(s, Some(&packet), &proj).unwrap();
        let b = s.index_of("b").unwrap() as usize;
        assert_eq!(&x.row(b)[..2], &[1.0, 5.0]);
        let e = s.index_of("e").unwrap() as usize;
        assert_eq!(&x.row(e)[..2], &[0.0, 0.0]);
        assert_eq!(x.row(e).len(), x.row(b).len());
    }

    #[test]
    fn one_split_has_no_handoff() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let run = run_incremental(&chain()[..1], None, false, &small_cfg(), &mut rng).unwrap();
        assert!(run.handoffs.is_empty());
        assert!(run.next_handoff.is_none());
        assert_eq!(run.records.len(), 1);
    }

    #[test]
    fn three_splits_two_packets_and_exact_chaining() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let run = run_incremental(&chain(), None, false, &small_cfg(), &mut rng).unwrap();
        assert_eq!(run.handoffs.len(), 2);
        for w in run.records.windows(2) {
            assert_eq!(w[0].end_params, w[1].start_params);
        }
        assert_eq!(run.handoffs[0].accounts, vec!["b".to_string(), "c".to_string()]);
        assert_eq!(run.records[1].prefixed_nodes, 2);
        assert!(run.records[2].stats.temporal_epoch_loss.is_empty());
        assert!(!run.records[1].stats.temporal_epoch_loss.is_empty());
    }

    #[test]
    fn non_uniform_widens_at_second_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = IncrementalConfig {
            uniform_width: false,
            ..small_cfg()
        };
        let run = run_incremental(&chain()[..2], None, false, &cfg, &mut rng).unwrap();
        assert_eq!(run.encoder.input_dim, 8 + N_ATTRS);
        assert_ne!(run.records[0].end_params, run.records[1].start_params);
    }

    #[test]
    fn non_incremental_uses_plain_attributes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = IncrementalConfig {
            incremental: false,
            ..small_cfg()
        };
        let splits = chain();
        let run = run_incremental(&splits[..2], Some(&splits[2]), true, &cfg, &mut rng).unwrap();
        assert_eq!(run.encoder.input_dim, N_ATTRS);
        assert!(run.handoffs.is_empty() && run.next_handoff.is_none());
        assert!(matches!(run.inputs_for_next(&cfg, &splits[2]).unwrap(), SplitInputs::Plain));
    }
}
