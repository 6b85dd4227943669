mod common;

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;

use common::{random_graph, random_txs, rng, tiny_synth};
use siege_core::diff::checkpoint::params_to_bytes;
use siege_core::diff::{Tape, Tensor};
use siege_core::downstream::{run_once, Piece, ProtocolConfig, Variant};
use siege_core::encoder::{embed_split, encode, sample_neighbors, EncoderState, FeatureSource, Mode};
use siege_core::graph::{build_graph, finalize_split, GraphSplit, N_ATTRS};
use siege_core::incremental::IncrementalConfig;
use siege_core::pretext::{khop_ball, pretrain_split, PretextHeads, PretrainConfig};
use siege_core::synth::{generate, SynthConfig};

fn two_hundred_nodes(seed: u64) -> GraphSplit {
    let mut r = rng(seed);
    loop {
        let g = random_graph(&mut r, 200, 700);
        if g.num_nodes() == 200 {
            return g;
        }
    }
}

#[test]
fn spatial_loss_falls_every_epoch_at_the_start() {
    let cfg = SynthConfig {
        accounts_per_split: 205,
        txs_per_split: 2600,
        community_size: 20,
        ..SynthConfig::default()
    };
    let d = generate(&cfg).unwrap();
    let g = finalize_split(0, &d.splits[0]).unwrap();
    assert!((190..=210).contains(&g.num_nodes()), "{} nodes", g.num_nodes());
    for seed in 0..3 {
        let mut r = rng(seed);
        let mut enc = EncoderState::<f32>::new(N_ATTRS, 128, [10, 10], 0.5, &mut r);
        let mut heads = PretextHeads::new(128, &mut r);
        let cfg = PretrainConfig {
            epochs_spatial: 3,
            batch_size: 32,
            temporal: false,
            ..PretrainConfig::default()
        };
        let stats = pretrain_split(&g, FeatureSource::Plain(&g.attributes), &mut enc, &mut heads, None, &cfg, &mut r).unwrap();
        let l = &stats.spatial_epoch_loss;
        assert_eq!(l.len(), 3);
        assert!(l[0] > l[1] && l[1] > l[2], "seed {seed}: {l:?}");
    }
}

#[test]
fn pretraining_is_deterministic() {
    let g = two_hundred_nodes(7);
    let run = || {
        let mut r = rng(3);
        let mut enc = EncoderState::<f32>::new(N_ATTRS, 32, [5, 5], 0.5, &mut r);
        let mut heads = PretextHeads::new(32, &mut r);
        let cfg = PretrainConfig { epochs_spatial: 2, batch_size: 64, ..PretrainConfig::default() };
        pretrain_split(&g, FeatureSource::Plain(&g.attributes), &mut enc, &mut heads, None, &cfg, &mut r).unwrap();
        params_to_bytes(&enc.params)
    };
    assert_eq!(run(), run());
}

#[test]
fn permuting_node_order_leaves_embeddings_unchanged() {
    let mut r = rng(31);
    let mut a = build_graph(0, &random_txs(&mut r, 60, 240)).unwrap();
    let n = a.num_nodes();
    let mut perm: Vec<u32> = (0..n as u32).collect();
    perm.shuffle(&mut r);
    let mut ids = vec![String::new(); n];
    let mut raw = vec![[0.0; N_ATTRS]; n];
    for i in 0..n {
        ids[perm[i] as usize] = a.node_ids[i].clone();
        raw[perm[i] as usize] = a.raw_attributes[i];
    }
    let edges = a.edges.iter().map(|&(u, v)| (perm[u as usize], perm[v as usize]));
    let mut b = GraphSplit::from_parts(0, ids, edges, raw).unwrap();
    a.normalize();
    b.normalize();

    let enc = EncoderState::<f32>::new(N_ATTRS, 16, [10, 10], 0.0, &mut r);
    let za = embed_split(&a, FeatureSource::Plain(&a.attributes), &enc).unwrap();
    let zb = embed_split(&b, FeatureSource::Plain(&b.attributes), &enc).unwrap();
    for i in 0..n {
        for (x, y) in za.row(i).iter().zip(zb.row(perm[i] as usize)) {
            assert!((x - y).abs() < 1e-5, "node {i}: {x} vs {y}");
        }
    }
}

#[test]
fn features_beyond_two_hops_do_not_reach_an_embedding() {
    let mut r = rng(32);
    for _ in 0..5 {
        let g = random_graph(&mut r, 120, 150);
        let enc = EncoderState::<f32>::new(N_ATTRS, 16, [10, 10], 0.0, &mut r);
        let base = embed_split(&g, FeatureSource::Plain(&g.attributes), &enc).unwrap();
        let v = r.random_range(0..g.num_nodes() as u32);
        let ball: BTreeSet<u32> = khop_ball(&g, v, 2).into_iter().chain([v]).collect();
        let mut x = g.attributes.clone();
        for i in 0..g.num_nodes() {
            if !ball.contains(&(i as u32)) {
                x.row_mut(i).iter_mut().for_each(|c| *c = r.random_range(-5.0..5.0));
            }
        }
        let moved = embed_split(&g, FeatureSource::Plain(&x), &enc).unwrap();
        assert_eq!(base.row(v as usize), moved.row(v as usize));
        if ball.len() < g.num_nodes() {
            assert_ne!(base.embeddings, moved.embeddings);
        }
    }
}

#[test]
fn neighbor_sampling_is_uniform() {
    // star: hub 0 with 100 leaves
    let txs: Vec<_> = (1..=100).map(|i| common::tx("h", &format!("l{i:03}"), 1, i)).collect();
    let g = build_graph(0, &txs).unwrap();
    let hub = g.index_of("h").unwrap();
    assert_eq!(g.neighbors[hub as usize].len(), 100);
    let mut counts: HashMap<u32, u64> = HashMap::new();
    let mut r = rng(33);
    let calls = 10_000;
    for _ in 0..calls {
        let s = sample_neighbors(&g, hub, 10, &mut r);
        assert_eq!(s.len(), 10);
        assert_eq!(s.iter().collect::<BTreeSet<_>>().len(), 10);
        for u in s {
            *counts.entry(u).or_default() += 1;
        }
    }
    assert_eq!(counts.len(), 100);
    let expected = calls as f64 * 10.0 / 100.0;
    let chi2: f64 = counts.values().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    // 0.99 quantile of chi-square with 99 degrees of freedom
    assert!(chi2 < 134.642, "chi-square {chi2}");
}

#[test]
fn embed_split_repeats_bit_for_bit() {
    let mut r = rng(34);
    let g = random_graph(&mut r, 150, 500);
    let enc = EncoderState::<f32>::new(N_ATTRS, 32, [2, 2], 0.5, &mut r);
    let a = embed_split(&g, FeatureSource::Plain(&g.attributes), &enc).unwrap();
    let b = embed_split(&g, FeatureSource::Plain(&g.attributes), &enc).unwrap();
    assert_eq!(a.to_files(), b.to_files());

    // eval mode ignores fanouts and dropout
    let nodes: Vec<u32> = (0..g.num_nodes() as u32).collect();
    let mut tape = Tape::new();
    let z = encode(&mut tape, &g, FeatureSource::Plain(&g.attributes), &nodes, &enc, Mode::Eval, &mut rng(99)).unwrap();
    assert_eq!(tape.value(z), &a.embeddings);
}

#[test]
fn train_mode_samples_while_eval_mode_does_not() {
    let mut r = rng(35);
    let g = random_graph(&mut r, 100, 600);
    let enc = EncoderState::<f32>::new(N_ATTRS, 16, [2, 2], 0.5, &mut r);
    let nodes: Vec<u32> = (0..g.num_nodes() as u32).collect();
    let run = |mode, seed| -> Tensor<f32> {
        let mut tape = Tape::new();
        let z = encode(&mut tape, &g, FeatureSource::Plain(&g.attributes), &nodes, &enc, mode, &mut rng(seed)).unwrap();
        tape.value(z).clone()
    };
    assert_ne!(run(Mode::Train, 1), run(Mode::Train, 2));
    assert_eq!(run(Mode::Train, 1), run(Mode::Train, 1));
    assert_eq!(run(Mode::Eval, 1), run(Mode::Eval, 2));
}

#[test]
fn classification_leaves_the_encoder_frozen() {
    let d = generate(&tiny_synth(1)).unwrap();
    let piece = Piece {
        splits: d.splits.iter().enumerate().map(|(i, t)| finalize_split(i, t).unwrap()).collect(),
        phishing: d.phishing,
    };
    let mut cfg = ProtocolConfig {
        encoder: IncrementalConfig { hidden_dim: 16, ..IncrementalConfig::default() },
        ..ProtocolConfig::default()
    };
    cfg.encoder.pretrain.epochs_spatial = 1;
    cfg.encoder.pretrain.epochs_temporal = 1;
    let out = run_once(&piece, Variant::Full, &cfg, 0).unwrap();
    let run = out.run.unwrap();
    assert_eq!(params_to_bytes(&run.encoder.params), run.records.last().unwrap().end_params);
    assert_eq!(out.pretrained_splits, vec![0, 1, 2]);

    // the evaluated rows are what the frozen encoder gives again
    let eval = &piece.splits[3];
    let inputs = run.inputs_for_next(&cfg.encoder, eval).unwrap();
    let again = embed_split(eval, inputs.source(eval), &run.encoder).unwrap();
    assert_eq!(Some(again), out.embeddings);
}
