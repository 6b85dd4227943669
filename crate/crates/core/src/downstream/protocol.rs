//! Transductive and inductive evaluation of frozen encoders.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::classifier::{confusion, train_classifier, ClassifierConfig, Dataset};
use super::labels::{sample_labels, LabelSet, Part};
use super::metrics::{AveragedReport, MetricsReport, Protocol};
use crate::diff::Tensor;
use crate::encoder::{embed_split, EmbeddingTable};
use crate::error::{Error, Result};
use crate::graph::GraphSplit;
use crate::incremental::{run_incremental, IncrementalConfig, IncrementalRun};

pub const LABEL_STREAM: u64 = 1;
pub const ENCODER_STREAM: u64 = 2;
pub const PREVIOUS_LABEL_STREAM: u64 = 3;

/// Consecutive finalized splits plus the phishing ground truth.
#[derive(Debug, Clone)]
pub struct Piece {
    pub splits: Vec<GraphSplit>,
    pub phishing: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Full,
    NoIncremental,
    NoTemporal,
    NoSpatial,
    /// Classifier on the normalized attributes, no encoder.
    RawFeatures,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoIncremental,
        Variant::NoTemporal,
        Variant::NoSpatial,
        Variant::RawFeatures,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoIncremental => "incremental-removed",
            Variant::NoTemporal => "temporal-removed",
            Variant::NoSpatial => "spatial-removed",
            Variant::RawFeatures => "raw-features",
        }
    }

    /// Encoder configuration with this variant's component switched off.
    pub fn apply(self, base: &IncrementalConfig) -> IncrementalConfig {
        let mut cfg = base.clone();
        match self {
            Variant::NoIncremental => cfg.incremental = false,
            Variant::NoTemporal => cfg.pretrain.temporal = false,
            Variant::NoSpatial => cfg.pretrain.spatial = false,
            Variant::Full | Variant::RawFeatures => {}
        }
        cfg
    }

    /// Variant implied by an encoder configuration's ablation switches.
    pub fn from_config(cfg: &IncrementalConfig) -> Self {
        if !cfg.incremental {
            Variant::NoIncremental
        } else if !cfg.pretrain.temporal {
            Variant::NoTemporal
        } else if !cfg.pretrain.spatial {
            Variant::NoSpatial
        } else {
            Variant::Full
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// Which labels train the inductive classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierSource {
    /// The evaluated split's own train partition.
    #[serde(rename = "self")]
    SelfSplit,
    /// The last pretrained split's labels, transferred.
    Previous,
}

impl FromStr for ClassifierSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self" => Ok(Self::SelfSplit),
            "previous" => Ok(Self::Previous),
            o => Err(Error::Config(format!("unknown classifier source {o:?}"))),
        }
    }
}

impl fmt::Display for ClassifierSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SelfSplit => "self",
            Self::Previous => "previous",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub encoder: IncrementalConfig,
    pub classifier: ClassifierConfig,
    pub protocol: Protocol,
    pub classifier_source: ClassifierSource,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            encoder: IncrementalConfig::default(),
            classifier: ClassifierConfig::default(),
            protocol: Protocol::Transductive,
            classifier_source: ClassifierSource::SelfSplit,
        }
    }
}

impl Protocol {
    /// Number of pretrained splits; the next one is evaluated.
    pub fn pretrain_splits(self) -> usize {
        match self {
            Protocol::Transductive => 3,
            Protocol::Inductive => 4,
        }
    }
}

/// One seed's outcome.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: MetricsReport,
    /// Split indices `pretrain_split` ran on.
    pub pretrained_splits: Vec<usize>,
    pub labels: LabelSet,
    /// Frozen-encoder embeddings of the evaluated split (absent for the raw
    /// baseline).
    pub embeddings: Option<EmbeddingTable>,
    pub run: Option<IncrementalRun>,
}

fn dataset(rows: &Tensor<f32>, split: &GraphSplit, labels: &LabelSet, part: Part) -> Dataset {
    let mut d = Dataset::default();
    for (acct, y) in labels.examples(part) {
        let i = split.index_of(acct).expect("labeled account is a split node") as usize;
        d.push(rows.row(i).iter().map(|&v| v as f64).collect(), y);
    }
    d
}

/// Evaluates one variant on one piece.
pub fn run_once(piece: &Piece, variant: Variant, cfg: &ProtocolConfig, seed: u64) -> Result<RunOutcome> {
    let n_pre = cfg.protocol.pretrain_splits();
    if piece.splits.len() <= n_pre {
        return Err(Error::InsufficientSplits {
            needed: n_pre + 1,
            got: piece.splits.len(),
        });
    }
    let eval_split = &piece.splits[n_pre];
    let (features, embeddings, run, prev_features) = if variant == Variant::RawFeatures {
        let prev = piece.splits[n_pre - 1].attributes.clone();
        (eval_split.attributes.clone(), None, None, prev)
    } else {
        let enc_cfg = variant.apply(&cfg.encoder);
        let mut rng = stream_rng(seed, ENCODER_STREAM);
        // the evaluated split may feed temporal targets of the last
        // pretrained split transductively, never inductively
        let lookahead_targets = cfg.protocol == Protocol::Transductive;
        let run = run_incremental(
            &piece.splits[..n_pre],
            Some(eval_split),
            lookahead_targets,
            &enc_cfg,
            &mut rng,
        )?;
        let inputs = run.inputs_for_next(&enc_cfg, eval_split)?;
        let table = embed_split(eval_split, inputs.source(eval_split), &run.encoder)?;
        let prev = run.tables.last().expect("at least one split").embeddings.clone();
        (table.embeddings.clone(), Some(table), Some(run), prev)
    };
    let (report, labels) = classify_split(
        eval_split,
        &features,
        Some((&piece.splits[n_pre - 1], &prev_features)),
        &piece.phishing,
        cfg,
        seed,
        variant.tag(),
    )?;
    let pretrained_splits = run
        .as_ref()
        .map(|r| r.records.iter().map(|s| s.split_index).collect())
        .unwrap_or_default();
    Ok(RunOutcome {
        report,
        pretrained_splits,
        labels,
        embeddings,
        run,
    })
}

/// `ChaCha8Rng` for one of the run's independent streams.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Labels `eval_split`, fits the classifier on `features` (one row per
/// node) and scores the test partition. `previous` holds the last
/// pretrained split and its feature rows, used when an inductive run
/// trains on transferred labels.
pub fn classify_split(
    eval_split: &GraphSplit,
    features: &Tensor<f32>,
    previous: Option<(&GraphSplit, &Tensor<f32>)>,
    phishing: &BTreeSet<String>,
    cfg: &ProtocolConfig,
    seed: u64,
    tag: &str,
) -> Result<(MetricsReport, LabelSet)> {
    if features.rows() != eval_split.num_nodes() {
        return Err(Error::Shape {
            op: "classify_split",
            detail: format!("{} feature rows for {} nodes", features.rows(), eval_split.num_nodes()),
        });
    }
    let labels = sample_labels(eval_split, phishing, &mut stream_rng(seed, LABEL_STREAM))?;
    let test = dataset(features, eval_split, &labels, Part::Test);
    let clf = match (cfg.protocol, cfg.classifier_source, previous) {
        (Protocol::Inductive, ClassifierSource::Previous, Some((prev_split, prev_features))) => {
            let prev_labels = sample_labels(prev_split, phishing, &mut stream_rng(seed, PREVIOUS_LABEL_STREAM))?;
            let train = dataset(prev_features, prev_split, &prev_labels, Part::Train);
            let val = dataset(prev_features, prev_split, &prev_labels, Part::Val);
            train_classifier(&train, &val, &cfg.classifier)?
        }
        (Protocol::Inductive, ClassifierSource::Previous, None) => {
            return Err(Error::InvalidInput("previous-split classifier needs the previous split".into()))
        }
        _ => {
            let train = dataset(features, eval_split, &labels, Part::Train);
            let val = dataset(features, eval_split, &labels, Part::Val);
            train_classifier(&train, &val, &cfg.classifier)?
        }
    };
    let conf = confusion(&clf, &test, cfg.classifier.threshold);
    Ok((MetricsReport::from_confusion(conf, seed, cfg.protocol, tag), labels))
}

/// Runs `variant` on every `(seed, piece)` (in parallel) and averages.
pub fn run_protocol(pieces: &[(u64, Piece)], variant: Variant, cfg: &ProtocolConfig) -> Result<AveragedReport> {
    let outcomes: Vec<RunOutcome> = pieces
        .par_iter()
        .map(|(seed, piece)| run_once(piece, variant, cfg, *seed))
        .collect::<Result<_>>()?;
    for ((_, piece), o) in pieces.iter().zip(&outcomes) {
        let evaluated = piece_eval_index(piece, cfg.protocol);
        if o.pretrained_splits.contains(&evaluated) {
            return Err(Error::InvalidInput(format!("evaluated split {evaluated} was pretrained on")));
        }
    }
    Ok(AveragedReport::new(
        cfg.protocol,
        variant.tag(),
        outcomes.into_iter().map(|o| o.report).collect(),
    ))
}

/// Split index of the evaluated split of `piece`.
pub fn piece_eval_index(piece: &Piece, protocol: Protocol) -> usize {
    piece.splits[protocol.pretrain_splits()].split_index
}
