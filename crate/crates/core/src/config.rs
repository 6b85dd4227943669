//! Run configuration: defaults, overridden by a flat `key=value` file,
//! overridden by command-line flags.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::downstream::{ClassifierConfig, ClassifierSource, Protocol, ProtocolConfig, Variant};
use crate::error::{Error, Result};
use crate::incremental::IncrementalConfig;
use crate::ingest::{InputFormat, DEFAULT_MALFORMED_THRESHOLD};
use crate::pretext::{PretrainConfig, SpatialLossForm};
use crate::synth::SynthConfig;
use crate::util::{read_string, sha256_hex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Independent runs, seeded `seed, seed + 1, ...`.
    pub seeds: usize,
    /// Worker threads; results do not depend on it.
    pub threads: usize,
    pub mode: Protocol,

    pub format: InputFormat,
    pub n_splits: usize,
    pub malformed_threshold: f64,

    pub hidden_dim: usize,
    pub fanout1: usize,
    pub fanout2: usize,
    pub dropout: f64,
    pub k: usize,
    pub per_node_pos: usize,
    pub neg_ratio: f64,
    pub epochs_spatial: usize,
    pub epochs_temporal: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub spatial_loss_form: SpatialLossForm,
    pub no_incremental: bool,
    pub no_spatial: bool,
    pub no_temporal: bool,
    pub uniform_width: bool,

    pub inductive_classifier_source: ClassifierSource,
    pub clf_iterations: usize,
    pub clf_lr: f64,
    pub clf_l2: f64,
    pub clf_threshold: f64,

    /// Generator settings, keyed `synth.<field>`. The generator seed is
    /// replaced by the run seed.
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PretrainConfig::default();
        let e = IncrementalConfig::default();
        let c = ClassifierConfig::default();
        Self {
            seed: 0,
            seeds: 1,
            threads: 1,
            mode: Protocol::Transductive,
            format: InputFormat::Csv,
            n_splits: 5,
            malformed_threshold: DEFAULT_MALFORMED_THRESHOLD,
            hidden_dim: e.hidden_dim,
            fanout1: e.fanouts[0],
            fanout2: e.fanouts[1],
            dropout: e.dropout,
            k: p.k,
            per_node_pos: p.per_node_pos,
            neg_ratio: p.neg_ratio,
            epochs_spatial: p.epochs_spatial,
            epochs_temporal: p.epochs_temporal,
            batch_size: p.batch_size,
            lr: p.lr,
            spatial_loss_form: p.spatial_loss_form,
            no_incremental: false,
            no_spatial: false,
            no_temporal: false,
            uniform_width: e.uniform_width,
            inductive_classifier_source: ClassifierSource::SelfSplit,
            clf_iterations: c.iterations,
            clf_lr: c.lr,
            clf_l2: c.l2,
            clf_threshold: c.threshold,
            synth: SynthConfig::default(),
        }
    }
}

/// Parses `key=value` lines. Blank lines and `#` comments are skipped.
pub fn parse_flat(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn coerce(key: &str, current: &Value, raw: &str) -> Result<Value> {
    let bad = || Error::Config(format!("{key}: cannot use {raw:?} here"));
    Ok(match current {
        Value::Bool(_) => Value::Bool(match raw {
            "true" | "1" | "yes" => true,
            "false" | "0" | "no" => false,
            _ => return Err(bad()),
        }),
        Value::Number(n) if n.is_u64() => Value::from(raw.parse::<u64>().map_err(|_| bad())?),
        Value::Number(_) => {
            let x: f64 = raw.parse().map_err(|_| bad())?;
            serde_json::Number::from_f64(x).map(Value::Number).ok_or_else(bad)?
        }
        Value::String(_) => Value::String(raw.to_string()),
        _ => return Err(bad()),
    })
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

impl RunConfig {
    /// Overrides one key. Nested generator keys use `synth.<field>`.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut tree = serde_json::to_value(&*self)?;
        let mut slot = &mut tree;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
        }
        *slot = coerce(key, slot, raw)?;
        *self = serde_json::from_value(tree).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }

    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        pairs.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    /// Defaults overridden by the file at `path`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(&parse_flat(&read_string(path)?)?)?;
        Ok(cfg)
    }

    /// Every key with its current value, one `key=value` per line, sorted.
    pub fn to_flat(&self) -> String {
        let mut pairs = Vec::new();
        flatten("", &serde_json::to_value(self).expect("config serializes"), &mut pairs);
        pairs.sort();
        let mut s = String::new();
        for (k, v) in pairs {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.no_spatial && self.no_temporal {
            return Err(Error::Config("disabling both pretext tasks leaves nothing to train".into()));
        }
        if self.seeds == 0 || self.threads == 0 || self.n_splits == 0 {
            return Err(Error::Config("seeds, threads and n_splits must be positive".into()));
        }
        if self.hidden_dim == 0 || self.batch_size == 0 || self.k == 0 {
            return Err(Error::Config("hidden_dim, batch_size and k must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if [self.no_incremental, self.no_spatial, self.no_temporal].iter().filter(|&&b| b).count() > 1 {
            return Err(Error::Config("at most one ablation switch may be set".into()));
        }
        self.synth.validate()
    }

    /// SHA-256 of every setting that affects results (not `seed`, `seeds`
    /// or `threads`).
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        c.seeds = 1;
        c.threads = 1;
        c.synth.seed = 0;
        sha256_hex(c.to_flat().as_bytes())
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            k: self.k,
            per_node_pos: self.per_node_pos,
            neg_ratio: self.neg_ratio,
            epochs_spatial: self.epochs_spatial,
            epochs_temporal: self.epochs_temporal,
            batch_size: self.batch_size,
            lr: self.lr,
            spatial_loss_form: self.spatial_loss_form,
            spatial: !self.no_spatial,
            temporal: !self.no_temporal,
        }
    }

    pub fn encoder_config(&self) -> IncrementalConfig {
        IncrementalConfig {
            hidden_dim: self.hidden_dim,
            fanouts: [self.fanout1, self.fanout2],
            dropout: self.dropout,
            pretrain: self.pretrain_config(),
            incremental: !self.no_incremental,
            uniform_width: self.uniform_width,
        }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig {
            iterations: self.clf_iterations,
            lr: self.clf_lr,
            l2: self.clf_l2,
            threshold: self.clf_threshold,
            balanced: true,
        }
    }

    pub fn protocol_config(&self) -> ProtocolConfig {
        ProtocolConfig {
            encoder: self.encoder_config(),
            classifier: self.classifier_config(),
            protocol: self.mode,
            classifier_source: self.inductive_classifier_source,
        }
    }

    /// The encoder variant selected by the ablation switches.
    pub fn variant(&self) -> Variant {
        Variant::from_config(&self.encoder_config())
    }

    /// Copy configured for `variant` (the raw baseline keeps the encoder
    /// settings; it never trains).
    pub fn with_variant(&self, variant: Variant) -> Self {
        let mut c = self.clone();
        c.no_incremental = variant == Variant::NoIncremental;
        c.no_spatial = variant == Variant::NoSpatial;
        c.no_temporal = variant == Variant::NoTemporal;
        c
    }

    /// Generator settings for the run seeded `seed`.
    pub fn synth_for(&self, seed: u64) -> SynthConfig {
        SynthConfig { seed, ..self.synth.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_round_trip() {
        let mut c = RunConfig::default();
        c.set("lr", "0.01").unwrap();
        c.set("no_spatial", "true").unwrap();
        c.set("synth.decoy_ratio", "3").unwrap();
        c.set("mode", "inductive").unwrap();
        let mut d = RunConfig::default();
        d.apply(&parse_flat(&c.to_flat()).unwrap()).unwrap();
        assert_eq!(c, d);
        assert_eq!(d.variant(), Variant::NoSpatial);
        assert_eq!(d.synth.decoy_ratio, 3.0);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut c = RunConfig::default();
        assert!(c.set("learning_rate", "0.1").is_err());
        assert!(c.set("hidden_dim", "-3").is_err());
        assert!(c.set("mode", "sideways").is_err());
        assert!(c.set("synth.nope", "1").is_err());
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn comments_and_blanks_are_skipped() {
        let pairs = parse_flat("# c\n\n k = 2 \nlr=0.1\n").unwrap();
        assert_eq!(pairs, vec![("k".into(), "2".into()), ("lr".into(), "0.1".into())]);
        assert!(parse_flat("k 2").is_err());
    }

    #[test]
    fn both_pretext_tasks_off_is_rejected() {
        let mut c = RunConfig::default();
        c.no_spatial = true;
        c.no_temporal = true;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.no_temporal = false;
        c.validate().unwrap();
    }

    #[test]
    fn hash_ignores_seed_but_not_settings() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 9, seeds: 5, threads: 4, ..RunConfig::default() };
        let c = RunConfig { lr: 0.01, ..RunConfig::default() };
        assert_eq!(a.config_hash(), b.config_hash());
        assert_ne!(a.config_hash(), c.config_hash());
    }
}
