//! File-backed pipeline stages. Each stage reads the directories written by
//! earlier stages and writes its outputs plus a `manifest.json` into its own
//! directory. [`run_pipeline`] chains the stages under one work directory;
//! a stage directory is named after a key hashed from its settings and its
//! inputs, and is reused when that key is already present.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::diff::checkpoint::{params_from_bytes, params_to_bytes};
use crate::diff::Tensor;
use crate::downstream::{
    classify_split, format_table, stream_rng, AveragedReport, MetricsReport, Protocol, Variant,
};
use crate::downstream::protocol::ENCODER_STREAM;
use crate::encoder::{embed_split, EmbeddingTable, EncoderState, FeatureSource};
use crate::error::{Error, Result};
use crate::graph::io::{load_split, save_split};
use crate::graph::{finalize_split, GraphSplit};
use crate::incremental::{prefix_matrix, run_incremental, HandoffPacket, IncrementalConfig};
use crate::ingest::{filter_transactions, load_stream, parse_transactions, split_by_block, write_csv};
use crate::synth::{generate, read_labels, write_synth};
use crate::util::{read_file, read_json, read_string, sha256_hex, write_file, write_json};

pub const MANIFEST: &str = "manifest.json";
/// Written by [`run_pipeline`] after a stage completes; not part of the
/// stage outputs.
const CACHE_KEY: &str = "cache_key";

/// What a stage directory holds and how it was made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    /// Hash of `stage`, `settings` and `inputs`.
    pub key: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub settings: serde_json::Value,
    /// SHA-256 of every input file.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every file written, by path relative to the directory.
    pub outputs: BTreeMap<String, String>,
}

fn stage_key(stage: &str, settings: &serde_json::Value, inputs: &BTreeMap<String, String>) -> String {
    sha256_hex(json!({ "stage": stage, "settings": settings, "inputs": inputs }).to_string().as_bytes())
}

fn list_files(dir: &Path, rel: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        let r = rel.join(e.file_name());
        if path.is_dir() {
            list_files(&path, &r, out)?;
        } else {
            out.push(r);
        }
    }
    Ok(())
}

/// SHA-256 of every file under `dir` except the manifest, keyed by
/// `/`-separated relative path.
pub fn hash_tree(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut files = Vec::new();
    list_files(dir, Path::new(""), &mut files)?;
    files
        .into_iter()
        .filter(|r| r != Path::new(MANIFEST) && r != Path::new(CACHE_KEY))
        .map(|r| {
            let bytes = read_file(&dir.join(&r))?;
            let name = r.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            Ok((name, sha256_hex(&bytes)))
        })
        .collect()
}

/// Hashes of `files`, keyed by `label/<file name>`.
fn hash_inputs(label: &str, files: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    files
        .iter()
        .map(|f| {
            let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((format!("{label}/{name}"), sha256_hex(&read_file(f)?)))
        })
        .collect()
}

/// Upstream stage outputs as inputs of a downstream stage.
fn upstream(label: &str, dir: &Path) -> Result<BTreeMap<String, String>> {
    let m = read_manifest(dir)?;
    Ok(m.outputs.into_iter().map(|(k, v)| (format!("{label}/{k}"), v)).collect())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    read_json(&dir.join(MANIFEST))
}

fn seal(
    dir: &Path,
    stage: &str,
    cfg: &RunConfig,
    seed: Option<u64>,
    settings: serde_json::Value,
    inputs: BTreeMap<String, String>,
) -> Result<Manifest> {
    let m = Manifest {
        stage: stage.to_string(),
        key: stage_key(stage, &settings, &inputs),
        config_hash: cfg.config_hash(),
        seed,
        settings,
        inputs,
        outputs: hash_tree(dir)?,
    };
    write_json(&dir.join(MANIFEST), &m)?;
    Ok(m)
}

fn fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn timed<T>(what: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let out = f()?;
    log::info!("{what}: {:.2?}", t.elapsed());
    Ok(out)
}

/// Files named `split_<i>.<ext>` or `split_<i>` in `dir`, ordered by `i`.
fn numbered(dir: &Path, ext: Option<&str>) -> Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = e.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let stem = match ext {
            Some(x) => name.strip_suffix(&format!(".{x}")).map(str::to_string),
            None if path.is_dir() => Some(name.clone()),
            None => None,
        };
        if let Some(i) = stem.and_then(|s| s.strip_prefix("split_").and_then(|n| n.parse::<usize>().ok())) {
            out.push((i, path));
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::InvalidInput(format!("no split files in {}", dir.display())));
    }
    Ok(out)
}

/// Synthetic stream for run `seed`: `split_<i>.csv`, `labels.txt`,
/// `synth_meta.json`.
pub fn synth_stage(cfg: &RunConfig, seed: u64, out: &Path) -> Result<Manifest> {
    fresh_dir(out)?;
    let scfg = cfg.synth_for(seed);
    let data = generate(&scfg)?;
    write_synth(out, &data)?;
    log::info!("synthetic overlap per split pair: {:?}", data.meta.measured_overlap);
    seal(out, "synth", cfg, Some(seed), serde_json::to_value(&scfg)?, BTreeMap::new())
}

/// Parses, filters and block-splits `inputs` into `split_<i>.csv`, with the
/// cut points in `plan.json`.
pub fn ingest_stage(cfg: &RunConfig, inputs: &[PathBuf], out: &Path) -> Result<Manifest> {
    let input_hashes = hash_inputs("input", inputs)?;
    fresh_dir(out)?;
    let mut reports = Vec::new();
    let mut all = Vec::new();
    for p in inputs {
        let (txs, report) = parse_transactions(p, cfg.format, cfg.malformed_threshold)?;
        reports.push(report);
        all.extend(txs);
    }
    all.sort_by_key(|t| t.block_number);
    let kept = filter_transactions(all);
    let (plan, groups) = split_by_block(kept, cfg.n_splits)?;
    for (i, g) in groups.iter().enumerate() {
        write_csv(&out.join(format!("split_{}.csv", i + 1)), g)?;
    }
    write_json(&out.join("plan.json"), &plan)?;
    write_json(&out.join("parse.json"), &reports)?;
    let settings = json!({
        "format": cfg.format,
        "n_splits": cfg.n_splits,
        "malformed_threshold": cfg.malformed_threshold,
    });
    seal(out, "ingest", cfg, None, settings, input_hashes)
}

/// Finalizes every `split_<i>.csv` of an ingest directory into `split_<i>/`.
pub fn build_stage(cfg: &RunConfig, ingest_dir: &Path, out: &Path) -> Result<Manifest> {
    let inputs = upstream("ingest", ingest_dir)?;
    fresh_dir(out)?;
    for (i, path) in numbered(ingest_dir, Some("csv"))? {
        let txs = load_stream(&[&path], crate::ingest::InputFormat::Csv, 0.0)?;
        let g = finalize_split(i - 1, &txs)?;
        save_split(&g, &out.join(format!("split_{i}")))?;
    }
    seal(out, "build", cfg, None, json!({}), inputs)
}

pub fn load_splits(build_dir: &Path) -> Result<Vec<GraphSplit>> {
    numbered(build_dir, None)?.iter().map(|(_, p)| load_split(p)).collect()
}

/// Pretraining manifest: what was trained, on which splits, and where the
/// checkpoints are.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub mode: Protocol,
    pub ablation: String,
    /// Flat configuration the run was made with.
    pub config: String,
    /// Split directory names within the build directory, in training order.
    pub splits: Vec<String>,
    /// `params.bin` after each pretrained split, relative to the run
    /// directory.
    pub checkpoints: Vec<String>,
    pub heads: String,
    /// Handoff packets, keyed by receiving split directory name.
    pub handoffs: BTreeMap<String, String>,
    /// The split this run is evaluated on.
    pub eval_split: String,
}

impl RunManifest {
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        c.apply(&crate::config::parse_flat(&self.config)?)?;
        Ok(c)
    }
}

fn write_table(dir: &Path, table: &EmbeddingTable) -> Result<()> {
    let (emb, nodes) = table.to_files();
    write_file(&dir.join("emb.f32"), &emb)?;
    write_file(&dir.join("nodes.txt"), nodes.as_bytes())
}

fn read_table(dir: &Path, split_index: usize) -> Result<EmbeddingTable> {
    EmbeddingTable::from_files(split_index, &read_file(&dir.join("emb.f32"))?, &read_string(&dir.join("nodes.txt"))?)
}

/// Pretrains on the splits of `build_dir` that precede the evaluated one
/// and writes per-split checkpoints, embeddings, handoff packets and
/// `run.json`.
pub fn pretrain_stage(cfg: &RunConfig, seed: u64, build_dir: &Path, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let inputs = upstream("build", build_dir)?;
    let dirs = numbered(build_dir, None)?;
    let n_pre = cfg.mode.pretrain_splits();
    if dirs.len() <= n_pre {
        return Err(Error::InsufficientSplits { needed: n_pre + 1, got: dirs.len() });
    }
    let splits: Vec<GraphSplit> = dirs[..=n_pre].iter().map(|(_, p)| load_split(p)).collect::<Result<_>>()?;
    fresh_dir(out)?;
    let enc_cfg = cfg.encoder_config();
    let mut rng = stream_rng(seed, ENCODER_STREAM);
    let run = run_incremental(
        &splits[..n_pre],
        Some(&splits[n_pre]),
        cfg.mode == Protocol::Transductive,
        &enc_cfg,
        &mut rng,
    )?;
    let name = |g: &GraphSplit| format!("split_{}", g.split_index + 1);
    let mut checkpoints = Vec::new();
    for (rec, table) in run.records.iter().zip(&run.tables) {
        let d = format!("split_{}", rec.split_index + 1);
        write_file(&out.join(&d).join("params.bin"), &rec.end_params)?;
        write_table(&out.join(&d), table)?;
        checkpoints.push(format!("{d}/params.bin"));
    }
    let mut heads = run.heads.spatial.clone();
    for (n, t) in run.heads.temporal.iter() {
        heads.insert(n, t.clone());
    }
    write_file(&out.join("heads.bin"), &params_to_bytes(&heads))?;
    let mut handoffs = BTreeMap::new();
    let packets = run.handoffs.iter().chain(run.next_handoff.as_ref());
    for (pos, p) in packets.enumerate() {
        let dest = &splits[pos + 1];
        let d = format!("handoff_{}", dest.split_index + 1);
        let table = EmbeddingTable {
            split_index: p.source_split,
            node_ids: p.accounts.clone(),
            embeddings: p.embeddings.clone(),
        };
        if !p.is_empty() {
            write_table(&out.join(&d), &table)?;
        } else {
            fs::create_dir_all(out.join(&d)).map_err(|e| Error::io(out.join(&d), e))?;
        }
        handoffs.insert(name(dest), d);
    }
    let stats: Vec<_> = run.records.iter().map(|r| json!({
        "split": format!("split_{}", r.split_index + 1),
        "stats": r.stats,
        "overlap_ratio": r.overlap_ratio,
        "prefixed_nodes": r.prefixed_nodes,
    })).collect();
    write_json(&out.join("stats.json"), &stats)?;
    let manifest = RunManifest {
        config_hash: cfg.config_hash(),
        seed,
        mode: cfg.mode,
        ablation: cfg.variant().tag().to_string(),
        config: cfg.to_flat(),
        splits: dirs[..n_pre].iter().map(|(i, _)| format!("split_{i}")).collect(),
        checkpoints,
        heads: "heads.bin".into(),
        handoffs,
        eval_split: format!("split_{}", dirs[n_pre].0),
    };
    write_json(&out.join("run.json"), &manifest)?;
    let settings = json!({ "encoder": enc_cfg, "mode": cfg.mode, "seed": seed });
    seal(out, "pretrain", cfg, Some(seed), settings, inputs)
}

pub fn read_run(pretrain_dir: &Path) -> Result<RunManifest> {
    read_json(&pretrain_dir.join("run.json"))
}

/// Final encoder of a pretraining run.
pub fn load_encoder(pretrain_dir: &Path) -> Result<(EncoderState<f32>, IncrementalConfig)> {
    let run = read_run(pretrain_dir)?;
    let enc_cfg = run.run_config()?.encoder_config();
    let last = run
        .checkpoints
        .last()
        .ok_or_else(|| Error::InvalidInput("run has no checkpoints".into()))?;
    let params = params_from_bytes(&read_file(&pretrain_dir.join(last))?)?;
    Ok((EncoderState::from_params(params, enc_cfg.fanouts, enc_cfg.dropout)?, enc_cfg))
}

/// Frozen-encoder embeddings of the split in `graph_dir`, written as
/// `emb.f32` + `nodes.txt`.
pub fn embed_stage(pretrain_dir: &Path, graph_dir: &Path, out: &Path) -> Result<Manifest> {
    let mut inputs = upstream("pretrain", pretrain_dir)?;
    inputs.extend(hash_tree(graph_dir)?.into_iter().map(|(k, v)| (format!("graph/{k}"), v)));
    let run = read_run(pretrain_dir)?;
    let cfg = run.run_config()?;
    let (encoder, enc_cfg) = load_encoder(pretrain_dir)?;
    let split = load_split(graph_dir)?;
    let prefix = if enc_cfg.incremental {
        let dir_name = format!("split_{}", split.split_index + 1);
        let packet = match run.handoffs.get(&dir_name) {
            Some(d) if pretrain_dir.join(d).join("emb.f32").exists() => {
                let t = read_table(&pretrain_dir.join(d), split.split_index)?;
                Some(HandoffPacket {
                    source_split: t.split_index,
                    accounts: t.node_ids,
                    embeddings: t.embeddings,
                    checkpoint: Vec::new(),
                })
            }
            _ => None,
        };
        Some(prefix_matrix(&split, packet.as_ref(), enc_cfg.hidden_dim)?)
    } else {
        None
    };
    let source = match &prefix {
        Some(p) => FeatureSource::Concat { prefix: p, attrs: &split.attributes },
        None => FeatureSource::Plain(&split.attributes),
    };
    fresh_dir(out)?;
    let table = embed_split(&split, source, &encoder)?;
    write_table(out, &table)?;
    let settings = json!({ "split_index": split.split_index, "ablation": run.ablation });
    seal(out, "embed", &cfg, Some(run.seed), settings, inputs)
}

/// Feature rows a classifier is trained on.
pub enum Features<'a> {
    /// The normalized attributes of the splits themselves.
    Raw,
    /// Embedding directories of the evaluated split and, optionally, of the
    /// last pretrained split.
    Embedded { eval: &'a Path, previous: Option<&'a Path> },
}

fn aligned(table: EmbeddingTable, split: &GraphSplit) -> Result<Tensor<f32>> {
    if table.node_ids != split.node_ids {
        return Err(Error::InvalidInput(format!(
            "embeddings do not list the nodes of split {}",
            split.split_index + 1
        )));
    }
    Ok(table.embeddings)
}

/// Labels, trains and scores; writes `report.json` and `report.txt`.
#[allow(clippy::too_many_arguments)]
pub fn classify_stage(
    cfg: &RunConfig,
    seed: u64,
    build_dir: &Path,
    features: Features<'_>,
    labels: &Path,
    tag: &str,
    out: &Path,
) -> Result<MetricsReport> {
    let n_pre = cfg.mode.pretrain_splits();
    let dirs = numbered(build_dir, None)?;
    if dirs.len() <= n_pre {
        return Err(Error::InsufficientSplits { needed: n_pre + 1, got: dirs.len() });
    }
    let eval_split = load_split(&dirs[n_pre].1)?;
    let prev_split = load_split(&dirs[n_pre - 1].1)?;
    let phishing: BTreeSet<String> = read_labels(labels)?;
    let mut inputs = upstream("build", build_dir)?;
    inputs.extend(hash_inputs("labels", &[labels.to_path_buf()])?);
    let (x, prev) = match features {
        Features::Raw => (eval_split.attributes.clone(), Some(prev_split.attributes.clone())),
        Features::Embedded { eval, previous } => {
            inputs.extend(upstream("embedding", eval)?);
            let x = aligned(read_table(eval, eval_split.split_index)?, &eval_split)?;
            let prev = match previous {
                Some(p) => Some(aligned(read_table(p, prev_split.split_index)?, &prev_split)?),
                None => None,
            };
            (x, prev)
        }
    };
    let (report, _) = classify_split(
        &eval_split,
        &x,
        prev.as_ref().map(|p| (&prev_split, p)),
        &phishing,
        &cfg.protocol_config(),
        seed,
        tag,
    )?;
    fresh_dir(out)?;
    write_json(&out.join("report.json"), &report)?;
    let avg = AveragedReport::new(cfg.mode, tag, vec![report.clone()]);
    write_file(&out.join("report.txt"), format_table(&[avg]).as_bytes())?;
    let settings = json!({
        "classifier": cfg.classifier_config(),
        "mode": cfg.mode,
        "source": cfg.inductive_classifier_source,
        "tag": tag,
    });
    seal(out, "classify", cfg, Some(seed), settings, inputs)?;
    Ok(report)
}

/// Embeds the evaluated split with a pretraining run's encoder and
/// classifies it; the report carries the run's ablation tag.
pub fn eval_stage(cfg: &RunConfig, pretrain_dir: &Path, build_dir: &Path, labels: &Path, out: &Path) -> Result<MetricsReport> {
    let run = read_run(pretrain_dir)?;
    let n_pre = run.mode.pretrain_splits();
    let dirs = numbered(build_dir, None)?;
    if dirs.len() <= n_pre {
        return Err(Error::InsufficientSplits { needed: n_pre + 1, got: dirs.len() });
    }
    let emb_dir = out.join("embedding");
    embed_stage(pretrain_dir, &dirs[n_pre].1, &emb_dir)?;
    let prev_dir = pretrain_dir.join(format!("split_{}", dirs[n_pre - 1].0));
    let mut cfg = cfg.clone();
    cfg.mode = run.mode;
    let report = classify_stage(
        &cfg,
        run.seed,
        build_dir,
        Features::Embedded { eval: &emb_dir, previous: Some(&prev_dir) },
        labels,
        &run.ablation,
        &out.join("classify"),
    )?;
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

/// Where the transaction stream comes from.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// A fresh generated stream per seed.
    Synthetic,
    /// Transaction files and a phishing label file, shared by all seeds.
    Files { inputs: Vec<PathBuf>, labels: PathBuf },
}

/// Runs `f` into `<work>/<stage>-<key>` unless a directory with that key
/// already holds a manifest.
fn cached(
    work: &Path,
    stage: &str,
    settings: serde_json::Value,
    inputs: BTreeMap<String, String>,
    f: impl FnOnce(&Path) -> Result<()>,
) -> Result<PathBuf> {
    let key = stage_key(stage, &settings, &inputs);
    let dir = work.join(format!("{stage}-{}", &key[..16]));
    let marker = dir.join(CACHE_KEY);
    if dir.join(MANIFEST).exists() && read_string(&marker).is_ok_and(|k| k == key) {
        log::info!("{stage}: reusing {}", dir.display());
        return Ok(dir);
    }
    timed(&format!("{stage} -> {}", dir.display()), || f(&dir))?;
    write_file(&marker, key.as_bytes())?;
    Ok(dir)
}

/// Per-seed stage directories of one pipeline run, relative to the work
/// directory (the label file keeps its given path for file sources).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub ingest: PathBuf,
    pub build: PathBuf,
    pub labels: PathBuf,
    /// Pretraining directory per variant tag (absent for the raw baseline).
    pub pretrain: BTreeMap<String, PathBuf>,
    /// Report directory per variant tag.
    pub reports: BTreeMap<String, PathBuf>,
}

fn relative(work: &Path, p: &Path) -> PathBuf {
    p.strip_prefix(work).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf())
}

fn run_seed(cfg: &RunConfig, source: &DataSource, variants: &[Variant], work: &Path, seed: u64) -> Result<(SeedRun, Vec<MetricsReport>)> {
    let (inputs, labels) = match source {
        DataSource::Synthetic => {
            let scfg = cfg.synth_for(seed);
            let dir = cached(work, "synth", serde_json::to_value(&scfg)?, BTreeMap::new(), |d| {
                synth_stage(cfg, seed, d).map(drop)
            })?;
            let csvs = numbered(&dir, Some("csv"))?.into_iter().map(|(_, p)| p).collect();
            (csvs, dir.join("labels.txt"))
        }
        DataSource::Files { inputs, labels } => (inputs.clone(), labels.clone()),
    };
    let ingest_settings = json!({
        "format": cfg.format,
        "n_splits": cfg.n_splits,
        "malformed_threshold": cfg.malformed_threshold,
    });
    let ingest = cached(work, "ingest", ingest_settings, hash_inputs("input", &inputs)?, |d| {
        ingest_stage(cfg, &inputs, d).map(drop)
    })?;
    let build = cached(work, "build", json!({}), upstream("ingest", &ingest)?, |d| {
        build_stage(cfg, &ingest, d).map(drop)
    })?;

    let mut run = SeedRun {
        seed,
        ingest: relative(work, &ingest),
        build: relative(work, &build),
        labels: relative(work, &labels),
        pretrain: BTreeMap::new(),
        reports: BTreeMap::new(),
    };
    let label_hash = hash_inputs("labels", &[labels.clone()])?;
    let mut reports = Vec::new();
    for &v in variants {
        let vcfg = cfg.with_variant(v);
        let mut eval_inputs = upstream("build", &build)?;
        eval_inputs.extend(label_hash.clone());
        let clf_settings = json!({
            "classifier": vcfg.classifier_config(),
            "mode": vcfg.mode,
            "source": vcfg.inductive_classifier_source,
            "seed": seed,
            "tag": v.tag(),
        });
        let dir = if v == Variant::RawFeatures {
            cached(work, "classify", clf_settings, eval_inputs, |d| {
                classify_stage(&vcfg, seed, &build, Features::Raw, &labels, v.tag(), d).map(drop)
            })?
        } else {
            let settings = json!({ "encoder": vcfg.encoder_config(), "mode": vcfg.mode, "seed": seed });
            let pre = cached(work, "pretrain", settings, upstream("build", &build)?, |d| {
                pretrain_stage(&vcfg, seed, &build, d).map(drop)
            })?;
            eval_inputs.extend(upstream("pretrain", &pre)?);
            let dir = cached(work, "eval", clf_settings, eval_inputs, |d| {
                fresh_dir(d)?;
                eval_stage(&vcfg, &pre, &build, &labels, d)?;
                seal(d, "eval", &vcfg, Some(seed), json!({ "tag": v.tag() }), upstream("pretrain", &pre)?).map(drop)
            })?;
            run.pretrain.insert(v.tag().to_string(), relative(work, &pre));
            dir
        };
        let report: MetricsReport = read_json(&dir.join("report.json"))?;
        run.reports.insert(v.tag().to_string(), relative(work, &dir));
        reports.push(report);
    }
    Ok((run, reports))
}

/// Top-level `run.json` of a pipeline invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub config_hash: String,
    pub seed: u64,
    pub seeds: usize,
    pub config: String,
    pub runs: Vec<SeedRun>,
    /// Averaged report file per variant tag, relative to the work directory.
    pub reports: BTreeMap<String, PathBuf>,
}

/// Every stage for seeds `cfg.seed .. cfg.seed + cfg.seeds` and every
/// variant, then per-variant averages in `report_<tag>.json` and an aligned
/// table in `report.txt`.
pub fn run_pipeline(cfg: &RunConfig, source: &DataSource, variants: &[Variant], work: &Path) -> Result<Vec<AveragedReport>> {
    cfg.validate()?;
    fs::create_dir_all(work).map_err(|e| Error::io(work, e))?;
    let seeds: Vec<u64> = (0..cfg.seeds as u64).map(|i| cfg.seed + i).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let per_seed: Vec<(SeedRun, Vec<MetricsReport>)> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| run_seed(cfg, source, variants, work, s))
            .collect::<Result<_>>()
    })?;
    let mut averaged = Vec::new();
    let mut report_files = BTreeMap::new();
    for (i, v) in variants.iter().enumerate() {
        let runs = per_seed.iter().map(|(_, r)| r[i].clone()).collect();
        let avg = AveragedReport::new(cfg.mode, v.tag(), runs).rounded();
        let path = work.join(format!("report_{}.json", v.tag()));
        write_json(&path, &avg)?;
        report_files.insert(v.tag().to_string(), relative(work, &path));
        averaged.push(avg);
    }
    write_file(&work.join("report.txt"), format_table(&averaged).as_bytes())?;
    let manifest = PipelineManifest {
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
        seeds: cfg.seeds,
        config: cfg.to_flat(),
        runs: per_seed.into_iter().map(|(r, _)| r).collect(),
        reports: report_files,
    };
    write_json(&work.join("run.json"), &manifest)?;
    Ok(averaged)
}
