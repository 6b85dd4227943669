use std::path::PathBuf;
use std::sync::LazyLock;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use siege_core::config::{parse_flat, RunConfig};
use siege_core::downstream::{format_table, Variant};
use siege_core::pipeline::{self, DataSource, Features};

static DEFAULTS: LazyLock<String> = LazyLock::new(|| {
    format!(
        "Configuration keys and defaults (override with --config FILE, then --set KEY=VALUE or a flag):\n\n{}",
        RunConfig::default().to_flat()
    )
});

#[derive(Parser, Debug)]
#[command(name = "siege", version, about = "Incremental self-supervised embeddings of transaction-graph splits", after_help = DEFAULTS.as_str())]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

/// Settings shared by every subcommand. Precedence: defaults < `--config`
/// file < `--set` < dedicated flags.
#[derive(Args, Debug, Default)]
pub struct Overrides {
    /// Flat key=value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set synth.decoy_ratio=8`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of independent runs (seeds seed, seed+1, ...).
    #[arg(long, global = true)]
    pub seeds: Option<usize>,
    /// Worker threads for independent runs [default: 1].
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// transductive or inductive.
    #[arg(long, global = true)]
    pub mode: Option<String>,
    #[arg(long, global = true)]
    pub no_incremental: bool,
    #[arg(long, global = true)]
    pub no_spatial: bool,
    #[arg(long, global = true)]
    pub no_temporal: bool,
    /// raw or log.
    #[arg(long, global = true)]
    pub spatial_loss: Option<String>,
    /// Zero-prefixed first split so every split shares one input width.
    #[arg(long, global = true, value_name = "BOOL")]
    pub uniform_width: Option<bool>,
    /// self or previous.
    #[arg(long, global = true)]
    pub inductive_classifier_source: Option<String>,
    #[arg(long, global = true)]
    pub hidden_dim: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub epochs_spatial: Option<usize>,
    #[arg(long, global = true)]
    pub epochs_temporal: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    /// Input format: csv or jsonl.
    #[arg(long, global = true)]
    pub format: Option<String>,
    #[arg(long, global = true)]
    pub n_splits: Option<usize>,
    #[arg(long, global = true)]
    pub malformed_threshold: Option<f64>,
}

impl Overrides {
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p).with_context(|| format!("reading {}", p.display()))?,
            None => RunConfig::default(),
        };
        let sets: Vec<String> = self.set.iter().map(|s| s.replace('\n', "")).collect();
        cfg.apply(&parse_flat(&sets.join("\n"))?)?;
        let mut pairs: Vec<(&str, String)> = Vec::new();
        let mut opt = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                pairs.push((k, v));
            }
        };
        opt("seed", self.seed.map(|v| v.to_string()));
        opt("seeds", self.seeds.map(|v| v.to_string()));
        opt("threads", self.threads.map(|v| v.to_string()));
        opt("mode", self.mode.clone());
        opt("spatial_loss_form", self.spatial_loss.clone());
        opt("uniform_width", self.uniform_width.map(|v| v.to_string()));
        opt("inductive_classifier_source", self.inductive_classifier_source.clone());
        opt("hidden_dim", self.hidden_dim.map(|v| v.to_string()));
        opt("lr", self.lr.map(|v| v.to_string()));
        opt("epochs_spatial", self.epochs_spatial.map(|v| v.to_string()));
        opt("epochs_temporal", self.epochs_temporal.map(|v| v.to_string()));
        opt("batch_size", self.batch_size.map(|v| v.to_string()));
        opt("format", self.format.clone());
        opt("n_splits", self.n_splits.map(|v| v.to_string()));
        opt("malformed_threshold", self.malformed_threshold.map(|v| v.to_string()));
        for (flag, key) in [
            (self.no_incremental, "no_incremental"),
            (self.no_spatial, "no_spatial"),
            (self.no_temporal, "no_temporal"),
        ] {
            if flag {
                pairs.push((key, "true".into()));
            }
        }
        for (k, v) in pairs {
            cfg.set(k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic stream with planted phishing motifs.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse, filter and block-split transaction files.
    Ingest {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build finalized split graphs from an ingest directory.
    Build {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the encoder on the splits before the evaluated one.
    Pretrain {
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed one split with a pretrained encoder.
    Embed {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and score the phishing classifier; raw attributes unless
    /// embeddings are given.
    Classify {
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Embeddings of the last pretrained split, for `--inductive-classifier-source previous`.
        #[arg(long)]
        previous: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed the evaluated split with a pretraining run and classify it.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Every stage, for every seed, with averaged reports.
    Pipeline {
        #[arg(long)]
        work: PathBuf,
        /// Generate a fresh synthetic stream per seed.
        #[arg(long, conflicts_with_all = ["input", "labels"])]
        synthetic: bool,
        #[arg(long, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Also score the raw-attribute baseline.
        #[arg(long)]
        baseline: bool,
        /// Run the full model, every ablation and the baseline.
        #[arg(long)]
        all_variants: bool,
    },
    /// Print the effective configuration.
    Config,
}

fn stage<T>(name: &str, f: impl FnOnce() -> anyhow::Result<T>) -> anyhow::Result<T> {
    let t = Instant::now();
    let out = f().with_context(|| format!("{name} failed"))?;
    log::info!("stage {name} done in {:.2?}", t.elapsed());
    Ok(out)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = cli.overrides.resolve()?;
    match cli.command {
        Command::Synth { out } => {
            stage("synth", || Ok(pipeline::synth_stage(&cfg, cfg.seed, &out)?))?;
        }
        Command::Ingest { input, out } => {
            stage("ingest", || Ok(pipeline::ingest_stage(&cfg, &input, &out)?))?;
        }
        Command::Build { input, out } => {
            stage("build", || Ok(pipeline::build_stage(&cfg, &input, &out)?))?;
        }
        Command::Pretrain { graphs, out } => {
            stage("pretrain", || Ok(pipeline::pretrain_stage(&cfg, cfg.seed, &graphs, &out)?))?;
        }
        Command::Embed { run, graph, out } => {
            stage("embed", || Ok(pipeline::embed_stage(&run, &graph, &out)?))?;
        }
        Command::Classify { graphs, labels, embeddings, previous, out } => {
            let (features, tag) = match &embeddings {
                Some(e) => (Features::Embedded { eval: e, previous: previous.as_deref() }, cfg.variant().tag()),
                None => (Features::Raw, Variant::RawFeatures.tag()),
            };
            let r = stage("classify", || Ok(pipeline::classify_stage(&cfg, cfg.seed, &graphs, features, &labels, tag, &out)?))?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Command::Eval { run, graphs, labels, out } => {
            let r = stage("eval", || Ok(pipeline::eval_stage(&cfg, &run, &graphs, &labels, &out)?))?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Command::Pipeline { work, synthetic, input, labels, baseline, all_variants } => {
            let source = if synthetic {
                DataSource::Synthetic
            } else {
                match labels {
                    Some(l) if !input.is_empty() => DataSource::Files { inputs: input, labels: l },
                    _ => bail!("pipeline needs --synthetic or both --input and --labels"),
                }
            };
            let variants = if all_variants {
                Variant::ALL.to_vec()
            } else if baseline {
                vec![cfg.variant(), Variant::RawFeatures]
            } else {
                vec![cfg.variant()]
            };
            let reports = stage("pipeline", || Ok(pipeline::run_pipeline(&cfg, &source, &variants, &work)?))?;
            print!("{}", format_table(&reports));
        }
        Command::Config => print!("{}", cfg.to_flat()),
    }
    Ok(())
}
