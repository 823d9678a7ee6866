//! Command-line front end. Every subcommand echoes its resolved flags into
//! its output and re-loads every file it writes before reporting success.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use skillgraph_core::community::{analyze, complementarity};
use skillgraph_core::embeddings::{QueryTable, DEFAULT_DIMENSION};
use skillgraph_core::metrics::{Metric, Resampling};
use skillgraph_core::rerank::train::train;
use skillgraph_core::rerank::{FeatureGroup, FeatureMask, PairwiseModel, Stage2Method, TrainingConfig, DEFAULT_HYBRID_ALPHA};
use skillgraph_core::synthetic::{self, ChainPlan, WorkflowSpec};
use skillgraph_core::{BuiltinEncoder, EmbeddingStore, QueryEncoder, RetrievalConfig, SkillGraph, ToolId, TrajectoryDataset};

use crate::error::{Error, Result};
use crate::eval::{InstanceOutcome, KMode, Pipeline};
use crate::formats;
use crate::report::{bootstrap_rows, CommunityDocument, EvaluationReport, InstanceRecord, MethodSummary};

#[derive(Debug, Parser)]
#[command(name = "skillgraph", version, about = "Tool-transition graphs and ordered tool recommendation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic workflow corpus.
    Generate(GenerateArgs),
    /// Build a transition graph from trajectories.
    BuildGraph(BuildGraphArgs),
    /// Detect communities and score them against category labels.
    Communities(CommunitiesArgs),
    /// Train the pairwise reranker.
    Train(TrainArgs),
    /// Score a Stage-2 method on a test set.
    Evaluate(EvaluateArgs),
    /// Print an ordered tool list for one query.
    Recommend(RecommendArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChainStyle {
    Cyclic,
    Linear,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub domains: usize,
    #[arg(long, default_value_t = 13)]
    pub tools_per_domain: usize,
    #[arg(long, value_enum, default_value_t = ChainStyle::Cyclic)]
    pub chain_style: ChainStyle,
    #[arg(long, default_value_t = 6)]
    pub chains_per_domain: usize,
    #[arg(long, default_value_t = 4)]
    pub chain_length: usize,
    /// Share of training trajectories per chain with one adjacent swap.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 40)]
    pub trajectories_per_chain: usize,
    #[arg(long, default_value_t = 10)]
    pub test_queries_per_chain: usize,
    /// Describe tools so semantic similarity runs against execution order.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub invert_order: bool,
    /// Probability that a query mentions each of its chain's task words.
    #[arg(long, default_value_t = 1.0)]
    pub task_word_rate: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

impl GenerateArgs {
    pub fn spec(&self) -> WorkflowSpec {
        let (per_domain, length) = (self.chains_per_domain, self.chain_length);
        WorkflowSpec {
            domain_count: self.domains,
            tools_per_domain: self.tools_per_domain,
            chains: match self.chain_style {
                ChainStyle::Cyclic => ChainPlan::Cyclic { per_domain, length },
                ChainStyle::Linear => ChainPlan::Linear { per_domain, length },
            },
            query_template_noise: self.noise,
            trajectories_per_chain: self.trajectories_per_chain,
            test_queries_per_chain: self.test_queries_per_chain,
            invert_order: self.invert_order,
            task_word_rate: self.task_word_rate,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BuildGraphArgs {
    #[arg(long)]
    pub trajectories: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Tool vectors from descriptions (builtin encoder) or from an embedding
/// file.
#[derive(Debug, Clone, Args, Serialize)]
pub struct EmbedderArgs {
    /// `{id, text}` lines encoded with the builtin encoder.
    #[arg(long, conflicts_with = "embeddings")]
    pub descriptions: Option<PathBuf>,
    /// `{id, vector}` lines of precomputed tool vectors.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// `{id, vector}` lines keyed by query text, for use with `--embeddings`.
    #[arg(long, requires = "embeddings")]
    pub query_embeddings: Option<PathBuf>,
    /// Builtin encoder dimension.
    #[arg(long, default_value_t = DEFAULT_DIMENSION)]
    pub dimension: usize,
}

pub struct Embedder {
    pub store: EmbeddingStore,
    pub encoder: Option<Box<dyn QueryEncoder + Sync + Send>>,
}

impl Embedder {
    fn encoder(&self) -> Result<&(dyn QueryEncoder + Sync)> {
        match &self.encoder {
            Some(e) => Ok(e.as_ref()),
            None => Err(Error::usage("--embeddings needs --query-embeddings to encode queries")),
        }
    }
}

impl EmbedderArgs {
    fn given(&self) -> bool {
        self.descriptions.is_some() || self.embeddings.is_some()
    }

    pub fn load(&self) -> Result<Embedder> {
        match (&self.descriptions, &self.embeddings) {
            (Some(path), _) => {
                let builtin = BuiltinEncoder::new(self.dimension).map_err(|e| Error::usage(e.to_string()))?;
                let descriptions = formats::load_descriptions(path)?;
                let store = EmbeddingStore::from_descriptions(&builtin, descriptions.iter().map(|(id, t)| (id, t.as_str())))
                    .map_err(|e| Error::content(path, e))?;
                Ok(Embedder {
                    store,
                    encoder: Some(Box::new(builtin)),
                })
            }
            (None, Some(path)) => {
                let store = formats::load_embeddings(path, None)?;
                let encoder = match &self.query_embeddings {
                    Some(q) => {
                        let table = formats::load_embeddings(q, Some(store.dimension()))?;
                        Some(Box::new(QueryTable::new(table)) as Box<dyn QueryEncoder + Sync + Send>)
                    }
                    None => None,
                };
                Ok(Embedder { store, encoder })
            }
            (None, None) => Err(Error::usage("one of --descriptions or --embeddings is required")),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CommunitiesArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// `{tool, category}` lines.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optional tool vectors for the transition/similarity correlation.
    #[command(flatten)]
    pub embedder: EmbedderArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub trajectories: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    #[command(flatten)]
    pub embedder: EmbedderArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 2048)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 30)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long, default_value_t = 0.05)]
    pub validation_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl TrainArgs {
    pub fn config(&self) -> TrainingConfig {
        TrainingConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            validation_fraction: self.validation_fraction,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RetrievalArgs {
    /// Semantic pool size is `max(k + 2, multiplier · k)`.
    #[arg(long, default_value_t = 3)]
    pub pool_multiplier: usize,
    /// Transition weight in Stage-1 sequencing.
    #[arg(long, default_value_t = 0.5)]
    pub retrieval_alpha: f64,
    /// Position bonus weight in Stage-1 sequencing.
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
    #[arg(long, default_value_t = 2)]
    pub max_bridges: usize,
    #[arg(long, default_value_t = 3)]
    pub bridge_path_limit: usize,
}

impl RetrievalArgs {
    pub fn config(&self) -> Result<RetrievalConfig> {
        let config = RetrievalConfig {
            pool_multiplier: self.pool_multiplier,
            alpha: self.retrieval_alpha,
            gamma: self.gamma,
            max_bridges: self.max_bridges,
            bridge_path_limit: self.bridge_path_limit,
        };
        config.validate().map_err(|e| Error::usage(e.to_string()))?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    SemSort,
    Hybrid,
    OptPerm,
    Lr,
}

impl MethodArg {
    pub fn resolve(self, hybrid_alpha: f64) -> Stage2Method {
        match self {
            MethodArg::SemSort => Stage2Method::SemSort,
            MethodArg::Hybrid => Stage2Method::Hybrid { alpha: hybrid_alpha },
            MethodArg::OptPerm => Stage2Method::OptPerm,
            MethodArg::Lr => Stage2Method::Learned,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblateArg {
    Semantic,
    Graph,
    Position,
}

impl AblateArg {
    fn group(self) -> FeatureGroup {
        match self {
            AblateArg::Semantic => FeatureGroup::Semantic,
            AblateArg::Graph => FeatureGroup::Graph,
            AblateArg::Position => FeatureGroup::Position,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Stage2Args {
    #[arg(long, value_enum, default_value_t = MethodArg::Lr)]
    pub stage2: MethodArg,
    /// Transition weight of the hybrid reranker.
    #[arg(long, default_value_t = DEFAULT_HYBRID_ALPHA)]
    pub hybrid_alpha: f64,
    /// Trained model, required by `lr`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Feature groups zeroed at inference (learned reranker only).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub ablate: Vec<AblateArg>,
}

impl Stage2Args {
    fn mask(&self) -> FeatureMask {
        FeatureMask::zeroing(self.ablate.iter().map(|a| a.group()))
    }

    fn check_alpha(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.hybrid_alpha) {
            Ok(())
        } else {
            Err(Error::usage("--hybrid-alpha must lie in [0, 1]"))
        }
    }

    fn load_model(&self, needed: bool) -> Result<Option<PairwiseModel>> {
        match (&self.model, needed) {
            (Some(path), _) => formats::load_model(path).map(Some),
            (None, true) => Err(Error::usage("the learned reranker needs --model")),
            (None, false) => Ok(None),
        }
    }
}

fn parse_k(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("k must be at least 1".into()),
        Ok(k) => Ok(k),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_k_mode(s: &str) -> std::result::Result<KMode, String> {
    s.parse()
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    /// Test trajectories; each query's gold sequence is its tool list.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    #[command(flatten)]
    pub embedder: EmbedderArgs,
    #[command(flatten)]
    pub stage2: Stage2Args,
    /// `oracle` for `max(gold length, 3)` or `fixed:<n>`.
    #[arg(long, default_value = "oracle", value_parser = parse_k_mode)]
    #[serde(serialize_with = "serialize_display")]
    pub k: KMode,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    /// Baselines compared by paired bootstrap, scored without ablation on
    /// the same candidate sets.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub bootstrap_against: Vec<MethodArg>,
    #[arg(long, default_value_t = skillgraph_core::metrics::DEFAULT_BOOTSTRAP_ITERATIONS)]
    pub bootstrap_iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub bootstrap_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-instance scores, one line per instance and method.
    #[arg(long)]
    pub instances: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RecommendArgs {
    #[arg(long)]
    pub query: String,
    #[arg(long)]
    pub graph: PathBuf,
    #[command(flatten)]
    pub embedder: EmbedderArgs,
    #[command(flatten)]
    pub stage2: Stage2Args,
    #[arg(long, value_parser = parse_k)]
    pub k: usize,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
}

fn serialize_display<T: std::fmt::Display, S: serde::Serializer>(value: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(value)
}

fn echo<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).expect("arguments serialize")
}

/// Re-reads `path` with `load` and checks it reproduces `expected`.
fn verify<T: PartialEq>(path: &Path, expected: &T, load: impl FnOnce(&Path) -> Result<T>) -> Result<()> {
    if load(path)? == *expected {
        Ok(())
    } else {
        Err(Error::content(
            path,
            skillgraph_core::Error::Integrity("file does not reproduce its contents on re-load".into()),
        ))
    }
}

fn pairs(dataset: &TrajectoryDataset) -> Vec<(String, Vec<ToolId>)> {
    dataset.iter().map(|t| (t.query().to_owned(), t.tools().to_vec())).collect()
}

fn load_dataset(path: &Path) -> Result<TrajectoryDataset> {
    let assembled = formats::load_trajectories(path)?;
    if assembled.skipped_empty > 0 {
        warn!("{}: skipped {} records with no tools", path.display(), assembled.skipped_empty);
    }
    Ok(assembled.dataset)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => generate(&args),
        Command::BuildGraph(args) => build_graph(&args),
        Command::Communities(args) => communities(&args),
        Command::Train(args) => train_model(&args),
        Command::Evaluate(args) => evaluate(&args),
        Command::Recommend(args) => recommend(&args),
    }
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let spec = args.spec();
    spec.validate().map_err(|e| Error::usage(e.to_string()))?;
    let corpus = synthetic::generate(&spec)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let dir = &args.out_dir;

    let (train, test) = (dir.join("train.jsonl"), dir.join("test.jsonl"));
    let (labels, descriptions) = (dir.join("labels.jsonl"), dir.join("descriptions.jsonl"));
    formats::save_trajectories(&train, &corpus.train)?;
    formats::save_trajectories(&test, &corpus.test)?;
    formats::save_labels(&labels, &corpus.labels)?;
    formats::save_descriptions(&descriptions, &corpus.descriptions)?;

    let manifest = dir.join("corpus.json");
    let chains: Vec<Vec<&str>> = corpus.chains.iter().map(|c| c.iter().map(ToolId::as_str).collect()).collect();
    let document = serde_json::json!({
        "config": echo(args),
        "train_trajectories": corpus.train.len(),
        "test_trajectories": corpus.test.len(),
        "tools": corpus.labels.len(),
        "chains": chains,
    });
    formats::save_json(&manifest, &document)?;

    verify(&train, &pairs(&corpus.train), |p| Ok(pairs(&load_dataset(p)?)))?;
    verify(&test, &pairs(&corpus.test), |p| Ok(pairs(&load_dataset(p)?)))?;
    verify(&labels, &corpus.labels, formats::load_labels)?;
    verify(&descriptions, &corpus.descriptions, formats::load_descriptions)?;
    verify(&manifest, &document, formats::load_json)?;
    println!(
        "train {} test {} tools {} chains {}",
        corpus.train.len(),
        corpus.test.len(),
        corpus.labels.len(),
        corpus.chains.len()
    );
    Ok(())
}

pub fn build_graph(args: &BuildGraphArgs) -> Result<()> {
    let dataset = load_dataset(&args.trajectories)?;
    let graph = SkillGraph::build(&dataset).map_err(|e| Error::content(&args.trajectories, e))?;
    formats::save_graph(&args.out, &graph)?;
    verify(&args.out, &graph, formats::load_graph)?;
    println!("nodes {} edges {}", graph.node_count(), graph.edge_count());
    Ok(())
}

pub fn communities(args: &CommunitiesArgs) -> Result<()> {
    let graph = formats::load_graph(&args.graph)?;
    let labels = formats::load_labels(&args.labels)?;
    let (partition, report) = analyze(&graph, &labels, args.seed).map_err(|e| Error::content(&args.labels, e))?;
    let correlation = if args.embedder.given() {
        let embedder = args.embedder.load()?;
        Some(complementarity(&graph, &embedder.store)?)
    } else {
        None
    };
    let document = CommunityDocument::new(echo(args), &partition, report, correlation);
    formats::save_json(&args.out, &document)?;
    verify(&args.out, &document, formats::load_json)?;
    println!(
        "communities {} modularity {:.4} purity {:.4} nmi {:.4}",
        document.community_count, document.modularity, document.mean_purity, document.nmi
    );
    Ok(())
}

pub fn train_model(args: &TrainArgs) -> Result<()> {
    let dataset = load_dataset(&args.trajectories)?;
    let graph = formats::load_graph(&args.graph)?;
    let embedder = args.embedder.load()?;
    let config = args.config();
    if config.batch_size == 0 || config.max_epochs == 0 {
        return Err(Error::usage("--batch-size and --max-epochs must be positive"));
    }
    let outcome = train(&dataset, &graph, &embedder.store, embedder.encoder()?, &config)?;
    for record in &outcome.history {
        info!(
            "epoch {} train loss {:.6} validation loss {:.6}",
            record.epoch, record.train_loss, record.validation_loss
        );
    }
    formats::save_model(&args.out, &outcome.model)?;
    verify(&args.out, &outcome.model, formats::load_model)?;
    println!(
        "pairs {} validation {} epochs {} best {}",
        outcome.train_pairs,
        outcome.validation_pairs,
        outcome.history.len(),
        outcome.best_epoch
    );
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    args.stage2.check_alpha()?;
    if args.bootstrap_iterations == 0 {
        return Err(Error::usage("--bootstrap-iterations must be positive"));
    }
    let retrieval = args.retrieval.config()?;
    let uses_model = args.stage2.stage2 == MethodArg::Lr || args.bootstrap_against.contains(&MethodArg::Lr);
    let model = args.stage2.load_model(uses_model)?;
    let test = load_dataset(&args.test)?;
    let graph = formats::load_graph(&args.graph)?;
    let embedder = args.embedder.load()?;
    let pipeline = Pipeline {
        graph: &graph,
        embeddings: &embedder.store,
        encoder: embedder.encoder()?,
        retrieval,
    };

    let candidates = pipeline.retrieve_all(&test, args.k)?;
    let alpha = args.stage2.hybrid_alpha;
    let mut arms: Vec<(String, FeatureMask)> = vec![(args.stage2.stage2.resolve(alpha).name().to_owned(), args.stage2.mask())];
    let mut outcomes: Vec<Vec<InstanceOutcome>> = vec![pipeline.evaluate(
        &test,
        &candidates,
        args.stage2.stage2.resolve(alpha),
        model.as_ref(),
        args.stage2.mask(),
    )?];
    for baseline in &args.bootstrap_against {
        let method = baseline.resolve(alpha);
        arms.push((method.name().to_owned(), FeatureMask::none()));
        outcomes.push(pipeline.evaluate(&test, &candidates, method, model.as_ref(), FeatureMask::none())?);
    }

    let scores: Vec<Vec<_>> = outcomes.iter().map(|o| o.iter().map(|i| i.score).collect()).collect();
    let methods = arms
        .iter()
        .zip(&scores)
        .map(|((name, mask), s)| MethodSummary::new(name, mask.groups().map(|g| g.name().to_owned()).collect(), s))
        .collect::<skillgraph_core::Result<Vec<_>>>()?;
    let resampling = Resampling::Random {
        iterations: args.bootstrap_iterations,
        seed: args.bootstrap_seed,
    };
    let mut bootstrap = Vec::new();
    for ((name, _), baseline_scores) in arms.iter().zip(&scores).skip(1) {
        bootstrap.extend(bootstrap_rows(name, &scores[0], baseline_scores, resampling)?);
    }
    let report = EvaluationReport {
        config: echo(args),
        instances: test.len(),
        methods,
        bootstrap,
    };
    formats::save_json(&args.out, &report)?;
    verify(&args.out, &report, formats::load_json)?;

    if let Some(path) = &args.instances {
        let records: Vec<InstanceRecord> = arms
            .iter()
            .zip(&outcomes)
            .flat_map(|((name, _), o)| o.iter().map(move |i| InstanceRecord::new(name, i)))
            .collect();
        formats::save_jsonl(path, &records)?;
        verify(path, &records, formats::load_jsonl)?;
    }

    let tau = Metric::KendallTau;
    for summary in &report.methods {
        println!(
            "{} tau {:.4} set-f1 {:.4} n {}",
            summary.method,
            summary.mean(tau),
            summary.mean(Metric::SetF1),
            summary.overall.count
        );
    }
    for row in report.bootstrap.iter().filter(|r| r.metric == tau.name()) {
        println!("vs {} tau p {:.4}", row.baseline, row.p_value);
    }
    Ok(())
}

pub fn recommend(args: &RecommendArgs) -> Result<()> {
    args.stage2.check_alpha()?;
    let retrieval = args.retrieval.config()?;
    let model = args.stage2.load_model(args.stage2.stage2 == MethodArg::Lr)?;
    let graph = formats::load_graph(&args.graph)?;
    let embedder = args.embedder.load()?;
    let pipeline = Pipeline {
        graph: &graph,
        embeddings: &embedder.store,
        encoder: embedder.encoder()?,
        retrieval,
    };
    let sequence = pipeline.recommend(
        &args.query,
        args.k,
        args.stage2.stage2.resolve(args.stage2.hybrid_alpha),
        model.as_ref(),
        args.stage2.mask(),
    )?;
    for tool in sequence {
        println!("{tool}");
    }
    Ok(())
}
