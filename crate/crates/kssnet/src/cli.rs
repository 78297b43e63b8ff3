//! Command-line surface. Every subcommand prints `key=value` lines except
//! `evaluate`, which prints the metric table.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use kssnet_core::graph::{build_ks_graph, edge_set, AdjacencyMatrix, GraphPipelineConfig, NormalizationPlacement};
use kssnet_core::gradcheck::{check_component, Component};
use kssnet_core::ingest::build_initial_embeddings;
use kssnet_core::metrics::{map_score, prf_suite, DecisionRule, ScoreMatrix};
use kssnet_core::model::scaled_channel_schedule;
use kssnet_core::train::predict;
use kssnet_core::Matrix;

use crate::config::{GraphKind, RunConfig};
use crate::error::{Error, Result};
use crate::experiment;
use crate::io;

#[derive(Debug, Parser)]
#[command(name = "kssnet", version, about = "Knowledge-and-statistics label graphs for multi-label recognition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the KS graph from annotations and knowledge edges.
    BuildGraph(BuildGraphArgs),
    /// Summarize an adjacency file, or print a resolved run config.
    Inspect(InspectArgs),
    /// Finite-difference check of every backward pass.
    Gradcheck(GradcheckArgs),
    /// Train the toy model on the synthetic planted-co-occurrence dataset.
    TrainToy(TrainToyArgs),
    /// Print mAP, CP, CR, CF1, OP, OR, OF1 for a score file or a checkpoint.
    Evaluate(EvaluateArgs),
    /// Build the initial label embeddings from a word-vector table.
    Embed(EmbedArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    Coco,
    Charades,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Placement {
    AfterIdentityMix,
    AfterSuperimpose,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum MatrixFormat {
    Text,
    Binary,
}

/// Graph hyperparameters; explicit values override the preset.
#[derive(Debug, Clone, Args)]
pub struct GraphArgs {
    /// Hyperparameter preset.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Statistical-graph weight λ in [0, 1].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Edge threshold τ ≥ 0.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Identity-mix weight η in [0, 1].
    #[arg(long)]
    pub eta: Option<f64>,
    /// Conditional-probability binarization cut t in [0, 1].
    #[arg(long)]
    pub binarize_threshold: Option<f64>,
    /// Where the second normalization happens.
    #[arg(long, value_enum)]
    pub normalization: Option<Placement>,
}

impl GraphArgs {
    fn apply(&self, base: GraphPipelineConfig) -> Result<GraphPipelineConfig> {
        let mut c = match self.preset {
            Some(Preset::Coco) => GraphPipelineConfig::COCO,
            Some(Preset::Charades) => GraphPipelineConfig::CHARADES,
            None => base,
        };
        c.lambda = self.lambda.unwrap_or(c.lambda);
        c.tau = self.tau.unwrap_or(c.tau);
        c.eta = self.eta.unwrap_or(c.eta);
        c.binarize_threshold = self.binarize_threshold.unwrap_or(c.binarize_threshold);
        if let Some(p) = self.normalization {
            c.normalization = match p {
                Placement::AfterIdentityMix => NormalizationPlacement::AfterIdentityMix,
                Placement::AfterSuperimpose => NormalizationPlacement::AfterSuperimpose,
            };
        }
        c.validate().map_err(|e| Error::Validation(format!("--{}", flag_of(&e, &e.to_string()))))?;
        Ok(c)
    }
}

/// Rewrites a core parameter error so it names the command-line flag.
fn flag_of(err: &kssnet_core::Error, text: &str) -> String {
    match err {
        kssnet_core::Error::InvalidParameter { name, .. } => format!("{}: {text}", name.replace('_', "-")),
        _ => text.to_string(),
    }
}

#[derive(Debug, Args)]
pub struct BuildGraphArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub knowledge: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[command(flatten)]
    pub graph: GraphArgs,
    /// Destination of the normalized graph A_KS'.
    #[arg(long)]
    pub out: PathBuf,
    /// Destination of the unnormalized A_KS [default: <out>.raw].
    #[arg(long)]
    pub out_raw: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: MatrixFormat,
    /// Also write the summary to this file.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

/// Run-config sources shared by commands that build the toy model.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Flat `key = value` run config; defaults apply to absent keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for all randomness (overrides the config).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stage widths become 256/512/1024/2048 divided by this.
    #[arg(long)]
    pub channel_divisor: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Label graph used by the GCN.
    #[arg(long, value_parser = ["ks", "identity"])]
    pub graph_kind: Option<String>,
    /// Number of GCN layers kept (leading layers are dropped).
    #[arg(long)]
    pub gcn_depth: Option<usize>,
    #[command(flatten)]
    pub graph: GraphArgs,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = self.channel_divisor {
            cfg.stage_channels = scaled_channel_schedule(d).map_err(|e| Error::Validation(format!("--{}", flag_of(&e, &e.to_string()))))?;
            cfg.channel_divisor = Some(d);
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(g) = &self.graph_kind {
            cfg.graph = if g == "ks" { GraphKind::Ks } else { GraphKind::Identity };
        }
        if let Some(d) = self.gcn_depth {
            cfg.gcn_depth = d;
        }
        cfg.pipeline = self.graph.apply(cfg.pipeline)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Adjacency file (text or binary) to summarize.
    #[arg(long, conflicts_with_all = ["config", "seed", "channel_divisor", "epochs"])]
    pub adjacency: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run config supplying `gradcheck_trials` and `gradcheck_step`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seeded instances per component (overrides the config).
    #[arg(long)]
    pub trials: Option<usize>,
    /// Test hook: perturb every analytic gradient so the check must fail.
    #[arg(long, hide = true)]
    pub corrupt_backward: bool,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// CSV of `epoch,loss,map`, one row per finished epoch, rewritten each run.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Named-tensor checkpoint of the trained model.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Decision {
    /// sigmoid(score) ≥ threshold.
    Sigmoid,
    /// score ≥ threshold.
    Threshold,
    /// The k highest scores per sample.
    TopK,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Score matrix (samples × labels); logits unless --decision says otherwise.
    #[arg(long, requires = "targets", conflicts_with = "checkpoint")]
    pub scores: Option<PathBuf>,
    /// Binary target matrix aligned with --scores.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Checkpoint written by train-toy; scored on the regenerated synthetic data.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum, default_value = "val")]
    pub split: Split,
    #[arg(long, value_enum, default_value = "sigmoid")]
    pub decision: Decision,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Word-vector table, `token v1 ... vF` per line.
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Destination N × F matrix (text).
    #[arg(long)]
    pub out: PathBuf,
}

fn kv(out: &mut impl Write, key: &str, value: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{key}={value}").map_err(|source| Error::Write { path: PathBuf::from("<stdout>"), source })
}

fn degree_stats(a: &AdjacencyMatrix) -> (f64, f64, f64) {
    let d = a.degrees();
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, max, d.iter().sum::<f64>() / d.len().max(1) as f64)
}

fn adjacency_summary(a: &AdjacencyMatrix) -> Vec<(&'static str, String)> {
    let edges = edge_set(a);
    let off = edges.iter().filter(|(i, j)| i != j).count();
    let (dmin, dmax, dmean) = degree_stats(a);
    vec![
        ("n", a.n().to_string()),
        ("nnz", a.nnz().to_string()),
        ("edges", edges.len().to_string()),
        ("off_diagonal_edges", off.to_string()),
        ("symmetric", a.is_symmetric().to_string()),
        ("degree_min", dmin.to_string()),
        ("degree_max", dmax.to_string()),
        ("degree_mean", dmean.to_string()),
    ]
}

fn write_adjacency(path: &Path, a: &AdjacencyMatrix, format: MatrixFormat) -> Result<()> {
    match format {
        MatrixFormat::Text => io::write_adjacency_text(path, a),
        MatrixFormat::Binary => io::write_adjacency_binary(path, a),
    }
}

fn build_graph(args: &BuildGraphArgs, out: &mut impl Write) -> Result<()> {
    let cfg = args.graph.apply(GraphPipelineConfig::COCO)?;
    let vocab = io::load_vocabulary(&args.vocab)?;
    let ann = io::load_annotations(&args.annotations, &vocab)?;
    let edges = io::load_knowledge_edges(&args.knowledge, &vocab)?;
    let g = build_ks_graph(&ann, &edges, &cfg)?;
    let raw = args.out_raw.clone().unwrap_or_else(|| io::sibling(&args.out, ".raw"));
    write_adjacency(&args.out, &g.ks_normalized, args.format)?;
    write_adjacency(&raw, &g.ks, args.format)?;

    let mut lines: Vec<(&str, String)> = vec![
        ("samples", ann.len().to_string()),
        ("empty_samples", ann.empty_samples().to_string()),
        ("mean_labels_per_sample", ann.mean_labels_per_sample().to_string()),
        ("knowledge_edges", edges.edges().len().to_string()),
        ("dropped_edges", edges.dropped().to_string()),
        ("lambda", cfg.lambda.to_string()),
        ("tau", cfg.tau.to_string()),
        ("eta", cfg.eta.to_string()),
        ("binarize_threshold", cfg.binarize_threshold.to_string()),
        ("statistical_nnz", g.statistical.nnz().to_string()),
        ("knowledge_nnz", g.knowledge.nnz().to_string()),
        ("ks_edges", edge_set(&g.ks).len().to_string()),
    ];
    lines.extend(adjacency_summary(&g.ks_normalized));
    lines.push(("out", args.out.display().to_string()));
    lines.push(("out_raw", raw.display().to_string()));
    let mut text = Vec::new();
    for (k, v) in &lines {
        kv(&mut text, k, v)?;
    }
    out.write_all(&text).map_err(|source| Error::Write { path: PathBuf::from("<stdout>"), source })?;
    if let Some(p) = &args.summary {
        std::fs::write(p, &text).map_err(|source| Error::Write { path: p.clone(), source })?;
    }
    Ok(())
}

fn inspect(args: &InspectArgs, out: &mut impl Write) -> Result<()> {
    if let Some(path) = &args.adjacency {
        let a = io::read_adjacency(path)?;
        for (k, v) in adjacency_summary(&a) {
            kv(out, k, v)?;
        }
        return Ok(());
    }
    let cfg = args.run.resolve()?;
    for line in cfg.to_text().lines() {
        let (k, v) = line.split_once(" = ").expect("to_text writes `key = value`");
        kv(out, k, v)?;
    }
    Ok(())
}

fn gradcheck(args: &GradcheckArgs, out: &mut impl Write) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let trials = args.trials.unwrap_or(cfg.gradcheck_trials);
    if trials == 0 {
        return Err(Error::Validation("--trials must be positive".into()));
    }
    let mut failed = Vec::new();
    kv(out, "seed", args.seed)?;
    kv(out, "trials", trials)?;
    kv(out, "step", cfg.gradcheck_step)?;
    for c in Component::ALL {
        let err = check_component(c, args.seed, trials, cfg.gradcheck_step, args.corrupt_backward)?;
        kv(out, c.name(), format!("{err:.6e}"))?;
        if !(err <= c.tolerance()) {
            failed.push(c.name());
        }
    }
    kv(out, "status", if failed.is_empty() { "pass" } else { "fail" })?;
    if !failed.is_empty() {
        return Err(Error::Validation(format!("gradient check exceeded tolerance for {}", failed.join(", "))));
    }
    Ok(())
}

fn train_toy(args: &TrainToyArgs, out: &mut impl Write) -> Result<()> {
    let cfg = args.run.resolve()?;
    let mut history = match &args.history {
        Some(p) => {
            let f = OpenOptions::new().create(true).write(true).truncate(true).open(p).map_err(|source| Error::Write { path: p.clone(), source })?;
            let mut f = std::io::BufWriter::new(f);
            writeln!(f, "epoch,loss,map").and_then(|_| f.flush()).map_err(|source| Error::Write { path: p.clone(), source })?;
            Some((p.clone(), f))
        }
        None => None,
    };
    let mut write_failure = None;
    let outcome = experiment::run(&cfg, |_, rec| {
        if let Some((p, f)) = history.as_mut() {
            if write_failure.is_none() {
                if let Err(source) = writeln!(f, "{},{:e},{:e}", rec.epoch, rec.loss, rec.map).and_then(|_| f.flush()) {
                    write_failure = Some(Error::Write { path: p.clone(), source });
                }
            }
        }
    })?;
    if let Some(e) = write_failure {
        return Err(e);
    }
    if let Some(p) = &args.checkpoint {
        let mut tensors = io::model_tensors(&outcome.model);
        tensors.push(io::matrix_tensor("graph.adjacency", outcome.prepared.adjacency.matrix()));
        tensors.push(io::matrix_tensor("embeddings.e0", &outcome.prepared.e0));
        io::write_checkpoint(p, &tensors)?;
    }
    kv(out, "seed", cfg.seed)?;
    kv(out, "graph", if cfg.graph == GraphKind::Ks { "ks" } else { "identity" })?;
    kv(out, "stage_channels", cfg.stage_channels.iter().map(ToString::to_string).collect::<Vec<_>>().join(","))?;
    kv(out, "gcn_depth", outcome.model.gcn_depth())?;
    kv(out, "lateral_connections", outcome.model.lcs.len())?;
    kv(out, "lambda", cfg.pipeline.lambda)?;
    kv(out, "tau", cfg.pipeline.tau)?;
    kv(out, "eta", cfg.pipeline.eta)?;
    kv(out, "epochs", outcome.history.len())?;
    if let Some(last) = outcome.history.last() {
        kv(out, "final_loss", format!("{:.6}", last.loss))?;
        kv(out, "train_map", format!("{:.6}", last.map))?;
    }
    kv(out, "val_map", format!("{:.6}", outcome.val_map))?;
    Ok(())
}

fn checkpoint_scores(args: &EvaluateArgs, path: &Path) -> Result<ScoreMatrix> {
    let cfg = args.run.resolve()?;
    let tensors = io::read_checkpoint(path)?;
    let mut prepared = experiment::prepare(&cfg)?;
    io::load_model_tensors(&mut prepared.model, &tensors, path)?;
    let adjacency = io::tensor_matrix(&tensors, "graph.adjacency", path)?;
    let e0 = io::tensor_matrix(&tensors, "embeddings.e0", path)?;
    if &adjacency != prepared.adjacency.matrix() || e0 != prepared.e0 {
        return Err(Error::Validation(format!("{} was not produced by this run config", path.display())));
    }
    let data = match args.split {
        Split::Train => &prepared.train,
        Split::Val => &prepared.val,
    };
    let scores = predict(&prepared.model, &data.inputs, &prepared.e0, 64)?;
    Ok(ScoreMatrix::new(scores, data.targets())?)
}

fn evaluate(args: &EvaluateArgs, out: &mut impl Write) -> Result<()> {
    let sm = match (&args.scores, &args.targets, &args.checkpoint) {
        (Some(s), Some(t), None) => {
            let scores: Matrix = io::read_matrix_text(s)?;
            let targets = io::read_matrix_text(t)?;
            if scores.shape() != targets.shape() {
                return Err(Error::Validation(format!(
                    "scores are {}x{} but targets are {}x{}",
                    scores.rows(),
                    scores.cols(),
                    targets.rows(),
                    targets.cols()
                )));
            }
            ScoreMatrix::new(scores, targets)?
        }
        (None, None, Some(c)) => checkpoint_scores(args, c)?,
        _ => return Err(Error::Validation("give either --scores with --targets, or --checkpoint".into())),
    };
    let rule = match args.decision {
        Decision::Sigmoid => DecisionRule::SigmoidThreshold(args.threshold),
        Decision::Threshold => DecisionRule::Threshold(args.threshold),
        Decision::TopK => DecisionRule::TopK(args.k),
    };
    let map = map_score(&sm)?;
    let prf = prf_suite(&sm, rule);
    let row = [map.map, prf.cp, prf.cr, prf.cf1, prf.op, prf.or, prf.of1];
    let w = |e| Error::Write { path: PathBuf::from("<stdout>"), source: e };
    writeln!(out, "{:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}", "mAP", "CP", "CR", "CF1", "OP", "OR", "OF1").map_err(w)?;
    let cells: Vec<String> = row.iter().map(|v| format!("{:>6.1}", 100.0 * v)).collect();
    writeln!(out, "{}", cells.join(" ")).map_err(w)?;
    kv(out, "excluded_classes", map.excluded)?;
    kv(out, "classes_without_predictions", prf.classes_without_predictions)?;
    kv(out, "no_predictions", prf.no_predictions)?;
    Ok(())
}

fn embed(args: &EmbedArgs, out: &mut impl Write) -> Result<()> {
    let table = io::load_embedding_table(&args.table)?;
    let vocab = io::load_vocabulary(&args.vocab)?;
    let e0 = build_initial_embeddings(&table, &vocab)?;
    io::write_matrix_text(&args.out, &e0, false)?;
    kv(out, "n", e0.rows())?;
    kv(out, "dim", e0.cols())?;
    kv(out, "out", args.out.display())
}

pub fn run(cli: &Cli, out: &mut impl Write) -> Result<()> {
    match &cli.command {
        Command::BuildGraph(a) => build_graph(a, out),
        Command::Inspect(a) => inspect(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::TrainToy(a) => train_toy(a, out),
        Command::Evaluate(a) => evaluate(a, out),
        Command::Embed(a) => embed(a, out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flag_errors_name_the_flag() {
        let g = GraphArgs { preset: None, lambda: Some(1.5), tau: None, eta: None, binarize_threshold: None, normalization: None };
        let msg = g.apply(GraphPipelineConfig::COCO).unwrap_err().to_string();
        assert!(msg.contains("--lambda"), "{msg}");
    }
}
