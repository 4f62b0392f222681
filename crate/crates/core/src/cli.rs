//! `svp` command line: partition, analyze, bench, simulate and oracle.
//!
//! JSON results always go to `--out`; `--print` echoes them to stdout.
//! Diagnostics go to stderr.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::anchor_schedule::{build_plan, ExecutionPlan, PlanJson};
use crate::cost_model::{plan_cost, CostReport, DEFAULT_TOKENS_PER_FRAME};
use crate::descriptor_io::{load_frame_descriptors, save_descriptors, DescriptorSet};
use crate::error::{Error, Result};
use crate::mock_backbone::{
    attend_frames, brute_force_partition, partition_loss, run_plan, synth_scene_with, SceneParams,
    DEFAULT_SYNTH_CHANNELS, DEFAULT_TOKEN_GUARD, DEFAULT_WORKLOAD_CHANNELS,
};
use crate::scene_graph::{
    density, group_count, similarity_matrix, SimilarityGraph, SimilarityStats, DEFAULT_K_MAX,
    DEFAULT_THRESHOLD,
};
use crate::soft_partition::{
    default_cap, partition_frames, GroupWeights, OptimizeConfig, PartitionOutcome,
};

#[derive(Debug, Parser)]
#[command(name = "svp", version, about = "Anchor-shared subscene partitioning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Partition frames into subscenes and write partition + plan JSON.
    Partition(PartitionArgs),
    /// Report similarity statistics, scene density and the derived group count.
    Analyze(AnalyzeArgs),
    /// Cost model and mock attention benchmark for a plan.
    Bench(BenchArgs),
    /// Generate a synthetic clustered descriptor set.
    Simulate(SimulateArgs),
    /// Compare the optimizer against exhaustive search on a small instance.
    Oracle(OracleArgs),
}

#[derive(Debug, Args, Clone)]
pub struct OutputArgs {
    /// Output JSON path.
    #[arg(long)]
    pub out: PathBuf,
    /// Also pretty-print the JSON to stdout.
    #[arg(long)]
    pub print: bool,
}

#[derive(Debug, Args, Clone)]
pub struct GraphArgs {
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = DEFAULT_K_MAX)]
    pub k_max: usize,
    /// Fixed group count, overriding the density-derived value.
    #[arg(long)]
    pub groups: Option<usize>,
    /// Worker threads (falls back to SVP_WORKERS, then the core count).
    #[arg(long, env = "SVP_WORKERS")]
    pub workers: Option<usize>,
}

#[derive(Debug, Args, Clone)]
pub struct SolverArgs {
    #[arg(long)]
    pub lambda_coh: Option<f64>,
    /// Defaults to 1/N.
    #[arg(long)]
    pub lambda_bal: Option<f64>,
    #[arg(long)]
    pub lambda_sharp: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.5)]
    pub step: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub anchor: usize,
    /// Per-group size cap for rebalancing; defaults to ceil(N/K) + 1.
    #[arg(long)]
    pub cap: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    /// SVGD descriptors or SVGT tokens (pooled first).
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Plan JSON path; defaults to the partition path with a `.plan.json` suffix.
    #[arg(long)]
    pub plan_out: Option<PathBuf>,
    #[command(flatten)]
    pub graph: GraphArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub graph: GraphArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Existing plan JSON.
    #[arg(long, conflicts_with_all = ["input", "frames"])]
    pub plan: Option<PathBuf>,
    /// Descriptors to partition first.
    #[arg(long, conflicts_with = "frames")]
    pub input: Option<PathBuf>,
    /// Balanced contiguous plan over this many frames (use with --groups).
    #[arg(long)]
    pub frames: Option<usize>,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub graph: GraphArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value_t = DEFAULT_TOKENS_PER_FRAME)]
    pub tokens_per_frame: usize,
    #[arg(long, default_value_t = DEFAULT_WORKLOAD_CHANNELS)]
    pub channels: usize,
    /// Emit only the cost model report.
    #[arg(long)]
    pub model_only: bool,
    /// Drop timing and worker fields so outputs compare byte for byte.
    #[arg(long)]
    pub canonical: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output SVGD path.
    #[arg(long)]
    pub out: PathBuf,
    /// Labels JSON path; defaults to the descriptor path with `.labels.json`.
    #[arg(long)]
    pub labels_out: Option<PathBuf>,
    #[arg(long)]
    pub frames: usize,
    #[arg(long, default_value_t = 2)]
    pub clusters: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = DEFAULT_SYNTH_CHANNELS)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub graph: GraphArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Partition(a) => cmd_partition(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Oracle(a) => cmd_oracle(&a),
    }
}

fn resolve_workers(requested: Option<usize>) -> Result<usize> {
    match requested {
        Some(0) => Err(Error::config("workers must be at least 1")),
        Some(w) => Ok(w),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn with_workers<T>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T>
where
    T: Send,
{
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?
        .install(f)
}

fn write_json<T: Serialize>(value: &T, out: &OutputArgs) -> Result<()> {
    write_json_to(value, &out.out)?;
    if out.print {
        println!("{}", serde_json::to_string_pretty(value)?);
    }
    Ok(())
}

fn write_json_to<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

/// Similarity graph, density and group count for a descriptor set.
struct SceneAnalysis {
    graph: SimilarityGraph,
    density: crate::scene_graph::DensityEstimate,
    k: usize,
}

fn analyze_scene(set: &DescriptorSet, args: &GraphArgs, workers: usize) -> Result<SceneAnalysis> {
    let graph = with_workers(workers, || similarity_matrix(set))?;
    let est = density(&graph, args.threshold)?;
    let k = group_count(&est, args.k_max, set.num_frames(), args.groups)?;
    Ok(SceneAnalysis {
        graph,
        density: est,
        k,
    })
}

fn weights(solver: &SolverArgs, n: usize) -> Result<GroupWeights> {
    let d = GroupWeights::defaults_for(n);
    GroupWeights::new(
        solver.lambda_coh.unwrap_or(d.coh),
        solver.lambda_bal.unwrap_or(d.bal),
        solver.lambda_sharp.unwrap_or(d.sharp),
    )
}

fn optimize_config(solver: &SolverArgs) -> OptimizeConfig {
    OptimizeConfig {
        iterations: solver.iters,
        step: solver.step,
        seed: solver.seed,
        ..Default::default()
    }
}

fn solve(
    scene: &SceneAnalysis,
    solver: &SolverArgs,
) -> Result<(PartitionOutcome, GroupWeights, OptimizeConfig)> {
    let n = scene.graph.num_frames();
    let w = weights(solver, n)?;
    let cfg = optimize_config(solver);
    if solver.anchor >= n {
        return Err(Error::config(format!("anchor {} outside 0..{n}", solver.anchor)));
    }
    let outcome = partition_frames(&scene.graph, scene.k, &w, &cfg, solver.anchor, solver.cap)?;
    Ok((outcome, w, cfg))
}

#[derive(Debug, Serialize)]
pub struct PartitionJson {
    pub version: u32,
    pub n: usize,
    pub k: usize,
    pub anchor: usize,
    pub weights: GroupWeights,
    pub iterations: usize,
    pub seed: u64,
    pub groups: Vec<Vec<usize>>,
    pub loss_trace: Vec<f64>,
    pub density: f64,
    pub threshold: f64,
    pub cap: usize,
}

fn partition_json(
    scene: &SceneAnalysis,
    outcome: &PartitionOutcome,
    w: GroupWeights,
    cfg: &OptimizeConfig,
) -> PartitionJson {
    let p = &outcome.partition;
    PartitionJson {
        version: 1,
        n: p.n(),
        k: p.k(),
        anchor: p.anchor(),
        weights: w,
        iterations: cfg.iterations,
        seed: cfg.seed,
        groups: p.groups().to_vec(),
        loss_trace: outcome.optimized.loss_trace.clone(),
        density: scene.density.density,
        threshold: scene.density.threshold,
        cap: outcome.cap,
    }
}

pub fn cmd_partition(args: &PartitionArgs) -> Result<()> {
    let workers = resolve_workers(args.graph.workers)?;
    let set = load_frame_descriptors(&args.input)?;
    let scene = analyze_scene(&set, &args.graph, workers)?;
    let (outcome, w, cfg) = solve(&scene, &args.solver)?;
    eprintln!(
        "partitioned {} frames into {} subscenes (density {:.3})",
        set.num_frames(),
        scene.k,
        scene.density.density
    );
    write_json(&partition_json(&scene, &outcome, w, &cfg), &args.output)?;
    let plan_path = args
        .plan_out
        .clone()
        .unwrap_or_else(|| sibling(&args.output.out, ".plan.json"));
    write_json_to(&build_plan(&outcome.partition).to_json(), &plan_path)
}

#[derive(Debug, Serialize)]
pub struct AnalyzeJson {
    pub n: usize,
    pub threshold: f64,
    pub density: f64,
    pub k: usize,
    pub per_frame_counts: Vec<usize>,
    pub similarity_stats: SimilarityStats,
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let workers = resolve_workers(args.graph.workers)?;
    let set = load_frame_descriptors(&args.input)?;
    let scene = analyze_scene(&set, &args.graph, workers)?;
    let report = AnalyzeJson {
        n: set.num_frames(),
        threshold: scene.density.threshold,
        density: scene.density.density,
        k: scene.k,
        per_frame_counts: scene.density.per_frame_counts.clone(),
        similarity_stats: scene.graph.stats(),
    };
    write_json(&report, &args.output)
}

#[derive(Debug, Serialize)]
pub struct BenchSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_subscene_ms: Option<Vec<f64>>,
    pub measured_ops: u64,
    pub per_subscene_ops: Vec<u64>,
    pub checksum: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_ms: Option<f64>,
    pub baseline_ops: u64,
    pub baseline_checksum: f64,
}

#[derive(Debug, Serialize)]
pub struct BenchJson {
    pub plan: PlanJson,
    pub cost_report: CostReport,
    pub bench: BenchSection,
}

fn bench_plan(args: &BenchArgs, workers: usize) -> Result<ExecutionPlan> {
    if let Some(path) = &args.plan {
        let doc: PlanJson = serde_json::from_slice(&fs::read(path)?)?;
        return ExecutionPlan::from_json(doc);
    }
    if let Some(path) = &args.input {
        let set = load_frame_descriptors(path)?;
        let scene = analyze_scene(&set, &args.graph, workers)?;
        let (outcome, _, _) = solve(&scene, &args.solver)?;
        return Ok(build_plan(&outcome.partition));
    }
    if let Some(n) = args.frames {
        let k = args
            .graph
            .groups
            .ok_or_else(|| Error::config("--frames needs --groups"))?;
        let p = crate::soft_partition::Partition::contiguous(n, k, args.solver.anchor)?;
        return Ok(build_plan(&p));
    }
    Err(Error::config("bench needs one of --plan, --input or --frames"))
}

pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    if args.tokens_per_frame == 0 {
        return Err(Error::config("tokens per frame must be at least 1"));
    }
    let workers = resolve_workers(args.graph.workers)?;
    let plan = bench_plan(args, workers)?;
    let report = plan_cost(&plan, args.tokens_per_frame);
    if args.model_only {
        return write_json(&report, &args.output);
    }

    let t = args.tokens_per_frame;
    let seed = args.solver.seed;
    let all: Vec<usize> = (0..plan.n).collect();
    if plan.n * t > DEFAULT_TOKEN_GUARD {
        return Err(Error::WorkloadTooLarge {
            tokens: plan.n * t,
            guard: DEFAULT_TOKEN_GUARD,
        });
    }
    let baseline = attend_frames(&all, t, args.channels, seed, DEFAULT_TOKEN_GUARD)?;
    let result = run_plan(&plan, t, args.channels, workers, seed)?;
    eprintln!(
        "baseline {:.1} ms, partitioned {:.1} ms on {workers} worker(s)",
        baseline.duration.as_secs_f64() * 1e3,
        result.total_ms
    );
    let timed = !args.canonical;
    let doc = BenchJson {
        plan: plan.to_json(),
        cost_report: report,
        bench: BenchSection {
            workers: timed.then_some(workers),
            total_ms: timed.then_some(result.total_ms),
            per_subscene_ms: timed.then(|| result.per_subscene_ms.clone()),
            measured_ops: result.measured_ops,
            per_subscene_ops: result.per_subscene_ops.clone(),
            checksum: result.checksum,
            baseline_ms: timed.then_some(baseline.duration.as_secs_f64() * 1e3),
            baseline_ops: baseline.ops,
            baseline_checksum: baseline.checksum,
        },
    };
    write_json(&doc, &args.output)
}

#[derive(Debug, Serialize)]
pub struct LabelsJson {
    pub version: u32,
    pub n: usize,
    pub num_clusters: usize,
    pub noise_sigma: f64,
    pub channels: usize,
    pub seed: u64,
    pub labels: Vec<usize>,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let scene = synth_scene_with(SceneParams {
        num_frames: args.frames,
        num_clusters: args.clusters,
        noise_sigma: args.noise,
        channels: args.dim,
        seed: args.seed,
    })?;
    save_descriptors(&scene.descriptors, &args.out)?;
    let labels_path = args
        .labels_out
        .clone()
        .unwrap_or_else(|| sibling(&args.out, ".labels.json"));
    write_json_to(
        &LabelsJson {
            version: 1,
            n: args.frames,
            num_clusters: args.clusters,
            noise_sigma: args.noise,
            channels: args.dim,
            seed: args.seed,
            labels: scene.true_labels,
        },
        &labels_path,
    )
}

#[derive(Debug, Serialize)]
pub struct Solution {
    pub groups: Vec<Vec<usize>>,
    pub loss: f64,
}

#[derive(Debug, Serialize)]
pub struct OracleJson {
    pub n: usize,
    pub k: usize,
    pub cap: usize,
    pub weights: GroupWeights,
    pub oracle: Solution,
    pub optimizer: Solution,
    pub loss_trace: Vec<f64>,
    pub ratio: f64,
    pub dominance: bool,
}

pub fn cmd_oracle(args: &OracleArgs) -> Result<()> {
    let workers = resolve_workers(args.graph.workers)?;
    let set = load_frame_descriptors(&args.input)?;
    let scene = analyze_scene(&set, &args.graph, workers)?;
    let n = set.num_frames();
    let cap = args.solver.cap.unwrap_or_else(|| default_cap(n, scene.k));
    let solver = SolverArgs {
        cap: Some(cap),
        ..args.solver.clone()
    };
    let (outcome, w, _) = solve(&scene, &solver)?;
    let (best, best_loss) = brute_force_partition(&scene.graph, scene.k, &w, cap, solver.anchor)?;
    let found = outcome.partition.canonical();
    let found_loss = partition_loss(&found, &scene.graph, &w)?;
    let doc = OracleJson {
        n,
        k: scene.k,
        cap,
        weights: w,
        oracle: Solution {
            groups: best.groups().to_vec(),
            loss: best_loss,
        },
        optimizer: Solution {
            groups: found.groups().to_vec(),
            loss: found_loss,
        },
        loss_trace: outcome.optimized.loss_trace,
        ratio: if best_loss > 0.0 {
            found_loss / best_loss
        } else if found_loss == 0.0 {
            1.0
        } else {
            f64::INFINITY
        },
        dominance: best_loss <= found_loss,
    };
    write_json(&doc, &args.output)
}
