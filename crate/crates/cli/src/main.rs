//! `zeroreg` command-line entry point.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;

use zeroreg::object_matching::{assignment_objective, solve_qap};
use zeroreg::pipeline::{evaluate_suite, register_pair, PipelineConfig, SuitePair};
use zeroreg::projection::build_masked_cloud;
use zeroreg::scene_graph::{build_scene_graph, cross_similarity, SceneGraphRep};
use zeroreg::synthgen::{generate_pair, write_pair, SceneSpec, GROUND_TRUTH_FILE};
use zeroreg::{read_bundle, ZeroRegError};

const PRECEDENCE: &str = "Settings are resolved as: command-line flag > config/spec file > built-in default.\n\
Set ZEROREG_LOG to error, warn, info or debug to control stderr verbosity (default: warn).";

#[derive(Debug, Parser)]
#[command(name = "zeroreg", version, about = "Zero-shot point cloud registration", after_help = PRECEDENCE)]
struct Cli {
    /// Print one machine-readable JSON document on stdout instead of a human summary.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic scene pairs with ground truth.
    #[command(after_help = PRECEDENCE)]
    Synth(SynthArgs),
    /// Register a source bundle onto a target bundle.
    #[command(after_help = PRECEDENCE)]
    Register(RegisterArgs),
    /// Evaluate a directory of generated pairs.
    #[command(after_help = PRECEDENCE)]
    Eval(EvalArgs),
    /// Dump intermediate matrices or correspondences as CSV.
    #[command(after_help = PRECEDENCE)]
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Scene spec JSON; missing fields take defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory; pair `i` goes to `pair-{i:04}`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pairs: usize,
    /// Base seed (overrides the spec's); pair `i` uses `seed + i`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Pipeline config JSON; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's RANSAC seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's scene-graph neighbor count.
    #[arg(long)]
    k_neighbors: Option<usize>,
    /// Overrides the config's correspondence threshold.
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Debug, Args)]
struct RegisterArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Report JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Directory whose subdirectories each hold `source/`, `target/` and `gt.json`.
    #[arg(long)]
    suite: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Summary JSON path. The per-pair CSV goes next to it as `<stem>_pairs.csv`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("dump").required(true).args(["dump_graph", "dump_corr"])))]
struct InspectArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Second bundle; needed for cross-similarity, assignment and correspondences.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Dump affinity matrices, plus cross-similarity and the object assignment when `--target` is given.
    #[arg(long)]
    dump_graph: bool,
    /// Dump point correspondences between `--bundle` and `--target`.
    #[arg(long, requires = "target")]
    dump_corr: bool,
    #[command(flatten)]
    config: ConfigArgs,
    /// CSV output path.
    #[arg(long)]
    out: PathBuf,
}

/// Error classes mapped to exit codes.
enum Failure {
    Input(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<ZeroRegError> for Failure {
    fn from(e: ZeroRegError) -> Self {
        if e.is_input_error() {
            Failure::Input(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

fn input(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Input(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

type Outcome = Result<Output, Failure>;

/// What a subcommand reports: a JSON document and its human rendering.
struct Output {
    json: serde_json::Value,
    human: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ZEROREG_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Register(a) => register(a),
        Command::Eval(a) => eval(a),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(out) => {
            if cli.json {
                println!("{}", out.json);
            } else {
                print!("{}", out.human);
            }
            ExitCode::SUCCESS
        }
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(input)?;
    serde_json::from_str(&text)
        .with_context(|| format!("invalid JSON in {}", path.display()))
        .map_err(input)
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .with_context(|| format!("cannot create {}", parent.display()))
            .map_err(runtime)?;
    }
    fs::write(path, contents)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(runtime)
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).map_err(runtime)
}

fn require_dir(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(input(anyhow::anyhow!(
            "{what} directory {} does not exist",
            path.display()
        )))
    }
}

fn load_config(args: &ConfigArgs) -> Result<PipelineConfig, Failure> {
    let mut config: PipelineConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(k) = args.k_neighbors {
        config.k_neighbors = k;
    }
    if let Some(g) = args.gamma {
        config.gamma = g;
    }
    config.validate()?;
    Ok(config)
}

fn synth(args: &SynthArgs) -> Outcome {
    let mut spec: SceneSpec = match &args.spec {
        Some(path) => read_json(path)?,
        None => SceneSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    if args.pairs == 0 {
        return Err(input(anyhow::anyhow!("--pairs must be at least 1")));
    }
    let mut written = Vec::with_capacity(args.pairs);
    for i in 0..args.pairs {
        let pair_spec = SceneSpec {
            seed: spec.seed.wrapping_add(i as u64),
            ..spec.clone()
        };
        let (source, target, gt) = generate_pair(&pair_spec)?;
        let dir = args.out.join(format!("pair-{i:04}"));
        write_pair(&dir, &source, &target, &gt)?;
        log::info!("wrote {}", dir.display());
        written.push(dir.display().to_string());
    }
    Ok(Output {
        human: format!("wrote {} pair(s) under {}\n", written.len(), args.out.display()),
        json: json!({ "pairs": written }),
    })
}

fn register(args: &RegisterArgs) -> Outcome {
    let config = load_config(&args.config)?;
    require_dir(&args.source, "source")?;
    require_dir(&args.target, "target")?;
    let source = read_bundle(&args.source)?;
    let target = read_bundle(&args.target)?;
    let report = register_pair(&source, &target, &config)?;
    write_file(&args.out, &to_json(&report)?)?;

    let d = &report.diagnostics;
    let t = &report.transform;
    let mut human = String::new();
    let _ = writeln!(
        human,
        "objects: {} source, {} target",
        d.source_objects, d.target_objects
    );
    let _ = writeln!(
        human,
        "object pairs: {} ({} before category filter){}",
        d.object_pairs,
        d.raw_object_pairs,
        if d.global_fallback { ", global fallback" } else { "" }
    );
    let _ = writeln!(human, "correspondences: {}, inliers: {}", d.correspondences, d.inliers);
    let _ = writeln!(human, "rotation:");
    for r in 0..3 {
        let _ = writeln!(
            human,
            "  {:>10.6} {:>10.6} {:>10.6}",
            t.rotation[(r, 0)],
            t.rotation[(r, 1)],
            t.rotation[(r, 2)]
        );
    }
    let _ = writeln!(
        human,
        "translation: {:.6} {:.6} {:.6}",
        t.translation.x, t.translation.y, t.translation.z
    );
    let _ = writeln!(human, "source projection:\n{}", d.source_projection.report());
    let _ = writeln!(human, "target projection:\n{}", d.target_projection.report());
    let _ = writeln!(human, "report written to {}", args.out.display());
    Ok(Output {
        json: serde_json::to_value(&report).map_err(runtime)?,
        human,
    })
}

fn pairs_csv_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map_or_else(|| "summary".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}_pairs.csv"))
}

fn eval(args: &EvalArgs) -> Outcome {
    let config = load_config(&args.config)?;
    require_dir(&args.suite, "suite")?;
    let mut dirs: Vec<PathBuf> = fs::read_dir(&args.suite)
        .with_context(|| format!("cannot list {}", args.suite.display()))
        .map_err(input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(GROUND_TRUTH_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(input(anyhow::anyhow!(
            "suite directory {} holds no pair directories with {GROUND_TRUTH_FILE}",
            args.suite.display()
        )));
    }
    let pairs: Vec<SuitePair> = dirs.into_iter().map(SuitePair::Directory).collect();
    let report = evaluate_suite(&pairs, &config, args.jobs)?;
    let csv_path = pairs_csv_path(&args.out);
    write_file(&args.out, &to_json(&report.summary)?)?;
    write_file(&csv_path, &report.to_csv())?;

    let s = &report.summary;
    let mut human = String::new();
    let _ = writeln!(human, "pairs: {} ({} failed)", s.pairs, s.failures);
    let _ = writeln!(human, "registration recall: {:.3}", s.rr);
    let _ = writeln!(human, "mean inlier ratio: {:.3}", s.mean_ir);
    let _ = writeln!(
        human,
        "rotation error: mean {:.3} deg, median {:.3} deg",
        s.re_mean, s.re_median
    );
    let _ = writeln!(
        human,
        "translation error: mean {:.4} m, median {:.4} m",
        s.te_mean, s.te_median
    );
    for (k, v) in &s.acc_at {
        let _ = writeln!(human, "  {k}: {v:.3}");
    }
    let _ = writeln!(
        human,
        "summary: {}, per-pair: {}",
        args.out.display(),
        csv_path.display()
    );
    Ok(Output {
        json: serde_json::to_value(s).map_err(runtime)?,
        human,
    })
}

fn inspect(args: &InspectArgs) -> Outcome {
    let config = load_config(&args.config)?;
    require_dir(&args.bundle, "bundle")?;
    let source = read_bundle(&args.bundle)?;
    let target = match &args.target {
        Some(path) => {
            require_dir(path, "target")?;
            Some(read_bundle(path)?)
        }
        None => None,
    };
    let (csv, rows) = if args.dump_corr {
        let target = target.as_ref().expect("clap enforces --target with --dump-corr");
        corr_csv(&source, target, &config)?
    } else {
        graph_csv(&source, target.as_ref(), &config)?
    };
    write_file(&args.out, &csv)?;
    Ok(Output {
        human: format!("wrote {rows} row(s) to {}\n", args.out.display()),
        json: json!({ "rows": rows, "out": args.out.display().to_string() }),
    })
}

fn corr_csv(
    source: &zeroreg::SceneBundle,
    target: &zeroreg::SceneBundle,
    config: &PipelineConfig,
) -> Result<(String, usize), Failure> {
    let report = register_pair(source, target, config)?;
    let mut csv = String::from("source_index,target_index,confidence,region\n");
    for m in &report.point_pairs.pairs {
        let region = m.region.map_or_else(String::new, |r| r.to_string());
        let _ = writeln!(csv, "{},{},{},{}", m.source, m.target, m.confidence, region);
    }
    Ok((csv, report.point_pairs.len()))
}

/// Rows `matrix,row,col,value` for W (non-zero entries) and C; with a target also the
/// assignment, one reward row and one structural-residual row per matched pair.
fn graph_csv(
    source: &zeroreg::SceneBundle,
    target: Option<&zeroreg::SceneBundle>,
    config: &PipelineConfig,
) -> Result<(String, usize), Failure> {
    let proj = config.projection_config();
    let graph_of = |bundle: &zeroreg::SceneBundle| -> Result<SceneGraphRep, ZeroRegError> {
        let (cloud, _, _) = build_masked_cloud(bundle, &proj)?;
        build_scene_graph(&cloud, config.k_neighbors, config.toggles.directed_affinity, None)
    };
    let mut rows: Vec<(&str, usize, usize, f64)> = Vec::new();
    let nonzero = |rows: &mut Vec<(&str, usize, usize, f64)>, name, w: &DMatrix<f64>| {
        for r in 0..w.nrows() {
            for c in 0..w.ncols() {
                if w[(r, c)] != 0.0 {
                    rows.push((name, r, c, w[(r, c)]));
                }
            }
        }
    };
    let gp = graph_of(source)?;
    nonzero(&mut rows, "w_source", &gp.affinity);
    let mut objective = None;
    if let Some(target) = target {
        let gq = graph_of(target)?;
        nonzero(&mut rows, "w_target", &gq.affinity);
        let c = cross_similarity(&gp.node_semantics, &gq.node_semantics)?;
        for r in 0..c.nrows() {
            for k in 0..c.ncols() {
                rows.push(("similarity", r, k, c[(r, k)]));
            }
        }
        let assignment = solve_qap(&gp.affinity, &gq.affinity, &c, &config.qap)?;
        let x = assignment.entries();
        let residual = &gp.affinity - &x * &gq.affinity * x.transpose();
        for &(j, k) in &assignment.pairs {
            rows.push(("assignment_reward", j, k, -c[(j, k)]));
            rows.push(("assignment_structural", j, k, residual.row(j).norm_squared()));
        }
        objective = Some(assignment_objective(&assignment.pairs, &gp.affinity, &gq.affinity, &c)?);
    }
    let mut csv = String::from("matrix,row,col,value\n");
    for (name, r, c, v) in &rows {
        let _ = writeln!(csv, "{name},{r},{c},{v}");
    }
    if let Some(total) = objective {
        let _ = writeln!(csv, "objective,,,{total}");
    }
    Ok((csv, rows.len() + usize::from(objective.is_some())))
}
