use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use seqmct::baselines::ActiveEstimate;
use seqmct::engine::{forced_classification, Mmctest, RunOutcome};
use seqmct::harness::{
    collect_traces, compare_methods, rejection_frequencies, scaling_study,
    trace_effort_vs_undecided, BernoulliOracle, CompareConfig, Competitor, PermutationSource,
    ScalingConfig, DEFAULT_PROBS, DEFAULT_RC_THRESHOLD,
};
use seqmct::{EngineConfig, ProcedureKind, ProcedureSpec, RejectionSet, SampleSource, Snapshot};
use serde::Serialize;

mod io;

use io::{csv_with_metadata, json_with_metadata, write_file, Metadata};

#[derive(Parser)]
#[command(
    name = "seqmct",
    version,
    about = "Sequential Monte Carlo multiple testing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify hypotheses from known p-values or a data matrix.
    Run(RunArgs),
    /// Compare against the naive and MCFDR methods at matched effort.
    Compare(CompareArgs),
    /// Effort quantiles against the number of hypotheses.
    Scaling(ScalingArgs),
    /// Effort quantiles against the number of undecided hypotheses.
    Trace(TraceArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Procedure {
    Bh,
    Bonferroni,
}

#[derive(Clone, Copy, ValueEnum)]
enum McfdrEstimate {
    /// (S + 1) / (k + 1)
    Smoothed,
    /// S / k
    Raw,
}

#[derive(Args, Clone)]
struct EngineArgs {
    #[arg(long, value_enum, default_value = "bh")]
    procedure: Procedure,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Probability of any misclassification.
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    /// Spending sequence rate.
    #[arg(long, default_value_t = 10_000.0)]
    r: f64,
    #[arg(long, default_value_t = 10)]
    delta0: u64,
    /// Batch growth factor.
    #[arg(long, default_value_t = 1.25)]
    growth: f64,
    /// Stop once at most this many hypotheses are undecided.
    #[arg(long, default_value_t = 0)]
    c: usize,
    /// Stop once the total number of samples exceeds this.
    #[arg(long)]
    kmax: Option<u64>,
}

impl EngineArgs {
    fn config(&self) -> Result<EngineConfig> {
        let kind = match self.procedure {
            Procedure::Bh => ProcedureKind::BenjaminiHochberg,
            Procedure::Bonferroni => ProcedureKind::Bonferroni,
        };
        let cfg = EngineConfig {
            delta0: self.delta0,
            growth: self.growth,
            max_undecided: self.c,
            max_effort: self.kmax,
            epsilon: self.epsilon,
            r: self.r,
            procedure: ProcedureSpec::new(kind, self.alpha)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    seed: u64,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Ideal p-values, simulated with Bernoulli draws.
    #[arg(long, conflicts_with = "matrix", required_unless_present = "matrix")]
    pvalues: Option<PathBuf>,
    /// Data matrix for permutation tests (header row of group labels).
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    common: Common,
    /// Also report the forced (unguaranteed) complete classification.
    #[arg(long)]
    forced: bool,
    /// Write a resumable state snapshot to this file.
    #[arg(long)]
    save_state: Option<PathBuf>,
    /// Continue from a snapshot written by --save-state; give the same input
    /// and seed.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    pvalues: PathBuf,
    /// Samples per hypothesis for the naive method (comma separated).
    #[arg(long, value_delimiter = ',')]
    naive: Vec<u64>,
    /// Exceedance thresholds u for MCFDR (comma separated).
    #[arg(long, value_delimiter = ',')]
    mcfdr: Vec<u64>,
    /// Draws per active MCFDR hypothesis per round.
    #[arg(long, default_value_t = 1)]
    round_batch: u64,
    /// MCFDR estimate for hypotheses below u hits.
    #[arg(long, value_enum, default_value = "smoothed")]
    mcfdr_estimate: McfdrEstimate,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[arg(long, default_value_t = DEFAULT_RC_THRESHOLD)]
    rc_threshold: f64,
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ScalingArgs {
    /// Population to resample p-values from.
    #[arg(long)]
    pvalues: PathBuf,
    /// Numbers of hypotheses (comma separated).
    #[arg(long, value_delimiter = ',', required = true)]
    m_grid: Vec<usize>,
    /// Stop once at most floor(fraction * m) hypotheses are undecided.
    #[arg(long, default_value_t = 0.01)]
    c_fraction: f64,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long)]
    pvalues: PathBuf,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    common: Common,
}

fn in_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match workers {
        Some(0) => bail!("--workers must be at least 1"),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()?
            .install(f),
        None => f(),
    }
}

fn emit(out: Option<&Path>, name: &str, contents: &str) -> Result<()> {
    match out {
        Some(dir) => write_file(dir, name, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

#[derive(Serialize)]
struct RunReport {
    m: usize,
    rejected: Vec<usize>,
    non_rejected: Vec<usize>,
    undecided: Vec<usize>,
    effort: u64,
    iterations: u64,
    stop: Option<seqmct::StopReason>,
    coverage_violation: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    forced: Option<Vec<usize>>,
}

/// Runs from scratch or from a saved state. When resuming, the procedure and
/// error spending come from the snapshot; the stopping rules come from the
/// command line.
fn drive<S: SampleSource>(
    args: &RunArgs,
    cfg: EngineConfig,
    source: &S,
) -> Result<(RunOutcome, EngineConfig)> {
    let (engine, cfg) = match &args.resume {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let mut snap = Snapshot::from_json(&text)?;
            snap.config.max_undecided = cfg.max_undecided;
            snap.config.max_effort = cfg.max_effort;
            (Mmctest::resume(&snap, source)?, snap.config)
        }
        None => (Mmctest::new(cfg, source)?, cfg),
    };
    Ok((engine.run()?, cfg))
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = args.engine.config()?;
    let seed = args.common.seed;
    let (outcome, cfg) = in_pool(args.common.workers, || {
        if let Some(path) = &args.matrix {
            let matrix = io::read_matrix(path)?;
            log::info!(
                "{} hypotheses, groups `{}` / `{}`",
                matrix.rows.len(),
                matrix.labels[0],
                matrix.labels[1]
            );
            let source = PermutationSource::new(matrix.rows, matrix.groups, seed)?;
            drive(&args, cfg, &source)
        } else {
            let path = args
                .pvalues
                .as_ref()
                .context("--pvalues or --matrix is required")?;
            let source = BernoulliOracle::new(io::read_pvalues(path)?, seed);
            drive(&args, cfg, &source)
        }
    })?;

    let m = outcome.state.len();
    let report = outcome.report();
    let forced = args
        .forced
        .then(|| forced_classification(&outcome.state, &cfg).one_based());
    let summary = RunReport {
        m,
        rejected: report.rejected.one_based(),
        non_rejected: report.non_rejected.one_based(),
        undecided: report.undecided.one_based(),
        effort: outcome.state.effort,
        iterations: outcome.state.iteration,
        stop: outcome.trace.stop,
        coverage_violation: outcome.state.coverage_violation,
        forced,
    };
    let meta = Metadata::new("run", seed, cfg)?;
    let trace_rows: Vec<Vec<String>> = outcome
        .trace
        .records
        .iter()
        .map(|r| {
            vec![
                r.iteration,
                r.delta,
                r.effort,
                r.lower as u64,
                r.upper as u64,
                r.undecided as u64,
            ]
            .into_iter()
            .map(|v| v.to_string())
            .collect()
        })
        .collect();
    let trace_csv = csv_with_metadata(
        &meta,
        &[
            "iteration",
            "delta",
            "effort",
            "lower",
            "upper",
            "undecided",
        ],
        &trace_rows,
    )?;

    let show = |name: &str, set: &RejectionSet| {
        if set.len() <= 50 {
            println!("{name:<13} {:>6}  {set}", set.len());
        } else {
            println!("{name:<13} {:>6}", set.len());
        }
    };
    show("rejected", &report.rejected);
    show("non-rejected", &report.non_rejected);
    show("undecided", &report.undecided);
    if let Some(forced) = args
        .forced
        .then(|| forced_classification(&outcome.state, &cfg))
    {
        show("forced", &forced);
    }
    println!("effort        {:>6}", outcome.state.effort);
    if let Some(dir) = &args.common.out {
        write_file(
            dir,
            "classification.json",
            &json_with_metadata(&meta, &summary)?,
        )?;
        write_file(dir, "trace.csv", &trace_csv)?;
    }
    if let Some(path) = &args.save_state {
        std::fs::write(
            path,
            Snapshot::capture(&outcome.state, cfg, Some(seed)).to_json()?,
        )
        .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CompareMeta<'a> {
    engine: &'a EngineConfig,
    competitors: &'a [Competitor],
    runs: usize,
    rc_threshold: f64,
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let engine = args.engine.config()?;
    if args.naive.is_empty() && args.mcfdr.is_empty() {
        bail!("give at least one of --naive or --mcfdr");
    }
    if args.naive.contains(&0) {
        bail!("--naive sample counts must be at least 1");
    }
    if args.mcfdr.contains(&0) {
        bail!("--mcfdr exceedance thresholds u must be at least 1");
    }
    let active_estimate = match args.mcfdr_estimate {
        McfdrEstimate::Smoothed => ActiveEstimate::Smoothed,
        McfdrEstimate::Raw => ActiveEstimate::Raw,
    };
    let competitors: Vec<Competitor> = args
        .naive
        .iter()
        .map(|&samples| Competitor::Naive { samples })
        .chain(args.mcfdr.iter().map(|&exceedances| Competitor::Mcfdr {
            exceedances,
            round_batch: args.round_batch,
            active_estimate,
        }))
        .collect();
    let pstar = io::read_pvalues(&args.pvalues)?;
    let cfg = CompareConfig {
        engine,
        competitors,
        runs: args.runs,
        seed: args.common.seed,
        rc_threshold: args.rc_threshold,
    };
    let table = in_pool(args.common.workers, || Ok(compare_methods(&pstar, &cfg)?))?;

    let meta = Metadata::new(
        "compare",
        cfg.seed,
        CompareMeta {
            engine: &cfg.engine,
            competitors: &cfg.competitors,
            runs: cfg.runs,
            rc_threshold: cfg.rc_threshold,
        },
    )?;
    let summary_rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|row| {
            vec![
                row.competitor.name().to_string(),
                row.competitor.parameter().to_string(),
                fmt_f64(row.mis),
                row.rc.to_string(),
                fmt_f64(row.effort),
                fmt_f64(row.undecided),
                fmt_f64(row.forced_mis),
                row.forced_rc.to_string(),
                fmt_f64(row.engine_effort),
            ]
        })
        .collect();
    let summary = csv_with_metadata(
        &meta,
        &[
            "method",
            "param",
            "mis",
            "rc",
            "N",
            "undecided",
            "forced_mis",
            "forced_rc",
            "mmctest_N",
        ],
        &summary_rows,
    )?;

    let mut run_rows = Vec::new();
    let mut freq_rows = Vec::new();
    let m = pstar.len();
    for (row, runs) in table.rows.iter().zip(&table.runs) {
        let (name, param) = (
            row.competitor.name().to_string(),
            row.competitor.parameter().to_string(),
        );
        for (r, rec) in runs.iter().enumerate() {
            run_rows.push(vec![
                name.clone(),
                param.clone(),
                r.to_string(),
                rec.mis.to_string(),
                rec.competitor.effort.to_string(),
                rec.undecided.to_string(),
                rec.forced_mis.to_string(),
                rec.engine_effort.to_string(),
            ]);
        }
        let comp: Vec<_> = runs.iter().map(|r| r.competitor.rejected.clone()).collect();
        let forced: Vec<_> = runs.iter().map(|r| r.forced.clone()).collect();
        let (fc, ff) = (
            rejection_frequencies(&comp, m),
            rejection_frequencies(&forced, m),
        );
        for i in 0..m {
            freq_rows.push(vec![
                name.clone(),
                param.clone(),
                (i + 1).to_string(),
                u8::from(table.ideal.contains(i)).to_string(),
                fmt_f64(fc[i]),
                fmt_f64(ff[i]),
            ]);
        }
    }

    match &args.common.out {
        Some(dir) => {
            write_file(dir, "compare.csv", &summary)?;
            write_file(
                dir,
                "compare_runs.csv",
                &csv_with_metadata(
                    &meta,
                    &[
                        "method",
                        "param",
                        "run",
                        "mis",
                        "N",
                        "undecided",
                        "forced_mis",
                        "mmctest_N",
                    ],
                    &run_rows,
                )?,
            )?;
            write_file(
                dir,
                "compare_frequencies.csv",
                &csv_with_metadata(
                    &meta,
                    &[
                        "method",
                        "param",
                        "hypothesis",
                        "ideal",
                        "rejection_freq",
                        "forced_rejection_freq",
                    ],
                    &freq_rows,
                )?,
            )?;
            write_file(
                dir,
                "compare.json",
                &json_with_metadata(&meta, serde_json::json!({ "rows": table.rows }))?,
            )?;
        }
        None => emit(None, "compare.csv", &summary)?,
    }
    Ok(())
}

fn quantile_header(probs: &[f64]) -> Vec<String> {
    probs.iter().map(|q| format!("q{}", q * 100.0)).collect()
}

fn cmd_scaling(args: ScalingArgs) -> Result<()> {
    let engine = args.engine.config()?;
    let population = io::read_pvalues(&args.pvalues)?;
    let cfg = ScalingConfig {
        engine,
        m_grid: args.m_grid.clone(),
        c_fraction: args.c_fraction,
        runs: args.runs,
        seed: args.common.seed,
        probs: DEFAULT_PROBS.to_vec(),
    };
    let rows = in_pool(args.common.workers, || {
        Ok(scaling_study(&population, &cfg)?)
    })?;
    let meta = Metadata::new("scaling", cfg.seed, &cfg)?;

    let mut header = vec!["m".to_string(), "c".to_string()];
    header.extend(quantile_header(&cfg.probs));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let summary: Vec<Vec<String>> = rows
        .iter()
        .map(|row| {
            let mut v = vec![row.m.to_string(), row.c.to_string()];
            v.extend(row.quantiles.iter().map(u64::to_string));
            v
        })
        .collect();
    let summary = csv_with_metadata(&meta, &header, &summary)?;
    let per_run: Vec<Vec<String>> = rows
        .iter()
        .flat_map(|row| {
            row.efforts
                .iter()
                .enumerate()
                .map(move |(r, e)| vec![row.m.to_string(), r.to_string(), e.to_string()])
        })
        .collect();

    emit(args.common.out.as_deref(), "scaling.csv", &summary)?;
    if let Some(dir) = &args.common.out {
        write_file(
            dir,
            "scaling_runs.csv",
            &csv_with_metadata(&meta, &["m", "run", "N"], &per_run)?,
        )?;
    }
    Ok(())
}

fn cmd_trace(args: TraceArgs) -> Result<()> {
    let engine = args.engine.config()?;
    let pstar = io::read_pvalues(&args.pvalues)?;
    let seed = args.common.seed;
    let traces = in_pool(args.common.workers, || {
        Ok(collect_traces(&pstar, &engine, args.runs, seed)?)
    })?;
    let curve = trace_effort_vs_undecided(&traces, pstar.len(), &DEFAULT_PROBS);
    let meta = Metadata::new(
        "trace",
        seed,
        serde_json::json!({ "engine": engine, "runs": args.runs }),
    )?;

    let mut header = vec!["undecided".to_string()];
    header.extend(quantile_header(&DEFAULT_PROBS));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = curve
        .iter()
        .map(|p| {
            let mut v = vec![p.undecided.to_string()];
            v.extend(p.quantiles.iter().map(u64::to_string));
            v
        })
        .collect();
    emit(
        args.common.out.as_deref(),
        "trace_curve.csv",
        &csv_with_metadata(&meta, &header, &rows)?,
    )
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("SEQMCT_LOG")).init();
    let result = match Cli::parse().command {
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Scaling(args) => cmd_scaling(args),
        Command::Trace(args) => cmd_trace(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
