//! Command line front end.
//!
//! The pipeline is: pick a problem (a built-in family or a JSON file),
//! then either run it forward (`run`, `sample`) or compile and certify it
//! (`verify`, `farkas`, `export`, `obbt`). Set SCPVERIFY_THREADS to pin
//! the worker count; output goes to stdout or `--out`.
//!
//! Exit codes: 0 on success, 2 on usage or data errors, 3 when a global
//! solve hit its time limit before certifying the requested gap.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use crate::encoder::lp::emit_lp_file;
use crate::encoder::{
    build_farkas, build_suboptimality, build_violation, Encoded, EncodeOptions, InexactnessModel,
};
use crate::families::{default_iterate_box, generate, Family, FamilyConfig, FAMILY_IDS};
use crate::globopt::{
    fixed_oracle, obbt_pass, solve_encoded, verify_sequential, GlobalOptions, GlobalStatus,
    OracleOptions,
};
use crate::model::json::ProblemFile;
use crate::model::{
    AlgorithmSchedule, ParameterSet, ParametricProblem, PerformanceMetric,
};
use crate::scprun::{run_schedule, sample_maximum};

#[derive(Debug, Parser)]
#[command(
    name = "scpverify",
    about = "Worst-case verification of SCP algorithms on parametric non-convex QCQPs",
    after_help = "Set SCPVERIFY_THREADS to control the worker pool size."
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the schedule at one parameter value and print the trace.
    Run(RunArgs),
    /// Sampled per-iteration worst case over the parameter set (CSV).
    Sample(SampleArgs),
    /// Certified worst-case bounds for each iteration count (JSON).
    Verify(VerifyArgs),
    /// Certify final-step subproblem feasibility, optionally on a load grid.
    Farkas(FarkasArgs),
    /// Write the compiled verification program as an LP-format file.
    Export(ExportArgs),
    /// Root bound-tightening report for the compiled program (CSV).
    Obbt(ObbtArgs),
}

#[derive(Debug, Args)]
struct Source {
    /// Built-in family id.
    #[arg(long, value_parser = FAMILY_IDS)]
    family: Option<String>,
    /// Problem JSON file (mutually exclusive with --family).
    #[arg(long, conflicts_with = "family")]
    problem_file: Option<PathBuf>,

    // family overrides; ignored with --problem-file
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    sparsity: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of continuous SCP iterations in the generated schedule.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    tau0: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Warm start from the reference solution at the parameter-set center.
    #[arg(long)]
    warm: Option<bool>,
    /// Parameter-set variant (1 or 2) where the family defines two sets.
    #[arg(long)]
    variant: Option<u8>,
    /// Uniform parameter lower bound override.
    #[arg(long)]
    pset_lo: Option<f64>,
    #[arg(long)]
    pset_hi: Option<f64>,
    #[arg(long)]
    delta_e: Option<f64>,
    /// Hybrid-vehicle load band.
    #[arg(long)]
    p_lb: Option<f64>,
    #[arg(long)]
    p_ub: Option<f64>,

    /// Uniform iterate-box override for the encoding (both bounds needed;
    /// required with --problem-file for verify/farkas/export/obbt).
    #[arg(long)]
    iter_lo: Option<f64>,
    #[arg(long)]
    iter_hi: Option<f64>,
}

#[derive(Debug, Args)]
struct OutArg {
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    /// Parameter value, comma separated; parameter-set center when omitted.
    #[arg(long, allow_hyphen_values = true)]
    x: Option<String>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[command(flatten)]
    source: Source,
    /// Metric: subopt, violation, or farkas.
    #[arg(long, default_value = "subopt")]
    metric: String,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    sample_seed: u64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct SolveOpts {
    /// Relative optimality gap target.
    #[arg(long, default_value_t = 2e-2)]
    rel_gap: f64,
    /// Absolute gap target.
    #[arg(long, default_value_t = 1e-9)]
    abs_gap: f64,
    /// Wall-clock limit in seconds per solve.
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long, default_value_t = 100_000)]
    node_limit: usize,
    /// Run optimization-based bound tightening at the root.
    #[arg(long)]
    obbt: bool,
    /// Progress lines on stderr.
    #[arg(long)]
    log: bool,
}

impl SolveOpts {
    fn to_global(&self) -> GlobalOptions {
        GlobalOptions {
            rel_gap: self.rel_gap,
            abs_gap: self.abs_gap,
            time_limit: self.time_limit,
            node_limit: self.node_limit,
            obbt: self.obbt,
            log: self.log,
            ..GlobalOptions::default()
        }
    }
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    source: Source,
    /// Metric: subopt, violation, or farkas.
    #[arg(long, default_value = "subopt")]
    metric: String,
    /// Inexactness model: exact, dist:EPS, or kkt:EPS.
    #[arg(long, default_value = "exact")]
    inexact: String,
    /// Largest iteration count to certify; schedule length when omitted.
    #[arg(long)]
    k_max: Option<usize>,
    #[command(flatten)]
    solve: SolveOpts,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct FarkasArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value = "exact")]
    inexact: String,
    /// Sweep an N x N grid over the load band (family sources only);
    /// single certification when omitted.
    #[arg(long)]
    grid: Option<usize>,
    /// Load band swept by --grid, comma separated lo,hi.
    #[arg(long, default_value = "0.0,2.0", allow_hyphen_values = true)]
    grid_range: String,
    #[command(flatten)]
    solve: SolveOpts,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value = "subopt")]
    metric: String,
    #[arg(long, default_value = "exact")]
    inexact: String,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct ObbtArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value = "subopt")]
    metric: String,
    #[arg(long, default_value = "exact")]
    inexact: String,
    /// Per-variable time budget in seconds.
    #[arg(long, default_value_t = 5.0)]
    time_per_var: f64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("reading {path}: {err}")]
    Io { path: String, err: std::io::Error },
    #[error("parsing {path}: {err}")]
    Json { path: String, err: serde_json::Error },
    #[error(transparent)]
    Schema(#[from] crate::model::json::SchemaError),
    #[error(transparent)]
    Family(#[from] crate::families::FamilyError),
    #[error(transparent)]
    Run(#[from] crate::scprun::RunError),
    #[error(transparent)]
    Encode(#[from] crate::encoder::EncodeError),
    #[error(transparent)]
    Glob(#[from] crate::globopt::GlobError),
    #[error(transparent)]
    Program(#[from] crate::encoder::ProgramError),
    #[error("lp emit: {0}")]
    Lp(String),
}

struct Loaded {
    problem: ParametricProblem,
    schedule: AlgorithmSchedule,
    pset: ParameterSet,
    /// Family config when the source was a family (grid sweeps re-generate).
    config: Option<FamilyConfig>,
    iterate_box: Option<(Vec<f64>, Vec<f64>)>,
}

impl Source {
    fn load(&self) -> Result<Loaded, CliError> {
        if let Some(path) = &self.problem_file {
            let text = std::fs::read_to_string(path).map_err(|err| CliError::Io {
                path: path.display().to_string(),
                err,
            })?;
            let file: ProblemFile =
                serde_json::from_str(&text).map_err(|err| CliError::Json {
                    path: path.display().to_string(),
                    err,
                })?;
            let (problem, schedule, pset) = file.into_parts()?;
            let iterate_box = match (self.iter_lo, self.iter_hi) {
                (Some(lo), Some(hi)) => Some((vec![lo; problem.n], vec![hi; problem.n])),
                _ => None,
            };
            return Ok(Loaded { problem, schedule, pset, config: None, iterate_box });
        }
        let id = self
            .family
            .as_deref()
            .ok_or_else(|| CliError::Usage("pass --family or --problem-file".into()))?;
        let cfg = self.config(Family::parse(id)?)?;
        let (problem, schedule, pset) = generate(&cfg)?;
        let mut iterate_box = default_iterate_box(&cfg);
        if let (Some(lo), Some(hi)) = (self.iter_lo, self.iter_hi) {
            iterate_box = (vec![lo; problem.n], vec![hi; problem.n]);
        }
        Ok(Loaded { problem, schedule, pset, config: Some(cfg), iterate_box: Some(iterate_box) })
    }

    fn config(&self, family: Family) -> Result<FamilyConfig, CliError> {
        let mut cfg = FamilyConfig::new(family);
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { cfg.$f = v; } )* }
        }
        set!(n, d, horizon, sparsity, seed, iters, rho, tau0, kappa, lambda, warm, variant, delta_e);
        if let Some(v) = self.p_lb {
            cfg.p_load_lb = v;
        }
        if let Some(v) = self.p_ub {
            cfg.p_load_ub = v;
        }
        cfg.pset_lo = self.pset_lo.or(cfg.pset_lo);
        cfg.pset_hi = self.pset_hi.or(cfg.pset_hi);
        Ok(cfg)
    }
}

fn parse_metric(s: &str) -> Result<PerformanceMetric, CliError> {
    match s {
        "subopt" => Ok(PerformanceMetric::Suboptimality),
        "violation" => Ok(PerformanceMetric::ViolationSquaredL2),
        "farkas" => Ok(PerformanceMetric::SubproblemFeasibility),
        other => Err(CliError::Usage(format!(
            "unknown metric '{other}' (expected subopt, violation, or farkas)"
        ))),
    }
}

fn parse_inexact(s: &str) -> Result<InexactnessModel, CliError> {
    if s == "exact" {
        return Ok(InexactnessModel::Exact);
    }
    let bad = || {
        CliError::Usage(format!(
            "unknown inexactness model '{s}' (expected exact, dist:EPS, or kkt:EPS)"
        ))
    };
    let (kind, eps) = s.split_once(':').ok_or_else(bad)?;
    let eps: f64 = eps.parse().map_err(|_| bad())?;
    if !(eps >= 0.0) {
        return Err(bad());
    }
    match kind {
        "dist" => Ok(InexactnessModel::DistanceToOpt { eps }),
        "kkt" => Ok(InexactnessModel::KktResidual { eps }),
        _ => Err(bad()),
    }
}

fn parse_vector(s: &str, len: usize) -> Result<DVector<f64>, CliError> {
    let vals: Result<Vec<f64>, _> = s.split(',').map(|t| t.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|e| CliError::Usage(format!("bad --x value: {e}")))?;
    if vals.len() != len {
        return Err(CliError::Usage(format!(
            "--x has {} coordinates, the parameter set has {len}",
            vals.len()
        )));
    }
    Ok(DVector::from_vec(vals))
}

fn encode_options(loaded: &Loaded, inexact: &str) -> Result<EncodeOptions, CliError> {
    let (lo, hi) = loaded.iterate_box.clone().ok_or_else(|| {
        CliError::Usage("encoding needs an iterate box; pass --iter-lo and --iter-hi".into())
    })?;
    Ok(EncodeOptions::new(lo, hi).with_inexact(parse_inexact(inexact)?))
}

fn build_program(
    loaded: &Loaded,
    metric: PerformanceMetric,
    inexact: &str,
) -> Result<Encoded, CliError> {
    let eopts = encode_options(loaded, inexact)?;
    let enc = match metric {
        PerformanceMetric::Suboptimality => {
            build_suboptimality(&loaded.problem, &loaded.schedule, &loaded.pset, &eopts)?
        }
        PerformanceMetric::ViolationSquaredL2 => {
            build_violation(&loaded.problem, &loaded.schedule, &loaded.pset, &eopts)?
        }
        PerformanceMetric::SubproblemFeasibility => {
            build_farkas(&loaded.problem, &loaded.schedule, &loaded.pset, &eopts)?
        }
    };
    Ok(enc)
}

fn write_out(out: &OutArg, text: &str) -> Result<(), CliError> {
    match &out.out {
        Some(path) => std::fs::write(path, text).map_err(|err| CliError::Io {
            path: path.display().to_string(),
            err,
        }),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn cmd_run(args: &RunArgs) -> Result<i32, CliError> {
    let loaded = args.source.load()?;
    let x = match &args.x {
        Some(s) => parse_vector(s, loaded.pset.d())?,
        None => loaded.pset.center(),
    };
    let trace = run_schedule(&loaded.problem, &loaded.schedule, &x)?;
    let mut doc = trace.to_json();
    doc["x"] = serde_json::json!(x.as_slice());
    write_out(&args.out, &serde_json::to_string_pretty(&doc).expect("serializable"))?;
    Ok(0)
}

fn cmd_sample(args: &SampleArgs) -> Result<i32, CliError> {
    let loaded = args.source.load()?;
    let metric = parse_metric(&args.metric)?;
    let oopts = OracleOptions {
        box_lo: loaded
            .iterate_box
            .as_ref()
            .map(|(lo, _)| DVector::from_vec(lo.clone())),
        box_hi: loaded
            .iterate_box
            .as_ref()
            .map(|(_, hi)| DVector::from_vec(hi.clone())),
        ..OracleOptions::default()
    };
    let oracle = move |fixed: &crate::model::FixedProblem| {
        fixed_oracle(fixed, &oopts).map(|(v, _)| v).unwrap_or(f64::NAN)
    };
    let use_oracle = metric == PerformanceMetric::Suboptimality;
    let report = sample_maximum(
        &loaded.problem,
        &loaded.schedule,
        &loaded.pset,
        metric,
        args.samples,
        args.sample_seed,
        use_oracle.then_some(&oracle),
    )?;
    if report.failed_samples > 0 {
        eprintln!("{} of {} samples failed to complete", report.failed_samples, args.samples);
    }
    write_out(&args.out, &report.to_csv())?;
    Ok(0)
}

fn cmd_verify(args: &VerifyArgs) -> Result<i32, CliError> {
    let loaded = args.source.load()?;
    let metric = parse_metric(&args.metric)?;
    let eopts = encode_options(&loaded, &args.inexact)?;
    let gopts = args.solve.to_global();
    let k_max = args.k_max.unwrap_or(loaded.schedule.k());
    let entries = verify_sequential(
        &loaded.problem,
        &loaded.schedule,
        &loaded.pset,
        metric,
        &eopts,
        k_max,
        &gopts,
    )?;
    let mut timed_out = false;
    let rows: Vec<serde_json::Value> = entries
        .iter()
        .map(|e| {
            if e.result.status == GlobalStatus::TimeLimit {
                timed_out = true;
            }
            let mut doc = e.result.to_json();
            doc["k"] = serde_json::json!(e.k);
            doc
        })
        .collect();
    let doc = serde_json::json!({ "metric": args.metric, "entries": rows });
    write_out(&args.out, &serde_json::to_string_pretty(&doc).expect("serializable"))?;
    Ok(if timed_out { 3 } else { 0 })
}

fn farkas_row(loaded: &Loaded, inexact: &str, gopts: &GlobalOptions) -> Result<serde_json::Value, CliError> {
    let enc = build_program(loaded, PerformanceMetric::SubproblemFeasibility, inexact)?;
    let res = solve_encoded(&loaded.problem, &loaded.schedule, &loaded.pset, &enc, gopts)?;
    let feasible_certified =
        res.status != GlobalStatus::TimeLimit && res.upper_bound <= 0.0 && !res.dual_cap_active;
    let mut doc = res.to_json();
    doc["feasible_certified"] = serde_json::json!(feasible_certified);
    Ok(doc)
}

fn cmd_farkas(args: &FarkasArgs) -> Result<i32, CliError> {
    let gopts = args.solve.to_global();
    let Some(grid) = args.grid else {
        let loaded = args.source.load()?;
        let doc = farkas_row(&loaded, &args.inexact, &gopts)?;
        let timed_out = doc["status"] == serde_json::json!(GlobalStatus::TimeLimit);
        write_out(&args.out, &serde_json::to_string_pretty(&doc).expect("serializable"))?;
        return Ok(if timed_out { 3 } else { 0 });
    };
    if grid < 2 {
        return Err(CliError::Usage("--grid must be at least 2".into()));
    }
    let base = args.source.load()?;
    let Some(base_cfg) = base.config else {
        return Err(CliError::Usage("--grid needs a --family source".into()));
    };
    let (range_lo, range_hi) = {
        let parts: Vec<&str> = args.grid_range.split(',').collect();
        let bad = || CliError::Usage("--grid-range expects lo,hi".into());
        if parts.len() != 2 {
            return Err(bad());
        }
        let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        if lo > hi {
            return Err(bad());
        }
        (lo, hi)
    };
    let mut csv = String::from("p_load_lb,p_load_ub,gamma_upper,status,feasible_certified\n");
    let mut timed_out = false;
    for i in 0..grid {
        let lb = range_lo + (range_hi - range_lo) * i as f64 / (grid - 1) as f64;
        for j in i..grid {
            let ub = range_lo + (range_hi - range_lo) * j as f64 / (grid - 1) as f64;
            let mut cfg = base_cfg.clone();
            cfg.p_load_lb = lb;
            cfg.p_load_ub = ub;
            let (problem, schedule, pset) = generate(&cfg)?;
            let iterate_box = Some(default_iterate_box(&cfg));
            let loaded =
                Loaded { problem, schedule, pset, config: Some(cfg), iterate_box };
            let doc = farkas_row(&loaded, &args.inexact, &gopts)?;
            if doc["status"] == serde_json::json!(GlobalStatus::TimeLimit) {
                timed_out = true;
            }
            csv.push_str(&format!(
                "{lb},{ub},{},{},{}\n",
                doc["upper_bound"], doc["status"].as_str().unwrap_or("?"), doc["feasible_certified"]
            ));
        }
    }
    write_out(&args.out, &csv)?;
    Ok(if timed_out { 3 } else { 0 })
}

fn cmd_export(args: &ExportArgs) -> Result<i32, CliError> {
    let loaded = args.source.load()?;
    let metric = parse_metric(&args.metric)?;
    let enc = build_program(&loaded, metric, &args.inexact)?;
    let text = emit_lp_file(&enc.prog).map_err(|e| CliError::Lp(e.to_string()))?;
    write_out(&args.out, &text)?;
    Ok(0)
}

fn cmd_obbt(args: &ObbtArgs) -> Result<i32, CliError> {
    let loaded = args.source.load()?;
    let metric = parse_metric(&args.metric)?;
    let enc = build_program(&loaded, metric, &args.inexact)?;
    let tightened = obbt_pass(&enc.prog, args.time_per_var)?;
    // duplicate names get disambiguated by index
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    let mut csv = String::from("var,declared_lo,declared_hi,tight_lo,tight_hi\n");
    for (v, t) in enc.prog.vars.iter().zip(&tightened) {
        let k = seen.entry(v.name.as_str()).or_insert(0);
        let name = if *k == 0 { v.name.clone() } else { format!("{}#{}", v.name, k) };
        *k += 1;
        csv.push_str(&format!("{name},{},{},{},{}\n", v.lo, v.hi, t.lo, t.hi));
    }
    write_out(&args.out, &csv)?;
    Ok(0)
}

/// Entry point; returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Farkas(a) => cmd_farkas(a),
        Command::Export(a) => cmd_export(a),
        Command::Obbt(a) => cmd_obbt(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
