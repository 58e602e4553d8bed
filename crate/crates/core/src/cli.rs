//! Command-line front end.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rand::Rng;

use crate::adjust::AdjustmentMethod;
use crate::assignment::{AssignmentMechanism, CompleteRandomization};
use crate::data::{
    impute_sharp_null, load_dataset_with_compliance, write_observed_csv, ComplianceStatus, ObservedDataset,
    Schema, ScienceTable,
};
use crate::engine::{analyze, exact_pvalue, EngineConfig};
use crate::error::{Error, Result};
use crate::imputation::CompliancePrior;
use crate::report::{analysis_report, exact_report, replication_report, Format, Metadata};
use crate::rng::StreamKey;
use crate::simgen::{replicate, simulate, ScenarioSpec};
use crate::statistics::{cross_estimands, outcome_estimands, statistic_vector, EstimandDef, StatisticKind, Tail};

/// Environment variable read when `--workers` is not given.
pub const WORKERS_ENV: &str = "COMPLIER_RI_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "complier-ri", version, about = "Randomization tests for complier effects with familywise adjustment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Posterior predictive p-values with familywise adjustments.
    Analyze(AnalyzeArgs),
    /// Print a simulated dataset.
    Simulate(SimulateArgs),
    /// Exact p-values by enumerating all assignments.
    Exact(ExactArgs),
    /// Rejection rates over simulated replications.
    Replicate(ReplicateArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// `z=COL,d=COL,cell=COL,y=A:B:C[,id=COL][,k=K][,c=COL]`
    #[arg(long)]
    pub schema: String,
    /// `all` (cell x outcome), `outcomes`, or a list of `CELL:COLUMN` with
    /// `*` for every cell.
    #[arg(long, default_value = "all")]
    pub estimands: String,
}

#[derive(Debug, Args)]
pub struct EngineArgs {
    #[arg(long, default_value_t = 10_000)]
    pub m: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "two")]
    pub tail: String,
    #[arg(long, default_value = "all")]
    pub adjust: String,
    #[arg(long = "burn-in", default_value_t = 50)]
    pub burn_in: usize,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, default_value = "tsv")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "cace")]
    pub statistic: String,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: String,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print the full Science table instead of the observed data.
    #[arg(long)]
    pub science: bool,
}

#[derive(Debug, Args)]
pub struct ExactArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "itt")]
    pub statistic: String,
    #[arg(long, default_value = "two")]
    pub tail: String,
    #[arg(long = "enum-limit", default_value_t = 1_000_000)]
    pub enum_limit: u128,
    #[arg(long, default_value = "tsv")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct ReplicateArgs {
    #[arg(long)]
    pub scenario: String,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Comma-separated statistics.
    #[arg(long, default_value = "itt,cace")]
    pub statistic: String,
    #[command(flatten)]
    pub engine: EngineArgs,
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Scenario(_) => 3,
        Error::EnumerationLimit { .. } => 4,
        Error::Internal(_) => 1,
        _ => 2,
    }
}

/// Short machine-readable name of an error.
pub fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::Parse { .. } => "parse",
        Error::OneSidedViolation { .. } => "one_sided_violation",
        Error::CategoryOutOfRange { .. } => "category_out_of_range",
        Error::DuplicateId(_) => "duplicate_id",
        Error::Schema(_) => "schema",
        Error::LengthMismatch { .. } => "length_mismatch",
        Error::UnknownCompliance(_) => "unknown_compliance",
        Error::InvalidCompliance(_) => "invalid_compliance",
        Error::EmptyArm { .. } => "empty_arm",
        Error::DegenerateCompliance { .. } => "degenerate_compliance",
        Error::EnumerationLimit { .. } => "enumeration_limit",
        Error::Config(_) => "config",
        Error::Scenario(_) => "scenario",
        Error::Internal(_) => "internal",
        Error::Io(_) => "io",
    }
}

/// Single-line JSON error message.
pub fn error_line(err: &Error) -> String {
    serde_json::json!({"error": error_kind(err), "message": err.to_string()}).to_string()
}

/// Parses `args` (including the program name) and runs the command,
/// writing the report to `out`.
pub fn run_from<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string().trim().replace('\n', " ")))?;
    run(cli, out)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let report = match cli.command {
        Command::Analyze(a) => run_analyze(a)?,
        Command::Simulate(a) => run_simulate(a)?,
        Command::Exact(a) => run_exact(a)?,
        Command::Replicate(a) => run_replicate(a)?,
    };
    out.write_all(report.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn load(input: &InputArgs) -> Result<(Schema, ObservedDataset, Option<Vec<ComplianceStatus>>)> {
    let schema = Schema::parse(&input.schema)?;
    let file = File::open(&input.input)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", input.input.display()))))?;
    let (obs, compliance) = load_dataset_with_compliance(BufReader::new(file), &schema)?;
    Ok((schema, obs, compliance))
}

/// Resolves `--estimands` against the loaded data.
pub fn parse_estimands(spec: &str, schema: &Schema, obs: &ObservedDataset) -> Result<Vec<EstimandDef>> {
    let cell_name = schema.cell.as_deref().unwrap_or("cell");
    let names = &schema.y;
    let estimands = match spec.trim() {
        "all" => cross_estimands(obs.cell_count(), cell_name, names),
        "outcomes" => outcome_estimands(names),
        list => list
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|part| {
                let (cell, col) = part
                    .split_once(':')
                    .ok_or_else(|| Error::Config(format!("estimand {part:?} is not CELL:COLUMN")))?;
                let j = names
                    .iter()
                    .position(|n| n == col)
                    .ok_or_else(|| Error::Config(format!("estimand {part:?}: unknown outcome column")))?;
                if cell == "*" {
                    Ok(EstimandDef::new(col, None, j))
                } else {
                    let c: usize = cell
                        .parse()
                        .map_err(|_| Error::Config(format!("estimand {part:?}: bad cell")))?;
                    Ok(EstimandDef::new(format!("{cell_name}={c}/{col}"), Some(c), j))
                }
            })
            .collect::<Result<Vec<_>>>()?,
    };
    if estimands.is_empty() {
        return Err(Error::Config("no estimands selected".into()));
    }
    for e in &estimands {
        e.validate(obs.j(), obs.cell_count())?;
    }
    Ok(estimands)
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| rand::rng().random())
}

fn workers(requested: Option<usize>) -> Result<usize> {
    let from_env = std::env::var(WORKERS_ENV).ok().filter(|v| !v.trim().is_empty());
    let n = match (requested, from_env) {
        (Some(n), _) => n,
        (None, Some(v)) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{WORKERS_ENV}={v:?} is not a worker count")))?,
        (None, None) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    if n == 0 {
        return Err(Error::Config("worker count must be at least 1".into()));
    }
    Ok(n)
}

fn with_workers<T: Send>(requested: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers(requested)?)
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?;
    pool.install(f)
}

struct Engine {
    cfg: EngineConfig,
    seed: u64,
    methods: Vec<AdjustmentMethod>,
    format: Format,
}

fn engine_settings(a: &EngineArgs) -> Result<Engine> {
    let cfg = EngineConfig {
        m: a.m,
        alpha: a.alpha,
        tail: a.tail.parse()?,
        prior: CompliancePrior::default(),
        burn_in: a.burn_in,
        ..EngineConfig::default()
    };
    cfg.validate()?;
    Ok(Engine {
        cfg,
        seed: resolve_seed(a.seed),
        methods: AdjustmentMethod::parse_list(&a.adjust)?,
        format: a.format.parse()?,
    })
}

fn engine_metadata(meta: &mut Metadata, e: &Engine) {
    let methods: Vec<&str> = e.methods.iter().map(|m| m.as_str()).collect();
    meta.push("m", e.cfg.m as u64)
        .push("alpha", e.cfg.alpha)
        .push("seed", e.seed)
        .push("tail", e.cfg.tail.as_str())
        .push("burn_in", e.cfg.burn_in as u64)
        .push(
            "prior",
            format!(
                "beta({},{}),dirichlet({})",
                e.cfg.prior.omega_a, e.cfg.prior.omega_b, e.cfg.prior.dirichlet_weight
            ),
        )
        .push("adjust", methods.join(","));
}

fn run_analyze(a: AnalyzeArgs) -> Result<String> {
    let kind: StatisticKind = a.statistic.parse()?;
    let engine = engine_settings(&a.engine)?;
    let (schema, obs, _) = load(&a.input)?;
    let estimands = parse_estimands(&a.input.estimands, &schema, &obs)?;
    let mech = CompleteRandomization::from_observed(&obs);
    let key = StreamKey::from_seed(engine.seed);
    let res = with_workers(a.engine.workers, || analyze::<f64, _>(&obs, kind, &estimands, &engine.cfg, &mech, key))?;
    let mut meta = Metadata::default();
    meta.push("command", "analyze")
        .push("input", a.input.input.display().to_string())
        .push("schema", a.input.schema.clone())
        .push("estimands", a.input.estimands.clone())
        .push("statistic", kind.as_str())
        .push("units", obs.len() as u64)
        .push("treated", obs.n_treated() as u64);
    engine_metadata(&mut meta, &engine);
    meta.push("cutoff", res.cutoff);
    let degenerate: Vec<String> = res.degenerate.iter().map(|d| d.to_string()).collect();
    meta.push("degenerate_iterations", degenerate.join(","));
    Ok(analysis_report(&res, &engine.methods, &meta, engine.format))
}

fn science_csv(table: &ScienceTable) -> String {
    let j = table.units().first().map_or(0, |u| u.y0.len());
    let mut out = String::from("id,cell,compliance");
    for z in 0..2 {
        for i in 1..=j {
            out.push_str(&format!(",y{i}_{z}"));
        }
    }
    out.push('\n');
    for u in table.units() {
        out.push_str(&format!("{},{},{}", u.id, u.cell, u.compliance.as_str()));
        for y in u.y0.iter().chain(&u.y1) {
            out.push_str(&format!(",{y}"));
        }
        out.push('\n');
    }
    out
}

fn run_simulate(a: SimulateArgs) -> Result<String> {
    let spec: ScenarioSpec = a.scenario.parse()?;
    let seed = resolve_seed(a.seed);
    let (table, obs) = simulate(&spec, &mut StreamKey::from_seed(seed).rng())?;
    let mut out = format!("# scenario={spec}\n# seed={seed}\n");
    if a.science {
        out.push_str(&science_csv(&table));
    } else {
        let mut buf = Vec::new();
        write_observed_csv(&obs, &mut buf)?;
        out.push_str(&String::from_utf8(buf).map_err(|e| Error::Internal(e.to_string()))?);
    }
    Ok(out)
}

fn run_exact(a: ExactArgs) -> Result<String> {
    let kind: StatisticKind = a.statistic.parse()?;
    let tail: Tail = a.tail.parse()?;
    let format: Format = a.format.parse()?;
    let (schema, obs, compliance) = load(&a.input)?;
    let estimands = parse_estimands(&a.input.estimands, &schema, &obs)?;
    let compliance = match compliance {
        Some(c) => c,
        None if !kind.uses_receipt() => obs
            .units()
            .iter()
            .map(|u| if u.z && !u.d_obs { ComplianceStatus::NeverTaker } else { ComplianceStatus::Complier })
            .collect(),
        None if obs.units().iter().all(|u| !u.z || u.d_obs) => vec![ComplianceStatus::Complier; obs.len()],
        None => {
            return Err(Error::Config(
                "exact CACE p-values need a compliance column (c=COL) or full compliance".into(),
            ))
        }
    };
    let table = impute_sharp_null(&obs, &compliance)?;
    let mech = CompleteRandomization::from_observed(&obs);
    let t_obs: Vec<f64> = statistic_vector(&obs, kind, &estimands)?;
    let p = exact_pvalue(&table, &t_obs, kind, &estimands, &mech, tail, a.enum_limit)?;
    let mut meta = Metadata::default();
    meta.push("command", "exact")
        .push("input", a.input.input.display().to_string())
        .push("schema", a.input.schema.clone())
        .push("statistic", kind.as_str())
        .push("tail", tail.as_str())
        .push("assignments", mech.space_size().to_string());
    let labels: Vec<String> = estimands.iter().map(|e| e.label.clone()).collect();
    Ok(exact_report(&labels, &t_obs, &p, &meta, format))
}

fn run_replicate(a: ReplicateArgs) -> Result<String> {
    let spec: ScenarioSpec = a.scenario.parse()?;
    let kinds = a
        .statistic
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<Vec<StatisticKind>>>()?;
    if kinds.is_empty() {
        return Err(Error::Config("no statistics selected".into()));
    }
    let engine = engine_settings(&a.engine)?;
    let key = StreamKey::from_seed(engine.seed);
    let table = with_workers(a.engine.workers, || {
        replicate::<f64>(&spec, &kinds, &engine.methods, a.reps, &engine.cfg, key)
    })?;
    let mut meta = Metadata::default();
    let stats: Vec<&str> = kinds.iter().map(|k| k.as_str()).collect();
    meta.push("command", "replicate")
        .push("scenario", spec.to_string())
        .push("reps", a.reps as u64)
        .push("statistics", stats.join(","));
    engine_metadata(&mut meta, &engine);
    Ok(replication_report(&table, &meta, engine.format))
}
