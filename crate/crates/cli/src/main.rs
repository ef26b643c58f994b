//! `fedstat`: k-anonymous summary tables, federated Mann-Whitney tests,
//! federated quantiles, simulation runs and transcript audits.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad input or arguments,
//! 3 privacy precondition violated (or audit failed), 4 privacy-violating
//! method refused.

mod input;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use fedstat::join::{audit_transcript, ReleaseTranscript};
use fedstat::quantile::{QuantileEstimate, QuantileMethod};
use fedstat::rank::{mwu_combined, CenterTestStat, TestMethod};
use fedstat::runtime::{Coordinator, TableSettings, WireEntry};
use fedstat::sim::{
    error_records_csv, error_summary_csv, pvalue_records_csv, pvalue_summary_csv,
    run_quantile_experiment, run_testing_experiment, summarize_errors, summarize_pvalues,
    write_outputs, GammaSimConfig, RunMeta, TestSimConfig, DEFAULT_PROBS,
};
use fedstat::{ExtremePolicy, FedError, Group, GroupedSampleF64, PrivacyParam, Sidedness};

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (",
    env!("FEDSTAT_BUILD_HASH"),
    ")"
);

#[derive(Parser)]
#[command(name = "fedstat", version = VERSION, about = "Privacy-preserving federated rank tests and quantiles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the k-anonymous federated summary table.
    BuildTable(BuildArgs),
    /// Federated Mann-Whitney test between groups x and y.
    Test(TestArgs),
    /// Federated quantile estimates for one group.
    Quantiles(QuantileArgs),
    /// Monte-Carlo study of the federated tests.
    SimulateTests(SimArgs),
    /// Monte-Carlo study of the federated quantile estimators.
    SimulateQuantiles(SimQuantileArgs),
    /// Check that every released count in a transcript is 0 or at least k.
    Audit(AuditArgs),
}

#[derive(Args)]
struct DataArgs {
    /// CSV with columns `center[,group],value`; `-` reads stdin.
    #[arg(long, short)]
    input: PathBuf,
    /// Minimum nonzero released count.
    #[arg(long, short, default_value_t = 10)]
    k: u32,
    /// Write the primary output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write every protocol message (JSON array) to this file.
    #[arg(long)]
    dump_transcript: Option<PathBuf>,
}

#[derive(Args)]
struct TableArgs {
    /// How the outermost bin limits are released.
    #[arg(long, value_enum, default_value_t = PolicyArg::Buffer)]
    policy: PolicyArg,
    /// Lower domain limit for `--policy natural`.
    #[arg(long, allow_hyphen_values = true)]
    low: Option<f64>,
    /// Upper domain limit for `--policy natural`.
    #[arg(long, allow_hyphen_values = true)]
    high: Option<f64>,
    /// Seed for boundary anonymization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Buffer,
    Infinite,
    Natural,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum GroupArg {
    X,
    Y,
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    table: TableArgs,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
    /// Also write the release transcript (JSON array) to this file.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    table: TableArgs,
    /// sum, weighted, fisher, fedtable or combined.
    #[arg(long, short, value_parser = parse_test_method, default_value = "weighted")]
    method: TestMethod,
    /// two, greater (y tends to exceed x) or less.
    #[arg(long, value_parser = parse_sided, default_value = "two")]
    sided: Sidedness,
}

#[derive(Args)]
struct QuantileArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    table: TableArgs,
    /// loss, yj-table, yj-mle or yj-mle-grid.
    #[arg(long, short, value_parser = parse_quantile_method, default_value = "yj-table")]
    method: QuantileMethod,
    /// Comma-separated probabilities.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_PROBS.to_vec())]
    probs: Vec<f64>,
    #[arg(long, value_enum, default_value_t = GroupArg::X)]
    group: GroupArg,
    /// Refuse methods that release raw values (exit code 4).
    #[arg(long)]
    forbid_privacy_violating: bool,
}

#[derive(Args)]
struct SimCommon {
    /// JSON configuration file.
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory for records.csv, summary.csv and meta.json.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Override the configured replicate count.
    #[arg(long)]
    replicates: Option<usize>,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    common: SimCommon,
    /// Comma-separated test methods (default: all).
    #[arg(long, value_delimiter = ',', value_parser = parse_test_method)]
    methods: Vec<TestMethod>,
}

#[derive(Args)]
struct SimQuantileArgs {
    #[command(flatten)]
    common: SimCommon,
    /// Comma-separated quantile methods (default: all).
    #[arg(long, value_delimiter = ',', value_parser = parse_quantile_method)]
    methods: Vec<QuantileMethod>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_PROBS.to_vec())]
    probs: Vec<f64>,
}

#[derive(Args)]
struct AuditArgs {
    /// Build-table output or a bare transcript array.
    #[arg(long, short)]
    transcript: PathBuf,
    /// Privacy parameter; required for a bare transcript.
    #[arg(long, short)]
    k: Option<u32>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_test_method(s: &str) -> Result<TestMethod, String> {
    s.parse().map_err(|e: FedError| e.to_string())
}

fn parse_quantile_method(s: &str) -> Result<QuantileMethod, String> {
    s.parse().map_err(|e: FedError| e.to_string())
}

fn parse_sided(s: &str) -> Result<Sidedness, String> {
    s.parse().map_err(|e: FedError| e.to_string())
}

/// Error with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<FedError> for Failure {
    fn from(e: FedError) -> Self {
        let code = match &e {
            e if e.is_privacy_precondition() => 3,
            FedError::PrivacyViolatingForbidden(_) => 4,
            FedError::InvalidInput(_) | FedError::Json(_) | FedError::OutsideDomain { .. } => 2,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<input::ParseError> for Failure {
    fn from(e: input::ParseError) -> Self {
        Self::usage(e.0)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self {
            code: 1,
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self::usage(format!("json: {e}"))
    }
}

type CmdResult = Result<(), Failure>;

fn emit(out: Option<&Path>, text: &str) -> CmdResult {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn to_json<S: Serialize>(v: &S) -> Result<String, Failure> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn privacy(k: u32) -> Result<PrivacyParam, Failure> {
    PrivacyParam::new(k).map_err(Failure::from)
}

fn settings(k: PrivacyParam, t: &TableArgs) -> Result<TableSettings, Failure> {
    let policy = match t.policy {
        PolicyArg::Buffer => ExtremePolicy::Buffer,
        PolicyArg::Infinite => ExtremePolicy::Infinite,
        PolicyArg::Natural => match (t.low, t.high) {
            (Some(low), Some(high)) if low < high => ExtremePolicy::Natural { low, high },
            _ => return Err(Failure::usage("--policy natural needs --low < --high")),
        },
    };
    Ok(TableSettings {
        k,
        policy,
        seed: t.seed,
    })
}

fn coordinator(
    samples: Vec<GroupedSampleF64>,
    k: PrivacyParam,
) -> Result<Coordinator<f64>, Failure> {
    Ok(Coordinator::from_samples(samples, k)?)
}

/// Writes the wire log as an array of message objects.
fn dump_wire(path: Option<&Path>, wire: &[WireEntry]) -> CmdResult {
    if let Some(p) = path {
        let msgs = wire
            .iter()
            .map(|e| serde_json::from_str::<Value>(&e.json))
            .collect::<Result<Vec<_>, _>>()?;
        std::fs::write(p, to_json(&msgs)?)?;
    }
    Ok(())
}

fn build_table(a: BuildArgs) -> CmdResult {
    let k = privacy(a.data.k)?;
    let s = settings(k, &a.table)?;
    let samples = input::read_dataset(&a.data.input)?;
    let mut coord = coordinator(samples, k)?;
    // Wire log first: a refused join still leaves its messages behind.
    let built = coord.run_table_protocol(s.k, s.policy, s.seed);
    dump_wire(a.data.dump_transcript.as_deref(), coord.wire_log())?;
    let built = built?;
    if let Some(p) = &a.transcript {
        std::fs::write(p, to_json(&built.transcript)?)?;
    }
    let text = match a.format {
        FormatArg::Json => to_json(&built)?,
        FormatArg::Csv => built.table.to_csv(),
    };
    emit(a.data.out.as_deref(), &text)
}

#[derive(Serialize)]
struct TestOutput<'a> {
    method: &'static str,
    statistic: f64,
    p_value: f64,
    sidedness: Sidedness,
    per_center: &'a [CenterTestStat<f64>],
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    warnings: &'a [String],
}

fn run_test(a: TestArgs) -> CmdResult {
    let k = privacy(a.data.k)?;
    let s = settings(k, &a.table)?;
    let samples = input::read_dataset(&a.data.input)?;
    let (result, per_center, wire) = if a.method == TestMethod::Combined {
        // Pooled benchmark: computed locally, nothing crosses a boundary.
        (mwu_combined(&samples, a.sided)?, Vec::new(), Vec::new())
    } else {
        let mut coord = coordinator(samples, k)?;
        let out = coord.run_mwu_protocol(a.method, a.sided, Some(s));
        let wire = coord.take_wire_log();
        dump_wire(a.data.dump_transcript.as_deref(), &wire)?;
        let out = out?;
        (out.result, out.per_center, wire)
    };
    if a.method == TestMethod::Combined {
        dump_wire(a.data.dump_transcript.as_deref(), &wire)?;
    }
    let out = TestOutput {
        method: a.method.name(),
        statistic: result.statistic,
        p_value: result.p_value,
        sidedness: result.sidedness,
        per_center: &per_center,
        warnings: &result.warnings,
    };
    emit(a.data.out.as_deref(), &to_json(&out)?)
}

fn run_quantiles(a: QuantileArgs) -> CmdResult {
    let k = privacy(a.data.k)?;
    let s = settings(k, &a.table)?;
    let group = match a.group {
        GroupArg::X => Group::X,
        GroupArg::Y => Group::Y,
    };
    let samples = input::read_dataset(&a.data.input)?;
    let mut coord = coordinator(samples, k)?.forbid_privacy_violating(a.forbid_privacy_violating);
    let out = coord.run_quantile_protocol(a.method, &a.probs, group, s);
    dump_wire(a.data.dump_transcript.as_deref(), coord.wire_log())?;
    let rows: Vec<QuantileEstimate<f64>> = out?.rows;
    emit(a.data.out.as_deref(), &to_json(&rows)?)
}

fn read_config<C: serde::de::DeserializeOwned>(path: &Path) -> Result<C, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn simulate_tests(a: SimArgs) -> CmdResult {
    let mut cfg: TestSimConfig = read_config(&a.common.config)?;
    cfg.replicates = a.common.replicates.unwrap_or(cfg.replicates);
    cfg.seed = a.common.seed.unwrap_or(cfg.seed);
    let methods = if a.methods.is_empty() {
        TestMethod::ALL.to_vec()
    } else {
        a.methods
    };
    let records = run_testing_experiment(&cfg, &methods, a.common.threads)?;
    let summary = summarize_pvalues(&records);
    let summary_csv = pvalue_summary_csv(&summary)?;
    let meta = RunMeta {
        experiment: "simulate-tests".into(),
        version: VERSION.into(),
        seed: cfg.seed,
        config: cfg,
        methods: methods.iter().map(|m| m.name().to_string()).collect(),
        probs: Vec::new(),
    };
    write_outputs(
        &a.common.out,
        &pvalue_records_csv(&records)?,
        &summary_csv,
        &meta,
    )?;
    emit(None, &summary_csv)
}

fn simulate_quantiles(a: SimQuantileArgs) -> CmdResult {
    let mut cfg: GammaSimConfig = read_config(&a.common.config)?;
    cfg.replicates = a.common.replicates.unwrap_or(cfg.replicates);
    cfg.seed = a.common.seed.unwrap_or(cfg.seed);
    let methods = if a.methods.is_empty() {
        QuantileMethod::ALL.to_vec()
    } else {
        a.methods
    };
    let records = run_quantile_experiment(&cfg, &methods, &a.probs, a.common.threads)?;
    let summary_csv = error_summary_csv(&summarize_errors(&cfg, &records))?;
    let meta = RunMeta {
        experiment: "simulate-quantiles".into(),
        version: VERSION.into(),
        seed: cfg.seed,
        config: cfg,
        methods: methods.iter().map(|m| m.name().to_string()).collect(),
        probs: a.probs,
    };
    write_outputs(
        &a.common.out,
        &error_records_csv(&records)?,
        &summary_csv,
        &meta,
    )?;
    emit(None, &summary_csv)
}

fn audit(a: AuditArgs) -> CmdResult {
    let text = std::fs::read_to_string(&a.transcript)
        .map_err(|e| Failure::usage(format!("{}: {e}", a.transcript.display())))?;
    let doc: Value = serde_json::from_str(&text)?;
    let (records, file_k) = match &doc {
        Value::Array(_) => (doc.clone(), None),
        Value::Object(m) => (
            m.get("transcript")
                .cloned()
                .ok_or_else(|| Failure::usage("object has no \"transcript\" field"))?,
            m.get("k").and_then(Value::as_u64),
        ),
        _ => {
            return Err(Failure::usage(
                "expected a transcript array or a build-table output object",
            ))
        }
    };
    let transcript: ReleaseTranscript = serde_json::from_value(records)?;
    let k = match (a.k, file_k) {
        (Some(k), _) => k,
        (None, Some(k)) => u32::try_from(k).map_err(|_| Failure::usage("k out of range"))?,
        (None, None) => return Err(Failure::usage("a bare transcript needs --k")),
    };
    let report = audit_transcript(&transcript, privacy(k)?);
    emit(a.out.as_deref(), &to_json(&report)?)?;
    if report.passed {
        Ok(())
    } else {
        Err(Failure {
            code: 3,
            message: format!("{} released counts violate k = {k}", report.offending.len()),
        })
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildTable(a) => build_table(a),
        Command::Test(a) => run_test(a),
        Command::Quantiles(a) => run_quantiles(a),
        Command::SimulateTests(a) => simulate_tests(a),
        Command::SimulateQuantiles(a) => simulate_quantiles(a),
        Command::Audit(a) => audit(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
