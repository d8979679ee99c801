use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use metershare::abb::{write_jsonl, Mutation, Schedule};
use metershare::aggregation::bundles_to_json;
use metershare::costs::{
    all_exact_pass, comm_series, compute_series, formula_comm_trusted_tso, formula_mults_ncaa_batcher,
    formula_table, parse_count, parse_range, CostParams, CostReport,
};
use metershare::metering::Scenario;
use metershare::selftest;
use metershare::sim::{run_scenario, Crash, CrashPoint, RunOptions, RunOutcome};
use metershare::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_CHECK: u8 = 2;

#[derive(Parser)]
#[command(name = "metershare", version, about = "Secret-shared smart-meter aggregation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one time slot of a scenario
    Run(RunArgs),
    /// Print the analytic cost table
    Costs(CostArgs),
    /// Evaluate the cost model over a range of meters per region
    Sweep(SweepArgs),
    /// Run the built-in property checks
    Selftest(SelftestArgs),
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum FailAt {
    Aggregation,
    Output,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Compare against the plaintext sums and the exact cost counts
    #[arg(long)]
    check: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Regions processed in parallel
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Drive each server from its own thread
    #[arg(long)]
    party_threads: bool,
    /// Crash-stop this server (1-based)
    #[arg(long)]
    fail_server: Option<usize>,
    #[arg(long, value_enum, default_value_t = FailAt::Output)]
    fail_at: FailAt,
    /// Server that never reaches the output parties; repeatable
    #[arg(long)]
    silent_server: Vec<usize>,
    #[arg(long)]
    no_transcript: bool,
}

#[derive(Args, Clone)]
struct ParamArgs {
    #[arg(long, default_value_t = 14)]
    nd: u64,
    #[arg(long, default_value_t = 10)]
    ns: u64,
    #[arg(long, default_value_t = 8)]
    sigma: u64,
    /// Meters per region, e.g. 2200000 or 2.2M
    #[arg(long, default_value = "100")]
    sm: String,
    #[arg(long, default_value_t = 32)]
    x_bits: u64,
    #[arg(long, default_value_t = 63)]
    share_bits: u64,
    #[arg(long, default_value_t = 128)]
    c_bits: u64,
    #[arg(long, default_value_t = 1024)]
    cipher_bits: u64,
    #[arg(long, default_value_t = 32)]
    r_bits: u64,
    #[arg(long, default_value_t = 20.8e-6)]
    per_mult_seconds: f64,
    #[arg(long, default_value_t = 1)]
    threads: u64,
}

impl ParamArgs {
    fn params(&self) -> metershare::Result<CostParams> {
        let p = CostParams {
            n_d: self.nd,
            n_s: self.ns,
            sigma: self.sigma,
            m: parse_count(&self.sm)?,
            x_bits: self.x_bits,
            share_bits: self.share_bits,
            c_bits: self.c_bits,
            cipher_bits: self.cipher_bits,
            r_bits: self.r_bits,
            per_mult_seconds: self.per_mult_seconds,
            threads: self.threads,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Args)]
struct CostArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// `sm=START:STOP:STEP`; prints the computation series instead
    #[arg(long)]
    sweep: Option<String>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Series {
    Compute,
    Comm,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// `sm=START:STOP:STEP`
    #[arg(long, default_value = "sm=0.5M:4M:0.5M")]
    sweep: String,
    #[arg(long, value_enum, default_value_t = Series::Compute)]
    series: Series,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mutant {
    FlipEquality,
    SkipDegreeReduction,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, value_enum, hide = true)]
    mutant: Option<Mutant>,
}

enum Failure {
    Config(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidScenario(_)
            | Error::InvalidCostParams(_)
            | Error::InvalidParams { .. }
            | Error::UnknownRow(_)
            | Error::Io(_) => Failure::Config(e.to_string()),
            other => Failure::Check(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::Costs(a) => costs(a),
        Command::Sweep(a) => sweep(a),
        Command::Selftest(a) => self_test(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(EXIT_CHECK)
        }
    }
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>, Failure> {
    let mut s = serde_json::to_vec_pretty(v).map_err(|e| Failure::Check(e.to_string()))?;
    s.push(b'\n');
    Ok(s)
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Failure::Check(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Failure::Check(e.to_string()))
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    let mut sc = Scenario::from_path(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    if let Ok(seed) = std::env::var("METERSHARE_SEED") {
        sc.seed = seed
            .trim()
            .parse()
            .map_err(|_| Failure::Config(format!("METERSHARE_SEED is not a u64: {seed:?}")))?;
    }
    sc.validate()?;
    Ok(sc)
}

fn report_csv(report: &CostReport) -> Result<Vec<u8>, Failure> {
    #[derive(Serialize)]
    struct Flat<'a> {
        protocol: &'a str,
        segment: &'a str,
        n_d: u64,
        n_s: u64,
        sigma: u64,
        m: u64,
        formula_bits: f64,
        measured_bits: Option<u64>,
        formula_mults: Option<f64>,
        measured_mult_equivalents: Option<u64>,
        cpu_seconds: Option<f64>,
    }
    let rows: Vec<_> = report
        .rows
        .iter()
        .map(|r| Flat {
            protocol: r.protocol.as_str(),
            segment: r.segment.as_str(),
            n_d: r.n_d,
            n_s: r.n_s,
            sigma: r.sigma,
            m: r.m,
            formula_bits: r.formula_bits,
            measured_bits: r.measured_bits,
            formula_mults: r.formula_mults,
            measured_mult_equivalents: r.measured_mult_equivalents,
            cpu_seconds: r.cpu_seconds,
        })
        .collect();
    csv_bytes(&rows)
}

fn write_artifacts(out: &RunOutcome, dir: &Path, format: Format, transcript: bool) -> Result<(), Failure> {
    match format {
        Format::Csv => {
            let mut buf = Vec::new();
            out.matrix.write_csv(&mut buf)?;
            write_file(dir, "matrix.csv", &buf)?;
            write_file(dir, "report.csv", &report_csv(&out.report)?)?;
            write_file(dir, "checks.csv", &csv_bytes(&out.report.checks)?)?;
        }
        Format::Json => {
            write_file(dir, "matrix.json", &to_json(&out.matrix)?)?;
            write_file(dir, "report.json", &to_json(&out.summary())?)?;
        }
    }
    let mut bundles = bundles_to_json(&out.bundles)?.into_bytes();
    bundles.push(b'\n');
    write_file(dir, "bundles.json", &bundles)?;
    if transcript {
        let mut buf = Vec::new();
        write_jsonl(&out.transcript, &mut buf)?;
        write_file(dir, "transcript.jsonl", &buf)?;
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<(), Failure> {
    let scenario = load_scenario(&a.scenario)?;
    if a.threads == 0 {
        return Err(Failure::Config("--threads must be at least 1".into()));
    }
    let crash = a.fail_server.map(|server| Crash {
        server,
        point: match a.fail_at {
            FailAt::Aggregation => CrashPoint::BeforeAggregation,
            FailAt::Output => CrashPoint::BeforeOutput,
        },
    });
    let opts = RunOptions {
        threads: a.threads,
        schedule: if a.party_threads { Schedule::ThreadPerParty } else { Schedule::Lockstep },
        record_transcript: !a.no_transcript,
        crash,
        silent_output_servers: a.silent_server.clone(),
        ..Default::default()
    };
    let out = run_scenario(&scenario, &opts)?;
    write_artifacts(&out, &a.out, a.format, !a.no_transcript)?;

    let agg = out.region_aggregation_counters();
    println!(
        "{} over {} meters in {} regions: {} multiplications, {} opens, {} rounds",
        scenario.algorithm,
        scenario.total_meters(),
        scenario.n_dno,
        agg.multiplications,
        agg.opens,
        agg.rounds
    );
    let me = out.meter.total().mult_equivalents();
    if me > 0 {
        println!("wall time {:.3} s, {:.2} us per mult-equivalent", out.wall_seconds, 1e6 * out.wall_seconds / me as f64);
    }
    for v in &out.report.checks {
        let tag = match v.pass {
            Some(true) => "ok  ",
            Some(false) => "FAIL",
            None => "info",
        };
        println!("{tag} {}: measured {} formula {}", v.label, v.measured, v.formula);
    }
    println!("oracle match: {}", out.matches_oracle());
    if a.check {
        if !out.matches_oracle() {
            return Err(Failure::Check("aggregates differ from the plaintext sums".into()));
        }
        if !all_exact_pass(&out.report) {
            return Err(Failure::Check("an exact cost count differs from its formula".into()));
        }
    }
    Ok(())
}

fn sweep_values(spec: &str) -> Result<Vec<u64>, Failure> {
    let Some(range) = spec.strip_prefix("sm=") else {
        return Err(Failure::Config(format!("unsupported sweep {spec:?}, want sm=START:STOP:STEP")));
    };
    Ok(parse_range(range)?)
}

fn emit(bytes: Vec<u8>, out: Option<&Path>, name: &str) -> Result<(), Failure> {
    if let Some(dir) = out {
        write_file(dir, name, &bytes)?;
    }
    print!("{}", String::from_utf8_lossy(&bytes));
    Ok(())
}

fn costs(a: CostArgs) -> Result<(), Failure> {
    let p = a.params.params()?;
    if let Some(spec) = &a.sweep {
        return emit_series(&p, spec, Series::Compute, a.format, a.out.as_deref());
    }
    let rows = formula_table(&p);
    match a.format {
        Format::Csv => emit(csv_bytes(&rows)?, a.out.as_deref(), "costs.csv"),
        Format::Json => {
            #[derive(Serialize)]
            struct Table<'a> {
                params: &'a CostParams,
                rows: &'a [metershare::costs::CostRow],
                trusted_tso_output_bits: f64,
                ncaa_batcher_mults: f64,
            }
            let t = Table {
                params: &p,
                rows: &rows,
                trusted_tso_output_bits: formula_comm_trusted_tso(&p),
                ncaa_batcher_mults: formula_mults_ncaa_batcher(&p),
            };
            emit(to_json(&t)?, a.out.as_deref(), "costs.json")
        }
    }
}

fn emit_series(p: &CostParams, spec: &str, series: Series, format: Format, out: Option<&Path>) -> Result<(), Failure> {
    let ms = sweep_values(spec)?;
    let (bytes, name) = match (series, format) {
        (Series::Compute, Format::Csv) => (csv_bytes(&compute_series(p, &ms))?, "compute_series.csv"),
        (Series::Compute, Format::Json) => (to_json(&compute_series(p, &ms))?, "compute_series.json"),
        (Series::Comm, Format::Csv) => (csv_bytes(&comm_series(p, &ms))?, "comm_series.csv"),
        (Series::Comm, Format::Json) => (to_json(&comm_series(p, &ms))?, "comm_series.json"),
    };
    emit(bytes, out, name)
}

fn sweep(a: SweepArgs) -> Result<(), Failure> {
    let p = a.params.params()?;
    emit_series(&p, &a.sweep, a.series, a.format, a.out.as_deref())
}

fn self_test(a: SelftestArgs) -> Result<(), Failure> {
    let mutation = a.mutant.map(|m| match m {
        Mutant::FlipEquality => Mutation::FlipEqualityPolarity,
        Mutant::SkipDegreeReduction => Mutation::SkipDegreeReduction,
    });
    let results = selftest::run_all(mutation);
    let mut failed = Vec::new();
    for r in &results {
        if r.passed {
            println!("PASS {}", r.name);
        } else {
            println!("FAIL {}: {}", r.name, r.detail);
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!("failed: {}", failed.join(", "))))
    }
}
