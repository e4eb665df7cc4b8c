//! `ers`: range sums of virtual i.i.d. random variables from the command line.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ers::bench::{bench_gaussian, per_axis_fit, BenchRow};
use ers::checks::{run_criterion, CheckConfig, CriterionReport, DEFAULT_CHECK_SEED, STATS_CRITERIA, VERIFY_CRITERIA};
use ers::dst::{AnyDst, DistValue, TargetDist};
use ers::gaussian::GaussianErs;
use ers::oracle::{DEFAULT_ORACLE_CAP, DEFAULT_QUAD_TOL};
use ers::poisson2d::PoissonErs2D;
use ers::randomness::{MasterSeed, Mode};
use ers::sketch::{Sketch, DEFAULT_COLS, DEFAULT_ROWS, SKETCH_K};
use ers::universe::{RangeD, Universe};

const DEFAULT_DIMS: usize = 1;
const DEFAULT_LOG2_DELTA: u32 = 4;
const DEFAULT_LAMBDA: f64 = 1.0;
const DEFAULT_K: usize = 4;

#[derive(Parser)]
#[command(name = "ers", version, about = "Range sums of virtual i.i.d. random variables in polylog time")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Common {
    /// Target distribution of the underlying variables
    #[arg(long, global = true, value_enum, default_value_t = DistArg::Gaussian)]
    dist: DistArg,
    /// Number of dimensions [default: 1]
    #[arg(long = "d", global = true)]
    dims: Option<usize>,
    /// log2 of the universe side Δ [default: 4]
    #[arg(long, global = true)]
    log2_delta: Option<u32>,
    /// Poisson rate per cell [default: 1]
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Coefficient randomness for Gaussian queries [default: kwise]
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Independence order in kwise mode [default: 4]
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Master seed as 1 to 64 hex digits, optional 0x prefix [default: 5eed]
    #[arg(long, global = true, env = "ERS_SEED")]
    seed: Option<String>,
    /// Output format
    #[arg(long, global = true, value_enum, default_value_t = Format::Human)]
    format: Format,
    /// Largest Δ^d the dense oracles may materialize
    #[arg(long, global = true, default_value_t = DEFAULT_ORACLE_CAP)]
    oracle_cap: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Range sums for ranges given as arguments (`l:u,l:u`) or one per stdin line
    Query { ranges: Vec<String> },
    /// Time Gaussian queries and count hash evaluations for each L up to --log2-delta
    Bench {
        /// Queries per universe size
        #[arg(long, default_value_t = 1000)]
        queries: usize,
        /// Smallest L in the sweep
        #[arg(long, default_value_t = 1)]
        min_log2_delta: u32,
    },
    /// Run the exact verification suites; exits 1 on any failure
    Verify {
        /// Run only these criteria (repeatable) [default: 1-7 and 9]
        #[arg(long = "criterion")]
        criteria: Vec<u8>,
        /// Absolute tolerance of numeric integrals
        #[arg(long, default_value_t = DEFAULT_QUAD_TOL)]
        quad_tol: f64,
    },
    /// Run the statistical suite; exits 1 on any failure
    Stats {
        /// Absolute tolerance of numeric integrals
        #[arg(long, default_value_t = DEFAULT_QUAD_TOL)]
        quad_tol: f64,
    },
    /// Stream P/R/Q records through a linear sketch, printing `EST <value>` per query
    Sketch {
        /// Stream file [default: stdin]
        #[arg(long)]
        input: Option<PathBuf>,
        /// Median groups [default: 5]
        #[arg(long)]
        rows: Option<usize>,
        /// Estimators per group [default: 16]
        #[arg(long)]
        cols: Option<usize>,
        /// Write the sketch here after the stream ends
        #[arg(long)]
        save: Option<PathBuf>,
        /// Start from a saved sketch instead of an empty one
        #[arg(long)]
        load: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DistArg {
    Gaussian,
    Poisson,
    Cauchy,
    Rademacher,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Kwise,
    Proxy,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Human,
    Csv,
    Jsonl,
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Human => "human",
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        })
    }
}

/// Why a run failed; decides the exit code.
#[derive(Debug)]
enum Failure {
    Verification(String),
    Usage(String),
    Io(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Verification(_) | Failure::Internal(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Io(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Verification(m) => write!(f, "verification failed: {m}"),
            Failure::Usage(m) => write!(f, "{m}"),
            Failure::Io(m) => write!(f, "{m}"),
            Failure::Internal(m) => write!(f, "{m}"),
        }
    }
}

impl From<ers::Error> for Failure {
    fn from(e: ers::Error) -> Self {
        use ers::Error as E;
        match e {
            E::Io(_) | E::Corrupt(_) | E::VersionMismatch { .. } => Failure::Io(e.to_string()),
            E::Internal(_) | E::SamplerExhausted(_) | E::Quadrature { .. } => Failure::Internal(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(format!("i/o error: {e}"))
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

/// Flags after defaults are applied and cross-checked.
struct Resolved {
    dist: TargetDist,
    dims: usize,
    log2_delta: u32,
    mode: Mode,
    seed: MasterSeed,
    format: Format,
    oracle_cap: u64,
}

impl Resolved {
    fn universe(&self) -> CliResult<Universe> {
        Ok(Universe::new(self.dims, self.log2_delta)?)
    }
}

fn resolve(c: &Common) -> CliResult<Resolved> {
    let seed = match &c.seed {
        Some(s) => s.parse::<MasterSeed>().map_err(|e| Failure::Usage(format!("--seed: {e}")))?,
        None => MasterSeed::from_u64(DEFAULT_CHECK_SEED),
    };
    let lambda = c.lambda.unwrap_or(DEFAULT_LAMBDA);
    if !(lambda > 0.0 && lambda.is_finite()) {
        return usage(format!("--lambda must be positive and finite, got {lambda}"));
    }
    if c.lambda.is_some() && c.dist != DistArg::Poisson {
        return usage("--lambda applies to --dist poisson only");
    }
    if c.dist != DistArg::Gaussian && (c.mode.is_some() || c.k.is_some()) {
        return usage("--mode and --k apply to --dist gaussian only; other distributions use per-node streams");
    }
    let mode = match (c.mode.unwrap_or(ModeArg::Kwise), c.k) {
        (ModeArg::Proxy, Some(_)) => return usage("--k applies to --mode kwise only"),
        (ModeArg::Proxy, None) => Mode::TrulyRandomProxy,
        (ModeArg::Kwise, k) => Mode::KWise { k: k.unwrap_or(DEFAULT_K) },
    };
    let dist = match c.dist {
        DistArg::Gaussian => TargetDist::Gaussian,
        DistArg::Poisson => TargetDist::Poisson { lambda },
        DistArg::Cauchy => TargetDist::Cauchy,
        DistArg::Rademacher => TargetDist::Rademacher,
    };
    Ok(Resolved {
        dist,
        dims: c.dims.unwrap_or(DEFAULT_DIMS),
        log2_delta: c.log2_delta.unwrap_or(DEFAULT_LOG2_DELTA),
        mode,
        seed,
        format: c.format,
        oracle_cap: c.oracle_cap,
    })
}

/// Prints the resolved configuration to stderr so every run can be reproduced.
fn print_config(cmd: &str, fields: &[(&str, String)]) {
    let body: Vec<String> = fields.iter().map(|(k, v)| format!("{k}={v}")).collect();
    eprintln!("# ers {cmd} {}", body.join(" "));
}

/// `l:u,l:u` form of a range, the same syntax the CLI accepts.
fn range_spec(r: &RangeD) -> String {
    r.axes().iter().map(|a| format!("{}:{}", a.lo, a.hi)).collect::<Vec<_>>().join(",")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

enum Backend {
    Gaussian(GaussianErs),
    Dst(AnyDst),
    Poisson2d(PoissonErs2D),
}

impl Backend {
    fn new(cfg: &Resolved) -> CliResult<Self> {
        let u = cfg.universe()?;
        Ok(match (cfg.dist, cfg.dims) {
            (TargetDist::Gaussian, _) => Backend::Gaussian(GaussianErs::new(u, cfg.mode, cfg.seed)?),
            (dist, 1) => Backend::Dst(AnyDst::new(dist, cfg.log2_delta, &cfg.seed)?),
            (TargetDist::Poisson { lambda }, 2) => {
                Backend::Poisson2d(PoissonErs2D::new(cfg.log2_delta, lambda, &cfg.seed)?)
            }
            (TargetDist::Poisson { .. }, d) => {
                return usage(format!(
                    "unsupported combination: --dist poisson with --d {d} (Poisson supports d = 1 or 2)"
                ))
            }
            (dist, d) => {
                return usage(format!(
                    "unsupported combination: --dist {dist} with --d {d}; strip sums of this distribution are not \
                     conditionally independent given the total, so only d = 1 is available"
                ))
            }
        })
    }

    fn query(&mut self, r: &RangeD) -> CliResult<DistValue> {
        Ok(match self {
            Backend::Gaussian(g) => DistValue::Real(g.range_sum(r)?),
            Backend::Dst(t) => {
                if r.dims() != 1 {
                    return Err(ers::Error::DimensionMismatch { expected: 1, got: r.dims() }.into());
                }
                t.range_sum(r.axes()[0])?
            }
            Backend::Poisson2d(p) => DistValue::Count(p.range_sum_2d(r)?),
        })
    }
}

fn json_value(v: DistValue) -> serde_json::Value {
    match v {
        DistValue::Real(x) => json!(x),
        DistValue::Count(x) => json!(x),
        DistValue::Signed(x) => json!(x),
    }
}

fn read_stdin_ranges() -> CliResult<Vec<String>> {
    let mut out = Vec::new();
    for line in io::stdin().lock().lines() {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            out.push(t.to_string());
        }
    }
    Ok(out)
}

fn cmd_query(cfg: &Resolved, ranges: Vec<String>) -> CliResult {
    let u = cfg.universe()?;
    let mut backend = Backend::new(cfg)?;
    let mut fields = vec![
        ("d", cfg.dims.to_string()),
        ("log2_delta", cfg.log2_delta.to_string()),
        ("delta", u.delta().to_string()),
        ("dist", cfg.dist.to_string()),
    ];
    if matches!(backend, Backend::Gaussian(_)) {
        fields.push(("mode", cfg.mode.to_string()));
    }
    fields.push(("seed", cfg.seed.to_hex()));
    fields.push(("format", cfg.format.to_string()));
    print_config("query", &fields);

    let inputs = if ranges.is_empty() { read_stdin_ranges()? } else { ranges };
    let mut out = BufWriter::new(io::stdout().lock());
    if cfg.format == Format::Csv {
        writeln!(out, "range,value")?;
    }
    for (i, text) in inputs.iter().enumerate() {
        let r: RangeD = text.parse().map_err(|e| Failure::Usage(format!("range #{} '{text}': {e}", i + 1)))?;
        r.check(&u).map_err(|e| Failure::Usage(format!("range #{} '{text}': {e}", i + 1)))?;
        let v = backend.query(&r)?;
        match cfg.format {
            Format::Human => writeln!(out, "{r}\t{v}")?,
            Format::Csv => writeln!(out, "{},{v}", csv_field(&range_spec(&r)))?,
            Format::Jsonl => writeln!(out, "{}", json!({ "range": range_spec(&r), "value": json_value(v) }))?,
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_bench(cfg: &Resolved, queries: usize, min_l: u32) -> CliResult {
    if cfg.dist != TargetDist::Gaussian {
        return usage(format!("bench measures Gaussian queries only, got --dist {}", cfg.dist));
    }
    if min_l > cfg.log2_delta {
        return usage(format!("--min-log2-delta {min_l} exceeds --log2-delta {}", cfg.log2_delta));
    }
    print_config(
        "bench",
        &[
            ("d", cfg.dims.to_string()),
            ("log2_delta", format!("{min_l}..={}", cfg.log2_delta)),
            ("mode", cfg.mode.to_string()),
            ("queries", queries.to_string()),
            ("seed", cfg.seed.to_hex()),
            ("format", cfg.format.to_string()),
        ],
    );
    let mut out = BufWriter::new(io::stdout().lock());
    match cfg.format {
        Format::Csv => {
            writeln!(out, "log2_delta,delta,d,queries,mean_ns_per_query,mean_hash_evals,max_hash_evals,bound")?
        }
        Format::Human => writeln!(
            out,
            "{:>5} {:>14} {:>2} {:>8} {:>14} {:>12} {:>10} {:>10}",
            "L", "delta", "d", "queries", "ns/query", "mean evals", "max evals", "bound"
        )?,
        Format::Jsonl => {}
    }
    let mut rows: Vec<BenchRow> = Vec::new();
    for l in min_l..=cfg.log2_delta {
        let r = bench_gaussian(cfg.dims, l, cfg.mode, &cfg.seed, queries)?;
        match cfg.format {
            Format::Csv => writeln!(
                out,
                "{},{},{},{},{:.1},{:.3},{},{}",
                r.log2_delta, r.delta, r.dims, r.queries, r.mean_ns, r.mean_evals, r.max_evals, r.bound
            )?,
            Format::Human => writeln!(
                out,
                "{:>5} {:>14} {:>2} {:>8} {:>14.1} {:>12.3} {:>10} {:>10}",
                r.log2_delta, r.delta, r.dims, r.queries, r.mean_ns, r.mean_evals, r.max_evals, r.bound
            )?,
            Format::Jsonl => writeln!(
                out,
                "{}",
                json!({
                    "log2_delta": r.log2_delta, "delta": r.delta, "d": r.dims, "queries": r.queries,
                    "mean_ns_per_query": r.mean_ns, "mean_hash_evals": r.mean_evals,
                    "max_hash_evals": r.max_evals, "bound": r.bound,
                })
            )?,
        }
        rows.push(r);
    }
    out.flush()?;
    if let Some(fit) = per_axis_fit(&rows) {
        eprintln!("# fit: mean_evals^(1/d) = {:.4}·L {:+.4} (r² = {:.5})", fit.slope, fit.intercept, fit.r_squared);
    }
    let over: Vec<u32> = rows.iter().filter(|r| !r.within_bound()).map(|r| r.log2_delta).collect();
    if !over.is_empty() {
        return Err(Failure::Verification(format!("hash evaluations exceeded (2L+2)^d at L = {over:?}")));
    }
    Ok(())
}

fn write_report(out: &mut impl Write, format: Format, r: &CriterionReport) -> io::Result<()> {
    for line in &r.lines {
        match format {
            Format::Human => writeln!(out, "    {line}")?,
            Format::Csv => writeln!(
                out,
                "{},{},{},{}",
                r.id,
                csv_field(&line.name),
                if line.passed { "PASS" } else { "FAIL" },
                csv_field(&line.detail)
            )?,
            Format::Jsonl => writeln!(
                out,
                "{}",
                json!({ "criterion": r.id, "check": line.name, "passed": line.passed, "detail": line.detail })
            )?,
        }
    }
    match format {
        Format::Human => writeln!(out, "{r}")?,
        Format::Csv => writeln!(
            out,
            "{},{},{},{:.3}s",
            r.id,
            csv_field(&format!("criterion {}: {}", r.id, r.title)),
            if r.passed() { "PASS" } else { "FAIL" },
            r.elapsed.as_secs_f64()
        )?,
        Format::Jsonl => writeln!(
            out,
            "{}",
            json!({ "criterion": r.id, "title": r.title, "passed": r.passed(), "elapsed_s": r.elapsed.as_secs_f64() })
        )?,
    }
    out.flush()
}

fn run_suite(cmd: &str, cfg: &Resolved, ids: &[u8], quad_tol: f64) -> CliResult {
    if !(quad_tol > 0.0 && quad_tol.is_finite()) {
        return usage(format!("--quad-tol must be positive, got {quad_tol}"));
    }
    print_config(
        cmd,
        &[
            ("criteria", format!("{ids:?}")),
            ("seed", cfg.seed.to_hex()),
            ("oracle_cap", cfg.oracle_cap.to_string()),
            ("quad_tol", format!("{quad_tol:e}")),
            ("format", cfg.format.to_string()),
        ],
    );
    let checks = CheckConfig { seed: cfg.seed, oracle_cap: cfg.oracle_cap, quad_tol };
    let mut out = io::stdout().lock();
    if cfg.format == Format::Csv {
        writeln!(out, "criterion,check,result,detail")?;
    }
    let mut failed = Vec::new();
    for &id in ids {
        let report = run_criterion(id, &checks)?;
        write_report(&mut out, cfg.format, &report)?;
        if !report.passed() {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(format!("criteria {failed:?} failed")))
    }
}

struct SketchArgs {
    input: Option<PathBuf>,
    rows: Option<usize>,
    cols: Option<usize>,
    save: Option<PathBuf>,
    load: Option<PathBuf>,
}

fn open(path: &PathBuf) -> CliResult<File> {
    File::open(path).map_err(|e| Failure::Io(format!("cannot open {}: {e}", path.display())))
}

fn cmd_sketch(common: &Common, cfg: &Resolved, args: SketchArgs) -> CliResult {
    if cfg.dist != TargetDist::Gaussian {
        return usage(format!("sketch estimators are Gaussian; --dist {} is not supported", cfg.dist));
    }
    if cfg.mode != (Mode::KWise { k: SKETCH_K }) {
        return usage(format!("sketch estimators use kwise(k={SKETCH_K}); got {}", cfg.mode));
    }
    let mut sketch = match &args.load {
        Some(path) => {
            let s = Sketch::load(BufReader::new(open(path)?))?;
            let conflicts = [
                ("--d", common.dims.is_some_and(|d| d != s.universe().dims())),
                ("--log2-delta", common.log2_delta.is_some_and(|l| l != s.universe().log2_delta())),
                ("--rows", args.rows.is_some_and(|r| r != s.rows())),
                ("--cols", args.cols.is_some_and(|c| c != s.cols())),
                ("--seed", common.seed.is_some() && cfg.seed != *s.seed()),
            ];
            if let Some((flag, _)) = conflicts.iter().find(|(_, bad)| *bad) {
                return usage(format!("{flag} disagrees with the sketch loaded from {}", path.display()));
            }
            s
        }
        None => Sketch::new(
            cfg.universe()?,
            args.rows.unwrap_or(DEFAULT_ROWS),
            args.cols.unwrap_or(DEFAULT_COLS),
            cfg.seed,
        )?,
    };
    let u = *sketch.universe();
    print_config(
        "sketch",
        &[
            ("d", u.dims().to_string()),
            ("log2_delta", u.log2_delta().to_string()),
            ("delta", u.delta().to_string()),
            ("rows", sketch.rows().to_string()),
            ("cols", sketch.cols().to_string()),
            ("mode", format!("kwise(k={SKETCH_K})")),
            ("seed", sketch.seed().to_hex()),
            ("loaded", args.load.as_ref().map_or("no".into(), |p| p.display().to_string())),
        ],
    );
    let mut out = BufWriter::new(io::stdout().lock());
    match &args.input {
        Some(path) => sketch.process_stream(BufReader::new(open(path)?), &mut out)?,
        None => sketch.process_stream(io::stdin().lock(), &mut out)?,
    }
    out.flush()?;
    if let Some(path) = &args.save {
        let f = File::create(path).map_err(|e| Failure::Io(format!("cannot create {}: {e}", path.display())))?;
        let mut w = BufWriter::new(f);
        sketch.save(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let cfg = resolve(&cli.common)?;
    match cli.cmd {
        Command::Query { ranges } => cmd_query(&cfg, ranges),
        Command::Bench { queries, min_log2_delta } => cmd_bench(&cfg, queries, min_log2_delta),
        Command::Verify { criteria, quad_tol } => {
            let ids = if criteria.is_empty() { VERIFY_CRITERIA.to_vec() } else { criteria };
            run_suite("verify", &cfg, &ids, quad_tol)
        }
        Command::Stats { quad_tol } => run_suite("stats", &cfg, &STATS_CRITERIA, quad_tol),
        Command::Sketch { input, rows, cols, save, load } => {
            cmd_sketch(&cli.common, &cfg, SketchArgs { input, rows, cols, save, load })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
