use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use tipflow::bench::{emit_report, run_bench, BenchOptions};
use tipflow::cdm::{stream_parse, SchemaRegistry, WireFormat};
use tipflow::datagen::{import_customer_tbl, import_orders_tbl, write_records, GenKind, GenSpec};
use tipflow::datalog::{evaluate, parse_program, Database, Program};
use tipflow::pipeline::{load_route_file, run, verify, Endpoint, PipelineError, Route, RunOptions};

#[derive(Parser)]
#[command(name = "tipflow", version, about = "Datalog-backed message routing and benchmarking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate order or customer/nation records.
    Gen(GenArgs),
    /// Evaluate a program over a fact file and print one relation.
    Eval(EvalArgs),
    /// Push a source through a route and print the counts.
    Run(RouteArgs),
    /// Measure route throughput and write a CSV report with plot data.
    Bench(BenchArgs),
    /// Check a table route against its native baseline record by record.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct GenArgs {
    /// orders or customerNation
    #[arg(long)]
    kind: GenKind,
    #[arg(long, default_value_t = 1000)]
    count: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// ndjson or jsonArray
    #[arg(long, default_value = "ndjson")]
    format: WireFormat,
    /// Convert an official orders.tbl or customer.tbl instead of generating.
    #[arg(long, value_name = "TBL")]
    from_tbl: Option<PathBuf>,
    /// nation.tbl to pair with --from-tbl for customerNation.
    #[arg(long, value_name = "TBL", requires = "from_tbl")]
    nation_tbl: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    program: PathBuf,
    /// A .dl file of facts, or JSON records (.ndjson / .json).
    #[arg(long)]
    facts: Option<PathBuf>,
    #[arg(long)]
    goal: String,
}

#[derive(Args)]
struct RouteArgs {
    #[arg(long)]
    route: PathBuf,
    /// Input records; the route's own source when omitted.
    #[arg(long = "in", value_name = "FILE")]
    input: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    bulk: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    /// Route files; each is measured for every thread count and bulk size.
    #[arg(long, required = true, num_args = 1..)]
    route: Vec<PathBuf>,
    #[arg(long = "in", value_name = "FILE")]
    input: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    threads: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    bulk: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, env = "TIPFLOW_REPORT_DIR", default_value = "bench-report")]
    report_dir: PathBuf,
    /// Sampling interval of the per-second series, in milliseconds.
    #[arg(long, default_value_t = 1000)]
    interval_ms: u64,
    #[arg(long)]
    no_warmup: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    route: PathBuf,
    /// Native twin; defaults to the route's `baseline` entry.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long = "in", value_name = "FILE")]
    input: Option<PathBuf>,
}

/// A failed command and the exit code it maps to.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        if e.is_config() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn cmd_gen(args: GenArgs) -> Result<(), Failure> {
    let spec = GenSpec::new(args.kind, args.count, args.seed).with_format(args.format);
    let written = match (&args.from_tbl, args.kind) {
        (None, _) => {
            let out = File::create(&args.out).map_err(|e| Failure::Usage(format!("{}: {e}", args.out.display())))?;
            write_records(&spec, io::BufWriter::new(out))?;
            args.count
        }
        (Some(tbl), GenKind::Orders) => import_orders_tbl(tbl, args.format, &args.out)?,
        (Some(tbl), GenKind::CustomerNation) => {
            let nation = args
                .nation_tbl
                .as_deref()
                .ok_or_else(|| Failure::Usage("customerNation import needs --nation-tbl".into()))?;
            import_customer_tbl(tbl, nation, args.format, &args.out)?
        }
    };
    eprintln!("wrote {written} records to {}", args.out.display());
    Ok(())
}

fn load_facts(path: &Path) -> Result<(Program, Database), Failure> {
    let is_program = path.extension().is_some_and(|e| e == "dl");
    if is_program {
        let text = read_text(path)?;
        let facts = parse_program(&text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
        return Ok((facts, Database::new()));
    }
    let file = File::open(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let mut stream = stream_parse(BufReader::new(file), SchemaRegistry::tpch(), WireFormat::from_path(path));
    let mut db = Database::new();
    for msg in stream.by_ref() {
        db.union_with(&msg.body).map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    if let Some(first) = stream.errors().first() {
        return Err(Failure::Runtime(format!(
            "{}: {} unreadable records, first: {first}",
            path.display(),
            stream.error_count()
        )));
    }
    Ok((Program::empty(), db))
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let text = read_text(&args.program)?;
    let program = parse_program(&text).map_err(|e| Failure::Runtime(format!("{}: {e}", args.program.display())))?;
    let (facts, db) = match &args.facts {
        Some(path) => load_facts(path)?,
        None => (Program::empty(), Database::new()),
    };
    let program = program
        .merged(&facts)
        .map_err(|e| Failure::Runtime(format!("combining program and facts: {e}")))?;
    let result = evaluate(&program, &db).map_err(|e| Failure::Runtime(e.to_string()))?;
    let mut lines: Vec<String> = result
        .relation(&args.goal)
        .map(|rel| {
            rel.iter()
                .map(|t| t.iter().map(ToString::to_string).collect::<Vec<_>>().join("\t"))
                .collect()
        })
        .unwrap_or_default();
    lines.sort();
    let mut out = io::stdout().lock();
    for l in lines {
        writeln!(out, "{l}")?;
    }
    Ok(())
}

fn configured(path: &Path, threads: Option<usize>, bulk: Option<usize>) -> Result<Route, Failure> {
    let mut route = load_route_file(path)?;
    if let Some(t) = threads {
        if t == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        route = route.with_threads(t);
    }
    if let Some(k) = bulk {
        if k == 0 {
            return Err(Failure::Usage("--bulk must be at least 1".into()));
        }
        route = route.with_bulk_size(k);
    }
    Ok(route)
}

fn source_of(route: &Route, input: Option<&Path>) -> Result<Endpoint, Failure> {
    match input {
        Some(p) if !p.exists() => Err(Failure::Usage(format!("{}: no such input file", p.display()))),
        Some(p) => Ok(Endpoint::file(p)),
        None => route
            .source
            .clone()
            .ok_or_else(|| Failure::Usage(format!("route `{}` has no source; pass --in", route.name))),
    }
}

fn cmd_run(args: RouteArgs) -> Result<(), Failure> {
    let route = configured(&args.route, args.threads, args.bulk)?;
    let source = source_of(&route, args.input.as_deref())?;
    let stats = run(&route, Some(&source), &RunOptions::default())?;
    println!("{stats}");
    if !stats.is_conserved() {
        return Err(Failure::Runtime("record counts do not add up".into()));
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), Failure> {
    if args.reps == 0 {
        return Err(Failure::Usage("--reps must be at least 1".into()));
    }
    if args.interval_ms == 0 {
        return Err(Failure::Usage("--interval-ms must be at least 1".into()));
    }
    let options = BenchOptions {
        repetitions: args.reps,
        warmup: !args.no_warmup,
        sample_interval: Duration::from_millis(args.interval_ms),
    };
    let mut reports = Vec::new();
    for path in &args.route {
        let route = configured(path, None, None)?;
        let source = source_of(&route, args.input.as_deref())?;
        let threads = if args.threads.is_empty() { vec![route.worker_threads] } else { args.threads.clone() };
        let bulks = if args.bulk.is_empty() { vec![route.bulk_size] } else { args.bulk.clone() };
        for &t in &threads {
            for &k in &bulks {
                if t == 0 || k == 0 {
                    return Err(Failure::Usage("thread counts and bulk sizes must be at least 1".into()));
                }
                let r = run_bench(configured(path, None, None)?, &source, t, k, &options)?;
                println!(
                    "{}\tthreads={}\tbulk={}\ttps={:.1} ±{:.1}\trecords/s={:.1}\tconversion={:.1} ms",
                    r.scenario,
                    r.threads,
                    r.bulk_size,
                    r.mean_tps,
                    r.ci99,
                    r.effective_records_per_second(),
                    r.conversion_ms
                );
                if !r.stats.is_conserved() {
                    return Err(Failure::Runtime(format!("{}: record counts do not add up", r.scenario)));
                }
                reports.push(r);
            }
        }
    }
    let written = emit_report(&reports, &args.report_dir)?;
    eprintln!("report written to {}", written[0].display());
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<(), Failure> {
    let tip = load_route_file(&args.route)?;
    let baseline_path = args
        .baseline
        .clone()
        .or_else(|| tip.baseline.clone())
        .ok_or_else(|| Failure::Usage("no baseline route given and none named in the route file".into()))?;
    let baseline = load_route_file(&baseline_path)?;
    let source = source_of(&tip, args.input.as_deref())?;
    let report = verify(&tip, &baseline, &source)?;
    for (channel, n) in &report.tip_counts {
        println!("{channel}\t{n}");
    }
    match report.divergence {
        None => {
            println!("equivalent over {} records", report.records);
            Ok(())
        }
        Some(d) => {
            println!("divergence at record {}", d.record);
            eprintln!("{d}");
            Err(Failure::Runtime(format!("routes disagree on record {}", d.record)))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Run(a) => cmd_run(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("tipflow: {f}");
            ExitCode::from(f.code())
        }
    }
}
