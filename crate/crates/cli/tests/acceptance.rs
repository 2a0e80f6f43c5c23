//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero when any fails.
//!
//! Run with `cargo test --release -p tipflow-cli --test acceptance`.

#[path = "../../core/tests/common/oracle.rs"]
mod oracle;

use std::alloc::{GlobalAlloc, Layout, System};
use std::collections::BTreeMap;
use std::io::BufReader;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use tipflow::bench::{run_bench, BenchOptions, BenchReport};
use tipflow::cdm::{bulk_assemble, stream_parse, Message, SchemaRegistry, WireFormat};
use tipflow::datagen::{GenKind, GenSpec, GeneratedReader};
use tipflow::datalog::{evaluate, parse_program, Database, Relation};
use tipflow::patterns::{splitter, Aggregator, AggregatorConfig, RoutingCondition, Translator};
use tipflow::pipeline::{load_route_file, run, verify, Endpoint, Route, RunOptions};
use tipflow::tuple;

struct Counting;

static LIVE: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            let now = LIVE.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        LIVE.fetch_sub(layout.size(), Ordering::Relaxed);
    }
}

#[global_allocator]
static ALLOC: Counting = Counting;

const SEED: u64 = 1;
const BULK_RECORDS: u64 = 100_000;

/// Every bench report produced along the way, for the conservation check.
static REPORTS: Mutex<Vec<BenchReport>> = Mutex::new(Vec::new());

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn route(file: &str) -> Route {
    load_route_file(&repo().join("routes").join(file)).expect("shipped route loads")
}

fn orders(count: u64) -> Endpoint {
    Endpoint::GeneratorSource(GenSpec::new(GenKind::Orders, count, SEED))
}

fn customers(count: u64) -> Endpoint {
    Endpoint::GeneratorSource(GenSpec::new(GenKind::CustomerNation, count, SEED))
}

fn bench(file: &str, source: &Endpoint, threads: usize, bulk: usize) -> Result<BenchReport, String> {
    let options = BenchOptions {
        repetitions: 3,
        warmup: true,
        sample_interval: Duration::from_secs(1),
    };
    let report = run_bench(route(file), source, threads, bulk, &options).map_err(|e| e.to_string())?;
    REPORTS.lock().unwrap().push(report.clone());
    Ok(report)
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

fn oracle_equivalence() -> Verdict {
    let start = Instant::now();
    for seed in 0..200 {
        let g = oracle::Generated::random(seed);
        let text = g.program_text();
        let program = parse_program(&text).map_err(|e| format!("seed {seed}: {e}"))?;
        let out = evaluate(&program, &g.database()).map_err(|e| format!("seed {seed}: {e}"))?;
        let expected = g.oracle(&g.edb_facts());
        for name in g.intensional_names() {
            ensure(oracle::tuples_of(&out, &name) == expected[&name], || {
                format!("seed {seed}: relation {name} differs\n{text}")
            })?;
        }
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(60), || format!("took {}", secs(took)))?;
    Ok(format!("200 programs, {}", secs(took)))
}

fn program(path: &str) -> Result<String, String> {
    std::fs::read_to_string(repo().join(path)).map_err(|e| format!("{path}: {e}"))
}

fn message(facts: &[(&str, tipflow::datalog::Tuple)]) -> Message {
    let mut body = Database::new();
    for (rel, t) in facts {
        body.add_fact(rel, t.clone()).expect("consistent arity");
    }
    Message::single(facts[0].1[0].to_string(), body)
}

fn routed(text: &str, goal: &str, msg: &Message) -> Result<bool, String> {
    RoutingCondition::parse(text, goal)
        .and_then(|c| c.holds(msg))
        .map_err(|e| e.to_string())
}

fn converted(text: &str, msg: &Message) -> Result<Relation, String> {
    let out = Translator::parse(text, "conv-order")
        .and_then(|t| t.apply(msg))
        .map_err(|e| e.to_string())?;
    out.body
        .relation("conv-order")
        .cloned()
        .ok_or_else(|| "no conv-order relation".to_string())
}

fn listings() -> Verdict {
    let start = Instant::now();
    for name in ["cbr-order", "conv-order", "cbr-cust"] {
        for dir in ["programs/verbatim", "programs"] {
            let path = format!("{dir}/{name}.dl");
            parse_program(&program(&path)?).map_err(|e| format!("{path}: {e}"))?;
        }
    }

    // verbatim texts, facts laid out the way each listing reads them
    let cbr = program("programs/verbatim/cbr-order.dl")?;
    let urgent = message(&[("order", tuple!["m1", "order", 1i64, 150000.00, 2i64, "1-URGENT", 0i64])]);
    let medium = message(&[("order", tuple!["m2", "order", 1i64, 150000.00, 2i64, "3-MEDIUM", 0i64])]);
    ensure(routed(&cbr, "cbr-order", &urgent)?, || "verbatim cbr-order: urgent order not routed".into())?;
    ensure(!routed(&cbr, "cbr-order", &medium)?, || "verbatim cbr-order: medium order routed".into())?;
    let conv = converted(
        &program("programs/verbatim/conv-order.dl")?,
        &message(&[("order", tuple!["m1", "order", 1i64, 2i64, 150000.00, 0i64, "1-URGENT"])]),
    )?;
    ensure(conv.arity() == 5 && conv.contains(&tuple!["m1", "order", 1i64, 2i64, 0i64]), || {
        format!("verbatim conv-order: {conv:?}")
    })?;

    // aligned texts over the order schema
    let cbr = program("programs/cbr-order.dl")?;
    let urgent = message(&[("order", tuple!["m1", "order", 1i64, 2i64, 150000.00, "1-URGENT", 0i64])]);
    let medium = message(&[("order", tuple!["m2", "order", 1i64, 2i64, 150000.00, "3-MEDIUM", 0i64])]);
    let cheap = message(&[("order", tuple!["m3", "order", 1i64, 2i64, 99999.99, "1-URGENT", 0i64])]);
    ensure(routed(&cbr, "cbr-order", &urgent)?, || "cbr-order: urgent order not routed".into())?;
    ensure(!routed(&cbr, "cbr-order", &medium)?, || "cbr-order: medium order routed".into())?;
    ensure(!routed(&cbr, "cbr-order", &cheap)?, || "cbr-order: cheap order routed".into())?;
    let conv = converted(&program("programs/conv-order.dl")?, &urgent)?;
    ensure(conv.arity() == 5 && conv.contains(&tuple!["m1", "order", 1i64, 2i64, 0i64]) && conv.len() == 1, || {
        format!("conv-order: {conv:?}")
    })?;

    for path in ["programs/verbatim/cbr-cust.dl", "programs/cbr-cust.dl"] {
        let text = program(path)?;
        let customer = |bal: f64, region: i64| {
            message(&[
                ("customer", tuple!["c1", "customer", 7i64, "Customer#7", 5i64, "15-555", bal, "BUILDING"]),
                ("nation", tuple!["n5", "nation", 5i64, "FRANCE", region, "c"]),
            ])
        };
        ensure(routed(&text, "cbr-cust", &customer(3500.0, 3))?, || format!("{path}: region 3 customer not routed"))?;
        ensure(!routed(&text, "cbr-cust", &customer(3500.0, 2))?, || format!("{path}: region 2 customer routed"))?;
        ensure(!routed(&text, "cbr-cust", &customer(1000.0, 3))?, || format!("{path}: poor customer routed"))?;
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(1), || format!("took {}", secs(took)))?;
    Ok(format!("3 listings, {:.0} ms", took.as_secs_f64() * 1e3))
}

fn baseline_equivalence() -> Verdict {
    let start = Instant::now();
    let mut summary = Vec::new();
    for (file, source) in [
        ("cbr.toml", orders(BULK_RECORDS)),
        ("translator.toml", orders(BULK_RECORDS)),
        ("join-cbr.toml", customers(BULK_RECORDS)),
    ] {
        let tip = route(file).with_threads(1);
        let base = load_route_file(tip.baseline.as_ref().expect("baseline named"))
            .map_err(|e| e.to_string())?
            .with_threads(1);
        let report = verify(&tip, &base, &source).map_err(|e| format!("{file}: {e}"))?;
        if let Some(d) = &report.divergence {
            return Err(format!("{file}: {d}"));
        }
        ensure(report.records == BULK_RECORDS, || format!("{file}: {} records", report.records))?;
        summary.push(format!("{file} {:?}", report.tip_counts));
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(300), || format!("took {}", secs(took)))?;
    Ok(format!("0 divergences, {} ({})", secs(took), summary.join("; ")))
}

fn bulk_consistency() -> Verdict {
    let source = orders(BULK_RECORDS);
    let opts = RunOptions {
        collect_deliveries: true,
        progress: None,
    };
    let mut reference: Option<Vec<(Arc<str>, String)>> = None;
    for k in [1, 10, 100] {
        let stats = run(&route("cbr.toml").with_bulk_size(k), Some(&source), &opts).map_err(|e| e.to_string())?;
        let mut pairs = stats.deliveries;
        pairs.sort();
        ensure(pairs.len() as u64 == BULK_RECORDS, || format!("bulk {k}: {} outcomes", pairs.len()))?;
        match &reference {
            None => reference = Some(pairs),
            Some(r) => {
                if let Some(i) = (0..r.len()).find(|&i| r[i] != pairs[i]) {
                    return Err(format!("bulk {k}: {:?} vs {:?} at bulk 1", pairs[i], r[i]));
                }
            }
        }
    }
    Ok(format!("{BULK_RECORDS} (recordId, channel) pairs equal for bulk 1, 10, 100"))
}

fn bulk_throughput() -> Verdict {
    let source = orders(BULK_RECORDS);
    let mut lines = Vec::new();
    let mut failed = false;
    for file in ["cbr.toml", "translator.toml"] {
        let one = bench(file, &source, 1, 1)?.effective_records_per_second();
        let ten = bench(file, &source, 1, 10)?.effective_records_per_second();
        let ratio = ten / one;
        failed |= ratio < 3.0;
        lines.push(format!("{file} {one:.0} -> {ten:.0} records/s ({ratio:.2}x)"));
    }
    let detail = format!("{} (need >= 3x)", lines.join("; "));
    if failed {
        Err(detail)
    } else {
        Ok(detail)
    }
}

fn conservation() -> Verdict {
    let source = orders(20_000);
    for file in ["cbr.toml", "cbr-native.toml", "translator.toml", "translator-native.toml", "filter-translate.toml"] {
        for (threads, bulk) in [(1, 1), (2, 10)] {
            bench(file, &source, threads, bulk)?;
        }
    }
    for file in ["join-cbr.toml", "join-cbr-native.toml"] {
        bench(file, &customers(5_000), 1, 1)?;
    }
    let reports = REPORTS.lock().unwrap();
    for r in reports.iter() {
        let s = &r.stats;
        ensure(s.is_conserved(), || {
            format!(
                "{} t{} b{}: {} in, {} delivered, {} filtered, {} held, {} errors",
                r.scenario,
                r.threads,
                r.bulk_size,
                s.input_records,
                s.delivered_records(),
                s.filtered,
                s.held,
                s.errors
            )
        })?;
        ensure(s.input_records == r.total_records, || format!("{}: input count drifted", r.scenario))?;
    }
    Ok(format!("{} bench runs conserved", reports.len()))
}

fn split_aggregate() -> Verdict {
    let reader = BufReader::new(GeneratedReader::new(GenKind::Orders, 100, SEED));
    let msgs: Vec<Message> = stream_parse(reader, SchemaRegistry::tpch(), WireFormat::Ndjson).collect();
    ensure(msgs.len() == 100, || format!("{} records parsed", msgs.len()))?;
    let bulk = bulk_assemble(msgs, 100).map_err(|e| e.to_string())?.remove(0).into_message();
    let by_record = bulk
        .record_ids()
        .iter()
        .map(|id| {
            RoutingCondition::parse(
                &format!("part(id,t,a,b,c,d,e) :- order(id,t,a,b,c,d,e), =(id, \"{id}\")."),
                "part",
            )
            .map(|c| c.with_output("order"))
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let parts = splitter(&bulk, &by_record).map_err(|e| e.to_string())?;
    ensure(parts.len() == 100, || format!("{} parts", parts.len()))?;

    let aggregator = Aggregator::new(AggregatorConfig {
        correlation: RoutingCondition::parse("corr(p) :- split(p,i,n).", "corr").map_err(|e| e.to_string())?,
        completion: Some(
            RoutingCondition::parse("done(n) :- meta_count(n), =(n, 100).", "done").map_err(|e| e.to_string())?,
        ),
        timeout: None,
        max_count: None,
    })
    .map_err(|e| e.to_string())?;
    let mut completed = Vec::new();
    for (i, p) in parts.iter().enumerate() {
        if let Some(m) = aggregator.offer(p).map_err(|e| e.to_string())? {
            completed.push((i + 1, m));
        }
    }
    let [(at, out)] = &completed[..] else {
        return Err(format!("{} completions", completed.len()));
    };
    ensure(*at == 100, || format!("completed after {at} parts"))?;
    ensure(out.body == bulk.body, || "aggregated body differs from the original".into())?;
    Ok(format!("100 parts, completed at 100, {} facts restored", out.body.relation("order").map_or(0, Relation::len)))
}

fn thread_neutrality() -> Verdict {
    let source = orders(BULK_RECORDS);
    let counts = |t: usize| -> Result<BTreeMap<String, u64>, String> {
        run(&route("cbr.toml").with_threads(t), Some(&source), &RunOptions::default())
            .map(|s| s.record_counts())
            .map_err(|e| e.to_string())
    };
    let (c1, c4) = (counts(1)?, counts(4)?);
    ensure(c1 == c4, || format!("counts differ: {c1:?} vs {c4:?}"))?;
    let one = bench("cbr.toml", &source, 1, 1)?.mean_tps;
    let four = bench("cbr.toml", &source, 4, 1)?.mean_tps;
    let ratio = four / one;
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    let detail = format!("counts equal {c1:?}; {one:.0} -> {four:.0} tps ({ratio:.2}x, need >= 1.5x, {cpus} cpu)");
    if ratio >= 1.5 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Peak heap growth while streaming `n` generated orders.
fn streaming_peak(n: u64) -> (usize, u64) {
    let base = LIVE.load(Ordering::Relaxed);
    PEAK.store(base, Ordering::Relaxed);
    let reader = BufReader::new(GeneratedReader::new(GenKind::Orders, n, SEED));
    let mut stream = stream_parse(reader, SchemaRegistry::tpch(), WireFormat::Ndjson);
    let mut seen = 0u64;
    for msg in stream.by_ref() {
        seen += 1;
        drop(msg);
    }
    assert_eq!(stream.error_count(), 0);
    drop(stream);
    (PEAK.load(Ordering::Relaxed).saturating_sub(base), seen)
}

fn streaming_memory() -> Verdict {
    let (small, a) = streaming_peak(10_000);
    let (large, b) = streaming_peak(1_000_000);
    ensure(a == 10_000 && b == 1_000_000, || format!("parsed {a} and {b} records"))?;
    let detail = format!("peak heap {small} B at 10^4, {large} B at 10^6");
    ensure(large <= 2 * small, || detail.clone())?;
    Ok(detail)
}

fn main() {
    let criteria: [(u8, &str, fn() -> Verdict); 9] = [
        (1, "datalog oracle equivalence", oracle_equivalence),
        (2, "listings fidelity", listings),
        (3, "pattern vs baseline equivalence", baseline_equivalence),
        (4, "bulk consistency", bulk_consistency),
        (5, "bulk throughput trend", bulk_throughput),
        (7, "split/aggregate round trip", split_aggregate),
        (8, "thread neutrality", thread_neutrality),
        (9, "streaming memory", streaming_memory),
        // last, so it sees every bench run above
        (6, "message conservation", conservation),
    ];
    let mut lines = Vec::new();
    for (n, name, check) in criteria {
        eprintln!("running criterion {n}: {name}");
        let verdict = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        let line = match &verdict {
            Ok(detail) => format!("PASS {n} {name}: {detail}"),
            Err(detail) => format!("FAIL {n} {name}: {detail}"),
        };
        lines.push((n, verdict.is_ok(), line));
    }
    lines.sort_by_key(|l| l.0);
    for (_, _, line) in &lines {
        println!("{line}");
    }
    let failed = lines.iter().filter(|l| !l.1).count();
    println!("{} passed, {failed} failed", lines.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
