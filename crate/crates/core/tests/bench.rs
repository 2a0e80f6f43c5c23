use std::path::{Path, PathBuf};
use std::time::Duration;

use tipflow::bench::{emit_report, load_csv, measure_conversion, run_bench, BenchOptions, ConversionTarget};
use tipflow::cdm::SchemaRegistry;
use tipflow::datagen::{GenKind, GenSpec};
use tipflow::pipeline::{load_route_file, Endpoint};

fn routes() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../routes")
}

fn orders(count: u64) -> Endpoint {
    Endpoint::GeneratorSource(GenSpec::new(GenKind::Orders, count, 31))
}

fn quick(reps: usize) -> BenchOptions {
    BenchOptions {
        repetitions: reps,
        warmup: true,
        sample_interval: Duration::from_millis(50),
    }
}

#[test]
fn samples_add_up_and_messages_are_conserved() {
    let route = load_route_file(&routes().join("cbr.toml")).unwrap();
    let r = run_bench(route, &orders(5000), 1, 1, &quick(1)).unwrap();
    assert_eq!(r.total_messages, 5000);
    assert_eq!(r.per_second_samples.iter().sum::<u64>(), 5000);
    assert!(r.stats.is_conserved());
    let implied = 5000.0 / r.wall_time_seconds;
    assert!((implied - r.mean_tps).abs() / r.mean_tps < 1e-9);
}

#[test]
fn bulk_counts_collections() {
    let route = load_route_file(&routes().join("translator.toml")).unwrap();
    let r = run_bench(route, &orders(5000), 1, 10, &quick(1)).unwrap();
    assert_eq!(r.total_messages, 500);
    assert_eq!(r.total_records, 5000);
    assert_eq!(r.per_second_samples.iter().sum::<u64>(), 500);
    assert_eq!(r.stats.channel_records("out"), 5000);
}

#[test]
fn repetitions_feed_the_interval() {
    let route = load_route_file(&routes().join("cbr-native.toml")).unwrap();
    let r = run_bench(route, &orders(2000), 2, 1, &quick(5)).unwrap();
    assert_eq!(r.repetition_tps.len(), 5);
    assert!(r.ci99 >= 0.0 && r.ci99.is_finite());
    assert_eq!(r.threads, 2);
}

#[test]
fn conversion_of_empty_file_is_near_zero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.ndjson");
    std::fs::File::create(&path).unwrap();
    let reg = SchemaRegistry::tpch();
    for t in [ConversionTarget::NativeObjects, ConversionTarget::FactTables] {
        assert!(measure_conversion(&Endpoint::file(&path), t, &reg).unwrap() < 5.0);
    }
}

#[test]
fn conversion_is_stable_between_runs() {
    let reg = SchemaRegistry::tpch();
    let src = orders(3000);
    for t in [ConversionTarget::NativeObjects, ConversionTarget::FactTables] {
        measure_conversion(&src, t, &reg).unwrap();
        let a = measure_conversion(&src, t, &reg).unwrap();
        let b = measure_conversion(&src, t, &reg).unwrap();
        assert!(b < 2.0 * a + 1.0, "{t:?}: {a} then {b}");
    }
}

#[test]
fn report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for f in ["cbr.toml", "translator.toml", "cbr-native.toml"] {
        let route = load_route_file(&routes().join(f)).unwrap();
        reports.push(run_bench(route, &orders(1500), 1, 1, &quick(1)).unwrap());
    }
    let written = emit_report(&reports, dir.path()).unwrap();
    assert_eq!(written.len(), 4);
    let rows = load_csv(&written[0]).unwrap();
    assert_eq!(rows.len(), 3);
    for (row, r) in rows.iter().zip(&reports) {
        assert_eq!(row.scenario, r.scenario);
        let tps = row.total_messages as f64 / row.wall_time_seconds;
        assert!((tps - row.mean_tps).abs() / row.mean_tps < 1e-6);
    }
    let header = std::fs::read_to_string(&written[0]).unwrap();
    assert!(header.starts_with("scenario,threads,bulkSize,totalMessages,wallTimeSeconds,meanTps,ci99,conversionMs"));
    for plot in &written[1..] {
        let text = std::fs::read_to_string(plot).unwrap();
        let total: u64 = text
            .lines()
            .map(|l| l.split_whitespace().nth(1).unwrap().parse::<u64>().unwrap())
            .sum();
        assert_eq!(total, 1500);
    }
}
