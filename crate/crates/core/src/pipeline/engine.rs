//! The worker pool.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Instant;

use crossbeam_channel::{bounded, Sender};
use serde_json::{json, Value};

use super::config::{PayloadMode, Route};
use super::node::{drive, flush_aggregators, Outlet};
use super::{ChannelCount, Endpoint, Payload, PipelineError, RunStats, DEAD_LETTER};
use crate::cdm::{bulk_assemble, constant_to_json, parse_record_line, Message, RecordReader, SchemaRegistry};
use crate::datagen::GeneratedReader;
use crate::patterns::baseline::NativeRecord;

/// Messages in flight between the reader and all workers together.
pub const QUEUE_CAPACITY: usize = 1024;

const ERROR_SAMPLES: usize = 16;

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Record `(recordId, channel)` for every delivered record.
    pub collect_deliveries: bool,
    /// Incremented once per fully processed input message.
    pub progress: Option<Arc<AtomicU64>>,
}

enum Work {
    /// Raw records with their line numbers, one bulk worth.
    Raw(Vec<(usize, Vec<u8>)>),
    Ready(Payload),
}

enum SinkHandle {
    Discard,
    File(Mutex<BufWriter<File>>),
}

struct Sinks {
    by_name: HashMap<String, SinkHandle>,
}

impl Sinks {
    fn open(route: &Route) -> io::Result<Self> {
        let mut by_name = HashMap::new();
        for (name, e) in &route.sinks {
            let h = match e {
                Endpoint::FileSink { path, .. } => {
                    SinkHandle::File(Mutex::new(BufWriter::new(File::create(path)?)))
                }
                _ => SinkHandle::Discard,
            };
            by_name.insert(name.clone(), h);
        }
        Ok(Self { by_name })
    }

    fn write(&self, channel: &str, line: impl FnOnce() -> Vec<Value>) -> io::Result<()> {
        if let Some(SinkHandle::File(w)) = self.by_name.get(channel) {
            let mut w = w.lock().expect("sink lock");
            for v in line() {
                serde_json::to_writer(&mut *w, &v)?;
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    fn flush(&self) -> io::Result<()> {
        for h in self.by_name.values() {
            if let SinkHandle::File(w) = h {
                w.lock().expect("sink lock").flush()?;
            }
        }
        Ok(())
    }
}

/// JSON lines for a delivered payload: table messages as `{id, body}`,
/// native records in their wire shape.
fn render(payload: &Payload) -> Vec<Value> {
    match payload {
        Payload::Table(m) => vec![render_message(m)],
        Payload::Native(rs) => rs
            .iter()
            .map(|r| match r {
                NativeRecord::Order(o) => serde_json::to_value(o),
                NativeRecord::Converted(c) => serde_json::to_value(c),
                NativeRecord::CustomerNation(cn) => {
                    let mut items = vec![serde_json::to_value(&cn.customer)];
                    items.extend(cn.nations.iter().map(serde_json::to_value));
                    items.into_iter().collect::<Result<Vec<_>, _>>().map(Value::Array)
                }
            })
            .map(|v| v.expect("native records serialize"))
            .collect(),
    }
}

fn render_message(m: &Message) -> Value {
    let body: serde_json::Map<String, Value> = m
        .body
        .relations()
        .map(|r| {
            let rows = r
                .sorted()
                .into_iter()
                .map(|t| Value::Array(t.iter().map(constant_to_json).collect()))
                .collect();
            (r.name().to_string(), Value::Array(rows))
        })
        .collect();
    json!({ "id": &*m.id, "body": body })
}

struct WorkerOutlet<'a> {
    sinks: &'a Sinks,
    stats: RunStats,
    collect: bool,
    first: Option<Instant>,
    last: Option<Instant>,
}

impl<'a> WorkerOutlet<'a> {
    fn new(sinks: &'a Sinks, collect: bool) -> Self {
        Self {
            sinks,
            stats: RunStats::default(),
            collect,
            first: None,
            last: None,
        }
    }

    fn note_error(&mut self, text: String) {
        if self.stats.error_samples.len() < ERROR_SAMPLES {
            self.stats.error_samples.push(text);
        }
    }
}

impl Outlet for WorkerOutlet<'_> {
    fn deliver(&mut self, channel: &str, payload: Payload) {
        let records = if self.collect {
            let ids = payload.record_ids();
            let n = ids.len() as u64;
            self.stats
                .deliveries
                .extend(ids.into_iter().map(|id| (id, channel.to_string())));
            n
        } else {
            payload.record_count()
        };
        match self.stats.channels.get_mut(channel) {
            Some(c) => {
                c.messages += 1;
                c.records += records;
            }
            None => {
                self.stats.channels.insert(
                    channel.to_string(),
                    ChannelCount {
                        messages: 1,
                        records,
                    },
                );
            }
        }
        if let Err(e) = self.sinks.write(channel, || render(&payload)) {
            self.note_error(format!("sink {channel}: {e}"));
        }
    }

    fn filtered(&mut self, records: u64) {
        self.stats.filtered += records;
    }

    fn held(&mut self, records: u64) {
        self.stats.held += records;
    }

    fn failed(&mut self, records: u64, id: &str, error: &PipelineError) {
        self.stats.errors += records;
        self.note_error(format!("{id}: {error}"));
        let line = || vec![json!({ "id": id, "error": error.to_string() })];
        if let Err(e) = self.sinks.write(DEAD_LETTER, line) {
            self.note_error(format!("sink {DEAD_LETTER}: {e}"));
        }
    }
}

/// Parses raw records into one payload of the route's kind. Records that
/// fail to parse are reported through `outlet` and left out.
fn convert(
    raw: Vec<(usize, Vec<u8>)>,
    mode: PayloadMode,
    registry: &SchemaRegistry,
    outlet: &mut impl Outlet,
) -> Option<Payload> {
    match mode {
        PayloadMode::Native => {
            let mut records = Vec::with_capacity(raw.len());
            for (line, bytes) in raw {
                match NativeRecord::parse(&bytes) {
                    Ok(r) => records.push(r),
                    Err(e) => outlet.failed(1, &format!("line {line}"), &e.into()),
                }
            }
            (!records.is_empty()).then_some(Payload::Native(records))
        }
        PayloadMode::Table => {
            let mut msgs = Vec::with_capacity(raw.len());
            for (line, bytes) in raw {
                let parsed = std::str::from_utf8(&bytes)
                    .map_err(|e| crate::cdm::CdmError::Malformed(e.to_string()))
                    .and_then(|text| parse_record_line(text, registry));
                match parsed {
                    Ok(m) => msgs.push(m),
                    Err(e) => outlet.failed(1, &format!("line {line}"), &e.into()),
                }
            }
            match msgs.len() {
                0 => None,
                1 => msgs.pop().map(Payload::Table),
                n => {
                    let id = msgs[0].id.clone();
                    match bulk_assemble(msgs, n) {
                        Ok(mut b) => Some(Payload::Table(b.remove(0).into_message())),
                        Err(e) => {
                            outlet.failed(n as u64, &id, &e.into());
                            None
                        }
                    }
                }
            }
        }
    }
}

fn open_source(source: &Endpoint) -> Result<(Box<dyn BufRead + Send>, crate::cdm::WireFormat), PipelineError> {
    match source {
        Endpoint::FileSource { path, format } => {
            let f = File::open(path).map_err(|e| {
                io::Error::new(e.kind(), format!("cannot open {}: {e}", path.display()))
            })?;
            Ok((Box::new(BufReader::with_capacity(1 << 16, f)), *format))
        }
        Endpoint::GeneratorSource(spec) => Ok((
            Box::new(BufReader::new(GeneratedReader::new(spec.kind, spec.count, spec.seed))),
            crate::cdm::WireFormat::Ndjson,
        )),
        _ => Err(PipelineError::Config("a sink cannot be read from".into())),
    }
}

/// Reads, converts and bulk-assembles a whole source up front. Records that
/// fail to convert are counted in the returned stats.
pub fn convert_source(
    route: &Route,
    source: &Endpoint,
) -> Result<(Vec<Payload>, RunStats), PipelineError> {
    let (reader, format) = open_source(source)?;
    let mut records = RecordReader::new(reader, format);
    let sinks = Sinks {
        by_name: HashMap::new(),
    };
    let mut outlet = WorkerOutlet::new(&sinks, false);
    let mut out = Vec::new();
    let mut batch = Vec::with_capacity(route.bulk_size);
    loop {
        let next = records.next_record()?;
        if let Some((line, bytes)) = next {
            outlet.stats.input_records += 1;
            batch.push((line, bytes.to_vec()));
        }
        if batch.len() == route.bulk_size || (next.is_none() && !batch.is_empty()) {
            let raw = std::mem::replace(&mut batch, Vec::with_capacity(route.bulk_size));
            out.extend(convert(raw, route.mode, &route.registry, &mut outlet));
        }
        if next.is_none() {
            break;
        }
    }
    Ok((out, outlet.stats))
}

/// Parses a source into payloads without grouping, for callers that build
/// their own bulks.
pub fn read_payloads(route: &Route, source: &Endpoint) -> Result<Vec<Payload>, PipelineError> {
    convert_source(&route.reader_only(), source).map(|(p, _)| p)
}

fn merge(into: &mut RunStats, from: RunStats) {
    into.filtered += from.filtered;
    into.held += from.held;
    into.errors += from.errors;
    for (k, c) in from.channels {
        let e = into.channels.entry(k).or_default();
        e.messages += c.messages;
        e.records += c.records;
    }
    for s in from.error_samples {
        if into.error_samples.len() < ERROR_SAMPLES {
            into.error_samples.push(s);
        }
    }
    into.deliveries.extend(from.deliveries);
}

/// Runs `route` over `source` (or the route's own source).
pub fn run(route: &Route, source: Option<&Endpoint>, opts: &RunOptions) -> Result<RunStats, PipelineError> {
    let source = source
        .or(route.source.as_ref())
        .ok_or_else(|| PipelineError::Config("the route has no source".into()))?;
    let (reader, format) = open_source(source)?;
    let bulk = route.bulk_size;
    execute(route, opts, move |tx, counts| {
        let mut records = RecordReader::new(reader, format);
        let mut batch = Vec::with_capacity(bulk);
        loop {
            let next = records.next_record()?;
            if let Some((line, bytes)) = next {
                counts.1 += 1;
                batch.push((line, bytes.to_vec()));
            }
            if batch.len() == bulk || (next.is_none() && !batch.is_empty()) {
                counts.0 += 1;
                let raw = std::mem::replace(&mut batch, Vec::with_capacity(bulk));
                if !tx(Work::Raw(raw)) {
                    break;
                }
            }
            if next.is_none() {
                break;
            }
        }
        Ok(())
    })
}

/// Runs `route` over already converted payloads.
pub fn run_payloads(route: &Route, payloads: Vec<Payload>, opts: &RunOptions) -> Result<RunStats, PipelineError> {
    let records: u64 = payloads.iter().map(Payload::record_count).sum();
    let messages = payloads.len() as u64;
    execute(route, opts, move |tx, counts| {
        *counts = (messages, records);
        for p in payloads {
            if !tx(Work::Ready(p)) {
                break;
            }
        }
        Ok(())
    })
}

type Feed<'f> = dyn FnMut(Work) -> bool + 'f;

/// First dequeue and last delivery of one worker.
type Span = (Option<Instant>, Option<Instant>);

fn execute<F>(route: &Route, opts: &RunOptions, produce: F) -> Result<RunStats, PipelineError>
where
    F: FnOnce(&mut Feed<'_>, &mut (u64, u64)) -> Result<(), PipelineError>,
{
    let sinks = Sinks::open(route)?;
    let threads = route.worker_threads.max(1);
    let capacity = (QUEUE_CAPACITY / threads).max(1);
    let mut counts = (0u64, 0u64);
    let (mut stats, mut spans) = thread::scope(|s| -> Result<(RunStats, Vec<Span>), PipelineError> {
        let mut senders: Vec<Sender<Work>> = Vec::with_capacity(threads);
        let mut handles = Vec::with_capacity(threads);
        for _ in 0..threads {
            let (tx, rx) = bounded::<Work>(capacity);
            senders.push(tx);
            let sinks = &sinks;
            let progress = opts.progress.clone();
            let collect = opts.collect_deliveries;
            handles.push(s.spawn(move || {
                let mut outlet = WorkerOutlet::new(sinks, collect);
                for work in rx {
                    if outlet.first.is_none() {
                        outlet.first = Some(Instant::now());
                    }
                    let payload = match work {
                        Work::Ready(p) => Some(p),
                        Work::Raw(raw) => convert(raw, route.mode, &route.registry, &mut outlet),
                    };
                    if let Some(p) = payload {
                        drive(&route.nodes, 0, p, &mut outlet);
                    }
                    if let Some(c) = &progress {
                        c.fetch_add(1, Ordering::Relaxed);
                    }
                    outlet.last = Some(Instant::now());
                }
                (outlet.stats, outlet.first, outlet.last)
            }));
        }
        let mut next = 0usize;
        let mut feed = |w: Work| {
            let ok = senders[next].send(w).is_ok();
            next = (next + 1) % senders.len();
            ok
        };
        let produced = produce(&mut feed, &mut counts);
        drop(senders);
        let mut stats = RunStats::default();
        let mut spans = Vec::new();
        for h in handles {
            let (st, first, last) = h.join().expect("worker panicked");
            merge(&mut stats, st);
            spans.push((first, last));
        }
        produced?;
        Ok((stats, spans))
    })?;
    let mut outlet = WorkerOutlet::new(&sinks, opts.collect_deliveries);
    flush_aggregators(&route.nodes, &mut outlet);
    if outlet.stats != RunStats::default() {
        spans.push((None, Some(Instant::now())));
    }
    merge(&mut stats, outlet.stats);
    sinks.flush()?;
    stats.route = route.name.clone();
    stats.input_messages = counts.0;
    stats.input_records = counts.1;
    let first = spans.iter().filter_map(|s| s.0).min();
    let last = spans.iter().filter_map(|s| s.1).max();
    if let (Some(a), Some(b)) = (first, last) {
        stats.wall = b.saturating_duration_since(a);
    }
    Ok(stats)
}
