//! Route files and their compilation into runnable routes.
//!
//! A route file is TOML:
//!
//! ```toml
//! name = "datalog-cbr"
//! worker_threads = 1
//!
//! [source]
//! type = "file"
//! path = "orders.ndjson"
//!
//! [[nodes]]
//! kind = "router"
//! default = "default"
//! routes = [{ program = "cbr-order.dl", goal = "cbr-order", channel = "urgent" }]
//!
//! [sinks]
//! urgent = { type = "void" }
//! default = { type = "void" }
//! ```
//!
//! Program and data paths are relative to the route file.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;

use super::node::{Node, NodeKind};
use super::{Endpoint, PipelineError, DEAD_LETTER};
use crate::cdm::{SchemaRegistry, WireFormat};
use crate::datagen::{GenKind, GenSpec};
use crate::datalog::{evaluate, parse_program, Database, Program};
use crate::patterns::{Aggregator, AggregatorConfig, Enricher, Router, RoutingCondition, Translator};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RouteFile {
    name: String,
    source: Option<EndpointFile>,
    #[serde(default)]
    nodes: Vec<NodeFile>,
    #[serde(default)]
    sinks: BTreeMap<String, EndpointFile>,
    #[serde(default = "one", alias = "workerThreads")]
    worker_threads: usize,
    #[serde(default = "one", alias = "bulkSize")]
    bulk_size: usize,
    schemas: Option<PathBuf>,
    baseline: Option<PathBuf>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase", deny_unknown_fields)]
enum EndpointFile {
    #[serde(alias = "fileSource")]
    File { path: PathBuf, format: Option<String> },
    #[serde(alias = "generatorSource")]
    Generator { kind: String, count: u64, seed: u64 },
    #[serde(alias = "voidSink")]
    Void,
    #[serde(alias = "countingSink")]
    Counting,
    #[serde(alias = "fileSink")]
    FileSink { path: PathBuf, format: Option<String> },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConditionFile {
    program: Option<PathBuf>,
    rules: Option<String>,
    goal: String,
    output: Option<String>,
    channel: Option<String>,
}

impl ConditionFile {
    fn inline(program: Option<PathBuf>, rules: Option<String>, goal: String, output: Option<String>) -> Self {
        Self {
            program,
            rules,
            goal,
            output,
            channel: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase", deny_unknown_fields)]
enum NodeFile {
    Router {
        name: Option<String>,
        routes: Vec<ConditionFile>,
        default: Option<String>,
    },
    Filter {
        name: Option<String>,
        program: Option<PathBuf>,
        rules: Option<String>,
        goal: String,
        output: Option<String>,
        to: Option<String>,
    },
    Multicast {
        name: Option<String>,
        channels: Vec<String>,
    },
    RecipientList {
        name: Option<String>,
        program: Option<PathBuf>,
        rules: Option<String>,
        goal: String,
        output: Option<String>,
        recipients: HashMap<String, String>,
    },
    Splitter {
        name: Option<String>,
        parts: Vec<ConditionFile>,
        to: Option<String>,
    },
    Aggregator {
        name: Option<String>,
        correlation: ConditionFile,
        completion: Option<ConditionFile>,
        timeout_ms: Option<u64>,
        max_count: Option<usize>,
        to: Option<String>,
    },
    Translator {
        name: Option<String>,
        program: Option<PathBuf>,
        rules: Option<String>,
        goal: String,
        output: Option<String>,
        to: Option<String>,
    },
    ContentFilter {
        name: Option<String>,
        program: Option<PathBuf>,
        rules: Option<String>,
        goal: String,
        output: Option<String>,
        to: Option<String>,
    },
    Enricher {
        name: Option<String>,
        data: Option<PathBuf>,
        program: Option<PathBuf>,
        to: Option<String>,
    },
    BaselineRouter {
        name: Option<String>,
        channel: String,
        default: String,
    },
    BaselineTranslator {
        name: Option<String>,
        to: Option<String>,
    },
    VoidSink {
        name: Option<String>,
        channel: Option<String>,
    },
}

/// Whether the route works on fact tables or on native structs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PayloadMode {
    Table,
    Native,
}

/// A validated route, ready to run. Cheap to share across workers.
#[derive(Debug)]
pub struct Route {
    pub name: String,
    pub source: Option<Endpoint>,
    pub sinks: BTreeMap<String, Endpoint>,
    pub worker_threads: usize,
    pub bulk_size: usize,
    pub baseline: Option<PathBuf>,
    pub(crate) nodes: Vec<Node>,
    pub(crate) registry: Arc<SchemaRegistry>,
    pub(crate) mode: PayloadMode,
}

impl Route {
    pub fn mode(&self) -> PayloadMode {
        self.mode
    }

    pub fn registry(&self) -> &SchemaRegistry {
        &self.registry
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_kinds(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.kind.label()).collect()
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.worker_threads = threads.max(1);
        self
    }

    pub fn with_bulk_size(mut self, k: usize) -> Self {
        self.bulk_size = k.max(1);
        self
    }

    /// A node-less copy that parses one record per message.
    pub(crate) fn reader_only(&self) -> Route {
        Route {
            name: self.name.clone(),
            source: None,
            sinks: BTreeMap::new(),
            worker_threads: 1,
            bulk_size: 1,
            baseline: None,
            nodes: Vec::new(),
            registry: self.registry.clone(),
            mode: self.mode,
        }
    }

    /// Every channel some node can emit.
    pub fn channels(&self) -> Vec<String> {
        let mut out: Vec<String> = self.nodes.iter().flat_map(|n| n.emitted_channels()).collect();
        out.sort();
        out.dedup();
        out
    }
}

/// Parses and validates route text. Relative paths resolve against `base`.
pub fn load_route(text: &str, base: &Path) -> Result<Route, PipelineError> {
    let file: RouteFile = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
    compile(file, base)
}

/// Reads a route file from disk.
pub fn load_route_file(path: &Path) -> Result<Route, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        PipelineError::Config(format!("cannot read route {}: {e}", path.display()))
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    load_route(&text, base)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn format_of(path: &Path, format: Option<&str>) -> Result<WireFormat, PipelineError> {
    match format {
        Some(f) => f.parse().map_err(PipelineError::Config),
        None => Ok(WireFormat::from_path(path)),
    }
}

fn load_program(base: &Path, path: &Path) -> Result<Arc<Program>, PipelineError> {
    let full = resolve(base, path);
    let text = std::fs::read_to_string(&full).map_err(|e| {
        PipelineError::Config(format!("cannot read program {}: {e}", full.display()))
    })?;
    parse_program(&text).map(Arc::new).map_err(|source| PipelineError::Program {
        path: full.display().to_string(),
        source,
    })
}

fn condition(base: &Path, c: &ConditionFile) -> Result<RoutingCondition, PipelineError> {
    let program = match (&c.program, &c.rules) {
        (Some(p), None) => load_program(base, p)?,
        (None, Some(text)) => Arc::new(parse_program(text).map_err(|source| {
            PipelineError::Program {
                path: "<inline rules>".into(),
                source,
            }
        })?),
        _ => {
            return Err(PipelineError::Config(format!(
                "condition for goal `{}` needs exactly one of `program` or `rules`",
                c.goal
            )))
        }
    };
    let mut cond = RoutingCondition::new(program, &c.goal)?;
    if let Some(o) = &c.output {
        cond = cond.with_output(o);
    }
    Ok(cond)
}

fn translator(base: &Path, c: &ConditionFile) -> Result<Translator, PipelineError> {
    let cond = condition(base, c)?;
    let mut t = Translator::new(cond.program().clone(), &c.goal)?;
    if let Some(o) = &c.output {
        t = t.with_output(o);
    }
    Ok(t)
}

fn endpoint(base: &Path, e: EndpointFile) -> Result<Endpoint, PipelineError> {
    Ok(match e {
        EndpointFile::File { path, format } => {
            let path = resolve(base, &path);
            let format = format_of(&path, format.as_deref())?;
            Endpoint::FileSource { path, format }
        }
        EndpointFile::Generator { kind, count, seed } => {
            let kind: GenKind = kind.parse().map_err(PipelineError::Config)?;
            Endpoint::GeneratorSource(GenSpec::new(kind, count, seed))
        }
        EndpointFile::Void => Endpoint::VoidSink,
        EndpointFile::Counting => Endpoint::CountingSink,
        EndpointFile::FileSink { path, format } => {
            let path = resolve(base, &path);
            let format = format_of(&path, format.as_deref())?;
            Endpoint::FileSink { path, format }
        }
    })
}

fn compile_node(base: &Path, n: NodeFile) -> Result<Node, PipelineError> {
    let (name, to, kind) = match n {
        NodeFile::Router {
            name,
            routes,
            default,
        } => {
            let mut pairs = Vec::with_capacity(routes.len());
            for r in &routes {
                let channel = r.channel.clone().ok_or_else(|| {
                    PipelineError::Config(format!("router condition `{}` has no channel", r.goal))
                })?;
                pairs.push((condition(base, r)?.with_early_exit(true), channel));
            }
            (name, None, NodeKind::Router(Router::new(pairs, default)?))
        }
        NodeFile::Filter {
            name,
            program,
            rules,
            goal,
            output,
            to,
        } => {
            let c = ConditionFile::inline(program, rules, goal, output);
            (name, to, NodeKind::Filter(condition(base, &c)?))
        }
        NodeFile::Multicast { name, channels } => {
            if channels.is_empty() {
                return Err(PipelineError::Config("multicast needs at least one channel".into()));
            }
            (name, None, NodeKind::Multicast(channels))
        }
        NodeFile::RecipientList {
            name,
            program,
            rules,
            goal,
            output,
            recipients,
        } => {
            let c = ConditionFile::inline(program, rules, goal, output);
            let kind = NodeKind::RecipientList {
                cond: condition(base, &c)?,
                recipients,
            };
            (name, None, kind)
        }
        NodeFile::Splitter { name, parts, to } => {
            if parts.is_empty() {
                return Err(PipelineError::Config("splitter needs at least one part".into()));
            }
            let conds = parts
                .iter()
                .map(|p| condition(base, p))
                .collect::<Result<_, _>>()?;
            (name, to, NodeKind::Splitter(conds))
        }
        NodeFile::Aggregator {
            name,
            correlation,
            completion,
            timeout_ms,
            max_count,
            to,
        } => {
            let config = AggregatorConfig {
                correlation: condition(base, &correlation)?,
                completion: completion.as_ref().map(|c| condition(base, c)).transpose()?,
                timeout: timeout_ms.map(Duration::from_millis),
                max_count,
            };
            (name, to, NodeKind::Aggregator(Arc::new(Aggregator::new(config)?)))
        }
        NodeFile::Translator {
            name,
            program,
            rules,
            goal,
            output,
            to,
        } => {
            let c = ConditionFile::inline(program, rules, goal, output);
            (name, to, NodeKind::Translator(translator(base, &c)?))
        }
        NodeFile::ContentFilter {
            name,
            program,
            rules,
            goal,
            output,
            to,
        } => {
            let c = ConditionFile::inline(program, rules, goal, output);
            (name, to, NodeKind::ContentFilter(translator(base, &c)?))
        }
        NodeFile::Enricher {
            name,
            data,
            program,
            to,
        } => {
            let data = match data {
                Some(p) => evaluate(&*load_program(base, &p)?, &Database::new())?,
                None => Database::new(),
            };
            let program = program.map(|p| load_program(base, &p)).transpose()?;
            (name, to, NodeKind::Enricher(Enricher::new(data, program)))
        }
        NodeFile::BaselineRouter {
            name,
            channel,
            default,
        } => (name, None, NodeKind::BaselineRouter { channel, default }),
        NodeFile::BaselineTranslator { name, to } => (name, to, NodeKind::BaselineTranslator),
        NodeFile::VoidSink { name, channel } => (
            name,
            None,
            NodeKind::VoidSink(channel.unwrap_or_else(|| "void".into())),
        ),
    };
    Ok(Node { name, to, kind })
}

fn compile(file: RouteFile, base: &Path) -> Result<Route, PipelineError> {
    if file.worker_threads == 0 {
        return Err(PipelineError::Config("worker_threads must be at least 1".into()));
    }
    if file.bulk_size == 0 {
        return Err(PipelineError::Config("bulk_size must be at least 1".into()));
    }
    let registry = match &file.schemas {
        Some(p) => SchemaRegistry::load(&resolve(base, p))?,
        None => SchemaRegistry::tpch(),
    };
    let source = file.source.map(|e| endpoint(base, e)).transpose()?;
    if let Some(s) = &source {
        if !s.is_source() {
            return Err(PipelineError::Config("the route source must be a file or generator".into()));
        }
    }
    let mut sinks = BTreeMap::new();
    for (name, e) in file.sinks {
        let e = endpoint(base, e)?;
        if e.is_source() {
            return Err(PipelineError::Config(format!("sink `{name}` is a source endpoint")));
        }
        sinks.insert(name, e);
    }
    let nodes = file
        .nodes
        .into_iter()
        .map(|n| compile_node(base, n))
        .collect::<Result<Vec<_>, _>>()?;
    if nodes.is_empty() {
        return Err(PipelineError::Config("a route needs at least one node".into()));
    }
    let native = nodes.iter().filter(|n| n.kind.is_native()).count();
    let tabular = nodes
        .iter()
        .filter(|n| !n.kind.is_native() && !n.kind.is_implicit_sink())
        .count();
    let mode = match (native, tabular) {
        (0, _) => PayloadMode::Table,
        (_, 0) => PayloadMode::Native,
        _ => {
            return Err(PipelineError::Config(
                "baseline nodes cannot be mixed with table nodes".into(),
            ))
        }
    };
    let route = Route {
        name: file.name,
        source,
        sinks,
        worker_threads: file.worker_threads,
        bulk_size: file.bulk_size,
        baseline: file.baseline.map(|p| resolve(base, &p)),
        nodes,
        registry: Arc::new(registry),
        mode,
    };
    check_wiring(&route)?;
    Ok(route)
}

/// Every emitted channel must reach a sink or a later named node, and a
/// pass-through node at the end needs an `out` sink.
fn check_wiring(route: &Route) -> Result<(), PipelineError> {
    let mut names = HashMap::new();
    for (i, n) in route.nodes.iter().enumerate() {
        if let Some(name) = &n.name {
            if names.insert(name.as_str(), i).is_some() {
                return Err(PipelineError::Config(format!("duplicate node name `{name}`")));
            }
        }
    }
    for (i, n) in route.nodes.iter().enumerate() {
        let mut targets = n.emitted_channels();
        if n.kind.passes_through() {
            match &n.to {
                Some(t) => targets.push(t.clone()),
                None if i + 1 == route.nodes.len() => targets.push(super::OUT.into()),
                None => {}
            }
        }
        for t in targets {
            let later_node = names.get(t.as_str()).is_some_and(|&j| j > i);
            let sink = route.sinks.contains_key(&t);
            if !later_node && !sink && !n.kind.is_implicit_sink() {
                return Err(PipelineError::Config(format!(
                    "channel `{t}` has no sink and names no later node"
                )));
            }
        }
    }
    if let Some(e) = route.sinks.get(DEAD_LETTER) {
        if e.is_source() {
            return Err(PipelineError::Config("dead-letter must be a sink".into()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const L1: &str = r#"cbr-order(id,-,OTOTALPRICE,-) :- order(id,otype,-,-,OTOTALPRICE,OPRIORITY,-), =(OPRIORITY,"1-URGENT"), >(OTOTALPRICE,100000.00)."#;

    fn cbr(sinks: &str) -> String {
        format!(
            r#"
name = "cbr"
[source]
type = "generator"
kind = "orders"
count = 10
seed = 1
[[nodes]]
kind = "router"
default = "default"
routes = [{{ rules = '{L1}', goal = "cbr-order", channel = "urgent" }}]
[sinks]
{sinks}
"#
        )
    }

    #[test]
    fn router_route_loads() {
        let r = load_route(&cbr("urgent = { type = \"void\" }\ndefault = { type = \"void\" }"), Path::new(".")).unwrap();
        assert_eq!(r.node_kinds(), vec!["router"]);
        assert_eq!(r.channels(), vec!["default".to_string(), "urgent".to_string()]);
        assert_eq!(r.mode(), PayloadMode::Table);
    }

    #[test]
    fn missing_sink_is_rejected() {
        let err = load_route(&cbr("urgent = { type = \"void\" }"), Path::new(".")).unwrap_err();
        assert!(matches!(err, PipelineError::Config(m) if m.contains("default")));
    }

    #[test]
    fn translator_route_needs_out_sink() {
        let text = r#"
name = "mt"
[[nodes]]
kind = "translator"
rules = "conv(a) :- order(a,b,c,d,e,f,g)."
goal = "conv"
"#;
        assert!(load_route(text, Path::new(".")).is_err());
        let ok = format!("{text}[sinks]\nout = {{ type = \"void\" }}\n");
        assert_eq!(load_route(&ok, Path::new(".")).unwrap().node_kinds(), vec!["translator"]);
    }

    #[test]
    fn mixed_modes_are_rejected() {
        let text = r#"
name = "mix"
[[nodes]]
kind = "baselineTranslator"
to = "next"
[[nodes]]
kind = "translator"
name = "next"
rules = "conv(a) :- order(a,b,c,d,e,f,g)."
goal = "conv"
[sinks]
out = { type = "void" }
"#;
        assert!(load_route(text, Path::new(".")).is_err());
    }

    #[test]
    fn bad_program_surfaces_parse_error() {
        let text = r#"
name = "bad"
[[nodes]]
kind = "filter"
rules = "p(x) :- q(y)."
goal = "p"
[sinks]
out = { type = "void" }
"#;
        assert!(matches!(
            load_route(text, Path::new(".")),
            Err(PipelineError::Program { .. })
        ));
    }

    #[test]
    fn zero_threads_rejected() {
        let text = cbr("urgent = { type = \"void\" }\ndefault = { type = \"void\" }")
            .replace("name = \"cbr\"", "name = \"cbr\"\nworker_threads = 0");
        assert!(load_route(&text, Path::new(".")).is_err());
    }
}
