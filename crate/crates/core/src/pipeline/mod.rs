//! Routes: a source, an ordered list of pattern nodes and named sinks, run by
//! a pool of workers fed round-robin from one reader.

mod compose;
mod config;
mod engine;
mod node;
mod verify;

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::cdm::{CdmError, Message, WireFormat};
use crate::datagen::GenSpec;
use crate::datalog::{EvalError, ParseError};
use crate::patterns::baseline::NativeRecord;
use crate::patterns::PatternError;

pub use compose::{scatter_gather, splitter_gather, Gather, Scatter, Sequence, Split};
pub use config::{load_route, load_route_file, PayloadMode, Route};
pub use engine::{convert_source, read_payloads, run, run_payloads, RunOptions, QUEUE_CAPACITY};
pub use verify::{verify, Divergence, VerifyReport};

/// Channel a pass-through node at the end of a route delivers to.
pub const OUT: &str = "out";
/// Sink name that receives records whose processing failed.
pub const DEAD_LETTER: &str = "dead-letter";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid route: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Program { path: String, source: ParseError },
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Cdm(#[from] CdmError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("gather quorum not met: {ok} of {needed} branches succeeded ({first_error})")]
    Quorum {
        ok: usize,
        needed: usize,
        first_error: String,
    },
}

impl PipelineError {
    /// Errors caused by the route definition rather than by the data.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            PipelineError::Config(_)
                | PipelineError::Program { .. }
                | PipelineError::Pattern(PatternError::Config(_) | PatternError::InvalidGoal(_))
        ) || matches!(self, PipelineError::Cdm(CdmError::InvalidSchema { .. } | CdmError::Config(_)))
    }
}

/// Source and sink endpoints.
#[derive(Clone, Debug, PartialEq)]
pub enum Endpoint {
    FileSource { path: PathBuf, format: WireFormat },
    GeneratorSource(GenSpec),
    VoidSink,
    FileSink { path: PathBuf, format: WireFormat },
    CountingSink,
}

impl Endpoint {
    pub fn file(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        let format = WireFormat::from_path(&path);
        Endpoint::FileSource { path, format }
    }

    pub fn is_source(&self) -> bool {
        matches!(self, Endpoint::FileSource { .. } | Endpoint::GeneratorSource(_))
    }
}

/// What travels between nodes: a table message or native records.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Table(Message),
    Native(Vec<NativeRecord>),
}

impl Payload {
    pub fn id(&self) -> Arc<str> {
        match self {
            Payload::Table(m) => m.id.clone(),
            Payload::Native(rs) => Arc::from(rs.first().map_or("", |r| r.id())),
        }
    }

    pub fn record_ids(&self) -> Vec<Arc<str>> {
        match self {
            Payload::Table(m) => m.record_ids(),
            Payload::Native(rs) => rs.iter().map(|r| Arc::from(r.id())).collect(),
        }
    }

    pub fn record_count(&self) -> u64 {
        match self {
            Payload::Table(m) => m.record_count() as u64,
            Payload::Native(rs) => rs.len() as u64,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ChannelCount {
    pub messages: u64,
    pub records: u64,
}

/// Outcome of one run. Record counts are per input record, message counts
/// per delivered message (a bulk counts once).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunStats {
    pub route: String,
    pub input_messages: u64,
    pub input_records: u64,
    pub channels: BTreeMap<String, ChannelCount>,
    pub filtered: u64,
    pub held: u64,
    pub errors: u64,
    /// First few error descriptions.
    pub error_samples: Vec<String>,
    /// `(recordId, channel)` per delivered record, when requested.
    pub deliveries: Vec<(Arc<str>, String)>,
    /// From the first dequeue to the last delivery.
    pub wall: Duration,
}

impl RunStats {
    pub fn delivered_records(&self) -> u64 {
        self.channels.values().map(|c| c.records).sum()
    }

    pub fn channel_records(&self, channel: &str) -> u64 {
        self.channels.get(channel).map_or(0, |c| c.records)
    }

    /// Input records equal records delivered, filtered, held and failed.
    pub fn is_conserved(&self) -> bool {
        self.input_records == self.delivered_records() + self.filtered + self.held + self.errors
    }

    /// Per-channel record counts, the thing that must not depend on threads.
    pub fn record_counts(&self) -> BTreeMap<String, u64> {
        self.channels.iter().map(|(k, c)| (k.clone(), c.records)).collect()
    }
}

impl fmt::Display for RunStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "route\t{}", self.route)?;
        writeln!(f, "input\t{} messages\t{} records", self.input_messages, self.input_records)?;
        for (name, c) in &self.channels {
            writeln!(f, "channel {name}\t{} messages\t{} records", c.messages, c.records)?;
        }
        writeln!(f, "filtered\t{}", self.filtered)?;
        if self.held > 0 {
            writeln!(f, "held\t{}", self.held)?;
        }
        writeln!(f, "errors\t{}", self.errors)?;
        for e in &self.error_samples {
            writeln!(f, "  {e}")?;
        }
        write!(f, "wall\t{:.3} s", self.wall.as_secs_f64())
    }
}
