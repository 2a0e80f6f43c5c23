//! Stateful aggregator: correlate, complete, combine.

use std::collections::HashMap;
use std::hash::{BuildHasher, BuildHasherDefault};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rustc_hash::FxHasher;

use super::{PatternError, RoutingCondition};
use crate::cdm::Message;
use crate::datalog::{Constant, Tuple};

/// Header relation `meta_count(n)` visible to completion conditions, where
/// `n` is the collection size including the arriving message.
pub const COUNT_RELATION: &str = "meta_count";

const PARTITIONS: usize = 16;

pub type CorrelationKey = Tuple;

#[derive(Clone, Debug)]
pub struct AggregateCollection {
    pub key: CorrelationKey,
    pub messages: Vec<Message>,
    pub created_at: Instant,
}

#[derive(Clone, Debug)]
pub struct AggregatorConfig {
    pub correlation: RoutingCondition,
    pub completion: Option<RoutingCondition>,
    pub timeout: Option<Duration>,
    pub max_count: Option<usize>,
}

/// The single key the correlation condition derives for `msg`.
pub fn correlation_key(msg: &Message, crc: &RoutingCondition) -> Result<CorrelationKey, PatternError> {
    let rel = crc.evaluate(msg)?;
    if rel.len() != 1 {
        return Err(PatternError::AmbiguousCorrelation { found: rel.len() });
    }
    Ok(rel.get(0).expect("one tuple").into())
}

/// Appends `msg` to the collection of its key and returns the key.
pub fn aggregator_correlate(
    msg: &Message,
    crc: &RoutingCondition,
    store: &mut HashMap<CorrelationKey, AggregateCollection>,
) -> Result<CorrelationKey, PatternError> {
    let key = correlation_key(msg, crc)?;
    store
        .entry(key.clone())
        .or_insert_with(|| AggregateCollection {
            key: key.clone(),
            messages: Vec::new(),
            created_at: Instant::now(),
        })
        .messages
        .push(msg.clone());
    Ok(key)
}

/// Whether the completion condition holds for `msg`.
pub fn aggregator_complete(msg: &Message, cpc: &RoutingCondition) -> Result<bool, PatternError> {
    cpc.holds(msg)
}

/// Per-relation union of the collected bodies under the first member's
/// header, with id `{firstId}-agg` and all attachments in arrival order.
pub fn aggregator_strategy(coll: &AggregateCollection) -> Result<Message, PatternError> {
    let first = coll
        .messages
        .first()
        .ok_or_else(|| PatternError::Config("empty aggregate collection".into()))?;
    let mut out = first.clone();
    out.id = Arc::from(format!("{}-agg", first.id));
    for m in &coll.messages[1..] {
        out.body
            .union_with(&m.body)
            .map_err(|e| PatternError::SchemaMismatch(e.to_string()))?;
        out.attachments.extend(m.attachments.iter().cloned());
    }
    Ok(out)
}

type Partition = Mutex<HashMap<CorrelationKey, AggregateCollection>>;

/// Aggregator with a key-partitioned store, safe to share between workers.
#[derive(Debug)]
pub struct Aggregator {
    config: AggregatorConfig,
    partitions: Vec<Partition>,
}

impl Aggregator {
    pub fn new(config: AggregatorConfig) -> Result<Self, PatternError> {
        if config.completion.is_none() && config.max_count.is_none() && config.timeout.is_none() {
            return Err(PatternError::Config(
                "an aggregator needs a completion condition, a max count or a timeout".into(),
            ));
        }
        Ok(Self {
            config,
            partitions: (0..PARTITIONS).map(|_| Mutex::default()).collect(),
        })
    }

    pub fn config(&self) -> &AggregatorConfig {
        &self.config
    }

    fn partition(&self, key: &[Constant]) -> &Partition {
        let h = BuildHasherDefault::<FxHasher>::default().hash_one(key);
        &self.partitions[h as usize % PARTITIONS]
    }

    /// Adds `msg` to its collection; returns the aggregate when that
    /// collection completes (condition first, then max count).
    pub fn offer(&self, msg: &Message) -> Result<Option<Message>, PatternError> {
        let key = correlation_key(msg, &self.config.correlation)?;
        let mut part = self.partition(&key).lock().expect("aggregator lock");
        let coll = part.entry(key.clone()).or_insert_with(|| AggregateCollection {
            key: key.clone(),
            messages: Vec::new(),
            created_at: Instant::now(),
        });
        coll.messages.push(msg.clone());
        let n = coll.messages.len();
        let mut done = false;
        if let Some(cpc) = &self.config.completion {
            let mut probe = msg.clone();
            probe
                .header
                .add_fact(COUNT_RELATION, vec![Constant::Int(n as i64)])?;
            done = aggregator_complete(&probe, cpc)?;
        }
        done |= self.config.max_count.is_some_and(|max| n >= max);
        if !done {
            return Ok(None);
        }
        let coll = part.remove(&key).expect("collection present");
        drop(part);
        aggregator_strategy(&coll).map(Some)
    }

    /// Aggregates every collection older than the timeout.
    pub fn expire(&self, now: Instant) -> Vec<Result<Message, PatternError>> {
        let Some(timeout) = self.config.timeout else {
            return Vec::new();
        };
        let mut expired = Vec::new();
        for p in &self.partitions {
            let mut p = p.lock().expect("aggregator lock");
            let keys: Vec<CorrelationKey> = p
                .values()
                .filter(|c| now.duration_since(c.created_at) >= timeout)
                .map(|c| c.key.clone())
                .collect();
            for k in keys {
                expired.extend(p.remove(&k));
            }
        }
        expired.sort_by_key(|c| c.created_at);
        expired.iter().map(aggregator_strategy).collect()
    }

    /// Removes and returns every open collection, oldest first.
    pub fn drain(&self) -> Vec<AggregateCollection> {
        let mut all: Vec<AggregateCollection> = self
            .partitions
            .iter()
            .flat_map(|p| {
                std::mem::take(&mut *p.lock().expect("aggregator lock")).into_values()
            })
            .collect();
        all.sort_by_key(|c| c.created_at);
        all
    }

    pub fn pending(&self) -> usize {
        self.partitions
            .iter()
            .map(|p| p.lock().expect("aggregator lock").len())
            .sum()
    }
}
