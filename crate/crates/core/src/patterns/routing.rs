//! Router, filter, multicast, recipient list and splitter.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use super::{partition, PatternError, RoutingCondition};
use crate::cdm::Message;
use crate::datalog::{Constant, Database};

/// Header relation added to split parts: `split(parentId, index, total)`.
pub const SPLIT_RELATION: &str = "split";

/// Condition index to channel, tried in order, with an optional fallback.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChannelTable {
    pub entries: Vec<(usize, String)>,
    pub default: Option<String>,
}

impl ChannelTable {
    pub fn new(entries: Vec<(usize, String)>, default: Option<String>) -> Result<Self, PatternError> {
        if entries.is_empty() && default.is_none() {
            return Err(PatternError::Config(
                "a channel table needs an entry or a default".into(),
            ));
        }
        Ok(Self { entries, default })
    }

    /// Every channel name the table can emit.
    pub fn channels(&self) -> impl Iterator<Item = &str> + '_ {
        self.entries
            .iter()
            .map(|(_, c)| c.as_str())
            .chain(self.default.as_deref())
    }
}

/// First-match routing: the message goes to the channel of the first
/// condition that holds, otherwise to the default channel.
pub fn content_based_router(
    msg: &Message,
    conds: &[RoutingCondition],
    channels: &ChannelTable,
) -> Result<(String, Message), PatternError> {
    for (i, channel) in &channels.entries {
        let cond = conds
            .get(*i)
            .ok_or_else(|| PatternError::Config(format!("no condition with index {i}")))?;
        if cond.holds(msg)? {
            return Ok((channel.clone(), msg.clone()));
        }
    }
    channels
        .default
        .clone()
        .map(|c| (c, msg.clone()))
        .ok_or(PatternError::NoRoute)
}

/// A content-based router with its conditions and channel table bundled.
#[derive(Clone, Debug)]
pub struct Router {
    conds: Vec<RoutingCondition>,
    table: ChannelTable,
}

impl Router {
    /// One channel per condition, in order.
    pub fn new(
        routes: Vec<(RoutingCondition, String)>,
        default: Option<String>,
    ) -> Result<Self, PatternError> {
        let (conds, names): (Vec<_>, Vec<_>) = routes.into_iter().unzip();
        let table = ChannelTable::new(names.into_iter().enumerate().collect(), default)?;
        Ok(Self { conds, table })
    }

    pub fn table(&self) -> &ChannelTable {
        &self.table
    }

    pub fn conditions(&self) -> &[RoutingCondition] {
        &self.conds
    }

    /// The channel for a single-record message.
    pub fn route(&self, msg: &Message) -> Result<&str, PatternError> {
        for (i, channel) in &self.table.entries {
            if self.conds[*i].holds(msg)? {
                return Ok(channel);
            }
        }
        self.table.default.as_deref().ok_or(PatternError::NoRoute)
    }

    /// Partitions a bulk message by record: each record goes where it would
    /// have gone on its own, and every channel receives one bulk message.
    pub fn route_bulk(&self, msg: &Message) -> Result<Vec<(String, Message)>, PatternError> {
        let records = msg.record_ids();
        if records.len() <= 1 {
            let channel = self.route(msg)?;
            return Ok(vec![(channel.to_string(), msg.clone())]);
        }
        let mut open = vec![true; records.len()];
        let mut remaining = records.len();
        let mut assigned: Vec<(&str, Vec<Arc<str>>)> = Vec::new();
        for (i, channel) in &self.table.entries {
            if remaining == 0 {
                break;
            }
            // hits come back in record order
            let matched = self.conds[*i].matching_among(msg, &records)?;
            let mut hits = Vec::with_capacity(matched.len());
            let mut pos = 0;
            for m in matched {
                while pos < records.len() && records[pos] != m {
                    pos += 1;
                }
                if pos < records.len() && std::mem::take(&mut open[pos]) {
                    remaining -= 1;
                    hits.push(m);
                }
            }
            push_records(&mut assigned, channel, hits);
        }
        if remaining > 0 {
            let rest: Vec<Arc<str>> = records.into_iter().zip(&open).filter(|(_, &o)| o).map(|(r, _)| r).collect();
            match &self.table.default {
                Some(d) => push_records(&mut assigned, d, rest),
                None => return Err(PatternError::NoRoute),
            }
        }
        if let [(channel, _)] = assigned[..] {
            return Ok(vec![(channel.to_string(), msg.clone())]);
        }
        let (channels, groups): (Vec<&str>, Vec<Vec<Arc<str>>>) = assigned.into_iter().unzip();
        Ok(channels
            .into_iter()
            .map(str::to_string)
            .zip(partition(msg, &groups))
            .collect())
    }
}

fn push_records<'a>(assigned: &mut Vec<(&'a str, Vec<Arc<str>>)>, channel: &'a str, rs: Vec<Arc<str>>) {
    if rs.is_empty() {
        return;
    }
    match assigned.iter_mut().find(|(c, _)| *c == channel) {
        Some((_, v)) => v.extend(rs),
        None => assigned.push((channel, rs)),
    }
}

/// Passes the message iff the condition holds.
pub fn message_filter(msg: &Message, cond: &RoutingCondition) -> Result<Option<Message>, PatternError> {
    Ok(cond.holds(msg)?.then(|| msg.clone()))
}

/// One independent copy per channel.
pub fn multicast(msg: &Message, channels: &[String]) -> Vec<(String, Message)> {
    channels.iter().map(|c| (c.clone(), msg.clone())).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecipientOutcome {
    pub deliveries: Vec<(String, Message)>,
    /// Derived keys with no registry entry.
    pub unresolved: usize,
}

/// Copies the message to every registered receiver whose key the condition
/// derives (first argument of the goal relation).
pub fn recipient_list(
    msg: &Message,
    rd: &RoutingCondition,
    registry: &HashMap<String, String>,
) -> Result<RecipientOutcome, PatternError> {
    let keys = rd.evaluate(msg)?;
    let mut seen = HashSet::new();
    let mut deliveries = Vec::new();
    let mut unresolved = 0;
    for t in keys.iter() {
        let key = match &t[0] {
            Constant::Str(s) => s.to_string(),
            other => other.to_string(),
        };
        if !seen.insert(key.clone()) {
            continue;
        }
        match registry.get(&key) {
            Some(channel) => deliveries.push((channel.clone(), msg.clone())),
            None => unresolved += 1,
        }
    }
    if deliveries.is_empty() {
        return Err(PatternError::NoRecipientResolved { unresolved });
    }
    Ok(RecipientOutcome {
        deliveries,
        unresolved,
    })
}

/// One message per condition with a non-empty result.
///
/// Part `i` carries the derived facts as its body, the id `{id}-{i}`, a copy of
/// the header and attachments, and a `split(parentId, i, total)` header fact
/// where `total` counts the non-empty parts.
pub fn splitter(msg: &Message, conds: &[RoutingCondition]) -> Result<Vec<Message>, PatternError> {
    let mut parts = Vec::new();
    for (i, cond) in conds.iter().enumerate() {
        let rel = cond.evaluate(msg)?;
        if rel.is_empty() {
            continue;
        }
        let mut body = Database::new();
        body.insert_relation(rel);
        parts.push((i, body));
    }
    let total = parts.len() as i64;
    parts
        .into_iter()
        .map(|(i, body)| {
            let mut part = msg.clone();
            part.id = Arc::from(format!("{}-{i}", msg.id));
            part.body = body;
            part.header.add_fact(
                SPLIT_RELATION,
                vec![
                    Constant::Str(msg.id.clone()),
                    Constant::Int(i as i64),
                    Constant::Int(total),
                ],
            )?;
            Ok(part)
        })
        .collect()
}
