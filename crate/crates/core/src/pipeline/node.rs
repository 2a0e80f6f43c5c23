//! Compiled pattern nodes and the walk of a payload through them.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use super::{Payload, PipelineError, OUT};
use crate::cdm::Message;
use crate::patterns::baseline::{baseline_join_router, baseline_router, baseline_translator, NativeRecord};
use crate::patterns::{
    aggregator_strategy, multicast, recipient_list, restrict, splitter, Aggregator, Enricher,
    PatternError, Router, RoutingCondition, Translator,
};

#[derive(Debug)]
pub(crate) enum NodeKind {
    Router(Router),
    Filter(RoutingCondition),
    Multicast(Vec<String>),
    RecipientList {
        cond: RoutingCondition,
        recipients: HashMap<String, String>,
    },
    Splitter(Vec<RoutingCondition>),
    Aggregator(Arc<Aggregator>),
    Translator(Translator),
    ContentFilter(Translator),
    Enricher(Enricher),
    BaselineRouter {
        channel: String,
        default: String,
    },
    BaselineTranslator,
    VoidSink(String),
}

impl NodeKind {
    pub(crate) fn label(&self) -> &'static str {
        match self {
            NodeKind::Router(_) => "router",
            NodeKind::Filter(_) => "filter",
            NodeKind::Multicast(_) => "multicast",
            NodeKind::RecipientList { .. } => "recipientList",
            NodeKind::Splitter(_) => "splitter",
            NodeKind::Aggregator(_) => "aggregator",
            NodeKind::Translator(_) => "translator",
            NodeKind::ContentFilter(_) => "contentFilter",
            NodeKind::Enricher(_) => "enricher",
            NodeKind::BaselineRouter { .. } => "baselineRouter",
            NodeKind::BaselineTranslator => "baselineTranslator",
            NodeKind::VoidSink(_) => "voidSink",
        }
    }

    pub(crate) fn is_native(&self) -> bool {
        matches!(
            self,
            NodeKind::BaselineRouter { .. } | NodeKind::BaselineTranslator
        )
    }

    /// Nodes whose output continues down the sequence.
    pub(crate) fn passes_through(&self) -> bool {
        matches!(
            self,
            NodeKind::Filter(_)
                | NodeKind::Splitter(_)
                | NodeKind::Aggregator(_)
                | NodeKind::Translator(_)
                | NodeKind::ContentFilter(_)
                | NodeKind::Enricher(_)
                | NodeKind::BaselineTranslator
        )
    }

    pub(crate) fn is_implicit_sink(&self) -> bool {
        matches!(self, NodeKind::VoidSink(_))
    }
}

#[derive(Debug)]
pub(crate) struct Node {
    pub name: Option<String>,
    pub to: Option<String>,
    pub kind: NodeKind,
}

impl Node {
    pub(crate) fn emitted_channels(&self) -> Vec<String> {
        match &self.kind {
            NodeKind::Router(r) => r.table().channels().map(str::to_string).collect(),
            NodeKind::Multicast(cs) => cs.clone(),
            NodeKind::RecipientList { recipients, .. } => recipients.values().cloned().collect(),
            NodeKind::BaselineRouter { channel, default } => vec![channel.clone(), default.clone()],
            NodeKind::VoidSink(c) => vec![c.clone()],
            _ => Vec::new(),
        }
    }
}

/// What one node does with one payload.
pub(crate) enum Emit {
    /// Continue with the next node (or the node's `to` channel).
    Next(Payload),
    To(String, Payload),
    Filtered(u64),
    /// Absorbed by an aggregator; carries the record count.
    Held(u64),
}

/// Where a walk through the nodes ends up.
pub(crate) trait Outlet {
    fn deliver(&mut self, channel: &str, payload: Payload);
    fn filtered(&mut self, records: u64);
    fn held(&mut self, records: u64);
    fn failed(&mut self, records: u64, id: &str, error: &PipelineError);
}

fn table(p: &Payload) -> Result<&Message, PipelineError> {
    match p {
        Payload::Table(m) => Ok(m),
        Payload::Native(_) => Err(PipelineError::Config("table node received a native payload".into())),
    }
}

fn native(p: Payload) -> Result<Vec<NativeRecord>, PipelineError> {
    match p {
        Payload::Native(rs) => Ok(rs),
        Payload::Table(_) => Err(PipelineError::Config("baseline node received a table payload".into())),
    }
}

impl Node {
    /// Runs the node; on failure returns the error and the number of input
    /// records it affected.
    pub(crate) fn apply(&self, payload: Payload, out: &mut Vec<Emit>) -> Result<(), (PipelineError, u64)> {
        match &self.kind {
            NodeKind::VoidSink(c) => {
                out.push(Emit::To(c.clone(), payload));
                Ok(())
            }
            NodeKind::BaselineRouter { .. } | NodeKind::BaselineTranslator => {
                let records = payload.record_count();
                self.apply_native(payload, out).map_err(|e| (e, records))
            }
            _ => match self.apply_table(&payload, out) {
                Ok(true) => {
                    out.push(Emit::Next(payload));
                    Ok(())
                }
                Ok(false) => Ok(()),
                Err(e) => Err((e, payload.record_count())),
            },
        }
    }

    /// Table nodes only borrow their input; `true` passes it on unchanged.
    fn apply_table(&self, payload: &Payload, out: &mut Vec<Emit>) -> Result<bool, PipelineError> {
        let msg = table(payload)?;
        match &self.kind {
            NodeKind::Router(r) => {
                for (c, m) in r.route_bulk(msg)? {
                    out.push(Emit::To(c, Payload::Table(m)));
                }
            }
            NodeKind::Filter(cond) => {
                let records = msg.record_ids();
                let keep = cond.matching_among(msg, &records)?;
                let dropped = (records.len() - keep.len()) as u64;
                if dropped > 0 {
                    out.push(Emit::Filtered(dropped));
                }
                if keep.len() == records.len() {
                    return Ok(true);
                } else if !keep.is_empty() {
                    out.push(Emit::Next(Payload::Table(restrict(msg, &keep))));
                }
            }
            NodeKind::Multicast(channels) => {
                for (c, m) in multicast(msg, channels) {
                    out.push(Emit::To(c, Payload::Table(m)));
                }
            }
            NodeKind::RecipientList { cond, recipients } => {
                for (c, m) in recipient_list(msg, cond, recipients)?.deliveries {
                    out.push(Emit::To(c, Payload::Table(m)));
                }
            }
            NodeKind::Splitter(conds) => {
                let parts = splitter(msg, conds)?;
                if parts.is_empty() {
                    out.push(Emit::Filtered(payload.record_count()));
                }
                out.extend(parts.into_iter().map(|m| Emit::Next(Payload::Table(m))));
            }
            NodeKind::Aggregator(agg) => {
                if agg.config().timeout.is_some() {
                    for m in agg.expire(Instant::now()) {
                        out.push(Emit::Next(Payload::Table(m?)));
                    }
                }
                match agg.offer(msg)? {
                    Some(m) => out.push(Emit::Next(Payload::Table(m))),
                    None => out.push(Emit::Held(payload.record_count())),
                }
            }
            NodeKind::Translator(t) | NodeKind::ContentFilter(t) => {
                out.push(Emit::Next(Payload::Table(t.apply(msg)?)));
            }
            NodeKind::Enricher(e) => out.push(Emit::Next(Payload::Table(e.apply(msg)?))),
            NodeKind::BaselineRouter { .. } | NodeKind::BaselineTranslator | NodeKind::VoidSink(_) => {
                unreachable!("handled by apply")
            }
        }
        Ok(false)
    }

    fn apply_native(&self, payload: Payload, out: &mut Vec<Emit>) -> Result<(), PipelineError> {
        match &self.kind {
            NodeKind::BaselineRouter { channel, default } => {
                let mut hit = Vec::new();
                let mut miss = Vec::new();
                for r in native(payload)? {
                    let routed = match &r {
                        NativeRecord::Order(o) => baseline_router(o),
                        NativeRecord::CustomerNation(cn) => baseline_join_router(cn),
                        NativeRecord::Converted(_) => {
                            return Err(PatternError::SchemaMismatch(
                                "the baseline router expects orders or customers".into(),
                            )
                            .into())
                        }
                    };
                    if routed {
                        hit.push(r);
                    } else {
                        miss.push(r);
                    }
                }
                if !hit.is_empty() {
                    out.push(Emit::To(channel.clone(), Payload::Native(hit)));
                }
                if !miss.is_empty() {
                    out.push(Emit::To(default.clone(), Payload::Native(miss)));
                }
            }
            NodeKind::BaselineTranslator => {
                let converted = native(payload)?
                    .into_iter()
                    .map(|r| match r {
                        NativeRecord::Order(o) => Ok(NativeRecord::Converted(baseline_translator(&o))),
                        _ => Err(PatternError::SchemaMismatch(
                            "the baseline translator expects orders".into(),
                        )),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                out.push(Emit::Next(Payload::Native(converted)));
            }
            _ => unreachable!("handled by apply"),
        }
        Ok(())
    }

    pub(crate) fn aggregator(&self) -> Option<&Arc<Aggregator>> {
        match &self.kind {
            NodeKind::Aggregator(a) => Some(a),
            _ => None,
        }
    }
}

/// Pushes `payload` through `nodes[start..]`.
pub(crate) fn drive(nodes: &[Node], start: usize, payload: Payload, outlet: &mut impl Outlet) {
    let Some(node) = nodes.get(start) else {
        outlet.deliver(OUT, payload);
        return;
    };
    let id = payload.id();
    let mut emits = Vec::new();
    if let Err((e, records)) = node.apply(payload, &mut emits) {
        outlet.failed(records, &id, &e);
        return;
    }
    for emit in emits {
        match emit {
            Emit::Next(p) => match &node.to {
                Some(c) => forward(nodes, start, c, p, outlet),
                None => drive(nodes, start + 1, p, outlet),
            },
            Emit::To(c, p) => forward(nodes, start, &c, p, outlet),
            Emit::Filtered(n) => outlet.filtered(n),
            Emit::Held(n) => outlet.held(n),
        }
    }
}

fn forward(nodes: &[Node], from: usize, channel: &str, payload: Payload, outlet: &mut impl Outlet) {
    let target = nodes
        .iter()
        .enumerate()
        .skip(from + 1)
        .find(|(_, n)| n.name.as_deref() == Some(channel));
    match target {
        Some((j, _)) => drive(nodes, j, payload, outlet),
        None => outlet.deliver(channel, payload),
    }
}

/// Turns whatever an aggregator still holds into messages, oldest first.
pub(crate) fn flush_aggregators(nodes: &[Node], outlet: &mut impl Outlet) {
    for (i, n) in nodes.iter().enumerate() {
        let Some(agg) = n.aggregator() else { continue };
        for coll in agg.drain() {
            let records: u64 = coll.messages.iter().map(|m| m.record_count() as u64).sum();
            match aggregator_strategy(&coll) {
                Ok(m) => {
                    let p = Payload::Table(m);
                    match &n.to {
                        Some(c) => forward(nodes, i, c, p, outlet),
                        None => drive(nodes, i + 1, p, outlet),
                    }
                }
                Err(e) => {
                    let id = coll.messages.first().map_or("", |m| &*m.id);
                    outlet.failed(records, id, &e.into())
                }
            }
        }
    }
}
