//! Multi-record table messages.

use std::collections::HashMap;
use std::sync::Arc;

use super::{CdmError, Message, META};
use crate::datalog::{Constant, Database, Relation};

/// A message carrying the facts of several records.
///
/// Remembers the record order and how many attachments each record
/// contributed, so [`bulk_split`] can undo [`bulk_assemble`] exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct BulkMessage {
    message: Message,
    records: Vec<Arc<str>>,
    attachment_counts: Vec<usize>,
}

impl BulkMessage {
    pub fn message(&self) -> &Message {
        &self.message
    }

    pub fn into_message(self) -> Message {
        self.message
    }

    pub fn bulk_size(&self) -> usize {
        self.records.len()
    }

    pub fn records(&self) -> &[Arc<str>] {
        &self.records
    }
}

/// Groups consecutive messages into bulks of at most `k` records.
///
/// With `k == 1` every bulk wraps the original message unchanged.
pub fn bulk_assemble(msgs: Vec<Message>, k: usize) -> Result<Vec<BulkMessage>, CdmError> {
    if k == 0 {
        return Err(CdmError::InvalidBulkSize);
    }
    let mut out = Vec::with_capacity(msgs.len().div_ceil(k));
    let mut iter = msgs.into_iter().peekable();
    while iter.peek().is_some() {
        let chunk: Vec<Message> = iter.by_ref().take(k).collect();
        out.push(assemble_chunk(chunk)?);
    }
    Ok(out)
}

fn assemble_chunk(chunk: Vec<Message>) -> Result<BulkMessage, CdmError> {
    let mut records = Vec::with_capacity(chunk.len());
    let mut attachment_counts = Vec::with_capacity(chunk.len());
    let mut iter = chunk.into_iter();
    let mut bulk = iter.next().expect("non-empty chunk");
    records.push(bulk.id.clone());
    attachment_counts.push(bulk.attachments.len());
    let mut last = bulk.id.clone();
    for m in iter {
        merge(&mut bulk.body, &m.body, &m.id)?;
        merge(&mut bulk.header, &m.header, &m.id)?;
        attachment_counts.push(m.attachments.len());
        bulk.attachments.extend(m.attachments);
        records.push(m.id.clone());
        last = m.id;
    }
    if records.len() > 1 {
        bulk.id = Arc::from(format!("{}..{}", records[0], last));
    }
    Ok(BulkMessage {
        message: bulk,
        records,
        attachment_counts,
    })
}

fn merge(into: &mut Database, from: &Database, id: &str) -> Result<(), CdmError> {
    into.union_with(from).map_err(|e| {
        CdmError::SchemaMismatch(format!("record `{id}` does not fit the bulk: {e}"))
    })
}

/// Splits a bulk back into its single-record messages, in record order.
pub fn bulk_split(bulk: &BulkMessage) -> Vec<Message> {
    if bulk.records.len() == 1 {
        return vec![bulk.message.clone()];
    }
    let index: HashMap<&str, usize> = bulk
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (&**r, i))
        .collect();
    let mut out: Vec<Message> = bulk
        .records
        .iter()
        .map(|r| {
            let mut m = Message::new(r.clone());
            m.support_rules = bulk.message.support_rules.clone();
            m
        })
        .collect();
    let owner = |t: &[Constant]| match &t[0] {
        Constant::Str(s) => index.get(&**s).copied(),
        _ => None,
    };
    for rel in bulk.message.header.relations() {
        scatter(rel, &owner, &mut out, |m| &mut m.header);
    }
    // relations named in a record's header exist in its body even when empty
    if let Some(meta) = bulk.message.header.relation(META) {
        for t in meta.iter() {
            let (Some(i), Constant::Str(name)) = (owner(t), &t[1]) else {
                continue;
            };
            if let Some(rel) = bulk.message.body.relation(name) {
                let _ = out[i].body.relation_mut(name, rel.arity());
            }
        }
    }
    for rel in bulk.message.body.relations() {
        scatter(rel, &owner, &mut out, |m| &mut m.body);
    }
    let mut attachments = bulk.message.attachments.iter();
    for (m, &n) in out.iter_mut().zip(&bulk.attachment_counts) {
        m.attachments.extend(attachments.by_ref().take(n).cloned());
    }
    out
}

fn scatter(
    rel: &Relation,
    owner: &impl Fn(&[Constant]) -> Option<usize>,
    out: &mut [Message],
    target: impl Fn(&mut Message) -> &mut Database,
) {
    for t in rel.iter() {
        if let Some(i) = owner(t) {
            target(&mut out[i])
                .relation_mut(rel.name(), rel.arity())
                .and_then(|r| r.insert(t.into()))
                .expect("arity taken from the source relation");
        }
    }
}
