//! Canonical data model: a message is a small Datalog database.
//!
//! The body holds payload facts whose first argument is the record identifier.
//! The header holds one `meta(recordId, relation)` fact per record and body
//! relation, which is all a pattern needs to know about the payload without
//! looking inside it. Attachments are opaque and never interpreted.

mod bulk;
mod convert;
mod schema;
mod stream;

use std::hash::BuildHasher;
use std::sync::Arc;

use rustc_hash::{FxBuildHasher, FxHashSet};
use thiserror::Error;

use crate::datalog::{Constant, Database, EvalError, Program};

pub use bulk::{bulk_assemble, bulk_split, BulkMessage};
pub use convert::{
    constant_to_json, message_to_record, multiformat_to_message, parse_record_line,
    record_to_message, Record,
};
pub use schema::{
    customer_schema, nation_schema, order_schema, Field, FieldType, Schema, SchemaRegistry,
};
pub use stream::{stream_parse, MessageStream, RecordReader, StreamError, WireFormat};

/// Header relation naming each record and the body relations it contributes to.
pub const META: &str = "meta";

pub type Attachment = Arc<[u8]>;

#[derive(Debug, Error)]
pub enum CdmError {
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("field `{field}`: expected {expected}, found {found}")]
    TypeMismatch {
        field: String,
        expected: schema::FieldType,
        found: String,
    },
    #[error("no schema registered for record type `{0}`")]
    UnknownType(String),
    #[error("schema `{relation}`: {message}")]
    InvalidSchema { relation: String, message: String },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("bulk size must be at least 1")]
    InvalidBulkSize,
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<EvalError> for CdmError {
    fn from(e: EvalError) -> Self {
        CdmError::SchemaMismatch(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub id: Arc<str>,
    pub header: Database,
    pub body: Database,
    pub support_rules: Option<Arc<Program>>,
    pub attachments: Vec<Attachment>,
}

impl Message {
    /// A message with an empty header and body.
    pub fn new(id: impl Into<Arc<str>>) -> Self {
        Self {
            id: id.into(),
            header: Database::new(),
            body: Database::new(),
            support_rules: None,
            attachments: Vec::new(),
        }
    }

    /// A single-record message; the header describes every body relation.
    pub fn single(id: impl Into<Arc<str>>, body: Database) -> Self {
        let mut m = Self::new(id);
        m.body = body;
        m.rebuild_header();
        m
    }

    /// Recomputes `meta` from the record identifiers found in the body.
    ///
    /// Relations with no facts are attributed to the message identifier.
    pub fn rebuild_header(&mut self) {
        let mut meta = crate::datalog::Relation::new(META, 2);
        for rel in self.body.relations() {
            let name = Constant::str(rel.name());
            if rel.is_empty() {
                meta.insert(vec![Constant::Str(self.id.clone()), name].into())
                    .expect("arity 2");
                continue;
            }
            for t in rel.iter() {
                meta.insert(vec![t[0].clone(), name.clone()].into())
                    .expect("arity 2");
            }
        }
        self.header.insert_relation(meta);
    }

    /// Distinct record identifiers in header order.
    pub fn record_ids(&self) -> Vec<Arc<str>> {
        let mut out = Vec::with_capacity(self.header.relation(META).map_or(1, |r| r.len()));
        self.each_record(|s| out.push(s.clone()));
        out
    }

    /// Number of distinct record identifiers.
    pub fn record_count(&self) -> usize {
        let mut n = 0;
        self.each_record(|_| n += 1);
        n
    }

    fn each_record(&self, mut f: impl FnMut(&Arc<str>)) {
        let Some(meta) = self.header.relation(META) else {
            return f(&self.id);
        };
        // header facts of one record are usually adjacent; up to SMALL ids are
        // tracked by hash on the stack, beyond that in a set
        const SMALL: usize = 32;
        let mut small: [(u64, &str); SMALL] = [(0, ""); SMALL];
        let mut n = 0;
        let mut large: Option<FxHashSet<&str>> = None;
        let mut last: Option<&Arc<str>> = None;
        for t in meta.iter() {
            let Constant::Str(s) = &t[0] else { continue };
            if last.is_some_and(|l| l == s) {
                continue;
            }
            last = Some(s);
            let new = match &mut large {
                Some(set) => set.insert(s),
                None => {
                    let h = FxBuildHasher.hash_one(&**s);
                    if small[..n].iter().any(|&(k, v)| k == h && v == &**s) {
                        false
                    } else if n < SMALL {
                        small[n] = (h, s);
                        n += 1;
                        true
                    } else {
                        let mut set = FxHashSet::with_capacity_and_hasher(meta.len(), FxBuildHasher);
                        set.extend(small.iter().map(|p| p.1));
                        set.insert(s);
                        large = Some(set);
                        true
                    }
                }
            };
            if new {
                f(s);
            }
        }
    }

    pub fn with_attachment(mut self, bytes: impl Into<Attachment>) -> Self {
        self.attachments.push(bytes.into());
        self
    }

    pub fn with_support_rules(mut self, rules: Arc<Program>) -> Self {
        self.support_rules = Some(rules);
        self
    }
}
