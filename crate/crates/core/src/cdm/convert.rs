//! Record (JSON object) to fact conversion and back.

use std::borrow::Cow;
use std::fmt;

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::Deserialize;
use serde_json::value::RawValue;
use serde_json::{Number, Value};

use super::schema::{Field, FieldType, Schema, SchemaRegistry};
use super::{CdmError, Message};
use crate::datalog::{Constant, Database, Tuple};

pub type Record = serde_json::Map<String, Value>;

/// Values longer than this are never record type names.
const MAX_TYPE_LEN: usize = 64;

fn mismatch(field: &Field, found: &str) -> CdmError {
    CdmError::TypeMismatch {
        field: field.name.clone(),
        expected: field.ty,
        found: found.to_string(),
    }
}

fn value_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn from_value(field: &Field, v: &Value) -> Result<Constant, CdmError> {
    match (field.ty, v) {
        (FieldType::String, Value::String(s)) => Ok(Constant::str(s)),
        (FieldType::Integer, Value::Number(n)) => n
            .as_i64()
            .map(Constant::Int)
            .ok_or_else(|| mismatch(field, &n.to_string())),
        (FieldType::Float, Value::Number(n)) => n
            .as_f64()
            .map(Constant::Float)
            .ok_or_else(|| mismatch(field, &n.to_string())),
        _ => Err(mismatch(field, value_kind(v))),
    }
}

fn from_raw(field: &Field, raw: &RawValue) -> Result<Constant, CdmError> {
    let text = raw.get();
    match (field.ty, text.as_bytes().first()) {
        (FieldType::String, Some(b'"')) => {
            let inner = &text[1..text.len() - 1];
            if inner.contains('\\') {
                let s: String = serde_json::from_str(text)
                    .map_err(|e| CdmError::Malformed(e.to_string()))?;
                Ok(Constant::str(s))
            } else {
                Ok(Constant::str(inner))
            }
        }
        (FieldType::Integer, Some(b'-' | b'0'..=b'9')) => text
            .parse::<i64>()
            .map(Constant::Int)
            .map_err(|_| mismatch(field, text)),
        (FieldType::Float, Some(b'-' | b'0'..=b'9')) => text
            .parse::<f64>()
            .map(Constant::Float)
            .map_err(|_| mismatch(field, text)),
        _ => {
            let found = match text.as_bytes().first() {
                Some(b'"') => "string",
                Some(b'{') => "object",
                Some(b'[') => "array",
                Some(b't' | b'f') => "boolean",
                Some(b'n') => "null",
                _ => text,
            };
            Err(mismatch(field, found))
        }
    }
}

fn build_tuple<F>(schema: &Schema, mut get: F) -> Result<Tuple, CdmError>
where
    F: FnMut(&Field) -> Option<Result<Constant, CdmError>>,
{
    schema
        .fields()
        .iter()
        .map(|f| get(f).unwrap_or_else(|| Err(CdmError::MissingField(f.name.clone()))))
        .collect::<Result<Vec<_>, _>>()
        .map(Tuple::from)
}

fn id_of(t: &Tuple) -> Result<std::sync::Arc<str>, CdmError> {
    match &t[0] {
        Constant::Str(s) => Ok(s.clone()),
        other => Err(CdmError::Malformed(format!("record identifier {other} is not a string"))),
    }
}

/// Converts one record into a single-record message.
///
/// Fields not in the schema (such as padding) are ignored.
pub fn record_to_message(record: &Record, schema: &Schema) -> Result<Message, CdmError> {
    let t = build_tuple(schema, |f| record.get(&f.name).map(|v| from_value(f, v)))?;
    let id = id_of(&t)?;
    let mut body = Database::new();
    body.add_fact(schema.relation(), t)?;
    Ok(Message::single(id, body))
}

/// Inverse of [`record_to_message`] on the schema fields.
pub fn message_to_record(msg: &Message, schema: &Schema) -> Result<Record, CdmError> {
    let rel = msg
        .body
        .relation(schema.relation())
        .ok_or_else(|| CdmError::MissingField(schema.relation().to_string()))?;
    if rel.len() != 1 {
        return Err(CdmError::Malformed(format!(
            "expected one `{}` fact, found {}",
            schema.relation(),
            rel.len()
        )));
    }
    if rel.arity() != schema.arity() {
        return Err(CdmError::SchemaMismatch(format!(
            "`{}` has arity {}, schema has {}",
            schema.relation(),
            rel.arity(),
            schema.arity()
        )));
    }
    let t = rel.get(0).expect("one tuple");
    Ok(schema
        .fields()
        .iter()
        .zip(t)
        .map(|(f, c)| (f.name.clone(), constant_to_json(c)))
        .collect())
}

pub fn constant_to_json(c: &Constant) -> Value {
    match c {
        Constant::Str(s) => Value::String(s.to_string()),
        Constant::Int(i) => Value::Number((*i).into()),
        Constant::Float(f) => Number::from_f64(*f).map_or(Value::Null, Value::Number),
        Constant::Null => Value::Null,
    }
}

fn record_schema<'r>(record: &Record, registry: &'r SchemaRegistry) -> Result<&'r Schema, CdmError> {
    let found = record.iter().find_map(|(k, v)| {
        let s = registry.by_type(v.as_str()?)?;
        (s.type_field() == k).then_some(&**s)
    });
    found.ok_or_else(|| CdmError::UnknownType(describe_type(record.iter().map(|(_, v)| v.as_str()))))
}

fn describe_type<'a>(values: impl Iterator<Item = Option<&'a str>>) -> String {
    values
        .flatten()
        .filter(|s| s.len() <= MAX_TYPE_LEN)
        .nth(1)
        .unwrap_or("?")
        .to_string()
}

/// One primary record plus context records, all keyed by the primary id.
///
/// Each record's type field selects its schema. Context facts get the primary
/// identifier in position 0 so the whole message is a single record.
pub fn multiformat_to_message(
    primary: &Record,
    context: &[Record],
    registry: &SchemaRegistry,
) -> Result<Message, CdmError> {
    let schema = record_schema(primary, registry)?;
    let mut msg = record_to_message(primary, schema)?;
    for rec in context {
        let s = record_schema(rec, registry)?;
        let mut t = build_tuple(s, |f| rec.get(&f.name).map(|v| from_value(f, v)))?;
        std::sync::Arc::get_mut(&mut t).expect("fresh tuple")[0] = Constant::Str(msg.id.clone());
        msg.body.add_fact(s.relation(), t)?;
    }
    msg.rebuild_header();
    Ok(msg)
}

/// Borrowed view of a JSON object: keys and unparsed values.
struct RecordView<'a> {
    fields: Vec<(Cow<'a, str>, &'a RawValue)>,
}

impl RecordView<'_> {
    fn get(&self, name: &str) -> Option<&RawValue> {
        self.fields.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    fn short_str(raw: &RawValue) -> Option<&str> {
        let t = raw.get();
        (t.len() <= MAX_TYPE_LEN + 2 && t.starts_with('"') && !t.contains('\\'))
            .then(|| &t[1..t.len() - 1])
    }

    fn schema<'r>(&self, registry: &'r SchemaRegistry) -> Result<&'r Schema, CdmError> {
        let pairs: Vec<(&str, Option<&str>)> = self
            .fields
            .iter()
            .map(|(k, v)| (k.as_ref(), Self::short_str(v)))
            .collect();
        let found = pairs.iter().find_map(|&(k, v)| {
            let s = registry.by_type(v?)?;
            (s.type_field() == k).then_some(&**s)
        });
        found.ok_or_else(|| {
            CdmError::UnknownType(describe_type(pairs.iter().map(|(_, v)| *v)))
        })
    }

    fn tuple(&self, schema: &Schema) -> Result<Tuple, CdmError> {
        build_tuple(schema, |f| self.get(&f.name).map(|v| from_raw(f, v)))
    }
}

struct KeyVisitor;

impl<'de> Visitor<'de> for KeyVisitor {
    type Value = Cow<'de, str>;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a string key")
    }

    fn visit_borrowed_str<E: de::Error>(self, v: &'de str) -> Result<Self::Value, E> {
        Ok(Cow::Borrowed(v))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Self::Value, E> {
        Ok(Cow::Owned(v.to_string()))
    }

    fn visit_string<E: de::Error>(self, v: String) -> Result<Self::Value, E> {
        Ok(Cow::Owned(v))
    }
}

struct Key<'a>(Cow<'a, str>);

impl<'de> Deserialize<'de> for Key<'de> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        d.deserialize_str(KeyVisitor).map(Key)
    }
}

impl<'de> Deserialize<'de> for RecordView<'de> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = RecordView<'de>;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut fields = Vec::with_capacity(map.size_hint().unwrap_or(8));
                while let Some(Key(k)) = map.next_key()? {
                    let v: &'de RawValue = map.next_value()?;
                    fields.push((k, v));
                }
                Ok(RecordView { fields })
            }
        }
        d.deserialize_map(V)
    }
}

/// Parses one wire record: a JSON object, or a JSON array whose first element
/// is the primary record and the rest its context.
pub fn parse_record_line(text: &str, registry: &SchemaRegistry) -> Result<Message, CdmError> {
    let malformed = |e: serde_json::Error| CdmError::Malformed(e.to_string());
    match text.trim_start().as_bytes().first() {
        Some(b'{') => {
            let view: RecordView = serde_json::from_str(text).map_err(malformed)?;
            let schema = view.schema(registry)?;
            let t = view.tuple(schema)?;
            let id = id_of(&t)?;
            let mut body = Database::new();
            body.add_fact(schema.relation(), t)?;
            Ok(Message::single(id, body))
        }
        Some(b'[') => {
            let views: Vec<RecordView> = serde_json::from_str(text).map_err(malformed)?;
            let (first, rest) = views
                .split_first()
                .ok_or_else(|| CdmError::Malformed("empty record array".into()))?;
            let schema = first.schema(registry)?;
            let t = first.tuple(schema)?;
            let id = id_of(&t)?;
            let mut body = Database::new();
            body.add_fact(schema.relation(), t)?;
            for v in rest {
                let s = v.schema(registry)?;
                let mut t = v.tuple(s)?;
                std::sync::Arc::get_mut(&mut t).expect("fresh tuple")[0] = Constant::Str(id.clone());
                body.add_fact(s.relation(), t)?;
            }
            Ok(Message::single(id, body))
        }
        _ => Err(CdmError::Malformed("expected a JSON object or array".into())),
    }
}
