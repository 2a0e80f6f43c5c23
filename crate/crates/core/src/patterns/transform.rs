//! Translator, content filter and content enricher.

use std::collections::BTreeSet;
use std::sync::Arc;

use super::{split_records, PatternError, RoutingCondition};
use crate::cdm::Message;
use crate::datalog::{evaluate, Database, Program};

/// Replaces the relations a program reads with the relation it derives.
///
/// Relations that no rule body mentions pass through untouched, so context
/// carried next to the translated payload survives.
#[derive(Clone, Debug)]
pub struct Translator {
    cond: RoutingCondition,
    sources: BTreeSet<String>,
}

impl Translator {
    pub fn new(program: Arc<Program>, goal: &str) -> Result<Self, PatternError> {
        let sources = program.body_relations().iter().map(|s| s.to_string()).collect();
        Ok(Self {
            cond: RoutingCondition::new(program, goal)?,
            sources,
        })
    }

    pub fn parse(text: &str, goal: &str) -> Result<Self, PatternError> {
        Self::new(Arc::new(crate::datalog::parse_program(text)?), goal)
    }

    pub fn with_output(mut self, name: &str) -> Self {
        self.cond = self.cond.with_output(name);
        self
    }

    pub fn goal(&self) -> &str {
        self.cond.goal()
    }

    pub fn apply(&self, msg: &Message) -> Result<Message, PatternError> {
        let derived = if self.cond.is_record_scoped() || msg.record_count() <= 1 {
            self.cond.evaluate(msg)?
        } else {
            // evaluate record by record so no rule joins facts of different records
            let mut parts = split_records(msg).into_iter();
            let mut acc = self.cond.evaluate(&parts.next().expect("at least one record"))?;
            for p in parts {
                acc.union_with(&self.cond.evaluate(&p)?)?;
            }
            acc
        };
        let mut out = msg.clone();
        for s in &self.sources {
            out.body.remove(s);
        }
        out.body.insert_relation(derived);
        Ok(out)
    }
}

/// Same message id, header and attachments; body rewritten by `mt`.
pub fn message_translator(msg: &Message, mt: &Program, goal: &str) -> Result<Message, PatternError> {
    Translator::new(Arc::new(mt.clone()), goal)?.apply(msg)
}

/// A translator whose program only selects and projects.
pub fn content_filter(msg: &Message, program: &Program, goal: &str) -> Result<Message, PatternError> {
    message_translator(msg, program, goal)
}

/// Adds reference data and whatever an optional program derives from it.
#[derive(Clone, Debug)]
pub struct Enricher {
    data: Database,
    program: Option<Arc<Program>>,
}

impl Enricher {
    pub fn new(data: Database, program: Option<Arc<Program>>) -> Self {
        Self { data, program }
    }

    pub fn apply(&self, msg: &Message) -> Result<Message, PatternError> {
        let mismatch = |e: crate::datalog::EvalError| PatternError::SchemaMismatch(e.to_string());
        let mut out = msg.clone();
        out.body.union_with(&self.data).map_err(mismatch)?;
        if let Some(ep) = &self.program {
            let evaluated = evaluate(ep, &out.body)?;
            out.body.union_with(&evaluated).map_err(mismatch)?;
        }
        Ok(out)
    }
}

/// Body becomes the union of the message body, `data` and facts derived by `ep`.
pub fn content_enricher(msg: &Message, data: &Database, ep: &Program) -> Result<Message, PatternError> {
    let program = (!ep.is_empty()).then(|| Arc::new(ep.clone()));
    Enricher::new(data.clone(), program).apply(msg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datalog::{parse_program, Constant};
    use crate::tuple;

    const L2: &str = "conv-order(id,otype,ORDERKEY,CUSTKEY,SHIPPRIORITY) :- \
        order(id,otype,ORDERKEY,CUSTKEY,-,-,SHIPPRIORITY).";

    fn order(id: &str, price: f64) -> Message {
        let mut body = Database::new();
        body.add_fact("order", tuple![id, "order", 7i64, 13i64, price, "1-URGENT", 0i64])
            .unwrap();
        Message::single(id, body)
    }

    #[test]
    fn translation_projects() {
        let m = order("m1", 42.5).with_attachment(b"blob".to_vec());
        let out = message_translator(&m, &parse_program(L2).unwrap(), "conv-order").unwrap();
        assert_eq!(out.id, m.id);
        assert_eq!(out.header, m.header);
        assert_eq!(out.attachments, m.attachments);
        assert!(!out.body.contains("order"));
        let conv = out.body.relation("conv-order").unwrap();
        assert_eq!(conv.len(), 1);
        assert!(conv.contains(&tuple!["m1", "order", 7i64, 13i64, 0i64]));
    }

    #[test]
    fn identity_program_keeps_body() {
        let m = order("m1", 1.0);
        let id = parse_program("order(a,b,c,d,e,f,g) :- order(a,b,c,d,e,f,g).").unwrap();
        assert_eq!(message_translator(&m, &id, "order").unwrap(), m);
    }

    #[test]
    fn untouched_relations_pass_through() {
        let mut m = order("m1", 1.0);
        m.body.add_fact("nation", tuple!["m1", "nation", 1i64]).unwrap();
        let out = message_translator(&m, &parse_program(L2).unwrap(), "conv-order").unwrap();
        assert!(out.body.contains("nation"));
    }

    #[test]
    fn empty_body_translates_to_empty_goal() {
        let m = Message::single("e", Database::new());
        let out = message_translator(&m, &parse_program(L2).unwrap(), "conv-order").unwrap();
        assert!(out.body.relation("conv-order").unwrap().is_empty());
    }

    #[test]
    fn content_filters() {
        let bulk = crate::cdm::bulk_assemble(vec![order("a", 50.0), order("b", 500.0)], 2)
            .unwrap()
            .remove(0)
            .into_message();
        let value = parse_program(
            "keep(a,b,c,d,e,f,g) :- order(a,b,c,d,e,f,g), >(e, 100).",
        )
        .unwrap();
        let out = content_filter(&bulk, &value, "keep").unwrap();
        assert_eq!(out.body.relation("keep").unwrap().len(), 1);

        let structural = parse_program("slim(a,c,e) :- order(a,b,c,d,e,f,g).").unwrap();
        let out = content_filter(&bulk, &structural, "slim").unwrap();
        assert_eq!(out.body.relation("slim").unwrap().arity(), 3);

        let none = parse_program("keep(a) :- order(a,b,c,d,e,f,g), >(e, 1e9).").unwrap();
        assert!(content_filter(&bulk, &none, "keep").unwrap().body.relation("keep").unwrap().is_empty());
    }

    #[test]
    fn enrichment_is_a_union() {
        let mut m = Message::single("c1", Database::new());
        m.body.add_fact("customer", tuple!["c1", "customer", 7i64]).unwrap();
        let mut nations = Database::new();
        for k in 0..25i64 {
            nations.add_fact("nation", tuple!["c1", "nation", k, k % 5]).unwrap();
        }
        let out = content_enricher(&m, &nations, &Program::empty()).unwrap();
        assert_eq!(out.body.relation("nation").unwrap().len(), 25);
        assert_eq!(content_enricher(&m, &Database::new(), &Program::empty()).unwrap(), m);
        let twice = content_enricher(&out, &nations, &Program::empty()).unwrap();
        assert_eq!(twice.body.relation("nation").unwrap().len(), 25);

        let ep = parse_program("region(id, r) :- customer(id, t, k), nation(n, u, k, r).").unwrap();
        let out = content_enricher(&m, &nations, &ep).unwrap();
        assert!(out.body.relation("region").unwrap().contains(&[Constant::str("c1"), Constant::Int(2)]));

        let mut clash = Database::new();
        clash.add_fact("customer", tuple!["c1"]).unwrap();
        assert!(matches!(
            content_enricher(&m, &clash, &Program::empty()),
            Err(PatternError::SchemaMismatch(_))
        ));
    }
}
