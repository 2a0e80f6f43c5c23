//! Integration patterns whose content logic is a Datalog program.
//!
//! Every pattern is a thin system-level wrapper: the program decides, the
//! wrapper turns the derived relation into a routing decision, a new body or a
//! set of messages. Messages are never mutated in place.

mod aggregator;
pub mod baseline;
mod routing;
mod transform;

use std::collections::BTreeSet;
use std::sync::Arc;

use rustc_hash::{FxHashMap, FxHashSet};
use thiserror::Error;

use crate::cdm::{Message, META};
use crate::datalog::{
    parse_program, Database, EvalError, EvalOptions, ParseError, Program, Relation,
    Term,
};

pub use aggregator::{
    aggregator_complete, aggregator_correlate, aggregator_strategy, correlation_key,
    AggregateCollection, Aggregator, AggregatorConfig, CorrelationKey, COUNT_RELATION,
};
pub use routing::{
    content_based_router, message_filter, multicast, recipient_list, splitter, ChannelTable,
    RecipientOutcome, Router, SPLIT_RELATION,
};
pub use transform::{content_enricher, content_filter, message_translator, Enricher, Translator};

#[derive(Debug, Error)]
pub enum PatternError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("goal relation `{0}` is not derived by the program")]
    InvalidGoal(String),
    #[error("no condition matched and no default channel is configured")]
    NoRoute,
    #[error("none of {unresolved} recipient keys has a registered channel")]
    NoRecipientResolved { unresolved: usize },
    #[error("correlation derived {found} keys, expected exactly 1")]
    AmbiguousCorrelation { found: usize },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// True iff the derived relation holds at least one fact.
pub fn bool_rc(rel: &Relation) -> bool {
    !rel.is_empty()
}

/// A program plus the relation whose non-emptiness is the decision.
#[derive(Clone, Debug)]
pub struct RoutingCondition {
    program: Arc<Program>,
    goal: String,
    output: Option<String>,
    inputs: Vec<String>,
    record_scoped: bool,
    early_exit: bool,
}

impl RoutingCondition {
    pub fn new(program: Arc<Program>, goal: &str) -> Result<Self, PatternError> {
        if !program.is_intensional(goal) {
            return Err(PatternError::InvalidGoal(goal.to_string()));
        }
        let inputs = program.body_relations().iter().map(|s| s.to_string()).collect();
        let record_scoped = record_scoped(&program);
        Ok(Self {
            program,
            goal: goal.to_string(),
            output: None,
            inputs,
            record_scoped,
            early_exit: false,
        })
    }

    pub fn parse(text: &str, goal: &str) -> Result<Self, PatternError> {
        Self::new(Arc::new(parse_program(text)?), goal)
    }

    /// Renames the goal relation in produced bodies.
    pub fn with_output(mut self, name: &str) -> Self {
        self.output = Some(name.to_string());
        self
    }

    /// Stops evaluation at the first goal fact.
    pub fn with_early_exit(mut self, on: bool) -> Self {
        self.early_exit = on;
        self
    }

    pub fn program(&self) -> &Arc<Program> {
        &self.program
    }

    pub fn goal(&self) -> &str {
        &self.goal
    }

    pub fn output_name(&self) -> &str {
        self.output.as_deref().unwrap_or(&self.goal)
    }

    /// Whether every derived fact belongs to exactly one record, so a bulk
    /// body can be evaluated once instead of once per record.
    pub fn is_record_scoped(&self) -> bool {
        self.record_scoped
    }

    /// The goal relation derived from the message body (and header relations
    /// the body lacks).
    pub fn evaluate(&self, msg: &Message) -> Result<Relation, PatternError> {
        self.evaluate_with(msg, self.early_exit)
    }

    fn evaluate_with(&self, msg: &Message, early_exit: bool) -> Result<Relation, PatternError> {
        let opts = if early_exit {
            EvalOptions::exists(&self.goal)
        } else {
            EvalOptions::default()
        };
        let rel = match &msg.support_rules {
            Some(extra) => {
                let merged = self.program.merged(extra)?;
                merged.query(&self.input(msg), &self.goal, &opts)?
            }
            None => self.program.query(&self.input(msg), &self.goal, &opts)?,
        };
        Ok(match &self.output {
            Some(name) => rel.renamed(name),
            None => rel,
        })
    }

    pub fn holds(&self, msg: &Message) -> Result<bool, PatternError> {
        Ok(bool_rc(&self.evaluate(msg)?))
    }

    /// Records of a bulk message that satisfy the condition, in record order.
    pub fn matching_records(&self, msg: &Message) -> Result<Vec<Arc<str>>, PatternError> {
        self.matching_among(msg, &msg.record_ids())
    }

    /// [`Self::matching_records`] with the record ids already at hand.
    pub fn matching_among(&self, msg: &Message, records: &[Arc<str>]) -> Result<Vec<Arc<str>>, PatternError> {
        if records.len() <= 1 {
            return Ok(if self.holds(msg)? { records.to_vec() } else { Vec::new() });
        }
        if self.record_scoped {
            let derived = self.evaluate_with(msg, false)?;
            let hits: FxHashSet<&str> = derived.iter().filter_map(|t| t[0].as_str()).collect();
            return Ok(records.iter().filter(|r| hits.contains(&***r)).cloned().collect());
        }
        let mut out = Vec::new();
        for part in split_records(msg) {
            if self.holds(&part)? {
                out.push(part.id.clone());
            }
        }
        Ok(out)
    }

    fn input<'a>(&self, msg: &'a Message) -> std::borrow::Cow<'a, Database> {
        let missing = self
            .inputs
            .iter()
            .any(|r| !msg.body.contains(r) && msg.header.contains(r));
        if !missing {
            return std::borrow::Cow::Borrowed(&msg.body);
        }
        let mut db = msg.body.clone();
        for r in &self.inputs {
            if !db.contains(r) {
                if let Some(h) = msg.header.shared(r) {
                    db.insert_shared(h.clone());
                }
            }
        }
        std::borrow::Cow::Owned(db)
    }
}

fn has_aggregate(t: &Term) -> bool {
    match t {
        Term::Aggregate { .. } => true,
        Term::Expr(_, l, r) => has_aggregate(l) || has_aggregate(r),
        _ => false,
    }
}

/// Every rule ties head position 0 and every body atom's position 0 to one
/// variable, and nothing aggregates across facts.
fn record_scoped(program: &Program) -> bool {
    program.rules().iter().all(|r| {
        let Some(Term::Var(id)) = r.head.terms.first() else {
            return false;
        };
        !r.body.is_empty()
            && r.body.iter().all(|a| a.terms.first() == Some(&Term::Var(id.clone())))
            && !r.builtins.iter().any(|b| b.operands.iter().any(has_aggregate))
    })
}

/// Splits `msg` into one message per group of record ids with a single pass
/// over its facts. Facts of records outside every group are dropped; body
/// relations left empty that a part's header does not mention are removed. A
/// part holding one record takes that record's id. Attachments are copied.
pub fn partition(msg: &Message, groups: &[Vec<Arc<str>>]) -> Vec<Message> {
    let mut owner: FxHashMap<&str, usize> =
        FxHashMap::with_capacity_and_hasher(groups.iter().map(Vec::len).sum(), Default::default());
    for (g, ids) in groups.iter().enumerate() {
        for id in ids {
            owner.insert(id, g);
        }
    }
    let split = |db: &Database| {
        let mut parts = vec![Database::new(); groups.len()];
        for rel in db.relations() {
            let mut rels: Vec<Relation> = groups
                .iter()
                .map(|ids| Relation::with_capacity(rel.shared_name().clone(), rel.arity(), ids.len().min(rel.len())))
                .collect();
            for t in rel.shared_tuples() {
                if let Some(&g) = t[0].as_str().and_then(|s| owner.get(s)) {
                    rels[g].insert(t.clone()).expect("same arity");
                }
            }
            for (part, r) in parts.iter_mut().zip(rels) {
                part.insert_relation(r);
            }
        }
        parts
    };
    let bodies = split(&msg.body);
    let headers = split(&msg.header);
    bodies
        .into_iter()
        .zip(headers)
        .zip(groups)
        .map(|((mut body, header), ids)| {
            let emptied = body.relations().any(Relation::is_empty);
            if let Some(meta) = header.relation(META).filter(|_| emptied) {
                let named: BTreeSet<&str> = meta.iter().filter_map(|t| t[1].as_str()).collect();
                let stale: Vec<String> = body
                    .relations()
                    .filter(|r| r.is_empty() && !named.contains(r.name()))
                    .map(|r| r.name().to_string())
                    .collect();
                for n in stale {
                    body.remove(&n);
                }
            }
            Message {
                id: if ids.len() == 1 { ids[0].clone() } else { msg.id.clone() },
                header,
                body,
                support_rules: msg.support_rules.clone(),
                attachments: msg.attachments.clone(),
            }
        })
        .collect()
}

/// The part of `msg` belonging to `records`.
pub fn restrict(msg: &Message, records: &[Arc<str>]) -> Message {
    partition(msg, &[records.to_vec()]).remove(0)
}

/// One message per record of a bulk message.
pub fn split_records(msg: &Message) -> Vec<Message> {
    let records = msg.record_ids();
    if records.len() <= 1 {
        return vec![msg.clone()];
    }
    let groups: Vec<Vec<Arc<str>>> = records.into_iter().map(|r| vec![r]).collect();
    partition(msg, &groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdm::bulk_assemble;
    use crate::datalog::Constant;
    use crate::tuple;

    fn order(id: &str, price: f64, prio: &str) -> Message {
        let mut body = Database::new();
        body.add_fact("order", tuple![id, "order", 1i64, 2i64, price, prio, 0i64])
            .unwrap();
        Message::single(id, body)
    }

    #[test]
    fn bool_rc_is_non_emptiness() {
        let mut r = Relation::new("x", 4);
        assert!(!bool_rc(&r));
        r.insert(tuple!["m1", Constant::Null, 150000.0, Constant::Null])
            .unwrap();
        assert!(bool_rc(&r));
    }

    #[test]
    fn goal_must_be_derived() {
        assert!(matches!(
            RoutingCondition::parse("a(x) :- b(x).", "b"),
            Err(PatternError::InvalidGoal(_))
        ));
    }

    #[test]
    fn record_scope_detection() {
        let scoped = RoutingCondition::parse("hit(id) :- order(id, t, a), >(a, 1).", "hit").unwrap();
        assert!(scoped.is_record_scoped());
        let join = RoutingCondition::parse("hit(k) :- c(i, k), n(j, k).", "hit").unwrap();
        assert!(!join.is_record_scoped());
        let agg = RoutingCondition::parse(
            "hit(id) :- o(id, a), assign(m, max(o(x, y), y)), =(a, m).",
            "hit",
        )
        .unwrap();
        assert!(!agg.is_record_scoped());
    }

    #[test]
    fn matching_records_agree_for_both_strategies() {
        let msgs = vec![
            order("a", 5.0, "x"),
            order("b", 50.0, "x"),
            order("c", 500.0, "x"),
        ];
        let bulk = bulk_assemble(msgs, 3).unwrap().remove(0).into_message();
        let scoped = RoutingCondition::parse(
            "hit(id) :- order(id,t,k,c,p,r,s), >(p, 10.0).",
            "hit",
        )
        .unwrap();
        let unscoped = RoutingCondition::parse(
            "hit(p) :- order(id,t,k,c,p,r,s), >(p, 10.0).",
            "hit",
        )
        .unwrap();
        let want: Vec<Arc<str>> = vec![Arc::from("b"), Arc::from("c")];
        assert_eq!(scoped.matching_records(&bulk).unwrap(), want);
        assert_eq!(scoped.with_early_exit(true).matching_records(&bulk).unwrap(), want);
        assert_eq!(unscoped.matching_records(&bulk).unwrap(), want);
    }

    #[test]
    fn header_relations_are_visible() {
        let c = RoutingCondition::parse("rel(r) :- meta(id, r).", "rel").unwrap();
        let m = order("a", 1.0, "x");
        assert_eq!(c.evaluate(&m).unwrap().len(), 1);
    }

    #[test]
    fn support_rules_extend_the_program() {
        let c = RoutingCondition::parse("hit(id) :- cheap(id).", "hit").unwrap();
        let support = parse_program("cheap(id) :- order(id,t,k,c,p,r,s), <(p, 10.0).").unwrap();
        let m = order("a", 1.0, "x").with_support_rules(Arc::new(support));
        assert!(c.holds(&m).unwrap());
    }

    #[test]
    fn restrict_keeps_only_named_records() {
        let bulk = bulk_assemble(vec![order("a", 1.0, "x"), order("b", 2.0, "y")], 2)
            .unwrap()
            .remove(0)
            .into_message();
        let parts = split_records(&bulk);
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[1], order("b", 2.0, "y"));
    }
}
