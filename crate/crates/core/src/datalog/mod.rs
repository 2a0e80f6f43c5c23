//! Positive Datalog with builtin predicates, evaluated bottom-up.
//!
//! Programs are parsed from text ([`parse_program`]), validated for safety and
//! arity consistency, and compiled once into join plans. [`evaluate`] runs the
//! naive fixpoint: every iteration re-applies every rule against the full
//! current state until nothing new is derived.

mod ast;
mod eval;
mod parser;
mod relation;
mod value;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use ast::{AggregateKind, ArithOp, Atom, Builtin, BuiltinOp, Rule, Term};
pub use eval::{apply_rule, eval_builtin, BuiltinOutcome, Derived, EvalOptions, JoinStrategy};
pub use parser::{parse_program, parse_rules};
pub use relation::{Database, Relation, TableCursor};
pub use value::{Constant, Tuple};

use eval::CompiledRule;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("syntax error at {line}:{col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("rule {rule}: variable `{variable}` is not bound by a positive body atom")]
    SafetyViolation { rule: usize, variable: String },
    #[error("relation `{relation}` used with arity {found}, expected {expected}")]
    ArityMismatch {
        relation: String,
        expected: usize,
        found: usize,
    },
    #[error("rule {rule}: {message}")]
    InvalidRule { rule: usize, message: String },
    #[error("aggregate over `{relation}` depends recursively on its own rule")]
    RecursiveAggregate { relation: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("type error in `{op}`: {detail}")]
    TypeError { op: &'static str, detail: String },
    #[error("aggregate over empty relation `{relation}`")]
    EmptyAggregate { relation: String },
    #[error("arithmetic error: {0}")]
    Arithmetic(String),
    #[error("relation `{relation}` has arity {found}, expected {expected}")]
    ArityMismatch {
        relation: String,
        expected: usize,
        found: usize,
    },
    #[error("unbound variable `{0}`")]
    Unbound(String),
}

/// A validated, compiled set of rules.
///
/// Immutable after construction; share it behind an `Arc` across threads.
#[derive(Clone)]
pub struct Program {
    rules: Vec<Rule>,
    compiled: Vec<CompiledRule>,
    arities: BTreeMap<String, usize>,
    intensional: BTreeSet<Arc<str>>,
    /// Rule indices grouped by aggregate level, evaluated in order.
    levels: Vec<Vec<usize>>,
}

impl Program {
    pub fn new(rules: Vec<Rule>) -> Result<Self, ParseError> {
        let arities = check_arities(&rules)?;
        for (i, r) in rules.iter().enumerate() {
            check_rule(i, r)?;
        }
        let intensional: BTreeSet<Arc<str>> =
            rules.iter().map(|r| Arc::from(r.head.relation.as_str())).collect();
        let levels = aggregate_levels(&rules, &intensional)?;
        let compiled = rules
            .iter()
            .map(|r| CompiledRule::compile(r, &intensional))
            .collect();
        Ok(Self {
            rules,
            compiled,
            arities,
            intensional,
            levels,
        })
    }

    pub fn empty() -> Self {
        Self::new(Vec::new()).expect("empty program is valid")
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn arity_of(&self, relation: &str) -> Option<usize> {
        self.arities.get(relation).copied()
    }

    pub fn is_intensional(&self, relation: &str) -> bool {
        self.intensional.contains(relation)
    }

    pub fn intensional(&self) -> impl Iterator<Item = &str> + '_ {
        self.intensional.iter().map(|s| &**s)
    }

    /// Relations read by some rule body but derived by none.
    pub fn extensional(&self) -> BTreeSet<&str> {
        self.rules
            .iter()
            .flat_map(|r| r.body.iter().map(|a| a.relation.as_str()))
            .filter(|r| !self.is_intensional(r))
            .collect()
    }

    /// Relations named in any rule body or aggregate.
    pub fn body_relations(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        for r in &self.rules {
            out.extend(r.body.iter().map(|a| a.relation.as_str()));
            for b in &r.builtins {
                for t in &b.operands {
                    collect_aggregate_relations(t, &mut out);
                }
            }
        }
        out
    }

    /// Concatenation of two programs.
    pub fn merged(&self, other: &Program) -> Result<Program, ParseError> {
        let mut rules = self.rules.clone();
        rules.extend(other.rules.iter().cloned());
        Program::new(rules)
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rules {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

impl PartialEq for Program {
    fn eq(&self, other: &Self) -> bool {
        self.rules == other.rules
    }
}

impl fmt::Debug for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Program({} rules)", self.rules.len())
    }
}

fn collect_aggregate_relations<'a>(t: &'a Term, out: &mut BTreeSet<&'a str>) {
    match t {
        Term::Aggregate { relation, .. } => {
            out.insert(relation);
        }
        Term::Expr(_, l, r) => {
            collect_aggregate_relations(l, out);
            collect_aggregate_relations(r, out);
        }
        _ => {}
    }
}

fn check_arities(rules: &[Rule]) -> Result<BTreeMap<String, usize>, ParseError> {
    let mut arities: BTreeMap<String, usize> = BTreeMap::new();
    let mut note = |rel: &str, n: usize| -> Result<(), ParseError> {
        match arities.get(rel) {
            Some(&m) if m != n => Err(ParseError::ArityMismatch {
                relation: rel.to_string(),
                expected: m,
                found: n,
            }),
            Some(_) => Ok(()),
            None => {
                arities.insert(rel.to_string(), n);
                Ok(())
            }
        }
    };
    fn aggs<'a>(t: &'a Term, out: &mut Vec<(&'a str, usize)>) {
        match t {
            Term::Aggregate {
                relation,
                arity: Some(n),
                ..
            } => out.push((relation, *n)),
            Term::Expr(_, l, r) => {
                aggs(l, out);
                aggs(r, out);
            }
            _ => {}
        }
    }
    for r in rules {
        note(&r.head.relation, r.head.arity())?;
        for a in &r.body {
            note(&a.relation, a.arity())?;
        }
        let mut found = Vec::new();
        for b in &r.builtins {
            for t in &b.operands {
                aggs(t, &mut found);
            }
        }
        for (rel, n) in found {
            note(rel, n)?;
        }
    }
    Ok(arities)
}

fn check_rule(index: usize, rule: &Rule) -> Result<(), ParseError> {
    let invalid = |message: String| ParseError::InvalidRule {
        rule: index,
        message,
    };
    for a in &rule.body {
        if let Some(t) = a.terms.iter().find(|t| !t.is_simple()) {
            return Err(invalid(format!("`{t}` is not allowed inside atom `{}`", a.relation)));
        }
    }
    if let Some(t) = rule.head.terms.iter().find(|t| !t.is_simple()) {
        return Err(invalid(format!("`{t}` is not allowed in a rule head")));
    }
    let mut bound: HashSet<&str> = rule
        .body
        .iter()
        .flat_map(|a| a.terms.iter())
        .filter_map(|t| match t {
            Term::Var(v) => Some(v.as_str()),
            _ => None,
        })
        .collect();
    for b in &rule.builtins {
        if b.operands.iter().any(|t| matches!(t, Term::Anonymous)) {
            return Err(invalid(format!("anonymous term in builtin `{b}`")));
        }
        if let Some(v) = b.assigned_var() {
            if bound.contains(v) {
                return Err(invalid(format!("assign target `{v}` is already bound")));
            }
        }
    }
    // assignments bind their target once their inputs are bound
    let mut assigned: HashSet<&str> = HashSet::new();
    loop {
        let mut changed = false;
        for b in &rule.builtins {
            if let Some(v) = b.assigned_var() {
                if !bound.contains(v) && b.input_vars().iter().all(|x| bound.contains(x)) {
                    if !assigned.insert(v) {
                        return Err(invalid(format!("`{v}` is assigned twice")));
                    }
                    bound.insert(v);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let unsafe_var = rule
        .head
        .terms
        .iter()
        .flat_map(|t| t.variables())
        .chain(rule.builtins.iter().flat_map(|b| b.input_vars()))
        .chain(rule.builtins.iter().filter_map(|b| b.assigned_var()))
        .find(|v| !bound.contains(v));
    match unsafe_var {
        Some(v) => Err(ParseError::SafetyViolation {
            rule: index,
            variable: v.to_string(),
        }),
        None => Ok(()),
    }
}

/// Groups rules so that every aggregate reads a relation already at fixpoint.
fn aggregate_levels(
    rules: &[Rule],
    intensional: &BTreeSet<Arc<str>>,
) -> Result<Vec<Vec<usize>>, ParseError> {
    let mut level: BTreeMap<&str, usize> = intensional.iter().map(|r| (&**r, 0)).collect();
    let limit = intensional.len() + 1;
    loop {
        let mut changed = false;
        for r in rules {
            let mut need = 0;
            for a in &r.body {
                if let Some(&l) = level.get(a.relation.as_str()) {
                    need = need.max(l);
                }
            }
            let mut aggs = BTreeSet::new();
            for b in &r.builtins {
                for t in &b.operands {
                    collect_aggregate_relations(t, &mut aggs);
                }
            }
            for rel in aggs {
                if let Some(&l) = level.get(rel) {
                    need = need.max(l + 1);
                    if l + 1 > limit {
                        return Err(ParseError::RecursiveAggregate {
                            relation: rel.to_string(),
                        });
                    }
                }
            }
            let head = level.get_mut(r.head.relation.as_str()).unwrap();
            if need > *head {
                *head = need;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let max = level.values().copied().max().unwrap_or(0);
    let mut levels = vec![Vec::new(); if rules.is_empty() { 0 } else { max + 1 }];
    for (i, r) in rules.iter().enumerate() {
        levels[level[r.head.relation.as_str()]].push(i);
    }
    levels.retain(|l| !l.is_empty());
    Ok(levels)
}

/// Evaluates `program` over `db` to its least fixpoint.
///
/// The returned database holds every input relation unchanged plus every
/// intensional relation. An input relation that shares its name with a rule
/// head seeds that relation.
pub fn evaluate(program: &Program, db: &Database) -> Result<Database, EvalError> {
    evaluate_with(program, db, &EvalOptions::default())
}

pub fn evaluate_with(
    program: &Program,
    db: &Database,
    opts: &EvalOptions,
) -> Result<Database, EvalError> {
    let derived = program.derive(db, opts)?;
    let mut out = db.clone();
    for rel in derived.into_relations() {
        out.insert_relation(rel);
    }
    Ok(out)
}
