//! Rule compilation and naive bottom-up evaluation.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::BuildHasherDefault;
use std::sync::Arc;

use rustc_hash::FxHasher;

use super::ast::{AggregateKind, ArithOp, Builtin, BuiltinOp, Rule, Term};
use super::relation::{Database, Relation, TableCursor};
use super::value::{Constant, Tuple};
use super::{EvalError, Program};

/// Relations at or below this size are scanned rather than indexed.
const SCAN_THRESHOLD: usize = 8;

type Index = HashMap<Vec<Constant>, Vec<u32>, BuildHasherDefault<FxHasher>>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum JoinStrategy {
    /// Probe a hash index on the positions bound by earlier atoms.
    #[default]
    Hash,
    /// Scan every tuple of every atom and compare.
    NestedLoop,
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    pub join: JoinStrategy,
    /// Stop as soon as this relation holds one tuple. The result is then only
    /// good for an emptiness test of that relation.
    pub exists: Option<String>,
}

impl EvalOptions {
    pub fn exists(goal: &str) -> Self {
        Self {
            exists: Some(goal.to_string()),
            ..Self::default()
        }
    }

    pub fn with_join(mut self, join: JoinStrategy) -> Self {
        self.join = join;
        self
    }
}

#[derive(Clone, Debug)]
enum KeySrc {
    Slot(usize),
    Const(Constant),
}

#[derive(Clone, Debug)]
enum HeadTerm {
    Slot(usize),
    Const(Constant),
    Null,
}

#[derive(Clone, Debug)]
enum CExpr {
    Slot(usize),
    Const(Constant),
    Bin(ArithOp, Box<CExpr>, Box<CExpr>),
    Agg(usize),
}

#[derive(Clone, Debug)]
struct CBuiltin {
    op: BuiltinOp,
    lhs: CExpr,
    rhs: CExpr,
    target: Option<usize>,
}

#[derive(Clone, Debug)]
struct Step {
    relation: Arc<str>,
    arity: usize,
    keys: Vec<(usize, KeySrc)>,
    binds: Vec<(usize, usize)>,
    /// (position, earlier position) pairs for variables repeated in one atom
    same: Vec<(usize, usize)>,
    builtins: Vec<usize>,
}

#[derive(Clone, Debug)]
struct AggSpec {
    kind: AggregateKind,
    relation: Arc<str>,
    position: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct CompiledRule {
    head_rel: Arc<str>,
    head: Vec<HeadTerm>,
    pre: Vec<usize>,
    steps: Vec<Step>,
    builtins: Vec<CBuiltin>,
    aggs: Vec<AggSpec>,
    nslots: usize,
}

struct SlotMap {
    names: HashMap<String, usize>,
}

impl SlotMap {
    fn slot(&mut self, v: &str) -> usize {
        let n = self.names.len();
        *self.names.entry(v.to_string()).or_insert(n)
    }
}

fn compile_expr(t: &Term, slots: &mut SlotMap, aggs: &mut Vec<AggSpec>) -> CExpr {
    match t {
        Term::Var(v) => CExpr::Slot(slots.slot(v)),
        Term::Const(c) => CExpr::Const(c.clone()),
        Term::Anonymous => CExpr::Const(Constant::Null),
        Term::Expr(op, l, r) => CExpr::Bin(
            *op,
            Box::new(compile_expr(l, slots, aggs)),
            Box::new(compile_expr(r, slots, aggs)),
        ),
        Term::Aggregate {
            kind,
            relation,
            position,
            ..
        } => {
            aggs.push(AggSpec {
                kind: *kind,
                relation: Arc::from(relation.as_str()),
                position: *position,
            });
            CExpr::Agg(aggs.len() - 1)
        }
    }
}

fn expr_slots(e: &CExpr, out: &mut Vec<usize>) {
    match e {
        CExpr::Slot(s) => out.push(*s),
        CExpr::Bin(_, l, r) => {
            expr_slots(l, out);
            expr_slots(r, out);
        }
        _ => {}
    }
}

impl CompiledRule {
    /// Compiles a rule that has already passed the safety check.
    pub(crate) fn compile(rule: &Rule, _intensional: &BTreeSet<Arc<str>>) -> Self {
        let mut slots = SlotMap {
            names: HashMap::new(),
        };
        for a in &rule.body {
            for t in &a.terms {
                if let Term::Var(v) = t {
                    slots.slot(v);
                }
            }
        }
        let mut aggs = Vec::new();
        let builtins: Vec<CBuiltin> = rule
            .builtins
            .iter()
            .map(|b| CBuiltin {
                op: b.op,
                target: b.assigned_var().map(|v| slots.slot(v)),
                lhs: compile_expr(&b.operands[0], &mut slots, &mut aggs),
                rhs: compile_expr(&b.operands[1], &mut slots, &mut aggs),
            })
            .collect();
        let inputs: Vec<Vec<usize>> = builtins
            .iter()
            .map(|b| {
                let mut v = Vec::new();
                if b.target.is_none() {
                    expr_slots(&b.lhs, &mut v);
                }
                expr_slots(&b.rhs, &mut v);
                v
            })
            .collect();

        let mut bound = vec![false; slots.names.len()];
        let mut scheduled = vec![false; builtins.len()];
        let schedule = |bound: &mut Vec<bool>, scheduled: &mut Vec<bool>| -> Vec<usize> {
            let mut out = Vec::new();
            loop {
                let mut progress = false;
                for (i, b) in builtins.iter().enumerate() {
                    if !scheduled[i] && inputs[i].iter().all(|&s| bound[s]) {
                        scheduled[i] = true;
                        if let Some(t) = b.target {
                            bound[t] = true;
                        }
                        out.push(i);
                        progress = true;
                    }
                }
                if !progress {
                    return out;
                }
            }
        };

        let pre = schedule(&mut bound, &mut scheduled);
        let mut steps = Vec::with_capacity(rule.body.len());
        for atom in &rule.body {
            let mut keys = Vec::new();
            let mut binds = Vec::new();
            let mut same = Vec::new();
            let mut first_in_atom: HashMap<usize, usize> = HashMap::new();
            for (p, t) in atom.terms.iter().enumerate() {
                match t {
                    Term::Const(c) => keys.push((p, KeySrc::Const(c.clone()))),
                    Term::Var(v) => {
                        let s = slots.names[v.as_str()];
                        if bound[s] {
                            keys.push((p, KeySrc::Slot(s)));
                        } else if let Some(&q) = first_in_atom.get(&s) {
                            same.push((p, q));
                        } else {
                            first_in_atom.insert(s, p);
                            binds.push((p, s));
                        }
                    }
                    _ => {}
                }
            }
            // `=(a,b)` with `a` already bound and `b` bound here becomes a key
            for &(p, s) in &binds {
                let pushed = builtins.iter().enumerate().find_map(|(i, b)| {
                    if scheduled[i] || b.op != BuiltinOp::Eq {
                        return None;
                    }
                    match (&b.lhs, &b.rhs) {
                        (CExpr::Slot(x), CExpr::Slot(y)) if *x == s && bound[*y] => Some((i, *y)),
                        (CExpr::Slot(x), CExpr::Slot(y)) if *y == s && bound[*x] => Some((i, *x)),
                        _ => None,
                    }
                });
                if let Some((i, other)) = pushed {
                    scheduled[i] = true;
                    keys.push((p, KeySrc::Slot(other)));
                }
            }
            for &(_, s) in &binds {
                bound[s] = true;
            }
            let after = schedule(&mut bound, &mut scheduled);
            steps.push(Step {
                relation: Arc::from(atom.relation.as_str()),
                arity: atom.arity(),
                keys,
                binds,
                same,
                builtins: after,
            });
        }
        let leftover: Vec<usize> = (0..builtins.len()).filter(|&i| !scheduled[i]).collect();
        if !leftover.is_empty() {
            // unreachable for rules that passed the safety check; evaluating
            // them last reports the unbound variable at runtime
            match steps.last_mut() {
                Some(s) => s.builtins.extend(leftover),
                None => {
                    let mut pre = pre;
                    pre.extend(leftover);
                    return Self::finish(rule, slots, pre, steps, builtins, aggs);
                }
            }
        }
        Self::finish(rule, slots, pre, steps, builtins, aggs)
    }

    fn finish(
        rule: &Rule,
        mut slots: SlotMap,
        pre: Vec<usize>,
        steps: Vec<Step>,
        builtins: Vec<CBuiltin>,
        aggs: Vec<AggSpec>,
    ) -> Self {
        let head = rule
            .head
            .terms
            .iter()
            .map(|t| match t {
                Term::Var(v) => HeadTerm::Slot(slots.slot(v)),
                Term::Const(c) => HeadTerm::Const(c.clone()),
                _ => HeadTerm::Null,
            })
            .collect();
        Self {
            head_rel: Arc::from(rule.head.relation.as_str()),
            head,
            pre,
            steps,
            builtins,
            aggs,
            nslots: slots.names.len(),
        }
    }

    pub(crate) fn head_relation(&self) -> &Arc<str> {
        &self.head_rel
    }

    fn head_arity(&self) -> usize {
        self.head.len()
    }
}

/// Resolves relation names during one rule application.
trait Lookup {
    fn get(&self, name: &str) -> Option<&Relation>;
}

struct Layered<'a> {
    idb: &'a BTreeMap<Arc<str>, Relation>,
    db: &'a Database,
}

impl Lookup for Layered<'_> {
    fn get(&self, name: &str) -> Option<&Relation> {
        self.idb.get(name).or_else(|| self.db.relation(name))
    }
}

impl Lookup for Database {
    fn get(&self, name: &str) -> Option<&Relation> {
        self.relation(name)
    }
}

static NULL: Constant = Constant::Null;

/// Bound values borrow from the tuples they came from; only assignments own.
struct State<'a> {
    bindings: Vec<Cow<'a, Constant>>,
    aggs: Vec<Option<Constant>>,
    key: Vec<Constant>,
}

struct Application<'r, 'a, L: Lookup> {
    rule: &'r CompiledRule,
    lookup: &'a L,
    rels: Vec<Option<&'a Relation>>,
    indexes: Vec<Option<Index>>,
}

impl<'r, 'a, L: Lookup> Application<'r, 'a, L> {
    fn new(rule: &'r CompiledRule, lookup: &'a L, join: JoinStrategy) -> Self {
        let rels: Vec<Option<&Relation>> = rule.steps.iter().map(|s| lookup.get(&s.relation)).collect();
        let indexes = rule
            .steps
            .iter()
            .zip(&rels)
            .map(|(step, rel)| match rel {
                Some(rel)
                    if join == JoinStrategy::Hash
                        && !step.keys.is_empty()
                        && rel.len() > SCAN_THRESHOLD =>
                {
                    let mut idx = Index::default();
                    for (i, t) in rel.iter().enumerate() {
                        let key: Vec<Constant> = step.keys.iter().map(|(p, _)| t[*p].clone()).collect();
                        idx.entry(key).or_default().push(i as u32);
                    }
                    Some(idx)
                }
                _ => None,
            })
            .collect();
        Self {
            rule,
            lookup,
            rels,
            indexes,
        }
    }

    fn check_arities(&self) -> Result<(), EvalError> {
        for (step, rel) in self.rule.steps.iter().zip(&self.rels) {
            if let Some(rel) = rel {
                if rel.arity() != step.arity {
                    return Err(EvalError::ArityMismatch {
                        relation: step.relation.to_string(),
                        expected: step.arity,
                        found: rel.arity(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Runs the rule, handing each head tuple to `emit` until it returns false.
    fn run(&self, emit: &mut dyn FnMut(Tuple) -> bool) -> Result<(), EvalError> {
        self.check_arities()?;
        let mut st = State {
            bindings: vec![Cow::Borrowed(&NULL); self.rule.nslots],
            aggs: vec![None; self.rule.aggs.len()],
            key: Vec::new(),
        };
        for &b in &self.rule.pre {
            if !self.builtin(b, &mut st)? {
                return Ok(());
            }
        }
        self.step(0, &mut st, emit).map(|_| ())
    }

    fn step(
        &self,
        i: usize,
        st: &mut State<'a>,
        emit: &mut dyn FnMut(Tuple) -> bool,
    ) -> Result<bool, EvalError> {
        if i == self.rule.steps.len() {
            let t: Tuple = self
                .rule
                .head
                .iter()
                .map(|h| match h {
                    HeadTerm::Slot(s) => (*st.bindings[*s]).clone(),
                    HeadTerm::Const(c) => c.clone(),
                    HeadTerm::Null => Constant::Null,
                })
                .collect();
            return Ok(emit(t));
        }
        let step = &self.rule.steps[i];
        let Some(rel) = self.rels[i] else {
            return Ok(true);
        };
        if let Some(index) = &self.indexes[i] {
            st.key.clear();
            for (_, src) in &step.keys {
                let v = match src {
                    KeySrc::Slot(s) => (*st.bindings[*s]).clone(),
                    KeySrc::Const(c) => c.clone(),
                };
                st.key.push(v);
            }
            let Some(hits) = index.get(st.key.as_slice()) else {
                return Ok(true);
            };
            for &ti in hits {
                let t = rel.get(ti as usize).expect("index in range");
                if !self.visit(i, t, st, emit)? {
                    return Ok(false);
                }
            }
        } else {
            let mut cursor = TableCursor::new(rel);
            cursor.open();
            while let Some(t) = cursor.next_tuple() {
                let keyed = step.keys.iter().all(|(p, src)| match src {
                    KeySrc::Slot(s) => t[*p] == *st.bindings[*s],
                    KeySrc::Const(c) => t[*p] == *c,
                });
                if keyed && !self.visit(i, t, st, emit)? {
                    cursor.close();
                    return Ok(false);
                }
            }
            cursor.close();
        }
        Ok(true)
    }

    fn visit(
        &self,
        i: usize,
        t: &'a [Constant],
        st: &mut State<'a>,
        emit: &mut dyn FnMut(Tuple) -> bool,
    ) -> Result<bool, EvalError> {
        let step = &self.rule.steps[i];
        if !step.same.iter().all(|&(p, q)| t[p] == t[q]) {
            return Ok(true);
        }
        for &(p, s) in &step.binds {
            st.bindings[s] = Cow::Borrowed(&t[p]);
        }
        for &b in &step.builtins {
            if !self.builtin(b, st)? {
                return Ok(true);
            }
        }
        self.step(i + 1, st, emit)
    }

    fn builtin(&self, index: usize, st: &mut State<'a>) -> Result<bool, EvalError> {
        let b = &self.rule.builtins[index];
        if let Some(target) = b.target {
            let v = self.expr(&b.rhs, st)?;
            st.bindings[target] = Cow::Owned(v);
            return Ok(true);
        }
        if let (Some(l), Some(r)) = (operand(&b.lhs, st), operand(&b.rhs, st)) {
            return test(b.op, l, r);
        }
        let l = self.expr(&b.lhs, st)?;
        let r = self.expr(&b.rhs, st)?;
        test(b.op, &l, &r)
    }

    fn expr(&self, e: &CExpr, st: &mut State<'a>) -> Result<Constant, EvalError> {
        Ok(match e {
            CExpr::Slot(s) => (*st.bindings[*s]).clone(),
            CExpr::Const(c) => c.clone(),
            CExpr::Bin(op, l, r) => {
                let l = self.expr(l, st)?;
                let r = self.expr(r, st)?;
                arith(*op, &l, &r)?
            }
            CExpr::Agg(i) => {
                if let Some(v) = &st.aggs[*i] {
                    return Ok(v.clone());
                }
                let spec = &self.rule.aggs[*i];
                let v = aggregate(spec.kind, &spec.relation, spec.position, self.lookup.get(&spec.relation))?;
                st.aggs[*i] = Some(v.clone());
                v
            }
        })
    }
}

/// A slot or constant, read without cloning.
fn operand<'a>(e: &'a CExpr, st: &'a State<'_>) -> Option<&'a Constant> {
    match e {
        CExpr::Slot(s) => Some(&*st.bindings[*s]),
        CExpr::Const(c) => Some(c),
        _ => None,
    }
}

fn type_error(op: &'static str, l: &Constant, r: &Constant) -> EvalError {
    EvalError::TypeError {
        op,
        detail: format!("cannot apply to {} `{l}` and {} `{r}`", l.type_name(), r.type_name()),
    }
}

fn test<'a>(op: BuiltinOp, l: &'a Constant, r: &'a Constant) -> Result<bool, EvalError> {
    use std::cmp::Ordering::*;
    let numeric = |l: &Constant, r: &Constant| -> Result<std::cmp::Ordering, EvalError> {
        match (l, r) {
            (Constant::Int(a), Constant::Int(b)) => Ok(a.cmp(b)),
            _ => match (l.as_f64(), r.as_f64()) {
                (Some(a), Some(b)) => a.partial_cmp(&b).ok_or_else(|| type_error(op.name(), l, r)),
                _ => Err(type_error(op.name(), l, r)),
            },
        }
    };
    let strings = |l: &'a Constant, r: &'a Constant| -> Result<(&'a str, &'a str), EvalError> {
        match (l, r) {
            (Constant::Str(a), Constant::Str(b)) => Ok((&**a, &**b)),
            _ => Err(type_error(op.name(), l, r)),
        }
    };
    Ok(match op {
        BuiltinOp::Lt => numeric(l, r)? == Less,
        BuiltinOp::Le => numeric(l, r)? != Greater,
        BuiltinOp::Gt => numeric(l, r)? == Greater,
        BuiltinOp::Ge => numeric(l, r)? != Less,
        BuiltinOp::Eq => l == r,
        BuiltinOp::Ne => l != r,
        BuiltinOp::Equals => {
            let (a, b) = strings(l, r)?;
            a == b
        }
        BuiltinOp::Contains => {
            let (a, b) = strings(l, r)?;
            a.contains(b)
        }
        BuiltinOp::StartsWith => {
            let (a, b) = strings(l, r)?;
            a.starts_with(b)
        }
        BuiltinOp::Assign => unreachable!("assign is not a test"),
    })
}

fn arith(op: ArithOp, l: &Constant, r: &Constant) -> Result<Constant, EvalError> {
    let overflow = || EvalError::Arithmetic(format!("integer overflow in `{}`", op.symbol()));
    if let (Constant::Int(a), Constant::Int(b)) = (l, r) {
        let v = match op {
            ArithOp::Add => a.checked_add(*b).ok_or_else(overflow)?,
            ArithOp::Sub => a.checked_sub(*b).ok_or_else(overflow)?,
            ArithOp::Mul => a.checked_mul(*b).ok_or_else(overflow)?,
            ArithOp::Div => {
                if *b == 0 {
                    return Err(EvalError::Arithmetic("division by zero".into()));
                }
                return Ok(Constant::Float(*a as f64 / *b as f64));
            }
        };
        return Ok(Constant::Int(v));
    }
    let (Some(a), Some(b)) = (l.as_f64(), r.as_f64()) else {
        return Err(type_error(op.symbol(), l, r));
    };
    Ok(Constant::Float(match op {
        ArithOp::Add => a + b,
        ArithOp::Sub => a - b,
        ArithOp::Mul => a * b,
        ArithOp::Div => {
            if b == 0.0 {
                return Err(EvalError::Arithmetic("division by zero".into()));
            }
            a / b
        }
    }))
}

fn aggregate(
    kind: AggregateKind,
    name: &str,
    position: usize,
    rel: Option<&Relation>,
) -> Result<Constant, EvalError> {
    let empty = || EvalError::EmptyAggregate {
        relation: name.to_string(),
    };
    let rel = rel.ok_or_else(empty)?;
    if position >= rel.arity() {
        return Err(EvalError::ArityMismatch {
            relation: name.to_string(),
            expected: position + 1,
            found: rel.arity(),
        });
    }
    let op = match kind {
        AggregateKind::Max => "max",
        AggregateKind::Min => "min",
    };
    let mut best: Option<Constant> = None;
    for t in rel.iter() {
        let v = &t[position];
        best = Some(match best {
            None => {
                if !(v.is_numeric() || matches!(v, Constant::Str(_))) {
                    return Err(type_error(op, v, v));
                }
                v.clone()
            }
            Some(b) => {
                let ord = match (&b, v) {
                    (Constant::Str(x), Constant::Str(y)) => x.cmp(y),
                    _ if b.is_numeric() && v.is_numeric() => b.cmp(v),
                    _ => return Err(type_error(op, &b, v)),
                };
                let take = match kind {
                    AggregateKind::Max => ord.is_lt(),
                    AggregateKind::Min => ord.is_gt(),
                };
                if take {
                    v.clone()
                } else {
                    b
                }
            }
        });
    }
    best.ok_or_else(empty)
}

/// Intensional relations produced by one evaluation.
#[derive(Debug, Default)]
pub struct Derived {
    relations: BTreeMap<Arc<str>, Relation>,
}

impl Derived {
    pub fn get(&self, name: &str) -> Option<&Relation> {
        self.relations.get(name)
    }

    pub fn take(&mut self, name: &str) -> Option<Relation> {
        self.relations.remove(name)
    }

    pub fn into_relations(self) -> impl Iterator<Item = Relation> {
        self.relations.into_values()
    }
}

impl Program {
    /// Computes every intensional relation over `db`.
    pub fn derive(&self, db: &Database, opts: &EvalOptions) -> Result<Derived, EvalError> {
        for (name, &arity) in &self.arities {
            if let Some(rel) = db.relation(name) {
                if rel.arity() != arity {
                    return Err(EvalError::ArityMismatch {
                        relation: name.clone(),
                        expected: arity,
                        found: rel.arity(),
                    });
                }
            }
        }
        let mut idb: BTreeMap<Arc<str>, Relation> = BTreeMap::new();
        for name in &self.intensional {
            let arity = self.arities[&**name];
            let rel = match db.relation(name) {
                Some(seed) => seed.clone(),
                None => Relation::new(name.clone(), arity),
            };
            idb.insert(name.clone(), rel);
        }
        let goal = opts.exists.as_deref();
        if let Some(g) = goal {
            if idb.get(g).is_some_and(|r| !r.is_empty()) {
                return Ok(Derived { relations: idb });
            }
        }
        for level in &self.levels {
            loop {
                let mut batches: Vec<(&Arc<str>, Vec<Tuple>)> = Vec::with_capacity(level.len());
                let mut found = false;
                {
                    let view = Layered { idb: &idb, db };
                    for &ri in level {
                        let rule = &self.compiled[ri];
                        let is_goal = goal == Some(&**rule.head_relation());
                        let mut out = Vec::new();
                        let app = Application::new(rule, &view, opts.join);
                        app.run(&mut |t| {
                            out.push(t);
                            !is_goal
                        })?;
                        if is_goal && !out.is_empty() {
                            found = true;
                        }
                        batches.push((rule.head_relation(), out));
                        if found {
                            break;
                        }
                    }
                }
                let mut changed = false;
                for (head, tuples) in batches {
                    let rel = idb.get_mut(&**head).expect("head relation allocated");
                    for t in tuples {
                        changed |= rel.insert(t)?;
                    }
                }
                if found {
                    return Ok(Derived { relations: idb });
                }
                if !changed {
                    break;
                }
            }
        }
        Ok(Derived { relations: idb })
    }

    /// Evaluates and returns only `goal` (empty when the program never derives it).
    pub fn query(&self, db: &Database, goal: &str, opts: &EvalOptions) -> Result<Relation, EvalError> {
        let mut d = self.derive(db, opts)?;
        Ok(d.take(goal).unwrap_or_else(|| {
            Relation::new(goal, self.arity_of(goal).unwrap_or(0))
        }))
    }
}

/// One application of `rule` against `db`: every head tuple derivable in a
/// single step, as a set.
pub fn apply_rule(rule: &Rule, db: &Database) -> Result<Relation, EvalError> {
    super::check_rule(0, rule).map_err(|e| match e {
        super::ParseError::SafetyViolation { variable, .. } => EvalError::Unbound(variable),
        other => EvalError::TypeError {
            op: "rule",
            detail: other.to_string(),
        },
    })?;
    let compiled = CompiledRule::compile(rule, &BTreeSet::new());
    let mut out = Relation::new(compiled.head_relation().clone(), compiled.head_arity());
    let mut err = None;
    Application::new(&compiled, db, JoinStrategy::Hash).run(&mut |t| match out.insert(t) {
        Ok(_) => true,
        Err(e) => {
            err = Some(e);
            false
        }
    })?;
    match err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BuiltinOutcome {
    Holds(bool),
    /// An `assign` extended the bindings.
    Bound(HashMap<String, Constant>),
}

/// Evaluates one builtin under explicit bindings. Aggregates read from `db`.
pub fn eval_builtin(
    b: &Builtin,
    bindings: &HashMap<String, Constant>,
    db: &Database,
) -> Result<BuiltinOutcome, EvalError> {
    let mut slots = SlotMap {
        names: HashMap::new(),
    };
    let mut aggs = Vec::new();
    let target = b.assigned_var().map(|v| v.to_string());
    let lhs = compile_expr(&b.operands[0], &mut slots, &mut aggs);
    let rhs = compile_expr(&b.operands[1], &mut slots, &mut aggs);
    let mut values = vec![Constant::Null; slots.names.len()];
    for (name, &s) in &slots.names {
        if Some(name) == target.as_ref() {
            continue;
        }
        values[s] = bindings
            .get(name)
            .cloned()
            .ok_or_else(|| EvalError::Unbound(name.clone()))?;
    }
    let rule = CompiledRule {
        head_rel: Arc::from(""),
        head: Vec::new(),
        pre: Vec::new(),
        steps: Vec::new(),
        builtins: vec![CBuiltin {
            op: b.op,
            lhs,
            rhs,
            target: None,
        }],
        aggs,
        nslots: values.len(),
    };
    let app = Application::new(&rule, db, JoinStrategy::Hash);
    let mut st = State {
        bindings: values.into_iter().map(Cow::Owned).collect(),
        aggs: vec![None; rule.aggs.len()],
        key: Vec::new(),
    };
    match target {
        Some(name) => {
            let v = app.expr(&rule.builtins[0].rhs, &mut st)?;
            let mut out = bindings.clone();
            out.insert(name, v);
            Ok(BuiltinOutcome::Bound(out))
        }
        None => {
            let l = app.expr(&rule.builtins[0].lhs, &mut st)?;
            let r = app.expr(&rule.builtins[0].rhs, &mut st)?;
            Ok(BuiltinOutcome::Holds(test(b.op, &l, &r)?))
        }
    }
}
