//! Brute-force reference evaluator and random positive-program generator.
//!
//! The oracle enumerates every assignment of the rule's variables over the
//! active domain and keeps the ground instances whose body atoms are all
//! present, repeating until nothing changes. It shares nothing with the
//! engine beyond the `Constant` value type.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tipflow::datalog::{Constant, Database};

#[derive(Clone, Debug, PartialEq)]
pub enum GTerm {
    Var(usize),
    Const(Constant),
    Any,
}

#[derive(Clone, Debug)]
pub struct GAtom {
    pub rel: usize,
    pub terms: Vec<GTerm>,
}

#[derive(Clone, Debug)]
pub struct GRule {
    pub head: GAtom,
    pub body: Vec<GAtom>,
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub arities: Vec<usize>,
    pub n_edb: usize,
    pub facts: Vec<(usize, Vec<Constant>)>,
    pub rules: Vec<GRule>,
}

pub type Facts = BTreeMap<String, BTreeSet<Vec<Constant>>>;

const VARS: [&str; 4] = ["X", "Y", "Z", "W"];

fn rel_name(i: usize) -> String {
    format!("r{i}")
}

fn random_const(rng: &mut ChaCha8Rng) -> Constant {
    match rng.gen_range(0..5) {
        0 => Constant::str("a"),
        n => Constant::Int(n as i64),
    }
}

impl Generated {
    /// Up to 4 relations of arity at most 3, up to 20 facts, up to 5 rules.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_rel = rng.gen_range(2..=4);
        let arities: Vec<usize> = (0..n_rel).map(|_| rng.gen_range(1..=3)).collect();
        let n_edb = rng.gen_range(1..n_rel);
        let n_facts = rng.gen_range(0..=20);
        let facts = (0..n_facts)
            .map(|_| {
                let r = rng.gen_range(0..n_edb);
                (r, (0..arities[r]).map(|_| random_const(&mut rng)).collect())
            })
            .collect();
        let n_rules = rng.gen_range(1..=5);
        let mut rules = Vec::new();
        for _ in 0..n_rules {
            let head_rel = rng.gen_range(n_edb..n_rel);
            let n_body = rng.gen_range(1..=3);
            let mut body = Vec::new();
            let mut body_vars = BTreeSet::new();
            for _ in 0..n_body {
                let rel = rng.gen_range(0..n_rel);
                let terms = (0..arities[rel])
                    .map(|_| match rng.gen_range(0..10) {
                        0 => GTerm::Any,
                        1 => GTerm::Const(random_const(&mut rng)),
                        _ => {
                            let v = rng.gen_range(0..VARS.len());
                            body_vars.insert(v);
                            GTerm::Var(v)
                        }
                    })
                    .collect();
                body.push(GAtom { rel, terms });
            }
            let body_vars: Vec<usize> = body_vars.into_iter().collect();
            let head_terms = (0..arities[head_rel])
                .map(|_| {
                    if !body_vars.is_empty() && rng.gen_range(0..10) < 8 {
                        GTerm::Var(body_vars[rng.gen_range(0..body_vars.len())])
                    } else if rng.gen_bool(0.5) {
                        GTerm::Any
                    } else {
                        GTerm::Const(random_const(&mut rng))
                    }
                })
                .collect();
            rules.push(GRule {
                head: GAtom {
                    rel: head_rel,
                    terms: head_terms,
                },
                body,
            });
        }
        Self {
            arities,
            n_edb,
            facts,
            rules,
        }
    }

    pub fn program_text(&self) -> String {
        let atom = |a: &GAtom| {
            let terms: Vec<String> = a
                .terms
                .iter()
                .map(|t| match t {
                    GTerm::Var(v) => VARS[*v].to_string(),
                    GTerm::Any => "-".to_string(),
                    GTerm::Const(Constant::Str(s)) => format!("\"{s}\""),
                    GTerm::Const(c) => c.to_string(),
                })
                .collect();
            format!("{}({})", rel_name(a.rel), terms.join(","))
        };
        self.rules
            .iter()
            .map(|r| {
                let body: Vec<String> = r.body.iter().map(atom).collect();
                format!("{} :- {}.\n", atom(&r.head), body.join(", "))
            })
            .collect()
    }

    /// Every extensional relation, possibly empty.
    pub fn database(&self) -> Database {
        let mut db = Database::new();
        for r in 0..self.n_edb {
            db.relation_mut(&rel_name(r), self.arities[r]).unwrap();
        }
        for (r, t) in &self.facts {
            db.add_fact(&rel_name(*r), t.clone().into_boxed_slice()).unwrap();
        }
        db
    }

    pub fn edb_facts(&self) -> Facts {
        let mut out = Facts::new();
        for r in 0..self.n_edb {
            out.entry(rel_name(r)).or_default();
        }
        for (r, t) in &self.facts {
            out.get_mut(&rel_name(*r)).unwrap().insert(t.clone());
        }
        out
    }

    pub fn intensional_names(&self) -> Vec<String> {
        (self.n_edb..self.arities.len()).map(rel_name).collect()
    }

    /// Fixpoint by enumerating all ground substitutions.
    pub fn oracle(&self, edb: &Facts) -> Facts {
        let mut facts = edb.clone();
        for r in self.n_edb..self.arities.len() {
            facts.entry(rel_name(r)).or_default();
        }
        loop {
            let mut domain: HashSet<Constant> = HashSet::new();
            for set in facts.values() {
                for t in set {
                    domain.extend(t.iter().cloned());
                }
            }
            for r in &self.rules {
                for a in std::iter::once(&r.head).chain(&r.body) {
                    for t in &a.terms {
                        if let GTerm::Const(c) = t {
                            domain.insert(c.clone());
                        }
                    }
                }
            }
            let domain: Vec<Constant> = domain.into_iter().collect();
            let mut new = Vec::new();
            for rule in &self.rules {
                let vars: BTreeSet<usize> = rule
                    .body
                    .iter()
                    .flat_map(|a| a.terms.iter())
                    .filter_map(|t| match t {
                        GTerm::Var(v) => Some(*v),
                        _ => None,
                    })
                    .collect();
                let vars: Vec<usize> = vars.into_iter().collect();
                if domain.is_empty() && !vars.is_empty() {
                    continue;
                }
                let mut assignment = vec![0usize; vars.len()];
                loop {
                    let value = |v: usize| -> &Constant {
                        let i = vars.iter().position(|x| *x == v).unwrap();
                        &domain[assignment[i]]
                    };
                    let holds = rule.body.iter().all(|a| {
                        facts[&rel_name(a.rel)].iter().any(|t| {
                            a.terms.iter().zip(t).all(|(term, c)| match term {
                                GTerm::Var(v) => value(*v) == c,
                                GTerm::Const(k) => k == c,
                                GTerm::Any => true,
                            })
                        })
                    });
                    if holds {
                        let head: Vec<Constant> = rule
                            .head
                            .terms
                            .iter()
                            .map(|t| match t {
                                GTerm::Var(v) => value(*v).clone(),
                                GTerm::Const(k) => k.clone(),
                                GTerm::Any => Constant::Null,
                            })
                            .collect();
                        new.push((rel_name(rule.head.rel), head));
                    }
                    // next assignment in mixed radix
                    let mut k = 0;
                    while k < assignment.len() {
                        assignment[k] += 1;
                        if assignment[k] < domain.len() {
                            break;
                        }
                        assignment[k] = 0;
                        k += 1;
                    }
                    if k == assignment.len() {
                        break;
                    }
                }
            }
            let mut changed = false;
            for (r, t) in new {
                changed |= facts.get_mut(&r).unwrap().insert(t);
            }
            if !changed {
                return facts;
            }
        }
    }
}

/// Sorted tuples of one relation of an engine database.
pub fn tuples_of(db: &Database, name: &str) -> BTreeSet<Vec<Constant>> {
    db.relation(name)
        .map(|r| r.iter().map(|t| t.to_vec()).collect())
        .unwrap_or_default()
}
