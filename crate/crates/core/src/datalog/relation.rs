//! Fact tables, databases and ONC-style cursors.

use std::collections::BTreeMap;
use std::fmt;
use std::hash::BuildHasherDefault;
use std::sync::Arc;

use indexmap::IndexSet;
use rustc_hash::FxHasher;

use super::value::{Constant, Tuple};
use super::EvalError;

type TupleSet = IndexSet<Tuple, BuildHasherDefault<FxHasher>>;

/// A named set of equal-length tuples.
///
/// Iteration follows insertion order, which keeps output deterministic for a
/// deterministic input without requiring a sort.
#[derive(Clone)]
pub struct Relation {
    name: Arc<str>,
    arity: usize,
    tuples: TupleSet,
}

impl Relation {
    pub fn new(name: impl Into<Arc<str>>, arity: usize) -> Self {
        Self {
            name: name.into(),
            arity,
            tuples: TupleSet::default(),
        }
    }

    pub fn with_capacity(name: impl Into<Arc<str>>, arity: usize, capacity: usize) -> Self {
        Self {
            name: name.into(),
            arity,
            tuples: TupleSet::with_capacity_and_hasher(capacity, Default::default()),
        }
    }

    pub fn from_tuples<I, T>(name: &str, arity: usize, tuples: I) -> Result<Self, EvalError>
    where
        I: IntoIterator<Item = T>,
        T: Into<Tuple>,
    {
        let mut rel = Self::new(name, arity);
        for t in tuples {
            rel.insert(t.into())?;
        }
        Ok(rel)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub(crate) fn shared_name(&self) -> &Arc<str> {
        &self.name
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    /// Inserts a tuple, returning whether it was new.
    pub fn insert(&mut self, tuple: Tuple) -> Result<bool, EvalError> {
        if tuple.len() != self.arity {
            return Err(EvalError::ArityMismatch {
                relation: self.name.to_string(),
                expected: self.arity,
                found: tuple.len(),
            });
        }
        Ok(self.tuples.insert(tuple))
    }

    pub fn contains(&self, tuple: &[Constant]) -> bool {
        self.tuples.contains(tuple)
    }

    pub fn get(&self, index: usize) -> Option<&[Constant]> {
        self.tuples.get_index(index).map(|t| &t[..])
    }

    pub fn iter(&self) -> impl Iterator<Item = &[Constant]> + '_ {
        self.tuples.iter().map(|t| &t[..])
    }

    /// The stored tuples; cloning one only bumps a reference count.
    pub fn shared_tuples(&self) -> impl Iterator<Item = &Tuple> + '_ {
        self.tuples.iter()
    }

    /// Tuples in canonical (sorted) order.
    pub fn sorted(&self) -> Vec<&[Constant]> {
        let mut v: Vec<_> = self.iter().collect();
        v.sort();
        v
    }

    /// Keeps the tuples satisfying `keep`.
    pub fn retain(&mut self, mut keep: impl FnMut(&[Constant]) -> bool) {
        self.tuples.retain(|t| keep(t));
    }

    /// Adds every tuple of `other`, which must have the same arity.
    pub fn union_with(&mut self, other: &Relation) -> Result<usize, EvalError> {
        if other.arity != self.arity {
            return Err(EvalError::ArityMismatch {
                relation: self.name.to_string(),
                expected: self.arity,
                found: other.arity,
            });
        }
        let before = self.len();
        self.tuples.extend(other.tuples.iter().cloned());
        Ok(self.len() - before)
    }

    pub fn renamed(&self, name: &str) -> Relation {
        Relation {
            name: Arc::from(name),
            arity: self.arity,
            tuples: self.tuples.clone(),
        }
    }

    /// Opens an ONC cursor over this relation.
    pub fn open(&self) -> TableCursor<'_> {
        let mut c = TableCursor::new(self);
        c.open();
        c
    }
}

impl PartialEq for Relation {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.arity == other.arity && self.tuples == other.tuples
    }
}

impl fmt::Debug for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{} {{", self.name, self.arity)?;
        for (i, t) in self.sorted().into_iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{t:?}")?;
        }
        f.write_str("}")
    }
}

/// Open-Next-Close cursor over a relation.
///
/// `next` before `open` or after the end keeps returning `None`; `close` may be
/// called any number of times.
pub struct TableCursor<'a> {
    rel: &'a Relation,
    pos: Option<usize>,
}

impl<'a> TableCursor<'a> {
    pub fn new(rel: &'a Relation) -> Self {
        Self { rel, pos: None }
    }

    pub fn open(&mut self) {
        self.pos = Some(0);
    }

    pub fn next_tuple(&mut self) -> Option<&'a [Constant]> {
        let pos = self.pos.as_mut()?;
        let t = self.rel.get(*pos)?;
        *pos += 1;
        Some(t)
    }

    pub fn close(&mut self) {
        self.pos = None;
    }

    pub fn is_open(&self) -> bool {
        self.pos.is_some()
    }
}

impl<'a> Iterator for TableCursor<'a> {
    type Item = &'a [Constant];

    fn next(&mut self) -> Option<Self::Item> {
        self.next_tuple()
    }
}

/// Map from relation name to relation.
///
/// Relations are reference counted so that cloning a database (for example when
/// copying a message) is cheap; mutation copies on write.
#[derive(Clone, Default, PartialEq)]
pub struct Database {
    relations: BTreeMap<Arc<str>, Arc<Relation>>,
}

impl Database {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn relation(&self, name: &str) -> Option<&Relation> {
        self.relations.get(name).map(|r| &**r)
    }

    pub(crate) fn shared(&self, name: &str) -> Option<&Arc<Relation>> {
        self.relations.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.relations.contains_key(name)
    }

    /// Inserts or replaces a relation.
    pub fn insert_relation(&mut self, rel: Relation) {
        self.relations.insert(rel.shared_name().clone(), Arc::new(rel));
    }

    pub(crate) fn insert_shared(&mut self, rel: Arc<Relation>) {
        self.relations.insert(rel.shared_name().clone(), rel);
    }

    pub fn remove(&mut self, name: &str) -> Option<Relation> {
        self.relations
            .remove(name)
            .map(|r| Arc::try_unwrap(r).unwrap_or_else(|r| (*r).clone()))
    }

    /// Mutable access, creating an empty relation of `arity` when missing.
    pub fn relation_mut(&mut self, name: &str, arity: usize) -> Result<&mut Relation, EvalError> {
        let rel = self
            .relations
            .entry(Arc::from(name))
            .or_insert_with(|| Arc::new(Relation::new(name, arity)));
        if rel.arity() != arity {
            return Err(EvalError::ArityMismatch {
                relation: name.to_string(),
                expected: rel.arity(),
                found: arity,
            });
        }
        Ok(Arc::make_mut(rel))
    }

    pub fn add_fact(&mut self, name: &str, tuple: impl Into<Tuple>) -> Result<bool, EvalError> {
        let tuple = tuple.into();
        self.relation_mut(name, tuple.len())?.insert(tuple)
    }

    /// Per-relation set union.
    pub fn union_with(&mut self, other: &Database) -> Result<(), EvalError> {
        for (name, rel) in &other.relations {
            match self.relations.get_mut(name) {
                None => {
                    self.relations.insert(name.clone(), rel.clone());
                }
                Some(mine) => {
                    if Arc::ptr_eq(mine, rel) {
                        continue;
                    }
                    Arc::make_mut(mine).union_with(rel)?;
                }
            }
        }
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> + '_ {
        self.relations.keys().map(|k| &**k)
    }

    pub fn relations(&self) -> impl Iterator<Item = &Relation> + '_ {
        self.relations.values().map(|r| &**r)
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    /// Total number of tuples over all relations.
    pub fn fact_count(&self) -> usize {
        self.relations.values().map(|r| r.len()).sum()
    }
}

impl fmt::Debug for Database {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.relations.values()).finish()
    }
}

/// Builds a tuple from anything convertible to constants.
#[macro_export]
macro_rules! tuple {
    ($($x:expr),* $(,)?) => {
        $crate::datalog::Tuple::from(vec![$($crate::datalog::Constant::from($x)),*])
    };
}
