//! Rule syntax tree.

use std::fmt;

use super::value::Constant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    pub fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AggregateKind {
    Min,
    Max,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Term {
    Var(String),
    /// `-`: matches anything in a body atom, becomes [`Constant::Null`] in a head.
    Anonymous,
    Const(Constant),
    /// Only valid as a builtin operand.
    Expr(ArithOp, Box<Term>, Box<Term>),
    /// `max(p(x,y), x)`: extreme value of one argument position of a relation.
    /// Only valid as a builtin operand.
    Aggregate {
        kind: AggregateKind,
        relation: String,
        position: usize,
        arity: Option<usize>,
    },
}

impl Term {
    pub fn var(name: &str) -> Self {
        Term::Var(name.to_string())
    }

    /// Variables referenced by this term (aggregate patterns are self-contained).
    pub fn variables(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Term::Var(v) => out.push(v),
            Term::Expr(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
            _ => {}
        }
    }

    pub(crate) fn is_simple(&self) -> bool {
        matches!(self, Term::Var(_) | Term::Anonymous | Term::Const(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub relation: String,
    pub terms: Vec<Term>,
}

impl Atom {
    pub fn new(relation: &str, terms: Vec<Term>) -> Self {
        Self {
            relation: relation.to_string(),
            terms,
        }
    }

    pub fn arity(&self) -> usize {
        self.terms.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BuiltinOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    Equals,
    Contains,
    StartsWith,
    Assign,
}

impl BuiltinOp {
    pub fn name(self) -> &'static str {
        match self {
            BuiltinOp::Lt => "<",
            BuiltinOp::Le => "<=",
            BuiltinOp::Gt => ">",
            BuiltinOp::Ge => ">=",
            BuiltinOp::Eq => "=",
            BuiltinOp::Ne => "!=",
            BuiltinOp::Equals => "equals",
            BuiltinOp::Contains => "contains",
            BuiltinOp::StartsWith => "starts_with",
            BuiltinOp::Assign => "assign",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "<" => BuiltinOp::Lt,
            "<=" => BuiltinOp::Le,
            ">" => BuiltinOp::Gt,
            ">=" => BuiltinOp::Ge,
            "=" => BuiltinOp::Eq,
            "!=" => BuiltinOp::Ne,
            "equals" => BuiltinOp::Equals,
            "contains" => BuiltinOp::Contains,
            "starts_with" | "starts-with" => BuiltinOp::StartsWith,
            "assign" => BuiltinOp::Assign,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Builtin {
    pub op: BuiltinOp,
    pub operands: Vec<Term>,
}

impl Builtin {
    pub fn new(op: BuiltinOp, operands: Vec<Term>) -> Self {
        Self { op, operands }
    }

    /// The variable bound by an `assign`.
    pub fn assigned_var(&self) -> Option<&str> {
        match (self.op, self.operands.first()) {
            (BuiltinOp::Assign, Some(Term::Var(v))) => Some(v),
            _ => None,
        }
    }

    /// Variables that must be bound before the builtin can run.
    pub fn input_vars(&self) -> Vec<&str> {
        let skip = usize::from(self.op == BuiltinOp::Assign);
        self.operands
            .iter()
            .skip(skip)
            .flat_map(|t| t.variables())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub head: Atom,
    pub body: Vec<Atom>,
    pub builtins: Vec<Builtin>,
}

impl Rule {
    pub fn new(head: Atom, body: Vec<Atom>, builtins: Vec<Builtin>) -> Self {
        Self {
            head,
            body,
            builtins,
        }
    }

    pub fn is_fact(&self) -> bool {
        self.body.is_empty() && self.builtins.is_empty()
    }
}

fn write_const(f: &mut fmt::Formatter<'_>, c: &Constant) -> fmt::Result {
    match c {
        Constant::Str(s) => {
            f.write_str("\"")?;
            for ch in s.chars() {
                match ch {
                    '"' => f.write_str("\\\"")?,
                    '\\' => f.write_str("\\\\")?,
                    '\n' => f.write_str("\\n")?,
                    '\t' => f.write_str("\\t")?,
                    c => write!(f, "{c}")?,
                }
            }
            f.write_str("\"")
        }
        Constant::Float(x) => {
            // keep a decimal point so the literal reparses as a float
            if x.fract() == 0.0 && x.is_finite() {
                write!(f, "{x:.1}")
            } else {
                write!(f, "{x:?}")
            }
        }
        Constant::Int(i) => write!(f, "{i}"),
        Constant::Null => f.write_str("-"),
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => f.write_str(v),
            Term::Anonymous => f.write_str("-"),
            Term::Const(c) => write_const(f, c),
            Term::Expr(op, l, r) => write!(f, "{}({l},{r})", op.symbol()),
            Term::Aggregate {
                kind,
                relation,
                position,
                ..
            } => {
                let k = match kind {
                    AggregateKind::Min => "min",
                    AggregateKind::Max => "max",
                };
                write!(f, "{k}({relation},{position})")
            }
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.relation)?;
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{t}")?;
        }
        f.write_str(")")
    }
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.op.name())?;
        for (i, t) in self.operands.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{t}")?;
        }
        f.write_str(")")
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.head)?;
        if !self.is_fact() {
            f.write_str(" :- ")?;
            let mut first = true;
            for a in &self.body {
                if !first {
                    f.write_str(", ")?;
                }
                first = false;
                write!(f, "{a}")?;
            }
            for b in &self.builtins {
                if !first {
                    f.write_str(", ")?;
                }
                first = false;
                write!(f, "{b}")?;
            }
        }
        f.write_str(".")
    }
}
