//! Concrete syntax.
//!
//! ```text
//! cbr-order(id,-,OTOTALPRICE,-) :-
//!     order(id,otype,-,-,OTOTALPRICE,OPRIORITY,-),
//!     =(OPRIORITY,"1-URGENT"),
//!     >(OTOTALPRICE,100000.00).
//! ```
//!
//! Every unquoted identifier inside an atom is a variable, `-` is the
//! anonymous term, strings are quoted and builtins are written prefix. Relation
//! names may contain `-`. Arithmetic is prefix as well (`+(x,1)`), aggregates
//! are `max(p(x,y),x)` or `max(p,0)`. `%` starts a comment.

use std::collections::HashSet;

use super::ast::{AggregateKind, ArithOp, Atom, Builtin, BuiltinOp, Rule, Term};
use super::value::Constant;
use super::{ParseError, Program};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Int(i64),
    Float(f64),
    LParen,
    RParen,
    Comma,
    Dot,
    Implies,
    Minus,
    Op(&'static str),
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            chars: src.chars().peekable(),
            line: 1,
            col: 1,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn err(&self, line: usize, col: usize, message: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            line,
            col,
            message: message.into(),
        }
    }

    fn tokens(mut self) -> Result<Vec<Token>, ParseError> {
        let mut out = Vec::new();
        loop {
            while let Some(&c) = self.chars.peek() {
                if c.is_whitespace() {
                    self.bump();
                } else if c == '%' {
                    while let Some(c) = self.bump() {
                        if c == '\n' {
                            break;
                        }
                    }
                } else {
                    break;
                }
            }
            let (line, col) = (self.line, self.col);
            let Some(c) = self.bump() else {
                out.push(Token {
                    tok: Tok::Eof,
                    line,
                    col,
                });
                return Ok(out);
            };
            let tok = match c {
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                ',' => Tok::Comma,
                '.' => Tok::Dot,
                ':' => {
                    if self.chars.peek() == Some(&'-') {
                        self.bump();
                        Tok::Implies
                    } else {
                        return Err(self.err(line, col, "expected `:-`"));
                    }
                }
                '-' => {
                    if self.chars.peek().is_some_and(|c| c.is_ascii_digit()) {
                        self.number(String::from("-"), line, col)?
                    } else {
                        Tok::Minus
                    }
                }
                '+' => Tok::Op("+"),
                '*' => Tok::Op("*"),
                '/' => Tok::Op("/"),
                '<' | '>' => {
                    if self.chars.peek() == Some(&'=') {
                        self.bump();
                        Tok::Op(if c == '<' { "<=" } else { ">=" })
                    } else {
                        Tok::Op(if c == '<' { "<" } else { ">" })
                    }
                }
                '=' => Tok::Op("="),
                '!' => {
                    if self.chars.peek() == Some(&'=') {
                        self.bump();
                        Tok::Op("!=")
                    } else {
                        return Err(self.err(line, col, "expected `!=`"));
                    }
                }
                '"' | '\'' => self.string(c, line, col)?,
                c if c.is_ascii_digit() => self.number(c.to_string(), line, col)?,
                c if c.is_alphabetic() || c == '_' => {
                    let mut s = c.to_string();
                    while let Some(&n) = self.chars.peek() {
                        if n.is_alphanumeric() || n == '_' || n == '-' {
                            s.push(n);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    Tok::Ident(s)
                }
                other => return Err(self.err(line, col, format!("unexpected character `{other}`"))),
            };
            out.push(Token { tok, line, col });
        }
    }

    fn string(&mut self, quote: char, line: usize, col: usize) -> Result<Tok, ParseError> {
        let mut s = String::new();
        loop {
            match self.bump() {
                None => return Err(self.err(line, col, "unterminated string")),
                Some(c) if c == quote => return Ok(Tok::Str(s)),
                Some('\\') => match self.bump() {
                    Some('n') => s.push('\n'),
                    Some('t') => s.push('\t'),
                    Some(c) => s.push(c),
                    None => return Err(self.err(line, col, "unterminated string")),
                },
                Some(c) => s.push(c),
            }
        }
    }

    fn number(&mut self, mut s: String, line: usize, col: usize) -> Result<Tok, ParseError> {
        while let Some(&c) = self.chars.peek() {
            if c.is_ascii_digit() {
                s.push(c);
                self.bump();
            } else {
                break;
            }
        }
        let mut is_float = false;
        // `3.` followed by a non-digit is the integer 3 and a statement end
        let mut ahead = self.chars.clone();
        if ahead.next() == Some('.') && ahead.peek().is_some_and(|c| c.is_ascii_digit()) {
            is_float = true;
            s.push('.');
            self.bump();
            while let Some(&c) = self.chars.peek() {
                if c.is_ascii_digit() {
                    s.push(c);
                    self.bump();
                } else {
                    break;
                }
            }
        }
        if matches!(self.chars.peek(), Some('e') | Some('E')) {
            let mut ahead = self.chars.clone();
            ahead.next();
            let next = ahead.peek().copied();
            let signed = matches!(next, Some('+') | Some('-'));
            if next.is_some_and(|c| c.is_ascii_digit())
                || (signed && {
                    ahead.next();
                    ahead.peek().is_some_and(|c| c.is_ascii_digit())
                })
            {
                is_float = true;
                s.push(self.bump().unwrap());
                if signed {
                    s.push(self.bump().unwrap());
                }
                while let Some(&c) = self.chars.peek() {
                    if c.is_ascii_digit() {
                        s.push(c);
                        self.bump();
                    } else {
                        break;
                    }
                }
            }
        }
        if is_float {
            s.parse()
                .map(Tok::Float)
                .map_err(|_| self.err(line, col, format!("bad number `{s}`")))
        } else {
            s.parse()
                .map(Tok::Int)
                .map_err(|_| self.err(line, col, format!("integer out of range `{s}`")))
        }
    }
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

enum Literal {
    Atom(Atom),
    Builtin(Builtin),
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek2(&self) -> &Tok {
        let i = (self.pos + 1).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error_here(&self, message: impl Into<String>) -> ParseError {
        let t = &self.toks[self.pos];
        ParseError::Syntax {
            line: t.line,
            col: t.col,
            message: message.into(),
        }
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == want {
            self.next();
            Ok(())
        } else {
            Err(self.error_here(format!("expected {what}, found {}", describe(self.peek()))))
        }
    }

    fn rules(&mut self) -> Result<Vec<Rule>, ParseError> {
        let mut rules = Vec::new();
        while *self.peek() != Tok::Eof {
            rules.push(self.rule()?);
        }
        Ok(rules)
    }

    fn rule(&mut self) -> Result<Rule, ParseError> {
        let head = match self.literal()? {
            Literal::Atom(a) => a,
            Literal::Builtin(_) => return Err(self.error_here("a rule head cannot be a builtin")),
        };
        let mut body = Vec::new();
        let mut builtins = Vec::new();
        if *self.peek() == Tok::Implies {
            self.next();
            loop {
                match self.literal()? {
                    Literal::Atom(a) => body.push(a),
                    Literal::Builtin(b) => builtins.push(b),
                }
                match self.peek() {
                    Tok::Comma => {
                        self.next();
                    }
                    Tok::Dot => break,
                    other => {
                        return Err(self.error_here(format!(
                            "expected `,` or `.`, found {}",
                            describe(other)
                        )))
                    }
                }
            }
        }
        self.expect(Tok::Dot, "`.`")?;
        Ok(Rule::new(head, body, builtins))
    }

    fn literal(&mut self) -> Result<Literal, ParseError> {
        let t = self.next();
        let op = match &t.tok {
            Tok::Op(op) => BuiltinOp::from_name(op),
            Tok::Ident(name) => BuiltinOp::from_name(name).filter(|_| *self.peek() == Tok::LParen),
            _ => {
                self.pos -= 1;
                return Err(self.error_here(format!("expected atom, found {}", describe(&t.tok))));
            }
        };
        if let Some(op) = op {
            self.expect(Tok::LParen, "`(`")?;
            let mut operands = vec![self.operand()?];
            while *self.peek() == Tok::Comma {
                self.next();
                operands.push(self.operand()?);
            }
            self.expect(Tok::RParen, "`)`")?;
            if operands.len() != 2 {
                return Err(ParseError::Syntax {
                    line: t.line,
                    col: t.col,
                    message: format!("builtin `{}` takes 2 operands", op.name()),
                });
            }
            if op == BuiltinOp::Assign && !matches!(operands[0], Term::Var(_)) {
                return Err(ParseError::Syntax {
                    line: t.line,
                    col: t.col,
                    message: "assign target must be a variable".into(),
                });
            }
            return Ok(Literal::Builtin(Builtin::new(op, operands)));
        }
        let Tok::Ident(name) = t.tok else {
            self.pos -= 1;
            return Err(self.error_here("expected atom"));
        };
        let mut terms = Vec::new();
        if *self.peek() == Tok::LParen {
            self.next();
            if *self.peek() != Tok::RParen {
                terms.push(self.atom_term()?);
                while *self.peek() == Tok::Comma {
                    self.next();
                    terms.push(self.atom_term()?);
                }
            }
            self.expect(Tok::RParen, "`,` or `)`")?;
        }
        Ok(Literal::Atom(Atom::new(&name, terms)))
    }

    fn atom_term(&mut self) -> Result<Term, ParseError> {
        let t = self.next();
        Ok(match t.tok {
            Tok::Ident(v) => {
                if *self.peek() == Tok::LParen {
                    self.pos -= 1;
                    return Err(self.error_here("nested terms are not allowed in atoms"));
                }
                Term::Var(v)
            }
            Tok::Minus => {
                if *self.peek() == Tok::LParen {
                    self.pos -= 1;
                    return Err(self.error_here("expressions are only allowed inside builtins"));
                }
                Term::Anonymous
            }
            Tok::Str(s) => Term::Const(Constant::from(s)),
            Tok::Int(i) => Term::Const(Constant::Int(i)),
            Tok::Float(f) => Term::Const(Constant::Float(f)),
            other => {
                self.pos -= 1;
                return Err(self.error_here(format!("expected a term, found {}", describe(&other))));
            }
        })
    }

    fn operand(&mut self) -> Result<Term, ParseError> {
        let arith = match self.peek() {
            Tok::Minus if *self.peek2() == Tok::LParen => Some(ArithOp::Sub),
            Tok::Op("+") => Some(ArithOp::Add),
            Tok::Op("*") => Some(ArithOp::Mul),
            Tok::Op("/") => Some(ArithOp::Div),
            _ => None,
        };
        if let Some(op) = arith {
            self.next();
            self.expect(Tok::LParen, "`(`")?;
            let l = self.operand()?;
            self.expect(Tok::Comma, "`,`")?;
            let r = self.operand()?;
            self.expect(Tok::RParen, "`)`")?;
            return Ok(Term::Expr(op, Box::new(l), Box::new(r)));
        }
        if let Tok::Ident(name) = self.peek() {
            let kind = match name.as_str() {
                "max" => Some(AggregateKind::Max),
                "min" => Some(AggregateKind::Min),
                _ => None,
            };
            if let (Some(kind), Tok::LParen) = (kind, self.peek2()) {
                self.next();
                self.next();
                return self.aggregate(kind);
            }
        }
        if *self.peek() == Tok::Minus {
            return Err(self.error_here("anonymous term is not allowed in a builtin"));
        }
        self.atom_term()
    }

    fn aggregate(&mut self, kind: AggregateKind) -> Result<Term, ParseError> {
        let t = self.next();
        let Tok::Ident(relation) = t.tok else {
            self.pos -= 1;
            return Err(self.error_here("expected relation name in aggregate"));
        };
        if *self.peek() == Tok::LParen {
            // max(p(x,y), x)
            self.next();
            let mut vars: Vec<Option<String>> = Vec::new();
            loop {
                match self.next().tok {
                    Tok::Ident(v) => vars.push(Some(v)),
                    Tok::Minus => vars.push(None),
                    _ => {
                        self.pos -= 1;
                        return Err(self.error_here("aggregate patterns take variables or `-`"));
                    }
                }
                match self.peek() {
                    Tok::Comma => {
                        self.next();
                    }
                    Tok::RParen => {
                        self.next();
                        break;
                    }
                    _ => return Err(self.error_here("expected `,` or `)`")),
                }
            }
            self.expect(Tok::Comma, "`,`")?;
            let Tok::Ident(target) = self.next().tok else {
                self.pos -= 1;
                return Err(self.error_here("expected aggregated variable"));
            };
            let position = vars
                .iter()
                .position(|v| v.as_deref() == Some(target.as_str()))
                .ok_or_else(|| {
                    self.error_here(format!("`{target}` does not occur in the aggregate pattern"))
                })?;
            self.expect(Tok::RParen, "`)`")?;
            Ok(Term::Aggregate {
                kind,
                relation,
                position,
                arity: Some(vars.len()),
            })
        } else {
            // max(p, 0)
            self.expect(Tok::Comma, "`,`")?;
            let Tok::Int(pos) = self.next().tok else {
                self.pos -= 1;
                return Err(self.error_here("expected argument position"));
            };
            self.expect(Tok::RParen, "`)`")?;
            let position = usize::try_from(pos).map_err(|_| self.error_here("negative position"))?;
            Ok(Term::Aggregate {
                kind,
                relation,
                position,
                arity: None,
            })
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Str(s) => format!("\"{s}\""),
        Tok::Int(i) => i.to_string(),
        Tok::Float(f) => f.to_string(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Comma => "`,`".into(),
        Tok::Dot => "`.`".into(),
        Tok::Implies => "`:-`".into(),
        Tok::Minus => "`-`".into(),
        Tok::Op(o) => format!("`{o}`"),
        Tok::Eof => "end of input".into(),
    }
}

/// Rewrites `=(z, e)` into `assign(z, e)` when `z` is not bound by a body atom
/// and every variable of `e` is.
fn desugar_assignments(rule: &mut Rule) {
    let mut bound: HashSet<String> = rule
        .body
        .iter()
        .flat_map(|a| a.terms.iter())
        .filter_map(|t| match t {
            Term::Var(v) => Some(v.clone()),
            _ => None,
        })
        .collect();
    for b in &rule.builtins {
        if let Some(v) = b.assigned_var() {
            bound.insert(v.to_string());
        }
    }
    loop {
        let mut changed = false;
        for b in rule.builtins.iter_mut().filter(|b| b.op == BuiltinOp::Eq) {
            for (target, other) in [(0usize, 1usize), (1, 0)] {
                let Term::Var(v) = &b.operands[target] else {
                    continue;
                };
                if bound.contains(v) {
                    continue;
                }
                if b.operands[other].variables().iter().all(|x| bound.contains(*x)) {
                    let v = v.clone();
                    let value = b.operands[other].clone();
                    *b = Builtin::new(BuiltinOp::Assign, vec![Term::Var(v.clone()), value]);
                    bound.insert(v);
                    changed = true;
                    break;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

/// Parses rules without validating them.
pub fn parse_rules(text: &str) -> Result<Vec<Rule>, ParseError> {
    let toks = Lexer::new(text).tokens()?;
    let mut rules = Parser { toks, pos: 0 }.rules()?;
    for r in &mut rules {
        desugar_assignments(r);
    }
    Ok(rules)
}

/// Parses and validates a program.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    Program::new(parse_rules(text)?)
}
