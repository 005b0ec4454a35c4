//! Concrete syntax: parsing and printing of programs, signatures and
//! initial stores.
//!
//! A program file has up to four sections, in order:
//!
//! ```text
//! params:
//!   n = 8
//! signature:
//!   = : (hi int, li int) -> li bool = eq
//!   0 : li int = lit
//! store:
//!   fib : un (li int -> li <li int, li int, li int>) = un \x: li int. ...
//!   a = li iota(n)
//! main:
//!   fib n
//! ```
//!
//! Tuples are written `q <e, ...>`, lists `q []` and `q (e : e)`, arrays
//! `q {1, 2, 3}`. Operator occurrences use call syntax `id(x)`, the infix
//! forms `= + - * <`, or the array sugar `a[i]` and `a[i <- e]`. An
//! occurrence can pin a signature entry with `name@k`. `#` starts a line
//! comment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::machine::{self, Configuration, Store, Value};
use crate::syntax::{
    free_vars, BaseType, Constant, Expr, ExprKind, OpRef, OpTarget,
    OperatorType, Pretype, PrimKey, PseudoQualifier, Qualifier, SigEntry, Signature, Span, Type,
    Var,
};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum InstantiateError {
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("store entry `{0}` is not a value")]
    NotAValue(Var),
    #[error("store entry `{var}` references `{reference}`, which is not bound earlier")]
    ForwardReference { var: Var, reference: Var },
    #[error("store entry `{0}` refers to itself; self-reference needs an unrestricted closure with a type annotation")]
    BadSelfReference(Var),
    #[error("duplicate store variable `{0}`")]
    DuplicateStoreVar(Var),
    #[error("iota count must be non-negative, got {0}")]
    NegativeCount(i64),
}

/// How one store cell is produced when the program is instantiated.
#[derive(Clone, Debug, PartialEq)]
pub enum StoreInit {
    /// A value expression: a qualified constant, tuple of variables,
    /// closure, or list cell.
    Value(Expr),
    /// An array `{0, 1, ..., count-1}`, reversed when `desc`.
    Iota {
        qual: Qualifier,
        desc: bool,
        count: ParamRef,
    },
    /// A chain of cells spelling the list `[0, 1, ..., count-1]`, the head
    /// cell named by the entry.
    IotaList { qual: Qualifier, count: ParamRef },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParamRef {
    Name(String),
    Lit(i64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoreEntry {
    pub var: Var,
    pub declared: Option<Type>,
    pub init: StoreInit,
}

/// A parsed program template: signature, initial store, main expression and
/// named integer parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ProgramFile {
    pub params: Vec<(String, i64)>,
    pub signature: Signature,
    pub store: Vec<StoreEntry>,
    pub main: Expr,
}

/// A program instantiated at concrete parameter values, ready for the
/// checker and the machine.
#[derive(Clone, Debug)]
pub struct Instance {
    pub signature: Signature,
    pub configuration: Configuration,
    /// Type annotations carried by store entries, keyed by cell name. The
    /// verifier needs them to type self-referential closures.
    pub declared: BTreeMap<Var, Type>,
}

impl ProgramFile {
    /// Override a named parameter.
    pub fn with_param(mut self, name: &str, value: i64) -> Self {
        for (k, v) in &mut self.params {
            if k == name {
                *v = value;
                return self;
            }
        }
        self.params.push((name.to_string(), value));
        self
    }

    pub fn param(&self, name: &str) -> Option<i64> {
        self.params
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| *v)
    }

    fn resolve_count(&self, r: &ParamRef) -> Result<i64, InstantiateError> {
        match r {
            ParamRef::Lit(v) => Ok(*v),
            ParamRef::Name(n) => self
                .param(n)
                .ok_or_else(|| InstantiateError::UnknownParam(n.clone())),
        }
    }

    /// Resolve parameters, expand array and list builders, convert store
    /// entries to machine values, and pre-resolve unambiguous operator
    /// occurrences.
    pub fn instantiate(&self) -> Result<Instance, InstantiateError> {
        let mut entries = self.signature.entries().to_vec();
        for e in &mut entries {
            if e.prim == PrimKey::Param {
                let v = self
                    .param(&e.name)
                    .ok_or_else(|| InstantiateError::UnknownParam(e.name.clone()))?;
                e.prim = PrimKey::ConstInt(v);
            }
        }
        let signature = Signature::new(entries).expect("re-validating a parsed signature");

        let mut cells: Vec<(Var, Value)> = Vec::new();
        let mut declared = BTreeMap::new();
        let mut bound: BTreeSet<Var> = BTreeSet::new();
        for entry in &self.store {
            if let Some(t) = &entry.declared {
                declared.insert(entry.var.clone(), t.clone());
            }
            match &entry.init {
                StoreInit::Value(e) => {
                    let mut e = e.clone();
                    resolve_ops_by_name(&mut e, &signature);
                    let value = machine::as_value(&e)
                        .ok_or_else(|| InstantiateError::NotAValue(entry.var.clone()))?;
                    check_references(&entry.var, &value, &bound, entry.declared.is_some())?;
                    push_cell(&mut cells, &mut bound, entry.var.clone(), value)?;
                }
                StoreInit::Iota { qual, desc, count } => {
                    let n = self.resolve_count(count)?;
                    if n < 0 {
                        return Err(InstantiateError::NegativeCount(n));
                    }
                    let mut xs: Vec<i64> = (0..n).collect();
                    if *desc {
                        xs.reverse();
                    }
                    let value = Value::new(*qual, machine::Prevalue::Const(Constant::Array(xs)));
                    push_cell(&mut cells, &mut bound, entry.var.clone(), value)?;
                }
                StoreInit::IotaList { qual, count } => {
                    let n = self.resolve_count(count)?;
                    if n < 0 {
                        return Err(InstantiateError::NegativeCount(n));
                    }
                    let stem = entry.var.as_str();
                    let elem = |i: i64| Var(format!("{stem}_e{i}"));
                    let cell = |i: i64| {
                        if i == 0 {
                            entry.var.clone()
                        } else {
                            Var(format!("{stem}_c{i}"))
                        }
                    };
                    for i in 0..n {
                        let v = Value::new(*qual, machine::Prevalue::Const(Constant::Int(i)));
                        push_cell(&mut cells, &mut bound, elem(i), v)?;
                    }
                    let nil_name = if n == 0 {
                        entry.var.clone()
                    } else {
                        Var(format!("{stem}_nil"))
                    };
                    push_cell(
                        &mut cells,
                        &mut bound,
                        nil_name.clone(),
                        Value::new(*qual, machine::Prevalue::Nil),
                    )?;
                    let mut tail = nil_name;
                    for i in (0..n).rev() {
                        let name = cell(i);
                        let v =
                            Value::new(*qual, machine::Prevalue::Cons(elem(i), tail.clone()));
                        push_cell(&mut cells, &mut bound, name.clone(), v)?;
                        tail = name;
                    }
                }
            }
        }
        let mut main = self.main.clone();
        resolve_ops_by_name(&mut main, &signature);
        let store = Store::from_cells(cells).map_err(InstantiateError::DuplicateStoreVar)?;
        Ok(Instance {
            signature,
            configuration: Configuration::new(store, main),
            declared,
        })
    }
}

fn push_cell(
    cells: &mut Vec<(Var, Value)>,
    bound: &mut BTreeSet<Var>,
    var: Var,
    value: Value,
) -> Result<(), InstantiateError> {
    if !bound.insert(var.clone()) {
        return Err(InstantiateError::DuplicateStoreVar(var));
    }
    cells.push((var, value));
    Ok(())
}

fn check_references(
    var: &Var,
    value: &Value,
    bound: &BTreeSet<Var>,
    annotated: bool,
) -> Result<(), InstantiateError> {
    let refs: Vec<Var> = match &value.prevalue {
        machine::Prevalue::Tuple(vs) => vs.clone(),
        machine::Prevalue::Cons(h, t) => vec![h.clone(), t.clone()],
        machine::Prevalue::Closure(param, _, body) => free_vars(body)
            .into_iter()
            .filter(|v| v != param)
            .collect(),
        _ => Vec::new(),
    };
    let is_closure = matches!(value.prevalue, machine::Prevalue::Closure(..));
    for r in refs {
        if r == *var {
            let self_ok = is_closure && value.qual == Qualifier::Un && annotated;
            if !self_ok {
                return Err(InstantiateError::BadSelfReference(var.clone()));
            }
        } else if !bound.contains(&r) {
            return Err(InstantiateError::ForwardReference {
                var: var.clone(),
                reference: r,
            });
        }
    }
    Ok(())
}

/// Bind operator occurrences that are unambiguous by name alone: a single
/// entry, or several identical ones. Occurrences needing type-directed
/// resolution stay unresolved for the checker.
pub fn resolve_ops_by_name(e: &mut Expr, sig: &Signature) {
    if let ExprKind::Op(r, _) = &mut e.kind {
        if matches!(r.target, OpTarget::Unresolved) {
            let mut it = sig.candidates(&r.name);
            if let Some((first_idx, first)) = it.next() {
                if it.all(|(_, e2)| e2.ty == first.ty && e2.prim == first.prim) {
                    r.target = OpTarget::Indexed(first_idx);
                }
            }
        }
    }
    for child in expr_children_mut(e) {
        resolve_ops_by_name(child, sig);
    }
}

fn expr_children_mut(e: &mut Expr) -> Vec<&mut Expr> {
    match &mut e.kind {
        ExprKind::Var(_) | ExprKind::Nil(_) => vec![],
        ExprKind::Op(_, args) => args.iter_mut().collect(),
        ExprKind::Tuple(_, items) => items.iter_mut().collect(),
        ExprKind::App(f, a) => vec![f, a],
        ExprKind::Lambda(_, _, _, b) => vec![b],
        ExprKind::Split(s, _, b) => vec![s, b],
        ExprKind::If(c, t, e2) => vec![c, t, e2],
        ExprKind::Let(_, bound, body) => vec![bound, body],
        ExprKind::Cons(_, h, t) => vec![h, t],
        ExprKind::Case(s, n, _, _, c) => vec![s, n, c],
    }
}

// ---------------------------------------------------------------------------
// Lexing.

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    LParen,
    RParen,
    Lt,
    Gt,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Comma,
    Colon,
    Dot,
    Backslash,
    Arrow,
    LeftArrow,
    At,
    Eq,
    Plus,
    Minus,
    Star,
    Eof,
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    off: u32,
    line: u32,
}

fn lex(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0usize;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c == '#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len()
                && ((bytes[i] as char).is_ascii_alphanumeric()
                    || bytes[i] == b'_'
                    || bytes[i] == b'\'')
            {
                i += 1;
            }
            Tok::Ident(src[start..i].to_string())
        } else if c.is_ascii_digit() {
            while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                i += 1;
            }
            let n: i64 = src[start..i].parse().map_err(|_| ParseError {
                line: line_of(src, start),
                col: col_of(src, start),
                message: "integer literal out of range".to_string(),
            })?;
            Tok::Int(n)
        } else {
            i += 1;
            match c {
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                '<' => {
                    if i < bytes.len() && bytes[i] == b'-' {
                        i += 1;
                        Tok::LeftArrow
                    } else {
                        Tok::Lt
                    }
                }
                '>' => Tok::Gt,
                '[' => Tok::LBracket,
                ']' => Tok::RBracket,
                '{' => Tok::LBrace,
                '}' => Tok::RBrace,
                ',' => Tok::Comma,
                ':' => Tok::Colon,
                '.' => Tok::Dot,
                '\\' => Tok::Backslash,
                '@' => Tok::At,
                '=' => Tok::Eq,
                '+' => Tok::Plus,
                '-' => {
                    if i < bytes.len() && bytes[i] == b'>' {
                        i += 1;
                        Tok::Arrow
                    } else {
                        Tok::Minus
                    }
                }
                '*' => Tok::Star,
                other => {
                    return Err(ParseError {
                        line: line_of(src, start),
                        col: col_of(src, start),
                        message: format!("unexpected character `{other}`"),
                    })
                }
            }
        };
        out.push(Spanned {
            tok,
            off: start as u32,
            line: line_of(src, start),
        });
    }
    out.push(Spanned {
        tok: Tok::Eof,
        off: src.len() as u32,
        line: line_of(src, src.len()),
    });
    Ok(out)
}

fn line_of(src: &str, off: usize) -> u32 {
    src[..off.min(src.len())].bytes().filter(|&b| b == b'\n').count() as u32 + 1
}

fn col_of(src: &str, off: usize) -> u32 {
    let off = off.min(src.len());
    let start = src[..off].rfind('\n').map(|p| p + 1).unwrap_or(0);
    (off - start) as u32 + 1
}

const KEYWORDS: &[&str] = &[
    "li", "un", "hi", "if", "then", "else", "spl", "as", "in", "let", "case", "of", "true",
    "false", "int", "bool", "array", "params", "signature", "store", "main",
];

// ---------------------------------------------------------------------------
// Parsing.

struct Parser<'a> {
    src: &'a str,
    toks: Vec<Spanned>,
    pos: usize,
    sig_names: BTreeSet<String>,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self, ParseError> {
        Ok(Parser {
            src,
            toks: lex(src)?,
            pos: 0,
            sig_names: BTreeSet::new(),
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek2(&self) -> &Tok {
        &self.toks[(self.pos + 1).min(self.toks.len() - 1)].tok
    }

    fn here(&self) -> u32 {
        self.toks[self.pos].off
    }

    fn next(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        let off = self.toks[self.pos].off as usize;
        Err(ParseError {
            line: line_of(self.src, off),
            col: col_of(self.src, off),
            message: message.into(),
        })
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == want {
            self.next();
            Ok(())
        } else {
            self.error(format!("expected {what}"))
        }
    }

    fn eat_ident(&mut self, word: &str) -> bool {
        if matches!(self.peek(), Tok::Ident(s) if s == word) {
            self.next();
            return true;
        }
        false
    }

    fn peek_ident(&self, word: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == word)
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.next();
                Ok(s)
            }
            _ => self.error(format!("expected {what}")),
        }
    }

    fn binder(&mut self, what: &str) -> Result<Var, ParseError> {
        let name = self.ident(what)?;
        if KEYWORDS.contains(&name.as_str()) {
            return self.error(format!("`{name}` is a keyword"));
        }
        Ok(Var::new(name))
    }

    fn int(&mut self, what: &str) -> Result<i64, ParseError> {
        match *self.peek() {
            Tok::Int(n) => {
                self.next();
                Ok(n)
            }
            _ => self.error(format!("expected {what}")),
        }
    }

    fn at_section(&self, name: &str) -> bool {
        self.peek_ident(name) && *self.peek2() == Tok::Colon
    }

    fn at_any_section(&self) -> bool {
        ["params", "signature", "store", "main"]
            .iter()
            .any(|s| self.at_section(s))
    }

    // -- sections ---------------------------------------------------------

    fn program(&mut self) -> Result<ProgramFile, ParseError> {
        let mut params = Vec::new();
        if self.at_section("params") {
            self.next();
            self.next();
            while !self.at_any_section() && *self.peek() != Tok::Eof {
                let name = self.ident("a parameter name")?;
                self.expect(Tok::Eq, "`=` after the parameter name")?;
                let value = self.int("an integer parameter value")?;
                params.push((name, value));
            }
        }
        let mut entries = Vec::new();
        if self.at_section("signature") {
            self.next();
            self.next();
            while !self.at_any_section() && *self.peek() != Tok::Eof {
                entries.push(self.sig_entry()?);
            }
        }
        self.sig_names = entries.iter().map(|e: &SigEntry| e.name.clone()).collect();
        let off = self.here() as usize;
        let signature = Signature::new(entries).map_err(|e| ParseError {
            line: line_of(self.src, off),
            col: col_of(self.src, off),
            message: e.to_string(),
        })?;
        let mut store = Vec::new();
        if self.at_section("store") {
            self.next();
            self.next();
            let mut seen = BTreeSet::new();
            while !self.at_any_section() && *self.peek() != Tok::Eof {
                let entry = self.store_entry()?;
                if !seen.insert(entry.var.clone()) {
                    return self.error(format!("duplicate store variable `{}`", entry.var));
                }
                store.push(entry);
            }
        }
        if !self.at_section("main") {
            return self.error("expected a `main:` section");
        }
        self.next();
        self.next();
        let main = self.expr()?;
        if *self.peek() != Tok::Eof {
            return self.error("expected end of file after the main expression");
        }
        Ok(ProgramFile {
            params,
            signature,
            store,
            main,
        })
    }

    /// Operator names: identifiers, numerals, the infix symbols, and the
    /// bracket operators `[]` and `[<-]`.
    fn sig_name(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                if ["store", "main", "signature", "params"].contains(&s.as_str()) {
                    return self.error("section keyword cannot name an operator");
                }
                self.next();
                Ok(s)
            }
            Tok::Int(n) => {
                self.next();
                Ok(n.to_string())
            }
            Tok::Eq => {
                self.next();
                Ok("=".to_string())
            }
            Tok::Plus => {
                self.next();
                Ok("+".to_string())
            }
            Tok::Minus => {
                self.next();
                Ok("-".to_string())
            }
            Tok::Star => {
                self.next();
                Ok("*".to_string())
            }
            Tok::Lt => {
                self.next();
                Ok("<".to_string())
            }
            Tok::LBracket => {
                self.next();
                if *self.peek() == Tok::RBracket {
                    self.next();
                    Ok("[]".to_string())
                } else if *self.peek() == Tok::LeftArrow {
                    self.next();
                    self.expect(Tok::RBracket, "`]` after `[<-`")?;
                    Ok("[<-]".to_string())
                } else {
                    self.error("expected `[]` or `[<-]`")
                }
            }
            _ => self.error("expected an operator name"),
        }
    }

    fn sig_entry(&mut self) -> Result<SigEntry, ParseError> {
        let name = self.sig_name()?;
        self.expect(Tok::Colon, "`:` after the operator name")?;
        let ty = self.operator_type()?;
        self.expect(Tok::Eq, "`=` before the primitive key")?;
        let key = self.ident("a primitive key")?;
        let prim = match PrimKey::parse(&key) {
            Some(p) => p,
            None => return self.error(format!("unknown primitive key `{key}`")),
        };
        Ok(SigEntry { name, ty, prim })
    }

    fn operator_type(&mut self) -> Result<OperatorType, ParseError> {
        let mut inputs = Vec::new();
        if *self.peek() == Tok::LParen {
            self.next();
            if *self.peek() != Tok::RParen {
                loop {
                    let q = self.pseudoqualifier()?;
                    let p = self.pretype()?;
                    inputs.push((q, p));
                    if *self.peek() == Tok::Comma {
                        self.next();
                    } else {
                        break;
                    }
                }
            }
            self.expect(Tok::RParen, "`)` after the operator inputs")?;
            self.expect(Tok::Arrow, "`->` after the operator inputs")?;
        }
        let q = self.qualifier("the output qualifier")?;
        let p = self.pretype()?;
        Ok(OperatorType {
            inputs,
            output: (q, p),
        })
    }

    fn pseudoqualifier(&mut self) -> Result<PseudoQualifier, ParseError> {
        if self.eat_ident("li") {
            Ok(PseudoQualifier::Li)
        } else if self.eat_ident("un") {
            Ok(PseudoQualifier::Un)
        } else if self.eat_ident("hi") {
            Ok(PseudoQualifier::Hi)
        } else {
            self.error("expected a pseudoqualifier (li, un or hi)")
        }
    }

    fn qualifier(&mut self, what: &str) -> Result<Qualifier, ParseError> {
        if self.eat_ident("li") {
            Ok(Qualifier::Li)
        } else if self.eat_ident("un") {
            Ok(Qualifier::Un)
        } else if self.peek_ident("hi") {
            self.error("hi is not a value qualifier; it only marks signature input positions")
        } else {
            self.error(format!("expected a qualifier (li or un) for {what}"))
        }
    }

    fn pretype(&mut self) -> Result<Pretype, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) if s == "int" => {
                self.next();
                Ok(Pretype::Base(BaseType::Int))
            }
            Tok::Ident(s) if s == "bool" => {
                self.next();
                Ok(Pretype::Base(BaseType::Bool))
            }
            Tok::Ident(s) if s == "array" => {
                self.next();
                Ok(Pretype::Base(BaseType::Array))
            }
            Tok::Lt => {
                self.next();
                let mut items = vec![self.type_()?];
                while *self.peek() == Tok::Comma {
                    self.next();
                    items.push(self.type_()?);
                }
                self.expect(Tok::Gt, "`>` closing the tuple type")?;
                Ok(Pretype::Tuple(items))
            }
            Tok::LBracket => {
                self.next();
                let t = self.type_()?;
                self.expect(Tok::RBracket, "`]` closing the list type")?;
                Ok(Pretype::List(Box::new(t)))
            }
            Tok::LParen => {
                self.next();
                let dom = self.type_()?;
                self.expect(Tok::Arrow, "`->` in a function type")?;
                let cod = self.type_()?;
                self.expect(Tok::RParen, "`)` closing the function type")?;
                Ok(Pretype::Arrow(Box::new(dom), Box::new(cod)))
            }
            _ => self.error("expected a pretype"),
        }
    }

    fn type_(&mut self) -> Result<Type, ParseError> {
        let q = self.qualifier("a type")?;
        let p = self.pretype()?;
        Ok(Type::new(q, p))
    }

    // -- store ------------------------------------------------------------

    fn store_entry(&mut self) -> Result<StoreEntry, ParseError> {
        let var = self.binder("a store variable")?;
        let declared = if *self.peek() == Tok::Colon {
            self.next();
            Some(self.type_()?)
        } else {
            None
        };
        self.expect(Tok::Eq, "`=` after the store variable")?;
        // Array and list builders.
        if self.peek_ident("li") || self.peek_ident("un") {
            if let Tok::Ident(b) = self.peek2().clone() {
                if ["iota", "iota_rev", "iota_list"].contains(&b.as_str()) {
                    let qual = self.qualifier("a store value")?;
                    self.next();
                    self.expect(Tok::LParen, "`(` after the builder")?;
                    let count = match self.peek().clone() {
                        Tok::Int(n) => {
                            self.next();
                            ParamRef::Lit(n)
                        }
                        Tok::Ident(s) => {
                            self.next();
                            ParamRef::Name(s)
                        }
                        _ => return self.error("expected a parameter name or integer"),
                    };
                    self.expect(Tok::RParen, "`)` after the builder argument")?;
                    let init = match b.as_str() {
                        "iota" => StoreInit::Iota {
                            qual,
                            desc: false,
                            count,
                        },
                        "iota_rev" => StoreInit::Iota {
                            qual,
                            desc: true,
                            count,
                        },
                        _ => StoreInit::IotaList { qual, count },
                    };
                    return Ok(StoreEntry {
                        var,
                        declared,
                        init,
                    });
                }
            }
        }
        let value = self.expr()?;
        Ok(StoreEntry {
            var,
            declared,
            init: StoreInit::Value(value),
        })
    }

    // -- expressions --------------------------------------------------------

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let start = self.here();
        let lhs = self.app()?;
        let infix = match self.peek() {
            Tok::Eq => Some("="),
            Tok::Plus => Some("+"),
            Tok::Minus => Some("-"),
            Tok::Star => Some("*"),
            Tok::Lt => Some("<"),
            _ => None,
        };
        if let Some(name) = infix {
            self.next();
            let rhs = self.app()?;
            if matches!(
                self.peek(),
                Tok::Eq | Tok::Plus | Tok::Minus | Tok::Star | Tok::Lt
            ) {
                return self.error("chained infix operators need parentheses");
            }
            let mut e = Expr::op(OpRef::named(name), vec![lhs, rhs]);
            e.span = Span {
                lo: start,
                hi: self.here(),
            };
            return Ok(e);
        }
        Ok(lhs)
    }

    fn app(&mut self) -> Result<Expr, ParseError> {
        let start = self.here();
        let mut e = self.postfix()?;
        loop {
            // A juxtaposed argument must start on the line where the
            // function part ended; otherwise the next line begins a new
            // entry or section.
            let same_line =
                self.pos > 0 && self.toks[self.pos].line == self.toks[self.pos - 1].line;
            let continues = same_line
                && match self.peek() {
                    Tok::LParen | Tok::Int(_) => true,
                    Tok::Ident(s) => !KEYWORDS.contains(&s.as_str()),
                    _ => false,
                };
            if !continues {
                return Ok(e);
            }
            let arg = self.postfix()?;
            let mut next = Expr::app(e, arg);
            next.span = Span {
                lo: start,
                hi: self.here(),
            };
            e = next;
        }
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        let start = self.here();
        let mut e = self.atom()?;
        while *self.peek() == Tok::LBracket {
            self.next();
            let index = self.expr()?;
            if *self.peek() == Tok::LeftArrow {
                self.next();
                let value = self.expr()?;
                self.expect(Tok::RBracket, "`]` closing the array update")?;
                e = Expr::op(OpRef::named("[<-]"), vec![e, index, value]);
            } else {
                self.expect(Tok::RBracket, "`]` closing the array read")?;
                e = Expr::op(OpRef::named("[]"), vec![e, index]);
            }
            e.span = Span {
                lo: start,
                hi: self.here(),
            };
        }
        Ok(e)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let start = self.here();
        let spanned = |mut e: Expr, hi: u32| {
            e.span = Span { lo: start, hi };
            e
        };
        match self.peek().clone() {
            Tok::LParen => {
                self.next();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Int(n) => {
                self.next();
                if *self.peek() == Tok::At {
                    self.next();
                    let k = self.int("an entry index after `@`")?;
                    return Ok(spanned(
                        Expr::op(OpRef::indexed(n.to_string(), k as usize), vec![]),
                        self.here(),
                    ));
                }
                Ok(spanned(
                    Expr::op(OpRef::named(n.to_string()), vec![]),
                    self.here(),
                ))
            }
            Tok::Ident(s) => match s.as_str() {
                "hi" => self.error(
                    "hi is not a value qualifier; it only marks signature input positions",
                ),
                "li" | "un" => {
                    let q = self.qualifier("a value")?;
                    self.qualified(q, start)
                }
                "if" => {
                    self.next();
                    let c = self.expr()?;
                    if !self.eat_ident("then") {
                        return self.error("expected `then`");
                    }
                    let t = self.expr()?;
                    if !self.eat_ident("else") {
                        return self.error("expected `else`");
                    }
                    let e2 = self.expr()?;
                    Ok(spanned(Expr::if_(c, t, e2), self.here()))
                }
                "spl" => {
                    self.next();
                    let s = self.expr()?;
                    if !self.eat_ident("as") {
                        return self.error("expected `as`");
                    }
                    self.expect(Tok::Lt, "`<` opening the pattern")?;
                    let mut pat = vec![self.binder("a pattern variable")?];
                    while *self.peek() == Tok::Comma {
                        self.next();
                        pat.push(self.binder("a pattern variable")?);
                    }
                    self.expect(Tok::Gt, "`>` closing the pattern")?;
                    for (i, v) in pat.iter().enumerate() {
                        if pat[..i].contains(v) {
                            return self.error(format!("duplicate pattern variable `{v}`"));
                        }
                    }
                    if !self.eat_ident("in") {
                        return self.error("expected `in`");
                    }
                    let body = self.expr()?;
                    Ok(spanned(Expr::split(s, pat, body), self.here()))
                }
                "let" => {
                    self.next();
                    let x = self.binder("a variable")?;
                    self.expect(Tok::Eq, "`=` after the let binder")?;
                    let bound = self.expr()?;
                    if !self.eat_ident("in") {
                        return self.error("expected `in`");
                    }
                    let body = self.expr()?;
                    Ok(spanned(Expr::let_(x.as_str(), bound, body), self.here()))
                }
                "case" => {
                    self.next();
                    let s = self.expr()?;
                    if !self.eat_ident("of") {
                        return self.error("expected `of`");
                    }
                    self.expect(Tok::LParen, "`(` opening the case arms")?;
                    let nil_arm = self.expr()?;
                    self.expect(Tok::Comma, "`,` between the case arms")?;
                    self.expect(Tok::LParen, "`(` opening the cons pattern")?;
                    let z1 = self.binder("a pattern variable")?;
                    self.expect(Tok::Colon, "`:` in the cons pattern")?;
                    let z2 = self.binder("a pattern variable")?;
                    self.expect(Tok::RParen, "`)` closing the cons pattern")?;
                    if z1 == z2 {
                        return self.error(format!("duplicate pattern variable `{z1}`"));
                    }
                    self.expect(Tok::Arrow, "`->` before the cons arm")?;
                    let cons_arm = self.expr()?;
                    self.expect(Tok::RParen, "`)` closing the case arms")?;
                    Ok(spanned(
                        Expr::case(s, nil_arm, z1.as_str(), z2.as_str(), cons_arm),
                        self.here(),
                    ))
                }
                _ if KEYWORDS.contains(&s.as_str()) => {
                    self.error(format!("`{s}` cannot start an expression"))
                }
                _ => {
                    self.next();
                    // name@k pins a signature entry.
                    if *self.peek() == Tok::At {
                        self.next();
                        let k = self.int("an entry index after `@`")?;
                        let r = OpRef::indexed(s, k as usize);
                        let args = self.call_args()?;
                        return Ok(spanned(Expr::op(r, args), self.here()));
                    }
                    if self.sig_names.contains(&s) {
                        let r = OpRef::named(s);
                        let args = self.call_args()?;
                        return Ok(spanned(Expr::op(r, args), self.here()));
                    }
                    Ok(spanned(Expr::var(s), self.here()))
                }
            },
            _ => self.error("expected an expression"),
        }
    }

    /// Optional parenthesized argument list after an operator name.
    fn call_args(&mut self) -> Result<Vec<Expr>, ParseError> {
        if *self.peek() != Tok::LParen {
            return Ok(vec![]);
        }
        self.next();
        let mut args = Vec::new();
        if *self.peek() != Tok::RParen {
            args.push(self.expr()?);
            while *self.peek() == Tok::Comma {
                self.next();
                args.push(self.expr()?);
            }
        }
        self.expect(Tok::RParen, "`)` closing the arguments")?;
        Ok(args)
    }

    /// Forms introduced by a value qualifier.
    fn qualified(&mut self, q: Qualifier, start: u32) -> Result<Expr, ParseError> {
        let spanned = |mut e: Expr, hi: u32| {
            e.span = Span { lo: start, hi };
            e
        };
        match self.peek().clone() {
            Tok::Lt => {
                self.next();
                let mut items = vec![self.expr()?];
                while *self.peek() == Tok::Comma {
                    self.next();
                    items.push(self.expr()?);
                }
                self.expect(Tok::Gt, "`>` closing the tuple")?;
                Ok(spanned(Expr::tuple(q, items), self.here()))
            }
            Tok::Backslash => {
                self.next();
                let x = self.binder("a parameter")?;
                self.expect(Tok::Colon, "`:` before the parameter type")?;
                let t = self.type_()?;
                self.expect(Tok::Dot, "`.` before the lambda body")?;
                let body = self.expr()?;
                Ok(spanned(Expr::lambda(q, x.as_str(), t, body), self.here()))
            }
            Tok::LBracket => {
                self.next();
                self.expect(Tok::RBracket, "`]` of the empty list")?;
                Ok(spanned(Expr::nil(q), self.here()))
            }
            Tok::LParen => {
                self.next();
                let h = self.expr()?;
                self.expect(Tok::Colon, "`:` between the list head and tail")?;
                let t = self.expr()?;
                self.expect(Tok::RParen, "`)` closing the list cell")?;
                Ok(spanned(Expr::cons(q, h, t), self.here()))
            }
            Tok::LBrace => {
                self.next();
                let mut xs = Vec::new();
                if *self.peek() != Tok::RBrace {
                    xs.push(self.int("an array element")?);
                    while *self.peek() == Tok::Comma {
                        self.next();
                        xs.push(self.int("an array element")?);
                    }
                }
                self.expect(Tok::RBrace, "`}` closing the array")?;
                Ok(spanned(
                    Expr::op(OpRef::constant(q, Constant::Array(xs)), vec![]),
                    self.here(),
                ))
            }
            Tok::Int(n) => {
                self.next();
                Ok(spanned(
                    Expr::op(OpRef::constant(q, Constant::Int(n)), vec![]),
                    self.here(),
                ))
            }
            Tok::Ident(s) if s == "true" || s == "false" => {
                self.next();
                Ok(spanned(
                    Expr::op(OpRef::constant(q, Constant::Bool(s == "true")), vec![]),
                    self.here(),
                ))
            }
            _ => self.error("expected a tuple, lambda, list, array or constant after the qualifier"),
        }
    }
}

/// Parse a program file.
pub fn parse_program(src: &str) -> Result<ProgramFile, ParseError> {
    Parser::new(src)?.program()
}

/// Parse a single expression against a signature's operator names.
pub fn parse_expr(src: &str, sig: &Signature) -> Result<Expr, ParseError> {
    let mut p = Parser::new(src)?;
    p.sig_names = sig.entries().iter().map(|e| e.name.clone()).collect();
    let e = p.expr()?;
    if *p.peek() != Tok::Eof {
        return p.error("expected end of input");
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// Printing.

/// Does this expression print as a self-delimiting unit? Infix forms count
/// (they print inside their own parentheses); bare nullary operator names
/// do not, because a following `(` would read as their argument list.
fn is_unit(e: &Expr) -> bool {
    match &e.kind {
        ExprKind::Var(_) => true,
        ExprKind::Op(r, args) => match r.target {
            OpTarget::Const(..) => false,
            _ => !args.is_empty(),
        },
        _ => false,
    }
}

fn print_unit(e: &Expr) -> String {
    let s = print_expr(e);
    if is_unit(e) {
        s
    } else {
        format!("({s})")
    }
}

pub fn print_expr(e: &Expr) -> String {
    match &e.kind {
        ExprKind::Var(v) => v.to_string(),
        ExprKind::Op(r, args) => {
            if let OpTarget::Const(q, c) = &r.target {
                return format!("{q} {c}");
            }
            // Only identifier and numeral names accept the written @k form.
            let name = match r.target {
                OpTarget::Indexed(k) if !is_symbolic(&r.name) => format!("{}@{k}", r.name),
                _ => r.name.clone(),
            };
            match (r.name.as_str(), args.len()) {
                ("[]", 2) => format!("{}[{}]", print_unit(&args[0]), print_expr(&args[1])),
                ("[<-]", 3) => format!(
                    "{}[{} <- {}]",
                    print_unit(&args[0]),
                    print_expr(&args[1]),
                    print_expr(&args[2])
                ),
                ("=" | "+" | "-" | "*" | "<", 2) => format!(
                    "({} {} {})",
                    print_unit(&args[0]),
                    r.name,
                    print_unit(&args[1])
                ),
                (_, 0) => name,
                _ => {
                    let inner: Vec<String> = args.iter().map(print_expr).collect();
                    format!("{name}({})", inner.join(", "))
                }
            }
        }
        ExprKind::Tuple(q, items) => {
            let inner: Vec<String> = items.iter().map(print_expr).collect();
            format!("{q} <{}>", inner.join(", "))
        }
        ExprKind::App(..) => {
            let mut spine = Vec::new();
            let mut cur = e;
            while let ExprKind::App(f, a) = &cur.kind {
                spine.push(print_unit(a));
                cur = f;
            }
            spine.push(print_unit(cur));
            spine.reverse();
            spine.join(" ")
        }
        ExprKind::Lambda(q, x, t, body) => format!("{q} \\{x}: {t}. {}", print_expr(body)),
        ExprKind::Split(s, pat, body) => {
            let vars: Vec<String> = pat.iter().map(|v| v.to_string()).collect();
            format!(
                "spl {} as <{}> in {}",
                print_expr(s),
                vars.join(", "),
                print_expr(body)
            )
        }
        ExprKind::If(c, t, e2) => format!(
            "if {} then {} else {}",
            print_expr(c),
            print_expr(t),
            print_expr(e2)
        ),
        ExprKind::Let(x, bound, body) => {
            format!("let {x} = {} in {}", print_expr(bound), print_expr(body))
        }
        ExprKind::Nil(q) => format!("{q} []"),
        ExprKind::Cons(q, h, t) => format!("{q} ({} : {})", print_expr(h), print_expr(t)),
        ExprKind::Case(s, nil_arm, z1, z2, cons_arm) => format!(
            "case {} of ({}, ({z1} : {z2}) -> {})",
            print_expr(s),
            print_expr(nil_arm),
            print_expr(cons_arm)
        ),
    }
}

fn is_symbolic(name: &str) -> bool {
    matches!(name, "=" | "+" | "-" | "*" | "<" | "[]" | "[<-]")
}

fn print_operator_type(t: &OperatorType) -> String {
    if t.inputs.is_empty() {
        format!("{} {}", t.output.0, t.output.1)
    } else {
        let inputs: Vec<String> = t
            .inputs
            .iter()
            .map(|(q, p)| format!("{q} {p}"))
            .collect();
        format!(
            "({}) -> {} {}",
            inputs.join(", "),
            t.output.0,
            t.output.1
        )
    }
}

fn param_ref(r: &ParamRef) -> String {
    match r {
        ParamRef::Name(s) => s.clone(),
        ParamRef::Lit(n) => n.to_string(),
    }
}

/// Render a program file; `parse_program` returns a structurally equal
/// template.
pub fn print_program(p: &ProgramFile) -> String {
    let mut out = String::new();
    if !p.params.is_empty() {
        out.push_str("params:\n");
        for (k, v) in &p.params {
            let _ = writeln!(out, "  {k} = {v}");
        }
        out.push('\n');
    }
    if !p.signature.entries().is_empty() {
        out.push_str("signature:\n");
        for e in p.signature.entries() {
            let _ = writeln!(
                out,
                "  {} : {} = {}",
                e.name,
                print_operator_type(&e.ty),
                e.prim.as_str()
            );
        }
        out.push('\n');
    }
    if !p.store.is_empty() {
        out.push_str("store:\n");
        for entry in &p.store {
            let init = match &entry.init {
                StoreInit::Value(e) => print_expr(e),
                StoreInit::Iota {
                    qual,
                    desc: false,
                    count,
                } => format!("{qual} iota({})", param_ref(count)),
                StoreInit::Iota {
                    qual,
                    desc: true,
                    count,
                } => format!("{qual} iota_rev({})", param_ref(count)),
                StoreInit::IotaList { qual, count } => {
                    format!("{qual} iota_list({})", param_ref(count))
                }
            };
            match &entry.declared {
                Some(t) => {
                    let _ = writeln!(out, "  {} : {t} =\n    {init}", entry.var);
                }
                None => {
                    let _ = writeln!(out, "  {} = {init}", entry.var);
                }
            }
        }
        out.push('\n');
    }
    let _ = writeln!(out, "main:\n  {}", print_expr(&p.main));
    out
}
