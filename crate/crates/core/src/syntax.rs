//! Abstract syntax: qualifiers, types, signatures, expressions and
//! substitution.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// A value qualifier. Linear data is consumed exactly once and removed from
/// the store at that use; unrestricted data may be shared and is never
/// removed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum Qualifier {
    Li,
    Un,
}

/// A qualifier extended with `hi`, the hidden (read-only) mode for linear
/// base-type data in operator input positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum PseudoQualifier {
    Li,
    Un,
    Hi,
}

impl From<Qualifier> for PseudoQualifier {
    fn from(q: Qualifier) -> Self {
        match q {
            Qualifier::Li => PseudoQualifier::Li,
            Qualifier::Un => PseudoQualifier::Un,
        }
    }
}

impl fmt::Display for Qualifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Qualifier::Li => "li",
            Qualifier::Un => "un",
        })
    }
}

impl fmt::Display for PseudoQualifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PseudoQualifier::Li => "li",
            PseudoQualifier::Un => "un",
            PseudoQualifier::Hi => "hi",
        })
    }
}

/// The order on pseudoqualifiers: the least reflexive transitive relation
/// with `li ⊑ un`. `hi` relates only to itself.
pub fn qualifier_leq(a: PseudoQualifier, b: PseudoQualifier) -> bool {
    a == b || (a == PseudoQualifier::Li && b == PseudoQualifier::Un)
}

/// Base pretypes with machine-level constant representations. Structural
/// shapes (tuples, lists) may also appear in signature positions, but only
/// these named bases can be hidden: the store rules demand that a hidden
/// cell hold a constant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum BaseType {
    Int,
    Bool,
    Array,
}

impl fmt::Display for BaseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaseType::Int => "int",
            BaseType::Bool => "bool",
            BaseType::Array => "array",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pretype {
    Base(BaseType),
    Tuple(Vec<Type>),
    Arrow(Box<Type>, Box<Type>),
    List(Box<Type>),
    /// A unification hole standing for an entire unknown type, introduced
    /// for the element type of a bare `q []` literal and resolved by the
    /// checker against the context of use. The qualifier stored alongside a
    /// hole carries no meaning.
    Hole(u32),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Type {
    pub qual: Qualifier,
    pub pretype: Pretype,
}

impl Type {
    pub fn new(qual: Qualifier, pretype: Pretype) -> Self {
        Type { qual, pretype }
    }

    pub fn base(qual: Qualifier, b: BaseType) -> Self {
        Type::new(qual, Pretype::Base(b))
    }
}

impl fmt::Display for Pretype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pretype::Base(b) => write!(f, "{b}"),
            Pretype::Tuple(ts) => {
                f.write_str("<")?;
                for (i, t) in ts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{t}")?;
                }
                f.write_str(">")
            }
            Pretype::Arrow(a, b) => write!(f, "({a} -> {b})"),
            Pretype::List(t) => write!(f, "[{t}]"),
            Pretype::Hole(_) => f.write_str("?"),
        }
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.qual, self.pretype)
    }
}

/// A context entry: either a proper type or a hidden base type.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PseudoType {
    Proper(Type),
    Hidden(BaseType),
}

impl PseudoType {
    pub fn qual(&self) -> PseudoQualifier {
        match self {
            PseudoType::Proper(t) => t.qual.into(),
            PseudoType::Hidden(_) => PseudoQualifier::Hi,
        }
    }
}

impl fmt::Display for PseudoType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PseudoType::Proper(t) => write!(f, "{t}"),
            PseudoType::Hidden(b) => write!(f, "hi {b}"),
        }
    }
}

/// `q(T)`: a value of type `T` may sit inside a `q`-qualified structure.
/// Hidden entries carry no usage restriction, so every qualifier accepts
/// them.
pub fn type_is_q(q: Qualifier, t: &PseudoType) -> bool {
    match t {
        PseudoType::Proper(ty) => qualifier_leq(q.into(), ty.qual.into()),
        PseudoType::Hidden(_) => true,
    }
}

/// `q(Π)`: the pointwise extension of [`type_is_q`] to contexts.
pub fn ctx_is_q(q: Qualifier, ctx: &TypeContext) -> bool {
    ctx.entries().iter().all(|(_, t)| type_is_q(q, t))
}

/// A program variable.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub struct Var(pub String);

impl Var {
    pub fn new(name: impl Into<String>) -> Self {
        Var(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Var {
    fn from(s: &str) -> Self {
        Var(s.to_string())
    }
}

/// An ordered type context. A variable appears at most once.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct TypeContext(Vec<(Var, PseudoType)>);

impl TypeContext {
    pub fn empty() -> Self {
        TypeContext(Vec::new())
    }

    /// Builds a context, rejecting duplicate variables.
    pub fn new(entries: Vec<(Var, PseudoType)>) -> Result<Self, Var> {
        let mut seen = BTreeSet::new();
        for (v, _) in &entries {
            if !seen.insert(v.clone()) {
                return Err(v.clone());
            }
        }
        Ok(TypeContext(entries))
    }

    pub fn push(&mut self, v: Var, t: PseudoType) -> Result<(), Var> {
        if self.lookup(&v).is_some() {
            return Err(v);
        }
        self.0.push((v, t));
        Ok(())
    }

    pub fn entries(&self) -> &[(Var, PseudoType)] {
        &self.0
    }

    pub fn lookup(&self, v: &Var) -> Option<&PseudoType> {
        self.0.iter().find(|(x, _)| x == v).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for TypeContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (v, t)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{v}: {t}")?;
        }
        Ok(())
    }
}

/// A machine-level constant: the prevalues of base type.
#[derive(Clone, Debug, PartialEq, Eq, Hash, serde::Serialize)]
pub enum Constant {
    Int(i64),
    Bool(bool),
    Array(Vec<i64>),
}

impl Constant {
    pub fn base_type(&self) -> BaseType {
        match self {
            Constant::Int(_) => BaseType::Int,
            Constant::Bool(_) => BaseType::Bool,
            Constant::Array(_) => BaseType::Array,
        }
    }
}

impl fmt::Display for Constant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constant::Int(n) => write!(f, "{n}"),
            Constant::Bool(b) => write!(f, "{b}"),
            Constant::Array(xs) => {
                f.write_str("{")?;
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{x}")?;
                }
                f.write_str("}")
            }
        }
    }
}

/// Primitive implementations the machine knows how to run. Each signature
/// entry binds one of these.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum PrimKey {
    /// The entry name itself parsed as an int or bool constant.
    Lit,
    /// A named integer parameter of the program file, resolved when the
    /// program is instantiated.
    Param,
    /// A resolved parameter: what `Param` becomes at instantiation.
    ConstInt(i64),
    Add,
    Sub,
    Mul,
    Eq,
    EqZero,
    Lt,
    Id,
    /// Returns its first argument (the projection used to consume stray
    /// linear counters).
    Fst,
    /// Array read `a[i]`.
    Index,
    /// Array write `a[i <- v]`, returning the updated array.
    Update,
}

impl PrimKey {
    pub fn parse(s: &str) -> Option<PrimKey> {
        Some(match s {
            "lit" => PrimKey::Lit,
            "param" => PrimKey::Param,
            "add" => PrimKey::Add,
            "sub" => PrimKey::Sub,
            "mul" => PrimKey::Mul,
            "eq" => PrimKey::Eq,
            "eqz" => PrimKey::EqZero,
            "lt" => PrimKey::Lt,
            "id" => PrimKey::Id,
            "fst" => PrimKey::Fst,
            "index" => PrimKey::Index,
            "update" => PrimKey::Update,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PrimKey::Lit => "lit",
            PrimKey::Param | PrimKey::ConstInt(_) => "param",
            PrimKey::Add => "add",
            PrimKey::Sub => "sub",
            PrimKey::Mul => "mul",
            PrimKey::Eq => "eq",
            PrimKey::EqZero => "eqz",
            PrimKey::Lt => "lt",
            PrimKey::Id => "id",
            PrimKey::Fst => "fst",
            PrimKey::Index => "index",
            PrimKey::Update => "update",
        }
    }
}

/// An operator typing: pseudoqualified inputs and a qualified output.
/// Signature inputs admit structural pretypes (list and tuple shapes), but
/// a `hi` position must name a base type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OperatorType {
    pub inputs: Vec<(PseudoQualifier, Pretype)>,
    pub output: (Qualifier, Pretype),
}

impl OperatorType {
    pub fn arity(&self) -> usize {
        self.inputs.len()
    }

    pub fn output_type(&self) -> Type {
        Type::new(self.output.0, self.output.1.clone())
    }
}

impl fmt::Display for OperatorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, (q, p)) in self.inputs.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{q} {p}")?;
        }
        write!(f, ") -> {} {}", self.output.0, self.output.1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SigEntry {
    pub name: String,
    pub ty: OperatorType,
    pub prim: PrimKey,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SignatureError {
    #[error("entry {index} ({name}): hi input positions must name a base pretype, got {pretype}")]
    HiddenNonBase {
        index: usize,
        name: String,
        pretype: String,
    },
    #[error("entry {index} ({name}): literal entry name is not an int or bool constant")]
    BadLiteral { index: usize, name: String },
}

/// The qualified signature: operator typings in order of appearance. The
/// same name may occur several times, at equal or different typings.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Signature {
    entries: Vec<SigEntry>,
}

impl Signature {
    pub fn new(entries: Vec<SigEntry>) -> Result<Self, SignatureError> {
        for (index, e) in entries.iter().enumerate() {
            for (q, p) in &e.ty.inputs {
                if *q == PseudoQualifier::Hi && !matches!(p, Pretype::Base(_)) {
                    return Err(SignatureError::HiddenNonBase {
                        index,
                        name: e.name.clone(),
                        pretype: p.to_string(),
                    });
                }
            }
            if e.prim == PrimKey::Lit && parse_literal_constant(&e.name).is_none() {
                return Err(SignatureError::BadLiteral {
                    index,
                    name: e.name.clone(),
                });
            }
        }
        Ok(Signature { entries })
    }

    pub fn entries(&self) -> &[SigEntry] {
        &self.entries
    }

    pub fn entry(&self, index: usize) -> Option<&SigEntry> {
        self.entries.get(index)
    }

    pub fn candidates<'a>(&'a self, name: &'a str) -> impl Iterator<Item = (usize, &'a SigEntry)> {
        self.entries
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.name == name)
    }

    pub fn has_name(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.name == name)
    }
}

pub fn parse_literal_constant(name: &str) -> Option<Constant> {
    match name {
        "true" => Some(Constant::Bool(true)),
        "false" => Some(Constant::Bool(false)),
        _ => name.parse::<i64>().ok().map(Constant::Int),
    }
}

/// Byte span into the source of the enclosing program file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct Span {
    pub lo: u32,
    pub hi: u32,
}

/// How an operator occurrence is bound.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OpTarget {
    /// Name still to be matched against the signature during checking.
    Unresolved,
    /// Resolved to a signature entry.
    Indexed(usize),
    /// An inline qualified constant literal such as `li 3`.
    Const(Qualifier, Constant),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpRef {
    pub name: String,
    pub target: OpTarget,
}

impl OpRef {
    pub fn named(name: impl Into<String>) -> Self {
        OpRef {
            name: name.into(),
            target: OpTarget::Unresolved,
        }
    }

    pub fn indexed(name: impl Into<String>, index: usize) -> Self {
        OpRef {
            name: name.into(),
            target: OpTarget::Indexed(index),
        }
    }

    pub fn constant(q: Qualifier, c: Constant) -> Self {
        OpRef {
            name: c.to_string(),
            target: OpTarget::Const(q, c),
        }
    }
}

#[derive(Clone, Debug, Eq)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

/// Equality is structural; spans are positional metadata and do not count.
impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExprKind {
    Var(Var),
    Op(OpRef, Vec<Expr>),
    Tuple(Qualifier, Vec<Expr>),
    App(Box<Expr>, Box<Expr>),
    Lambda(Qualifier, Var, Type, Box<Expr>),
    /// `spl e as <x1, ..., xn> in e'`; pattern variables are pairwise
    /// distinct.
    Split(Box<Expr>, Vec<Var>, Box<Expr>),
    If(Box<Expr>, Box<Expr>, Box<Expr>),
    Let(Var, Box<Expr>, Box<Expr>),
    Nil(Qualifier),
    Cons(Qualifier, Box<Expr>, Box<Expr>),
    /// `case e of (e0, (z1 : z2) -> e1)`.
    Case(Box<Expr>, Box<Expr>, Var, Var, Box<Expr>),
}

impl Expr {
    pub fn new(kind: ExprKind) -> Self {
        Expr {
            kind,
            span: Span::default(),
        }
    }

    pub fn var(name: impl Into<String>) -> Self {
        Expr::new(ExprKind::Var(Var::new(name)))
    }

    pub fn op(r: OpRef, args: Vec<Expr>) -> Self {
        Expr::new(ExprKind::Op(r, args))
    }

    pub fn tuple(q: Qualifier, items: Vec<Expr>) -> Self {
        Expr::new(ExprKind::Tuple(q, items))
    }

    pub fn app(f: Expr, a: Expr) -> Self {
        Expr::new(ExprKind::App(Box::new(f), Box::new(a)))
    }

    pub fn lambda(q: Qualifier, param: impl Into<String>, ty: Type, body: Expr) -> Self {
        Expr::new(ExprKind::Lambda(q, Var::new(param), ty, Box::new(body)))
    }

    pub fn split(scrutinee: Expr, pattern: Vec<Var>, body: Expr) -> Self {
        Expr::new(ExprKind::Split(Box::new(scrutinee), pattern, Box::new(body)))
    }

    pub fn if_(c: Expr, t: Expr, e: Expr) -> Self {
        Expr::new(ExprKind::If(Box::new(c), Box::new(t), Box::new(e)))
    }

    pub fn let_(x: impl Into<String>, bound: Expr, body: Expr) -> Self {
        Expr::new(ExprKind::Let(Var::new(x), Box::new(bound), Box::new(body)))
    }

    pub fn nil(q: Qualifier) -> Self {
        Expr::new(ExprKind::Nil(q))
    }

    pub fn cons(q: Qualifier, h: Expr, t: Expr) -> Self {
        Expr::new(ExprKind::Cons(q, Box::new(h), Box::new(t)))
    }

    pub fn case(
        scrutinee: Expr,
        nil_arm: Expr,
        z1: impl Into<String>,
        z2: impl Into<String>,
        cons_arm: Expr,
    ) -> Self {
        Expr::new(ExprKind::Case(
            Box::new(scrutinee),
            Box::new(nil_arm),
            Var::new(z1),
            Var::new(z2),
            Box::new(cons_arm),
        ))
    }
}

/// A finite map of variables to variables, the identity elsewhere.
pub type Subst = BTreeMap<Var, Var>;

pub fn subst1(from: impl Into<String>, to: impl Into<String>) -> Subst {
    let mut s = Subst::new();
    s.insert(Var::new(from), Var::new(to));
    s
}

/// Free variables in left-to-right evaluation order, with multiplicity.
pub fn free_vars(e: &Expr) -> Vec<Var> {
    fn go(e: &Expr, out: &mut Vec<Var>) {
        match &e.kind {
            ExprKind::Var(v) => out.push(v.clone()),
            ExprKind::Op(_, args) => args.iter().for_each(|a| go(a, out)),
            ExprKind::Tuple(_, items) => items.iter().for_each(|a| go(a, out)),
            ExprKind::App(f, a) => {
                go(f, out);
                go(a, out);
            }
            ExprKind::Lambda(_, x, _, body) => {
                let mut inner = Vec::new();
                go(body, &mut inner);
                out.extend(inner.into_iter().filter(|v| v != x));
            }
            ExprKind::Split(scrutinee, pat, body) => {
                go(scrutinee, out);
                let mut inner = Vec::new();
                go(body, &mut inner);
                out.extend(inner.into_iter().filter(|v| !pat.contains(v)));
            }
            ExprKind::If(c, t, e2) => {
                go(c, out);
                go(t, out);
                go(e2, out);
            }
            ExprKind::Let(x, bound, body) => {
                go(bound, out);
                let mut inner = Vec::new();
                go(body, &mut inner);
                out.extend(inner.into_iter().filter(|v| v != x));
            }
            ExprKind::Nil(_) => {}
            ExprKind::Cons(_, h, t) => {
                go(h, out);
                go(t, out);
            }
            ExprKind::Case(scrutinee, nil_arm, z1, z2, cons_arm) => {
                go(scrutinee, out);
                go(nil_arm, out);
                let mut inner = Vec::new();
                go(cons_arm, &mut inner);
                out.extend(inner.into_iter().filter(|v| v != z1 && v != z2));
            }
        }
    }
    let mut out = Vec::new();
    go(e, &mut out);
    out
}

/// Every variable occurring in `e`, free or bound.
fn all_vars(e: &Expr, out: &mut BTreeSet<Var>) {
    match &e.kind {
        ExprKind::Var(v) => {
            out.insert(v.clone());
        }
        ExprKind::Op(_, args) => args.iter().for_each(|a| all_vars(a, out)),
        ExprKind::Tuple(_, items) => items.iter().for_each(|a| all_vars(a, out)),
        ExprKind::App(f, a) => {
            all_vars(f, out);
            all_vars(a, out);
        }
        ExprKind::Lambda(_, x, _, body) => {
            out.insert(x.clone());
            all_vars(body, out);
        }
        ExprKind::Split(s, pat, body) => {
            all_vars(s, out);
            out.extend(pat.iter().cloned());
            all_vars(body, out);
        }
        ExprKind::If(c, t, e2) => {
            all_vars(c, out);
            all_vars(t, out);
            all_vars(e2, out);
        }
        ExprKind::Let(x, bound, body) => {
            out.insert(x.clone());
            all_vars(bound, out);
            all_vars(body, out);
        }
        ExprKind::Nil(_) => {}
        ExprKind::Cons(_, h, t) => {
            all_vars(h, out);
            all_vars(t, out);
        }
        ExprKind::Case(s, nil_arm, z1, z2, cons_arm) => {
            all_vars(s, out);
            all_vars(nil_arm, out);
            out.insert(z1.clone());
            out.insert(z2.clone());
            all_vars(cons_arm, out);
        }
    }
}

fn fresh_against(base: &Var, avoid: &BTreeSet<Var>) -> Var {
    let stem = base.0.split('\'').next().unwrap_or(&base.0);
    let mut k = 0u64;
    loop {
        let candidate = Var(format!("{stem}'{k}"));
        if !avoid.contains(&candidate) {
            return candidate;
        }
        k += 1;
    }
}

/// Capture-avoiding parallel substitution of variables for variables.
/// Binders that would capture a substituted name are renamed to a fresh
/// primed variable drawn from a deterministic counter.
pub fn apply_subst(subst: &Subst, e: &Expr) -> Expr {
    if subst.is_empty() {
        return e.clone();
    }
    let mut avoid = BTreeSet::new();
    all_vars(e, &mut avoid);
    avoid.extend(subst.keys().cloned());
    avoid.extend(subst.values().cloned());
    go(subst, e, &mut avoid)
}

fn go(subst: &Subst, e: &Expr, avoid: &mut BTreeSet<Var>) -> Expr {
    let kind = match &e.kind {
        ExprKind::Var(v) => ExprKind::Var(subst.get(v).unwrap_or(v).clone()),
        ExprKind::Op(r, args) => ExprKind::Op(
            r.clone(),
            args.iter().map(|a| go(subst, a, avoid)).collect(),
        ),
        ExprKind::Tuple(q, items) => ExprKind::Tuple(
            *q,
            items.iter().map(|a| go(subst, a, avoid)).collect(),
        ),
        ExprKind::App(f, a) => ExprKind::App(
            Box::new(go(subst, f, avoid)),
            Box::new(go(subst, a, avoid)),
        ),
        ExprKind::Lambda(q, x, ty, body) => {
            let (binders, body) = rebind(subst, std::slice::from_ref(x), body, avoid);
            ExprKind::Lambda(*q, binders.into_iter().next().unwrap(), ty.clone(), Box::new(body))
        }
        ExprKind::Split(s, pat, body) => {
            let s2 = go(subst, s, avoid);
            let (binders, body) = rebind(subst, pat, body, avoid);
            ExprKind::Split(Box::new(s2), binders, Box::new(body))
        }
        ExprKind::If(c, t, e2) => ExprKind::If(
            Box::new(go(subst, c, avoid)),
            Box::new(go(subst, t, avoid)),
            Box::new(go(subst, e2, avoid)),
        ),
        ExprKind::Let(x, bound, body) => {
            let bound2 = go(subst, bound, avoid);
            let (binders, body) = rebind(subst, std::slice::from_ref(x), body, avoid);
            ExprKind::Let(binders.into_iter().next().unwrap(), Box::new(bound2), Box::new(body))
        }
        ExprKind::Nil(q) => ExprKind::Nil(*q),
        ExprKind::Cons(q, h, t) => ExprKind::Cons(
            *q,
            Box::new(go(subst, h, avoid)),
            Box::new(go(subst, t, avoid)),
        ),
        ExprKind::Case(s, nil_arm, z1, z2, cons_arm) => {
            let s2 = go(subst, s, avoid);
            let nil2 = go(subst, nil_arm, avoid);
            let pat = [z1.clone(), z2.clone()];
            let (binders, cons2) = rebind(subst, &pat, cons_arm, avoid);
            let mut it = binders.into_iter();
            ExprKind::Case(
                Box::new(s2),
                Box::new(nil2),
                it.next().unwrap(),
                it.next().unwrap(),
                Box::new(cons2),
            )
        }
    };
    Expr { kind, span: e.span }
}

/// Substitute under a binder group: drop shadowed entries, rename any binder
/// a remaining mapping would capture.
fn rebind(subst: &Subst, binders: &[Var], body: &Expr, avoid: &mut BTreeSet<Var>) -> (Vec<Var>, Expr) {
    let inner: Subst = subst
        .iter()
        .filter(|(k, _)| !binders.contains(k))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let body_free = free_vars(body);
    let mut new_binders = Vec::with_capacity(binders.len());
    let mut renames = Subst::new();
    for b in binders {
        let captures = inner
            .iter()
            .any(|(k, v)| v == b && k != b && body_free.contains(k));
        if captures {
            let fresh = fresh_against(b, avoid);
            avoid.insert(fresh.clone());
            renames.insert(b.clone(), fresh.clone());
            new_binders.push(fresh);
        } else {
            new_binders.push(b.clone());
        }
    }
    let body = if renames.is_empty() {
        body.clone()
    } else {
        go(&renames, body, avoid)
    };
    if inner.is_empty() {
        return (new_binders, body);
    }
    (new_binders, go(&inner, &body, avoid))
}

/// Structural equality modulo consistent renaming of bound variables.
pub fn alpha_eq(a: &Expr, b: &Expr) -> bool {
    fn eq(a: &Expr, b: &Expr, env_a: &mut Vec<Var>, env_b: &mut Vec<Var>) -> bool {
        let depth = |env: &[Var], v: &Var| env.iter().rposition(|x| x == v);
        match (&a.kind, &b.kind) {
            (ExprKind::Var(x), ExprKind::Var(y)) => match (depth(env_a, x), depth(env_b, y)) {
                (Some(i), Some(j)) => i == j,
                (None, None) => x == y,
                _ => false,
            },
            (ExprKind::Op(r1, a1), ExprKind::Op(r2, a2)) => {
                r1 == r2
                    && a1.len() == a2.len()
                    && a1.iter().zip(a2).all(|(x, y)| eq(x, y, env_a, env_b))
            }
            (ExprKind::Tuple(q1, i1), ExprKind::Tuple(q2, i2)) => {
                q1 == q2
                    && i1.len() == i2.len()
                    && i1.iter().zip(i2).all(|(x, y)| eq(x, y, env_a, env_b))
            }
            (ExprKind::App(f1, x1), ExprKind::App(f2, x2)) => {
                eq(f1, f2, env_a, env_b) && eq(x1, x2, env_a, env_b)
            }
            (ExprKind::Lambda(q1, x1, t1, b1), ExprKind::Lambda(q2, x2, t2, b2)) => {
                if q1 != q2 || t1 != t2 {
                    return false;
                }
                env_a.push(x1.clone());
                env_b.push(x2.clone());
                let r = eq(b1, b2, env_a, env_b);
                env_a.pop();
                env_b.pop();
                r
            }
            (ExprKind::Split(s1, p1, b1), ExprKind::Split(s2, p2, b2)) => {
                if p1.len() != p2.len() || !eq(s1, s2, env_a, env_b) {
                    return false;
                }
                env_a.extend(p1.iter().cloned());
                env_b.extend(p2.iter().cloned());
                let r = eq(b1, b2, env_a, env_b);
                env_a.truncate(env_a.len() - p1.len());
                env_b.truncate(env_b.len() - p2.len());
                r
            }
            (ExprKind::If(c1, t1, e1), ExprKind::If(c2, t2, e2)) => {
                eq(c1, c2, env_a, env_b) && eq(t1, t2, env_a, env_b) && eq(e1, e2, env_a, env_b)
            }
            (ExprKind::Let(x1, v1, b1), ExprKind::Let(x2, v2, b2)) => {
                if !eq(v1, v2, env_a, env_b) {
                    return false;
                }
                env_a.push(x1.clone());
                env_b.push(x2.clone());
                let r = eq(b1, b2, env_a, env_b);
                env_a.pop();
                env_b.pop();
                r
            }
            (ExprKind::Nil(q1), ExprKind::Nil(q2)) => q1 == q2,
            (ExprKind::Cons(q1, h1, t1), ExprKind::Cons(q2, h2, t2)) => {
                q1 == q2 && eq(h1, h2, env_a, env_b) && eq(t1, t2, env_a, env_b)
            }
            (
                ExprKind::Case(s1, n1, x1, y1, c1),
                ExprKind::Case(s2, n2, x2, y2, c2),
            ) => {
                if !eq(s1, s2, env_a, env_b) || !eq(n1, n2, env_a, env_b) {
                    return false;
                }
                env_a.push(x1.clone());
                env_a.push(y1.clone());
                env_b.push(x2.clone());
                env_b.push(y2.clone());
                let r = eq(c1, c2, env_a, env_b);
                env_a.truncate(env_a.len() - 2);
                env_b.truncate(env_b.len() - 2);
                r
            }
            _ => false,
        }
    }
    eq(a, b, &mut Vec::new(), &mut Vec::new())
}
