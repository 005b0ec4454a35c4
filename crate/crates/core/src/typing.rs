//! The split and pseudosplit relations and the algorithmic type checker.
//!
//! Contexts distribute across the premises of a rule in two ways. The
//! context split `∘` sends unrestricted (and hidden) entries to every
//! premise and each linear entry to exactly one. The pseudosplit `⊔`
//! additionally lets a linear base entry appear hidden in the premises that
//! precede its consumer. Operator applications combine their argument
//! premises with the split; every other multi-premise form uses the
//! pseudosplit, with premises ordered by evaluation order.
//!
//! The checker is algorithmic: instead of guessing premise contexts it
//! infers a [`UsageReport`] per premise and merges reports, which
//! reconstructs the unique split the declarative rules would have used.

use std::collections::BTreeMap;
use std::fmt;

use crate::syntax::{
    ctx_is_q, BaseType, Expr, ExprKind, OpTarget, OperatorType, Pretype, PseudoQualifier,
    PseudoType, Qualifier, SigEntry, Signature, Span, Type, TypeContext, Var,
};

/// Which context-distribution relation a rule uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitKind {
    /// `∘`: hidden never merges with linear.
    Split,
    /// `⊔`: hidden occurrences may precede the consuming premise.
    Pseudosplit,
}

/// How one premise family used a variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum Usage {
    Unused,
    Unrestricted,
    HiddenOnly,
    Consumed,
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct UsageEntry {
    pub usage: Usage,
    /// For consumed variables, the ordinal of the consuming premise in the
    /// last merge that saw the consumption.
    pub consuming_premise: Option<usize>,
}

/// Per-variable consumption record reconstructed by the checker.
#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct UsageReport {
    pub entries: BTreeMap<Var, UsageEntry>,
}

impl UsageReport {
    pub fn usage_of(&self, v: &Var) -> Usage {
        self.entries.get(v).map(|e| e.usage).unwrap_or(Usage::Unused)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum TypeError {
    #[error("unbound variable `{0}`")]
    Unbound(Var),
    #[error("hidden variable `{0}` may only appear as an operator argument")]
    HiddenUseOutsideOperator(Var),
    #[error("linear variable `{0}` consumed more than once")]
    DoubleConsumption(Var),
    #[error("hidden read of `{0}` after its consumption")]
    HiddenReadAfterConsumption(Var),
    #[error("operator arguments combine by context split, not pseudosplit: hidden read of `{0}` cannot be merged with its consumption")]
    HiddenWithConsumptionAtOperator(Var),
    #[error("branches disagree on `{0}`: one consumes it, the other does not")]
    BranchUsageMismatch(Var),
    #[error("linear variable `{0}` is never consumed")]
    UnusedLinear(Var),
    #[error("lambda body reads `{0}` as hidden, but a closure may not capture a hidden variable")]
    HiddenCaptureInLambda(Var),
    #[error("unrestricted lambda consumes linear variable `{0}`")]
    UnLambdaConsumesLinear(Var),
    #[error("component {index} of a {qual} tuple has type {found}, which {qual}-containment forbids")]
    TupleContainment {
        qual: Qualifier,
        index: usize,
        found: String,
    },
    #[error("head of a {qual} list has type {found}, which {qual}-containment forbids")]
    ConsHeadContainment { qual: Qualifier, found: String },
    #[error("expected {expected}, found {found}")]
    TypeMismatch { expected: String, found: String },
    #[error("expected a function, found {0}")]
    ExpectedFunction(String),
    #[error("expected a tuple, found {0}")]
    ExpectedTuple(String),
    #[error("expected a bool, found {0}")]
    ExpectedBool(String),
    #[error("expected a list, found {0}")]
    ExpectedList(String),
    #[error("pattern binds {found} variables but the tuple has {expected} components")]
    PatternArity { expected: usize, found: usize },
    #[error("pattern variable `{0}` is repeated")]
    DuplicatePatternVar(Var),
    #[error("no signature entry fits `{name}` here: {reason}")]
    OperatorNoFit { name: String, reason: String },
    #[error("several signature entries fit `{name}`; disambiguate with `{name}@k`")]
    OperatorAmbiguous { name: String },
    #[error("operator `{name}` applied to {found} arguments")]
    OperatorArity { name: String, found: usize },
    #[error("signature has no entry number {0}")]
    NoSuchEntry(usize),
    #[error("the element type of this list is unresolved; bind the empty list where its type is determined")]
    UnresolvedElementType,
    #[error("variable `{0}` mixes unrestricted and linear usage marks")]
    InconsistentUsage(Var),
}

/// A typing failure: the violated rule, the first offending variable in
/// evaluation order, and the source span.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{error}")]
pub struct Diagnostic {
    pub rule: &'static str,
    pub var: Option<Var>,
    pub span: Span,
    pub error: TypeError,
}

impl Diagnostic {
    fn new(rule: &'static str, span: Span, error: TypeError) -> Self {
        let var = match &error {
            TypeError::Unbound(v)
            | TypeError::HiddenUseOutsideOperator(v)
            | TypeError::DoubleConsumption(v)
            | TypeError::HiddenReadAfterConsumption(v)
            | TypeError::HiddenWithConsumptionAtOperator(v)
            | TypeError::BranchUsageMismatch(v)
            | TypeError::UnusedLinear(v)
            | TypeError::HiddenCaptureInLambda(v)
            | TypeError::UnLambdaConsumesLinear(v)
            | TypeError::DuplicatePatternVar(v)
            | TypeError::InconsistentUsage(v) => Some(v.clone()),
            _ => None,
        };
        Diagnostic {
            rule,
            var,
            span,
            error,
        }
    }

    pub fn render(&self) -> String {
        match &self.var {
            Some(v) => format!("[{}] at {}..{}: {} (variable `{v}`)", self.rule, self.span.lo, self.span.hi, self.error),
            None => format!("[{}] at {}..{}: {}", self.rule, self.span.lo, self.span.hi, self.error),
        }
    }
}

impl serde::Serialize for Diagnostic {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("Diagnostic", 4)?;
        st.serialize_field("rule", self.rule)?;
        st.serialize_field("var", &self.var)?;
        st.serialize_field("span", &self.span)?;
        st.serialize_field("message", &self.error.to_string())?;
        st.end()
    }
}

/// Checker switches. `operator_split` exists for the mutation suite: the
/// faithful checker uses [`SplitKind::Split`] at operators.
#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub operator_split: SplitKind,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            operator_split: SplitKind::Split,
        }
    }
}

// ---------------------------------------------------------------------------
// The split relations on explicit contexts.

/// `Π₁ ∘ ... ∘ Πₙ = Π`: derivable iff non-linear entries of `whole` appear
/// in every part and each linear entry in exactly one, all in order. The
/// 0-ary case holds iff `un(whole)`.
pub fn split_check(parts: &[TypeContext], whole: &TypeContext) -> bool {
    split_like(SplitKind::Split, parts, whole)
}

/// `Π₁ ⊔ ... ⊔ Πₙ = Π`: all `∘` rules plus the hidden-prefix rule for
/// linear base entries.
pub fn pseudosplit_check(parts: &[TypeContext], whole: &TypeContext) -> bool {
    split_like(SplitKind::Pseudosplit, parts, whole)
}

fn split_like(kind: SplitKind, parts: &[TypeContext], whole: &TypeContext) -> bool {
    if parts.is_empty() {
        return ctx_is_q(Qualifier::Un, whole);
    }
    let mut stacks: Vec<&[(Var, PseudoType)]> = parts.iter().map(|p| p.entries()).collect();
    let mut rest = whole.entries();
    while let Some(((x, t), head)) = rest.split_last() {
        rest = head;
        if t.qual() != PseudoQualifier::Li {
            // Duplication: every part must end with this entry.
            for s in &mut stacks {
                match s.split_last() {
                    Some(((y, u), init)) if y == x && u == t => *s = init,
                    _ => return false,
                }
            }
            continue;
        }
        let ends_with = |s: &[(Var, PseudoType)], want: &PseudoType| {
            matches!(s.last(), Some((y, u)) if y == x && u == want)
        };
        let li_ends: Vec<usize> = (0..stacks.len())
            .filter(|&i| ends_with(stacks[i], t))
            .collect();
        if li_ends.len() != 1 {
            return false;
        }
        let j = li_ends[0];
        let hidden = match (t, kind) {
            (PseudoType::Proper(ty), SplitKind::Pseudosplit) => match ty.pretype {
                Pretype::Base(b) => Some(PseudoType::Hidden(b)),
                _ => None,
            },
            _ => None,
        };
        let hi_ends: Vec<usize> = match &hidden {
            Some(h) => (0..stacks.len())
                .filter(|&i| i != j && ends_with(stacks[i], h))
                .collect(),
            None => Vec::new(),
        };
        let prefix: Vec<usize> = (0..j).collect();
        if !(hi_ends.is_empty() || hi_ends == prefix) {
            return false;
        }
        for &i in hi_ends.iter().chain(Some(&j)) {
            let (_, init) = stacks[i].split_last().unwrap();
            stacks[i] = init;
        }
    }
    stacks.iter().all(|s| s.is_empty())
}

// ---------------------------------------------------------------------------
// Usage merging: the algorithmic counterpart of ∘ and ⊔.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Mark {
    pub(crate) usage: Usage,
    pub(crate) premise: usize,
}

fn merge_mark(
    kind: SplitKind,
    var: &Var,
    acc: Mark,
    next: Usage,
    premise: usize,
) -> Result<Mark, TypeError> {
    use Usage::*;
    let usage = match (acc.usage, next) {
        (a, Unused) => return Ok(Mark { usage: a, ..acc }),
        (Unused, u) => u,
        (Unrestricted, Unrestricted) => Unrestricted,
        (HiddenOnly, HiddenOnly) => HiddenOnly,
        (HiddenOnly, Consumed) => match kind {
            SplitKind::Pseudosplit => Consumed,
            SplitKind::Split => {
                return Err(TypeError::HiddenWithConsumptionAtOperator(var.clone()))
            }
        },
        (Consumed, HiddenOnly) => {
            return Err(TypeError::HiddenReadAfterConsumption(var.clone()))
        }
        (Consumed, Consumed) => return Err(TypeError::DoubleConsumption(var.clone())),
        _ => return Err(TypeError::InconsistentUsage(var.clone())),
    };
    let premise = if usage == Consumed && acc.usage != Consumed {
        premise
    } else {
        acc.premise
    };
    Ok(Mark { usage, premise })
}

/// Merge ordered premise reports under the given relation. Errors carry the
/// first offending variable: lowest premise ordinal first, context order
/// within a premise.
pub fn merge_usages(kind: SplitKind, reports: &[UsageReport]) -> Result<UsageReport, Diagnostic> {
    let mut acc: BTreeMap<Var, Mark> = BTreeMap::new();
    for (i, r) in reports.iter().enumerate() {
        for (v, e) in &r.entries {
            let m = acc.entry(v.clone()).or_insert(Mark {
                usage: Usage::Unused,
                premise: 0,
            });
            *m = merge_mark(kind, v, *m, e.usage, i).map_err(|error| {
                Diagnostic::new(
                    match kind {
                        SplitKind::Split => "split",
                        SplitKind::Pseudosplit => "pseudosplit",
                    },
                    Span::default(),
                    error,
                )
            })?;
        }
    }
    Ok(UsageReport {
        entries: acc
            .into_iter()
            .filter(|(_, m)| m.usage != Usage::Unused)
            .map(|(v, m)| {
                let consuming_premise = (m.usage == Usage::Consumed).then_some(m.premise);
                (
                    v,
                    UsageEntry {
                        usage: m.usage,
                        consuming_premise,
                    },
                )
            })
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// Unification of list-element holes.

/// Binding table for the element-type holes introduced by `q []` literals.
#[derive(Debug, Default)]
pub(crate) struct Unifier {
    bindings: Vec<Option<Type>>,
    log: Vec<u32>,
}

impl Unifier {
    pub fn fresh(&mut self) -> Type {
        let id = self.bindings.len() as u32;
        self.bindings.push(None);
        // The qualifier next to a hole is never read.
        Type::new(Qualifier::Li, Pretype::Hole(id))
    }

    fn shallow(&self, t: &Type) -> Type {
        let mut cur = t.clone();
        while let Pretype::Hole(i) = cur.pretype {
            match &self.bindings[i as usize] {
                Some(b) => cur = b.clone(),
                None => break,
            }
        }
        cur
    }

    fn occurs(&self, id: u32, t: &Type) -> bool {
        match &self.shallow(t).pretype {
            Pretype::Hole(j) => *j == id,
            Pretype::Base(_) => false,
            Pretype::Tuple(ts) => ts.iter().any(|x| self.occurs(id, x)),
            Pretype::Arrow(a, b) => self.occurs(id, a) || self.occurs(id, b),
            Pretype::List(t) => self.occurs(id, t),
        }
    }

    fn checkpoint(&self) -> usize {
        self.log.len()
    }

    fn rollback(&mut self, mark: usize) {
        while self.log.len() > mark {
            let id = self.log.pop().unwrap();
            self.bindings[id as usize] = None;
        }
    }

    /// Unify two types; on success returns the common refinement.
    pub fn meet(&mut self, a: &Type, b: &Type) -> Option<Type> {
        let a = self.shallow(a);
        let b = self.shallow(b);
        match (&a.pretype, &b.pretype) {
            (Pretype::Hole(i), Pretype::Hole(j)) if i == j => return Some(a),
            (Pretype::Hole(i), _) => {
                if self.occurs(*i, &b) {
                    return None;
                }
                self.bindings[*i as usize] = Some(b.clone());
                self.log.push(*i);
                return Some(b);
            }
            (_, Pretype::Hole(j)) => {
                if self.occurs(*j, &a) {
                    return None;
                }
                self.bindings[*j as usize] = Some(a.clone());
                self.log.push(*j);
                return Some(a);
            }
            _ => {}
        }
        if a.qual != b.qual {
            return None;
        }
        let pretype = match (&a.pretype, &b.pretype) {
            (Pretype::Base(x), Pretype::Base(y)) if x == y => Pretype::Base(*x),
            (Pretype::Tuple(xs), Pretype::Tuple(ys)) if xs.len() == ys.len() => Pretype::Tuple(
                xs.iter()
                    .zip(ys)
                    .map(|(x, y)| self.meet(x, y))
                    .collect::<Option<Vec<_>>>()?,
            ),
            (Pretype::Arrow(xa, xb), Pretype::Arrow(ya, yb)) => Pretype::Arrow(
                Box::new(self.meet(xa, ya)?),
                Box::new(self.meet(xb, yb)?),
            ),
            (Pretype::List(x), Pretype::List(y)) => Pretype::List(Box::new(self.meet(x, y)?)),
            _ => return None,
        };
        Some(Type::new(a.qual, pretype))
    }

    /// Resolve every bound hole inside `t`.
    pub fn zonk(&self, t: &Type) -> Type {
        let t = self.shallow(t);
        let pretype = match &t.pretype {
            Pretype::Base(b) => Pretype::Base(*b),
            Pretype::Hole(i) => Pretype::Hole(*i),
            Pretype::Tuple(ts) => Pretype::Tuple(ts.iter().map(|x| self.zonk(x)).collect()),
            Pretype::Arrow(a, b) => {
                Pretype::Arrow(Box::new(self.zonk(a)), Box::new(self.zonk(b)))
            }
            Pretype::List(x) => Pretype::List(Box::new(self.zonk(x))),
        };
        Type::new(t.qual, pretype)
    }
}

// ---------------------------------------------------------------------------
// The checker.

pub(crate) struct Scope {
    entries: Vec<(Var, PseudoType)>,
}

impl Scope {
    pub fn from_context(ctx: &TypeContext) -> Self {
        Scope {
            entries: ctx.entries().to_vec(),
        }
    }

    fn push(&mut self, v: Var, t: PseudoType) -> usize {
        self.entries.push((v, t));
        self.entries.len() - 1
    }

    fn pop(&mut self) {
        self.entries.pop();
    }

    /// Innermost binding wins: shadowing is resolved here.
    pub(crate) fn lookup(&self, v: &Var) -> Option<usize> {
        self.entries.iter().rposition(|(x, _)| x == v)
    }

    pub(crate) fn var(&self, idx: usize) -> &Var {
        &self.entries[idx].0
    }

    pub(crate) fn ty(&self, idx: usize) -> &PseudoType {
        &self.entries[idx].1
    }
}

/// Premise reports are keyed by scope index so that shadowed names stay
/// distinct.
pub(crate) type Report = BTreeMap<usize, Mark>;

pub(crate) struct Checker<'a> {
    sig: &'a Signature,
    opts: CheckOptions,
    pub(crate) unifier: Unifier,
}

enum ArgInfo {
    /// A bare variable: usage depends on the input position it matches.
    Deferred(usize),
    /// A bare nullary operator: several constants may share a name at
    /// different qualifications, and the input position picks one.
    DeferredConst(Vec<(usize, OperatorType)>),
    Computed(Type, Report),
}

impl<'a> Checker<'a> {
    pub fn new(sig: &'a Signature, opts: CheckOptions) -> Self {
        Checker {
            sig,
            opts,
            unifier: Unifier::default(),
        }
    }

    fn merge(
        &self,
        kind: SplitKind,
        rule: &'static str,
        span: Span,
        scope: &Scope,
        reports: Vec<Report>,
    ) -> Result<Report, Diagnostic> {
        let mut acc: Report = BTreeMap::new();
        for (i, r) in reports.into_iter().enumerate() {
            for (idx, mark) in r {
                let m = acc.entry(idx).or_insert(Mark {
                    usage: Usage::Unused,
                    premise: 0,
                });
                *m = merge_mark(kind, scope.var(idx), *m, mark.usage, i)
                    .map_err(|error| Diagnostic::new(rule, span, error))?;
            }
        }
        acc.retain(|_, m| m.usage != Usage::Unused);
        Ok(acc)
    }

    /// Merge the reports of two alternative branches: both see the same
    /// premise context, so consumption must agree.
    fn merge_branches(
        &self,
        rule: &'static str,
        span: Span,
        scope: &Scope,
        a: Report,
        b: Report,
    ) -> Result<Report, Diagnostic> {
        use Usage::*;
        let mut out = Report::new();
        let keys: std::collections::BTreeSet<usize> =
            a.keys().chain(b.keys()).copied().collect();
        for idx in keys {
            let ua = a.get(&idx).map(|m| m.usage).unwrap_or(Unused);
            let ub = b.get(&idx).map(|m| m.usage).unwrap_or(Unused);
            let merged = match (ua, ub) {
                (x, y) if x == y => x,
                (Unused, Unrestricted) | (Unrestricted, Unused) => Unrestricted,
                (Unused, HiddenOnly) | (HiddenOnly, Unused) => HiddenOnly,
                (HiddenOnly, Consumed) | (Consumed, HiddenOnly) | (Unused, Consumed)
                | (Consumed, Unused) => {
                    return Err(Diagnostic::new(
                        rule,
                        span,
                        TypeError::BranchUsageMismatch(scope.var(idx).clone()),
                    ))
                }
                _ => {
                    return Err(Diagnostic::new(
                        rule,
                        span,
                        TypeError::InconsistentUsage(scope.var(idx).clone()),
                    ))
                }
            };
            if merged != Unused {
                let premise = a.get(&idx).or(b.get(&idx)).map(|m| m.premise).unwrap_or(0);
                out.insert(idx, Mark { usage: merged, premise });
            }
        }
        Ok(out)
    }

    /// Validate and drop a binder's report entry after its scope closes.
    fn close_binder(
        &self,
        rule: &'static str,
        span: Span,
        scope: &Scope,
        report: &mut Report,
        idx: usize,
    ) -> Result<(), Diagnostic> {
        let must_consume = match scope.ty(idx) {
            PseudoType::Proper(t) => {
                let t = self.unifier.zonk(t);
                // An unresolved element hole admits an unrestricted witness,
                // so nothing is owed.
                !matches!(t.pretype, Pretype::Hole(_)) && t.qual == Qualifier::Li
            }
            PseudoType::Hidden(_) => false,
        };
        let usage = report.remove(&idx).map(|m| m.usage).unwrap_or(Usage::Unused);
        if must_consume && usage != Usage::Consumed {
            return Err(Diagnostic::new(
                rule,
                span,
                TypeError::UnusedLinear(scope.var(idx).clone()),
            ));
        }
        Ok(())
    }

    pub fn infer(&mut self, scope: &mut Scope, e: &mut Expr) -> Result<(Type, Report), Diagnostic> {
        let span = e.span;
        match &mut e.kind {
            ExprKind::Var(v) => {
                let idx = scope
                    .lookup(v)
                    .ok_or_else(|| Diagnostic::new("var", span, TypeError::Unbound(v.clone())))?;
                match scope.ty(idx).clone() {
                    PseudoType::Hidden(_) => Err(Diagnostic::new(
                        "var",
                        span,
                        TypeError::HiddenUseOutsideOperator(v.clone()),
                    )),
                    PseudoType::Proper(t) => {
                        let t = self.unifier.zonk(&t);
                        if matches!(t.pretype, Pretype::Hole(_)) {
                            return Err(Diagnostic::new(
                                "var",
                                span,
                                TypeError::UnresolvedElementType,
                            ));
                        }
                        let usage = if t.qual == Qualifier::Li {
                            Usage::Consumed
                        } else {
                            Usage::Unrestricted
                        };
                        let mut r = Report::new();
                        r.insert(idx, Mark { usage, premise: 0 });
                        Ok((t, r))
                    }
                }
            }
            ExprKind::Op(opref, args) => {
                if let OpTarget::Const(q, c) = &opref.target {
                    if !args.is_empty() {
                        return Err(Diagnostic::new(
                            "op",
                            span,
                            TypeError::OperatorArity {
                                name: opref.name.clone(),
                                found: args.len(),
                            },
                        ));
                    }
                    return Ok((Type::base(*q, c.base_type()), Report::new()));
                }
                // Infer non-variable arguments first; bare variables and
                // bare constants are deferred because their usage or entry
                // depends on the matched position.
                let mut infos = Vec::with_capacity(args.len());
                for a in args.iter_mut() {
                    match &a.kind {
                        ExprKind::Var(v) => {
                            let idx = scope.lookup(v).ok_or_else(|| {
                                Diagnostic::new("op", a.span, TypeError::Unbound(v.clone()))
                            })?;
                            infos.push(ArgInfo::Deferred(idx));
                        }
                        ExprKind::Op(r, inner) if inner.is_empty() => {
                            let choices: Vec<(usize, OperatorType)> = match r.target {
                                OpTarget::Const(..) => Vec::new(),
                                OpTarget::Indexed(k) => self
                                    .sig
                                    .entry(k)
                                    .into_iter()
                                    .filter(|e| e.ty.arity() == 0)
                                    .map(|e| (k, e.ty.clone()))
                                    .collect(),
                                OpTarget::Unresolved => self
                                    .sig
                                    .candidates(&r.name)
                                    .filter(|(_, e)| e.ty.arity() == 0)
                                    .map(|(k, e)| (k, e.ty.clone()))
                                    .collect(),
                            };
                            if choices.is_empty() {
                                let (t, rep) = self.infer(scope, a)?;
                                infos.push(ArgInfo::Computed(t, rep));
                            } else {
                                infos.push(ArgInfo::DeferredConst(choices));
                            }
                        }
                        _ => {
                            let (t, r) = self.infer(scope, a)?;
                            infos.push(ArgInfo::Computed(t, r));
                        }
                    }
                }
                let name = opref.name.clone();
                let candidates: Vec<(usize, &SigEntry)> = match opref.target {
                    OpTarget::Indexed(k) => match self.sig.entry(k) {
                        Some(e) => vec![(k, e)],
                        None => {
                            return Err(Diagnostic::new(
                                "op",
                                span,
                                TypeError::NoSuchEntry(k),
                            ))
                        }
                    },
                    _ => self.sig.candidates(&name).collect(),
                };
                if candidates.is_empty() {
                    return Err(Diagnostic::new(
                        "op",
                        span,
                        TypeError::OperatorNoFit {
                            name,
                            reason: "no entry with this name".into(),
                        },
                    ));
                }
                let mut viable: Vec<(usize, OperatorType)> = Vec::new();
                for (k, entry) in &candidates {
                    if entry.ty.arity() != args.len() {
                        continue;
                    }
                    let mark = self.unifier.checkpoint();
                    let ok = (0..args.len())
                        .all(|i| self.arg_fits(scope, &infos[i], &entry.ty.inputs[i]));
                    self.unifier.rollback(mark);
                    let duplicate = viable.iter().any(|(j, ty)| {
                        *ty == entry.ty && self.sig.entry(*j).unwrap().prim == entry.prim
                    });
                    if ok && !duplicate {
                        viable.push((*k, entry.ty.clone()));
                    }
                }
                let (index, opty) = match viable.len() {
                    0 => {
                        let arity_ok = candidates.iter().any(|(_, e)| e.ty.arity() == args.len());
                        let reason = if arity_ok {
                            "argument types match no qualification".to_string()
                        } else {
                            format!("no entry of arity {}", args.len())
                        };
                        return Err(Diagnostic::new(
                            "op",
                            span,
                            TypeError::OperatorNoFit { name, reason },
                        ));
                    }
                    1 => viable.into_iter().next().unwrap(),
                    _ => {
                        return Err(Diagnostic::new(
                            "op",
                            span,
                            TypeError::OperatorAmbiguous { name },
                        ))
                    }
                };
                // Re-apply the chosen entry's meets for real and resolve the
                // deferred constant arguments against their positions.
                for i in 0..args.len() {
                    let fits = self.arg_fits(scope, &infos[i], &opty.inputs[i]);
                    debug_assert!(fits);
                    if let ArgInfo::DeferredConst(choices) = &infos[i] {
                        let mut fitting: Vec<&(usize, OperatorType)> = choices
                            .iter()
                            .filter(|(_, ty)| const_fits(ty, &opty.inputs[i]))
                            .collect();
                        fitting.dedup_by(|a, b| a.1 == b.1);
                        let (entry_idx, _) = match fitting.len() {
                            1 => fitting[0],
                            _ => {
                                let name = match &args[i].kind {
                                    ExprKind::Op(r, _) => r.name.clone(),
                                    _ => unreachable!(),
                                };
                                return Err(Diagnostic::new(
                                    "op",
                                    args[i].span,
                                    TypeError::OperatorAmbiguous { name },
                                ));
                            }
                        };
                        if let ExprKind::Op(r, _) = &mut args[i].kind {
                            r.target = OpTarget::Indexed(*entry_idx);
                        }
                    }
                }
                opref.target = OpTarget::Indexed(index);
                let premises: Vec<Report> = infos
                    .into_iter()
                    .zip(&opty.inputs)
                    .map(|(info, (pq, _))| match info {
                        ArgInfo::Computed(_, r) => r,
                        ArgInfo::DeferredConst(_) => Report::new(),
                        ArgInfo::Deferred(idx) => {
                            let usage = match (pq, scope.ty(idx)) {
                                (PseudoQualifier::Hi, _) => Usage::HiddenOnly,
                                (_, PseudoType::Proper(t))
                                    if self.unifier.zonk(t).qual == Qualifier::Li =>
                                {
                                    Usage::Consumed
                                }
                                _ => Usage::Unrestricted,
                            };
                            let mut r = Report::new();
                            r.insert(idx, Mark { usage, premise: 0 });
                            r
                        }
                    })
                    .collect();
                let report = self.merge(self.opts.operator_split, "op", span, scope, premises)?;
                Ok((opty.output_type(), report))
            }
            ExprKind::Tuple(q, items) => {
                let q = *q;
                let mut reports = Vec::with_capacity(items.len());
                let mut types = Vec::with_capacity(items.len());
                for (i, item) in items.iter_mut().enumerate() {
                    let (t, r) = self.infer(scope, item)?;
                    if !crate::syntax::type_is_q(q, &PseudoType::Proper(t.clone())) {
                        return Err(Diagnostic::new(
                            "tuple",
                            item.span,
                            TypeError::TupleContainment {
                                qual: q,
                                index: i,
                                found: self.unifier.zonk(&t).to_string(),
                            },
                        ));
                    }
                    types.push(t);
                    reports.push(r);
                }
                let report = self.merge(SplitKind::Pseudosplit, "tuple", span, scope, reports)?;
                Ok((Type::new(q, Pretype::Tuple(types)), report))
            }
            ExprKind::App(f, a) => {
                let (tf, rf) = self.infer(scope, f)?;
                let (dom, cod) = match tf.pretype {
                    Pretype::Arrow(d, c) => (*d, *c),
                    _ => {
                        return Err(Diagnostic::new(
                            "app",
                            f.span,
                            TypeError::ExpectedFunction(self.unifier.zonk(&tf).to_string()),
                        ))
                    }
                };
                if let ExprKind::Var(v) = &a.kind {
                    if let Some(idx) = scope.lookup(v) {
                        if let PseudoType::Proper(t) = scope.ty(idx) {
                            if matches!(self.unifier.zonk(t).pretype, Pretype::Hole(_)) {
                                self.unifier.meet(t, &dom);
                            }
                        }
                    }
                }
                let (ta, ra) = self.infer(scope, a)?;
                if self.unifier.meet(&ta, &dom).is_none() {
                    return Err(Diagnostic::new(
                        "app",
                        a.span,
                        TypeError::TypeMismatch {
                            expected: self.unifier.zonk(&dom).to_string(),
                            found: self.unifier.zonk(&ta).to_string(),
                        },
                    ));
                }
                // Premises in evaluation order: function, then argument.
                let report =
                    self.merge(SplitKind::Pseudosplit, "app", span, scope, vec![rf, ra])?;
                Ok((cod, report))
            }
            ExprKind::Lambda(q, x, tx, body) => {
                let q = *q;
                let idx = scope.push(x.clone(), PseudoType::Proper(tx.clone()));
                let result = self.infer(scope, body);
                scope.pop();
                let (tbody, mut report) = result?;
                {
                    // Temporarily re-extend the scope for binder diagnostics.
                    let mut scope2 = Scope {
                        entries: scope.entries.clone(),
                    };
                    scope2.push(x.clone(), PseudoType::Proper(tx.clone()));
                    self.close_binder("lambda", span, &scope2, &mut report, idx)?;
                }
                for (i, mark) in report.iter() {
                    match mark.usage {
                        Usage::HiddenOnly => {
                            return Err(Diagnostic::new(
                                "lambda",
                                span,
                                TypeError::HiddenCaptureInLambda(scope.var(*i).clone()),
                            ))
                        }
                        Usage::Consumed if q == Qualifier::Un => {
                            return Err(Diagnostic::new(
                                "lambda",
                                span,
                                TypeError::UnLambdaConsumesLinear(scope.var(*i).clone()),
                            ))
                        }
                        _ => {}
                    }
                }
                Ok((
                    Type::new(
                        q,
                        Pretype::Arrow(Box::new(tx.clone()), Box::new(tbody)),
                    ),
                    report,
                ))
            }
            ExprKind::Split(scrutinee, pat, body) => {
                for (i, v) in pat.iter().enumerate() {
                    if pat[..i].contains(v) {
                        return Err(Diagnostic::new(
                            "spl",
                            span,
                            TypeError::DuplicatePatternVar(v.clone()),
                        ));
                    }
                }
                let (ts, rs) = self.infer(scope, scrutinee)?;
                let ts = self.unifier.zonk(&ts);
                let components = match &ts.pretype {
                    Pretype::Tuple(ts) => ts.clone(),
                    _ => {
                        return Err(Diagnostic::new(
                            "spl",
                            scrutinee.span,
                            TypeError::ExpectedTuple(ts.to_string()),
                        ))
                    }
                };
                if components.len() != pat.len() {
                    return Err(Diagnostic::new(
                        "spl",
                        span,
                        TypeError::PatternArity {
                            expected: components.len(),
                            found: pat.len(),
                        },
                    ));
                }
                let indices: Vec<usize> = pat
                    .iter()
                    .zip(&components)
                    .map(|(v, t)| scope.push(v.clone(), PseudoType::Proper(t.clone())))
                    .collect();
                let result = self.infer(scope, body);
                let scope_with = Scope {
                    entries: scope.entries.clone(),
                };
                for _ in pat.iter() {
                    scope.pop();
                }
                let (tbody, mut rbody) = result?;
                for idx in indices.into_iter().rev() {
                    self.close_binder("spl", span, &scope_with, &mut rbody, idx)?;
                }
                let report =
                    self.merge(SplitKind::Pseudosplit, "spl", span, scope, vec![rs, rbody])?;
                Ok((tbody, report))
            }
            ExprKind::If(c, t, els) => {
                let (tc, rc) = self.infer(scope, c)?;
                let bool_ty = Type::new(tc.qual, Pretype::Base(BaseType::Bool));
                if self.unifier.meet(&tc, &bool_ty).is_none() {
                    return Err(Diagnostic::new(
                        "if",
                        c.span,
                        TypeError::ExpectedBool(self.unifier.zonk(&tc).to_string()),
                    ));
                }
                let (tt, rt) = self.infer(scope, t)?;
                let (te, re) = self.infer(scope, els)?;
                let ty = self.unifier.meet(&tt, &te).ok_or_else(|| {
                    Diagnostic::new(
                        "if",
                        span,
                        TypeError::TypeMismatch {
                            expected: self.unifier.zonk(&tt).to_string(),
                            found: self.unifier.zonk(&te).to_string(),
                        },
                    )
                })?;
                let branches = self.merge_branches("if", span, scope, rt, re)?;
                let report =
                    self.merge(SplitKind::Pseudosplit, "if", span, scope, vec![rc, branches])?;
                Ok((ty, report))
            }
            ExprKind::Let(x, bound, body) => {
                let (tb, rb) = self.infer(scope, bound)?;
                let idx = scope.push(x.clone(), PseudoType::Proper(tb));
                let result = self.infer(scope, body);
                let scope_with = Scope {
                    entries: scope.entries.clone(),
                };
                scope.pop();
                let (tbody, mut rbody) = result?;
                self.close_binder("let", span, &scope_with, &mut rbody, idx)?;
                let report =
                    self.merge(SplitKind::Pseudosplit, "let", span, scope, vec![rb, rbody])?;
                Ok((tbody, report))
            }
            ExprKind::Nil(q) => {
                let elem = self.unifier.fresh();
                Ok((
                    Type::new(*q, Pretype::List(Box::new(elem))),
                    Report::new(),
                ))
            }
            ExprKind::Cons(q, h, t) => {
                let q = *q;
                let (th, rh) = self.infer(scope, h)?;
                if !crate::syntax::type_is_q(q, &PseudoType::Proper(th.clone())) {
                    return Err(Diagnostic::new(
                        "cons",
                        h.span,
                        TypeError::ConsHeadContainment {
                            qual: q,
                            found: self.unifier.zonk(&th).to_string(),
                        },
                    ));
                }
                let (tt, rt) = self.infer(scope, t)?;
                let expected = Type::new(q, Pretype::List(Box::new(th)));
                let ty = self.unifier.meet(&tt, &expected).ok_or_else(|| {
                    Diagnostic::new(
                        "cons",
                        t.span,
                        TypeError::TypeMismatch {
                            expected: self.unifier.zonk(&expected).to_string(),
                            found: self.unifier.zonk(&tt).to_string(),
                        },
                    )
                })?;
                let report =
                    self.merge(SplitKind::Pseudosplit, "cons", span, scope, vec![rh, rt])?;
                Ok((ty, report))
            }
            ExprKind::Case(s, nil_arm, z1, z2, cons_arm) => {
                if z1 == z2 {
                    return Err(Diagnostic::new(
                        "case",
                        span,
                        TypeError::DuplicatePatternVar(z1.clone()),
                    ));
                }
                let (tsc, rsc) = self.infer(scope, s)?;
                let tsc = self.unifier.zonk(&tsc);
                let elem = match &tsc.pretype {
                    Pretype::List(t) => (**t).clone(),
                    _ => {
                        return Err(Diagnostic::new(
                            "case",
                            s.span,
                            TypeError::ExpectedList(tsc.to_string()),
                        ))
                    }
                };
                let (t0, r0) = self.infer(scope, nil_arm)?;
                let i1 = scope.push(z1.clone(), PseudoType::Proper(elem.clone()));
                let i2 = scope.push(
                    z2.clone(),
                    PseudoType::Proper(Type::new(tsc.qual, Pretype::List(Box::new(elem)))),
                );
                let result = self.infer(scope, cons_arm);
                let scope_with = Scope {
                    entries: scope.entries.clone(),
                };
                scope.pop();
                scope.pop();
                let (t1, mut r1) = result?;
                self.close_binder("case", span, &scope_with, &mut r1, i2)?;
                self.close_binder("case", span, &scope_with, &mut r1, i1)?;
                let ty = self.unifier.meet(&t0, &t1).ok_or_else(|| {
                    Diagnostic::new(
                        "case",
                        span,
                        TypeError::TypeMismatch {
                            expected: self.unifier.zonk(&t0).to_string(),
                            found: self.unifier.zonk(&t1).to_string(),
                        },
                    )
                })?;
                let branches = self.merge_branches("case", span, scope, r0, r1)?;
                let report = self.merge(
                    SplitKind::Pseudosplit,
                    "case",
                    span,
                    scope,
                    vec![rsc, branches],
                )?;
                Ok((ty, report))
            }
        }
    }

    fn arg_fits(
        &mut self,
        scope: &Scope,
        info: &ArgInfo,
        input: &(PseudoQualifier, Pretype),
    ) -> bool {
        let (pq, pin) = input;
        match info {
            ArgInfo::Deferred(idx) => match (pq, scope.ty(*idx)) {
                (PseudoQualifier::Hi, PseudoType::Hidden(b)) => *pin == Pretype::Base(*b),
                (PseudoQualifier::Hi, PseudoType::Proper(t)) => {
                    // Zonk before reading the qualifier: a hole entry
                    // carries a meaningless one.
                    let t = self.unifier.zonk(t);
                    t.qual == Qualifier::Li
                        && match (&t.pretype, pin) {
                            (Pretype::Base(x), Pretype::Base(y)) => x == y,
                            _ => false,
                        }
                }
                (_, PseudoType::Hidden(_)) => false,
                (pq, PseudoType::Proper(t)) => {
                    let want = Type::new(
                        match pq {
                            PseudoQualifier::Li => Qualifier::Li,
                            PseudoQualifier::Un => Qualifier::Un,
                            PseudoQualifier::Hi => unreachable!(),
                        },
                        pin.clone(),
                    );
                    self.unifier.meet(t, &want).is_some()
                }
            },
            ArgInfo::DeferredConst(choices) => {
                choices.iter().any(|(_, ty)| const_fits(ty, input))
            }
            ArgInfo::Computed(t, _) => {
                if *pq == PseudoQualifier::Hi {
                    return false;
                }
                let want = Type::new(
                    match pq {
                        PseudoQualifier::Li => Qualifier::Li,
                        PseudoQualifier::Un => Qualifier::Un,
                        PseudoQualifier::Hi => unreachable!(),
                    },
                    pin.clone(),
                );
                self.unifier.meet(t, &want).is_some()
            }
        }
    }

    /// Turn an index-keyed report into the public, name-keyed form.
    fn public_report(&self, scope: &Scope, ctx: &TypeContext, report: &Report) -> UsageReport {
        let mut entries = BTreeMap::new();
        for (v, _) in ctx.entries() {
            entries.insert(
                v.clone(),
                UsageEntry {
                    usage: Usage::Unused,
                    consuming_premise: None,
                },
            );
        }
        for (idx, mark) in report {
            entries.insert(
                scope.var(*idx).clone(),
                UsageEntry {
                    usage: mark.usage,
                    consuming_premise: (mark.usage == Usage::Consumed).then_some(mark.premise),
                },
            );
        }
        UsageReport { entries }
    }
}

/// Does a constant entry's output sit at this input position? Both sides
/// are signature-written, so plain equality decides.
fn const_fits(ty: &OperatorType, input: &(PseudoQualifier, Pretype)) -> bool {
    let (pq, pin) = input;
    ty.arity() == 0
        && *pq != PseudoQualifier::Hi
        && PseudoQualifier::from(ty.output.0) == *pq
        && ty.output.1 == *pin
}

/// Check an expression against a context, resolving operator occurrences in
/// place. On success every linear context entry has been consumed.
pub fn check_expr(
    ctx: &TypeContext,
    sig: &Signature,
    opts: CheckOptions,
    e: &mut Expr,
) -> Result<(Type, UsageReport), Diagnostic> {
    let mut checker = Checker::new(sig, opts);
    check_expr_with(&mut checker, ctx, e)
}

pub(crate) fn check_expr_with(
    checker: &mut Checker<'_>,
    ctx: &TypeContext,
    e: &mut Expr,
) -> Result<(Type, UsageReport), Diagnostic> {
    let mut scope = Scope::from_context(ctx);
    let (t, report) = checker.infer(&mut scope, e)?;
    for (idx, (v, ty)) in ctx.entries().iter().enumerate() {
        if let PseudoType::Proper(t) = ty {
            if t.qual == Qualifier::Li {
                let used = report.get(&idx).map(|m| m.usage);
                if used != Some(Usage::Consumed) {
                    return Err(Diagnostic::new(
                        "judgment",
                        e.span,
                        TypeError::UnusedLinear(v.clone()),
                    ));
                }
            }
        }
    }
    let t = checker.unifier.zonk(&t);
    let public = checker.public_report(&scope, ctx, &report);
    Ok((t, public))
}

/// The typing relation `Π ⊢ e : T` as an algorithm: returns the type and
/// the per-variable usage that witnesses the context distribution.
pub fn type_of(
    ctx: &TypeContext,
    sig: &Signature,
    opts: CheckOptions,
    e: &Expr,
) -> Result<(Type, UsageReport), Diagnostic> {
    let mut e = e.clone();
    check_expr(ctx, sig, opts, &mut e)
}

/// The pseudotyping relation `Π ⊩ e : Υ` for operator arguments: a variable
/// of hidden base type in an otherwise unrestricted context pseudotypes at
/// `hi B`; everything else defers to [`type_of`].
pub fn pseudo_type_of(
    ctx: &TypeContext,
    sig: &Signature,
    e: &Expr,
) -> Result<PseudoType, Diagnostic> {
    if let ExprKind::Var(v) = &e.kind {
        if let Some(PseudoType::Hidden(b)) = ctx.lookup(v) {
            for (x, t) in ctx.entries() {
                if x != v && !crate::syntax::type_is_q(Qualifier::Un, t) {
                    return Err(Diagnostic::new(
                        "pseudotyping",
                        e.span,
                        TypeError::UnusedLinear(x.clone()),
                    ));
                }
            }
            return Ok(PseudoType::Hidden(*b));
        }
    }
    type_of(ctx, sig, CheckOptions::default(), e).map(|(t, _)| PseudoType::Proper(t))
}

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Usage::Unused => "unused",
            Usage::Unrestricted => "unrestricted",
            Usage::HiddenOnly => "hidden-only",
            Usage::Consumed => "linear-consumed",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{OpRef, PrimKey};
    use BaseType::*;
    use Qualifier::*;

    fn li(b: BaseType) -> PseudoType {
        PseudoType::Proper(Type::base(Li, b))
    }
    fn un(b: BaseType) -> PseudoType {
        PseudoType::Proper(Type::base(Un, b))
    }
    fn hi(b: BaseType) -> PseudoType {
        PseudoType::Hidden(b)
    }
    fn ctx(entries: Vec<(&str, PseudoType)>) -> TypeContext {
        TypeContext::new(
            entries
                .into_iter()
                .map(|(v, t)| (Var::new(v), t))
                .collect(),
        )
        .unwrap()
    }

    // -- The literal relations -------------------------------------------

    #[test]
    fn split_examples() {
        let empty = TypeContext::empty();
        assert!(split_check(&[empty.clone(), empty.clone()], &empty));
        let w = ctx(vec![("x", un(Int))]);
        assert!(split_check(&[w.clone(), w.clone()], &w));
        let l = ctx(vec![("x", li(Int))]);
        assert!(!split_check(&[l.clone(), l.clone()], &l));
        assert!(split_check(&[l.clone(), empty.clone()], &l));
        assert!(split_check(&[empty.clone(), l.clone()], &l));
    }

    #[test]
    fn zero_ary_split_is_un() {
        assert!(split_check(&[], &ctx(vec![("x", un(Int)), ("y", hi(Int))])));
        assert!(!split_check(&[], &ctx(vec![("x", li(Int))])));
    }

    #[test]
    fn pseudosplit_examples() {
        let whole = ctx(vec![("x", li(Int))]);
        assert!(pseudosplit_check(
            &[ctx(vec![("x", hi(Int))]), ctx(vec![("x", li(Int))])],
            &whole
        ));
        assert!(!pseudosplit_check(
            &[ctx(vec![("x", li(Int))]), ctx(vec![("x", hi(Int))])],
            &whole
        ));
        // The split never merges hidden with linear.
        assert!(!split_check(
            &[ctx(vec![("x", hi(Int))]), ctx(vec![("x", li(Int))])],
            &whole
        ));
        // Hidden applies to base pretypes only: a linear tuple entry
        // distributes by the plain rules.
        let tup = PseudoType::Proper(Type::new(
            Li,
            Pretype::Tuple(vec![Type::base(Li, Int)]),
        ));
        let whole_t = ctx(vec![("x", tup.clone())]);
        assert!(!pseudosplit_check(
            &[ctx(vec![("x", hi(Int))]), ctx(vec![("x", tup.clone())])],
            &whole_t
        ));
        assert!(pseudosplit_check(
            &[TypeContext::empty(), ctx(vec![("x", tup)])],
            &whole_t
        ));
    }

    #[test]
    fn pseudosplit_requires_full_hidden_prefix() {
        let whole = ctx(vec![("x", li(Int))]);
        // hi in part 0, nothing in part 1, li in part 2: not derivable.
        assert!(!pseudosplit_check(
            &[
                ctx(vec![("x", hi(Int))]),
                TypeContext::empty(),
                ctx(vec![("x", li(Int))])
            ],
            &whole
        ));
        assert!(pseudosplit_check(
            &[
                ctx(vec![("x", hi(Int))]),
                ctx(vec![("x", hi(Int))]),
                ctx(vec![("x", li(Int))])
            ],
            &whole
        ));
        // Absent in the leading parts, linear later, is the plain rule.
        assert!(pseudosplit_check(
            &[
                TypeContext::empty(),
                TypeContext::empty(),
                ctx(vec![("x", li(Int))])
            ],
            &whole
        ));
    }

    #[test]
    fn hidden_entries_duplicate_like_unrestricted() {
        let whole = ctx(vec![("x", hi(Int))]);
        assert!(split_check(
            &[ctx(vec![("x", hi(Int))]), ctx(vec![("x", hi(Int))])],
            &whole
        ));
        assert!(!split_check(
            &[ctx(vec![("x", hi(Int))]), TypeContext::empty()],
            &whole
        ));
    }

    // -- merge_usages ------------------------------------------------------

    fn report(entries: Vec<(&str, Usage)>) -> UsageReport {
        UsageReport {
            entries: entries
                .into_iter()
                .map(|(v, u)| {
                    (
                        Var::new(v),
                        UsageEntry {
                            usage: u,
                            consuming_premise: None,
                        },
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn merge_examples() {
        let hidden_then_consume = [
            report(vec![("x", Usage::HiddenOnly)]),
            report(vec![("x", Usage::Consumed)]),
        ];
        let merged = merge_usages(SplitKind::Pseudosplit, &hidden_then_consume).unwrap();
        assert_eq!(merged.usage_of(&Var::new("x")), Usage::Consumed);
        assert_eq!(
            merged.entries[&Var::new("x")].consuming_premise,
            Some(1)
        );

        let consume_then_hidden = [
            report(vec![("x", Usage::Consumed)]),
            report(vec![("x", Usage::HiddenOnly)]),
        ];
        assert!(merge_usages(SplitKind::Pseudosplit, &consume_then_hidden).is_err());

        // Under the operator split the hidden/consume merge is refused too.
        let err = merge_usages(SplitKind::Split, &hidden_then_consume).unwrap_err();
        assert!(matches!(
            err.error,
            TypeError::HiddenWithConsumptionAtOperator(_)
        ));
    }

    // -- A tiny signature for checker tests -------------------------------

    fn entry(name: &str, inputs: Vec<(PseudoQualifier, Pretype)>, out: (Qualifier, Pretype), prim: PrimKey) -> SigEntry {
        SigEntry {
            name: name.into(),
            ty: OperatorType {
                inputs,
                output: out,
            },
            prim,
        }
    }

    fn test_sig() -> Signature {
        use PseudoQualifier as PQ;
        Signature::new(vec![
            entry(
                "+",
                vec![(PQ::Hi, Pretype::Base(Int)), (PQ::Li, Pretype::Base(Int))],
                (Li, Pretype::Base(Int)),
                PrimKey::Add,
            ),
            entry(
                "*",
                vec![(PQ::Li, Pretype::Base(Int)), (PQ::Li, Pretype::Base(Int))],
                (Li, Pretype::Base(Int)),
                PrimKey::Mul,
            ),
            entry(
                "id",
                vec![(PQ::Hi, Pretype::Base(Int))],
                (Li, Pretype::Base(Int)),
                PrimKey::Id,
            ),
            entry("0", vec![], (Li, Pretype::Base(Int)), PrimKey::Lit),
        ])
        .unwrap()
    }

    fn infer_ok(ctx_: &TypeContext, e: &Expr) -> (Type, UsageReport) {
        type_of(ctx_, &test_sig(), CheckOptions::default(), e).unwrap()
    }

    fn infer_err(ctx_: &TypeContext, e: &Expr) -> Diagnostic {
        type_of(ctx_, &test_sig(), CheckOptions::default(), e).unwrap_err()
    }

    #[test]
    fn var_rule() {
        let c = ctx(vec![("x", un(Bool))]);
        let (t, r) = infer_ok(&c, &Expr::var("x"));
        assert_eq!(t, Type::base(Un, Bool));
        assert_eq!(r.usage_of(&Var::new("x")), Usage::Unrestricted);
        // A hidden variable is not typeable by the variable rule.
        let c = ctx(vec![("x", hi(Int))]);
        let d = infer_err(&c, &Expr::var("x"));
        assert!(matches!(d.error, TypeError::HiddenUseOutsideOperator(_)));
    }

    #[test]
    fn rejects_pseudosplit_at_operator() {
        // x + (x * y) with x read hidden by + and consumed by *.
        let c = ctx(vec![("x", li(Int)), ("y", li(Int))]);
        let e = Expr::op(
            OpRef::named("+"),
            vec![
                Expr::var("x"),
                Expr::op(OpRef::named("*"), vec![Expr::var("x"), Expr::var("y")]),
            ],
        );
        let d = infer_err(&c, &e);
        assert!(matches!(
            d.error,
            TypeError::HiddenWithConsumptionAtOperator(v) if v == Var::new("x")
        ));
        // The mutant that pseudosplits at operators accepts it.
        let got = type_of(
            &c,
            &test_sig(),
            CheckOptions {
                operator_split: SplitKind::Pseudosplit,
            },
            &e,
        );
        assert!(got.is_ok());
    }

    #[test]
    fn hidden_then_consume_across_tuple_components() {
        // li <id(y), y + 0... no: li <id(y), y> consumes y after the hidden read.
        let c = ctx(vec![("y", li(Int))]);
        let e = Expr::tuple(
            Li,
            vec![
                Expr::op(OpRef::named("id"), vec![Expr::var("y")]),
                Expr::var("y"),
            ],
        );
        let (t, r) = infer_ok(&c, &e);
        assert_eq!(
            t,
            Type::new(
                Li,
                Pretype::Tuple(vec![Type::base(Li, Int), Type::base(Li, Int)])
            )
        );
        assert_eq!(r.usage_of(&Var::new("y")), Usage::Consumed);
        // The reverse order reads after consumption.
        let e = Expr::tuple(
            Li,
            vec![
                Expr::var("y"),
                Expr::op(OpRef::named("id"), vec![Expr::var("y")]),
            ],
        );
        let d = infer_err(&c, &e);
        assert!(matches!(d.error, TypeError::HiddenReadAfterConsumption(_)));
    }

    #[test]
    fn unused_linear_is_rejected() {
        let c = ctx(vec![("x", li(Int))]);
        let d = infer_err(&c, &Expr::op(OpRef::named("0"), vec![]));
        assert!(matches!(d.error, TypeError::UnusedLinear(_)));
        // Hidden-only use does not count as consumption.
        let d = infer_err(&c, &Expr::op(OpRef::named("id"), vec![Expr::var("x")]));
        assert!(matches!(d.error, TypeError::UnusedLinear(_)));
    }

    #[test]
    fn un_tuple_cannot_hold_linear() {
        let c = ctx(vec![("x", li(Int))]);
        let e = Expr::tuple(Un, vec![Expr::var("x")]);
        let d = infer_err(&c, &e);
        assert!(matches!(d.error, TypeError::TupleContainment { .. }));
    }

    #[test]
    fn lambda_rules() {
        // li param must be consumed.
        let e = Expr::lambda(Un, "x", Type::base(Li, Int), Expr::op(OpRef::named("0"), vec![]));
        let d = infer_err(&TypeContext::empty(), &e);
        assert!(matches!(d.error, TypeError::UnusedLinear(_)));
        // un lambda cannot consume an outer linear variable.
        let c = ctx(vec![("y", li(Int))]);
        let e = Expr::lambda(Un, "x", Type::base(Un, Int), Expr::var("y"));
        let d = infer_err(&c, &e);
        assert!(matches!(d.error, TypeError::UnLambdaConsumesLinear(_)));
        // No closure may capture a hidden read of an outer variable.
        let e = Expr::split(
            Expr::tuple(
                Li,
                vec![
                    Expr::lambda(
                        Un,
                        "w",
                        Type::base(Un, Int),
                        Expr::op(OpRef::named("id"), vec![Expr::var("y")]),
                    ),
                    Expr::var("y"),
                ],
            ),
            vec![Var::new("f"), Var::new("z")],
            Expr::tuple(Li, vec![Expr::var("f"), Expr::var("z")]),
        );
        let d = infer_err(&c, &e);
        assert!(matches!(d.error, TypeError::HiddenCaptureInLambda(_)));
    }

    #[test]
    fn branches_must_agree_on_consumption() {
        let c = ctx(vec![("b", un(Bool)), ("x", li(Int))]);
        let e = Expr::if_(
            Expr::var("b"),
            Expr::var("x"),
            Expr::op(OpRef::named("0"), vec![]),
        );
        let d = infer_err(&c, &e);
        assert!(matches!(d.error, TypeError::BranchUsageMismatch(_)));
    }

    #[test]
    fn shadowing_in_split_pattern() {
        // spl <x> as <x> in x, rebinding the name of a consumed variable.
        let c = ctx(vec![("x", li(Int))]);
        let e = Expr::split(
            Expr::tuple(Li, vec![Expr::var("x")]),
            vec![Var::new("x")],
            Expr::var("x"),
        );
        let (t, r) = infer_ok(&c, &e);
        assert_eq!(t, Type::base(Li, Int));
        assert_eq!(r.usage_of(&Var::new("x")), Usage::Consumed);
    }

    #[test]
    fn weakening_by_hidden() {
        // Adding an unused hidden binding preserves verdicts.
        let c = ctx(vec![("y", li(Int))]);
        let e = Expr::tuple(
            Li,
            vec![
                Expr::op(OpRef::named("id"), vec![Expr::var("y")]),
                Expr::var("y"),
            ],
        );
        let (t1, _) = infer_ok(&c, &e);
        let c2 = ctx(vec![("h", hi(Int)), ("y", li(Int))]);
        let (t2, _) = infer_ok(&c2, &e);
        assert_eq!(t1, t2);
    }

    #[test]
    fn pseudo_typing_examples() {
        let sig = test_sig();
        let c = ctx(vec![("x", hi(Int))]);
        assert_eq!(
            pseudo_type_of(&c, &sig, &Expr::var("x")).unwrap(),
            PseudoType::Hidden(Int)
        );
        let c = ctx(vec![("x", hi(Int)), ("y", li(Int))]);
        assert!(pseudo_type_of(&c, &sig, &Expr::var("x")).is_err());
        let c = ctx(vec![("x", un(Int))]);
        assert_eq!(
            pseudo_type_of(&c, &sig, &Expr::var("x")).unwrap(),
            PseudoType::Proper(Type::base(Un, Int))
        );
    }

    #[test]
    fn hole_bound_to_un_is_not_hidden_readable() {
        // The element type of a case-bound variable resolves to un int
        // through a use of the TAIL; the element itself must then fail at
        // a hidden input position, junk qualifier on its hole entry or
        // not.
        use PseudoQualifier as PQ;
        let un_int_list = Pretype::List(Box::new(Type::base(Un, Int)));
        let sig = Signature::new(vec![
            entry(
                "ulen",
                vec![(PQ::Un, un_int_list)],
                (Un, Pretype::Base(Int)),
                PrimKey::Id,
            ),
            entry(
                "idh",
                vec![(PQ::Hi, Pretype::Base(Int))],
                (Li, Pretype::Base(Int)),
                PrimKey::Id,
            ),
        ])
        .unwrap();
        // let xs = un [] in case xs of (li 0, (z : zs) ->
        //   let u = ulen(zs) in idh(z))
        let e = Expr::let_(
            "xs",
            Expr::nil(Un),
            Expr::case(
                Expr::var("xs"),
                Expr::op(OpRef::constant(Li, crate::syntax::Constant::Int(0)), vec![]),
                "z",
                "zs",
                Expr::let_(
                    "u",
                    Expr::op(OpRef::named("ulen"), vec![Expr::var("zs")]),
                    Expr::op(OpRef::named("idh"), vec![Expr::var("z")]),
                ),
            ),
        );
        let got = type_of(&TypeContext::empty(), &sig, CheckOptions::default(), &e);
        assert!(got.is_err(), "an un element must not be hidden-read: {got:?}");
    }

    #[test]
    fn nil_resolution_through_cons() {
        // li (0() : li []) resolves the nil element type to li int.
        let e = Expr::cons(
            Li,
            Expr::op(OpRef::named("0"), vec![]),
            Expr::nil(Li),
        );
        let (t, _) = infer_ok(&TypeContext::empty(), &e);
        assert_eq!(
            t,
            Type::new(Li, Pretype::List(Box::new(Type::base(Li, Int))))
        );
    }

    // -- Oracle: brute-force derivation search over the inductive rules ----

    fn derivable(
        kind: SplitKind,
        parts: &mut Vec<Vec<(Var, PseudoType)>>,
        whole: &mut Vec<(Var, PseudoType)>,
    ) -> bool {
        if whole.is_empty() {
            return parts.iter().all(|p| p.is_empty());
        }
        let (x, t) = whole.last().cloned().unwrap();
        let ends = |p: &Vec<(Var, PseudoType)>, want: &PseudoType| {
            matches!(p.last(), Some((y, u)) if *y == x && u == want)
        };
        if t.qual() != PseudoQualifier::Li {
            if parts.iter().all(|p| ends(p, &t)) {
                whole.pop();
                parts.iter_mut().for_each(|p| {
                    p.pop();
                });
                if derivable(kind, parts, whole) {
                    return true;
                }
                parts
                    .iter_mut()
                    .for_each(|p| p.push((x.clone(), t.clone())));
                whole.push((x, t));
            }
            return false;
        }
        // Plain rule: the linear entry goes to exactly one part.
        for j in 0..parts.len() {
            if ends(&parts[j], &t) {
                whole.pop();
                parts[j].pop();
                if derivable(kind, parts, whole) {
                    return true;
                }
                parts[j].push((x.clone(), t.clone()));
                whole.push((x.clone(), t.clone()));
            }
        }
        // Pseudosplit rule for linear base entries.
        if kind == SplitKind::Pseudosplit {
            if let PseudoType::Proper(ty) = &t {
                if let Pretype::Base(b) = ty.pretype {
                    let h = PseudoType::Hidden(b);
                    for j in 0..parts.len() {
                        if ends(&parts[j], &t) && (0..j).all(|i| ends(&parts[i], &h)) {
                            whole.pop();
                            parts[j].pop();
                            (0..j).for_each(|i| {
                                parts[i].pop();
                            });
                            if derivable(kind, parts, whole) {
                                return true;
                            }
                            (0..j).for_each(|i| parts[i].push((x.clone(), h.clone())));
                            parts[j].push((x.clone(), t.clone()));
                            whole.push((x.clone(), t.clone()));
                        }
                    }
                }
            }
        }
        false
    }

    fn oracle(kind: SplitKind, parts: &[TypeContext], whole: &TypeContext) -> bool {
        if parts.is_empty() {
            return ctx_is_q(Qualifier::Un, whole);
        }
        let mut ps: Vec<Vec<(Var, PseudoType)>> =
            parts.iter().map(|p| p.entries().to_vec()).collect();
        let mut w = whole.entries().to_vec();
        derivable(kind, &mut ps, &mut w)
    }

    /// All pseudotypes over {int, bool} used by the exhaustive comparison.
    fn all_pseudotypes() -> Vec<PseudoType> {
        vec![
            li(Int),
            li(Bool),
            un(Int),
            un(Bool),
            hi(Int),
            hi(Bool),
        ]
    }

    #[test]
    fn split_checks_agree_with_rule_enumeration_on_two_vars() {
        // Exhaustive on wholes over <=2 variables and binary parts drawn
        // from per-entry distribution choices (including wrong ones).
        let vars = [Var::new("x"), Var::new("y")];
        let mut wholes: Vec<Vec<(Var, PseudoType)>> = vec![vec![]];
        for t in all_pseudotypes() {
            wholes.push(vec![(vars[0].clone(), t)]);
        }
        for t in all_pseudotypes() {
            for u in all_pseudotypes() {
                wholes.push(vec![(vars[0].clone(), t.clone()), (vars[1].clone(), u)]);
            }
        }
        let mut cases = 0u64;
        for whole_entries in wholes {
            let whole = TypeContext::new(whole_entries.clone()).unwrap();
            // Each entry lands in: both, left, right, neither, or (for li
            // base) the hidden-left/linear-right patterns and their flips.
            type Placement = (Option<PseudoType>, Option<PseudoType>);
            let choices_per_entry: Vec<Vec<Placement>> =
                whole_entries
                    .iter()
                    .map(|(_, t)| {
                        let mut c = vec![
                            (Some(t.clone()), Some(t.clone())),
                            (Some(t.clone()), None),
                            (None, Some(t.clone())),
                            (None, None),
                        ];
                        if let PseudoType::Proper(ty) = t {
                            if let Pretype::Base(b) = ty.pretype {
                                let h = PseudoType::Hidden(b);
                                c.push((Some(h.clone()), Some(t.clone())));
                                c.push((Some(t.clone()), Some(h.clone())));
                                c.push((Some(h.clone()), Some(h.clone())));
                                c.push((Some(h.clone()), None));
                            }
                        }
                        c
                    })
                    .collect();
            type Parts = (Vec<(Var, PseudoType)>, Vec<(Var, PseudoType)>);
            let mut assignments: Vec<Parts> = vec![(vec![], vec![])];
            for (i, options) in choices_per_entry.iter().enumerate() {
                let mut next = Vec::new();
                for (l, r) in &assignments {
                    for (ol, or) in options {
                        let mut l2 = l.clone();
                        let mut r2 = r.clone();
                        if let Some(t) = ol {
                            l2.push((whole_entries[i].0.clone(), t.clone()));
                        }
                        if let Some(t) = or {
                            r2.push((whole_entries[i].0.clone(), t.clone()));
                        }
                        next.push((l2, r2));
                    }
                }
                assignments = next;
            }
            for (l, r) in assignments {
                let left = TypeContext::new(l).unwrap();
                let right = TypeContext::new(r).unwrap();
                let parts = [left, right];
                for kind in [SplitKind::Split, SplitKind::Pseudosplit] {
                    let fast = split_like(kind, &parts, &whole);
                    let slow = oracle(kind, &parts, &whole);
                    assert_eq!(
                        fast, slow,
                        "kind {kind:?} whole {whole} parts {} | {}",
                        parts[0], parts[1]
                    );
                    cases += 1;
                }
            }
        }
        assert!(cases > 3_000, "exercised {cases} cases");
    }
}
