//! The store-based small-step machine.
//!
//! A configuration pairs a store of qualified prevalues with a control
//! expression. Reduction finds the unique redex under an evaluation
//! context, applies one β-rule, and plugs the result back. Deallocation is
//! explicit: β-rules remove linear cells as they consume them, and operator
//! applications deallocate by the pseudoqualifiers of the operator's
//! declared typing, never by the qualifier stored in the cell. That is
//! what keeps hidden data alive.

use std::fmt;

use crate::profile::size_of;
use crate::syntax::{
    Constant, Expr, ExprKind, OpRef, OpTarget, PrimKey, PseudoQualifier, Qualifier, Signature,
    Span, Subst, Type, Var,
};

/// Raw stored data.
#[derive(Clone, Debug, PartialEq)]
pub enum Prevalue {
    Const(Constant),
    /// A tuple of store variables.
    Tuple(Vec<Var>),
    Closure(Var, Type, Expr),
    Nil,
    Cons(Var, Var),
}

impl fmt::Display for Prevalue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prevalue::Const(c) => write!(f, "{c}"),
            Prevalue::Tuple(vs) => {
                f.write_str("<")?;
                for (i, v) in vs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str(">")
            }
            Prevalue::Closure(x, t, _) => write!(f, "\\{x}: {t}. ..."),
            Prevalue::Nil => f.write_str("[]"),
            Prevalue::Cons(h, t) => write!(f, "({h} : {t})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Value {
    pub qual: Qualifier,
    pub prevalue: Prevalue,
}

impl Value {
    pub fn new(qual: Qualifier, prevalue: Prevalue) -> Self {
        Value { qual, prevalue }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.qual, self.prevalue)
    }
}

/// The store: an ordered sequence of distinct variables bound to values,
/// with the monotone counter that supplies fresh names.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Store {
    cells: Vec<(Var, Value)>,
    next: u64,
}

impl Store {
    pub fn new() -> Self {
        Store::default()
    }

    pub fn from_cells(cells: Vec<(Var, Value)>) -> Result<Self, Var> {
        let mut s = Store::new();
        for (v, val) in cells {
            if s.lookup(&v).is_some() {
                return Err(v);
            }
            s.cells.push((v, val));
        }
        Ok(s)
    }

    pub fn cells(&self) -> &[(Var, Value)] {
        &self.cells
    }

    pub fn lookup(&self, v: &Var) -> Option<&Value> {
        self.cells.iter().find(|(x, _)| x == v).map(|(_, val)| val)
    }

    /// The next fresh variable. Pure: does not advance the counter.
    pub fn fresh(&self) -> Var {
        let mut k = self.next;
        loop {
            let v = Var(format!("v{k}"));
            if self.lookup(&v).is_none() {
                return v;
            }
            k += 1;
        }
    }

    /// Append a value under a fresh name and return the name.
    pub fn alloc(&mut self, value: Value) -> Var {
        let v = self.fresh();
        let k: u64 = v.0[1..].parse().expect("fresh names are v<k>");
        self.next = k + 1;
        self.cells.push((v.clone(), value));
        v
    }

    fn remove(&mut self, v: &Var) -> Option<Value> {
        let at = self.cells.iter().position(|(x, _)| x == v)?;
        Some(self.cells.remove(at).1)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum MachineError {
    #[error("unbound store variable `{0}`")]
    Unbound(Var),
    #[error("cell `{var}` holds {found}, expected {expected}")]
    Shape {
        var: Var,
        expected: &'static str,
        found: String,
    },
    #[error("linear deallocation of unbound variable `{0}`")]
    DeallocUnbound(Var),
    #[error("tuple pattern of {pattern} variables against a cell of {cell}")]
    SplitArity { pattern: usize, cell: usize },
    #[error("primitive `{name}`: {message}")]
    Primitive { name: String, message: String },
    #[error("operator `{0}` was not resolved against the signature")]
    UnresolvedOperator(String),
}

/// Which qualifiers drive deallocation at operator applications. The
/// faithful machine reads them from the operator's typing; the mutant reads
/// the stored qualifiers instead, which deletes hidden inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DeallocMode {
    #[default]
    OperatorType,
    StoreQualifier,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct MachineOptions {
    pub dealloc: DeallocMode,
}

/// Folds `∼` left to right over the variables: a `li` position removes the
/// binding, `un` and `hi` leave the store unchanged. Returns the removed
/// cells in order.
pub fn dealloc(
    store: &mut Store,
    quals: &[PseudoQualifier],
    vars: &[Var],
) -> Result<Vec<(Var, Value)>, MachineError> {
    debug_assert_eq!(quals.len(), vars.len());
    let mut removed = Vec::new();
    for (q, v) in quals.iter().zip(vars) {
        if *q == PseudoQualifier::Li {
            match store.remove(v) {
                Some(val) => removed.push((v.clone(), val)),
                None => return Err(MachineError::DeallocUnbound(v.clone())),
            }
        }
    }
    Ok(removed)
}

// ---------------------------------------------------------------------------
// Evaluation contexts.

/// One layer of evaluation context. The expressions to the left of the hole
/// in operator, tuple and cons frames are always variables.
#[derive(Clone, Debug, PartialEq)]
pub enum Frame {
    OpArg {
        op: OpRef,
        done: Vec<Expr>,
        rest: Vec<Expr>,
        span: Span,
    },
    TupleItem {
        qual: Qualifier,
        done: Vec<Expr>,
        rest: Vec<Expr>,
        span: Span,
    },
    AppFun {
        arg: Expr,
        span: Span,
    },
    AppArg {
        fun: Var,
        span: Span,
    },
    If {
        then_branch: Expr,
        else_branch: Expr,
        span: Span,
    },
    Split {
        pattern: Vec<Var>,
        body: Expr,
        span: Span,
    },
    Let {
        var: Var,
        body: Expr,
        span: Span,
    },
    ConsHead {
        qual: Qualifier,
        tail: Expr,
        span: Span,
    },
    ConsTail {
        qual: Qualifier,
        head: Expr,
        span: Span,
    },
    Case {
        nil_arm: Expr,
        head_var: Var,
        tail_var: Var,
        cons_arm: Expr,
        span: Span,
    },
}

/// A one-hole context as a stack of frames, outermost first.
pub type EvalContext = Vec<Frame>;

/// Wrap `e` back into the context.
pub fn plug(ctx: EvalContext, e: Expr) -> Expr {
    let mut acc = e;
    for frame in ctx.into_iter().rev() {
        acc = plug_one(frame, acc);
    }
    acc
}

fn plug_one(frame: Frame, e: Expr) -> Expr {
    match frame {
        Frame::OpArg {
            op,
            mut done,
            rest,
            span,
        } => {
            done.push(e);
            done.extend(rest);
            Expr {
                kind: ExprKind::Op(op, done),
                span,
            }
        }
        Frame::TupleItem {
            qual,
            mut done,
            rest,
            span,
        } => {
            done.push(e);
            done.extend(rest);
            Expr {
                kind: ExprKind::Tuple(qual, done),
                span,
            }
        }
        Frame::AppFun { arg, span } => Expr {
            kind: ExprKind::App(Box::new(e), Box::new(arg)),
            span,
        },
        Frame::AppArg { fun, span } => Expr {
            kind: ExprKind::App(Box::new(Expr::new(ExprKind::Var(fun))), Box::new(e)),
            span,
        },
        Frame::If {
            then_branch,
            else_branch,
            span,
        } => Expr {
            kind: ExprKind::If(Box::new(e), Box::new(then_branch), Box::new(else_branch)),
            span,
        },
        Frame::Split {
            pattern,
            body,
            span,
        } => Expr {
            kind: ExprKind::Split(Box::new(e), pattern, Box::new(body)),
            span,
        },
        Frame::Let { var, body, span } => Expr {
            kind: ExprKind::Let(var, Box::new(e), Box::new(body)),
            span,
        },
        Frame::ConsHead { qual, tail, span } => Expr {
            kind: ExprKind::Cons(qual, Box::new(e), Box::new(tail)),
            span,
        },
        Frame::ConsTail { qual, head, span } => Expr {
            kind: ExprKind::Cons(qual, Box::new(head), Box::new(e)),
            span,
        },
        Frame::Case {
            nil_arm,
            head_var,
            tail_var,
            cons_arm,
            span,
        } => Expr {
            kind: ExprKind::Case(
                Box::new(e),
                Box::new(nil_arm),
                head_var,
                tail_var,
                Box::new(cons_arm),
            ),
            span,
        },
    }
}

fn is_var(e: &Expr) -> bool {
    matches!(e.kind, ExprKind::Var(_))
}

fn var_of(e: &Expr) -> Var {
    match &e.kind {
        ExprKind::Var(v) => v.clone(),
        _ => unreachable!("caller checked"),
    }
}

/// Recognize a value expression: the forms the machine allocates directly.
pub fn as_value(e: &Expr) -> Option<Value> {
    match &e.kind {
        ExprKind::Op(r, args) if args.is_empty() => match &r.target {
            OpTarget::Const(q, c) => Some(Value::new(*q, Prevalue::Const(c.clone()))),
            _ => None,
        },
        ExprKind::Tuple(q, items) if items.iter().all(is_var) => Some(Value::new(
            *q,
            Prevalue::Tuple(items.iter().map(var_of).collect()),
        )),
        ExprKind::Lambda(q, x, t, body) => Some(Value::new(
            *q,
            Prevalue::Closure(x.clone(), t.clone(), (**body).clone()),
        )),
        ExprKind::Nil(q) => Some(Value::new(*q, Prevalue::Nil)),
        ExprKind::Cons(q, h, t) if is_var(h) && is_var(t) => {
            Some(Value::new(*q, Prevalue::Cons(var_of(h), var_of(t))))
        }
        _ => None,
    }
}

/// Is `e` one of the redex shapes of the β-rules?
pub fn is_beta_node(e: &Expr) -> bool {
    if as_value(e).is_some() {
        return true;
    }
    match &e.kind {
        ExprKind::Op(_, args) => args.iter().all(is_var),
        ExprKind::If(c, _, _) => is_var(c),
        ExprKind::Split(s, _, _) => is_var(s),
        ExprKind::App(f, a) => is_var(f) && is_var(a),
        ExprKind::Let(_, bound, _) => is_var(bound),
        ExprKind::Case(s, ..) => is_var(s),
        _ => false,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Decomposition {
    /// Terminal configurations are pairs `(S, x)`.
    Variable(Var),
    /// The unique split `e = E[r]` with `r` a β-node.
    Redex(EvalContext, Expr),
}

/// Split an expression into an evaluation context and the redex it
/// surrounds. Total on every expression.
pub fn decompose(e: Expr) -> Decomposition {
    let mut ctx = EvalContext::new();
    let mut cur = e;
    loop {
        if let ExprKind::Var(v) = &cur.kind {
            debug_assert!(ctx.is_empty(), "variables are never descended into");
            return Decomposition::Variable(v.clone());
        }
        if is_beta_node(&cur) {
            return Decomposition::Redex(ctx, cur);
        }
        let span = cur.span;
        match cur.kind {
            ExprKind::Op(op, args) => {
                let i = args.iter().position(|a| !is_var(a)).expect("not a redex");
                let mut args = args;
                let rest = args.split_off(i + 1);
                let inner = args.pop().unwrap();
                ctx.push(Frame::OpArg {
                    op,
                    done: args,
                    rest,
                    span,
                });
                cur = inner;
            }
            ExprKind::Tuple(qual, items) => {
                let i = items.iter().position(|a| !is_var(a)).expect("not a redex");
                let mut items = items;
                let rest = items.split_off(i + 1);
                let inner = items.pop().unwrap();
                ctx.push(Frame::TupleItem {
                    qual,
                    done: items,
                    rest,
                    span,
                });
                cur = inner;
            }
            ExprKind::App(f, a) => {
                if is_var(&f) {
                    ctx.push(Frame::AppArg {
                        fun: var_of(&f),
                        span,
                    });
                    cur = *a;
                } else {
                    ctx.push(Frame::AppFun { arg: *a, span });
                    cur = *f;
                }
            }
            ExprKind::If(c, t, e2) => {
                ctx.push(Frame::If {
                    then_branch: *t,
                    else_branch: *e2,
                    span,
                });
                cur = *c;
            }
            ExprKind::Split(s, pattern, body) => {
                ctx.push(Frame::Split {
                    pattern,
                    body: *body,
                    span,
                });
                cur = *s;
            }
            ExprKind::Let(x, bound, body) => {
                ctx.push(Frame::Let {
                    var: x,
                    body: *body,
                    span,
                });
                cur = *bound;
            }
            ExprKind::Cons(qual, h, t) => {
                if is_var(&h) {
                    ctx.push(Frame::ConsTail {
                        qual,
                        head: *h,
                        span,
                    });
                    cur = *t;
                } else {
                    ctx.push(Frame::ConsHead {
                        qual,
                        tail: *t,
                        span,
                    });
                    cur = *h;
                }
            }
            ExprKind::Case(s, nil_arm, z1, z2, cons_arm) => {
                ctx.push(Frame::Case {
                    nil_arm: *nil_arm,
                    head_var: z1,
                    tail_var: z2,
                    cons_arm: *cons_arm,
                    span,
                });
                cur = *s;
            }
            ExprKind::Var(_) | ExprKind::Lambda(..) | ExprKind::Nil(_) => {
                unreachable!("handled above")
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Primitives.

/// Evaluate a primitive on the prevalues of its arguments. Total on the
/// constants the operator typings admit, except for array indexing, whose
/// bounds depend on values; an out-of-range access is a domain error.
pub fn apply_primitive(key: &PrimKey, name: &str, args: &[&Prevalue]) -> Result<Prevalue, String> {
    use Constant::*;
    let int = |p: &Prevalue| match p {
        Prevalue::Const(Int(n)) => Ok(*n),
        other => Err(format!("expected an integer, got {other}")),
    };
    let array = |p: &Prevalue| match p {
        Prevalue::Const(Array(xs)) => Ok(xs.clone()),
        other => Err(format!("expected an array, got {other}")),
    };
    let want = |n: usize| {
        if args.len() == n {
            Ok(())
        } else {
            Err(format!("expected {n} arguments, got {}", args.len()))
        }
    };
    match key {
        PrimKey::Lit => {
            want(0)?;
            crate::syntax::parse_literal_constant(name)
                .map(Prevalue::Const)
                .ok_or_else(|| format!("`{name}` is not a literal"))
        }
        PrimKey::Param => Err(format!("parameter `{name}` was never instantiated")),
        PrimKey::ConstInt(n) => {
            want(0)?;
            Ok(Prevalue::Const(Int(*n)))
        }
        PrimKey::Add => {
            want(2)?;
            let r = int(args[0])?
                .checked_add(int(args[1])?)
                .ok_or("integer overflow")?;
            Ok(Prevalue::Const(Int(r)))
        }
        PrimKey::Sub => {
            want(2)?;
            let r = int(args[0])?
                .checked_sub(int(args[1])?)
                .ok_or("integer overflow")?;
            Ok(Prevalue::Const(Int(r)))
        }
        PrimKey::Mul => {
            want(2)?;
            let r = int(args[0])?
                .checked_mul(int(args[1])?)
                .ok_or("integer overflow")?;
            Ok(Prevalue::Const(Int(r)))
        }
        PrimKey::Eq => {
            want(2)?;
            match (args[0], args[1]) {
                (Prevalue::Const(a), Prevalue::Const(b))
                    if !matches!(a, Array(_)) && !matches!(b, Array(_)) =>
                {
                    Ok(Prevalue::Const(Bool(a == b)))
                }
                _ => Err("expected comparable constants".into()),
            }
        }
        PrimKey::EqZero => {
            want(1)?;
            Ok(Prevalue::Const(Bool(int(args[0])? == 0)))
        }
        PrimKey::Lt => {
            want(2)?;
            Ok(Prevalue::Const(Bool(int(args[0])? < int(args[1])?)))
        }
        PrimKey::Id | PrimKey::Fst => {
            if args.is_empty() {
                return Err("expected at least one argument".into());
            }
            Ok(args[0].clone())
        }
        PrimKey::Index => {
            want(2)?;
            let xs = array(args[0])?;
            let i = int(args[1])?;
            usize::try_from(i)
                .ok()
                .and_then(|i| xs.get(i).copied())
                .map(|n| Prevalue::Const(Int(n)))
                .ok_or_else(|| format!("index {i} out of bounds for array of {}", xs.len()))
        }
        PrimKey::Update => {
            want(3)?;
            let mut xs = array(args[0])?;
            let i = int(args[1])?;
            let v = int(args[2])?;
            let slot = usize::try_from(i)
                .ok()
                .filter(|&i| i < xs.len())
                .ok_or_else(|| format!("index {i} out of bounds for array of {}", xs.len()))?;
            xs[slot] = v;
            Ok(Prevalue::Const(Array(xs)))
        }
    }
}

// ---------------------------------------------------------------------------
// Stepping.

#[derive(Clone, Debug, PartialEq)]
pub struct Configuration {
    pub store: Store,
    pub control: Expr,
}

impl Configuration {
    pub fn new(store: Store, control: Expr) -> Self {
        Configuration { store, control }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self.control.kind, ExprKind::Var(_))
    }
}

/// What one β-step did to the store.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct StepEvents {
    pub rule: &'static str,
    pub allocs: Vec<(Var, u64)>,
    pub deallocs: Vec<(Var, u64)>,
}

pub enum StepResult {
    Terminal(Var),
    Next(Configuration, StepEvents),
    Stuck(MachineError, Configuration),
}

struct BetaOutcome {
    replacement: Expr,
    events: StepEvents,
}

/// Apply one β-rule to a configuration whose control is already a redex.
pub fn beta_step(
    config: Configuration,
    sig: &Signature,
    opts: MachineOptions,
) -> Result<(Configuration, StepEvents), MachineError> {
    debug_assert!(is_beta_node(&config.control));
    let Configuration { mut store, control } = config;
    let out = beta_at_redex(&mut store, control, sig, opts)?;
    Ok((
        Configuration::new(store, out.replacement),
        out.events,
    ))
}

/// The β-rules proper; the store is mutated in place, and on error the
/// caller treats the configuration as stuck.
fn beta_at_redex(
    store: &mut Store,
    redex: Expr,
    sig: &Signature,
    opts: MachineOptions,
) -> Result<BetaOutcome, MachineError> {
    let mut events = StepEvents::default();
    let lookup = |store: &Store, v: &Var| -> Result<Value, MachineError> {
        store
            .lookup(v)
            .cloned()
            .ok_or_else(|| MachineError::Unbound(v.clone()))
    };
    let record_removed = |events: &mut StepEvents, removed: Vec<(Var, Value)>| {
        for (v, val) in removed {
            events.deallocs.push((v, size_of(&val)));
        }
    };

    // (eva): allocate a value under a fresh cell.
    if let Some(v) = as_value(&redex) {
        events.rule = "eva";
        let size = size_of(&v);
        let x = store.alloc(v);
        events.allocs.push((x.clone(), size));
        return Ok(BetaOutcome {
            replacement: Expr::new(ExprKind::Var(x)),
            events,
        });
    }

    match redex.kind {
        // (eop): read the arguments, deallocate by the operator typing,
        // allocate the primitive's result.
        ExprKind::Op(op, args) => {
            let entry = match op.target {
                OpTarget::Indexed(k) => sig
                    .entry(k)
                    .ok_or_else(|| MachineError::UnresolvedOperator(op.name.clone()))?,
                _ => return Err(MachineError::UnresolvedOperator(op.name.clone())),
            };
            let vars: Vec<Var> = args.iter().map(var_of).collect();
            let mut prevalues = Vec::with_capacity(vars.len());
            let mut stored_quals = Vec::with_capacity(vars.len());
            for v in &vars {
                let val = lookup(store, v)?;
                stored_quals.push(PseudoQualifier::from(val.qual));
                prevalues.push(val.prevalue);
            }
            let refs: Vec<&Prevalue> = prevalues.iter().collect();
            let result = apply_primitive(&entry.prim, &entry.name, &refs).map_err(|message| {
                MachineError::Primitive {
                    name: entry.name.clone(),
                    message,
                }
            })?;
            events.rule = "eop";
            let quals: Vec<PseudoQualifier> = match opts.dealloc {
                DeallocMode::OperatorType => entry.ty.inputs.iter().map(|(q, _)| *q).collect(),
                DeallocMode::StoreQualifier => stored_quals,
            };
            record_removed(&mut events, dealloc(store, &quals, &vars)?);
            let out = Value::new(entry.ty.output.0, result);
            let size = size_of(&out);
            let x = store.alloc(out);
            events.allocs.push((x.clone(), size));
            Ok(BetaOutcome {
                replacement: Expr::new(ExprKind::Var(x)),
                events,
            })
        }
        // (eif): branch on a boolean cell, deallocating it when linear.
        ExprKind::If(c, t, e2) => {
            let x = var_of(&c);
            let val = lookup(store, &x)?;
            let b = match &val.prevalue {
                Prevalue::Const(Constant::Bool(b)) => *b,
                other => {
                    return Err(MachineError::Shape {
                        var: x,
                        expected: "a boolean",
                        found: other.to_string(),
                    })
                }
            };
            events.rule = "eif";
            record_removed(&mut events, dealloc(store, &[val.qual.into()], &[x])?);
            Ok(BetaOutcome {
                replacement: if b { *t } else { *e2 },
                events,
            })
        }
        // (esp): open a tuple cell and substitute its components.
        ExprKind::Split(s, pattern, body) => {
            let x = var_of(&s);
            let val = lookup(store, &x)?;
            let cells = match &val.prevalue {
                Prevalue::Tuple(vs) => vs.clone(),
                other => {
                    return Err(MachineError::Shape {
                        var: x,
                        expected: "a tuple",
                        found: other.to_string(),
                    })
                }
            };
            if cells.len() != pattern.len() {
                return Err(MachineError::SplitArity {
                    pattern: pattern.len(),
                    cell: cells.len(),
                });
            }
            events.rule = "esp";
            record_removed(&mut events, dealloc(store, &[val.qual.into()], &[x])?);
            let subst: Subst = pattern.into_iter().zip(cells).collect();
            Ok(BetaOutcome {
                replacement: crate::syntax::apply_subst(&subst, &body),
                events,
            })
        }
        // (efu): apply a closure cell, deallocating it when linear.
        ExprKind::App(f, a) => {
            let fv = var_of(&f);
            let av = var_of(&a);
            let val = lookup(store, &fv)?;
            let (param, body) = match &val.prevalue {
                Prevalue::Closure(x, _, body) => (x.clone(), body.clone()),
                other => {
                    return Err(MachineError::Shape {
                        var: fv,
                        expected: "a closure",
                        found: other.to_string(),
                    })
                }
            };
            events.rule = "efu";
            record_removed(&mut events, dealloc(store, &[val.qual.into()], &[fv])?);
            let mut subst = Subst::new();
            subst.insert(param, av);
            Ok(BetaOutcome {
                replacement: crate::syntax::apply_subst(&subst, &body),
                events,
            })
        }
        // (ele): rename the bound variable; the store is untouched.
        ExprKind::Let(x, bound, body) => {
            let y = var_of(&bound);
            events.rule = "ele";
            let mut subst = Subst::new();
            subst.insert(x, y);
            Ok(BetaOutcome {
                replacement: crate::syntax::apply_subst(&subst, &body),
                events,
            })
        }
        // (eca): branch on a list cell.
        ExprKind::Case(s, nil_arm, z1, z2, cons_arm) => {
            let x = var_of(&s);
            let val = lookup(store, &x)?;
            match val.prevalue.clone() {
                Prevalue::Nil => {
                    events.rule = "eca";
                    record_removed(&mut events, dealloc(store, &[val.qual.into()], &[x])?);
                    Ok(BetaOutcome {
                        replacement: *nil_arm,
                        events,
                    })
                }
                Prevalue::Cons(h, t) => {
                    events.rule = "eca";
                    record_removed(&mut events, dealloc(store, &[val.qual.into()], &[x])?);
                    let mut subst = Subst::new();
                    subst.insert(z1, h);
                    subst.insert(z2, t);
                    Ok(BetaOutcome {
                        replacement: crate::syntax::apply_subst(&subst, &cons_arm),
                        events,
                    })
                }
                other => Err(MachineError::Shape {
                    var: x,
                    expected: "a list cell",
                    found: other.to_string(),
                }),
            }
        }
        _ => unreachable!("not a β-node"),
    }
}

/// One step of the context rule: decompose, β-step at the redex, replug.
pub fn step(config: Configuration, sig: &Signature, opts: MachineOptions) -> StepResult {
    let Configuration { mut store, control } = config;
    match decompose(control) {
        Decomposition::Variable(v) => StepResult::Terminal(v),
        Decomposition::Redex(ctx, redex) => {
            let saved = redex.clone();
            match beta_at_redex(&mut store, redex, sig, opts) {
                Ok(BetaOutcome {
                    replacement,
                    events,
                }) => StepResult::Next(Configuration::new(store, plug(ctx, replacement)), events),
                Err(err) => StepResult::Stuck(err, Configuration::new(store, plug(ctx, saved))),
            }
        }
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct TraceLine {
    pub step: u64,
    pub rule: &'static str,
    pub redex: String,
    pub allocs: Vec<(Var, u64)>,
    pub deallocs: Vec<(Var, u64)>,
}

impl fmt::Display for TraceLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>5}  {:<4} {}", self.step, self.rule, self.redex)?;
        for (v, s) in &self.allocs {
            write!(f, "  +{v}({s})")?;
        }
        for (v, s) in &self.deallocs {
            write!(f, "  -{v}({s})")?;
        }
        Ok(())
    }
}

pub enum RunOutcome {
    Terminal {
        var: Var,
        store: Store,
        steps: u64,
        trace: Vec<TraceLine>,
    },
    FuelExhausted {
        config: Configuration,
        steps: u64,
    },
    Stuck {
        error: MachineError,
        config: Configuration,
        steps: u64,
    },
}

/// Iterate the context rule up to `fuel` steps, optionally keeping a trace
/// and reporting each step's events to `observer`.
pub fn run_with(
    mut config: Configuration,
    sig: &Signature,
    opts: MachineOptions,
    fuel: u64,
    keep_trace: bool,
    mut observer: impl FnMut(u64, &StepEvents, &Configuration),
) -> RunOutcome {
    let mut trace = Vec::new();
    let mut steps = 0u64;
    loop {
        if config.is_terminal() {
            let var = match &config.control.kind {
                ExprKind::Var(v) => v.clone(),
                _ => unreachable!(),
            };
            return RunOutcome::Terminal {
                var,
                store: config.store,
                steps,
                trace,
            };
        }
        if steps >= fuel {
            return RunOutcome::FuelExhausted { config, steps };
        }
        let redex_pretty = if keep_trace {
            match decompose(config.control.clone()) {
                Decomposition::Redex(_, r) => crate::surface::print_expr(&r),
                Decomposition::Variable(_) => String::new(),
            }
        } else {
            String::new()
        };
        match step(config, sig, opts) {
            StepResult::Terminal(_) => unreachable!("checked above"),
            StepResult::Next(next, events) => {
                steps += 1;
                if keep_trace {
                    trace.push(TraceLine {
                        step: steps,
                        rule: events.rule,
                        redex: redex_pretty,
                        allocs: events.allocs.clone(),
                        deallocs: events.deallocs.clone(),
                    });
                }
                observer(steps, &events, &next);
                config = next;
            }
            StepResult::Stuck(error, config) => {
                return RunOutcome::Stuck {
                    error,
                    config,
                    steps,
                }
            }
        }
    }
}

pub fn run(
    config: Configuration,
    sig: &Signature,
    opts: MachineOptions,
    fuel: u64,
    keep_trace: bool,
) -> RunOutcome {
    run_with(config, sig, opts, fuel, keep_trace, |_, _, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{BaseType, OperatorType, Pretype, SigEntry};
    use Constant::*;
    use Qualifier::*;

    fn li_int(n: i64) -> Value {
        Value::new(Li, Prevalue::Const(Int(n)))
    }

    fn store_of(cells: Vec<(&str, Value)>) -> Store {
        Store::from_cells(
            cells
                .into_iter()
                .map(|(v, val)| (Var::new(v), val))
                .collect(),
        )
        .unwrap()
    }

    fn sig_plus_hidden() -> Signature {
        use PseudoQualifier as PQ;
        Signature::new(vec![SigEntry {
            name: "+".into(),
            ty: OperatorType {
                inputs: vec![
                    (PQ::Hi, Pretype::Base(BaseType::Int)),
                    (PQ::Li, Pretype::Base(BaseType::Int)),
                ],
                output: (Li, Pretype::Base(BaseType::Int)),
            },
            prim: PrimKey::Add,
        }])
        .unwrap()
    }

    #[test]
    fn fresh_is_pure_and_deterministic() {
        let empty = Store::new();
        assert_eq!(empty.fresh(), Var::new("v0"));
        assert_eq!(empty.fresh(), Var::new("v0"));
        let mut s = Store::new();
        for k in 0..5 {
            let v = s.alloc(li_int(k));
            assert_eq!(v, Var(format!("v{k}")));
        }
        assert_eq!(s.fresh(), Var::new("v5"));
    }

    #[test]
    fn dealloc_equations() {
        use PseudoQualifier as PQ;
        let mut s = store_of(vec![("x", li_int(3))]);
        dealloc(&mut s, &[PQ::Li], &[Var::new("x")]).unwrap();
        assert!(s.is_empty());

        let mut s = store_of(vec![("x", li_int(3))]);
        dealloc(&mut s, &[PQ::Hi], &[Var::new("x")]).unwrap();
        assert_eq!(s.len(), 1);

        let mut s = store_of(vec![("x", li_int(3)), ("y", li_int(4))]);
        dealloc(&mut s, &[PQ::Li, PQ::Li], &[Var::new("x"), Var::new("y")]).unwrap();
        assert!(s.is_empty());

        // A second linear removal of the same variable is an error.
        let mut s = store_of(vec![("x", li_int(3))]);
        let r = dealloc(&mut s, &[PQ::Li, PQ::Li], &[Var::new("x"), Var::new("x")]);
        assert_eq!(r.unwrap_err(), MachineError::DeallocUnbound(Var::new("x")));
    }

    #[test]
    fn decompose_cases() {
        // A value is its own redex under the empty context.
        let lit = Expr::op(OpRef::constant(Li, Int(3)), vec![]);
        match decompose(lit.clone()) {
            Decomposition::Redex(ctx, r) => {
                assert!(ctx.is_empty());
                assert_eq!(r, lit);
            }
            _ => panic!(),
        }
        // f (li 3): the argument reduces under the application frame.
        let e = Expr::app(Expr::var("f"), lit.clone());
        match decompose(e.clone()) {
            Decomposition::Redex(ctx, r) => {
                assert_eq!(ctx.len(), 1);
                assert!(matches!(&ctx[0], Frame::AppArg { fun, .. } if *fun == Var::new("f")));
                assert_eq!(r, lit);
                assert_eq!(plug(ctx, r), e);
            }
            _ => panic!(),
        }
        // A bare variable is terminal.
        assert_eq!(
            decompose(Expr::var("x")),
            Decomposition::Variable(Var::new("x"))
        );
        // The function position reduces before the argument.
        let inner = Expr::app(Expr::var("g"), Expr::var("y"));
        let e = Expr::app(inner.clone(), Expr::var("z"));
        match decompose(e) {
            Decomposition::Redex(ctx, r) => {
                assert!(matches!(&ctx[0], Frame::AppFun { .. }));
                assert_eq!(r, inner);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn eop_deallocates_by_operator_typing() {
        // x +^(hi,li) y keeps x, drops y, allocates li 4.
        let sig = sig_plus_hidden();
        let store = store_of(vec![("x", li_int(3)), ("y", li_int(1))]);
        let e = Expr::op(OpRef::indexed("+", 0), vec![Expr::var("x"), Expr::var("y")]);
        let config = Configuration::new(store, e);
        match step(config, &sig, MachineOptions::default()) {
            StepResult::Next(next, events) => {
                assert_eq!(events.rule, "eop");
                assert!(next.store.lookup(&Var::new("x")).is_some());
                assert!(next.store.lookup(&Var::new("y")).is_none());
                assert_eq!(next.store.lookup(&Var::new("v0")), Some(&li_int(4)));
                assert_eq!(next.control, Expr::new(ExprKind::Var(Var::new("v0"))));
            }
            _ => panic!(),
        }
        // The store-qualifier mutant deletes the hidden input too.
        let store = store_of(vec![("x", li_int(3)), ("y", li_int(1))]);
        let e = Expr::op(OpRef::indexed("+", 0), vec![Expr::var("x"), Expr::var("y")]);
        let config = Configuration::new(store, e);
        let opts = MachineOptions {
            dealloc: DeallocMode::StoreQualifier,
        };
        match step(config, &sig, opts) {
            StepResult::Next(next, _) => {
                assert!(next.store.lookup(&Var::new("x")).is_none());
            }
            _ => panic!(),
        }
    }

    #[test]
    fn eif_deallocates_linear_scrutinee() {
        let sig = Signature::new(vec![]).unwrap();
        let store = store_of(vec![("x", Value::new(Li, Prevalue::Const(Bool(true))))]);
        let e = Expr::if_(Expr::var("x"), Expr::var("a"), Expr::var("b"));
        match step(
            Configuration::new(store, e),
            &sig,
            MachineOptions::default(),
        ) {
            StepResult::Next(next, events) => {
                assert_eq!(events.rule, "eif");
                assert!(next.store.is_empty());
                assert_eq!(next.control, Expr::var("a"));
            }
            _ => panic!(),
        }
    }

    #[test]
    fn eva_allocates_fresh() {
        let sig = Signature::new(vec![]).unwrap();
        let e = Expr::op(OpRef::constant(Li, Int(3)), vec![]);
        match step(
            Configuration::new(Store::new(), e),
            &sig,
            MachineOptions::default(),
        ) {
            StepResult::Next(next, events) => {
                assert_eq!(events.rule, "eva");
                assert_eq!(next.store.lookup(&Var::new("v0")), Some(&li_int(3)));
            }
            _ => panic!(),
        }
    }

    #[test]
    fn stuck_on_unbound_scrutinee() {
        let sig = Signature::new(vec![]).unwrap();
        let e = Expr::if_(Expr::var("x"), Expr::var("a"), Expr::var("b"));
        match step(
            Configuration::new(Store::new(), e),
            &sig,
            MachineOptions::default(),
        ) {
            StepResult::Stuck(err, _) => {
                assert_eq!(err, MachineError::Unbound(Var::new("x")));
            }
            _ => panic!(),
        }
    }

    #[test]
    fn step_is_deterministic() {
        let sig = sig_plus_hidden();
        let mk = || {
            Configuration::new(
                store_of(vec![("x", li_int(3)), ("y", li_int(1))]),
                Expr::op(OpRef::indexed("+", 0), vec![Expr::var("x"), Expr::var("y")]),
            )
        };
        let a = match step(mk(), &sig, MachineOptions::default()) {
            StepResult::Next(c, _) => c,
            _ => panic!(),
        };
        let b = match step(mk(), &sig, MachineOptions::default()) {
            StepResult::Next(c, _) => c,
            _ => panic!(),
        };
        assert_eq!(a, b);
    }
}
