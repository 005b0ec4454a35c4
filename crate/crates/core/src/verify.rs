//! Store typing, configuration checking, and the executable preservation
//! and progress suites.
//!
//! A configuration is accepted when some context types both the store and
//! the control expression. The store-typing rules leave two choices open:
//! how each value's typing splits the preceding context, and whether a
//! linear base cell enters the context as itself or as a hidden entry. The
//! first choice is reconstructed from usage, exactly like expression
//! checking; the second is decided by a reference-count heuristic (a cell
//! read only at hidden positions becomes hidden) with a bounded
//! enumeration of the remaining assignments as a fallback. A search past
//! the cap reports inconclusive, never success.

use std::collections::{BTreeMap, BTreeSet};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::machine::{
    self, Configuration, MachineOptions, Prevalue, Store, StepResult, Value,
};
use crate::surface::Instance;
use crate::syntax::{
    BaseType, Constant, Expr, ExprKind, OpRef, OpTarget, OperatorType, Pretype, PrimKey,
    PseudoQualifier, PseudoType, Qualifier, SigEntry, Signature, Type, TypeContext, Var,
};
use crate::typing::{check_expr_with, CheckOptions, Checker, Diagnostic, Scope, Usage};

/// Everything a configuration check needs besides the configuration: the
/// signature, the declared types of annotated store cells (self-referential
/// closures cannot be typed without them), and the checker switches.
#[derive(Clone, Copy)]
pub struct VerifyEnv<'a> {
    pub sig: &'a Signature,
    pub declared: &'a BTreeMap<Var, Type>,
    pub check: CheckOptions,
}

impl<'a> VerifyEnv<'a> {
    pub fn of_instance(instance: &'a Instance, check: CheckOptions) -> Self {
        VerifyEnv {
            sig: &instance.signature,
            declared: &instance.declared,
            check,
        }
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub enum ConfigVerdict {
    /// The reconstructed context typing the store, in store order.
    WellTyped { context: String },
    IllTyped { message: String },
    /// The hidden/linear assignment search exceeded the cap.
    Inconclusive { choice_cells: usize },
}

impl ConfigVerdict {
    pub fn is_well_typed(&self) -> bool {
        matches!(self, ConfigVerdict::WellTyped { .. })
    }
}

/// Cells eligible for the hidden choice: linear base constants.
fn choice_cells(store: &Store) -> Vec<Var> {
    store
        .cells()
        .iter()
        .filter(|(_, v)| v.qual == Qualifier::Li && matches!(v.prevalue, Prevalue::Const(_)))
        .map(|(x, _)| x.clone())
        .collect()
}

fn value_to_expr(v: &Value) -> Expr {
    match &v.prevalue {
        Prevalue::Const(c) => Expr::op(OpRef::constant(v.qual, c.clone()), vec![]),
        Prevalue::Tuple(vs) => Expr::tuple(
            v.qual,
            vs.iter().map(|x| Expr::var(x.as_str())).collect(),
        ),
        Prevalue::Closure(x, t, body) => Expr::new(ExprKind::Lambda(
            v.qual,
            x.clone(),
            t.clone(),
            Box::new(body.clone()),
        )),
        Prevalue::Nil => Expr::nil(v.qual),
        Prevalue::Cons(h, t) => Expr::cons(v.qual, Expr::var(h.as_str()), Expr::var(t.as_str())),
    }
}

fn is_self_referential(x: &Var, v: &Value) -> bool {
    match &v.prevalue {
        Prevalue::Closure(param, _, body) => {
            param != x && crate::syntax::free_vars(body).contains(x)
        }
        _ => false,
    }
}

/// What a successful reconstruction pass leaves behind: the surviving
/// context, and the store values and control expression with every
/// operator occurrence resolved against the signature.
struct PassOutput {
    context: TypeContext,
    cells: Vec<(Var, Value)>,
    control: Option<Expr>,
}

/// One left-to-right reconstruction pass over the store with a fixed
/// hidden assignment, optionally finishing with the control expression.
fn typing_pass(
    env: &VerifyEnv<'_>,
    store: &Store,
    control: Option<&Expr>,
    hidden: &BTreeSet<Var>,
) -> Result<PassOutput, Diagnostic> {
    let mut checker = Checker::new(env.sig, env.check);
    // Alive entries in store order; consumed ones are removed.
    let mut alive: Vec<(Var, PseudoType)> = Vec::new();
    let mut cells: Vec<(Var, Value)> = Vec::new();

    for (x, v) in store.cells() {
        if hidden.contains(x) {
            let b = match &v.prevalue {
                Prevalue::Const(c) => c.base_type(),
                _ => unreachable!("hidden choices are base constants"),
            };
            alive.push((x.clone(), PseudoType::Hidden(b)));
            cells.push((x.clone(), v.clone()));
            continue;
        }
        let declared = env.declared.get(x);
        if is_self_referential(x, v) {
            // Self-referential definitions type under the unrestricted part
            // of the context extended with their own declared type.
            let declared = match declared {
                Some(t) if v.qual == Qualifier::Un => t.clone(),
                _ => {
                    return Err(fail(
                        "store",
                        format!("cell `{x}` refers to itself without an unrestricted annotation"),
                    ))
                }
            };
            let mut ctx_entries: Vec<(Var, PseudoType)> = alive
                .iter()
                .filter(|(_, t)| crate::syntax::type_is_q(Qualifier::Un, t))
                .cloned()
                .collect();
            ctx_entries.push((x.clone(), PseudoType::Proper(declared.clone())));
            let ctx = TypeContext::new(ctx_entries)
                .map_err(|v| fail("store", format!("duplicate context variable `{v}`")))?;
            let mut scope = Scope::from_context(&ctx);
            let mut expr = value_to_expr(v);
            let (t, _) = checker.infer(&mut scope, &mut expr)?;
            if checker.unifier.meet(&t, &declared).is_none() {
                return Err(fail(
                    "store",
                    format!(
                        "cell `{x}` has type {} but is declared {declared}",
                        checker.unifier.zonk(&t)
                    ),
                ));
            }
            alive.push((x.clone(), PseudoType::Proper(declared)));
            cells.push((
                x.clone(),
                machine::as_value(&expr).expect("checking preserves value shape"),
            ));
            continue;
        }
        // Ordinary cell: type the value against the alive prefix and
        // consume what its typing used linearly.
        let ctx = TypeContext::new(alive.clone())
            .map_err(|v| fail("store", format!("duplicate context variable `{v}`")))?;
        let mut scope = Scope::from_context(&ctx);
        let mut expr = value_to_expr(v);
        let (t, report) = checker.infer(&mut scope, &mut expr)?;
        let mut consumed: BTreeSet<Var> = BTreeSet::new();
        for (idx, mark) in &report {
            if mark.usage == Usage::Consumed {
                consumed.insert(scope.var(*idx).clone());
            }
        }
        alive.retain(|(v2, _)| !consumed.contains(v2));
        let t = match declared {
            Some(d) => checker.unifier.meet(&t, d).ok_or_else(|| {
                fail(
                    "store",
                    format!(
                        "cell `{x}` has type {} but is declared {d}",
                        checker.unifier.zonk(&t)
                    ),
                )
            })?,
            None => t,
        };
        alive.push((x.clone(), PseudoType::Proper(t)));
        cells.push((
            x.clone(),
            machine::as_value(&expr).expect("checking preserves value shape"),
        ));
    }

    let resolved_control = match control {
        Some(e) => {
            let ctx = TypeContext::new(alive.clone())
                .map_err(|v| fail("store", format!("duplicate context variable `{v}`")))?;
            let mut e = e.clone();
            check_expr_with(&mut checker, &ctx, &mut e)?;
            Some(e)
        }
        None => None,
    };

    let zonked: Vec<(Var, PseudoType)> = alive
        .into_iter()
        .map(|(v2, t)| {
            let t = match t {
                PseudoType::Proper(t) => PseudoType::Proper(checker.unifier.zonk(&t)),
                h => h,
            };
            (v2, t)
        })
        .collect();
    Ok(PassOutput {
        context: TypeContext::new(zonked).expect("alive entries stay distinct"),
        cells,
        control: resolved_control,
    })
}

fn fail(rule: &'static str, message: String) -> Diagnostic {
    Diagnostic {
        rule,
        var: None,
        span: crate::syntax::Span::default(),
        error: crate::typing::TypeError::OperatorNoFit {
            name: rule.to_string(),
            reason: message,
        },
    }
}

/// Does `x` occur anywhere outside hidden operator positions? Binders
/// shadow; a bare-variable argument in a `hi` input position of a resolved
/// operator is a hidden occurrence.
fn occurs_properly(e: &Expr, x: &Var, sig: &Signature) -> bool {
    match &e.kind {
        ExprKind::Var(v) => v == x,
        ExprKind::Op(r, args) => {
            let opty: Option<&OperatorType> = match r.target {
                OpTarget::Indexed(k) => sig.entry(k).map(|e| &e.ty),
                _ => None,
            };
            args.iter().enumerate().any(|(i, a)| {
                if let ExprKind::Var(v) = &a.kind {
                    if v == x {
                        let hidden_pos = opty
                            .and_then(|t| t.inputs.get(i))
                            .map(|(q, _)| *q == PseudoQualifier::Hi)
                            .unwrap_or(false);
                        return !hidden_pos;
                    }
                    return false;
                }
                occurs_properly(a, x, sig)
            })
        }
        ExprKind::Tuple(_, items) => items.iter().any(|a| occurs_properly(a, x, sig)),
        ExprKind::App(f, a) => occurs_properly(f, x, sig) || occurs_properly(a, x, sig),
        ExprKind::Lambda(_, p, _, body) => p != x && occurs_properly(body, x, sig),
        ExprKind::Split(s, pat, body) => {
            occurs_properly(s, x, sig) || (!pat.contains(x) && occurs_properly(body, x, sig))
        }
        ExprKind::If(c, t, e2) => {
            occurs_properly(c, x, sig)
                || occurs_properly(t, x, sig)
                || occurs_properly(e2, x, sig)
        }
        ExprKind::Let(b, bound, body) => {
            occurs_properly(bound, x, sig) || (b != x && occurs_properly(body, x, sig))
        }
        ExprKind::Nil(_) => false,
        ExprKind::Cons(_, h, t) => occurs_properly(h, x, sig) || occurs_properly(t, x, sig),
        ExprKind::Case(s, n, z1, z2, c) => {
            occurs_properly(s, x, sig)
                || occurs_properly(n, x, sig)
                || (z1 != x && z2 != x && occurs_properly(c, x, sig))
        }
    }
}

/// The reference-count heuristic: a linear base cell becomes hidden unless
/// something later uses it outside a hidden operator position.
fn heuristic_hidden(store: &Store, control: &Expr, sig: &Signature) -> BTreeSet<Var> {
    let mut hidden = BTreeSet::new();
    for x in choice_cells(store) {
        let cell_at = store
            .cells()
            .iter()
            .position(|(v, _)| *v == x)
            .expect("candidate came from the store");
        let in_later_value = store.cells()[cell_at + 1..].iter().any(|(_, v)| {
            match &v.prevalue {
                Prevalue::Tuple(vs) => vs.contains(&x),
                Prevalue::Cons(h, t) => *h == x || *t == x,
                Prevalue::Closure(p, _, body) => {
                    *p != x && crate::syntax::free_vars(body).contains(&x)
                }
                _ => false,
            }
        });
        if !in_later_value && !occurs_properly(control, &x, sig) {
            hidden.insert(x);
        }
    }
    hidden
}

/// Cap on the fallback enumeration over hidden/linear assignments.
pub const CHOICE_SEARCH_CAP: usize = 1 << 12;

enum Search {
    Found(PassOutput),
    Ill(Diagnostic),
    Inconclusive(usize),
}

fn search(config: &Configuration, env: &VerifyEnv<'_>) -> Search {
    let candidates = choice_cells(&config.store);
    let heuristic = heuristic_hidden(&config.store, &config.control, env.sig);
    let first_err = match typing_pass(env, &config.store, Some(&config.control), &heuristic) {
        Ok(out) => return Search::Found(out),
        Err(e) => e,
    };
    let m = candidates.len();
    if m > CHOICE_SEARCH_CAP.trailing_zeros() as usize {
        return Search::Inconclusive(m);
    }
    for bits in 0..(1u64 << m) {
        let assignment: BTreeSet<Var> = candidates
            .iter()
            .enumerate()
            .filter(|(i, _)| bits & (1 << i) != 0)
            .map(|(_, v)| v.clone())
            .collect();
        if assignment == heuristic {
            continue;
        }
        if let Ok(out) = typing_pass(env, &config.store, Some(&config.control), &assignment) {
            return Search::Found(out);
        }
    }
    Search::Ill(first_err)
}

/// Decide `⊢ (S, e)`: is there a context that types the store and the
/// control expression?
pub fn config_check(config: &Configuration, env: &VerifyEnv<'_>) -> ConfigVerdict {
    match search(config, env) {
        Search::Found(out) => ConfigVerdict::WellTyped {
            context: out.context.to_string(),
        },
        Search::Ill(e) => ConfigVerdict::IllTyped { message: e.render() },
        Search::Inconclusive(m) => ConfigVerdict::Inconclusive { choice_cells: m },
    }
}

/// Check an instance and, on success, replace its configuration with the
/// elaborated one, every operator occurrence bound to its signature entry.
/// The machine requires elaborated programs.
pub fn check_instance(instance: &mut Instance, check: CheckOptions) -> ConfigVerdict {
    let env = VerifyEnv::of_instance(instance, check);
    let outcome = search(&instance.configuration, &env);
    match outcome {
        Search::Found(out) => {
            let verdict = ConfigVerdict::WellTyped {
                context: out.context.to_string(),
            };
            let store = Store::from_cells(out.cells).expect("cells keep their names");
            instance.configuration =
                Configuration::new(store, out.control.expect("control was checked"));
            verdict
        }
        Search::Ill(e) => ConfigVerdict::IllTyped { message: e.render() },
        Search::Inconclusive(m) => ConfigVerdict::Inconclusive { choice_cells: m },
    }
}

/// The explicit relation `⊢ S : Π` for a given context: hidden choices are
/// read off `Π`, entries of `Π` must survive the reconstruction exactly,
/// and every cell missing from `Π` must have been consumed.
pub fn store_typing_check(store: &Store, pi: &TypeContext, env: &VerifyEnv<'_>) -> bool {
    let mut hidden = BTreeSet::new();
    for (x, t) in pi.entries() {
        if let PseudoType::Hidden(b) = t {
            match store.lookup(x) {
                Some(v)
                    if v.qual == Qualifier::Li
                        && matches!(&v.prevalue, Prevalue::Const(c) if c.base_type() == *b) =>
                {
                    hidden.insert(x.clone());
                }
                _ => return false,
            }
        }
    }
    let final_ctx = match typing_pass(env, store, None, &hidden) {
        Ok(out) => out.context,
        Err(_) => return false,
    };
    if final_ctx.len() != pi.len() {
        return false;
    }
    let mut checker = Checker::new(env.sig, env.check);
    final_ctx
        .entries()
        .iter()
        .zip(pi.entries())
        .all(|((x1, t1), (x2, t2))| {
            x1 == x2
                && match (t1, t2) {
                    (PseudoType::Hidden(a), PseudoType::Hidden(b)) => a == b,
                    (PseudoType::Proper(a), PseudoType::Proper(b)) => {
                        checker.unifier.meet(a, b).is_some()
                    }
                    _ => false,
                }
        })
}

// ---------------------------------------------------------------------------
// Suites.

#[derive(Clone, Debug, serde::Serialize)]
pub enum SuiteVerdict {
    Clean,
    InitialCheckFailed { message: String },
    ViolatedAt { step: u64, message: String },
    MachineStuck { step: u64, message: String },
    FuelExhausted { step: u64 },
}

impl SuiteVerdict {
    pub fn is_clean(&self) -> bool {
        matches!(self, SuiteVerdict::Clean)
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct PreservationReport {
    pub label: String,
    pub steps_checked: u64,
    pub verdict: SuiteVerdict,
}

/// Run a configuration and re-check `⊢ (S, e)` after every step.
pub fn preservation_suite(
    label: &str,
    instance: &Instance,
    check: CheckOptions,
    machine_opts: MachineOptions,
    fuel: u64,
) -> PreservationReport {
    let mut instance = instance.clone();
    match check_instance(&mut instance, check) {
        v if v.is_well_typed() => {}
        ConfigVerdict::IllTyped { message } => {
            return PreservationReport {
                label: label.to_string(),
                steps_checked: 0,
                verdict: SuiteVerdict::InitialCheckFailed { message },
            }
        }
        ConfigVerdict::Inconclusive { choice_cells } => {
            return PreservationReport {
                label: label.to_string(),
                steps_checked: 0,
                verdict: SuiteVerdict::InitialCheckFailed {
                    message: format!("inconclusive with {choice_cells} choice cells"),
                },
            }
        }
        ConfigVerdict::WellTyped { .. } => unreachable!(),
    }
    let env = VerifyEnv {
        sig: &instance.signature,
        declared: &instance.declared,
        check,
    };
    let mut config = instance.configuration.clone();
    let mut steps = 0u64;
    loop {
        if config.is_terminal() {
            return PreservationReport {
                label: label.to_string(),
                steps_checked: steps,
                verdict: SuiteVerdict::Clean,
            };
        }
        if steps >= fuel {
            return PreservationReport {
                label: label.to_string(),
                steps_checked: steps,
                verdict: SuiteVerdict::FuelExhausted { step: steps },
            };
        }
        match machine::step(config, env.sig, machine_opts) {
            StepResult::Terminal(_) => unreachable!("checked above"),
            StepResult::Stuck(err, _) => {
                return PreservationReport {
                    label: label.to_string(),
                    steps_checked: steps,
                    verdict: SuiteVerdict::MachineStuck {
                        step: steps + 1,
                        message: err.to_string(),
                    },
                }
            }
            StepResult::Next(next, _) => {
                steps += 1;
                match config_check(&next, &env) {
                    v if v.is_well_typed() => config = next,
                    ConfigVerdict::IllTyped { message } => {
                        return PreservationReport {
                            label: label.to_string(),
                            steps_checked: steps,
                            verdict: SuiteVerdict::ViolatedAt {
                                step: steps,
                                message,
                            },
                        }
                    }
                    ConfigVerdict::Inconclusive { choice_cells } => {
                        return PreservationReport {
                            label: label.to_string(),
                            steps_checked: steps,
                            verdict: SuiteVerdict::ViolatedAt {
                                step: steps,
                                message: format!(
                                    "inconclusive with {choice_cells} choice cells"
                                ),
                            },
                        }
                    }
                    ConfigVerdict::WellTyped { .. } => unreachable!(),
                }
            }
        }
    }
}

#[derive(Clone, Debug, Default, serde::Serialize)]
pub struct ProgressReport {
    pub checked: usize,
    pub terminal: usize,
    pub ill_typed: usize,
    pub violations: Vec<String>,
}

impl ProgressReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Assert that no well-typed non-terminal configuration in the pool is
/// stuck. Ill-typed elements are counted and skipped: the property only
/// speaks about well-typed ones.
pub fn progress_suite(
    pool: &[Configuration],
    sig: &Signature,
    declared: &BTreeMap<Var, Type>,
    check: CheckOptions,
    machine_opts: MachineOptions,
) -> ProgressReport {
    let env = VerifyEnv {
        sig,
        declared,
        check,
    };
    let mut report = ProgressReport::default();
    for config in pool {
        if config.is_terminal() {
            report.terminal += 1;
            continue;
        }
        if !config_check(config, &env).is_well_typed() {
            report.ill_typed += 1;
            continue;
        }
        report.checked += 1;
        if let StepResult::Stuck(err, stuck) = machine::step(config.clone(), sig, machine_opts) {
            report.violations.push(format!(
                "stuck: {err} in {}",
                crate::surface::print_expr(&stuck.control)
            ));
        }
    }
    report
}

/// Every configuration a run passes through: the initial one included, the
/// terminal one excluded. The instance is elaborated first; an ill-typed
/// one yields an empty trace.
pub fn trace_configurations(
    instance: &Instance,
    machine_opts: MachineOptions,
    fuel: u64,
) -> Vec<Configuration> {
    let mut instance = instance.clone();
    if !check_instance(&mut instance, CheckOptions::default()).is_well_typed() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut config = instance.configuration;
    let mut steps = 0;
    while !config.is_terminal() && steps < fuel {
        out.push(config.clone());
        match machine::step(config, &instance.signature, machine_opts) {
            StepResult::Next(next, _) => config = next,
            _ => break,
        }
        steps += 1;
    }
    out
}

// ---------------------------------------------------------------------------
// Seeded generation of small well-typed configurations.

/// The signature the generator draws operators from.
pub fn generator_signature() -> Signature {
    use PseudoQualifier as PQ;
    let base = Pretype::Base;
    let entry =
        |name: &str, inputs: Vec<(PQ, Pretype)>, out: (Qualifier, Pretype), prim| SigEntry {
            name: name.into(),
            ty: OperatorType {
                inputs,
                output: out,
            },
            prim,
        };
    Signature::new(vec![
        entry("0", vec![], (Qualifier::Li, base(BaseType::Int)), PrimKey::Lit),
        entry("1", vec![], (Qualifier::Li, base(BaseType::Int)), PrimKey::Lit),
        entry(
            "+",
            vec![(PQ::Li, base(BaseType::Int)), (PQ::Li, base(BaseType::Int))],
            (Qualifier::Li, base(BaseType::Int)),
            PrimKey::Add,
        ),
        entry(
            "id",
            vec![(PQ::Hi, base(BaseType::Int))],
            (Qualifier::Li, base(BaseType::Int)),
            PrimKey::Id,
        ),
        entry(
            "eqz",
            vec![(PQ::Hi, base(BaseType::Int))],
            (Qualifier::Li, base(BaseType::Bool)),
            PrimKey::EqZero,
        ),
        entry(
            "uz",
            vec![],
            (Qualifier::Un, base(BaseType::Int)),
            PrimKey::ConstInt(0),
        ),
        entry(
            "uadd",
            vec![(PQ::Un, base(BaseType::Int)), (PQ::Un, base(BaseType::Int))],
            (Qualifier::Un, base(BaseType::Int)),
            PrimKey::Add,
        ),
    ])
    .expect("generator signature is valid")
}

struct Gen {
    rng: StdRng,
    counter: u64,
}

/// Variable pools the generated expression may draw from.
#[derive(Default, Clone)]
struct Pools {
    li_ints: Vec<Var>,
    un_ints: Vec<Var>,
    li_bools: Vec<Var>,
    un_lists: Vec<Var>,
    closures: Vec<Var>,
}

impl Gen {
    fn fresh(&mut self) -> Var {
        self.counter += 1;
        Var(format!("g{}", self.counter))
    }

    /// A linear-int expression over the pools. Linear variables leave the
    /// pool when used properly; a hidden read is paired with an immediate
    /// consumer so most samples survive the filter.
    fn int_expr(&mut self, depth: usize, pools: &mut Pools) -> Expr {
        if depth == 0 {
            return self.int_leaf(pools);
        }
        match self.rng.gen_range(0..13u8) {
            0..=2 => {
                let a = self.int_expr(depth - 1, pools);
                let b = self.int_expr(depth - 1, pools);
                Expr::op(OpRef::named("+"), vec![a, b])
            }
            3..=4 => {
                // A branch: either on a linear boolean cell or on a hidden
                // zero test of a linear integer. The branches see the same
                // context: draw both from one pool snapshot and retire the
                // leftovers in each.
                let scrutinee = if !pools.li_bools.is_empty() && self.rng.gen_bool(0.5) {
                    let i = self.rng.gen_range(0..pools.li_bools.len());
                    let b = pools.li_bools.remove(i);
                    Some(Expr::new(ExprKind::Var(b)))
                } else {
                    self.pick_li(&mut pools.li_ints.clone()).map(|x| {
                        pools.li_ints.retain(|v| v != &x);
                        pools.li_ints.push(x.clone());
                        Expr::op(OpRef::named("eqz"), vec![Expr::var(x.as_str())])
                    })
                };
                match scrutinee {
                    Some(c) => {
                        let mut pools_then = pools.clone();
                        let mut pools_else = pools.clone();
                        let t = self.int_expr(depth - 1, &mut pools_then);
                        let e = self.int_expr(depth - 1, &mut pools_else);
                        let t = consume_leftovers(t, &pools_then.li_ints);
                        let e = consume_leftovers(e, &pools_else.li_ints);
                        pools.li_ints.clear();
                        Expr::if_(c, t, e)
                    }
                    None => self.int_leaf(pools),
                }
            }
            5 => {
                let x = self.fresh();
                let bound = self.int_expr(depth - 1, pools);
                pools.li_ints.push(x.clone());
                let body = self.int_expr(depth - 1, pools);
                if pools.li_ints.iter().any(|v| v == &x) {
                    pools.li_ints.retain(|v| v != &x);
                    Expr::let_(
                        x.as_str(),
                        bound,
                        Expr::op(
                            OpRef::named("+"),
                            vec![body, Expr::new(ExprKind::Var(x.clone()))],
                        ),
                    )
                } else {
                    Expr::let_(x.as_str(), bound, body)
                }
            }
            6 => {
                // Hidden read followed by consumption of the same variable.
                if let Some(x) = self.pick_li(&mut pools.li_ints) {
                    let read = Expr::op(OpRef::named("id"), vec![Expr::var(x.as_str())]);
                    Expr::op(
                        OpRef::named("+"),
                        vec![read, Expr::new(ExprKind::Var(x))],
                    )
                } else {
                    self.int_leaf(pools)
                }
            }
            7 => {
                let items: Vec<Expr> = (0..2)
                    .map(|_| self.int_expr(depth - 1, pools))
                    .collect();
                let pat: Vec<Var> = (0..2).map(|_| self.fresh()).collect();
                let body = Expr::op(
                    OpRef::named("+"),
                    pat.iter()
                        .map(|v| Expr::new(ExprKind::Var(v.clone())))
                        .collect(),
                );
                Expr::split(Expr::tuple(Qualifier::Li, items), pat, body)
            }
            8 => {
                // Apply an unrestricted closure cell to a linear argument.
                if pools.closures.is_empty() {
                    self.int_leaf(pools)
                } else {
                    let f = pools.closures[self.rng.gen_range(0..pools.closures.len())].clone();
                    let arg = self.int_expr(depth - 1, pools);
                    Expr::app(Expr::new(ExprKind::Var(f)), arg)
                }
            }
            9 => {
                // Branch on an unrestricted list cell; the arms are
                // independent integer expressions and the head is free to
                // ignore.
                if pools.un_lists.is_empty() {
                    self.int_leaf(pools)
                } else {
                    let xs =
                        pools.un_lists[self.rng.gen_range(0..pools.un_lists.len())].clone();
                    let mut pools_nil = pools.clone();
                    let mut pools_cons = pools.clone();
                    let nil_arm = self.int_expr(depth - 1, &mut pools_nil);
                    let cons_arm = self.int_expr(depth - 1, &mut pools_cons);
                    let nil_arm = consume_leftovers(nil_arm, &pools_nil.li_ints);
                    let cons_arm = consume_leftovers(cons_arm, &pools_cons.li_ints);
                    pools.li_ints.clear();
                    let z = self.fresh();
                    let zs = self.fresh();
                    Expr::case(
                        Expr::new(ExprKind::Var(xs)),
                        nil_arm,
                        z.as_str(),
                        zs.as_str(),
                        cons_arm,
                    )
                }
            }
            _ => {
                if pools.un_ints.is_empty() {
                    self.int_leaf(pools)
                } else {
                    let u =
                        pools.un_ints[self.rng.gen_range(0..pools.un_ints.len())].clone();
                    let bound = Expr::op(
                        OpRef::named("uadd"),
                        vec![
                            Expr::new(ExprKind::Var(u.clone())),
                            Expr::new(ExprKind::Var(u)),
                        ],
                    );
                    let body = self.int_expr(depth - 1, pools);
                    Expr::let_("u_", bound, body)
                }
            }
        }
    }

    fn int_leaf(&mut self, pools: &mut Pools) -> Expr {
        if !pools.li_ints.is_empty() && self.rng.gen_bool(0.5) {
            let i = self.rng.gen_range(0..pools.li_ints.len());
            let x = pools.li_ints.remove(i);
            Expr::new(ExprKind::Var(x))
        } else if self.rng.gen_bool(0.5) {
            Expr::op(OpRef::named("0"), vec![])
        } else {
            Expr::op(OpRef::named("1"), vec![])
        }
    }

    fn pick_li(&mut self, pool: &mut Vec<Var>) -> Option<Var> {
        if pool.is_empty() {
            return None;
        }
        let i = self.rng.gen_range(0..pool.len());
        Some(pool.remove(i))
    }
}

/// Wrap leftover linear variables into a tuple with the result so nothing
/// linear is dropped.
fn consume_leftovers(e: Expr, leftovers: &[Var]) -> Expr {
    if leftovers.is_empty() {
        return e;
    }
    let mut items = vec![e];
    items.extend(
        leftovers
            .iter()
            .map(|v| Expr::new(ExprKind::Var(v.clone()))),
    );
    Expr::tuple(Qualifier::Li, items)
}

/// Generate `count` configurations over [`generator_signature`] that pass
/// `config_check`, by rejection-sampling a usage-aware grammar. The result
/// is deterministic in the seed.
pub fn generate_pool(seed: u64, count: usize, depth: usize) -> (Signature, Vec<Configuration>) {
    let sig = generator_signature();
    let declared = BTreeMap::new();
    let env = VerifyEnv {
        sig: &sig,
        declared: &declared,
        check: CheckOptions::default(),
    };
    let mut gen = Gen {
        rng: StdRng::seed_from_u64(seed),
        counter: 0,
    };
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count && attempts < count * 200 {
        attempts += 1;
        let n_cells = gen.rng.gen_range(0..5u8);
        let mut cells: Vec<(Var, Value)> = Vec::new();
        let mut pools = Pools::default();
        for k in 0..n_cells {
            let name = Var(format!("s{k}"));
            let v = gen.rng.gen_range(0..5i64);
            match gen.rng.gen_range(0..10u8) {
                0..=4 => {
                    cells.push((
                        name.clone(),
                        Value::new(Qualifier::Li, Prevalue::Const(Constant::Int(v))),
                    ));
                    pools.li_ints.push(name);
                }
                5..=6 => {
                    cells.push((
                        name.clone(),
                        Value::new(Qualifier::Un, Prevalue::Const(Constant::Int(v))),
                    ));
                    pools.un_ints.push(name);
                }
                7 => {
                    cells.push((
                        name.clone(),
                        Value::new(
                            Qualifier::Li,
                            Prevalue::Const(Constant::Bool(v % 2 == 0)),
                        ),
                    ));
                    pools.li_bools.push(name);
                }
                8 => {
                    // An unrestricted closure over nothing: \x. x + 1.
                    let body = Expr::op(
                        OpRef::named("+"),
                        vec![Expr::var("x"), Expr::op(OpRef::named("1"), vec![])],
                    );
                    cells.push((
                        name.clone(),
                        Value::new(
                            Qualifier::Un,
                            Prevalue::Closure(
                                Var::new("x"),
                                Type::base(Qualifier::Li, BaseType::Int),
                                body,
                            ),
                        ),
                    ));
                    pools.closures.push(name);
                }
                _ => {
                    // An unrestricted list of one unrestricted element.
                    let elem = Var(format!("s{k}_e"));
                    let nil = Var(format!("s{k}_n"));
                    cells.push((
                        elem.clone(),
                        Value::new(Qualifier::Un, Prevalue::Const(Constant::Int(v))),
                    ));
                    cells.push((nil.clone(), Value::new(Qualifier::Un, Prevalue::Nil)));
                    cells.push((
                        name.clone(),
                        Value::new(Qualifier::Un, Prevalue::Cons(elem, nil)),
                    ));
                    pools.un_lists.push(name);
                }
            }
        }
        let store = Store::from_cells(cells).expect("generated names are distinct");
        let body = gen.int_expr(depth.min(4), &mut pools);
        let mut expr = consume_leftovers(body, &pools.li_ints);
        crate::surface::resolve_ops_by_name(&mut expr, &sig);
        let config = Configuration::new(store, expr);
        if config_check(&config, &env).is_well_typed() {
            out.push(config);
        }
    }
    (sig, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::DeallocMode;
    use crate::surface::parse_program;
    use crate::typing::SplitKind;
    use Qualifier::*;

    fn no_declared() -> BTreeMap<Var, Type> {
        BTreeMap::new()
    }

    fn env<'a>(sig: &'a Signature, declared: &'a BTreeMap<Var, Type>) -> VerifyEnv<'a> {
        VerifyEnv {
            sig,
            declared,
            check: CheckOptions::default(),
        }
    }

    fn li_const(n: i64) -> Value {
        Value::new(Li, Prevalue::Const(Constant::Int(n)))
    }

    #[test]
    fn store_typing_examples() {
        let sig = Signature::new(vec![]).unwrap();
        let declared = no_declared();
        let env = env(&sig, &declared);
        assert!(store_typing_check(
            &Store::new(),
            &TypeContext::empty(),
            &env
        ));
        // A linear constant may enter hidden.
        let store = Store::from_cells(vec![(Var::new("x"), li_const(3))]).unwrap();
        let pi =
            TypeContext::new(vec![(Var::new("x"), PseudoType::Hidden(BaseType::Int))]).unwrap();
        assert!(store_typing_check(&store, &pi, &env));
        // A tuple cell consumes the component cell: x disappears from the
        // context.
        let store = Store::from_cells(vec![
            (Var::new("x"), li_const(3)),
            (
                Var::new("y"),
                Value::new(Li, Prevalue::Tuple(vec![Var::new("x")])),
            ),
        ])
        .unwrap();
        let pi = TypeContext::new(vec![(
            Var::new("y"),
            PseudoType::Proper(Type::new(
                Li,
                Pretype::Tuple(vec![Type::base(Li, BaseType::Int)]),
            )),
        )])
        .unwrap();
        assert!(store_typing_check(&store, &pi, &env));
        // Retaining x alongside y is not derivable: the linear cell went
        // into the tuple's typing.
        let pi_bad = TypeContext::new(vec![
            (
                Var::new("x"),
                PseudoType::Proper(Type::base(Li, BaseType::Int)),
            ),
            (
                Var::new("y"),
                PseudoType::Proper(Type::new(
                    Li,
                    Pretype::Tuple(vec![Type::base(Li, BaseType::Int)]),
                )),
            ),
        ])
        .unwrap();
        assert!(!store_typing_check(&store, &pi_bad, &env));
    }

    #[test]
    fn config_check_trivial_and_counterexample() {
        let sig = Signature::new(vec![]).unwrap();
        let declared = no_declared();
        let e = env(&sig, &declared);
        let config = Configuration::new(
            Store::new(),
            Expr::op(OpRef::constant(Li, Constant::Int(3)), vec![]),
        );
        assert!(config_check(&config, &e).is_well_typed());

        // The hidden/consume configuration is rejected, and accepted by the
        // operator-pseudosplit mutant.
        let p = parse_program(crate::corpus::counterexample_source()).unwrap();
        let inst = p.instantiate().unwrap();
        let e2 = VerifyEnv::of_instance(&inst, CheckOptions::default());
        assert!(!config_check(&inst.configuration, &e2).is_well_typed());
        let mutant = VerifyEnv::of_instance(
            &inst,
            CheckOptions {
                operator_split: SplitKind::Pseudosplit,
            },
        );
        assert!(config_check(&inst.configuration, &mutant).is_well_typed());
    }

    #[test]
    fn linear_cell_referenced_twice_is_rejected() {
        let sig = Signature::new(vec![]).unwrap();
        let declared = no_declared();
        let e = env(&sig, &declared);
        let store = Store::from_cells(vec![
            (Var::new("x"), li_const(3)),
            (
                Var::new("t"),
                Value::new(Li, Prevalue::Tuple(vec![Var::new("x"), Var::new("x")])),
            ),
        ])
        .unwrap();
        let config = Configuration::new(store, Expr::var("t"));
        assert!(!config_check(&config, &e).is_well_typed());
    }

    #[test]
    fn hidden_choice_absorbs_unused_linear_constants() {
        let sig = Signature::new(vec![]).unwrap();
        let declared = no_declared();
        let e = env(&sig, &declared);
        let store = Store::from_cells(vec![
            (Var::new("x"), li_const(3)),
            (
                Var::new("y"),
                Value::new(Un, Prevalue::Const(Constant::Bool(true))),
            ),
        ])
        .unwrap();
        let config = Configuration::new(store, Expr::var("y"));
        assert!(config_check(&config, &e).is_well_typed());
    }

    #[test]
    fn fib_preservation_holds_and_mutant_is_caught() {
        let p = crate::corpus::get_program("fib", crate::corpus::Variant::WeakLinear, 4).unwrap();
        let inst = p.instantiate().unwrap();
        let report = preservation_suite(
            "fib/4",
            &inst,
            CheckOptions::default(),
            MachineOptions::default(),
            100_000,
        );
        assert!(report.verdict.is_clean(), "{report:?}");
        assert!(report.steps_checked > 10);

        let mutant = preservation_suite(
            "fib/4/store-qualifier-dealloc",
            &inst,
            CheckOptions::default(),
            MachineOptions {
                dealloc: DeallocMode::StoreQualifier,
            },
            100_000,
        );
        assert!(!mutant.verdict.is_clean(), "{mutant:?}");
    }

    #[test]
    fn search_past_the_cap_is_inconclusive_never_success() {
        // Thirteen linear base cells exceed the 2^12 fallback cap; with an
        // ill-typed control the heuristic fails and the verdict must be
        // inconclusive rather than a false acceptance.
        let sig = Signature::new(vec![]).unwrap();
        let declared = no_declared();
        let e = env(&sig, &declared);
        let cells: Vec<(Var, Value)> = (0..13)
            .map(|i| (Var(format!("c{i}")), li_const(i)))
            .collect();
        let store = Store::from_cells(cells).unwrap();
        let config = Configuration::new(store, Expr::var("missing"));
        match config_check(&config, &e) {
            ConfigVerdict::Inconclusive { choice_cells } => assert_eq!(choice_cells, 13),
            other => panic!("expected inconclusive, got {other:?}"),
        }
        // The same shape with a bindable control stays decidable through
        // the heuristic alone.
        let cells: Vec<(Var, Value)> = (0..13)
            .map(|i| (Var(format!("c{i}")), li_const(i)))
            .collect();
        let store = Store::from_cells(cells).unwrap();
        let config = Configuration::new(store, Expr::var("c3"));
        assert!(config_check(&config, &e).is_well_typed());
    }

    #[test]
    fn generated_pool_is_deterministic_and_progresses() {
        let (sig, pool) = generate_pool(7, 50, 3);
        let (_, pool2) = generate_pool(7, 50, 3);
        assert_eq!(pool.len(), pool2.len());
        for (a, b) in pool.iter().zip(&pool2) {
            assert_eq!(a, b);
        }
        assert!(pool.len() >= 50);
        let declared = no_declared();
        let report = progress_suite(
            &pool,
            &sig,
            &declared,
            CheckOptions::default(),
            MachineOptions::default(),
        );
        assert!(report.is_clean(), "{:?}", report.violations);
        assert_eq!(report.ill_typed, 0, "pool members were pre-filtered");
    }
}
