//! Acceptance suite: one test per criterion, each printing a pass line.
//!
//! 1. The four built-in weak-linear programs check, quickly.
//! 2. The hidden/consume operator configuration is rejected.
//! 3. Preservation holds along full traces at the stated scales.
//! 4. Progress: no well-typed configuration is stuck, traces and generated.
//! 5. Both mutants are caught; the pseudosplit mutant accepts what the
//!    faithful checker rejects.
//! 6. Growth degrees of the run balance are exactly as published.
//! 7. The split relations agree with brute-force rule enumeration.
//! 8. Functional results match host oracles (sorting, the recurrence).

use std::collections::BTreeMap;
use std::time::Instant;

use weaklin::corpus::{self, Variant};
use weaklin::machine::{DeallocMode, MachineOptions, Prevalue, RunOutcome};
use weaklin::profile;
use weaklin::surface::parse_program;
use weaklin::syntax::{
    ctx_is_q, BaseType, Constant, Pretype, PseudoQualifier, PseudoType, Qualifier, Type,
    TypeContext, Var,
};
use weaklin::typing::{pseudosplit_check, split_check, CheckOptions, SplitKind};
use weaklin::verify::{self, ConfigVerdict};

fn weak_linear_instance(name: &str, n: i64) -> weaklin::surface::Instance {
    corpus::get_program(name, Variant::WeakLinear, n)
        .unwrap()
        .instantiate()
        .unwrap()
}

fn checked_instance(name: &str, variant: Variant, n: i64) -> weaklin::surface::Instance {
    let mut instance = corpus::get_program(name, variant, n)
        .unwrap()
        .instantiate()
        .unwrap();
    let verdict = verify::check_instance(&mut instance, CheckOptions::default());
    assert!(verdict.is_well_typed(), "{name}/{variant}/{n}: {verdict:?}");
    instance
}

#[test]
fn criterion_1_corpus_programs_are_well_typed() {
    for name in corpus::NAMES {
        let started = Instant::now();
        let mut instance = weak_linear_instance(name, 8);
        let verdict = verify::check_instance(&mut instance, CheckOptions::default());
        let elapsed = started.elapsed();
        assert!(verdict.is_well_typed(), "{name}: {verdict:?}");
        assert!(
            elapsed.as_secs_f64() < 1.0,
            "{name} checked in {elapsed:?}, over the 1 s budget"
        );
    }
    println!("criterion 1 PASS: fib, mapa, map, sort check as weak-linear programs");
}

#[test]
fn criterion_2_hidden_consume_configuration_rejected() {
    let program = parse_program(corpus::counterexample_source()).unwrap();
    let mut instance = program.instantiate().unwrap();
    let verdict = verify::check_instance(&mut instance, CheckOptions::default());
    match &verdict {
        ConfigVerdict::IllTyped { message } => {
            assert!(
                message.contains("context split"),
                "diagnostic should name the split refusal, got: {message}"
            );
        }
        other => panic!("expected rejection, got {other:?}"),
    }
    println!("criterion 2 PASS: x +^(hi,li) (x *^(li,li) y) is rejected at the operator split");
}

#[test]
fn criterion_3_preservation_along_full_traces() {
    let mut total_steps = 0u64;
    for (name, lo, hi) in [("fib", 0i64, 16i64), ("map", 0, 16), ("mapa", 1, 16), ("sort", 1, 8)]
    {
        for n in lo..=hi {
            let instance = weak_linear_instance(name, n);
            let report = verify::preservation_suite(
                &format!("{name}/{n}"),
                &instance,
                CheckOptions::default(),
                MachineOptions::default(),
                1_000_000,
            );
            assert!(
                report.verdict.is_clean(),
                "{name} n={n}: {:?}",
                report.verdict
            );
            total_steps += report.steps_checked;
        }
    }
    println!(
        "criterion 3 PASS: configuration typing holds after every one of {total_steps} steps"
    );
}

#[test]
fn criterion_4_progress_on_traces_and_generated_pool() {
    // Every intermediate configuration of the criterion-3 traces.
    let mut checked = 0usize;
    for (name, lo, hi) in [("fib", 0i64, 16i64), ("map", 0, 16), ("mapa", 1, 16), ("sort", 1, 8)]
    {
        for n in lo..=hi {
            let instance = checked_instance(name, Variant::WeakLinear, n);
            let pool =
                verify::trace_configurations(&instance, MachineOptions::default(), 1_000_000);
            assert!(!pool.is_empty(), "{name}/{n} produced no trace");
            let report = verify::progress_suite(
                &pool,
                &instance.signature,
                &instance.declared,
                CheckOptions::default(),
                MachineOptions::default(),
            );
            assert!(report.is_clean(), "{name} n={n}: {:?}", report.violations);
            assert_eq!(report.ill_typed, 0, "{name} n={n}: trace members must check");
            checked += report.checked;
        }
    }
    // At least a thousand seeded generated configurations of depth <= 4.
    let (sig, pool) = verify::generate_pool(0xC0FFEE, 1000, 4);
    assert!(pool.len() >= 1000, "generator produced {}", pool.len());
    let declared = BTreeMap::new();
    let report = verify::progress_suite(
        &pool,
        &sig,
        &declared,
        CheckOptions::default(),
        MachineOptions::default(),
    );
    assert!(report.is_clean(), "{:?}", report.violations);
    assert_eq!(report.ill_typed, 0);
    checked += report.checked;
    println!("criterion 4 PASS: {checked} well-typed configurations, none stuck");
}

#[test]
fn criterion_5_mutants_are_detected() {
    // The dealloc-by-store-qualifier machine breaks preservation on fib.
    let instance = weak_linear_instance("fib", 4);
    let mutant_report = verify::preservation_suite(
        "fib/4",
        &instance,
        CheckOptions::default(),
        MachineOptions {
            dealloc: DeallocMode::StoreQualifier,
        },
        1_000_000,
    );
    assert!(
        !mutant_report.verdict.is_clean(),
        "store-qualifier dealloc mutant went undetected"
    );

    // The operator-pseudosplit checker accepts the rejected configuration,
    // and running it then violates preservation.
    let program = parse_program(corpus::counterexample_source()).unwrap();
    let mut instance = program.instantiate().unwrap();
    let mutant_check = CheckOptions {
        operator_split: SplitKind::Pseudosplit,
    };
    let verdict = verify::check_instance(&mut instance, mutant_check);
    assert!(
        verdict.is_well_typed(),
        "the pseudosplit mutant must accept the configuration: {verdict:?}"
    );
    let report = verify::preservation_suite(
        "counterexample",
        &instance,
        mutant_check,
        MachineOptions::default(),
        1_000_000,
    );
    assert!(
        !report.verdict.is_clean(),
        "running the mutant-accepted configuration must break preservation"
    );
    println!("criterion 5 PASS: both mutants produce detectable failures");
}

#[test]
fn criterion_6_growth_degrees_are_exact() {
    let expectations = [
        ("fib", Variant::WeakLinear, 0usize),
        ("map", Variant::WeakLinear, 0),
        ("mapa", Variant::WeakLinear, 0),
        ("fib", Variant::Unrestricted, 1),
        ("map", Variant::Unrestricted, 1),
        ("mapa", Variant::Unrestricted, 2),
        ("sort", Variant::WeakLinear, 1),
        ("sort", Variant::Unrestricted, 3),
    ];
    for (name, variant, expected) in expectations {
        let ns = corpus::default_growth_ns(name).unwrap();
        let report = profile::growth_experiment(name, variant, ns, 10_000_000).unwrap();
        assert_eq!(
            report.detected_degree, expected,
            "{name}/{variant} on {ns:?}: {report:?}"
        );
        assert_eq!(corpus::expected_degree(name, variant), Some(expected));
    }
    println!("criterion 6 PASS: run-balance degrees 0/0/0/1/1/2 and sort 1/3, exactly");
}

// --- Criterion 7: brute-force enumeration of the split rules. -------------

/// Direct recursive reading of the inductive rules, peeling the last entry
/// of the whole with every applicable rule.
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
    if kind == SplitKind::Pseudosplit {
        if let PseudoType::Proper(ty) = &t {
            if let Pretype::Base(b) = ty.pretype {
                let h = PseudoType::Hidden(b);
                for j in 0..parts.len() {
                    if ends(&parts[j], &t) && (0..j).all(|i| ends(&parts[i], &h)) && j > 0 {
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
    let mut ps: Vec<Vec<(Var, PseudoType)>> = parts.iter().map(|p| p.entries().to_vec()).collect();
    let mut w = whole.entries().to_vec();
    derivable(kind, &mut ps, &mut w)
}

fn all_pseudotypes() -> Vec<PseudoType> {
    let mut out = Vec::new();
    for b in [BaseType::Int, BaseType::Bool] {
        out.push(PseudoType::Proper(Type::base(Qualifier::Li, b)));
        out.push(PseudoType::Proper(Type::base(Qualifier::Un, b)));
        out.push(PseudoType::Hidden(b));
    }
    out
}

#[test]
fn criterion_7_split_relations_match_rule_enumeration() {
    let vars = [Var::new("x"), Var::new("y"), Var::new("z")];
    // All wholes over at most three distinct variables.
    let mut wholes: Vec<Vec<(Var, PseudoType)>> = vec![vec![]];
    for k in 1..=3usize {
        let mut stack: Vec<Vec<(Var, PseudoType)>> = vec![vec![]];
        for v in vars.iter().take(k) {
            let mut next = Vec::new();
            for prefix in &stack {
                for t in all_pseudotypes() {
                    let mut p = prefix.clone();
                    p.push((v.clone(), t));
                    next.push(p);
                }
            }
            stack = next;
        }
        wholes.extend(stack);
    }
    let mut cases = 0u64;
    let mut disagreements = 0u64;
    for whole_entries in &wholes {
        let whole = TypeContext::new(whole_entries.clone()).unwrap();
        // Binary parts: per entry, each side gets the entry, the hidden
        // form, or nothing.
        type Placement = (Option<PseudoType>, Option<PseudoType>);
        let per_entry: Vec<Vec<Placement>> = whole_entries
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
                        c.push((Some(h), None));
                    }
                }
                c
            })
            .collect();
        type Parts = (Vec<(Var, PseudoType)>, Vec<(Var, PseudoType)>);
        let mut assignments: Vec<Parts> = vec![(vec![], vec![])];
        for (i, options) in per_entry.iter().enumerate() {
            let mut next = Vec::with_capacity(assignments.len() * options.len());
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
            let parts = [TypeContext::new(l).unwrap(), TypeContext::new(r).unwrap()];
            for kind in [SplitKind::Split, SplitKind::Pseudosplit] {
                let fast = match kind {
                    SplitKind::Split => split_check(&parts, &whole),
                    SplitKind::Pseudosplit => pseudosplit_check(&parts, &whole),
                };
                let slow = oracle(kind, &parts, &whole);
                if fast != slow {
                    disagreements += 1;
                    if disagreements < 5 {
                        eprintln!(
                            "disagree {kind:?}: {} | {} vs {whole}: fast={fast} slow={slow}",
                            parts[0], parts[1]
                        );
                    }
                }
                cases += 1;
            }
        }
    }
    assert_eq!(disagreements, 0, "over {cases} cases");
    // Ternary parts over two variables, exercising the hidden prefix rule.
    let mut tern_cases = 0u64;
    let two_var_wholes: Vec<&Vec<(Var, PseudoType)>> =
        wholes.iter().filter(|w| w.len() <= 2).collect();
    for whole_entries in two_var_wholes {
        let whole = TypeContext::new(whole_entries.clone()).unwrap();
        let per_entry: Vec<Vec<[Option<PseudoType>; 3]>> = whole_entries
            .iter()
            .map(|(_, t)| {
                let mut opts: Vec<[Option<PseudoType>; 3]> = Vec::new();
                let choices: Vec<Option<PseudoType>> = match t {
                    PseudoType::Proper(ty) => match ty.pretype {
                        Pretype::Base(b) => vec![
                            None,
                            Some(t.clone()),
                            Some(PseudoType::Hidden(b)),
                        ],
                        _ => vec![None, Some(t.clone())],
                    },
                    PseudoType::Hidden(_) => vec![None, Some(t.clone())],
                };
                for a in &choices {
                    for b in &choices {
                        for c in &choices {
                            opts.push([a.clone(), b.clone(), c.clone()]);
                        }
                    }
                }
                opts
            })
            .collect();
        let mut assignments: Vec<[Vec<(Var, PseudoType)>; 3]> = vec![Default::default()];
        for (i, options) in per_entry.iter().enumerate() {
            let mut next = Vec::with_capacity(assignments.len() * options.len());
            for parts3 in &assignments {
                for opt in options {
                    let mut p2 = parts3.clone();
                    for (slot, choice) in p2.iter_mut().zip(opt) {
                        if let Some(t) = choice {
                            slot.push((whole_entries[i].0.clone(), t.clone()));
                        }
                    }
                    next.push(p2);
                }
            }
            assignments = next;
        }
        for parts3 in assignments {
            let parts: Vec<TypeContext> = parts3
                .into_iter()
                .map(|p| TypeContext::new(p).unwrap())
                .collect();
            for kind in [SplitKind::Split, SplitKind::Pseudosplit] {
                let fast = match kind {
                    SplitKind::Split => split_check(&parts, &whole),
                    SplitKind::Pseudosplit => pseudosplit_check(&parts, &whole),
                };
                let slow = oracle(kind, &parts, &whole);
                assert_eq!(
                    fast, slow,
                    "{kind:?}: {} | {} | {} vs {whole}",
                    parts[0], parts[1], parts[2]
                );
                tern_cases += 1;
            }
        }
    }
    println!(
        "criterion 7 PASS: {cases} binary and {tern_cases} ternary cases agree with rule enumeration"
    );
}

#[test]
fn criterion_8_functional_oracles() {
    // sort(n) ends with the host-sorted array.
    for n in [4i64, 6, 8, 10] {
        let instance = checked_instance("sort", Variant::WeakLinear, n);
        let outcome = weaklin::machine::run(
            instance.configuration,
            &instance.signature,
            MachineOptions::default(),
            1_000_000,
            false,
        );
        let (var, store) = match outcome {
            RunOutcome::Terminal { var, store, .. } => (var, store),
            other => panic!(
                "sort n={n} did not terminate: {}",
                match other {
                    RunOutcome::Stuck { error, .. } => error.to_string(),
                    _ => "fuel exhausted".to_string(),
                }
            ),
        };
        let got = match &store.lookup(&var).unwrap().prevalue {
            Prevalue::Const(Constant::Array(xs)) => xs.clone(),
            other => panic!("sort n={n} returned {other}"),
        };
        let mut expected: Vec<i64> = (0..n).rev().collect();
        expected.sort_unstable();
        assert_eq!(got, expected, "sort n={n}");
    }

    // fib's accumulated components follow the recurrence computed directly.
    let host_fib = |k: usize| -> i64 {
        let (mut a, mut b) = (1i64, 1i64);
        for _ in 0..k {
            let next = a + b;
            a = b;
            b = next;
        }
        a
    };
    for n in 0..=10i64 {
        let instance = checked_instance("fib", Variant::WeakLinear, n);
        let outcome = weaklin::machine::run(
            instance.configuration,
            &instance.signature,
            MachineOptions::default(),
            1_000_000,
            false,
        );
        let (var, store) = match outcome {
            RunOutcome::Terminal { var, store, .. } => (var, store),
            _ => panic!("fib n={n} did not terminate"),
        };
        let cells = match &store.lookup(&var).unwrap().prevalue {
            Prevalue::Tuple(vs) => vs.clone(),
            other => panic!("fib n={n} returned {other}"),
        };
        assert_eq!(cells.len(), 3);
        let read = |v: &Var| match &store.lookup(v).unwrap().prevalue {
            Prevalue::Const(Constant::Int(k)) => *k,
            other => panic!("component {other}"),
        };
        assert_eq!(read(&cells[0]), 0, "the counter is spent at the base");
        assert_eq!(read(&cells[1]), host_fib(n as usize), "second component");
        assert_eq!(
            read(&cells[2]),
            host_fib(n as usize + 1),
            "third component at n={n}"
        );
    }
    println!("criterion 8 PASS: sorted arrays and recurrence values match host computations");
}
