//! The built-in benchmark programs, each in a weak-linear and an
//! unrestricted qualification.
//!
//! The unrestricted variant of a program is mechanical: every qualifier
//! becomes `un`, including hidden signature positions. Both variants live
//! as source files so they can be read side by side; a test keeps the
//! unrestricted files in sync with the transform.

use std::fmt;

use crate::surface::{parse_program, ParseError, ProgramFile, StoreEntry, StoreInit};
use crate::syntax::{
    Expr, ExprKind, OpRef, OpTarget, OperatorType, Pretype, PseudoQualifier, Qualifier, SigEntry,
    Signature, Type,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum Variant {
    WeakLinear,
    Unrestricted,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::WeakLinear => "weak-linear",
            Variant::Unrestricted => "unrestricted",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "weak-linear" | "wl" | "li" => Ok(Variant::WeakLinear),
            "unrestricted" | "un" => Ok(Variant::Unrestricted),
            other => Err(format!("unknown variant `{other}`")),
        }
    }
}

pub const NAMES: [&str; 4] = ["fib", "mapa", "map", "sort"];

pub fn source(name: &str, variant: Variant) -> Option<&'static str> {
    Some(match (name, variant) {
        ("fib", Variant::WeakLinear) => include_str!("../corpus/fib.wl"),
        ("fib", Variant::Unrestricted) => include_str!("../corpus/fib_un.wl"),
        ("mapa", Variant::WeakLinear) => include_str!("../corpus/mapa.wl"),
        ("mapa", Variant::Unrestricted) => include_str!("../corpus/mapa_un.wl"),
        ("map", Variant::WeakLinear) => include_str!("../corpus/map.wl"),
        ("map", Variant::Unrestricted) => include_str!("../corpus/map_un.wl"),
        ("sort", Variant::WeakLinear) => include_str!("../corpus/sort.wl"),
        ("sort", Variant::Unrestricted) => include_str!("../corpus/sort_un.wl"),
        _ => return None,
    })
}

/// The configuration that must be rejected: a hidden read of `x` merged
/// with its consumption inside a single operator application.
pub fn counterexample_source() -> &'static str {
    include_str!("../corpus/counterexample.wl")
}

/// The growth degree each (program, variant) is expected to show on its
/// default grid.
pub fn expected_degree(name: &str, variant: Variant) -> Option<usize> {
    Some(match (name, variant) {
        ("fib", Variant::WeakLinear) => 0,
        ("fib", Variant::Unrestricted) => 1,
        ("map", Variant::WeakLinear) => 0,
        ("map", Variant::Unrestricted) => 1,
        ("mapa", Variant::WeakLinear) => 0,
        ("mapa", Variant::Unrestricted) => 2,
        ("sort", Variant::WeakLinear) => 1,
        ("sort", Variant::Unrestricted) => 3,
        _ => return None,
    })
}

/// The growth grid each program is measured on.
pub fn default_growth_ns(name: &str) -> Option<&'static [i64]> {
    Some(match name {
        "fib" | "map" | "mapa" => &[4, 8, 16, 32],
        "sort" => &[4, 6, 8, 10],
        _ => return None,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("unknown corpus program or variant: {0}")]
    Unknown(String),
    #[error("parameter n = {n} out of range for {name}: {reason}")]
    BadParameter {
        name: String,
        n: i64,
        reason: &'static str,
    },
    #[error("embedded corpus source failed to parse: {0}")]
    Parse(#[from] ParseError),
}

/// Instantiatable template of a corpus program at parameter `n`.
pub fn get_program(name: &str, variant: Variant, n: i64) -> Result<ProgramFile, CorpusError> {
    let src =
        source(name, variant).ok_or_else(|| CorpusError::Unknown(format!("{name}/{variant}")))?;
    if n < 0 {
        return Err(CorpusError::BadParameter {
            name: name.to_string(),
            n,
            reason: "n must be non-negative",
        });
    }
    if (name == "sort" || name == "mapa") && n < 1 {
        return Err(CorpusError::BadParameter {
            name: name.to_string(),
            n,
            reason: "n must be at least 1",
        });
    }
    let p = parse_program(src)?;
    Ok(p.with_param("n", n))
}

// ---------------------------------------------------------------------------
// The mechanical unrestricted transform.

fn un_type(t: &Type) -> Type {
    Type::new(Qualifier::Un, un_pretype(&t.pretype))
}

fn un_pretype(p: &Pretype) -> Pretype {
    match p {
        Pretype::Base(b) => Pretype::Base(*b),
        Pretype::Tuple(ts) => Pretype::Tuple(ts.iter().map(un_type).collect()),
        Pretype::Arrow(a, b) => Pretype::Arrow(Box::new(un_type(a)), Box::new(un_type(b))),
        Pretype::List(t) => Pretype::List(Box::new(un_type(t))),
        Pretype::Hole(i) => Pretype::Hole(*i),
    }
}

fn un_operator_type(t: &OperatorType) -> OperatorType {
    OperatorType {
        inputs: t
            .inputs
            .iter()
            .map(|(_, p)| (PseudoQualifier::Un, un_pretype(p)))
            .collect(),
        output: (Qualifier::Un, un_pretype(&t.output.1)),
    }
}

fn un_expr(e: &Expr) -> Expr {
    let kind = match &e.kind {
        ExprKind::Var(v) => ExprKind::Var(v.clone()),
        ExprKind::Op(r, args) => {
            let target = match &r.target {
                OpTarget::Const(_, c) => OpTarget::Const(Qualifier::Un, c.clone()),
                other => other.clone(),
            };
            ExprKind::Op(
                OpRef {
                    name: r.name.clone(),
                    target,
                },
                args.iter().map(un_expr).collect(),
            )
        }
        ExprKind::Tuple(_, items) => {
            ExprKind::Tuple(Qualifier::Un, items.iter().map(un_expr).collect())
        }
        ExprKind::App(f, a) => ExprKind::App(Box::new(un_expr(f)), Box::new(un_expr(a))),
        ExprKind::Lambda(_, x, t, body) => {
            ExprKind::Lambda(Qualifier::Un, x.clone(), un_type(t), Box::new(un_expr(body)))
        }
        ExprKind::Split(s, pat, body) => ExprKind::Split(
            Box::new(un_expr(s)),
            pat.clone(),
            Box::new(un_expr(body)),
        ),
        ExprKind::If(c, t, e2) => ExprKind::If(
            Box::new(un_expr(c)),
            Box::new(un_expr(t)),
            Box::new(un_expr(e2)),
        ),
        ExprKind::Let(x, bound, body) => ExprKind::Let(
            x.clone(),
            Box::new(un_expr(bound)),
            Box::new(un_expr(body)),
        ),
        ExprKind::Nil(_) => ExprKind::Nil(Qualifier::Un),
        ExprKind::Cons(_, h, t) => ExprKind::Cons(
            Qualifier::Un,
            Box::new(un_expr(h)),
            Box::new(un_expr(t)),
        ),
        ExprKind::Case(s, nil_arm, z1, z2, cons_arm) => ExprKind::Case(
            Box::new(un_expr(s)),
            Box::new(un_expr(nil_arm)),
            z1.clone(),
            z2.clone(),
            Box::new(un_expr(cons_arm)),
        ),
    };
    Expr {
        kind,
        span: e.span,
    }
}

/// Requalify a whole program with `un` everywhere: every `li` becomes `un`
/// and every hidden input position becomes `un`.
pub fn to_unrestricted(p: &ProgramFile) -> ProgramFile {
    let entries: Vec<SigEntry> = p
        .signature
        .entries()
        .iter()
        .map(|e| SigEntry {
            name: e.name.clone(),
            ty: un_operator_type(&e.ty),
            prim: e.prim.clone(),
        })
        .collect();
    let signature = Signature::new(entries).expect("un transform keeps signatures valid");
    let store = p
        .store
        .iter()
        .map(|entry| StoreEntry {
            var: entry.var.clone(),
            declared: entry.declared.as_ref().map(un_type),
            init: match &entry.init {
                StoreInit::Value(e) => StoreInit::Value(un_expr(e)),
                StoreInit::Iota { desc, count, .. } => StoreInit::Iota {
                    qual: Qualifier::Un,
                    desc: *desc,
                    count: count.clone(),
                },
                StoreInit::IotaList { count, .. } => StoreInit::IotaList {
                    qual: Qualifier::Un,
                    count: count.clone(),
                },
            },
        })
        .collect();
    ProgramFile {
        params: p.params.clone(),
        signature,
        store,
        main: un_expr(&p.main),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::print_program;

    #[test]
    fn all_sources_parse() {
        for name in NAMES {
            for variant in [Variant::WeakLinear, Variant::Unrestricted] {
                let p = get_program(name, variant, 4).unwrap();
                assert!(!p.signature.entries().is_empty(), "{name}/{variant}");
            }
        }
        parse_program(counterexample_source()).unwrap();
    }

    #[test]
    fn every_source_round_trips_through_the_printer() {
        for name in NAMES {
            for variant in [Variant::WeakLinear, Variant::Unrestricted] {
                let p = parse_program(source(name, variant).unwrap()).unwrap();
                let reparsed = parse_program(&print_program(&p)).unwrap();
                assert_eq!(p, reparsed, "{name}/{variant}");
            }
        }
    }

    #[test]
    fn unrestricted_files_match_the_mechanical_transform() {
        for name in NAMES {
            let li = parse_program(source(name, Variant::WeakLinear).unwrap()).unwrap();
            let un_file = parse_program(source(name, Variant::Unrestricted).unwrap()).unwrap();
            let transformed = to_unrestricted(&li);
            assert_eq!(
                un_file, transformed,
                "{name}: regenerate with `cargo test regenerate_unrestricted -- --ignored`"
            );
        }
    }

    /// Rewrites the `*_un.wl` files from the weak-linear sources. Run after
    /// editing a weak-linear program.
    #[test]
    #[ignore]
    fn regenerate_unrestricted_sources() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus");
        for name in NAMES {
            let li = parse_program(source(name, Variant::WeakLinear).unwrap()).unwrap();
            let un = to_unrestricted(&li);
            let header = "# Unrestricted variant: every qualifier of the weak-linear program\n# is un. Generated mechanically; do not edit by hand.\n\n";
            let text = format!("{header}{}", print_program(&un));
            std::fs::write(dir.join(format!("{name}_un.wl")), text).unwrap();
        }
    }
}
