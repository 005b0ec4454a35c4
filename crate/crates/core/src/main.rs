//! Command-line front end: `check`, `run`, `profile` and `meta`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use weaklin::corpus::{self, Variant};
use weaklin::machine::{DeallocMode, MachineOptions, RunOutcome};
use weaklin::profile;
use weaklin::surface::{parse_program, print_expr, Instance, ProgramFile};
use weaklin::syntax::Var;
use weaklin::typing::{CheckOptions, SplitKind};
use weaklin::verify::{self, ConfigVerdict, SuiteVerdict};

/// Checker, abstract machine and memory profiler for a small language with
/// weak-linear types.
#[derive(Parser)]
#[command(name = "weaklin", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mutant {
    /// Deallocate operator inputs by the stored qualifier instead of the
    /// operator typing.
    StoreQualifierDealloc,
    /// Combine operator argument contexts by pseudosplit instead of split.
    OperatorPseudosplit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Records,
}

#[derive(Args)]
struct SourceArgs {
    /// Program file to load.
    path: Option<PathBuf>,
    /// Built-in program name (fib, mapa, map, sort) instead of a file.
    #[arg(long, conflicts_with = "path")]
    program: Option<String>,
    /// Variant of the built-in program.
    #[arg(long, default_value = "weak-linear")]
    variant: Variant,
    /// Override the integer parameter n.
    #[arg(long)]
    n: Option<i64>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, elaborate operators and verify well-typedness of the
    /// configuration.
    Check {
        #[command(flatten)]
        source: SourceArgs,
        /// Print the reconstructed store context.
        #[arg(long)]
        explain: bool,
        #[arg(long)]
        mutant: Option<Mutant>,
        #[arg(long, default_value = "text")]
        format: Format,
    },
    /// Evaluate to a terminal configuration.
    Run {
        #[command(flatten)]
        source: SourceArgs,
        /// Step bound; defaults to $WEAKLIN_FUEL or 1000000.
        #[arg(long)]
        fuel: Option<u64>,
        /// Print one line per step.
        #[arg(long)]
        trace: bool,
        /// Skip the type check before running.
        #[arg(long = "unsafe")]
        unsafe_run: bool,
        #[arg(long)]
        mutant: Option<Mutant>,
        #[arg(long, default_value = "text")]
        format: Format,
    },
    /// Measure memory-balance growth of a built-in program across n.
    Profile {
        /// Built-in program name.
        #[arg(long)]
        program: String,
        /// Variant to measure; both when omitted.
        #[arg(long)]
        variant: Option<Variant>,
        /// Comma-separated parameter values; defaults to the program's grid.
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<i64>>,
        #[arg(long)]
        fuel: Option<u64>,
        #[arg(long, default_value = "text")]
        format: Format,
    },
    /// Run the preservation and progress suites over the built-in programs
    /// and seeded generated configurations.
    Meta {
        /// Run only the preservation suite.
        #[arg(long)]
        preservation: bool,
        /// Run only the progress suite.
        #[arg(long)]
        progress: bool,
        #[arg(long)]
        fuel: Option<u64>,
        /// Seed for the generated configuration pool.
        #[arg(long, default_value_t = 0xC0FFEE)]
        seed: u64,
        /// Number of generated configurations.
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long)]
        mutant: Option<Mutant>,
        #[arg(long, default_value = "text")]
        format: Format,
    },
}

fn default_fuel(flag: Option<u64>) -> u64 {
    flag.or_else(|| {
        std::env::var("WEAKLIN_FUEL")
            .ok()
            .and_then(|s| s.parse().ok())
    })
    .unwrap_or(1_000_000)
}

fn options_for(mutant: Option<Mutant>) -> (CheckOptions, MachineOptions) {
    let mut check = CheckOptions::default();
    let mut machine = MachineOptions::default();
    match mutant {
        Some(Mutant::OperatorPseudosplit) => check.operator_split = SplitKind::Pseudosplit,
        Some(Mutant::StoreQualifierDealloc) => machine.dealloc = DeallocMode::StoreQualifier,
        None => {}
    }
    (check, machine)
}

fn load_program(source: &SourceArgs) -> Result<ProgramFile, String> {
    let mut program = match (&source.path, &source.program) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            parse_program(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        (None, Some(name)) => corpus::get_program(name, source.variant, source.n.unwrap_or(8))
            .map_err(|e| e.to_string())?,
        _ => return Err("give a file path or --program".to_string()),
    };
    if let Some(n) = source.n {
        program = program.with_param("n", n);
    }
    Ok(program)
}

fn instantiate(program: &ProgramFile) -> Result<Instance, String> {
    program.instantiate().map_err(|e| e.to_string())
}

fn record(value: serde_json::Value) {
    println!("{value}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Check {
            source,
            explain,
            mutant,
            format,
        } => cmd_check(&source, explain, mutant, format),
        Command::Run {
            source,
            fuel,
            trace,
            unsafe_run,
            mutant,
            format,
        } => cmd_run(&source, default_fuel(fuel), trace, unsafe_run, mutant, format),
        Command::Profile {
            program,
            variant,
            ns,
            fuel,
            format,
        } => cmd_profile(&program, variant, ns, default_fuel(fuel), format),
        Command::Meta {
            preservation,
            progress,
            fuel,
            seed,
            count,
            mutant,
            format,
        } => cmd_meta(
            preservation,
            progress,
            default_fuel(fuel),
            seed,
            count,
            mutant,
            format,
        ),
    };
    ExitCode::from(code)
}

fn cmd_check(source: &SourceArgs, explain: bool, mutant: Option<Mutant>, format: Format) -> u8 {
    let (check, _) = options_for(mutant);
    let program = match load_program(source) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let mut instance = match instantiate(&program) {
        Ok(i) => i,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let verdict = verify::check_instance(&mut instance, check);
    if format == Format::Records {
        record(serde_json::json!({
            "command": "check",
            "verdict": verdict,
        }));
    } else {
        match &verdict {
            ConfigVerdict::WellTyped { context } => {
                println!("well-typed");
                if explain {
                    println!("context: {context}");
                }
            }
            ConfigVerdict::IllTyped { message } => println!("ill-typed: {message}"),
            ConfigVerdict::Inconclusive { choice_cells } => println!(
                "inconclusive: {choice_cells} hidden/linear choice cells exceed the search cap"
            ),
        }
    }
    if verdict.is_well_typed() {
        0
    } else {
        1
    }
}

fn cmd_run(
    source: &SourceArgs,
    fuel: u64,
    trace: bool,
    unsafe_run: bool,
    mutant: Option<Mutant>,
    format: Format,
) -> u8 {
    let (check, machine_opts) = options_for(mutant);
    let program = match load_program(source) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let mut instance = match instantiate(&program) {
        Ok(i) => i,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    if !unsafe_run {
        let verdict = verify::check_instance(&mut instance, check);
        if !verdict.is_well_typed() {
            match verdict {
                ConfigVerdict::IllTyped { message } => eprintln!("ill-typed: {message}"),
                other => eprintln!("check did not pass: {other:?}"),
            }
            return 1;
        }
    }
    let outcome = weaklin::machine::run(
        instance.configuration,
        &instance.signature,
        machine_opts,
        fuel,
        trace,
    );
    match outcome {
        RunOutcome::Terminal {
            var,
            store,
            steps,
            trace: lines,
        } => {
            for line in &lines {
                if format == Format::Records {
                    record(serde_json::to_value(line).expect("trace line serializes"));
                } else {
                    println!("{line}");
                }
            }
            let value = store
                .lookup(&var)
                .map(|v| v.to_string())
                .unwrap_or_else(|| "<unbound>".to_string());
            if format == Format::Records {
                record(serde_json::json!({
                    "command": "run",
                    "terminal": var,
                    "value": value,
                    "steps": steps,
                    "store_cells": store.len(),
                }));
            } else {
                println!("terminal: {var} = {value}");
                println!("steps: {steps}, live cells: {}", store.len());
            }
            0
        }
        RunOutcome::Stuck {
            error,
            config,
            steps,
        } => {
            eprintln!(
                "stuck after {steps} steps: {error}\n  control: {}",
                print_expr(&config.control)
            );
            1
        }
        RunOutcome::FuelExhausted { steps, .. } => {
            eprintln!("fuel exhausted after {steps} steps");
            1
        }
    }
}

fn cmd_profile(
    program: &str,
    variant: Option<Variant>,
    ns: Option<Vec<i64>>,
    fuel: u64,
    format: Format,
) -> u8 {
    let variants = match variant {
        Some(v) => vec![v],
        None => vec![Variant::WeakLinear, Variant::Unrestricted],
    };
    let ns = match ns {
        Some(ns) => ns,
        None => match corpus::default_growth_ns(program) {
            Some(ns) => ns.to_vec(),
            None => {
                eprintln!("error: unknown program `{program}`");
                return 2;
            }
        },
    };
    let mut failed = false;
    for v in variants {
        match profile::growth_experiment(program, v, &ns, fuel) {
            Ok(report) => {
                if format == Format::Records {
                    record(serde_json::to_value(&report).expect("report serializes"));
                } else {
                    print!("{}", report.render());
                }
                if let Some(expected) = corpus::expected_degree(program, v) {
                    if expected != report.detected_degree {
                        println!(
                            "degree mismatch for {program}/{v}: expected {expected}, detected {}",
                            report.detected_degree
                        );
                        failed = true;
                    }
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                return 2;
            }
        }
    }
    if failed {
        1
    } else {
        0
    }
}

fn meta_sweep() -> Vec<(String, Variant, i64)> {
    let mut out = Vec::new();
    for (name, ns) in [
        ("fib", &[1i64, 4, 16][..]),
        ("map", &[1, 4, 16][..]),
        ("mapa", &[1, 4, 16][..]),
        ("sort", &[1, 4, 8][..]),
    ] {
        for &n in ns {
            out.push((name.to_string(), Variant::WeakLinear, n));
        }
        out.push((name.to_string(), Variant::Unrestricted, 4));
    }
    out
}

fn cmd_meta(
    preservation: bool,
    progress: bool,
    fuel: u64,
    seed: u64,
    count: usize,
    mutant: Option<Mutant>,
    format: Format,
) -> u8 {
    let (check, machine_opts) = options_for(mutant);
    let run_preservation = preservation || !progress;
    let run_progress = progress || !preservation;
    let mut violations = 0usize;

    if run_preservation {
        let mut reports = Vec::new();
        for (name, variant, n) in meta_sweep() {
            let program = match corpus::get_program(&name, variant, n) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: {e}");
                    return 2;
                }
            };
            let instance = match instantiate(&program) {
                Ok(i) => i,
                Err(e) => {
                    eprintln!("error: {e}");
                    return 2;
                }
            };
            let label = format!("{name}/{variant}/n={n}");
            reports.push(verify::preservation_suite(
                &label,
                &instance,
                check,
                machine_opts,
                fuel,
            ));
        }
        // Under the operator-pseudosplit mutant the rejected configuration
        // is accepted, and running it must then break preservation.
        if matches!(mutant, Some(Mutant::OperatorPseudosplit)) {
            let program =
                parse_program(corpus::counterexample_source()).expect("embedded source parses");
            let instance = program.instantiate().expect("counterexample instantiates");
            reports.push(verify::preservation_suite(
                "counterexample",
                &instance,
                check,
                machine_opts,
                fuel,
            ));
        }
        if format == Format::Records {
            for r in &reports {
                record(serde_json::to_value(r).expect("report serializes"));
            }
        } else {
            println!("preservation:");
            for r in &reports {
                let status = match &r.verdict {
                    SuiteVerdict::Clean => "clean".to_string(),
                    SuiteVerdict::InitialCheckFailed { message } => {
                        format!("initial check failed: {message}")
                    }
                    SuiteVerdict::ViolatedAt { step, message } => {
                        format!("VIOLATED at step {step}: {message}")
                    }
                    SuiteVerdict::MachineStuck { step, message } => {
                        format!("STUCK at step {step}: {message}")
                    }
                    SuiteVerdict::FuelExhausted { step } => {
                        format!("fuel exhausted at {step}")
                    }
                };
                println!("  {:<30} {:>6} steps  {status}", r.label, r.steps_checked);
            }
        }
        violations += reports.iter().filter(|r| !r.verdict.is_clean()).count();
    }

    if run_progress {
        // Pool: every configuration along the corpus traces, plus the
        // seeded generated ones.
        let mut total_checked = 0usize;
        let mut total_violations: Vec<String> = Vec::new();
        for (name, variant, n) in meta_sweep() {
            let program = match corpus::get_program(&name, variant, n) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: {e}");
                    return 2;
                }
            };
            let instance = match instantiate(&program) {
                Ok(i) => i,
                Err(e) => {
                    eprintln!("error: {e}");
                    return 2;
                }
            };
            let pool = verify::trace_configurations(&instance, machine_opts, fuel);
            let report = verify::progress_suite(
                &pool,
                &instance.signature,
                &instance.declared,
                check,
                machine_opts,
            );
            total_checked += report.checked;
            total_violations.extend(report.violations);
        }
        let (gen_sig, gen_pool) = verify::generate_pool(seed, count, 4);
        let declared = BTreeMap::<Var, weaklin::syntax::Type>::new();
        let gen_report = verify::progress_suite(&gen_pool, &gen_sig, &declared, check, machine_opts);
        total_checked += gen_report.checked;
        total_violations.extend(gen_report.violations.clone());
        if format == Format::Records {
            record(serde_json::json!({
                "command": "meta-progress",
                "seed": seed,
                "generated": gen_pool.len(),
                "checked": total_checked,
                "violations": total_violations,
            }));
        } else {
            println!(
                "progress: {} configurations checked ({} generated with seed {seed}), {} violations",
                total_checked,
                gen_pool.len(),
                total_violations.len()
            );
            for v in &total_violations {
                println!("  {v}");
            }
        }
        violations += total_violations.len();
    }

    if violations > 0 {
        1
    } else {
        0
    }
}
