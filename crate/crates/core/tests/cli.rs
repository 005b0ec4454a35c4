//! Exit-code and output contracts of the command-line interface.

use std::process::Command;

fn weaklin(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_weaklin"))
        .args(args)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).to_string(),
        String::from_utf8_lossy(&out.stderr).to_string(),
    )
}

fn counterexample_path() -> String {
    format!(
        "{}/corpus/counterexample.wl",
        env!("CARGO_MANIFEST_DIR")
    )
}

#[test]
fn check_corpus_passes() {
    for name in ["fib", "mapa", "map", "sort"] {
        let (code, stdout, _) = weaklin(&["check", "--program", name]);
        assert_eq!(code, 0, "{name}");
        assert!(stdout.contains("well-typed"));
    }
}

#[test]
fn check_rejection_names_the_split() {
    let (code, stdout, _) = weaklin(&["check", &counterexample_path()]);
    assert_eq!(code, 1);
    assert!(
        stdout.contains("context split"),
        "diagnostic must name the split refusal: {stdout}"
    );
}

#[test]
fn check_missing_file_is_a_usage_error() {
    let (code, _, stderr) = weaklin(&["check", "/no/such/file.wl"]);
    assert_eq!(code, 2);
    assert!(!stderr.is_empty());
}

#[test]
fn mutant_check_accepts_the_counterexample() {
    let (code, stdout, _) = weaklin(&[
        "check",
        &counterexample_path(),
        "--mutant",
        "operator-pseudosplit",
    ]);
    assert_eq!(code, 0, "{stdout}");
}

#[test]
fn run_reports_terminal_value() {
    let (code, stdout, _) = weaklin(&["run", "--program", "sort", "--n", "4"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("{0, 1, 2, 3}"), "{stdout}");
}

#[test]
fn run_with_zero_fuel_fails() {
    let (code, _, stderr) = weaklin(&["run", "--program", "fib", "--fuel", "0"]);
    assert_eq!(code, 1);
    assert!(stderr.contains("fuel exhausted"));
}

#[test]
fn profile_checks_expected_degrees() {
    let (code, stdout, _) = weaklin(&["profile", "--program", "fib"]);
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.contains("detected degree: 0"));
    assert!(stdout.contains("detected degree: 1"));
}

#[test]
fn meta_is_clean_and_mutants_fail() {
    let (code, stdout, _) = weaklin(&["meta", "--count", "50"]);
    assert_eq!(code, 0, "{stdout}");
    let (code, _, _) = weaklin(&[
        "meta",
        "--preservation",
        "--mutant",
        "store-qualifier-dealloc",
    ]);
    assert_eq!(code, 1);
    let (code, _, _) = weaklin(&[
        "meta",
        "--preservation",
        "--mutant",
        "operator-pseudosplit",
    ]);
    assert_eq!(code, 1);
}

#[test]
fn meta_records_are_reproducible() {
    let args = [
        "meta",
        "--progress",
        "--seed",
        "42",
        "--count",
        "100",
        "--format",
        "records",
    ];
    let (code_a, out_a, _) = weaklin(&args);
    let (code_b, out_b, _) = weaklin(&args);
    assert_eq!(code_a, 0);
    assert_eq!(code_b, 0);
    assert_eq!(out_a, out_b, "seeded runs must be identical");
    let first = out_a.lines().next().unwrap();
    let parsed: serde_json::Value = serde_json::from_str(first).unwrap();
    assert_eq!(parsed["seed"], 42);
}
