//! Memory-balance accounting and growth-rate experiments.
//!
//! The balance of a run is the weighted count of locations created minus
//! locations deleted. Initial store cells are recorded as step-0
//! allocations, so the total `final_balance` always equals the weighted
//! size of the live store at termination. Growth across a parameter sweep
//! is classified on the *run* balance (the total net of the initial
//! allocation), which measures what the program's own execution created
//! and freed. Balances are exact integers from a deterministic machine, so
//! growth degrees come from exact divided differences rather than a fuzzy
//! fit.

use crate::corpus::{self, Variant};
use crate::machine::{
    run_with, Configuration, MachineOptions, Prevalue, RunOutcome, Store, Value,
};
use crate::syntax::{Constant, Var};

/// Weighted size of one memory location: integers, booleans, tuple cells,
/// list cells and closures count 1; an array counts its length (an empty
/// array still occupies its one location).
pub fn size_of(v: &Value) -> u64 {
    match &v.prevalue {
        Prevalue::Const(Constant::Array(xs)) => (xs.len() as u64).max(1),
        _ => 1,
    }
}

fn live_weight(store: &Store) -> i64 {
    store.cells().iter().map(|(_, v)| size_of(v) as i64).sum()
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct BalanceEvent {
    pub step: u64,
    /// Positive for an allocation, negative for a deallocation.
    pub delta: i64,
}

/// Allocation/deallocation log of one run.
#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct BalanceLedger {
    pub events: Vec<BalanceEvent>,
    /// Weighted size of the initial store (the step-0 allocations).
    pub initial: i64,
    /// Σ(+size) − Σ(−size), initial allocations included. Equals the
    /// weighted size of the live store at termination.
    pub final_balance: i64,
    /// Maximum of the running total balance; never below `final_balance`.
    pub peak_balance: i64,
    /// `final_balance − initial`: the balance of the run itself.
    pub run_balance: i64,
    /// Maximum of the running balance net of the initial allocation.
    pub peak_run_balance: i64,
    pub steps: u64,
}

impl BalanceLedger {
    fn push(&mut self, step: u64, delta: i64) {
        self.events.push(BalanceEvent { step, delta });
        self.final_balance += delta;
        self.peak_balance = self.peak_balance.max(self.final_balance);
    }

    fn finish(&mut self, steps: u64) {
        self.steps = steps;
        self.run_balance = self.final_balance - self.initial;
        self.peak_run_balance = self.peak_balance - self.initial;
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("run stuck after {steps} steps: {message}")]
    Stuck { steps: u64, message: String },
    #[error("fuel exhausted after {steps} steps")]
    FuelExhausted { steps: u64 },
    #[error("{0}")]
    Corpus(#[from] corpus::CorpusError),
    #[error("growth points: {0}")]
    BadPoints(String),
    #[error("run at n = {n} failed: {source}")]
    AtPoint {
        n: i64,
        #[source]
        source: Box<ProfileError>,
    },
}

/// Run a configuration to termination, recording every allocation and
/// deallocation. Initial store cells count as allocations at step 0.
pub fn instrumented_run(
    config: Configuration,
    sig: &crate::syntax::Signature,
    opts: MachineOptions,
    fuel: u64,
) -> Result<(BalanceLedger, Var, Store), ProfileError> {
    let mut ledger = BalanceLedger::default();
    for (_, v) in config.store.cells() {
        ledger.push(0, size_of(v) as i64);
    }
    ledger.initial = ledger.final_balance;
    // Within a step the machine deallocates before it allocates.
    let outcome = run_with(config, sig, opts, fuel, false, |step, events, _| {
        for (_, size) in &events.deallocs {
            ledger.push(step, -(*size as i64));
        }
        for (_, size) in &events.allocs {
            ledger.push(step, *size as i64);
        }
    });
    match outcome {
        RunOutcome::Terminal {
            var, store, steps, ..
        } => {
            ledger.finish(steps);
            debug_assert_eq!(ledger.final_balance, live_weight(&store));
            Ok((ledger, var, store))
        }
        RunOutcome::Stuck { error, steps, .. } => Err(ProfileError::Stuck {
            steps,
            message: error.to_string(),
        }),
        RunOutcome::FuelExhausted { steps, .. } => Err(ProfileError::FuelExhausted { steps }),
    }
}

// ---------------------------------------------------------------------------
// Exact polynomial degree detection.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Ratio {
    num: i128,
    den: i128,
}

impl Ratio {
    fn int(n: i128) -> Self {
        Ratio { num: n, den: 1 }
    }

    fn normalize(self) -> Self {
        fn gcd(a: i128, b: i128) -> i128 {
            if b == 0 {
                a.abs()
            } else {
                gcd(b, a % b)
            }
        }
        let g = gcd(self.num, self.den).max(1);
        let sign = if self.den < 0 { -1 } else { 1 };
        Ratio {
            num: sign * self.num / g,
            den: sign * self.den / g,
        }
    }

    fn sub(self, other: Self) -> Self {
        Ratio {
            num: self.num * other.den - other.num * self.den,
            den: self.den * other.den,
        }
        .normalize()
    }

    fn div_int(self, d: i128) -> Self {
        Ratio {
            num: self.num,
            den: self.den * d,
        }
        .normalize()
    }

    fn is_zero(self) -> bool {
        self.num == 0
    }
}

/// Detect the degree of the exact polynomial through the sample points by
/// Newton divided differences; works for arbitrary strictly increasing
/// abscissas. The degree is the order of the highest nonzero coefficient.
pub fn detect_degree(points: &[(i64, i64)]) -> Result<usize, ProfileError> {
    if points.len() < 2 {
        return Err(ProfileError::BadPoints(
            "need at least two points".to_string(),
        ));
    }
    for w in points.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(ProfileError::BadPoints(
                "abscissas must be strictly increasing".to_string(),
            ));
        }
    }
    let xs: Vec<i128> = points.iter().map(|(n, _)| *n as i128).collect();
    let mut column: Vec<Ratio> = points.iter().map(|(_, v)| Ratio::int(*v as i128)).collect();
    let mut degree = 0usize;
    for order in 1..points.len() {
        let mut next = Vec::with_capacity(column.len() - 1);
        for i in 0..column.len() - 1 {
            let dx = xs[i + order] - xs[i];
            next.push(column[i + 1].sub(column[i]).div_int(dx));
        }
        if next.iter().any(|r| !r.is_zero()) {
            degree = order;
        }
        column = next;
    }
    Ok(degree)
}

// ---------------------------------------------------------------------------
// Growth experiments over the corpus.

#[derive(Clone, Debug, serde::Serialize)]
pub struct GrowthRow {
    pub n: i64,
    pub final_balance: i64,
    pub run_balance: i64,
    pub peak_run_balance: i64,
    pub steps: u64,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct GrowthReport {
    pub program: String,
    pub variant: Variant,
    pub rows: Vec<GrowthRow>,
    /// Degree of `run_balance` as a polynomial in n.
    pub detected_degree: usize,
}

impl GrowthReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<8} {:<12} {:>6} {:>10} {:>10} {:>10} {:>8}\n",
            "program", "variant", "n", "final", "run", "peak-run", "steps"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<8} {:<12} {:>6} {:>10} {:>10} {:>10} {:>8}\n",
                self.program,
                self.variant,
                r.n,
                r.final_balance,
                r.run_balance,
                r.peak_run_balance,
                r.steps
            ));
        }
        out.push_str(&format!("detected degree: {}\n", self.detected_degree));
        out
    }
}

/// Instantiate the named corpus program at each `n`, run it, and classify
/// the growth of the run balance by exact divided differences.
pub fn growth_experiment(
    program: &str,
    variant: Variant,
    ns: &[i64],
    fuel: u64,
) -> Result<GrowthReport, ProfileError> {
    if ns.len() < 4 {
        return Err(ProfileError::BadPoints(
            "need at least four points".to_string(),
        ));
    }
    if ns.iter().any(|&n| n < 2) {
        return Err(ProfileError::BadPoints("each n must be >= 2".to_string()));
    }
    for w in ns.windows(2) {
        if w[1] <= w[0] {
            return Err(ProfileError::BadPoints(
                "ns must be strictly increasing".to_string(),
            ));
        }
    }
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let program_file = corpus::get_program(program, variant, n)?;
        let mut instance = program_file
            .instantiate()
            .map_err(|e| ProfileError::AtPoint {
                n,
                source: Box::new(ProfileError::BadPoints(e.to_string())),
            })?;
        let verdict =
            crate::verify::check_instance(&mut instance, crate::typing::CheckOptions::default());
        if !verdict.is_well_typed() {
            return Err(ProfileError::AtPoint {
                n,
                source: Box::new(ProfileError::BadPoints(format!(
                    "program does not check: {verdict:?}"
                ))),
            });
        }
        let (ledger, _, _) = instrumented_run(
            instance.configuration,
            &instance.signature,
            MachineOptions::default(),
            fuel,
        )
        .map_err(|e| ProfileError::AtPoint {
            n,
            source: Box::new(e),
        })?;
        rows.push(GrowthRow {
            n,
            final_balance: ledger.final_balance,
            run_balance: ledger.run_balance,
            peak_run_balance: ledger.peak_run_balance,
            steps: ledger.steps,
        });
    }
    let points: Vec<(i64, i64)> = rows.iter().map(|r| (r.n, r.run_balance)).collect();
    let detected_degree = detect_degree(&points)?;
    Ok(GrowthReport {
        program: program.to_string(),
        variant,
        rows,
        detected_degree,
    })
}
