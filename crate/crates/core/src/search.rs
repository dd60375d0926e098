//! Budget-constrained topology search.
//!
//! For one family and one RMpS budget, [`feasible_space`] builds an integer
//! box of hyperparameters whose every member fits the budget, and
//! [`random_search`] trains uniformly drawn members of that box and keeps the
//! one with the best held-out Q-factor. [`sweep`] runs the whole
//! family-by-budget grid and adds the DBP and unequalized reference rows.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complexity::rmps_model;
use crate::error::{config, Error, Result};
use crate::neural::equalizer::scored_centers;
use crate::neural::{Architecture, Equalizer, Family, TrainConfig, TrainReport};
use crate::txrx::metrics::EvalResult;
use crate::txrx::{dbp_equalize, simulate, Dataset, QValue, DEFAULT_DBP_STEPS};

/// Column order of the sweep CSV; extra columns follow these.
pub const CSV_COLUMNS: [&str; 7] = [
    "family",
    "budget",
    "rmps",
    "params",
    "q_db",
    "q_gain_db",
    "latency_ref",
];
pub const CSV_VERSION: &str = "1.0";
/// Desk-scale default budgets.
pub const DEFAULT_BUDGETS: [u64; 4] = [1_000, 10_000, 100_000, 1_000_000];
/// Budgets above this are supported but slow to search.
pub const LONG_RUNNING_BUDGET: u64 = 10_000_000;

const KERNEL_CAP: usize = 15;
const WIDTH_CAP: usize = 4096;

/// Upper bound on RMpS for one search.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub max_rmps: u64,
    /// Decade label such as `"1e5"`.
    pub label: String,
}

impl Budget {
    pub fn new(max_rmps: u64) -> Result<Self> {
        if max_rmps == 0 {
            return Err(config("budget must be > 0"));
        }
        let e = (max_rmps as f64).log10();
        let label = if (e - e.round()).abs() < 1e-12 {
            format!("1e{}", e.round() as i64)
        } else {
            max_rmps.to_string()
        };
        Ok(Budget { max_rmps, label })
    }
}

impl FromStr for Budget {
    type Err = Error;

    /// Accepts integers and `1e5`-style literals.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let value: f64 = s.parse().map_err(|_| config(format!("bad budget {s:?}")))?;
        if !(value >= 1.0 && value.fract() == 0.0 && value <= u64::MAX as f64) {
            return Err(config(format!("budget {s:?} must be a positive integer")));
        }
        Budget::new(value as u64)
    }
}

/// Inclusive integer ranges, one per family hyperparameter. Kernel sizes
/// take only odd values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bounds {
    pub family: Family,
    pub memory: usize,
    pub names: Vec<String>,
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
}

impl Bounds {
    fn odd(&self, i: usize) -> bool {
        self.names[i] == "kernel"
    }

    pub fn lower_corner(&self) -> Result<Architecture> {
        Architecture::from_values(self.family, &self.lo)
    }

    pub fn upper_corner(&self) -> Result<Architecture> {
        Architecture::from_values(self.family, &self.hi)
    }

    /// Uniform draw from the box.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<Architecture> {
        let v: Vec<usize> = (0..self.lo.len())
            .map(|i| {
                if self.odd(i) {
                    let k = rng.random_range(self.lo[i] / 2..=self.hi[i] / 2);
                    2 * k + 1
                } else {
                    rng.random_range(self.lo[i]..=self.hi[i])
                }
            })
            .collect();
        Architecture::from_values(self.family, &v)
    }
}

fn rmps_of(family: Family, values: &[usize], memory: usize) -> Result<u64> {
    let arch = Architecture::from_values(family, values)?;
    Ok(rmps_model(&arch.model_spec(memory)?)?.total_rmps)
}

/// Builds the hyperparameter box for a budget.
///
/// The upper corner grows from the minimal configuration: first every
/// parameter in turn is doubled while the corner still fits, then each is
/// stepped by one (two for kernels) until nothing fits. RMpS is monotone in
/// every hyperparameter, so the whole box fits once its upper corner does.
/// The lower corner is a quarter of the upper one, which keeps draws in the
/// part of the space that actually uses the budget.
pub fn feasible_space(family: Family, budget: &Budget, memory: usize) -> Result<Bounds> {
    let names = family.hyperparameters();
    let kernel_cap = {
        let k = memory.clamp(1, KERNEL_CAP);
        if k.is_multiple_of(2) {
            k - 1
        } else {
            k
        }
    };
    let caps: Vec<usize> = names
        .iter()
        .map(|n| {
            if *n == "kernel" {
                kernel_cap
            } else {
                WIDTH_CAP
            }
        })
        .collect();
    let mut hi = vec![1; names.len()];
    let minimal = rmps_of(family, &hi, memory)?;
    if minimal > budget.max_rmps {
        return Err(Error::Infeasible(format!(
            "{family} needs at least {minimal} RMpS at memory {memory}, above the budget {}",
            budget.max_rmps
        )));
    }
    let fits = |v: &[usize]| -> Result<bool> { Ok(rmps_of(family, v, memory)? <= budget.max_rmps) };
    for doubling in [true, false] {
        loop {
            let mut grew = false;
            for i in 0..hi.len() {
                let step = match (names[i] == "kernel", doubling) {
                    (true, _) => 2,
                    (false, true) => hi[i],
                    (false, false) => 1,
                };
                let next = hi[i] + step;
                if next > caps[i] {
                    continue;
                }
                let mut cand = hi.clone();
                cand[i] = next;
                if fits(&cand)? {
                    hi = cand;
                    grew = true;
                }
            }
            if !grew {
                break;
            }
        }
    }
    let lo: Vec<usize> = hi
        .iter()
        .zip(names)
        .map(|(&h, n)| if *n == "kernel" { 1 } else { (h / 4).max(1) })
        .collect();
    let bounds = Bounds {
        family,
        memory,
        names: names.iter().map(|s| s.to_string()).collect(),
        lo,
        hi,
    };
    assert!(
        rmps_of(family, &bounds.hi, memory)? <= budget.max_rmps,
        "upper corner exceeds the budget"
    );
    Ok(bounds)
}

/// Outcome of one trained configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub architecture: Architecture,
    pub rmps: u64,
    pub params: u64,
    pub seed: u64,
    /// `None` when training failed; see `failure`.
    pub eval: Option<EvalResult>,
    pub failure: Option<String>,
    /// Loss curves of the X- and Y-target networks.
    pub reports: Option<[TrainReport; 2]>,
}

impl TrialRecord {
    fn key(&self) -> Option<(f64, u64, u64, usize)> {
        self.eval
            .map(|e| (e.q_db.rank(), self.rmps, self.params, self.index))
    }
}

/// `a` beats `b`: higher Q, then fewer RMpS, fewer parameters, lower index.
fn beats(a: &TrialRecord, b: &TrialRecord) -> bool {
    match (a.key(), b.key()) {
        (Some(_), None) => true,
        (None, _) => false,
        (Some(x), Some(y)) => {
            if x.0 != y.0 {
                x.0 > y.0
            } else {
                (x.1, x.2, x.3) < (y.1, y.2, y.3)
            }
        }
    }
}

/// Every trial of one search plus the winning model.
#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub family: Family,
    pub budget: Budget,
    pub bounds: Bounds,
    pub trials: Vec<TrialRecord>,
    /// Position of the winner in `trials`.
    pub best: usize,
    pub model: Equalizer,
    /// Unequalized Q on the scored test symbols.
    pub baseline: EvalResult,
}

impl SearchOutcome {
    pub fn best_trial(&self) -> &TrialRecord {
        &self.trials[self.best]
    }
}

/// Unequalized result on exactly the symbols an equalizer with `memory`
/// scores.
pub fn baseline_eval(dataset: &Dataset, memory: usize) -> Result<EvalResult> {
    if dataset.test.len() < memory {
        return Err(config(format!(
            "test frame has {} symbols, fewer than memory {memory}",
            dataset.test.len()
        )));
    }
    let count = dataset
        .test
        .evaluate_range(scored_centers(dataset.test.len(), memory))?;
    Ok(EvalResult::new(count, None))
}

/// Configurations and per-trial seeds. Trial `i` depends only on `seed` and
/// `i`, so a longer search always contains a shorter one as its prefix.
pub fn trial_plan(bounds: &Bounds, trials: usize, seed: u64) -> Result<Vec<(Architecture, u64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|i| Ok((bounds.sample(&mut rng)?, crate::derive_seed(seed, i as u64))))
        .collect()
}

/// Trains `trials` uniform draws from the feasible box on the training frame
/// and scores each on the test frame.
pub fn random_search(
    family: Family,
    budget: &Budget,
    dataset: &Dataset,
    trials: usize,
    seed: u64,
    train: &TrainConfig,
    memory: usize,
) -> Result<SearchOutcome> {
    if trials == 0 {
        return Err(config("at least one trial is required"));
    }
    let bounds = feasible_space(family, budget, memory)?;
    let baseline = baseline_eval(dataset, memory)?;
    let plan = trial_plan(&bounds, trials, seed)?;
    let results: Vec<(TrialRecord, Option<Equalizer>)> = plan
        .par_iter()
        .enumerate()
        .map(|(index, &(arch, trial_seed))| {
            run_trial(
                index,
                arch,
                trial_seed,
                dataset,
                train,
                memory,
                baseline.q_db,
            )
        })
        .collect::<Result<_>>()?;
    let mut best: Option<usize> = None;
    for (i, (rec, _)) in results.iter().enumerate() {
        assert!(rec.rmps <= budget.max_rmps, "trial {i} exceeds the budget");
        if best.is_none_or(|b| beats(rec, &results[b].0)) && rec.eval.is_some() {
            best = Some(i);
        }
    }
    let Some(best) = best else {
        return Err(Error::AllTrialsFailed {
            trials,
            diagnostics: results
                .iter()
                .map(|(r, _)| {
                    format!(
                        "trial {} {}: {}",
                        r.index,
                        r.architecture,
                        r.failure.clone().unwrap_or_default()
                    )
                })
                .collect(),
        });
    };
    let mut trials_out = Vec::with_capacity(results.len());
    let mut model = None;
    for (i, (rec, eq)) in results.into_iter().enumerate() {
        if i == best {
            model = eq;
        }
        trials_out.push(rec);
    }
    Ok(SearchOutcome {
        family,
        budget: budget.clone(),
        bounds,
        trials: trials_out,
        best,
        model: model.expect("winning trial keeps its model"),
        baseline,
    })
}

fn run_trial(
    index: usize,
    arch: Architecture,
    seed: u64,
    dataset: &Dataset,
    train: &TrainConfig,
    memory: usize,
    baseline: QValue,
) -> Result<(TrialRecord, Option<Equalizer>)> {
    let spec = arch.model_spec(memory)?;
    let report = rmps_model(&spec)?;
    let cfg = TrainConfig {
        seed,
        ..train.clone()
    };
    let mut rec = TrialRecord {
        index,
        architecture: arch,
        rmps: report.total_rmps,
        params: 2 * report.params,
        seed,
        eval: None,
        failure: None,
        reports: None,
    };
    let fitted = Equalizer::fit(arch, memory, &dataset.train, &cfg).and_then(|(eq, reps)| {
        let out = eq.equalize(&dataset.test)?;
        Ok((eq, reps, out.count()?))
    });
    match fitted {
        Ok((eq, reps, count)) => {
            rec.eval = Some(EvalResult::new(count, Some(baseline)));
            rec.reports = Some(reps);
            Ok((rec, Some(eq)))
        }
        Err(e @ (Error::Diverged { .. } | Error::Numerical(_))) => {
            rec.failure = Some(e.to_string());
            Ok((rec, None))
        }
        Err(e) => Err(e),
    }
}

/// One line of the sweep table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Family name, or `dbp` / `unequalized` for the reference rows.
    pub family: String,
    pub budget: Option<u64>,
    pub rmps: Option<u64>,
    pub params: Option<u64>,
    pub q_db: QValue,
    pub q_gain_db: QValue,
    /// Key of the matching latency table row, `family@decade`.
    pub latency_ref: Option<String>,
    pub architecture: Option<String>,
    pub ber: Option<f64>,
    pub bit_errors: Option<u64>,
    pub bits: Option<u64>,
    /// `ok`, `infeasible`, `failed` or `baseline`.
    pub status: String,
    pub trials: Option<Vec<TrialRecord>>,
}

impl SweepRow {
    fn reference(family: &str, eval: &EvalResult) -> Self {
        SweepRow {
            family: family.into(),
            budget: None,
            rmps: None,
            params: None,
            q_db: eval.q_db,
            q_gain_db: eval.q_gain_db,
            latency_ref: None,
            architecture: None,
            ber: Some(eval.ber),
            bit_errors: Some(eval.bit_errors),
            bits: Some(eval.bits),
            status: "baseline".into(),
            trials: None,
        }
    }

    fn empty(family: Family, budget: &Budget, status: &str) -> Self {
        SweepRow {
            family: family.name().into(),
            budget: Some(budget.max_rmps),
            rmps: None,
            params: None,
            q_db: QValue::Undefined,
            q_gain_db: QValue::Undefined,
            latency_ref: None,
            architecture: None,
            ber: None,
            bit_errors: None,
            bits: None,
            status: status.into(),
            trials: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub families: Vec<Family>,
    pub budgets: Vec<u64>,
    pub trials: usize,
    pub seed: u64,
    pub train: TrainConfig,
    pub memory: usize,
    pub dbp_steps_per_span: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub rows: Vec<SweepRow>,
}

/// Searches every `(family, budget)` cell, then appends the DBP row and the
/// unequalized row. Infeasible cells and cells whose trials all diverged
/// stay in the table with their status.
pub fn sweep(dataset: &Dataset, cfg: &SweepConfig) -> Result<SweepResult> {
    let baseline = baseline_eval(dataset, cfg.memory)?;
    let mut rows = Vec::new();
    for (fi, &family) in cfg.families.iter().enumerate() {
        for &b in &cfg.budgets {
            let budget = Budget::new(b)?;
            let seed = crate::derive_seed(crate::derive_seed(cfg.seed, fi as u64), b);
            match random_search(
                family, &budget, dataset, cfg.trials, seed, &cfg.train, cfg.memory,
            ) {
                Ok(out) => {
                    let t = out.best_trial();
                    let e = t.eval.expect("best trial has an evaluation");
                    rows.push(SweepRow {
                        family: family.name().into(),
                        budget: Some(b),
                        rmps: Some(t.rmps),
                        params: Some(t.params),
                        q_db: e.q_db,
                        q_gain_db: e.q_gain_db,
                        latency_ref: Some(format!("{}@{}", family, budget.label)),
                        architecture: Some(t.architecture.to_string()),
                        ber: Some(e.ber),
                        bit_errors: Some(e.bit_errors),
                        bits: Some(e.bits),
                        status: "ok".into(),
                        trials: Some(out.trials.clone()),
                    });
                }
                Err(Error::Infeasible(_)) => {
                    rows.push(SweepRow::empty(family, &budget, "infeasible"))
                }
                Err(Error::AllTrialsFailed { .. }) => {
                    rows.push(SweepRow::empty(family, &budget, "failed"))
                }
                Err(e) => return Err(e),
            }
        }
    }
    let dbp = dbp_reference(dataset, cfg.memory, cfg.dbp_steps_per_span, baseline.q_db)?;
    rows.push(SweepRow::reference("dbp", &dbp));
    rows.push(SweepRow::reference("unequalized", &baseline));
    Ok(SweepResult {
        config: cfg.clone(),
        rows,
    })
}

/// Re-simulates the test frame from the dataset header and equalizes it
/// with digital back-propagation, scored on the same symbols as the models.
pub fn dbp_reference(
    dataset: &Dataset,
    memory: usize,
    steps_per_span: usize,
    baseline: QValue,
) -> Result<EvalResult> {
    let h = &dataset.header;
    let frame = simulate(&h.link, h.test.symbols, h.test.seed)?;
    let rx = dbp_equalize(&frame, &h.link, steps_per_span)?;
    let count = rx.evaluate_range(scored_centers(rx.len(), memory))?;
    Ok(EvalResult::new(count, Some(baseline)))
}

impl SweepConfig {
    pub fn new(
        families: Vec<Family>,
        budgets: Vec<u64>,
        trials: usize,
        seed: u64,
        memory: usize,
    ) -> Self {
        SweepConfig {
            families,
            budgets,
            trials,
            seed,
            train: TrainConfig::default(),
            memory,
            dbp_steps_per_span: DEFAULT_DBP_STEPS,
        }
    }
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

fn q_cell(q: QValue) -> String {
    match q {
        QValue::Finite(v) => format!("{v}"),
        QValue::Infinite => "inf".into(),
        QValue::Undefined => String::new(),
    }
}

impl SweepResult {
    /// Plot table. The first line is a `#` comment with the schema version
    /// and, when given, the run manifest hash.
    pub fn to_csv(&self, manifest_hash: Option<&str>) -> String {
        let mut out = format!("# eqlab-sweep {CSV_VERSION}");
        if let Some(h) = manifest_hash {
            let _ = write!(out, " manifest={h}");
        }
        out.push('\n');
        out.push_str(&CSV_COLUMNS.join(","));
        out.push_str(",architecture,ber,bit_errors,bits,status\n");
        for r in &self.rows {
            let cells = [
                r.family.clone(),
                opt(&r.budget),
                opt(&r.rmps),
                opt(&r.params),
                q_cell(r.q_db),
                q_cell(r.q_gain_db),
                opt(&r.latency_ref),
                r.architecture
                    .as_ref()
                    .map(|a| format!("\"{a}\""))
                    .unwrap_or_default(),
                opt(&r.ber),
                opt(&r.bit_errors),
                opt(&r.bits),
                r.status.clone(),
            ];
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}
