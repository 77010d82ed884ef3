//! Simulation and reporting commands behind the `dynprice` binary.

pub mod spec;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use dynprice_core::evaluation::{
    compare_policies, k_table, write_k_table_csv, DeltaVariant, ItemWindows, KTableReport, PolicyComparison,
    DEFAULT_BASELINE_DAYS,
};
use dynprice_core::simulator::{
    fmt_real, read_records_jsonl, run_experiment, write_records_jsonl, write_revenue_csv, PolicyKind, RecordLine,
};
use serde::{Deserialize, Serialize};

pub use spec::{parse_spec, render_spec, ExperimentSpec, SpecError};

pub const FIGURE_CSV_HEADER: &str = "policy,day,mean_revenue";
pub const DEFAULT_TREATMENT_START: u32 = DEFAULT_BASELINE_DAYS + 1;

#[derive(Debug)]
pub enum CliError {
    /// Bad spec, flags or arguments; exit code 2.
    Config(String),
    /// Failure while running or writing; exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<SpecError> for CliError {
    fn from(e: SpecError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn runtime(context: impl fmt::Display) -> impl FnOnce(dynprice_core::Error) -> CliError {
    move |e| CliError::Runtime(format!("{context}: {e}"))
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

pub fn load_spec(path: &Path) -> Result<ExperimentSpec, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse_spec(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub seed: u64,
    pub trials: usize,
    pub basket_size: usize,
    pub horizon: u32,
    pub comparison: PolicyComparison,
}

/// Runs every trial of `spec` and writes `revenue.csv`, `records.jsonl`,
/// `summary.json` and `figure.csv` into `out`.
pub fn cmd_simulate(spec: &ExperimentSpec, out: &Path, workers: usize) -> Result<SimulationSummary, CliError> {
    spec.validate()?;
    if workers == 0 {
        return Err(CliError::Config("workers must be ≥ 1".into()));
    }
    fs::create_dir_all(out).map_err(io(out))?;
    let market = spec.market_config();
    let results = run_experiment(&market, spec.trials, &spec.policy_specs(), workers).map_err(runtime("simulation"))?;
    let (lo, hi) = spec.compare_window();
    let comparison = compare_policies(&results, lo..=hi).map_err(runtime("comparison"))?;

    let path = out.join("revenue.csv");
    let mut w = BufWriter::new(File::create(&path).map_err(io(&path))?);
    write_revenue_csv(&results, &mut w).map_err(runtime(path.display()))?;
    w.flush().map_err(io(&path))?;

    let path = out.join("records.jsonl");
    let mut w = BufWriter::new(File::create(&path).map_err(io(&path))?);
    write_records_jsonl(&results, &mut w).map_err(runtime(path.display()))?;
    w.flush().map_err(io(&path))?;

    let path = out.join("figure.csv");
    let mut w = BufWriter::new(File::create(&path).map_err(io(&path))?);
    writeln!(w, "{FIGURE_CSV_HEADER}").map_err(io(&path))?;
    for p in &comparison.policies {
        for (d, m) in p.per_day_mean.iter().enumerate() {
            writeln!(w, "{},{},{}", p.policy, d + 1, fmt_real(*m)).map_err(io(&path))?;
        }
    }
    w.flush().map_err(io(&path))?;

    let summary = SimulationSummary {
        seed: spec.seed,
        trials: spec.trials,
        basket_size: spec.market.basket_size,
        horizon: spec.market.horizon,
        comparison,
    };
    let path = out.join("summary.json");
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(&path, json + "\n").map_err(io(&path))?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub ks: Vec<usize>,
    pub baseline_days: u32,
    /// First day of the treatment period; the baseline is the
    /// `baseline_days` days immediately before it.
    pub treatment_start: u32,
    pub policy: PolicyKind,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            ks: dynprice_core::evaluation::DEFAULT_KS.to_vec(),
            baseline_days: DEFAULT_BASELINE_DAYS,
            treatment_start: DEFAULT_TREATMENT_START,
            policy: PolicyKind::Ts,
        }
    }
}

/// Builds per-item windows from the records of one policy.
///
/// Items are identified as `trial/item`. An item counts as treated on a day
/// when its `ts_eligible` flag is set; records without flags treat every item.
pub fn item_windows(records: &[RecordLine], opts: &ReportOptions) -> Result<Vec<ItemWindows>, CliError> {
    if opts.baseline_days == 0 {
        return Err(CliError::Config("baseline_days must be ≥ 1".into()));
    }
    if opts.treatment_start <= opts.baseline_days {
        return Err(CliError::Config(format!(
            "treatment start {} leaves no room for a {}-day baseline",
            opts.treatment_start, opts.baseline_days
        )));
    }
    let mut by_trial: BTreeMap<usize, BTreeMap<u32, &RecordLine>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.policy == opts.policy) {
        if by_trial.entry(r.trial).or_default().insert(r.day, r).is_some() {
            return Err(CliError::Runtime(format!(
                "trial {} has two records for day {}",
                r.trial, r.day
            )));
        }
    }
    if by_trial.is_empty() {
        return Err(CliError::Runtime(format!("no records for policy `{}`", opts.policy)));
    }
    let base_lo = opts.treatment_start - opts.baseline_days;
    let mut items = Vec::new();
    for (trial, days) in &by_trial {
        let last = *days.keys().next_back().expect("nonempty");
        if last < opts.treatment_start {
            return Err(CliError::Runtime(format!(
                "trial {trial} ends on day {last}, before the treatment start {}",
                opts.treatment_start
            )));
        }
        let window = |lo: u32, hi: u32| -> Result<Vec<&RecordLine>, CliError> {
            (lo..=hi)
                .map(|d| {
                    days.get(&d)
                        .copied()
                        .ok_or_else(|| CliError::Runtime(format!("trial {trial} is missing day {d}")))
                })
                .collect()
        };
        let baseline = window(base_lo, opts.treatment_start - 1)?;
        let treatment = window(opts.treatment_start, last)?;
        let n = baseline[0].prices.len();
        if let Some(r) = baseline.iter().chain(&treatment).find(|r| r.prices.len() != n) {
            return Err(CliError::Runtime(format!(
                "trial {trial} day {}: basket size {} differs from {n}",
                r.day,
                r.prices.len()
            )));
        }
        for i in 0..n {
            let rev = |r: &&RecordLine| r.prices[i] * r.demands[i];
            items.push(ItemWindows {
                item_id: format!("{trial}/{i}"),
                baseline: baseline.iter().map(rev).collect(),
                treatment: treatment.iter().map(rev).collect(),
                on_treatment: treatment
                    .iter()
                    .map(|r| r.ts_eligible.as_ref().is_none_or(|e| e[i]))
                    .collect(),
            });
        }
    }
    Ok(items)
}

pub fn build_report(records: &[RecordLine], opts: &ReportOptions) -> Result<KTableReport, CliError> {
    if opts.ks.contains(&0) {
        return Err(CliError::Config("ks must be positive".into()));
    }
    let items = item_windows(records, opts)?;
    let table = |v| k_table(&items, &opts.ks, v).map_err(runtime("report"));
    Ok(KTableReport {
        baseline_days: opts.baseline_days,
        treatment_start: opts.treatment_start,
        treated_days: table(DeltaVariant::TreatedDays)?,
        whole_period: table(DeltaVariant::WholePeriod)?,
    })
}

/// Reads `records` and writes `report.json` and `report.csv` into `out`.
pub fn cmd_report(records: &Path, out: &Path, opts: &ReportOptions) -> Result<KTableReport, CliError> {
    let file = File::open(records).map_err(io(records))?;
    let lines = read_records_jsonl(BufReader::new(file)).map_err(runtime(records.display()))?;
    let report = build_report(&lines, opts)?;
    fs::create_dir_all(out).map_err(io(out))?;
    let path = out.join("report.json");
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(&path, json + "\n").map_err(io(&path))?;
    let path = out.join("report.csv");
    let mut w = BufWriter::new(File::create(&path).map_err(io(&path))?);
    write_k_table_csv(&report, &mut w).map_err(runtime(path.display()))?;
    w.flush().map_err(io(&path))?;
    Ok(report)
}

/// Output directory for a report when none is given: next to the records.
pub fn default_report_dir(records: &Path) -> PathBuf {
    match records.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn parse_ks(text: &str) -> Result<Vec<usize>, String> {
    let ks = text
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|e| format!("`{s}`: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if ks.contains(&0) {
        return Err("k values must be positive".into());
    }
    Ok(ks)
}
