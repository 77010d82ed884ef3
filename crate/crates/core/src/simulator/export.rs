//! Trial output formats.
//!
//! `revenue.csv`: header `trial,policy,day,basket_revenue`, one row per
//! (trial, policy, day). Reals are written with 17 significant digits.
//!
//! `records.jsonl`: one JSON object per line with fields `trial`, `day`,
//! `policy`, `prices`, `forecasts`, `demands`, `basket_revenue` and the
//! optional `sampled_gamma` and `ts_eligible`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{ObservationRecord, PolicyKind, TrialResult};
use crate::error::{Error, Result};

pub const REVENUE_CSV_HEADER: &str = "trial,policy,day,basket_revenue";

/// 17 significant digits; parses back to the identical double.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::invalid("io", e.to_string())
}

pub fn write_revenue_csv<W: Write>(results: &[TrialResult], mut out: W) -> Result<()> {
    writeln!(out, "{REVENUE_CSV_HEADER}").map_err(io_err)?;
    for r in results {
        for (k, rev) in r.revenue_series.iter().enumerate() {
            writeln!(out, "{},{},{},{}", r.trial_id, r.policy, k + 1, fmt_real(*rev)).map_err(io_err)?;
        }
    }
    Ok(())
}

/// One line of `records.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordLine {
    pub trial: usize,
    pub day: u32,
    pub policy: PolicyKind,
    pub prices: Vec<f64>,
    pub forecasts: Vec<f64>,
    pub demands: Vec<f64>,
    pub basket_revenue: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampled_gamma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ts_eligible: Option<Vec<bool>>,
}

impl RecordLine {
    pub fn new(trial: usize, r: &ObservationRecord) -> Self {
        Self {
            trial,
            day: r.day,
            policy: r.policy,
            prices: r.prices.clone(),
            forecasts: r.forecasts.clone(),
            demands: r.demands.clone(),
            basket_revenue: r.basket_revenue,
            sampled_gamma: r.sampled_gamma.clone(),
            ts_eligible: r.ts_eligible.clone(),
        }
    }

    pub fn into_record(self) -> (usize, ObservationRecord) {
        (
            self.trial,
            ObservationRecord {
                day: self.day,
                prices: self.prices,
                forecasts: self.forecasts,
                demands: self.demands,
                basket_revenue: self.basket_revenue,
                policy: self.policy,
                sampled_gamma: self.sampled_gamma,
                ts_eligible: self.ts_eligible,
            },
        )
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let n = self.prices.len();
        if self.forecasts.len() != n || self.demands.len() != n {
            return Err("prices, forecasts and demands must have equal length".into());
        }
        if let Some(g) = &self.sampled_gamma {
            if g.len() != n {
                return Err("sampled_gamma length differs from prices".into());
            }
        }
        if let Some(e) = &self.ts_eligible {
            if e.len() != n {
                return Err("ts_eligible length differs from prices".into());
            }
        }
        if self.demands.iter().any(|d| !(*d >= 0.0)) {
            return Err("demands must be non-negative".into());
        }
        Ok(())
    }
}

pub fn write_records_jsonl<W: Write>(results: &[TrialResult], mut out: W) -> Result<()> {
    for r in results {
        for rec in &r.records {
            let line = serde_json::to_string(&RecordLine::new(r.trial_id, rec)).map_err(io_err)?;
            writeln!(out, "{line}").map_err(io_err)?;
        }
    }
    Ok(())
}

pub fn read_records_jsonl<R: BufRead>(input: R) -> Result<Vec<RecordLine>> {
    let mut lines = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine =
            serde_json::from_str(&line).map_err(|e| Error::invalid("records", format!("line {}: {e}", k + 1)))?;
        rec.validate()
            .map_err(|e| Error::invalid("records", format!("line {}: {e}", k + 1)))?;
        lines.push(rec);
    }
    Ok(lines)
}
