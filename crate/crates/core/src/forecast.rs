//! Reference exponential-decay demand forecaster.
//!
//! `f_t = base + sum_{tau < t} decay^(t - tau) * d_tau`, so the most recent
//! day carries weight `decay`. A running sum `S_t = decay * (S_{t-1} + d_{t-1})`
//! keeps next-day forecasts O(1).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Anything that can produce a next-day demand forecast and absorb realized demand.
pub trait Forecaster {
    fn forecast(&self, item: usize, day: u32) -> Result<f64>;
    fn record_demand(&mut self, item: usize, day: u32, demand: f64) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ItemHistory {
    first_day: Option<u32>,
    demands: Vec<f64>,
    /// Weighted sum for day `first_day + demands.len()`.
    running: f64,
}

impl ItemHistory {
    fn new() -> Self {
        Self {
            first_day: None,
            demands: Vec::new(),
            running: 0.0,
        }
    }

    fn next_day(&self) -> Option<u32> {
        self.first_day.map(|d| d + self.demands.len() as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    decay: f64,
    base: f64,
    items: Vec<ItemHistory>,
}

impl ForecastModel {
    pub fn new(items: usize, decay: f64, base: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::invalid("decay", format!("must lie in (0, 1), got {decay}")));
        }
        if !(base >= 0.0 && base.is_finite()) {
            return Err(Error::invalid("base", format!("must be >= 0, got {base}")));
        }
        Ok(Self {
            decay,
            base,
            items: vec![ItemHistory::new(); items],
        })
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn history(&self, item: usize) -> Result<&ItemHistory> {
        self.items.get(item).ok_or(Error::UnknownItem(item))
    }

    /// Recomputes the weighted sum for `day` from the stored history.
    pub fn forecast_from_scratch(&self, item: usize, day: u32) -> Result<f64> {
        let hist = self.history(item)?;
        let Some(first) = hist.first_day else {
            return Ok(self.base);
        };
        if day > first + hist.demands.len() as u32 {
            return Err(Error::MissingHistory { item, day: day - 1 });
        }
        let upto = day.saturating_sub(first) as usize;
        let sum: f64 = hist.demands[..upto]
            .iter()
            .enumerate()
            .map(|(k, d)| self.decay.powi((upto - k) as i32) * d)
            .sum();
        Ok(self.base + sum)
    }
}

impl Forecaster for ForecastModel {
    fn forecast(&self, item: usize, day: u32) -> Result<f64> {
        if day < 1 {
            return Err(Error::invalid("day", "forecast day index must be >= 1"));
        }
        let hist = self.history(item)?;
        match hist.next_day() {
            Some(next) if day == next => Ok(self.base + hist.running),
            _ => self.forecast_from_scratch(item, day),
        }
    }

    fn record_demand(&mut self, item: usize, day: u32, demand: f64) -> Result<()> {
        if !(demand >= 0.0 && demand.is_finite()) {
            return Err(Error::InvalidDemand { item, demand });
        }
        let decay = self.decay;
        let hist = self.items.get_mut(item).ok_or(Error::UnknownItem(item))?;
        match hist.next_day() {
            None => hist.first_day = Some(day),
            Some(next) if day < next => return Err(Error::DuplicateDay { item, day }),
            Some(next) if day > next => return Err(Error::MissingHistory { item, day: next }),
            Some(_) => {}
        }
        hist.demands.push(demand);
        hist.running = decay * (hist.running + demand);
        Ok(())
    }
}
