//! Synthetic market and the day loop that runs a pricing policy against it.
//!
//! Each day: forecast demand, ask the policy for prices, realize demand from
//! the hidden constant-elasticity model, record, and feed the outcome back to
//! the forecaster and the policy. The true elasticities never leave this
//! module; policies only see forecasts, prices and realized demand.

mod export;
mod policy;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::{exponential_demand, ItemId, ItemState};
use crate::error::{Error, Result};
use crate::forecast::{ForecastModel, Forecaster};
use crate::solver::{ConstraintSet, LinearConstraint};

pub use export::{
    fmt_real, read_records_jsonl, write_records_jsonl, write_revenue_csv, RecordLine, REVENUE_CSV_HEADER,
};
pub use policy::{
    partition_basket, Estimator, Partition, PartitionItem, PassiveConfig, PassivePolicy, PolicyDecision, PolicySpec,
    PricingPolicy, TsPolicy, TsPolicyConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Passive,
    Ts,
}

impl PolicyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::Passive => "passive",
            PolicyKind::Ts => "ts",
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "passive" => Ok(PolicyKind::Passive),
            "ts" => Ok(PolicyKind::Ts),
            other => Err(format!("unknown policy `{other}` (expected `passive` or `ts`)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketConfig {
    pub basket_size: usize,
    pub horizon: u32,
    /// True elasticities are drawn uniformly from `[lo, hi]` per item.
    pub gamma_range: (f64, f64),
    pub initial_price: f64,
    pub initial_forecast_range: (f64, f64),
    pub price_box: (f64, f64),
    pub decay: f64,
    pub base: f64,
    /// Standard deviation of the additive demand noise.
    pub noise_std: f64,
    /// Standard deviation of the additive forecast noise.
    pub forecast_noise_std: f64,
    pub max_rel_change: Option<f64>,
    pub basket_linear: Option<LinearConstraint>,
    pub seed: u64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            basket_size: 100,
            horizon: 100,
            gamma_range: (-3.0, -1.0),
            initial_price: 12.0,
            initial_forecast_range: (0.5, 5.0),
            price_box: (10.0, 20.0),
            decay: 0.5,
            base: 0.5,
            noise_std: 1.0,
            forecast_noise_std: 1.0,
            max_rel_change: None,
            basket_linear: None,
            seed: 0,
        }
    }
}

impl MarketConfig {
    pub fn validate(&self) -> Result<()> {
        if self.basket_size == 0 {
            return Err(Error::invalid("basket_size", "must be >= 1"));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon", "must be >= 1"));
        }
        let (glo, ghi) = self.gamma_range;
        if !(glo <= ghi && ghi < 0.0 && glo.is_finite()) {
            return Err(Error::invalid(
                "gamma_range",
                format!("need lower <= upper < 0, got [{glo}, {ghi}]"),
            ));
        }
        let (plo, phi) = self.price_box;
        if !(plo > 0.0 && plo <= phi && phi.is_finite()) {
            return Err(Error::invalid(
                "price_box",
                format!("need 0 < lower <= upper, got [{plo}, {phi}]"),
            ));
        }
        if !(self.initial_price >= plo && self.initial_price <= phi) {
            return Err(Error::invalid(
                "initial_price",
                format!("{} lies outside the price box [{plo}, {phi}]", self.initial_price),
            ));
        }
        let (flo, fhi) = self.initial_forecast_range;
        if !(flo >= 0.0 && flo <= fhi && fhi.is_finite()) {
            return Err(Error::invalid(
                "initial_forecast_range",
                format!("need 0 <= lower <= upper, got [{flo}, {fhi}]"),
            ));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::invalid(
                "decay",
                format!("must lie in (0, 1), got {}", self.decay),
            ));
        }
        if !(self.base >= 0.0 && self.base.is_finite()) {
            return Err(Error::invalid("base", format!("must be >= 0, got {}", self.base)));
        }
        for (name, v) in [
            ("noise_std", self.noise_std),
            ("forecast_noise_std", self.forecast_noise_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be >= 0, got {v}")));
            }
        }
        if let Some(lc) = &self.basket_linear {
            if lc.weights.len() != self.basket_size {
                return Err(Error::LengthMismatch {
                    expected: self.basket_size,
                    actual: lc.weights.len(),
                });
            }
        }
        Ok(())
    }

    pub fn constraints(&self) -> ConstraintSet {
        ConstraintSet {
            lower: vec![self.price_box.0; self.basket_size],
            upper: vec![self.price_box.1; self.basket_size],
            max_rel_change: self.max_rel_change,
            basket_linear: self.basket_linear.clone(),
        }
    }
}

/// Random stream purposes. Streams are keyed by (trial, purpose) so the
/// schedule of parallel trials cannot change any draw.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Stream {
    Market = 0,
    ForecastNoise = 1,
    DemandNoise = 2,
    Policy = 3,
}

pub fn stream_rng(seed: u64, trial: usize, purpose: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((trial as u64) * 4 + purpose as u64);
    rng
}

/// The per-trial market draw shared by every policy in that trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketDraw {
    pub gamma_true: Vec<f64>,
    pub initial_forecasts: Vec<f64>,
}

impl MarketDraw {
    pub fn generate(config: &MarketConfig, trial: usize) -> Self {
        let mut rng = stream_rng(config.seed, trial, Stream::Market);
        let (glo, ghi) = config.gamma_range;
        let (flo, fhi) = config.initial_forecast_range;
        let b = config.basket_size;
        let gamma_true = (0..b).map(|_| uniform(&mut rng, glo, ghi)).collect();
        let initial_forecasts = (0..b).map(|_| uniform(&mut rng, flo, fhi)).collect();
        Self {
            gamma_true,
            initial_forecasts,
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Exponential-model demand plus Gaussian noise, clamped at zero.
pub fn realize_demand<R: Rng + ?Sized>(
    noise_std: f64,
    gamma: f64,
    forecast: f64,
    price: f64,
    prev_price: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(price > 0.0) {
        return Err(Error::NonPositivePrice(price));
    }
    if !(prev_price > 0.0) {
        return Err(Error::NonPositivePrice(prev_price));
    }
    let z: f64 = rng.sample(StandardNormal);
    Ok((exponential_demand(forecast, price / prev_price, gamma) + noise_std * z).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub day: u32,
    pub prices: Vec<f64>,
    pub forecasts: Vec<f64>,
    pub demands: Vec<f64>,
    pub basket_revenue: f64,
    pub policy: PolicyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampled_gamma: Option<Vec<f64>>,
    /// Items priced by Thompson sampling on this day.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ts_eligible: Option<Vec<bool>>,
}

impl ObservationRecord {
    pub fn item_revenue(&self, item: usize) -> f64 {
        self.prices[item] * self.demands[item]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_id: usize,
    pub policy: PolicyKind,
    pub revenue_series: Vec<f64>,
    pub records: Vec<ObservationRecord>,
}

/// Runs one policy for `config.horizon` days on the market of `trial`.
pub fn run_trial(config: &MarketConfig, trial: usize, spec: &PolicySpec) -> Result<TrialResult> {
    config.validate()?;
    let draw = MarketDraw::generate(config, trial);
    let mut policy = spec.build(config, stream_rng(config.seed, trial, Stream::Policy))?;
    run_trial_with(config, trial, &draw, policy.as_mut())
}

/// Day loop against an explicit market draw and policy instance.
pub fn run_trial_with(
    config: &MarketConfig,
    trial: usize,
    draw: &MarketDraw,
    policy: &mut dyn PricingPolicy,
) -> Result<TrialResult> {
    config.validate()?;
    let b = config.basket_size;
    if draw.gamma_true.len() != b || draw.initial_forecasts.len() != b {
        return Err(Error::LengthMismatch {
            expected: b,
            actual: draw.gamma_true.len(),
        });
    }
    let mut forecast_rng = stream_rng(config.seed, trial, Stream::ForecastNoise);
    let mut demand_rng = stream_rng(config.seed, trial, Stream::DemandNoise);
    let forecast_noise =
        Normal::new(0.0, config.forecast_noise_std).map_err(|e| Error::invalid("forecast_noise_std", e.to_string()))?;
    let constraints = config.constraints();
    let mut model = ForecastModel::new(b, config.decay, config.base)?;
    let mut prev_prices = vec![config.initial_price; b];
    let mut records = Vec::with_capacity(config.horizon as usize);
    let mut revenue_series = Vec::with_capacity(config.horizon as usize);

    for day in 1..=config.horizon {
        let wrap = |e: Error| Error::Trial {
            trial,
            day,
            source: Box::new(e),
        };
        let forecasts: Vec<f64> = if day == 1 {
            draw.initial_forecasts.clone()
        } else {
            (0..b)
                .map(|i| {
                    let f = model.forecast(i, day)?;
                    Ok((f + forecast_noise.sample(&mut forecast_rng)).max(0.0))
                })
                .collect::<Result<_>>()
                .map_err(wrap)?
        };
        let basket: Vec<ItemState> = (0..b)
            .map(|i| ItemState {
                item_id: ItemId(i as u64),
                prev_price: prev_prices[i],
                forecast: forecasts[i],
                elasticity: None,
            })
            .collect();

        let decision = policy.decide(day, &basket, &constraints).map_err(wrap)?;
        if decision.prices.len() != b {
            return Err(wrap(Error::LengthMismatch {
                expected: b,
                actual: decision.prices.len(),
            }));
        }

        let demands: Vec<f64> = (0..b)
            .map(|i| {
                realize_demand(
                    config.noise_std,
                    draw.gamma_true[i],
                    forecasts[i],
                    decision.prices[i],
                    prev_prices[i],
                    &mut demand_rng,
                )
            })
            .collect::<Result<_>>()
            .map_err(wrap)?;
        let revenue: f64 = decision.prices.iter().zip(&demands).map(|(p, d)| p * d).sum();

        for (i, d) in demands.iter().enumerate() {
            model.record_demand(i, day, *d).map_err(wrap)?;
        }
        policy.observe(day, &basket, &decision.prices, &demands).map_err(wrap)?;

        revenue_series.push(revenue);
        records.push(ObservationRecord {
            day,
            prices: decision.prices.clone(),
            forecasts,
            demands,
            basket_revenue: revenue,
            policy: policy.kind(),
            sampled_gamma: decision.sampled_gamma,
            ts_eligible: decision.ts_eligible,
        });
        prev_prices = decision.prices;
    }

    Ok(TrialResult {
        trial_id: trial,
        policy: policy.kind(),
        revenue_series,
        records,
    })
}

/// Runs every policy on `trials` markets, in parallel over a pool of
/// `workers` threads. Output is ordered by trial, then by policy order.
pub fn run_experiment(
    config: &MarketConfig,
    trials: usize,
    policies: &[PolicySpec],
    workers: usize,
) -> Result<Vec<TrialResult>> {
    config.validate()?;
    if trials == 0 {
        return Err(Error::invalid("trials", "must be >= 1"));
    }
    if policies.is_empty() {
        return Err(Error::invalid("policies", "at least one policy is required"));
    }
    let jobs: Vec<(usize, &PolicySpec)> = (0..trials).flat_map(|t| policies.iter().map(move |p| (t, p))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid("workers", e.to_string()))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|(t, p)| run_trial(config, *t, p))
            .collect::<Result<Vec<_>>>()
    })
}
