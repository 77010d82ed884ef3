use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MarketConfig, PolicyKind};
use crate::demand::{ItemState, LikelihoodFeatures};
use crate::elasticity::{estimate_ols, estimate_rls, ElasticityClamp, ElasticityDataset, Observation, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::solver::{self, ConstraintSet};
use crate::thompson::{
    init_posterior, sample_elasticities, update_in_place, CovarianceMode, ElasticityPosterior, TsConfig,
    DEFAULT_MAX_REJECTIONS,
};

/// What a policy decided for one day.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDecision {
    pub prices: Vec<f64>,
    pub sampled_gamma: Option<Vec<f64>>,
    pub ts_eligible: Option<Vec<bool>>,
}

/// A pricing policy sees forecasts, yesterday's prices and realized demand only.
pub trait PricingPolicy: Send {
    fn kind(&self) -> PolicyKind;

    fn decide(&mut self, day: u32, basket: &[ItemState], constraints: &ConstraintSet) -> Result<PolicyDecision>;

    fn observe(&mut self, day: u32, basket: &[ItemState], prices: &[f64], demands: &[f64]) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Ols,
    Rls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassiveConfig {
    pub estimator: Estimator,
    pub window: usize,
    /// Elasticity used until an item's history supports an estimate.
    pub initial_elasticity: f64,
    pub clamp: ElasticityClamp,
    /// `None` picks the Huber threshold from the residual scale.
    pub huber_delta: Option<f64>,
}

impl Default for PassiveConfig {
    fn default() -> Self {
        Self {
            estimator: Estimator::Ols,
            window: DEFAULT_WINDOW,
            initial_elasticity: -1.5,
            clamp: ElasticityClamp::default(),
            huber_delta: None,
        }
    }
}

/// Estimate-then-optimize pricing: per-item elasticities re-estimated daily
/// from a trailing window, plugged into the one-day revenue problem.
#[derive(Debug, Clone)]
pub struct PassivePolicy {
    config: PassiveConfig,
    datasets: Vec<ElasticityDataset>,
    estimates: Vec<f64>,
    learn: bool,
}

impl PassivePolicy {
    pub fn new(config: PassiveConfig, basket_size: usize) -> Result<Self> {
        if !(config.initial_elasticity < 0.0) {
            return Err(Error::invalid(
                "initial_elasticity",
                format!("must be negative, got {}", config.initial_elasticity),
            ));
        }
        if config.window < 2 {
            return Err(Error::invalid("window", "must be >= 2"));
        }
        Ok(Self {
            datasets: vec![ElasticityDataset::new(config.window); basket_size],
            estimates: vec![config.clamp.apply(config.initial_elasticity); basket_size],
            config,
            learn: true,
        })
    }

    /// A policy that never re-estimates, pricing with the given elasticities.
    pub fn with_fixed_elasticities(elasticities: Vec<f64>) -> Self {
        let n = elasticities.len();
        Self {
            config: PassiveConfig::default(),
            datasets: vec![ElasticityDataset::new(2); n],
            estimates: elasticities,
            learn: false,
        }
    }

    pub fn estimates(&self) -> &[f64] {
        &self.estimates
    }

    fn reestimate(&mut self, item: usize) {
        let data = &self.datasets[item];
        let est = match self.config.estimator {
            Estimator::Ols => estimate_ols(data, self.config.clamp),
            Estimator::Rls => estimate_rls(data, self.config.huber_delta, self.config.clamp).map(|f| f.elasticity),
        };
        // Inestimable or too-short histories keep the previous estimate.
        if let Ok(g) = est {
            self.estimates[item] = g;
        }
    }
}

fn with_elasticities(basket: &[ItemState], gamma: &[f64]) -> Vec<ItemState> {
    basket
        .iter()
        .zip(gamma)
        .map(|(item, g)| ItemState {
            elasticity: Some(*g),
            ..item.clone()
        })
        .collect()
}

impl PricingPolicy for PassivePolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Passive
    }

    fn decide(&mut self, _day: u32, basket: &[ItemState], constraints: &ConstraintSet) -> Result<PolicyDecision> {
        if basket.len() != self.estimates.len() {
            return Err(Error::LengthMismatch {
                expected: self.estimates.len(),
                actual: basket.len(),
            });
        }
        let solution = solver::solve(&with_elasticities(basket, &self.estimates), constraints)?;
        Ok(PolicyDecision {
            prices: solution.prices,
            sampled_gamma: None,
            ts_eligible: None,
        })
    }

    fn observe(&mut self, _day: u32, basket: &[ItemState], prices: &[f64], demands: &[f64]) -> Result<()> {
        if !self.learn {
            return Ok(());
        }
        for (i, item) in basket.iter().enumerate() {
            self.datasets[i].push(Observation {
                prev_price: item.prev_price,
                forecast: item.forecast,
                price: prices[i],
                demand: demands[i],
            })?;
            self.reestimate(i);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsPolicyConfig {
    /// Prior mean shared by every item.
    pub prior_mean: f64,
    pub prior_scale: f64,
    pub noise_var: f64,
    pub ridge: f64,
    pub max_rejections: usize,
    pub update_period: u32,
    /// `None` picks full or diagonal covariance from the basket size.
    pub mode: Option<CovarianceMode>,
    /// Items forecast below this are priced passively instead of sampled.
    pub eligibility_threshold: Option<f64>,
    /// Estimator used for items outside the sampled set.
    pub passive: PassiveConfig,
}

impl Default for TsPolicyConfig {
    fn default() -> Self {
        Self {
            prior_mean: -1.5,
            prior_scale: 0.25,
            noise_var: 1e4,
            ridge: 0.0,
            max_rejections: DEFAULT_MAX_REJECTIONS,
            update_period: 1,
            mode: None,
            eligibility_threshold: None,
            passive: PassiveConfig::default(),
        }
    }
}

impl TsPolicyConfig {
    pub fn ts_config(&self, basket_size: usize) -> TsConfig {
        let mut cfg = TsConfig::new(vec![self.prior_mean; basket_size], self.prior_scale, self.noise_var);
        cfg.ridge = self.ridge;
        cfg.max_rejections = self.max_rejections;
        cfg.update_period = self.update_period;
        if let Some(mode) = self.mode {
            cfg.mode = mode;
        }
        cfg
    }
}

/// Thompson-sampling pricing over the eligible part of the basket.
pub struct TsPolicy {
    posterior: ElasticityPosterior,
    config: TsConfig,
    threshold: Option<f64>,
    passive: PassivePolicy,
    rng: ChaCha8Rng,
    pending: Vec<(LikelihoodFeatures, f64)>,
    eligible: Vec<bool>,
}

impl TsPolicy {
    pub fn new(config: &TsPolicyConfig, basket_size: usize, rng: ChaCha8Rng) -> Result<Self> {
        let ts = config.ts_config(basket_size);
        if let Some(t) = config.eligibility_threshold {
            if !(t >= 0.0) {
                return Err(Error::invalid(
                    "eligibility_threshold",
                    format!("must be >= 0, got {t}"),
                ));
            }
        }
        Ok(Self {
            posterior: init_posterior(&ts, basket_size)?,
            config: ts,
            threshold: config.eligibility_threshold,
            passive: PassivePolicy::new(config.passive.clone(), basket_size)?,
            rng,
            pending: Vec::new(),
            eligible: vec![true; basket_size],
        })
    }

    pub fn posterior(&self) -> &ElasticityPosterior {
        &self.posterior
    }

    fn flush(&mut self) -> Result<()> {
        for (features, revenue) in self.pending.drain(..) {
            update_in_place(&mut self.posterior, &features, revenue)?;
        }
        Ok(())
    }
}

impl PricingPolicy for TsPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Ts
    }

    fn decide(&mut self, _day: u32, basket: &[ItemState], constraints: &ConstraintSet) -> Result<PolicyDecision> {
        let b = self.posterior.len();
        if basket.len() != b {
            return Err(Error::LengthMismatch {
                expected: b,
                actual: basket.len(),
            });
        }
        let items: Vec<PartitionItem> = basket
            .iter()
            .map(|i| PartitionItem {
                fixed_price: false,
                forecast: i.forecast,
            })
            .collect();
        let part = partition_basket(&items, self.threshold.unwrap_or(0.0));
        self.eligible = vec![false; b];
        for &i in &part.ts_eligible {
            self.eligible[i] = true;
        }

        let mut gamma = match sample_elasticities(&self.posterior, &mut self.rng, self.config.max_rejections) {
            Ok(s) => s.gamma,
            Err(Error::RejectionLimit { .. }) => self.posterior.truncated_mean(),
            Err(e) => return Err(e),
        };
        for &i in &part.passive_only {
            gamma[i] = self.passive.estimates()[i];
        }
        let solution = solver::solve(&with_elasticities(basket, &gamma), constraints)?;
        Ok(PolicyDecision {
            prices: solution.prices,
            sampled_gamma: Some(gamma),
            ts_eligible: Some(self.eligible.clone()),
        })
    }

    fn observe(&mut self, day: u32, basket: &[ItemState], prices: &[f64], demands: &[f64]) -> Result<()> {
        self.passive.observe(day, basket, prices, demands)?;
        let mut theta = vec![0.0; basket.len()];
        let mut baseline = 0.0;
        let mut revenue = 0.0;
        for (i, item) in basket.iter().enumerate() {
            if !self.eligible[i] {
                continue;
            }
            let (p, f) = (prices[i], item.forecast);
            theta[i] = p * p * f / item.prev_price - p * f;
            baseline += p * f;
            revenue += p * demands[i];
        }
        self.pending.push((
            LikelihoodFeatures {
                theta,
                baseline_revenue: baseline,
            },
            revenue,
        ));
        if self.pending.len() >= self.config.update_period as usize {
            self.flush()?;
        }
        Ok(())
    }
}

/// Policy selection plus its configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase")]
pub enum PolicySpec {
    Passive(PassiveConfig),
    Ts(TsPolicyConfig),
}

impl PolicySpec {
    pub fn kind(&self) -> PolicyKind {
        match self {
            PolicySpec::Passive(_) => PolicyKind::Passive,
            PolicySpec::Ts(_) => PolicyKind::Ts,
        }
    }

    pub fn build(&self, market: &MarketConfig, rng: ChaCha8Rng) -> Result<Box<dyn PricingPolicy>> {
        Ok(match self {
            PolicySpec::Passive(cfg) => Box::new(PassivePolicy::new(cfg.clone(), market.basket_size)?),
            PolicySpec::Ts(cfg) => Box::new(TsPolicy::new(cfg, market.basket_size, rng)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionItem {
    pub fixed_price: bool,
    pub forecast: f64,
}

/// Disjoint index sets: fixed-price items, low-forecast items priced
/// passively, and the rest which are priced by Thompson sampling.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Partition {
    pub fixed: Vec<usize>,
    pub passive_only: Vec<usize>,
    pub ts_eligible: Vec<usize>,
}

pub fn partition_basket(items: &[PartitionItem], forecast_threshold: f64) -> Partition {
    let mut part = Partition::default();
    for (i, item) in items.iter().enumerate() {
        if item.fixed_price {
            part.fixed.push(i);
        } else if item.forecast < forecast_threshold {
            part.passive_only.push(i);
        } else {
            part.ts_eligible.push(i);
        }
    }
    part
}
