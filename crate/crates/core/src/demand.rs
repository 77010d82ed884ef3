//! Constant-elasticity demand, its first-order approximation around the
//! previous price, and the revenue functions built on top of it.
//!
//! The linear approximation is deliberately left unclamped: the optimizer
//! relies on the revenue being an exact concave quadratic in price. Realized
//! demand is clamped at zero by the simulator instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque item identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(pub u64);

/// Per-item pricing state for one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemState {
    pub item_id: ItemId,
    /// Price charged on the previous day.
    pub prev_price: f64,
    /// Expected units per day at `prev_price`.
    pub forecast: f64,
    /// Point estimate (or sample) of the item's price elasticity.
    pub elasticity: Option<f64>,
}

impl ItemState {
    pub fn new(item_id: ItemId, prev_price: f64, forecast: f64) -> Result<Self> {
        if !(prev_price > 0.0 && prev_price.is_finite()) {
            return Err(Error::NonPositivePrice(prev_price));
        }
        if !(forecast >= 0.0 && forecast.is_finite()) {
            return Err(Error::invalid("forecast", format!("must be >= 0, got {forecast}")));
        }
        Ok(Self {
            item_id,
            prev_price,
            forecast,
            elasticity: None,
        })
    }

    pub fn with_elasticity(mut self, elasticity: f64) -> Result<Self> {
        if !(elasticity < 0.0 && elasticity.is_finite()) {
            return Err(Error::invalid(
                "elasticity",
                format!("must be negative, got {elasticity}"),
            ));
        }
        self.elasticity = Some(elasticity);
        Ok(self)
    }

    fn gamma(&self) -> Result<f64> {
        self.elasticity.ok_or(Error::MissingElasticity {
            item: self.item_id.0 as usize,
        })
    }
}

/// Linear-in-elasticity decomposition of basket revenue:
/// `revenue(gamma) = gamma . theta + baseline_revenue`.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodFeatures {
    pub theta: Vec<f64>,
    pub baseline_revenue: f64,
}

fn check_price(price: f64) -> Result<()> {
    if price > 0.0 && price.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositivePrice(price))
    }
}

/// `f * (price / prev_price)^gamma`.
pub fn demand_exponential(item: &ItemState, price: f64) -> Result<f64> {
    check_price(price)?;
    let gamma = item.gamma()?;
    Ok(exponential_demand(item.forecast, price / item.prev_price, gamma))
}

#[inline]
pub(crate) fn exponential_demand(forecast: f64, ratio: f64, gamma: f64) -> f64 {
    if ratio == 1.0 {
        forecast
    } else {
        forecast * ratio.powf(gamma)
    }
}

/// First-order expansion of [`demand_exponential`] around `prev_price`.
/// May be negative for large price increases.
pub fn demand_linear(item: &ItemState, price: f64) -> Result<f64> {
    check_price(price)?;
    let gamma = item.gamma()?;
    let f = item.forecast;
    Ok(f + (price - item.prev_price) * f * gamma / item.prev_price)
}

/// `price * demand_linear(price)`; a concave quadratic in price when gamma < 0.
pub fn revenue_item(item: &ItemState, price: f64) -> Result<f64> {
    Ok(price * demand_linear(item, price)?)
}

/// Sum of [`revenue_item`] over a basket.
pub fn revenue_basket(basket: &[ItemState], prices: &[f64]) -> Result<f64> {
    if basket.len() != prices.len() {
        return Err(Error::LengthMismatch {
            expected: basket.len(),
            actual: prices.len(),
        });
    }
    basket.iter().zip(prices).map(|(item, &p)| revenue_item(item, p)).sum()
}

pub fn likelihood_features(basket: &[ItemState], prices: &[f64]) -> Result<LikelihoodFeatures> {
    if basket.len() != prices.len() {
        return Err(Error::LengthMismatch {
            expected: basket.len(),
            actual: prices.len(),
        });
    }
    let mut theta = Vec::with_capacity(basket.len());
    let mut baseline_revenue = 0.0;
    for (item, &p) in basket.iter().zip(prices) {
        check_price(p)?;
        let pf = p * item.forecast;
        theta.push(p * pf / item.prev_price - pf);
        baseline_revenue += pf;
    }
    Ok(LikelihoodFeatures {
        theta,
        baseline_revenue,
    })
}

impl LikelihoodFeatures {
    /// Predicted basket revenue for an elasticity vector.
    pub fn revenue(&self, gamma: &[f64]) -> f64 {
        self.theta.iter().zip(gamma).map(|(t, g)| t * g).sum::<f64>() + self.baseline_revenue
    }
}
