//! One-day revenue maximization over the feasible price set.
//!
//! The objective `sum_i f_i gamma_i p_i^2 / prev_i - f_i gamma_i p_i + f_i p_i`
//! is a separable concave quadratic. With per-item boxes only, the optimum is
//! the unconstrained stationary point clipped into the box. A basket-wide
//! linear constraint couples the items; that case is solved by projected
//! gradient ascent with step `1 / L`.

use serde::{Deserialize, Serialize};

use crate::demand::ItemState;
use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 10_000;
/// Stopping threshold on the gradient-mapping norm.
const STATIONARITY_TOL: f64 = 1e-10;
const FEASIBILITY_TOL: f64 = 1e-8;

/// `sum_i weights_i * p_i >= bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub weights: Vec<f64>,
    pub bound: f64,
}

/// Feasible price region before it is resolved against yesterday's prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// `|p_i - prev_i| <= max_rel_change * prev_i`.
    pub max_rel_change: Option<f64>,
    pub basket_linear: Option<LinearConstraint>,
}

impl ConstraintSet {
    pub fn boxes(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self {
            lower,
            upper,
            max_rel_change: None,
            basket_linear: None,
        }
    }

    /// Same `[lower, upper]` box for `n` items.
    pub fn uniform(n: usize, lower: f64, upper: f64) -> Self {
        Self::boxes(vec![lower; n], vec![upper; n])
    }

    pub fn with_max_rel_change(mut self, r: f64) -> Self {
        self.max_rel_change = Some(r);
        self
    }

    pub fn with_linear(mut self, weights: Vec<f64>, bound: f64) -> Self {
        self.basket_linear = Some(LinearConstraint { weights, bound });
        self
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// Intersects the boxes with the daily-change limits and checks feasibility.
    pub fn resolve(&self, prev_prices: &[f64]) -> Result<FeasibleRegion> {
        let n = self.lower.len();
        if self.upper.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: self.upper.len(),
            });
        }
        if prev_prices.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: prev_prices.len(),
            });
        }
        if let Some(r) = self.max_rel_change {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::invalid("max_rel_change", format!("must be >= 0, got {r}")));
            }
        }
        let mut lower = Vec::with_capacity(n);
        let mut upper = Vec::with_capacity(n);
        for (i, &prev) in prev_prices.iter().enumerate() {
            let (mut lo, mut hi) = (self.lower[i], self.upper[i]);
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::Infeasible(format!(
                    "item {i}: price box [{lo}, {hi}] must satisfy 0 < lower <= upper"
                )));
            }
            if let Some(r) = self.max_rel_change {
                lo = lo.max(prev * (1.0 - r));
                hi = hi.min(prev * (1.0 + r));
                if lo > hi {
                    return Err(Error::Infeasible(format!(
                        "item {i}: change limit around {prev} does not meet [{}, {}]",
                        self.lower[i], self.upper[i]
                    )));
                }
            }
            lower.push(lo);
            upper.push(hi);
        }
        FeasibleRegion::new(lower, upper, self.basket_linear.clone())
    }
}

/// Resolved per-item boxes plus the optional basket constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub linear: Option<LinearConstraint>,
}

impl FeasibleRegion {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, linear: Option<LinearConstraint>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::LengthMismatch {
                expected: lower.len(),
                actual: upper.len(),
            });
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(*lo > 0.0 && lo <= hi) {
                return Err(Error::Infeasible(format!("item {i}: empty box [{lo}, {hi}]")));
            }
        }
        if let Some(lc) = &linear {
            if lc.weights.len() != lower.len() {
                return Err(Error::LengthMismatch {
                    expected: lower.len(),
                    actual: lc.weights.len(),
                });
            }
            let best: f64 = lc
                .weights
                .iter()
                .zip(lower.iter().zip(&upper))
                .map(|(w, (lo, hi))| if *w >= 0.0 { w * hi } else { w * lo })
                .sum();
            if best < lc.bound - FEASIBILITY_TOL * (1.0 + lc.bound.abs()) {
                return Err(Error::Infeasible(format!(
                    "basket constraint needs {} but the boxes reach at most {best}",
                    lc.bound
                )));
            }
        }
        Ok(Self { lower, upper, linear })
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn clip(&self, point: &[f64]) -> Vec<f64> {
        point
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (lo, hi))| x.clamp(*lo, *hi))
            .collect()
    }

    /// Largest constraint violation (0 when feasible).
    pub fn violation(&self, point: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (x, (lo, hi)) in point.iter().zip(self.lower.iter().zip(&self.upper)) {
            worst = worst.max(lo - x).max(x - hi);
        }
        if let Some(lc) = &self.linear {
            let lhs: f64 = lc.weights.iter().zip(point).map(|(w, p)| w * p).sum();
            worst = worst.max(lc.bound - lhs);
        }
        worst
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.len() && self.violation(point) <= FEASIBILITY_TOL
    }
}

/// Euclidean projection onto the region.
///
/// With a basket constraint the projection is `clip(x + nu * w)` for the
/// smallest `nu >= 0` that satisfies the constraint; `w . clip(x + nu * w)`
/// is piecewise linear and nondecreasing in `nu`, so `nu` is found exactly by
/// walking its breakpoints.
pub fn project(point: &[f64], region: &FeasibleRegion) -> Result<Vec<f64>> {
    if point.len() != region.len() {
        return Err(Error::LengthMismatch {
            expected: region.len(),
            actual: point.len(),
        });
    }
    let clipped = region.clip(point);
    let Some(lc) = &region.linear else {
        return Ok(clipped);
    };
    let dot = |p: &[f64]| -> f64 { lc.weights.iter().zip(p).map(|(w, x)| w * x).sum() };
    if dot(&clipped) >= lc.bound {
        return Ok(clipped);
    }

    let mut breaks: Vec<f64> = Vec::with_capacity(2 * point.len());
    for (i, (&w, &x)) in lc.weights.iter().zip(point).enumerate() {
        if w != 0.0 {
            for edge in [region.lower[i], region.upper[i]] {
                let nu = (edge - x) / w;
                if nu > 0.0 {
                    breaks.push(nu);
                }
            }
        }
    }
    breaks.sort_by(|a, b| a.total_cmp(b));
    breaks.dedup();

    let at = |nu: f64| -> Vec<f64> {
        let shifted: Vec<f64> = point.iter().zip(&lc.weights).map(|(x, w)| x + nu * w).collect();
        region.clip(&shifted)
    };
    let mut left = 0.0;
    let mut g_left = dot(&clipped);
    for &nu in &breaks {
        let g = dot(&at(nu));
        if g >= lc.bound {
            // g is affine on [left, nu]
            let t = if g > g_left {
                (lc.bound - g_left) / (g - g_left)
            } else {
                1.0
            };
            let mut p = at(left + t * (nu - left));
            polish_linear(&mut p, lc, region);
            return Ok(p);
        }
        left = nu;
        g_left = g;
    }
    // Only reachable through rounding when the constraint is tight at the box corner.
    let p = at(left);
    if dot(&p) >= lc.bound - FEASIBILITY_TOL * (1.0 + lc.bound.abs()) {
        Ok(p)
    } else {
        Err(Error::Infeasible("basket constraint cannot be met".into()))
    }
}

/// Removes rounding-level shortfall on the basket constraint by nudging free coordinates.
fn polish_linear(p: &mut [f64], lc: &LinearConstraint, region: &FeasibleRegion) {
    let lhs: f64 = lc.weights.iter().zip(p.iter()).map(|(w, x)| w * x).sum();
    let short = lc.bound - lhs;
    if short <= 0.0 {
        return;
    }
    let free: f64 = lc
        .weights
        .iter()
        .zip(p.iter())
        .enumerate()
        .filter(|(i, (_, x))| **x > region.lower[*i] && **x < region.upper[*i])
        .map(|(_, (w, _))| w * w)
        .sum();
    if free > 0.0 {
        let nu = short / free;
        for (i, (x, w)) in p.iter_mut().zip(&lc.weights).enumerate() {
            if *x > region.lower[i] && *x < region.upper[i] {
                *x = (*x + nu * w).clamp(region.lower[i], region.upper[i]);
            }
        }
    }
}

/// Stationary point `prev * (gamma - 1) / (2 gamma)` of the single-item revenue.
pub fn unconstrained_optimum(item: &ItemState) -> Result<f64> {
    let gamma = item.elasticity.filter(|g| *g < 0.0).ok_or(Error::MissingElasticity {
        item: item.item_id.0 as usize,
    })?;
    if !(item.forecast > 0.0) {
        return Err(Error::NonPositiveForecast {
            item: item.item_id.0 as usize,
            forecast: item.forecast,
        });
    }
    Ok(item.prev_price * (gamma - 1.0) / (2.0 * gamma))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxRevSolution {
    pub prices: Vec<f64>,
    /// Predicted basket revenue under the linearized demand model.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Gradient-mapping norm at the returned prices; zero exactly at a KKT point.
    pub kkt_residual: f64,
}

/// Per-item coefficients of `q_i(p) = a_i p^2 + b_i p`.
#[derive(Debug, Clone)]
pub(crate) struct Quadratic {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Quadratic {
    pub(crate) fn from_basket(basket: &[ItemState]) -> Result<Self> {
        let mut a = Vec::with_capacity(basket.len());
        let mut b = Vec::with_capacity(basket.len());
        for (i, item) in basket.iter().enumerate() {
            let gamma = item
                .elasticity
                .filter(|g| *g < 0.0 && g.is_finite())
                .ok_or(Error::MissingElasticity { item: i })?;
            if !(item.forecast >= 0.0 && item.forecast.is_finite()) {
                return Err(Error::NonPositiveForecast {
                    item: i,
                    forecast: item.forecast,
                });
            }
            let f = item.forecast;
            a.push(f * gamma / item.prev_price);
            b.push(f - f * gamma);
        }
        Ok(Self { a, b })
    }

    pub(crate) fn value(&self, p: &[f64]) -> f64 {
        self.a
            .iter()
            .zip(&self.b)
            .zip(p)
            .map(|((a, b), x)| (a * x + b) * x)
            .sum()
    }

    fn gradient(&self, p: &[f64]) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.b)
            .zip(p)
            .map(|((a, b), x)| 2.0 * a * x + b)
            .collect()
    }

    fn lipschitz(&self) -> f64 {
        self.a.iter().fold(0.0f64, |m, a| m.max((2.0 * a).abs()))
    }

    /// Per-item maximizer; items with zero curvature keep `fallback`.
    fn stationary(&self, fallback: &[f64]) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.b)
            .zip(fallback)
            .map(|((a, b), x)| if *a < 0.0 { -b / (2.0 * a) } else { *x })
            .collect()
    }
}

/// Gradient-mapping norm `|| p - P(p + s grad) ||_inf / s`.
pub fn kkt_residual(basket: &[ItemState], region: &FeasibleRegion, prices: &[f64]) -> Result<f64> {
    let q = Quadratic::from_basket(basket)?;
    let l = q.lipschitz();
    let step = if l > 0.0 { 1.0 / l } else { 1.0 };
    gradient_mapping(&q, region, prices, step)
}

fn gradient_mapping(q: &Quadratic, region: &FeasibleRegion, p: &[f64], step: f64) -> Result<f64> {
    let g = q.gradient(p);
    let trial: Vec<f64> = p.iter().zip(&g).map(|(x, gi)| x + step * gi).collect();
    let proj = project(&trial, region)?;
    Ok(p.iter().zip(&proj).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / step)
}

/// Options for [`solve_with`].
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Record the objective after each projected-gradient step.
    pub trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: MAX_ITERATIONS,
            trace: false,
        }
    }
}

pub fn solve(basket: &[ItemState], constraints: &ConstraintSet) -> Result<MaxRevSolution> {
    solve_with(basket, constraints, SolverOptions::default()).map(|(s, _)| s)
}

/// Like [`solve`], optionally returning the per-iteration objective trace.
pub fn solve_with(
    basket: &[ItemState],
    constraints: &ConstraintSet,
    opts: SolverOptions,
) -> Result<(MaxRevSolution, Vec<f64>)> {
    if basket.is_empty() {
        return Err(Error::EmptyBasket);
    }
    let prev: Vec<f64> = basket.iter().map(|i| i.prev_price).collect();
    let region = constraints.resolve(&prev)?;
    let q = Quadratic::from_basket(basket)?;
    let l = q.lipschitz();
    let step = if l > 0.0 { 1.0 / l } else { 1.0 };

    let start = region.clip(&q.stationary(&prev));
    let mut trace = Vec::new();

    if region.contains(&start) {
        // The separable optimum already satisfies every constraint.
        let objective = q.value(&start);
        let kkt = gradient_mapping(&q, &region, &start, step)?;
        return Ok((
            MaxRevSolution {
                prices: start,
                objective,
                iterations: 0,
                converged: true,
                kkt_residual: kkt,
            },
            trace,
        ));
    }

    let mut x = project(&start, &region)?;
    let mut best = q.value(&x);
    if opts.trace {
        trace.push(best);
    }
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let g = q.gradient(&x);
        let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi + step * gi).collect();
        let next = project(&trial, &region)?;
        let moved = x.iter().zip(&next).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let value = q.value(&next);
        if opts.trace {
            trace.push(value);
        }
        x = next;
        best = value;
        if moved / step < STATIONARITY_TOL * (1.0 + l) {
            converged = true;
            break;
        }
    }
    let kkt = gradient_mapping(&q, &region, &x, step)?;
    Ok((
        MaxRevSolution {
            prices: x,
            objective: best,
            iterations,
            converged,
            kkt_residual: kkt,
        },
        trace,
    ))
}
