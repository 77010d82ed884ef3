//! Passive elasticity estimation.
//!
//! Under the linearized demand model `d - f = gamma * f * (p - prev) / prev`,
//! so the elasticity is the slope of a regression through the origin of
//! `y = d - f` on `x = f * (p - prev) / prev`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 60;
pub const DEFAULT_FORECAST_FLOOR: f64 = 1e-6;
pub const DEFAULT_CLAMP: (f64, f64) = (-10.0, -0.1);
/// Huber tuning constant applied to the MAD residual scale.
pub const HUBER_K: f64 = 1.345;

const MAX_IRLS_ITERATIONS: usize = 100;
const IRLS_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub prev_price: f64,
    pub forecast: f64,
    pub price: f64,
    pub demand: f64,
}

impl Observation {
    fn design(&self) -> f64 {
        self.forecast * (self.price - self.prev_price) / self.prev_price
    }

    fn response(&self) -> f64 {
        self.demand - self.forecast
    }
}

/// Trailing window of per-item observations, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticityDataset {
    rows: VecDeque<Observation>,
    window: usize,
    forecast_floor: f64,
}

impl Default for ElasticityDataset {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW)
    }
}

impl ElasticityDataset {
    pub fn new(window: usize) -> Self {
        Self {
            rows: VecDeque::with_capacity(window.min(1024)),
            window: window.max(1),
            forecast_floor: DEFAULT_FORECAST_FLOOR,
        }
    }

    pub fn with_forecast_floor(mut self, floor: f64) -> Self {
        self.forecast_floor = floor;
        self
    }

    /// Appends a row, dropping it if the forecast is below the floor.
    /// Returns whether the row was retained.
    pub fn push(&mut self, row: Observation) -> Result<bool> {
        if !(row.prev_price > 0.0) {
            return Err(Error::NonPositivePrice(row.prev_price));
        }
        if !(row.price > 0.0) {
            return Err(Error::NonPositivePrice(row.price));
        }
        if !(row.forecast > self.forecast_floor) || !row.demand.is_finite() {
            return Ok(false);
        }
        if self.rows.len() == self.window {
            self.rows.pop_front();
        }
        self.rows.push_back(row);
        Ok(true)
    }

    pub fn rows(&self) -> impl Iterator<Item = &Observation> {
        self.rows.iter()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    fn design_response(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.rows.len() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                have: self.rows.len(),
            });
        }
        let x: Vec<f64> = self.rows.iter().map(Observation::design).collect();
        let y: Vec<f64> = self.rows.iter().map(Observation::response).collect();
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        let scale: f64 = self.rows.iter().map(|r| r.forecast * r.forecast).sum();
        if !(sxx > 1e-24 * scale) {
            return Err(Error::Inestimable);
        }
        Ok((x, y))
    }
}

/// Admissible elasticity interval applied to every estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticityClamp {
    pub lower: f64,
    pub upper: f64,
}

impl Default for ElasticityClamp {
    fn default() -> Self {
        Self {
            lower: DEFAULT_CLAMP.0,
            upper: DEFAULT_CLAMP.1,
        }
    }
}

impl ElasticityClamp {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower < upper && upper < 0.0 && lower.is_finite()) {
            return Err(Error::invalid(
                "elasticity_clamp",
                format!("need lower < upper < 0, got [{lower}, {upper}]"),
            ));
        }
        Ok(Self { lower, upper })
    }

    pub fn apply(&self, gamma: f64) -> f64 {
        gamma.clamp(self.lower, self.upper)
    }
}

fn weighted_slope(x: &[f64], y: &[f64], w: &[f64]) -> Option<f64> {
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for ((xi, yi), wi) in x.iter().zip(y).zip(w) {
        sxy += wi * xi * yi;
        sxx += wi * xi * xi;
    }
    (sxx > 0.0).then(|| sxy / sxx)
}

fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    sxy / sxx
}

/// Least-squares elasticity, clamped.
pub fn estimate_ols(data: &ElasticityDataset, clamp: ElasticityClamp) -> Result<f64> {
    let (x, y) = data.design_response()?;
    Ok(clamp.apply(ols_slope(&x, &y)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlsFit {
    pub elasticity: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit; `elasticity` is then the last iterate.
    pub converged: bool,
    pub huber_delta: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Normalized median absolute deviation.
fn mad_scale(residuals: &[f64]) -> f64 {
    let mut r = residuals.to_vec();
    let m = median(&mut r);
    let mut dev: Vec<f64> = residuals.iter().map(|v| (v - m).abs()).collect();
    median(&mut dev) / 0.674_489_750_196_081_7
}

/// Huber-loss elasticity via iteratively reweighted least squares.
///
/// With `huber_delta = None` the threshold is `1.345 * MAD` of the initial
/// least-squares residuals. A zero residual scale means the data already sit
/// on a line and the least-squares slope is returned.
pub fn estimate_rls(data: &ElasticityDataset, huber_delta: Option<f64>, clamp: ElasticityClamp) -> Result<RlsFit> {
    let (x, y) = data.design_response()?;
    let mut slope = ols_slope(&x, &y);
    let residuals: Vec<f64> = x.iter().zip(&y).map(|(a, b)| b - slope * a).collect();
    let delta = match huber_delta {
        Some(d) if d > 0.0 => d,
        Some(d) => return Err(Error::invalid("huber_delta", format!("must be > 0, got {d}"))),
        None => HUBER_K * mad_scale(&residuals),
    };
    if !(delta > 0.0) {
        return Ok(RlsFit {
            elasticity: clamp.apply(slope),
            iterations: 0,
            converged: true,
            huber_delta: delta,
        });
    }

    let mut weights = vec![1.0; x.len()];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_IRLS_ITERATIONS {
        iterations += 1;
        for ((w, xi), yi) in weights.iter_mut().zip(&x).zip(&y) {
            let r = (yi - slope * xi).abs();
            *w = if r <= delta { 1.0 } else { delta / r };
        }
        let Some(next) = weighted_slope(&x, &y, &weights) else {
            return Err(Error::Inestimable);
        };
        let step = (next - slope).abs();
        slope = next;
        if step < IRLS_TOLERANCE {
            converged = true;
            break;
        }
    }
    Ok(RlsFit {
        elasticity: clamp.apply(slope),
        iterations,
        converged,
        huber_delta: delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(prev: f64, f: f64, p: f64, d: f64) -> Observation {
        Observation {
            prev_price: prev,
            forecast: f,
            price: p,
            demand: d,
        }
    }

    fn dataset(rows: &[Observation]) -> ElasticityDataset {
        let mut ds = ElasticityDataset::new(DEFAULT_WINDOW);
        for r in rows {
            ds.push(*r).unwrap();
        }
        ds
    }

    fn linear_rows(gamma: f64, n: usize) -> Vec<Observation> {
        (0..n)
            .map(|k| {
                let prev = 10.0 + (k % 5) as f64;
                let f = 2.0 + (k % 7) as f64;
                let p = prev * (0.8 + 0.03 * k as f64 % 0.5);
                row(prev, f, p, f + gamma * f * (p - prev) / prev)
            })
            .collect()
    }

    /// Independent least-squares oracle: golden-section search on the sum of squares.
    fn brute_force_slope(rows: &[Observation]) -> f64 {
        let sse = |g: f64| -> f64 {
            rows.iter()
                .map(|r| {
                    let e = r.demand - r.forecast - g * r.forecast * (r.price - r.prev_price) / r.prev_price;
                    e * e
                })
                .sum()
        };
        let (mut a, mut b) = (-20.0, 20.0);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            if sse(c) < sse(d) {
                b = d;
            } else {
                a = c;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn two_point_exact() {
        let ds = dataset(&[row(10.0, 10.0, 10.0, 10.0), row(10.0, 10.0, 11.0, 8.0)]);
        assert!((estimate_ols(&ds, ElasticityClamp::default()).unwrap() + 2.0).abs() < 1e-12);
    }

    #[test]
    fn identical_prices_are_inestimable() {
        let ds = dataset(&[
            row(10.0, 5.0, 10.0, 4.0),
            row(10.0, 6.0, 10.0, 7.0),
            row(10.0, 5.0, 10.0, 5.0),
        ]);
        assert_eq!(estimate_ols(&ds, ElasticityClamp::default()), Err(Error::Inestimable));
        assert_eq!(
            estimate_rls(&ds, None, ElasticityClamp::default()),
            Err(Error::Inestimable)
        );
    }

    #[test]
    fn too_few_rows() {
        let ds = dataset(&[row(10.0, 5.0, 11.0, 4.0)]);
        assert!(matches!(
            estimate_ols(&ds, ElasticityClamp::default()),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn symmetric_noise_cancels() {
        // gamma = -1; mirrored design points get equal and opposite noise.
        let mut rows = Vec::new();
        for (k, dp) in [0.5, 1.0, 2.0].iter().enumerate() {
            let f = 4.0;
            let noise = 0.3 * (k as f64 + 1.0);
            for sign in [1.0, -1.0] {
                let p = 10.0 + sign * dp;
                let clean = f - f * (p - 10.0) / 10.0;
                rows.push(row(10.0, f, p, clean + noise));
            }
        }
        let ds = dataset(&rows);
        let ols = estimate_ols(&ds, ElasticityClamp::default()).unwrap();
        assert!((ols + 1.0).abs() < 1e-12, "{ols}");
        assert!((ols - brute_force_slope(&rows)).abs() < 1e-8);
    }

    #[test]
    fn rls_matches_ols_on_clean_data() {
        let ds = dataset(&linear_rows(-2.0, 20));
        let ols = estimate_ols(&ds, ElasticityClamp::default()).unwrap();
        let rls = estimate_rls(&ds, None, ElasticityClamp::default()).unwrap();
        assert!((ols - rls.elasticity).abs() < 1e-6);
        let rls = estimate_rls(&ds, Some(0.5), ElasticityClamp::default()).unwrap();
        assert!((ols - rls.elasticity).abs() < 1e-6);
    }

    #[test]
    fn rls_resists_outlier() {
        let mut rows = linear_rows(-2.0, 20);
        let mut bad = rows[3];
        bad.demand *= 10.0;
        rows.push(bad);
        let ds = dataset(&rows);
        let ols = estimate_ols(&ds, ElasticityClamp::new(-100.0, -1e-3).unwrap()).unwrap();
        let rls = estimate_rls(&ds, None, ElasticityClamp::new(-100.0, -1e-3).unwrap()).unwrap();
        assert!(rls.converged);
        assert!(
            (rls.elasticity + 2.0).abs() < (ols + 2.0).abs(),
            "rls {} ols {}",
            rls.elasticity,
            ols
        );
    }

    #[test]
    fn clamps_estimates() {
        // positive slope is clamped to the upper bound
        let ds = dataset(&[row(10.0, 10.0, 11.0, 12.0), row(10.0, 10.0, 9.0, 8.0)]);
        assert_eq!(estimate_ols(&ds, ElasticityClamp::default()).unwrap(), -0.1);
    }

    #[test]
    fn low_forecast_rows_dropped_and_window_enforced() {
        let mut ds = ElasticityDataset::new(3);
        assert!(!ds.push(row(10.0, 0.0, 11.0, 1.0)).unwrap());
        for k in 0..5 {
            assert!(ds.push(row(10.0, 1.0, 10.0 + k as f64, 1.0)).unwrap());
        }
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.rows().next().unwrap().price, 12.0);
        assert!(ds.push(row(0.0, 1.0, 1.0, 1.0)).is_err());
    }

    proptest! {
        #[test]
        fn noiseless_recovery(gamma in -5.0f64..-0.2, n in 2usize..40) {
            let ds = dataset(&linear_rows(gamma, n.max(3)));
            let g = estimate_ols(&ds, ElasticityClamp::default()).unwrap();
            prop_assert!((g - gamma).abs() < 1e-9);
        }

        #[test]
        fn scale_equivariance(gamma in -4.0f64..-0.5, c in 0.01f64..100.0, jitter in 0.0f64..1.0) {
            let rows: Vec<Observation> = linear_rows(gamma, 12)
                .into_iter()
                .enumerate()
                .map(|(k, mut r)| { r.demand += jitter * ((k * 7 % 5) as f64 - 2.0); r })
                .collect();
            let scaled: Vec<Observation> = rows
                .iter()
                .map(|r| row(r.prev_price, r.forecast * c, r.price, r.demand * c))
                .collect();
            let a = estimate_ols(&dataset(&rows), ElasticityClamp::default()).unwrap();
            let b = estimate_ols(&dataset(&scaled), ElasticityClamp::default()).unwrap();
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        }

        #[test]
        fn always_negative(ys in prop::collection::vec(-50.0f64..50.0, 3..20)) {
            let rows: Vec<Observation> = ys
                .iter()
                .enumerate()
                .map(|(k, &d)| row(10.0, 3.0, 8.0 + k as f64, 3.0 + d))
                .collect();
            let ds = dataset(&rows);
            prop_assert!(estimate_ols(&ds, ElasticityClamp::default()).unwrap() < 0.0);
            prop_assert!(estimate_rls(&ds, None, ElasticityClamp::default()).unwrap().elasticity < 0.0);
        }
    }
}
