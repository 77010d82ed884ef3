//! Deterministic fixtures shared by the benchmarks.

use dynprice_core::demand::{ItemId, ItemState, LikelihoodFeatures};

/// A basket with spread-out forecasts, prices and elasticities.
pub fn basket(n: usize) -> Vec<ItemState> {
    (0..n)
        .map(|i| {
            let u = (i as f64 * 0.618_033_988_75).fract();
            ItemState::new(ItemId(i as u64), 10.0 + 10.0 * u, 0.5 + 4.5 * (1.0 - u))
                .and_then(|s| s.with_elasticity(-1.0 - 2.0 * (i as f64 * 0.414_213_562).fract()))
                .expect("fixture values are valid")
        })
        .collect()
}

pub fn features(n: usize) -> LikelihoodFeatures {
    LikelihoodFeatures {
        theta: (0..n)
            .map(|i| ((i as f64 * 0.754_877_666).fract() - 0.5) * 8.0)
            .collect(),
        baseline_revenue: 50.0 * n as f64,
    }
}
