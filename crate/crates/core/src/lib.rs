//! Dynamic pricing of a basket of items under a constant-elasticity demand
//! model.
//!
//! Prices are chosen once per day by maximizing expected basket revenue,
//! either with point estimates of each item's elasticity (passive) or with
//! elasticities drawn from a Gaussian posterior (Thompson sampling).

// `!(x > 0.0)` is used throughout to reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod demand;
pub mod elasticity;
pub mod error;
pub mod evaluation;
pub mod forecast;
pub mod simulator;
pub mod solver;
pub mod thompson;

pub use demand::{
    demand_exponential, demand_linear, likelihood_features, revenue_basket, revenue_item, ItemId, ItemState,
    LikelihoodFeatures,
};
pub use elasticity::{estimate_ols, estimate_rls, ElasticityClamp, ElasticityDataset, Observation, RlsFit};
pub use error::{Error, Result};
pub use evaluation::{compare_policies, delta_table, k_table, wald_test, DeltaVariant, WaldResult};
pub use forecast::{ForecastModel, Forecaster};
pub use simulator::{run_experiment, run_trial, MarketConfig, ObservationRecord, PolicyKind, PolicySpec, TrialResult};
pub use solver::{solve, ConstraintSet, FeasibleRegion, LinearConstraint, MaxRevSolution};
pub use thompson::{
    init_posterior, posterior_update, sample_elasticities, ts_step, CovarianceMode, ElasticityPosterior, TsConfig,
};
