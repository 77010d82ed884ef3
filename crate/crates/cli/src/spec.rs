//! Experiment specification files.
//!
//! A spec is a TOML document. Every key is optional and unknown keys are
//! rejected. A minimal spec is the empty file:
//!
//! ```toml
//! trials = 10
//! seed = 0
//! policies = ["passive", "ts"]
//! report_ks = [5, 10, 15, 20, 25, 30]
//! # output_dir = "out"
//! # compare_window = [51, 100]
//!
//! [market]
//! basket_size = 100
//! horizon = 100
//! gamma_range = [-3.0, -1.0]
//! initial_price = 12.0
//! initial_forecast_range = [0.5, 5.0]
//! price_box = [10.0, 20.0]
//! decay = 0.5
//! base = 0.5
//! noise_std = 1.0
//! forecast_noise_std = 1.0
//! # max_rel_change = 0.1
//! # linear_weights = [...]
//! # linear_bound = 1000.0
//!
//! [passive]
//! estimator = "ols"
//! window = 60
//! initial_elasticity = -1.5
//! clamp = [-10.0, -0.1]
//! # huber_delta = 1.0
//!
//! [ts]
//! prior_mean = -1.5
//! prior_scale = 0.25
//! noise_var = 10000.0
//! ridge = 0.0
//! max_rejections = 1000
//! update_period = 1
//! # mode = "full"
//! # eligibility_threshold = 1.0
//! ```

use std::fmt;
use std::path::PathBuf;

use dynprice_core::elasticity::ElasticityClamp;
use dynprice_core::simulator::{
    Estimator, MarketConfig, PassiveConfig, PassivePolicy, PolicyKind, PolicySpec, TsPolicyConfig,
};
use dynprice_core::solver::LinearConstraint;
use dynprice_core::thompson::CovarianceMode;
use dynprice_core::Error as CoreError;
use serde::{Deserialize, Serialize};

/// A spec that failed to parse or validate. `field` is a dotted key path.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecError {
    pub field: Option<String>,
    pub message: String,
}

impl SpecError {
    fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: Some(field.into()),
            message: message.into(),
        }
    }
}

impl fmt::Display for SpecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.field {
            Some(field) => write!(f, "{field}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for SpecError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketSection {
    pub basket_size: usize,
    pub horizon: u32,
    pub gamma_range: [f64; 2],
    pub initial_price: f64,
    pub initial_forecast_range: [f64; 2],
    pub price_box: [f64; 2],
    pub decay: f64,
    pub base: f64,
    pub noise_std: f64,
    pub forecast_noise_std: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_rel_change: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linear_weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linear_bound: Option<f64>,
}

impl Default for MarketSection {
    fn default() -> Self {
        let m = MarketConfig::default();
        Self {
            basket_size: m.basket_size,
            horizon: m.horizon,
            gamma_range: [m.gamma_range.0, m.gamma_range.1],
            initial_price: m.initial_price,
            initial_forecast_range: [m.initial_forecast_range.0, m.initial_forecast_range.1],
            price_box: [m.price_box.0, m.price_box.1],
            decay: m.decay,
            base: m.base,
            noise_std: m.noise_std,
            forecast_noise_std: m.forecast_noise_std,
            max_rel_change: None,
            linear_weights: None,
            linear_bound: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PassiveSection {
    pub estimator: Estimator,
    pub window: usize,
    pub initial_elasticity: f64,
    pub clamp: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub huber_delta: Option<f64>,
}

impl Default for PassiveSection {
    fn default() -> Self {
        let p = PassiveConfig::default();
        Self {
            estimator: p.estimator,
            window: p.window,
            initial_elasticity: p.initial_elasticity,
            clamp: [p.clamp.lower, p.clamp.upper],
            huber_delta: p.huber_delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsSection {
    pub prior_mean: f64,
    pub prior_scale: f64,
    pub noise_var: f64,
    pub ridge: f64,
    pub max_rejections: usize,
    pub update_period: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<CovarianceMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eligibility_threshold: Option<f64>,
}

impl Default for TsSection {
    fn default() -> Self {
        let t = TsPolicyConfig::default();
        Self {
            prior_mean: t.prior_mean,
            prior_scale: t.prior_scale,
            noise_var: t.noise_var,
            ridge: t.ridge,
            max_rejections: t.max_rejections,
            update_period: t.update_period,
            mode: t.mode,
            eligibility_threshold: t.eligibility_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub trials: usize,
    pub seed: u64,
    pub policies: Vec<PolicyKind>,
    pub report_ks: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Inclusive 1-based day range for the policy comparison. Defaults to
    /// the second half of the horizon.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare_window: Option<[u32; 2]>,
    pub market: MarketSection,
    pub passive: PassiveSection,
    pub ts: TsSection,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            trials: 10,
            seed: 0,
            policies: vec![PolicyKind::Passive, PolicyKind::Ts],
            report_ks: dynprice_core::evaluation::DEFAULT_KS.to_vec(),
            output_dir: None,
            compare_window: None,
            market: MarketSection::default(),
            passive: PassiveSection::default(),
            ts: TsSection::default(),
        }
    }
}

fn core_field(section: &str, err: CoreError) -> SpecError {
    match err {
        CoreError::InvalidParameter { name, reason } => SpecError::field(format!("{section}.{name}"), reason),
        other => SpecError::field(section, other.to_string()),
    }
}

impl ExperimentSpec {
    pub fn market_config(&self) -> MarketConfig {
        let m = &self.market;
        let basket_linear = match (&m.linear_weights, m.linear_bound) {
            (Some(w), Some(b)) => Some(LinearConstraint {
                weights: w.clone(),
                bound: b,
            }),
            _ => None,
        };
        MarketConfig {
            basket_size: m.basket_size,
            horizon: m.horizon,
            gamma_range: (m.gamma_range[0], m.gamma_range[1]),
            initial_price: m.initial_price,
            initial_forecast_range: (m.initial_forecast_range[0], m.initial_forecast_range[1]),
            price_box: (m.price_box[0], m.price_box[1]),
            decay: m.decay,
            base: m.base,
            noise_std: m.noise_std,
            forecast_noise_std: m.forecast_noise_std,
            max_rel_change: m.max_rel_change,
            basket_linear,
            seed: self.seed,
        }
    }

    pub fn passive_config(&self) -> PassiveConfig {
        let p = &self.passive;
        PassiveConfig {
            estimator: p.estimator,
            window: p.window,
            initial_elasticity: p.initial_elasticity,
            clamp: ElasticityClamp {
                lower: p.clamp[0],
                upper: p.clamp[1],
            },
            huber_delta: p.huber_delta,
        }
    }

    pub fn ts_config(&self) -> TsPolicyConfig {
        let t = &self.ts;
        TsPolicyConfig {
            prior_mean: t.prior_mean,
            prior_scale: t.prior_scale,
            noise_var: t.noise_var,
            ridge: t.ridge,
            max_rejections: t.max_rejections,
            update_period: t.update_period,
            mode: t.mode,
            eligibility_threshold: t.eligibility_threshold,
            passive: self.passive_config(),
        }
    }

    pub fn policy_specs(&self) -> Vec<PolicySpec> {
        self.policies
            .iter()
            .map(|k| match k {
                PolicyKind::Passive => PolicySpec::Passive(self.passive_config()),
                PolicyKind::Ts => PolicySpec::Ts(self.ts_config()),
            })
            .collect()
    }

    /// Comparison window, defaulting to the second half of the horizon.
    pub fn compare_window(&self) -> (u32, u32) {
        match self.compare_window {
            Some([lo, hi]) => (lo, hi),
            None => (self.market.horizon / 2 + 1, self.market.horizon),
        }
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.trials < 1 {
            return Err(SpecError::field("trials", "trials must be ≥ 1"));
        }
        if self.policies.is_empty() {
            return Err(SpecError::field("policies", "at least one policy is required"));
        }
        for (i, p) in self.policies.iter().enumerate() {
            if self.policies[..i].contains(p) {
                return Err(SpecError::field("policies", format!("`{p}` is listed twice")));
            }
        }
        if self.report_ks.contains(&0) {
            return Err(SpecError::field("report_ks", "values must be positive"));
        }
        if self.report_ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SpecError::field("report_ks", "values must be strictly ascending"));
        }

        let m = &self.market;
        if m.gamma_range[0] >= 0.0 || m.gamma_range[1] >= 0.0 {
            return Err(SpecError::field(
                "market.gamma_range",
                format!(
                    "elasticities must be negative, got [{}, {}]",
                    m.gamma_range[0], m.gamma_range[1]
                ),
            ));
        }
        if m.price_box[1] < m.price_box[0] {
            return Err(SpecError::field(
                "market.price_box",
                format!("upper {} is below lower {}", m.price_box[1], m.price_box[0]),
            ));
        }
        match (&m.linear_weights, m.linear_bound) {
            (Some(_), None) | (None, Some(_)) => {
                return Err(SpecError::field(
                    "market.linear_weights",
                    "linear_weights and linear_bound must be given together",
                ))
            }
            _ => {}
        }
        if let Some(r) = m.max_rel_change {
            if !(r > 0.0 && r.is_finite()) {
                return Err(SpecError::field(
                    "market.max_rel_change",
                    format!("must be > 0, got {r}"),
                ));
            }
        }
        let market = self.market_config();
        market.validate().map_err(|e| core_field("market", e))?;
        if let Some(lc) = &market.basket_linear {
            market
                .constraints()
                .resolve(&vec![market.initial_price; market.basket_size])
                .map_err(|e| SpecError::field("market.linear_bound", format!("{e} ({} weights)", lc.weights.len())))?;
        }
        let (lo, hi) = self.compare_window();
        if !(lo >= 1 && lo <= hi && hi <= m.horizon) {
            return Err(SpecError::field(
                "compare_window",
                format!("need 1 <= start <= end <= horizon ({}), got [{lo}, {hi}]", m.horizon),
            ));
        }

        let p = &self.passive;
        ElasticityClamp::new(p.clamp[0], p.clamp[1]).map_err(|e| core_field("passive.clamp", e))?;
        if let Some(d) = p.huber_delta {
            if !(d > 0.0 && d.is_finite()) {
                return Err(SpecError::field("passive.huber_delta", format!("must be > 0, got {d}")));
            }
        }
        PassivePolicy::new(self.passive_config(), 1).map_err(|e| core_field("passive", e))?;

        let t = &self.ts;
        if t.prior_mean >= 0.0 || t.prior_mean.is_nan() {
            return Err(SpecError::field(
                "ts.prior_mean",
                format!("must be negative, got {}", t.prior_mean),
            ));
        }
        if let Some(th) = t.eligibility_threshold {
            if !(th >= 0.0 && th.is_finite()) {
                return Err(SpecError::field(
                    "ts.eligibility_threshold",
                    format!("must be >= 0, got {th}"),
                ));
            }
        }
        self.ts_config()
            .ts_config(m.basket_size)
            .validate()
            .map_err(|e| core_field("ts", e))?;
        Ok(())
    }
}

/// Parses and validates a spec.
pub fn parse_spec(text: &str) -> Result<ExperimentSpec, SpecError> {
    let spec: ExperimentSpec = toml::from_str(text).map_err(|e| SpecError {
        field: None,
        message: e.to_string().trim_end().to_string(),
    })?;
    spec.validate()?;
    Ok(spec)
}

pub fn render_spec(spec: &ExperimentSpec) -> String {
    toml::to_string(spec).expect("spec fields are all representable in TOML")
}
