//! Gaussian posterior over the basket elasticity vector and the
//! sample-solve-observe-update loop of Thompson-sampling pricing.
//!
//! Observed basket revenue is modelled as `R = gamma . theta + R_bar + noise`
//! (see [`crate::demand::likelihood_features`]), which makes the posterior
//! conjugate: each observation is one Bayesian linear-regression update.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::demand::{ItemState, LikelihoodFeatures};
use crate::error::{Error, Result};
use crate::solver::{self, ConstraintSet};

pub const DEFAULT_MAX_REJECTIONS: usize = 1000;
/// Baskets larger than this default to the diagonal approximation.
pub const DIAGONAL_MODE_THRESHOLD: usize = 500;
pub const NOISE_VAR_FLOOR: f64 = 1e-6;
/// Upper bound used when rejection sampling gives up and falls back to the mean.
pub const FALLBACK_CEILING: f64 = -0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    Full,
    Diagonal,
}

impl CovarianceMode {
    pub fn default_for(basket_size: usize) -> Self {
        if basket_size > DIAGONAL_MODE_THRESHOLD {
            CovarianceMode::Diagonal
        } else {
            CovarianceMode::Full
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Full(DMatrix<f64>),
    Diagonal(DVector<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsConfig {
    pub prior_mean: Vec<f64>,
    /// `c` in the prior covariance `c * I`.
    pub prior_scale: f64,
    pub noise_var: f64,
    /// Extra precision added on every update. Zero gives exact conjugate updates.
    pub ridge: f64,
    pub max_rejections: usize,
    /// Days between posterior updates; pending observations are applied in order.
    pub update_period: u32,
    pub mode: CovarianceMode,
}

impl TsConfig {
    pub fn new(prior_mean: Vec<f64>, prior_scale: f64, noise_var: f64) -> Self {
        let mode = CovarianceMode::default_for(prior_mean.len());
        Self {
            prior_mean,
            prior_scale,
            noise_var,
            ridge: 0.0,
            max_rejections: DEFAULT_MAX_REJECTIONS,
            update_period: 1,
            mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.prior_scale > 0.0 && self.prior_scale.is_finite()) {
            return Err(Error::invalid(
                "prior_scale",
                format!("must be > 0, got {}", self.prior_scale),
            ));
        }
        if !(self.noise_var > 0.0 && self.noise_var.is_finite()) {
            return Err(Error::invalid(
                "noise_var",
                format!("must be > 0, got {}", self.noise_var),
            ));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::invalid("ridge", format!("must be >= 0, got {}", self.ridge)));
        }
        if self.max_rejections < 1 {
            return Err(Error::invalid("max_rejections", "must be >= 1"));
        }
        if self.update_period < 1 {
            return Err(Error::invalid("update_period", "must be >= 1"));
        }
        if self.prior_mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("prior_mean", "entries must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElasticityPosterior {
    mean: DVector<f64>,
    covariance: Covariance,
    noise_var: f64,
    ridge: f64,
    /// Number of observations absorbed so far.
    day: u64,
}

pub fn init_posterior(config: &TsConfig, basket_size: usize) -> Result<ElasticityPosterior> {
    config.validate()?;
    if config.prior_mean.len() != basket_size {
        return Err(Error::LengthMismatch {
            expected: basket_size,
            actual: config.prior_mean.len(),
        });
    }
    let b = basket_size;
    let covariance = match config.mode {
        CovarianceMode::Full => Covariance::Full(DMatrix::identity(b, b) * config.prior_scale),
        CovarianceMode::Diagonal => Covariance::Diagonal(DVector::from_element(b, config.prior_scale)),
    };
    Ok(ElasticityPosterior {
        mean: DVector::from_vec(config.prior_mean.clone()),
        covariance,
        noise_var: config.noise_var,
        ridge: config.ridge,
        day: 0,
    })
}

impl ElasticityPosterior {
    pub fn from_parts(mean: Vec<f64>, covariance: Covariance, noise_var: f64, ridge: f64, day: u64) -> Result<Self> {
        let b = mean.len();
        match &covariance {
            Covariance::Full(m) => {
                if m.nrows() != b || m.ncols() != b {
                    return Err(Error::LengthMismatch {
                        expected: b,
                        actual: m.nrows(),
                    });
                }
                if m.clone().cholesky().is_none() || (m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
                    return Err(Error::NotPositiveDefinite);
                }
            }
            Covariance::Diagonal(d) => {
                if d.len() != b {
                    return Err(Error::LengthMismatch {
                        expected: b,
                        actual: d.len(),
                    });
                }
                if d.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::NotPositiveDefinite);
                }
            }
        }
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(Error::invalid("noise_var", format!("must be > 0, got {noise_var}")));
        }
        if !(ridge >= 0.0) {
            return Err(Error::invalid("ridge", format!("must be >= 0, got {ridge}")));
        }
        Ok(Self {
            mean: DVector::from_vec(mean),
            covariance,
            noise_var,
            ridge,
            day,
        })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &Covariance {
        &self.covariance
    }

    pub fn mode(&self) -> CovarianceMode {
        match self.covariance {
            Covariance::Full(_) => CovarianceMode::Full,
            Covariance::Diagonal(_) => CovarianceMode::Diagonal,
        }
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn set_noise_var(&mut self, noise_var: f64) {
        self.noise_var = noise_var.max(NOISE_VAR_FLOOR);
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn day(&self) -> u64 {
        self.day
    }

    /// Covariance as a dense matrix (diagonal mode expands).
    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        match &self.covariance {
            Covariance::Full(m) => m.clone(),
            Covariance::Diagonal(d) => DMatrix::from_diagonal(d),
        }
    }

    /// The mean with every coordinate capped at [`FALLBACK_CEILING`].
    pub fn truncated_mean(&self) -> Vec<f64> {
        self.mean.iter().map(|m| m.min(FALLBACK_CEILING)).collect()
    }
}

/// Reusable sampler holding the covariance square root.
pub struct PosteriorSampler<'a> {
    posterior: &'a ElasticityPosterior,
    factor: SqrtCov,
}

enum SqrtCov {
    Lower(DMatrix<f64>),
    Diag(DVector<f64>),
}

impl<'a> PosteriorSampler<'a> {
    pub fn new(posterior: &'a ElasticityPosterior) -> Result<Self> {
        let factor = match &posterior.covariance {
            Covariance::Full(m) => SqrtCov::Lower(m.clone().cholesky().ok_or(Error::NotPositiveDefinite)?.unpack()),
            Covariance::Diagonal(d) => SqrtCov::Diag(d.map(f64::sqrt)),
        };
        Ok(Self { posterior, factor })
    }

    /// One unconstrained Gaussian draw.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let b = self.posterior.len();
        let z = DVector::from_fn(b, |_, _| rng.sample::<f64, _>(StandardNormal));
        match &self.factor {
            SqrtCov::Lower(l) => &self.posterior.mean + l * z,
            SqrtCov::Diag(s) => &self.posterior.mean + s.component_mul(&z),
        }
    }

    /// Draws until every coordinate is negative, up to `max_attempts` draws.
    pub fn sample_negative<R: Rng + ?Sized>(&self, rng: &mut R, max_attempts: usize) -> Result<Sample> {
        for attempt in 1..=max_attempts {
            let g = self.draw(rng);
            if g.iter().all(|v| *v < 0.0) {
                return Ok(Sample {
                    gamma: g.as_slice().to_vec(),
                    attempts: attempt,
                });
            }
        }
        Err(Error::RejectionLimit { attempts: max_attempts })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub gamma: Vec<f64>,
    /// Draws consumed, including the accepted one.
    pub attempts: usize,
}

/// Rejection sample from the posterior restricted to the negative orthant.
pub fn sample_elasticities<R: Rng + ?Sized>(
    posterior: &ElasticityPosterior,
    rng: &mut R,
    max_rejections: usize,
) -> Result<Sample> {
    PosteriorSampler::new(posterior)?.sample_negative(rng, max_rejections)
}

/// Conjugate update with one day's revenue observation.
///
/// Full mode: `Sigma' = (Sigma^-1 + theta theta^T / s2 + ridge I)^-1`,
/// `mu' = Sigma' (Sigma^-1 mu + (R - R_bar) theta / s2)`. With zero ridge this
/// is evaluated in rank-one (Sherman-Morrison) form. Diagonal mode keeps
/// only the diagonal of the rank-one precision term and costs O(B).
pub fn posterior_update(
    posterior: &ElasticityPosterior,
    features: &LikelihoodFeatures,
    observed_revenue: f64,
) -> Result<ElasticityPosterior> {
    let mut next = posterior.clone();
    update_in_place(&mut next, features, observed_revenue)?;
    Ok(next)
}

pub fn update_in_place(
    posterior: &mut ElasticityPosterior,
    features: &LikelihoodFeatures,
    observed_revenue: f64,
) -> Result<()> {
    if !observed_revenue.is_finite() {
        return Err(Error::NonFiniteRevenue(observed_revenue));
    }
    let b = posterior.len();
    if features.theta.len() != b {
        return Err(Error::LengthMismatch {
            expected: b,
            actual: features.theta.len(),
        });
    }
    if features.theta.iter().any(|t| !t.is_finite()) || !features.baseline_revenue.is_finite() {
        return Err(Error::invalid("theta", "features must be finite"));
    }
    let s2 = posterior.noise_var;
    let lambda = posterior.ridge;
    let excess = observed_revenue - features.baseline_revenue;

    match &mut posterior.covariance {
        Covariance::Diagonal(var) => {
            for i in 0..b {
                let t = features.theta[i];
                let prior_prec = 1.0 / var[i];
                let prec = prior_prec + t * t / s2 + lambda;
                let v = 1.0 / prec;
                posterior.mean[i] = v * (prior_prec * posterior.mean[i] + excess * t / s2);
                var[i] = v;
            }
        }
        Covariance::Full(sigma) => {
            let theta = DVector::from_column_slice(&features.theta);
            if lambda == 0.0 {
                let st = &*sigma * &theta;
                let denom = s2 + theta.dot(&st);
                let residual = excess - theta.dot(&posterior.mean);
                posterior.mean += &st * (residual / denom);
                sigma.ger(-1.0 / denom, &st, &st, 1.0);
                symmetrize(sigma);
            } else {
                let prior_prec = sigma.clone().cholesky().ok_or(Error::NotPositiveDefinite)?.inverse();
                let mut prec = &prior_prec + (&theta * theta.transpose()) / s2;
                for i in 0..b {
                    prec[(i, i)] += lambda;
                }
                let chol = prec.cholesky().ok_or(Error::NotPositiveDefinite)?;
                let rhs = &prior_prec * &posterior.mean + &theta * (excess / s2);
                posterior.mean = chol.solve(&rhs);
                let mut cov = chol.inverse();
                symmetrize(&mut cov);
                *sigma = cov;
            }
        }
    }
    posterior.day += 1;
    Ok(())
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Prices chosen by one Thompson-sampling step.
#[derive(Debug, Clone, PartialEq)]
pub struct TsDecision {
    pub prices: Vec<f64>,
    pub sampled_gamma: Vec<f64>,
    /// Set when the rejection cap was hit and the truncated mean was used instead.
    pub fell_back: bool,
    pub attempts: usize,
}

/// Samples elasticities and solves the one-day revenue problem with them.
///
/// When the rejection cap is exceeded the step prices with the posterior mean
/// capped at [`FALLBACK_CEILING`].
pub fn ts_step<R: Rng + ?Sized>(
    posterior: &ElasticityPosterior,
    basket: &[ItemState],
    constraints: &ConstraintSet,
    max_rejections: usize,
    rng: &mut R,
) -> Result<TsDecision> {
    if basket.len() != posterior.len() {
        return Err(Error::LengthMismatch {
            expected: posterior.len(),
            actual: basket.len(),
        });
    }
    let (gamma, fell_back, attempts) = match sample_elasticities(posterior, rng, max_rejections) {
        Ok(s) => (s.gamma, false, s.attempts),
        Err(Error::RejectionLimit { attempts }) => (posterior.truncated_mean(), true, attempts),
        Err(e) => return Err(e),
    };
    let priced: Vec<ItemState> = basket
        .iter()
        .zip(&gamma)
        .map(|(item, g)| ItemState {
            elasticity: Some(*g),
            ..item.clone()
        })
        .collect();
    let solution = solver::solve(&priced, constraints)?;
    Ok(TsDecision {
        prices: solution.prices,
        sampled_gamma: gamma,
        fell_back,
        attempts,
    })
}

/// Unbiased sample variance of historical basket revenue.
pub fn estimate_noise_var(history: &[f64]) -> Result<f64> {
    let n = history.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, have: n });
    }
    let mean = history.iter().sum::<f64>() / n as f64;
    Ok(history.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64)
}

/// JSON checkpoint of a posterior. Covariance is row-major `B x B` in full
/// mode and the `B` diagonal entries in diagonal mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorCheckpoint {
    pub mode: CovarianceMode,
    pub basket_size: usize,
    pub mean: Vec<f64>,
    pub covariance: Vec<f64>,
    pub noise_var: f64,
    pub ridge: f64,
    pub day: u64,
}

impl From<&ElasticityPosterior> for PosteriorCheckpoint {
    fn from(p: &ElasticityPosterior) -> Self {
        let b = p.len();
        let covariance = match &p.covariance {
            // nalgebra is column-major; the transpose of a symmetric matrix is itself,
            // but write row-major explicitly so the format does not depend on that.
            Covariance::Full(m) => (0..b).flat_map(|i| (0..b).map(move |j| m[(i, j)])).collect(),
            Covariance::Diagonal(d) => d.as_slice().to_vec(),
        };
        Self {
            mode: p.mode(),
            basket_size: b,
            mean: p.mean.as_slice().to_vec(),
            covariance,
            noise_var: p.noise_var,
            ridge: p.ridge,
            day: p.day,
        }
    }
}

impl TryFrom<PosteriorCheckpoint> for ElasticityPosterior {
    type Error = Error;

    fn try_from(c: PosteriorCheckpoint) -> Result<Self> {
        let b = c.basket_size;
        if c.mean.len() != b {
            return Err(Error::Checkpoint(format!(
                "mean has {} entries, expected {b}",
                c.mean.len()
            )));
        }
        let covariance = match c.mode {
            CovarianceMode::Full => {
                if c.covariance.len() != b * b {
                    return Err(Error::Checkpoint(format!(
                        "covariance has {} entries, expected {}",
                        c.covariance.len(),
                        b * b
                    )));
                }
                Covariance::Full(DMatrix::from_row_slice(b, b, &c.covariance))
            }
            CovarianceMode::Diagonal => {
                if c.covariance.len() != b {
                    return Err(Error::Checkpoint(format!(
                        "covariance has {} entries, expected {b}",
                        c.covariance.len()
                    )));
                }
                Covariance::Diagonal(DVector::from_vec(c.covariance))
            }
        };
        ElasticityPosterior::from_parts(c.mean, covariance, c.noise_var, c.ridge, c.day)
    }
}

impl ElasticityPosterior {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(&PosteriorCheckpoint::from(self)).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: PosteriorCheckpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        c.try_into()
    }
}
