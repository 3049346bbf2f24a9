//! Iterative Bayesian-linear imputation (chained equations).
//!
//! Each feature is regressed on every other feature (plus the response when
//! `use_response` is set) with a conjugate-normal posterior. Distributional
//! mode draws missing cells from the posterior predictive; deterministic mode
//! plugs in predictive means.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{McvError, Result};
use crate::gaussian::{cholesky, PerturbedWorld};
use crate::rng::McvRng;
use crate::tabular::{Dataset, MaskedSample};

/// Anything that completes a masked sample without touching observed cells.
pub trait Impute: Send + Sync {
    fn impute(&self, sample: &MaskedSample, rng: &mut McvRng) -> Result<Vec<f64>>;
}

impl Impute for PerturbedWorld {
    fn impute(&self, sample: &MaskedSample, rng: &mut McvRng) -> Result<Vec<f64>> {
        PerturbedWorld::impute(self, sample, rng)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImputeMode {
    Distributional,
    Deterministic,
}

impl ImputeMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "distributional" => Ok(Self::Distributional),
            "deterministic" => Ok(Self::Deterministic),
            other => Err(McvError::Config(format!(
                "unknown imputer mode '{other}' (expected distributional or deterministic)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Distributional => "distributional",
            Self::Deterministic => "deterministic",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImputerConfig {
    pub mode: ImputeMode,
    pub use_response: bool,
    pub n_rounds: usize,
    pub prior_precision: f64,
}

impl Default for ImputerConfig {
    fn default() -> Self {
        Self { mode: ImputeMode::Distributional, use_response: true, n_rounds: 5, prior_precision: 1e-6 }
    }
}

/// Posterior of one feature's regression: `coef ~ N(mean, cov)`,
/// residual variance `noise_var`. Design is `[1, x_-j, (y)]`.
#[derive(Clone, Debug)]
pub struct FeaturePosterior {
    pub coef_mean: DVector<f64>,
    pub coef_cov: DMatrix<f64>,
    pub noise_var: f64,
}

impl FeaturePosterior {
    fn predictive(&self, design: &DVector<f64>) -> (f64, f64) {
        let mean = self.coef_mean.dot(design);
        let var = self.noise_var + design.dot(&(&self.coef_cov * design));
        (mean, var.max(0.0))
    }
}

#[derive(Clone, Debug)]
pub struct Imputer {
    config: ImputerConfig,
    dim: usize,
    col_means: Vec<f64>,
    posteriors: Vec<FeaturePosterior>,
}

fn design_row(row: &[f64], j: usize, y: f64, use_response: bool) -> DVector<f64> {
    let mut v = Vec::with_capacity(row.len() + 1);
    v.push(1.0);
    v.extend(row.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, x)| *x));
    if use_response {
        v.push(y);
    }
    DVector::from_vec(v)
}

fn fit_posterior(rows: &[DVector<f64>], targets: &[f64], prior_precision: f64) -> Result<FeaturePosterior> {
    let n = rows.len();
    let p = rows[0].len();
    let x = DMatrix::from_fn(n, p, |i, k| rows[i][k]);
    let t = DVector::from_column_slice(targets);
    let precision = x.transpose() * &x + DMatrix::identity(p, p) * prior_precision;
    let chol = cholesky(&precision)?;
    let coef_mean = chol.solve(&(x.transpose() * &t));
    let resid = &t - &x * &coef_mean;
    let dof = if n > p { n - p } else { n };
    let noise_var = (resid.norm_squared() / dof as f64).max(1e-12);
    let coef_cov = chol.inverse() * noise_var;
    Ok(FeaturePosterior { coef_mean, coef_cov, noise_var })
}

fn draw(mode: ImputeMode, mean: f64, var: f64, rng: &mut McvRng) -> f64 {
    match mode {
        ImputeMode::Deterministic => mean,
        ImputeMode::Distributional => {
            let z: f64 = rng.sample(StandardNormal);
            mean + var.sqrt() * z
        }
    }
}

/// Fits the chained-equation imputer on the training split.
pub fn fit_imputer(train: &Dataset, config: &ImputerConfig, rng: &mut McvRng) -> Result<Imputer> {
    if train.is_empty() {
        return Err(McvError::InsufficientData("empty training set for the imputer".into()));
    }
    if config.n_rounds == 0 {
        return Err(McvError::invalid("imputer needs at least one round"));
    }
    let d = train.dim();
    let needed = d.max(10);
    let samples = train.samples();
    let mut col_means = vec![0.0; d];
    for (j, mean) in col_means.iter_mut().enumerate() {
        let vals: Vec<f64> = samples.iter().filter_map(|s| s.x()[j]).collect();
        if vals.len() < needed {
            return Err(McvError::InsufficientData(format!(
                "feature {j} observed {} times, need at least {needed}",
                vals.len()
            )));
        }
        *mean = vals.iter().sum::<f64>() / vals.len() as f64;
    }

    let mut work: Vec<Vec<f64>> =
        samples.iter().map(|s| s.x().iter().enumerate().map(|(j, v)| v.unwrap_or(col_means[j])).collect()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.y()).collect();
    let mut posteriors = Vec::new();
    for _ in 0..config.n_rounds {
        posteriors.clear();
        for j in 0..d {
            let obs: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].x()[j].is_some()).collect();
            let rows: Vec<DVector<f64>> =
                obs.iter().map(|&i| design_row(&work[i], j, ys[i], config.use_response)).collect();
            let targets: Vec<f64> = obs.iter().map(|&i| work[i][j]).collect();
            let post = fit_posterior(&rows, &targets, config.prior_precision)?;
            for i in 0..samples.len() {
                if samples[i].x()[j].is_none() {
                    let (m, v) = post.predictive(&design_row(&work[i], j, ys[i], config.use_response));
                    work[i][j] = draw(config.mode, m, v, rng);
                }
            }
            posteriors.push(post);
        }
    }
    Ok(Imputer { config: config.clone(), dim: d, col_means, posteriors })
}

impl Imputer {
    pub fn config(&self) -> &ImputerConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn posterior(&self, feature: usize) -> &FeaturePosterior {
        &self.posteriors[feature]
    }

    /// Same imputer with a different mode.
    pub fn with_mode(&self, mode: ImputeMode) -> Self {
        let mut out = self.clone();
        out.config.mode = mode;
        out
    }
}

impl Impute for Imputer {
    fn impute(&self, sample: &MaskedSample, rng: &mut McvRng) -> Result<Vec<f64>> {
        McvError::check_dim(self.dim, sample.dim())?;
        let mut x: Vec<f64> = sample.x().iter().enumerate().map(|(j, v)| v.unwrap_or(self.col_means[j])).collect();
        let mis = sample.mask().missing();
        if mis.is_empty() {
            return Ok(x);
        }
        for _ in 0..self.config.n_rounds {
            for &j in &mis {
                let (m, v) = self.posteriors[j].predictive(&design_row(&x, j, sample.y(), self.config.use_response));
                x[j] = draw(self.config.mode, m, v, rng);
            }
        }
        Ok(x)
    }
}
