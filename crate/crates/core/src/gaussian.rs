//! Closed-form Gaussian world: `X ~ N(mu, Sigma)`, `Y = beta'X + eps`.
//!
//! Provides exact conditionals (Schur complements), the perturbed
//! distributional imputer, the exact likelihood ratio between the true
//! mask-conditional law and the imputed-then-masked calibration law, and
//! oracle interval widths.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{McvError, Result};
use crate::missingness::MissingnessModel;
use crate::stats::normal_quantile;
use crate::tabular::{Mask, MaskedSample};

/// Regression coefficients of the reference synthetic world.
pub const REFERENCE_BETA: [f64; 10] = [1.0, 2.0, -1.0, 3.0, -0.5, -1.0, 0.3, 1.7, 0.4, -0.3];

const JITTER: f64 = 1e-10;

/// Cholesky factorisation, retried once with `1e-10` diagonal jitter.
pub(crate) fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let jittered = m + DMatrix::identity(m.nrows(), m.ncols()) * JITTER;
    Cholesky::new(jittered).ok_or_else(|| McvError::Numerical("covariance is not positive definite".into()))
}

/// Lower factor `L` with `L L' = cov`, falling back to a clipped eigen
/// decomposition for covariances that are only semi-definite.
fn sqrt_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Ok(c) = cholesky(cov) {
        return c.l();
    }
    let eig = cov.clone().symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals)
}

fn select(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

fn select2(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// A Gaussian over a subset of coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl ConditionalGaussian {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let l = sqrt_factor(&self.cov);
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample(StandardNormal));
        &self.mean + l * z
    }
}

/// Conditions `N(mean, cov)` on `given = values` and returns the law of the
/// `target` coordinates.
pub fn condition(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    target: &[usize],
    given: &[usize],
    values: &[f64],
) -> Result<ConditionalGaussian> {
    McvError::check_dim(given.len(), values.len())?;
    let mu_t = select(mean, target);
    let s_tt = select2(cov, target, target);
    if given.is_empty() {
        return Ok(ConditionalGaussian { mean: mu_t, cov: s_tt });
    }
    let mu_g = select(mean, given);
    let s_gg = select2(cov, given, given);
    let s_tg = select2(cov, target, given);
    let chol = cholesky(&s_gg).map_err(|_| McvError::Numerical("singular observed-block covariance".into()))?;
    let resid = DVector::from_column_slice(values) - mu_g;
    let mean = mu_t + &s_tg * chol.solve(&resid);
    let cov = s_tt - &s_tg * chol.solve(&s_tg.transpose());
    let cov = 0.5 * (&cov + cov.transpose());
    Ok(ConditionalGaussian { mean, cov })
}

/// Multivariate normal log-density with a cached factorisation.
#[derive(Clone, Debug)]
pub struct GaussianDensity {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl GaussianDensity {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let chol = cholesky(cov)?;
        let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let k = mean.len() as f64;
        let log_norm = -0.5 * (k * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(Self { mean, chol, log_norm })
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let r = DVector::from_column_slice(x) - &self.mean;
        let mut z = r.clone();
        self.chol.l().solve_lower_triangular_mut(&mut z);
        self.log_norm - 0.5 * z.norm_squared()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample(StandardNormal));
        (&self.mean + self.chol.l() * z).iter().copied().collect()
    }
}

/// The generative truth `X ~ N(mu, Sigma)`, `Y = beta'X + N(0, noise_var)`.
#[derive(Clone, Debug)]
pub struct GaussianModel {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    beta: DVector<f64>,
    noise_var: f64,
    sigma_l: DMatrix<f64>,
}

impl GaussianModel {
    pub fn new(mu: Vec<f64>, sigma: DMatrix<f64>, beta: Vec<f64>, noise_var: f64) -> Result<Self> {
        let d = mu.len();
        McvError::check_dim(d, beta.len())?;
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(McvError::DimensionMismatch { expected: d, got: sigma.nrows() });
        }
        if (&sigma - sigma.transpose()).abs().max() > 1e-12 {
            return Err(McvError::invalid("covariance must be symmetric"));
        }
        if noise_var <= 0.0 {
            return Err(McvError::invalid("noise variance must be positive"));
        }
        let sigma_l = cholesky(&sigma)?.l();
        Ok(Self { mu: DVector::from_vec(mu), sigma, beta: DVector::from_vec(beta), noise_var, sigma_l })
    }

    /// `Sigma = rho 11' + (1 - rho) I` with constant mean.
    pub fn equicorrelated(d: usize, mean: f64, rho: f64, beta: Vec<f64>, noise_var: f64) -> Result<Self> {
        let sigma = DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { rho });
        Self::new(vec![mean; d], sigma, beta, noise_var)
    }

    /// The reference world truncated to `d <= 10` covariates.
    pub fn reference(d: usize, rho: f64) -> Result<Self> {
        if d == 0 || d > REFERENCE_BETA.len() {
            return Err(McvError::invalid(format!("reference world supports 1..=10 covariates, got {d}")));
        }
        Self::equicorrelated(d, 1.0, rho, REFERENCE_BETA[..d].to_vec(), 1.0)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// Mean of `(X, Y)`.
    pub fn joint_mean(&self) -> DVector<f64> {
        let d = self.dim();
        let mut m = DVector::zeros(d + 1);
        m.rows_mut(0, d).copy_from(&self.mu);
        m[d] = self.beta.dot(&self.mu);
        m
    }

    /// Covariance of `(X, Y)`: `[[S, S b], [b'S, b'S b + s2]]`.
    pub fn joint_cov(&self) -> DMatrix<f64> {
        let d = self.dim();
        let sb = &self.sigma * &self.beta;
        let mut c = DMatrix::zeros(d + 1, d + 1);
        c.view_mut((0, 0), (d, d)).copy_from(&self.sigma);
        for i in 0..d {
            c[(i, d)] = sb[i];
            c[(d, i)] = sb[i];
        }
        c[(d, d)] = self.beta.dot(&sb) + self.noise_var;
        c
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, f64) {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample(StandardNormal));
        let x = &self.mu + &self.sigma_l * z;
        let eps: f64 = rng.sample(StandardNormal);
        let y = self.beta.dot(&x) + self.noise_var.sqrt() * eps;
        (x.iter().copied().collect(), y)
    }

    /// `n` i.i.d. draws of `(x, y)`.
    pub fn gen_joint<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<(Vec<f64>, f64)> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    /// Law of the unobserved covariates given the observed ones and,
    /// optionally, the response.
    pub fn conditional(&self, obs_idx: &[usize], obs_vals: &[f64], y: Option<f64>) -> Result<ConditionalGaussian> {
        let d = self.dim();
        if obs_idx.iter().any(|&i| i >= d) {
            return Err(McvError::invalid("observed index out of range"));
        }
        let target: Vec<usize> = (0..d).filter(|i| !obs_idx.contains(i)).collect();
        if target.is_empty() {
            return Err(McvError::invalid("nothing left to condition: every covariate is observed"));
        }
        let mut given = obs_idx.to_vec();
        let mut values = obs_vals.to_vec();
        if let Some(y) = y {
            given.push(d);
            values.push(y);
        }
        condition(&self.joint_mean(), &self.joint_cov(), &target, &given, &values)
    }

    /// `Var(Y | X_obs(m))` via the missing block's conditional covariance.
    pub fn response_conditional_var(&self, m: &Mask) -> Result<f64> {
        McvError::check_dim(self.dim(), m.len())?;
        let mis = m.missing();
        if mis.is_empty() {
            return Ok(self.noise_var);
        }
        let obs = m.observed();
        let cond = condition(&self.mu, &self.sigma, &mis, &obs, select(&self.mu, &obs).as_slice())?;
        let b_mis = select(&self.beta, &mis);
        Ok(b_mis.dot(&(&cond.cov * &b_mis)) + self.noise_var)
    }

    /// Mean and variance of `Y | X_obs(m) = x_obs`.
    pub fn response_conditional(&self, m: &Mask, x_obs: &[f64]) -> Result<(f64, f64)> {
        McvError::check_dim(self.dim(), m.len())?;
        let obs = m.observed();
        McvError::check_dim(obs.len(), x_obs.len())?;
        let mis = m.missing();
        let mut mean: f64 = obs.iter().zip(x_obs).map(|(&j, v)| self.beta[j] * v).sum();
        if mis.is_empty() {
            return Ok((mean, self.noise_var));
        }
        let cond = condition(&self.mu, &self.sigma, &mis, &obs, x_obs)?;
        let b_mis = select(&self.beta, &mis);
        mean += b_mis.dot(&cond.mean);
        Ok((mean, b_mis.dot(&(&cond.cov * &b_mis)) + self.noise_var))
    }

    /// Width of the shortest interval with `1 - alpha` coverage given the
    /// observed covariates, for an MCAR mask.
    pub fn oracle_width(&self, m: &Mask, alpha: f64) -> Result<f64> {
        let var = self.response_conditional_var(m)?;
        Ok(2.0 * normal_quantile(1.0 - alpha / 2.0) * var.sqrt())
    }
}

/// Distortion applied to the exact conditional: mean `scale * mu + bias`,
/// covariance `Sigma + inflation * I`.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbSpec {
    pub scale: f64,
    /// Per-covariate bias (length `d`); only missing coordinates use it.
    pub bias: Vec<f64>,
    pub inflation: f64,
}

impl PerturbSpec {
    pub fn uniform(scale: f64, bias: f64, inflation: f64, d: usize) -> Self {
        Self { scale, bias: vec![bias; d], inflation }
    }

    pub fn exact(d: usize) -> Self {
        Self::uniform(1.0, 0.0, 0.0, d)
    }

    pub fn is_exact(&self) -> bool {
        self.scale == 1.0 && self.inflation == 0.0 && self.bias.iter().all(|&b| b == 0.0)
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        McvError::check_dim(d, self.bias.len())?;
        if self.scale <= 0.0 || self.inflation < 0.0 {
            return Err(McvError::invalid("perturbation needs scale > 0 and inflation >= 0"));
        }
        Ok(())
    }
}

/// Draws the missing block from the perturbed conditional given
/// `(x_obs, y)`. Observed coordinates are copied unchanged.
pub fn perturbed_impute<R: Rng + ?Sized>(
    sample: &MaskedSample,
    model: &GaussianModel,
    spec: &PerturbSpec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    McvError::check_dim(model.dim(), sample.dim())?;
    let mut out: Vec<f64> = sample.x().iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    let mis = sample.mask().missing();
    if mis.is_empty() {
        return Ok(out);
    }
    let obs = sample.mask().observed();
    let cond = model.conditional(&obs, &sample.observed_values(), Some(sample.y()))?;
    let mean = DVector::from_iterator(mis.len(), mis.iter().enumerate().map(|(k, &j)| spec.scale * cond.mean[k] + spec.bias[j]));
    let cov = cond.cov + DMatrix::identity(mis.len(), mis.len()) * spec.inflation;
    let draw = ConditionalGaussian { mean, cov }.sample(rng);
    for (k, &j) in mis.iter().enumerate() {
        out[j] = draw[k];
    }
    Ok(out)
}

/// Gaussian world plus the perturbed imputer and an MCAR law for the
/// calibration masks: everything needed to write `Q_m` in closed form.
#[derive(Clone, Debug)]
pub struct PerturbedWorld {
    model: GaussianModel,
    perturb: PerturbSpec,
    mask_law: Vec<(Mask, f64)>,
}

impl PerturbedWorld {
    pub fn new(model: GaussianModel, perturb: PerturbSpec, mechanism: &MissingnessModel) -> Result<Self> {
        let d = model.dim();
        perturb.validate(d)?;
        let mask_law: Vec<(Mask, f64)> = Mask::enumerate(d, false)
            .into_iter()
            .map(|m| {
                let p = mechanism
                    .mcar_mask_probability(&m)
                    .ok_or_else(|| McvError::invalid("the exact likelihood ratio needs an MCAR mechanism"))?;
                Ok((m, p))
            })
            .filter(|r: &Result<(Mask, f64)>| r.as_ref().map_or(true, |(_, p)| *p > 0.0))
            .collect::<Result<_>>()?;
        Ok(Self { model, perturb, mask_law })
    }

    pub fn model(&self) -> &GaussianModel {
        &self.model
    }

    pub fn perturb(&self) -> &PerturbSpec {
        &self.perturb
    }

    pub fn mask_law(&self) -> &[(Mask, f64)] {
        &self.mask_law
    }

    pub fn impute<R: Rng + ?Sized>(&self, sample: &MaskedSample, rng: &mut R) -> Result<Vec<f64>> {
        perturbed_impute(sample, &self.model, &self.perturb, rng)
    }

    /// Mean and covariance of `(X_hat, Y)` for a calibration point whose own
    /// mask is `cal_mask`.
    pub fn imputed_joint(&self, cal_mask: &Mask) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let d = self.model.dim();
        let mean = self.model.joint_mean();
        let cov = self.model.joint_cov();
        let u = cal_mask.missing();
        if u.is_empty() {
            return Ok((mean, cov));
        }
        let mut z = cal_mask.observed();
        z.push(d);
        let s_zz = select2(&cov, &z, &z);
        let s_uz = select2(&cov, &u, &z);
        let s_uu = select2(&cov, &u, &u);
        let chol = cholesky(&s_zz)?;
        // A = S_uz S_zz^-1, so A S_zu = S_uz S_zz^-1 S_zu.
        let a_szu = &s_uz * chol.solve(&s_uz.transpose());
        let cond_cov = &s_uu - &a_szu;
        let alpha = self.perturb.scale;
        let mut m_hat = mean.clone();
        for &j in &u {
            m_hat[j] = alpha * mean[j] + self.perturb.bias[j];
        }
        let mut c_hat = cov.clone();
        for (a, &i) in u.iter().enumerate() {
            for (b, &k) in z.iter().enumerate() {
                c_hat[(i, k)] = alpha * s_uz[(a, b)];
                c_hat[(k, i)] = c_hat[(i, k)];
            }
            for (b, &k) in u.iter().enumerate() {
                let infl = if a == b { self.perturb.inflation } else { 0.0 };
                c_hat[(i, k)] = alpha * alpha * a_szu[(a, b)] + cond_cov[(a, b)] + infl;
            }
        }
        Ok((m_hat, 0.5 * (&c_hat + c_hat.transpose())))
    }

    /// Builds the closed-form `P_m` and mixture `Q_m` on `(x_obs(m), y)`.
    pub fn ratio_for_mask(&self, m: &Mask) -> Result<MaskLogRatio> {
        let d = self.model.dim();
        McvError::check_dim(d, m.len())?;
        let mut keep = m.observed();
        keep.push(d);
        let mean = self.model.joint_mean();
        let cov = self.model.joint_cov();
        let p = GaussianDensity::new(select(&mean, &keep), &select2(&cov, &keep, &keep))?;

        // Calibration masks that never impute an obs(m) coordinate reproduce
        // P_m exactly; they are pooled into one component.
        let mut exact_weight = 0.0;
        let mut components = Vec::new();
        for (cal_mask, w) in &self.mask_law {
            let touches_obs = cal_mask.missing().iter().any(|j| !m.is_missing(*j));
            if !touches_obs || self.perturb.is_exact() {
                exact_weight += w;
                continue;
            }
            let (mh, ch) = self.imputed_joint(cal_mask)?;
            components.push((*w, GaussianDensity::new(select(&mh, &keep), &select2(&ch, &keep, &keep))?));
        }
        if exact_weight > 0.0 {
            components.push((exact_weight, p.clone()));
        }
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        let components = components.into_iter().map(|(w, g)| ((w / total).ln(), w / total, g)).collect();
        let upper = if exact_weight > 0.0 { total / exact_weight } else { f64::INFINITY };
        Ok(MaskLogRatio { p, q: components, upper })
    }
}

/// `log dP_m/dQ_m` for one test mask.
#[derive(Clone, Debug)]
pub struct MaskLogRatio {
    p: GaussianDensity,
    q: Vec<(f64, f64, GaussianDensity)>,
    upper: f64,
}

impl MaskLogRatio {
    /// `z` holds the observed covariates of the mask followed by `y`.
    pub fn log_ratio(&self, z: &[f64]) -> f64 {
        let lp = self.p.log_pdf(z);
        let terms: Vec<f64> = self.q.iter().map(|(lw, _, g)| lw + g.log_pdf(z)).collect();
        let mx = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lq = mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln();
        lp - lq
    }

    /// The log ratio along `y` with the observed covariates fixed. Every
    /// Gaussian log-density is quadratic in `y`, so three evaluations pin it.
    pub fn profile(&self, x_obs: &[f64]) -> LogRatioProfile {
        let quad = |g: &GaussianDensity| {
            let mut z = x_obs.to_vec();
            z.push(0.0);
            let k = z.len() - 1;
            let f0 = g.log_pdf(&z);
            z[k] = 1.0;
            let f1 = g.log_pdf(&z);
            z[k] = -1.0;
            let fm = g.log_pdf(&z);
            [0.5 * (f1 + fm) - f0, 0.5 * (f1 - fm), f0]
        };
        LogRatioProfile { p: quad(&self.p), q: self.q.iter().map(|(lw, _, g)| (*lw, quad(g))).collect() }
    }

    /// Supremum of the ratio over the whole space.
    pub fn upper_bound(&self) -> f64 {
        self.upper
    }

    pub fn sample_p<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.p.sample(rng)
    }

    pub fn sample_q<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (_, w, g) in &self.q {
            acc += w;
            if u < acc {
                return g.sample(rng);
            }
        }
        self.q.last().expect("at least one component").2.sample(rng)
    }
}

/// Quadratic-in-`y` form of [`MaskLogRatio::log_ratio`] for fixed `x_obs`.
#[derive(Clone, Debug)]
pub struct LogRatioProfile {
    p: [f64; 3],
    q: Vec<(f64, [f64; 3])>,
}

impl LogRatioProfile {
    pub fn log_ratio(&self, y: f64) -> f64 {
        let ev = |c: &[f64; 3]| (c[0] * y + c[1]) * y + c[2];
        let mut mx = f64::NEG_INFINITY;
        let terms: Vec<f64> = self
            .q
            .iter()
            .map(|(lw, c)| {
                let t = lw + ev(c);
                mx = mx.max(t);
                t
            })
            .collect();
        let lq = mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln();
        ev(&self.p) - lq
    }
}

/// Exact `log omega_m(x_obs, y)` in the perturbed Gaussian world.
pub fn exact_log_ratio(world: &PerturbedWorld, m: &Mask, x_obs: &[f64], y: f64) -> Result<f64> {
    McvError::check_dim(world.model().dim() - m.n_missing(), x_obs.len())?;
    let mut z = x_obs.to_vec();
    z.push(y);
    Ok(world.ratio_for_mask(m)?.log_ratio(&z))
}
