//! Likelihood-ratio surfaces `omega_m(x_obs, y)`: the exact Gaussian oracle,
//! the mask-discriminating classifier estimate, normalisation and controlled
//! log-normal perturbation.

use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::{Arc, OnceLock};

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{McvError, Result};
use crate::gaussian::{MaskLogRatio, PerturbedWorld};
use crate::models::{fit_classifier, ProbClassifier, TreeParams};
use crate::rng::{stream, McvRng};
use crate::stats;
use crate::tabular::{mask_apply, Mask};

/// Ratio of a test point's law to the imputed calibration law, per mask.
///
/// `x` is the test-side covariate vector with NA exactly on `mis(m)`.
pub trait RatioModel: Send + Sync {
    fn ratio(&self, m: &Mask, x: &[Option<f64>], y: f64) -> Result<f64>;

    /// `y -> omega_m(x, y)` for fixed `x`; implementations may precompute.
    fn profile<'a>(&'a self, m: &Mask, x: &[Option<f64>]) -> Result<Box<dyn Fn(f64) -> f64 + Send + Sync + 'a>> {
        self.ratio(m, x, 0.0)?;
        let (m, x) = (m.clone(), x.to_vec());
        Ok(Box::new(move |y| self.ratio(&m, &x, y).unwrap_or(0.0)))
    }

    /// Known supremum of the ratio for mask `m`, if any.
    fn upper_bound(&self, _m: &Mask) -> Option<f64> {
        None
    }
}

fn observed(m: &Mask, x: &[Option<f64>]) -> Result<Vec<f64>> {
    McvError::check_dim(m.len(), x.len())?;
    m.observed()
        .into_iter()
        .map(|j| x[j].ok_or_else(|| McvError::invalid(format!("coordinate {j} is observed under the mask but NA"))))
        .collect()
}

/// `omega = c` everywhere; `c = 1` is the uncorrected pipeline.
#[derive(Clone, Copy, Debug)]
pub struct ConstantRatio(pub f64);

impl RatioModel for ConstantRatio {
    fn ratio(&self, _m: &Mask, _x: &[Option<f64>], _y: f64) -> Result<f64> {
        Ok(self.0)
    }

    fn upper_bound(&self, _m: &Mask) -> Option<f64> {
        Some(self.0)
    }
}

/// Closed-form ratio in the perturbed Gaussian world; per-mask mixtures are
/// built on first use.
pub struct ExactRatio {
    world: Arc<PerturbedWorld>,
    cache: Vec<OnceLock<std::result::Result<MaskLogRatio, String>>>,
}

impl ExactRatio {
    pub fn new(world: Arc<PerturbedWorld>) -> Self {
        let n = 1usize << world.model().dim();
        Self { world, cache: (0..n).map(|_| OnceLock::new()).collect() }
    }

    pub fn world(&self) -> &PerturbedWorld {
        &self.world
    }

    pub fn for_mask(&self, m: &Mask) -> Result<&MaskLogRatio> {
        McvError::check_dim(self.world.model().dim(), m.len())?;
        self.cache[m.index()]
            .get_or_init(|| self.world.ratio_for_mask(m).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| McvError::Numerical(e.clone()))
    }
}

impl RatioModel for ExactRatio {
    fn ratio(&self, m: &Mask, x: &[Option<f64>], y: f64) -> Result<f64> {
        let mut z = observed(m, x)?;
        z.push(y);
        Ok(self.for_mask(m)?.log_ratio(&z).exp())
    }

    fn profile<'a>(&'a self, m: &Mask, x: &[Option<f64>]) -> Result<Box<dyn Fn(f64) -> f64 + Send + Sync + 'a>> {
        let prof = self.for_mask(m)?.profile(&observed(m, x)?);
        Ok(Box::new(move |y| prof.log_ratio(y).exp()))
    }

    fn upper_bound(&self, m: &Mask) -> Option<f64> {
        self.for_mask(m).ok().map(MaskLogRatio::upper_bound)
    }
}

/// Source of the random masks paired with each training point.
#[derive(Clone, Debug, PartialEq)]
pub enum MaskSampler {
    /// Resample the training set's own masks.
    Empirical,
    /// Independent Bernoulli bits, fully-missing pattern redrawn.
    Bernoulli(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatioTrainSpec {
    pub q: usize,
    pub sampler: MaskSampler,
}

impl Default for RatioTrainSpec {
    fn default() -> Self {
        Self { q: 5, sampler: MaskSampler::Empirical }
    }
}

/// One imputed training point: completed covariates, its true mask, response.
#[derive(Clone, Debug)]
pub struct ImputedPoint {
    pub x: Vec<f64>,
    pub mask: Mask,
    pub y: f64,
}

fn bernoulli_mask(d: usize, p: f64, rng: &mut McvRng) -> Mask {
    loop {
        let m = Mask::new((0..d).map(|_| rng.random::<f64>() < p).collect());
        if !m.is_full() || d == 0 {
            return m;
        }
    }
}

/// Classifier rows `((mask(x_hat, m_check), y), 1{m_check == m})`.
pub fn build_ratio_dataset(
    train: &[ImputedPoint],
    spec: &RatioTrainSpec,
    rng: &mut McvRng,
) -> Result<Vec<(Vec<Option<f64>>, bool)>> {
    if spec.q < 1 {
        return Err(McvError::invalid("q must be at least 1"));
    }
    if train.is_empty() {
        return Err(McvError::InsufficientData("no training points for ratio estimation".into()));
    }
    if let MaskSampler::Bernoulli(p) = spec.sampler {
        if !(0.0..1.0).contains(&p) {
            return Err(McvError::invalid("Bernoulli mask probability must lie in [0, 1)"));
        }
    }
    let d = train[0].x.len();
    let masks: Vec<&Mask> = train.iter().map(|p| &p.mask).collect();
    let mut rows = Vec::with_capacity(train.len() * spec.q);
    for p in train {
        McvError::check_dim(d, p.x.len())?;
        for _ in 0..spec.q {
            let m = match spec.sampler {
                MaskSampler::Empirical => (*masks.choose(rng).expect("nonempty")).clone(),
                MaskSampler::Bernoulli(prob) => bernoulli_mask(d, prob, rng),
            };
            let mut feats = mask_apply(&p.x, &m)?;
            feats.push(Some(p.y));
            rows.push((feats, m == p.mask));
        }
    }
    Ok(rows)
}

/// `p / (1 - p)` of the mask-discriminating classifier.
#[derive(Clone, Debug)]
pub struct ClassifierRatio {
    clf: ProbClassifier,
}

impl ClassifierRatio {
    pub fn classifier(&self) -> &ProbClassifier {
        &self.clf
    }
}

fn odds(p: f64) -> f64 {
    p / (1.0 - p)
}

impl RatioModel for ClassifierRatio {
    fn ratio(&self, m: &Mask, x: &[Option<f64>], y: f64) -> Result<f64> {
        McvError::check_dim(m.len(), x.len())?;
        let mut feats = x.to_vec();
        feats.push(Some(y));
        Ok(odds(self.clf.predict_proba(&feats)?))
    }

    fn profile<'a>(&'a self, m: &Mask, x: &[Option<f64>]) -> Result<Box<dyn Fn(f64) -> f64 + Send + Sync + 'a>> {
        McvError::check_dim(m.len(), x.len())?;
        let prof = self.clf.profile_last(x)?;
        Ok(Box::new(move |y| odds(prof.prob(y))))
    }
}

/// Trains the mask classifier on imputed training data.
pub fn fit_ratio(train: &[ImputedPoint], spec: &RatioTrainSpec, params: &TreeParams, rng: &mut McvRng) -> Result<ClassifierRatio> {
    let data = build_ratio_dataset(train, spec, rng)?;
    let (rows, labels): (Vec<_>, Vec<_>) = data.into_iter().unzip();
    let clf = fit_classifier(&rows, &labels, params, rng)
        .map_err(|e| McvError::InsufficientData(format!("ratio training failed: {e}")))?;
    Ok(ClassifierRatio { clf })
}

/// A ratio divided by its empirical mean over the `m`-masked calibration set.
pub struct NormalizedRatio {
    inner: Arc<dyn RatioModel>,
    mask: Mask,
    constant: f64,
}

impl NormalizedRatio {
    pub fn constant(&self) -> f64 {
        self.constant
    }
}

pub fn estimate_normalizer(inner: Arc<dyn RatioModel>, cal_imputed: &[(Vec<f64>, f64)], m: &Mask) -> Result<NormalizedRatio> {
    if cal_imputed.is_empty() {
        return Err(McvError::InsufficientData("empty calibration set for normalisation".into()));
    }
    let mut total = 0.0;
    for (x, y) in cal_imputed {
        total += inner.ratio(m, &mask_apply(x, m)?, *y)?;
    }
    let constant = total / cal_imputed.len() as f64;
    if constant <= 0.0 || !constant.is_finite() {
        return Err(McvError::Numerical("ratio has zero empirical mean".into()));
    }
    Ok(NormalizedRatio { inner, mask: m.clone(), constant })
}

impl NormalizedRatio {
    fn check(&self, m: &Mask) -> Result<()> {
        if *m != self.mask {
            return Err(McvError::invalid(format!("ratio normalised for mask {}, queried with {m}", self.mask)));
        }
        Ok(())
    }
}

impl RatioModel for NormalizedRatio {
    fn ratio(&self, m: &Mask, x: &[Option<f64>], y: f64) -> Result<f64> {
        self.check(m)?;
        Ok(self.inner.ratio(m, x, y)? / self.constant)
    }

    fn profile<'a>(&'a self, m: &Mask, x: &[Option<f64>]) -> Result<Box<dyn Fn(f64) -> f64 + Send + Sync + 'a>> {
        self.check(m)?;
        let inner = self.inner.profile(m, x)?;
        Ok(Box::new(move |y| inner(y) / self.constant))
    }

    fn upper_bound(&self, m: &Mask) -> Option<f64> {
        self.inner.upper_bound(m).map(|b| b / self.constant)
    }
}

/// `log omega_tilde = log omega + sigma * eps`, with `eps ~ N(0, 1)` keyed
/// deterministically on the evaluation point.
pub struct PerturbedRatio {
    inner: Arc<dyn RatioModel>,
    sigma: f64,
    seed: u64,
}

impl PerturbedRatio {
    pub fn new(inner: Arc<dyn RatioModel>, sigma: f64, seed: u64) -> Result<Self> {
        if sigma < 0.0 || !sigma.is_finite() {
            return Err(McvError::invalid("sigma must be finite and nonnegative"));
        }
        Ok(Self { inner, sigma, seed })
    }

    fn noise(&self, m: &Mask, x: &[Option<f64>], y: f64) -> f64 {
        if self.sigma == 0.0 {
            return 1.0;
        }
        let mut h = DefaultHasher::new();
        m.hash(&mut h);
        for v in x {
            v.map(f64::to_bits).hash(&mut h);
        }
        y.to_bits().hash(&mut h);
        let eps: f64 = stream(self.seed, &[h.finish()]).sample(StandardNormal);
        (self.sigma * eps).exp()
    }
}

impl RatioModel for PerturbedRatio {
    fn ratio(&self, m: &Mask, x: &[Option<f64>], y: f64) -> Result<f64> {
        Ok(self.inner.ratio(m, x, y)? * self.noise(m, x, y))
    }

    fn profile<'a>(&'a self, m: &Mask, x: &[Option<f64>]) -> Result<Box<dyn Fn(f64) -> f64 + Send + Sync + 'a>> {
        let inner = self.inner.profile(m, x)?;
        let (m, x) = (m.clone(), x.to_vec());
        Ok(Box::new(move |y| inner(y) * self.noise(&m, &x, y)))
    }
}

/// An evaluation point for [`ratio_quality`].
pub type RatioPoint = (Mask, Vec<Option<f64>>, f64);

/// Pearson correlation between two ratio surfaces over `points`.
pub fn ratio_quality(ratio: &dyn RatioModel, exact: &dyn RatioModel, points: &[RatioPoint]) -> Result<f64> {
    if points.len() < 3 {
        return Err(McvError::InsufficientData("ratio quality needs at least 3 points".into()));
    }
    let mut a = Vec::with_capacity(points.len());
    let mut b = Vec::with_capacity(points.len());
    for (m, x, y) in points {
        a.push(ratio.ratio(m, x, *y)?);
        b.push(exact.ratio(m, x, *y)?);
    }
    stats::pearson(&a, &b).ok_or_else(|| McvError::Numerical("ratio values have zero variance".into()))
}

/// Ratios for several masks behind one handle, e.g. per-mask normalisers.
#[derive(Default)]
pub struct PerMaskRatio {
    by_mask: HashMap<Mask, Arc<dyn RatioModel>>,
}

impl PerMaskRatio {
    pub fn insert(&mut self, m: Mask, r: Arc<dyn RatioModel>) {
        self.by_mask.insert(m, r);
    }

    fn get(&self, m: &Mask) -> Result<&Arc<dyn RatioModel>> {
        self.by_mask.get(m).ok_or_else(|| McvError::invalid(format!("no ratio registered for mask {m}")))
    }
}

impl RatioModel for PerMaskRatio {
    fn ratio(&self, m: &Mask, x: &[Option<f64>], y: f64) -> Result<f64> {
        self.get(m)?.ratio(m, x, y)
    }

    fn profile<'a>(&'a self, m: &Mask, x: &[Option<f64>]) -> Result<Box<dyn Fn(f64) -> f64 + Send + Sync + 'a>> {
        self.get(m)?.profile(m, x)
    }

    fn upper_bound(&self, m: &Mask) -> Option<f64> {
        self.get(m).ok()?.upper_bound(m)
    }
}
