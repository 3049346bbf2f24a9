//! Fit / calibrate / predict: the impute-then-regress band model, the imputed
//! calibration set and per-mask engines that turn them into intervals for
//! every method.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::config::Method;
use crate::conformal::{
    arc_select, default_omega_max, interval_from_threshold, masked_scores, score, split_threshold, weighted_cp,
    BandModel, IdRule, MdaCalibration, SearchSpec, WeightedScores,
};
use crate::error::{McvError, Result};
use crate::imputation::{fit_imputer, Impute, ImputeMode, Imputer, ImputerConfig};
use crate::models::{fit_quantile_pair, QuantilePair, TreeParams};
use crate::ratio::{fit_ratio, ImputedPoint, RatioModel, RatioTrainSpec};
use crate::rng::{stream, tag, McvRng};
use crate::tabular::{mask_apply, na_pattern, Dataset, Mask, MaskedSample, PredictionInterval};

/// Deterministic X-only imputation followed by the quantile pair, so any NA
/// pattern can be scored.
#[derive(Clone, Debug)]
pub struct ImputeThenRegress {
    imputer: Imputer,
    pair: QuantilePair,
}

impl ImputeThenRegress {
    pub fn fit(train: &Dataset, n_rounds: usize, alpha: f64, params: &TreeParams, rng: &mut McvRng) -> Result<Self> {
        let cfg = ImputerConfig { mode: ImputeMode::Deterministic, use_response: false, n_rounds, ..Default::default() };
        let imputer = fit_imputer(train, &cfg, rng)?;
        let mut rows = Vec::with_capacity(train.len());
        let mut ys = Vec::with_capacity(train.len());
        for s in train.samples() {
            rows.push(imputer.impute(s, rng)?.into_iter().map(Some).collect());
            ys.push(s.y());
        }
        let pair = fit_quantile_pair(&rows, &ys, alpha, params, rng)?;
        Ok(Self { imputer, pair })
    }

    pub fn pair(&self) -> &QuantilePair {
        &self.pair
    }
}

impl BandModel for ImputeThenRegress {
    fn band(&self, x: &[Option<f64>]) -> Result<(f64, f64)> {
        if x.iter().all(Option::is_some) {
            return self.pair.band(x);
        }
        // deterministic mode never draws from the stream
        let mut rng = stream(0, &[]);
        let full = self.imputer.impute(&MaskedSample::new(x.to_vec(), 0.0)?, &mut rng)?;
        self.pair.band(&full.into_iter().map(Some).collect::<Vec<_>>())
    }
}

/// Settings shared by every method.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodSettings {
    pub alpha: f64,
    pub search: SearchSpec,
    pub omega_inflation: f64,
    pub nested_star_extra: usize,
}

impl Default for MethodSettings {
    fn default() -> Self {
        Self { alpha: 0.1, search: SearchSpec::default(), omega_inflation: 1.5, nested_star_extra: 1 }
    }
}

/// Calibration data in both forms the methods need.
#[derive(Clone, Debug)]
pub struct Calibration {
    pub cal: Vec<MaskedSample>,
    /// Distributionally imputed `(x_hat, y)`.
    pub imputed: Vec<(Vec<f64>, f64)>,
    /// Scores of the raw calibration points under their own masks.
    pub native_scores: Vec<f64>,
}

impl Calibration {
    pub fn new(band: &dyn BandModel, cal: Vec<MaskedSample>, imputer: &dyn Impute, rng: &mut McvRng) -> Result<Self> {
        if cal.is_empty() {
            return Err(McvError::InsufficientData("empty calibration set".into()));
        }
        let imputed = cal.iter().map(|s| Ok((imputer.impute(s, rng)?, s.y()))).collect::<Result<Vec<_>>>()?;
        let native_scores = cal.iter().map(|s| score(band, s.x(), s.y())).collect::<Result<Vec<_>>>()?;
        Ok(Self { cal, imputed, native_scores })
    }
}

/// Everything that depends on the test mask but not on the test point.
pub struct MaskEngine {
    mask: Mask,
    band: Arc<dyn BandModel>,
    ratio: Arc<dyn RatioModel>,
    settings: MethodSettings,
    split_t: Option<f64>,
    uncorrected_t: Option<f64>,
    weighted: Option<WeightedScores>,
    arc_t: Option<f64>,
    mda: HashMap<Method, MdaCalibration>,
}

impl MaskEngine {
    pub fn new(
        methods: &[Method],
        mask: &Mask,
        band: Arc<dyn BandModel>,
        ratio: Arc<dyn RatioModel>,
        cal: &Calibration,
        settings: &MethodSettings,
        arc_rng: &mut McvRng,
    ) -> Result<Self> {
        let alpha = settings.alpha;
        let has = |m: Method| methods.contains(&m);
        let needs_masked = has(Method::Uncorrected) || has(Method::Weighted) || has(Method::Arc);
        let scores = if needs_masked { masked_scores(band.as_ref(), &cal.imputed, mask)? } else { Vec::new() };
        let weights = if has(Method::Weighted) || has(Method::Arc) {
            cal.imputed
                .iter()
                .map(|(x, y)| ratio.ratio(mask, &mask_apply(x, mask)?, *y))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let arc_t = if has(Method::Arc) {
            let omega_max = ratio.upper_bound(mask).unwrap_or_else(|| default_omega_max(&weights, settings.omega_inflation));
            let kept = if omega_max > 0.0 { arc_select(&weights, omega_max, arc_rng)? } else { Vec::new() };
            let accepted: Vec<f64> = kept.iter().map(|&i| scores[i]).collect();
            Some(if accepted.is_empty() { f64::INFINITY } else { split_threshold(&accepted, alpha) })
        } else {
            None
        };
        let mut mda = HashMap::new();
        for (m, rule) in [
            (Method::MdaExact, IdRule::Exact),
            (Method::MdaNested, IdRule::Nested),
            (Method::MdaNestedStar, IdRule::NestedStar { extra: settings.nested_star_extra }),
        ] {
            if has(m) {
                mda.insert(m, MdaCalibration::from_rule(band.as_ref(), &cal.cal, mask, rule)?);
            }
        }
        Ok(Self {
            mask: mask.clone(),
            settings: settings.clone(),
            split_t: has(Method::Split).then(|| split_threshold(&cal.native_scores, alpha)),
            uncorrected_t: has(Method::Uncorrected).then(|| split_threshold(&scores, alpha)),
            weighted: if has(Method::Weighted) { Some(WeightedScores::new(&scores, &weights)?) } else { None },
            arc_t,
            mda,
            band,
            ratio,
        })
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    /// Interval for a test point whose NA cells are exactly the engine's mask.
    pub fn interval(&self, method: Method, x: &[Option<f64>]) -> Result<PredictionInterval> {
        McvError::check_dim(self.mask.len(), x.len())?;
        let missing = |name: &str| McvError::invalid(format!("engine was built without {name}"));
        let alpha = self.settings.alpha;
        let band = || self.band.band(x);
        match method {
            Method::Split => {
                let (l, h) = band()?;
                Ok(interval_from_threshold(l, h, self.split_t.ok_or_else(|| missing("split"))?))
            }
            Method::Uncorrected => {
                let (l, h) = band()?;
                Ok(interval_from_threshold(l, h, self.uncorrected_t.ok_or_else(|| missing("uncorrected"))?))
            }
            Method::Arc => {
                let (l, h) = band()?;
                Ok(interval_from_threshold(l, h, self.arc_t.ok_or_else(|| missing("arc"))?))
            }
            Method::Weighted => {
                let ws = self.weighted.as_ref().ok_or_else(|| missing("weighted"))?;
                let prof = self.ratio.profile(&self.mask, x)?;
                Ok(weighted_cp(ws, band()?, &*prof, alpha, &self.settings.search))
            }
            Method::MdaExact | Method::MdaNested | Method::MdaNestedStar => {
                let cal = self.mda.get(&method).ok_or_else(|| missing(method.as_str()))?;
                cal.interval(self.band.as_ref(), x, alpha)
            }
        }
    }
}

/// Learns the mask-discriminating ratio from distributionally imputed
/// training data.
pub fn fit_ratio_on(
    train: &Dataset,
    imputer: &dyn Impute,
    spec: &RatioTrainSpec,
    params: &TreeParams,
    rng: &mut McvRng,
) -> Result<Arc<dyn RatioModel>> {
    let pts = train
        .samples()
        .iter()
        .map(|s| Ok(ImputedPoint { x: imputer.impute(s, rng)?, mask: s.mask().clone(), y: s.y() }))
        .collect::<Result<Vec<_>>>()?;
    Ok(Arc::new(fit_ratio(&pts, spec, params, rng)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub model: TreeParams,
    pub ratio_model: TreeParams,
    pub imputer: ImputerConfig,
    pub ratio: RatioTrainSpec,
    pub settings: MethodSettings,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            model: TreeParams::default(),
            ratio_model: TreeParams::ratio_default(),
            imputer: ImputerConfig::default(),
            ratio: RatioTrainSpec::default(),
            settings: MethodSettings::default(),
            seed: 0,
        }
    }
}

/// End-to-end predictor on user data: fit on a training split, calibrate on
/// a second split, then predict any NA pattern with any method.
pub struct Pipeline {
    cfg: PipelineConfig,
    dim: usize,
    band: Arc<ImputeThenRegress>,
    imputer: Imputer,
    ratio: Arc<dyn RatioModel>,
    calibration: Option<Calibration>,
    engines: Mutex<HashMap<Mask, Arc<MaskEngine>>>,
}

impl Pipeline {
    pub fn fit(train: &Dataset, cfg: PipelineConfig) -> Result<Self> {
        let s = cfg.seed;
        let band = ImputeThenRegress::fit(
            train,
            cfg.imputer.n_rounds,
            cfg.settings.alpha,
            &cfg.model,
            &mut stream(s, &[tag::MODEL]),
        )?;
        let imputer = fit_imputer(train, &cfg.imputer, &mut stream(s, &[tag::IMPUTER]))?;
        let ratio = fit_ratio_on(train, &imputer, &cfg.ratio, &cfg.ratio_model, &mut stream(s, &[tag::RATIO]))?;
        Ok(Self {
            dim: train.dim(),
            band: Arc::new(band),
            imputer,
            ratio,
            calibration: None,
            engines: Mutex::new(HashMap::new()),
            cfg,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn calibrate(&mut self, cal: &Dataset) -> Result<()> {
        McvError::check_dim(self.dim, cal.dim())?;
        let mut rng = stream(self.cfg.seed, &[tag::CAL]);
        self.calibration = Some(Calibration::new(self.band.as_ref(), cal.samples().to_vec(), &self.imputer, &mut rng)?);
        self.engines.lock().expect("engine cache poisoned").clear();
        Ok(())
    }

    pub fn is_calibrated(&self) -> bool {
        self.calibration.is_some()
    }

    fn engine(&self, mask: &Mask) -> Result<Arc<MaskEngine>> {
        let cal = self.calibration.as_ref().ok_or_else(|| McvError::Calibration("pipeline is not calibrated".into()))?;
        if let Some(e) = self.engines.lock().expect("engine cache poisoned").get(mask) {
            return Ok(e.clone());
        }
        let mut rng = stream(self.cfg.seed, &[tag::ARC, mask.index() as u64]);
        let band: Arc<dyn BandModel> = self.band.clone();
        let engine =
            Arc::new(MaskEngine::new(&Method::ALL, mask, band, self.ratio.clone(), cal, &self.cfg.settings, &mut rng)?);
        self.engines.lock().expect("engine cache poisoned").insert(mask.clone(), engine.clone());
        Ok(engine)
    }

    /// Interval for `x`, whose NA cells define the test mask.
    pub fn predict(&self, x: &[Option<f64>], method: Method) -> Result<PredictionInterval> {
        McvError::check_dim(self.dim, x.len())?;
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(McvError::invalid("non-finite covariate"));
        }
        self.engine(&na_pattern(x))?.interval(method, x)
    }
}
